#pragma once

#include <span>
#include <string>
#include <vector>

#include "ltm/trainer.hpp"

namespace ltm {

// ============================================================================
// Metrics
// ============================================================================

// exp(-total_elbo / n_predicted_tokens); an upper bound on perplexity since
// the ELBO lower-bounds the log evidence.
double ppl_upper_bound(double total_elbo_nats, int64_t n_predicted_tokens);

// Entropy of the empirical unigram distribution, in nats.
double unigram_entropy(std::span<const int32_t> tokens);

// Alternative reading of token-level entropy: mean over positions of the
// entropy of the model's predictive distribution.
template <class S>
double mean_predictive_entropy(const TensorT<S>& logits);

// Fraction of positions where the ids match exactly.
double reconstruction_accuracy(std::span<const int32_t> x, std::span<const int32_t> x_hat);

// Per-token log-probs generated text receives from an external language
// model; a scorer can be attached later for generative-perplexity studies.
class ExternalScorer {
  public:
    virtual ~ExternalScorer() = default;
    virtual std::vector<double> score(const std::string& text) = 0;
};

// ============================================================================
// Progressive probing
// ============================================================================

struct ProbeDecodeResult {
    std::vector<int32_t> reconstructed;  // predictions for positions 1..T-1
    double accuracy = 0.0;
};

// Builds z from the inferred state with layers [0, m) set to mu and layers
// [m, L) set to the prior mean (zero), then reconstructs the sequence
// teacher-forced (argmax under the true prefix). free_running instead feeds
// the model its own greedy prefix.
template <class S>
ProbeDecodeResult progressive_probe(const std::vector<int32_t>& x,
                                    const VariationalStateT<S>& state,
                                    const DecoderParamsT<S>& params, int64_t m,
                                    bool free_running = false);

// Full-latent reconstruction accuracy through a path with no fill logic;
// reference for the m = L probe entry.
template <class S>
double full_reconstruction_accuracy(const std::vector<int32_t>& x,
                                    const VariationalStateT<S>& state,
                                    const DecoderParamsT<S>& params);

struct ProbeReport {
    std::vector<double> accuracy_per_m;               // index m in 0..L
    std::vector<std::vector<double>> per_sequence;    // [seq][m]
};

template <class S>
ProbeReport probe_report(const std::vector<std::vector<int32_t>>& sequences,
                         const std::vector<VariationalStateT<S>>& states,
                         const DecoderParamsT<S>& params, int threads = 0);

std::string format_probe_table(const ProbeReport& report);
std::string format_probe_records(const ProbeReport& report);

// ============================================================================
// Perplexity-bound evaluation
// ============================================================================

struct EvalOptions {
    int64_t t_fast = 16;
    double eta_fast = 0.3;
    int n_mc = 8;
    uint64_t seed = 0;
    int threads = 0;
};

struct EvalResult {
    double total_elbo = 0;    // nats, summed over sequences
    double total_recon = 0;
    double total_kl = 0;
    int64_t n_predicted_tokens = 0;
    double ppl_bound = 0;
};

// fast_infer per sequence, then an n_mc-sample ELBO; aggregates over rows.
template <class S>
EvalResult evaluate_ppl_bound(const DecoderParamsT<S>& params,
                              const std::vector<std::vector<int32_t>>& sequences,
                              const EvalOptions& opts);

}  // namespace ltm
