#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ltm/data.hpp"
#include "ltm/variational.hpp"

namespace ltm {

// ============================================================================
// Configuration
// ============================================================================

struct TrainConfig {
    int64_t t_fast = 16;
    double eta_fast_start = 0.3;
    double eta_fast_end = 0.34;
    double eta_slow_peak = 4e-4;
    double eta_slow_floor = 4e-5;
    int64_t warmup_steps = 1000;
    int64_t total_steps = 3000;
    int64_t batch_size = 8;
    double grad_clip_norm = 1.0;
    double adamw_beta1 = 0.9;
    double adamw_beta2 = 0.95;
    double adam_fast_beta1 = 0.9;
    double adam_fast_beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.1;
    uint64_t seed = 0;
    int threads = 0;  // 0: all hardware threads

    int64_t checkpoint_every = 0;  // 0: initial and final only
    int64_t log_every = 1;
    // Keep per-row variational states across visits instead of re-initializing.
    bool persist_states = false;
    // Ablation: plain windowed autoregressive training (no latent machinery).
    bool plain_lm = false;
    // Ablation: zero the cross-attention output projections at start and
    // freeze them, severing z from the logits.
    bool zero_cross_output = false;
    // Optional stopping rule on a flat ELBO trend.
    bool plateau_stop = false;
    int64_t plateau_window = 200;
    double plateau_eps = 1e-4;

    void validate() const;
};

// ============================================================================
// Schedules
// ============================================================================

// Linear eta_fast_start -> eta_fast_end across total_steps.
double fast_lr(const TrainConfig& tc, int64_t t);
// Linear warmup 0 -> eta_slow_peak over warmup_steps, then cosine decay to
// eta_slow_floor at total_steps.
double slow_lr(const TrainConfig& tc, int64_t t);

// ============================================================================
// Optimizers
// ============================================================================

// First/second moment buffers in the parameter's own precision.
template <class S>
struct AdamMomentsT {
    std::vector<std::vector<S>> m;
    std::vector<std::vector<S>> v;
    int64_t t = 0;
};

// ============================================================================
// Fast loop
// ============================================================================

template <class S>
struct FastResultT {
    VariationalStateT<S> state;
    std::vector<double> elbo_trace;  // objective value at each step, pre-update
    int skipped_steps = 0;
};

// T_fast Adam ascent steps on (mu, logvar) of the single-sample ELBO with
// the decoder frozen. A non-finite ELBO skips that step and keeps the
// previous state. With t_fast = 0 returns the initial state and an empty
// trace.
template <class S>
FastResultT<S> fast_infer(const std::vector<int32_t>& x, const DecoderParamsT<S>& params,
                          const TrainConfig& tc, int64_t t_fast, double eta_fast, Rng& rng,
                          const VariationalStateT<S>* warm_start = nullptr);

// ============================================================================
// Slow loop
// ============================================================================

template <class S>
struct OptStateT {
    AdamMomentsT<S> slow;  // mirrors DecoderParamsT::named_tensors order
};

struct SlowMetrics {
    double elbo = 0;
    double recon = 0;
    double kl = 0;
    double grad_norm = 0;  // pre-clip global norm
    bool skipped = false;
};

// One AdamW step on the decoder: batch-mean negative ELBO with each
// sequence's (mu, logvar) held fixed, global-norm clipping, decayed update.
template <class S>
SlowMetrics slow_step(const std::vector<std::vector<int32_t>>& batch,
                      const std::vector<VariationalStateT<S>>& states,
                      DecoderParamsT<S>& params, OptStateT<S>& opt, const TrainConfig& tc,
                      int64_t step);

// ============================================================================
// Training driver
// ============================================================================

struct StepRecord {
    int64_t step = 0;
    double elbo = 0, recon = 0, kl = 0, grad_norm = 0;
    double lr_fast = 0, lr_slow = 0;
    int64_t tokens_seen = 0;
    double tfpt_cum = 0;
    double wall_ms = 0;
};

std::string format_step_record(const StepRecord& r);
std::optional<StepRecord> parse_step_record(const std::string& line);

struct TrainResult {
    int64_t final_step = 0;
    std::string final_checkpoint;
    std::vector<StepRecord> records;
};

// Runs the dual-rate loop to total_steps, writing metrics.log and
// checkpoints/ under out_dir. resume_from restores parameters, optimizer
// moments and counters from a training checkpoint.
template <class S>
TrainResult train(const ModelConfig& mc, const TrainConfig& tc, const PackedDataset& ds,
                  const std::string& out_dir, const std::string& resume_from = "");

// Training checkpoint: model params plus optimizer moments and counters.
template <class S>
void save_train_checkpoint(const std::string& path, const DecoderParamsT<S>& params,
                           const OptStateT<S>& opt, int64_t step, int64_t tokens_seen);
template <class S>
void load_train_checkpoint(const std::string& path, DecoderParamsT<S>& params,
                           OptStateT<S>& opt, int64_t& step, int64_t& tokens_seen);

}  // namespace ltm
