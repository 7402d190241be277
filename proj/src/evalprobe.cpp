#include "ltm/evalprobe.hpp"

#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

namespace ltm {

double ppl_upper_bound(double total_elbo_nats, int64_t n_predicted_tokens) {
    if (n_predicted_tokens < 1) {
        throw ConfigError("ppl_upper_bound: need at least one predicted token");
    }
    return std::exp(-total_elbo_nats / static_cast<double>(n_predicted_tokens));
}

double unigram_entropy(std::span<const int32_t> tokens) {
    if (tokens.empty()) {
        throw ShapeError("unigram_entropy: empty token sequence");
    }
    std::map<int32_t, int64_t> counts;
    for (int32_t t : tokens) {
        counts[t] += 1;
    }
    const double n = static_cast<double>(tokens.size());
    double h = 0;
    for (const auto& [tok, c] : counts) {
        (void)tok;
        const double p = static_cast<double>(c) / n;
        h -= p * std::log(p);
    }
    return h;
}

template <class S>
double mean_predictive_entropy(const TensorT<S>& logits) {
    if (logits.rank() != 2) {
        throw ShapeError("mean_predictive_entropy: logits must be [N, V]");
    }
    const int64_t n = logits.dim(0), v = logits.dim(1);
    double total = 0;
    for (int64_t r = 0; r < n; ++r) {
        const S* row = logits.data().data() + r * v;
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t c = 0; c < v; ++c) {
            mx = std::max(mx, static_cast<double>(row[c]));
        }
        double z = 0;
        for (int64_t c = 0; c < v; ++c) {
            z += std::exp(static_cast<double>(row[c]) - mx);
        }
        double h = 0;
        for (int64_t c = 0; c < v; ++c) {
            const double p = std::exp(static_cast<double>(row[c]) - mx) / z;
            if (p > 0) {
                h -= p * std::log(p);
            }
        }
        total += h;
    }
    return total / static_cast<double>(n);
}

double reconstruction_accuracy(std::span<const int32_t> x, std::span<const int32_t> x_hat) {
    if (x.size() != x_hat.size()) {
        throw ShapeError("reconstruction_accuracy: length mismatch " +
                         std::to_string(x.size()) + " vs " + std::to_string(x_hat.size()));
    }
    if (x.empty()) {
        throw ShapeError("reconstruction_accuracy: empty sequences");
    }
    int64_t hits = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        if (x[i] == x_hat[i]) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(x.size());
}

// ============================================================================
// Progressive probing
// ============================================================================

namespace {

template <class S>
int32_t argmax_row(const TensorT<S>& logits, int64_t row) {
    const int64_t v = logits.dim(1);
    const S* r = logits.data().data() + row * v;
    int64_t best = 0;
    for (int64_t c = 1; c < v; ++c) {
        if (r[c] > r[best]) {
            best = c;
        }
    }
    return static_cast<int32_t>(best);
}

// layers [0, m): posterior mean; layers [m, L): prior mean (zero)
template <class S>
LatentThoughtT<S> fill_latent(const VariationalStateT<S>& state, int64_t m) {
    const auto& shape = state.mu.shape();
    const int64_t per_layer = shape[1] * shape[2];
    std::vector<S> z(static_cast<size_t>(state.mu.numel()), S(0));
    const auto mu = state.mu.data();
    for (int64_t l = 0; l < m; ++l) {
        for (int64_t i = 0; i < per_layer; ++i) {
            z[static_cast<size_t>(l * per_layer + i)] = mu[static_cast<size_t>(l * per_layer + i)];
        }
    }
    LatentThoughtT<S> out;
    out.z = TensorT<S>::from_data(shape, std::move(z));
    return out;
}

template <class S>
std::vector<int32_t> teacher_forced_argmax(const std::vector<int32_t>& x,
                                           const LatentThoughtT<S>& z,
                                           const DecoderParamsT<S>& params) {
    std::vector<int32_t> input(x.begin(), x.end() - 1);
    auto logits = forward_logits(input, z, params);
    std::vector<int32_t> out;
    out.reserve(input.size());
    for (int64_t r = 0; r < logits.dim(0); ++r) {
        out.push_back(argmax_row(logits, r));
    }
    return out;
}

template <class S>
std::vector<int32_t> free_running_argmax(const std::vector<int32_t>& x,
                                         const LatentThoughtT<S>& z,
                                         const DecoderParamsT<S>& params) {
    std::vector<int32_t> seq = {x[0]};
    std::vector<int32_t> out;
    const int64_t t = static_cast<int64_t>(x.size());
    for (int64_t i = 1; i < t; ++i) {
        auto logits = forward_logits(seq, z, params);
        const int32_t tok = argmax_row(logits, logits.dim(0) - 1);
        out.push_back(tok);
        seq.push_back(tok);
    }
    return out;
}

}  // namespace

template <class S>
ProbeDecodeResult progressive_probe(const std::vector<int32_t>& x,
                                    const VariationalStateT<S>& state,
                                    const DecoderParamsT<S>& params, int64_t m,
                                    bool free_running) {
    const int64_t l = params.config.n_layers;
    if (m < 0 || m > l) {
        throw ConfigError("progressive_probe: m must be in [0, n_layers]");
    }
    if (x.size() < 2) {
        throw ShapeError("progressive_probe: need at least 2 tokens");
    }
    auto z = fill_latent(state, m);
    ProbeDecodeResult res;
    res.reconstructed =
        free_running ? free_running_argmax(x, z, params) : teacher_forced_argmax(x, z, params);
    res.accuracy = reconstruction_accuracy({x.data() + 1, x.size() - 1}, res.reconstructed);
    return res;
}

template <class S>
double full_reconstruction_accuracy(const std::vector<int32_t>& x,
                                    const VariationalStateT<S>& state,
                                    const DecoderParamsT<S>& params) {
    // z = mu directly, no fill path
    LatentThoughtT<S> z;
    z.z = state.mu.detach_copy();
    auto hat = teacher_forced_argmax(x, z, params);
    return reconstruction_accuracy({x.data() + 1, x.size() - 1}, hat);
}

template <class S>
ProbeReport probe_report(const std::vector<std::vector<int32_t>>& sequences,
                         const std::vector<VariationalStateT<S>>& states,
                         const DecoderParamsT<S>& params, int threads) {
    if (sequences.size() != states.size()) {
        throw ShapeError("probe_report: one state per sequence required");
    }
    const int64_t l = params.config.n_layers;
    ProbeReport report;
    report.per_sequence.assign(sequences.size(), std::vector<double>(static_cast<size_t>(l + 1)));
    const int n_threads = threads > 0 ? threads : default_thread_count();
    parallel_for(static_cast<int64_t>(sequences.size()), n_threads, [&](int64_t i) {
        auto frozen = params.shared_replica(false);
        for (int64_t m = 0; m <= l; ++m) {
            report.per_sequence[static_cast<size_t>(i)][static_cast<size_t>(m)] =
                progressive_probe(sequences[static_cast<size_t>(i)],
                                  states[static_cast<size_t>(i)], frozen, m)
                    .accuracy;
        }
    });
    report.accuracy_per_m.assign(static_cast<size_t>(l + 1), 0.0);
    for (const auto& row : report.per_sequence) {
        for (size_t m = 0; m < row.size(); ++m) {
            report.accuracy_per_m[m] += row[m] / static_cast<double>(sequences.size());
        }
    }
    return report;
}

std::string format_probe_table(const ProbeReport& report) {
    std::ostringstream os;
    os << std::left << std::setw(10) << "layers_m" << std::right << std::setw(14)
       << "mean_accuracy" << "\n";
    for (size_t m = 0; m < report.accuracy_per_m.size(); ++m) {
        os << std::left << std::setw(10) << m << std::right << std::fixed
           << std::setprecision(4) << std::setw(14) << report.accuracy_per_m[m] << "\n";
        os.unsetf(std::ios::floatfield);
    }
    return os.str();
}

std::string format_probe_records(const ProbeReport& report) {
    std::ostringstream os;
    os.precision(10);
    for (size_t m = 0; m < report.accuracy_per_m.size(); ++m) {
        os << "m=" << m << " mean_accuracy=" << report.accuracy_per_m[m] << "\n";
    }
    for (size_t i = 0; i < report.per_sequence.size(); ++i) {
        os << "seq=" << i;
        for (size_t m = 0; m < report.per_sequence[i].size(); ++m) {
            os << " acc_m" << m << "=" << report.per_sequence[i][m];
        }
        os << "\n";
    }
    return os.str();
}

// ============================================================================
// Perplexity-bound evaluation
// ============================================================================

template <class S>
EvalResult evaluate_ppl_bound(const DecoderParamsT<S>& params,
                              const std::vector<std::vector<int32_t>>& sequences,
                              const EvalOptions& opts) {
    if (sequences.empty()) {
        throw ConfigError("evaluate_ppl_bound: no sequences");
    }
    const int threads = opts.threads > 0 ? opts.threads : default_thread_count();
    std::vector<double> recon(sequences.size()), kl(sequences.size());
    std::vector<int64_t> tokens(sequences.size());
    TrainConfig tc;
    tc.total_steps = 1;
    tc.warmup_steps = 0;
    parallel_for(static_cast<int64_t>(sequences.size()), threads, [&](int64_t i) {
        const auto& x = sequences[static_cast<size_t>(i)];
        Rng rng = Rng::stream({opts.seed, static_cast<uint64_t>(i), 0x6576616cULL});
        auto frozen = params.shared_replica(false);
        auto fast = fast_infer(x, frozen, tc, opts.t_fast, opts.eta_fast, rng);
        auto e = elbo(x, fast.state, frozen, opts.n_mc, rng);
        recon[static_cast<size_t>(i)] = static_cast<double>(e.recon.item());
        kl[static_cast<size_t>(i)] = static_cast<double>(e.kl.item());
        tokens[static_cast<size_t>(i)] = static_cast<int64_t>(x.size()) - 1;
    });
    EvalResult res;
    for (size_t i = 0; i < sequences.size(); ++i) {
        res.total_recon += recon[i];
        res.total_kl += kl[i];
        res.n_predicted_tokens += tokens[i];
    }
    res.total_elbo = res.total_recon - res.total_kl;
    res.ppl_bound = ppl_upper_bound(res.total_elbo, res.n_predicted_tokens);
    return res;
}

// ============================================================================
// Explicit instantiations
// ============================================================================

#define LTM_INSTANTIATE_EVALPROBE(S)                                                       \
    template double mean_predictive_entropy<S>(const TensorT<S>&);                         \
    template ProbeDecodeResult progressive_probe<S>(const std::vector<int32_t>&,           \
                                                    const VariationalStateT<S>&,           \
                                                    const DecoderParamsT<S>&, int64_t,     \
                                                    bool);                                 \
    template double full_reconstruction_accuracy<S>(const std::vector<int32_t>&,           \
                                                    const VariationalStateT<S>&,           \
                                                    const DecoderParamsT<S>&);             \
    template ProbeReport probe_report<S>(const std::vector<std::vector<int32_t>>&,         \
                                         const std::vector<VariationalStateT<S>>&,         \
                                         const DecoderParamsT<S>&, int);                   \
    template EvalResult evaluate_ppl_bound<S>(const DecoderParamsT<S>&,                    \
                                              const std::vector<std::vector<int32_t>>&,    \
                                              const EvalOptions&);

LTM_INSTANTIATE_EVALPROBE(float)
LTM_INSTANTIATE_EVALPROBE(double)

#undef LTM_INSTANTIATE_EVALPROBE

}  // namespace ltm
