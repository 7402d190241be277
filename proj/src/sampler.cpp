#include "ltm/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ltm/data.hpp"

namespace ltm {

namespace {

constexpr double kLn2Pi = 1.8378770664093454836;

}  // namespace

// ============================================================================
// Decode strategies
// ============================================================================

void DecodeStrategy::validate() const {
    if (temperature <= 0.0) {
        throw ConfigError("decode: temperature must be > 0");
    }
    if (kind == Kind::top_k && k < 1) {
        throw ConfigError("decode: top_k needs k >= 1");
    }
    if (kind == Kind::nucleus && (p <= 0.0 || p > 1.0)) {
        throw ConfigError("decode: nucleus needs p in (0, 1]");
    }
}

DecodeStrategy DecodeStrategy::parse(const std::string& name) {
    DecodeStrategy s;
    if (name == "greedy") {
        s.kind = Kind::greedy;
    } else if (name == "multinomial") {
        s.kind = Kind::multinomial;
    } else if (name == "top_k") {
        s.kind = Kind::top_k;
    } else if (name == "nucleus") {
        s.kind = Kind::nucleus;
    } else {
        throw ConfigError("unknown decode strategy '" + name + "'");
    }
    return s;
}

template <class S>
int32_t sample_token(std::span<const S> logits, const DecodeStrategy& strategy, Rng& rng) {
    strategy.validate();
    const size_t v = logits.size();
    if (v == 0) {
        throw ShapeError("sample_token: empty logits");
    }
    for (S l : logits) {
        if (std::isnan(static_cast<double>(l)) ||
            l == std::numeric_limits<S>::infinity()) {
            throw NumericError("sample_token: non-finite logit");
        }
    }
    if (strategy.kind == DecodeStrategy::Kind::greedy) {
        size_t best = 0;
        for (size_t i = 1; i < v; ++i) {
            if (logits[i] > logits[best]) {
                best = i;  // strict: lowest index wins ties
            }
        }
        return static_cast<int32_t>(best);
    }

    // temperature softmax in double
    std::vector<double> probs(v);
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < v; ++i) {
        probs[i] = static_cast<double>(logits[i]) / strategy.temperature;
        mx = std::max(mx, probs[i]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
        throw NumericError("sample_token: all logits are -inf");
    }
    double total = 0;
    for (auto& q : probs) {
        q = std::exp(q - mx);
        total += q;
    }
    for (auto& q : probs) {
        q /= total;
    }

    // restrict support
    std::vector<size_t> keep(v);
    std::iota(keep.begin(), keep.end(), size_t{0});
    if (strategy.kind == DecodeStrategy::Kind::top_k ||
        strategy.kind == DecodeStrategy::Kind::nucleus) {
        std::sort(keep.begin(), keep.end(), [&](size_t a, size_t b) {
            if (probs[a] != probs[b]) {
                return probs[a] > probs[b];
            }
            return a < b;
        });
        size_t cut;
        if (strategy.kind == DecodeStrategy::Kind::top_k) {
            cut = std::min<size_t>(static_cast<size_t>(strategy.k), v);
        } else {
            double mass = 0;
            cut = 0;
            while (cut < v && mass < strategy.p) {
                mass += probs[keep[cut]];
                ++cut;
            }
            cut = std::max<size_t>(cut, 1);  // support never empty
        }
        keep.resize(cut);
    }

    double mass = 0;
    for (size_t i : keep) {
        mass += probs[i];
    }
    const double u = rng.uniform() * mass;
    double acc = 0;
    for (size_t i : keep) {
        acc += probs[i];
        if (u < acc) {
            return static_cast<int32_t>(i);
        }
    }
    return static_cast<int32_t>(keep.back());
}

// ============================================================================
// Langevin inference
// ============================================================================

void LangevinConfig::validate() const {
    if (step_size <= 0.0) {
        throw ConfigError("langevin: step_size must be > 0");
    }
    if (n_steps < 0) {
        throw ConfigError("langevin: n_steps must be >= 0");
    }
}

template <class S>
LatentThoughtT<S> langevin_step(const LatentThoughtT<S>& z, const std::vector<int32_t>& x,
                                const DecoderParamsT<S>& params, double s,
                                const TensorT<S>& noise) {
    if (s < 0.0) {
        throw ConfigError("langevin_step: negative step size");
    }
    auto frozen = params.shared_replica(false);
    LatentThoughtT<S> z_leaf;
    z_leaf.z = TensorT<S>::from_data(z.z.shape(), {z.z.data().begin(), z.z.data().end()}, true);
    auto ll = log_likelihood(x, z_leaf, frozen);
    backward(ll.total);

    const auto zd = z_leaf.z.data();
    const auto nd = noise.data();
    const double root = std::sqrt(2.0 * s);
    std::vector<S> out(zd.size());
    for (size_t i = 0; i < zd.size(); ++i) {
        const double grad_ll =
            z_leaf.z.has_grad() ? static_cast<double>(z_leaf.z.grad()[i]) : 0.0;
        if (!std::isfinite(grad_ll)) {
            throw NumericError("langevin_step: non-finite gradient");
        }
        const double grad_joint = grad_ll - static_cast<double>(zd[i]);  // prior term: -z
        out[i] = static_cast<S>(static_cast<double>(zd[i]) + s * grad_joint +
                                root * static_cast<double>(nd[i]));
    }
    LatentThoughtT<S> next;
    next.z = TensorT<S>::from_data(z.z.shape(), std::move(out));
    return next;
}

template <class S>
double log_joint(const std::vector<int32_t>& x, const LatentThoughtT<S>& z,
                 const DecoderParamsT<S>& params) {
    auto frozen = params.shared_replica(false);
    const double ll = static_cast<double>(log_likelihood(x, z, frozen).total.item());
    double sq = 0;
    for (S v : z.z.data()) {
        sq += static_cast<double>(v) * static_cast<double>(v);
    }
    const double d = static_cast<double>(z.z.numel());
    return ll - 0.5 * sq - 0.5 * d * kLn2Pi;
}

template <class S>
LangevinResultT<S> langevin_infer(const std::vector<int32_t>& x,
                                  const DecoderParamsT<S>& params, const LangevinConfig& cfg) {
    cfg.validate();
    const ModelConfig& mc = params.config;
    Rng rng = Rng::stream({cfg.seed, 0x6c616e67ULL});
    auto frozen = params.shared_replica(false);
    LangevinResultT<S> out;
    out.z.z = TensorT<S>::randn({mc.n_layers, mc.n_latents_per_layer, mc.hidden}, rng);
    const double s = cfg.step_size;
    const double root = std::sqrt(2.0 * s);
    const double d = static_cast<double>(out.z.z.numel());
    for (int64_t t = 0; t < cfg.n_steps; ++t) {
        auto noise = TensorT<S>::randn(out.z.z.shape(), rng);
        // one forward+backward serves both the trace entry and the step
        LatentThoughtT<S> z_leaf;
        z_leaf.z = TensorT<S>::from_data(out.z.z.shape(),
                                         {out.z.z.data().begin(), out.z.z.data().end()}, true);
        auto ll = log_likelihood(x, z_leaf, frozen);
        backward(ll.total);
        double sq = 0;
        for (S v : z_leaf.z.data()) {
            sq += static_cast<double>(v) * static_cast<double>(v);
        }
        out.log_joint_trace.push_back(static_cast<double>(ll.total.item()) - 0.5 * sq -
                                      0.5 * d * kLn2Pi);
        const auto zd = z_leaf.z.data();
        const auto nd = noise.data();
        std::vector<S> next(zd.size());
        for (size_t i = 0; i < zd.size(); ++i) {
            const double grad_ll =
                z_leaf.z.has_grad() ? static_cast<double>(z_leaf.z.grad()[i]) : 0.0;
            if (!std::isfinite(grad_ll)) {
                throw NumericError("langevin_infer: non-finite gradient at step " +
                                   std::to_string(t));
            }
            next[i] = static_cast<S>(static_cast<double>(zd[i]) +
                                     s * (grad_ll - static_cast<double>(zd[i])) +
                                     root * static_cast<double>(nd[i]));
        }
        out.z.z = TensorT<S>::from_data(out.z.z.shape(), std::move(next));
    }
    return out;
}

// ============================================================================
// Generation
// ============================================================================

namespace {

template <class S>
int32_t next_token(const std::vector<int32_t>& seq, const LatentThoughtT<S>& z,
                   const DecoderParamsT<S>& params, const DecodeStrategy& strategy, Rng& rng) {
    auto logits = forward_logits(seq, z, params);
    const int64_t v = logits.dim(1);
    const int64_t last = logits.dim(0) - 1;
    std::span<const S> row{logits.data().data() + last * v, static_cast<size_t>(v)};
    return sample_token(row, strategy, rng);
}

// z for the current prefix per the inference spec
template <class S>
LatentThoughtT<S> infer_latent(const std::vector<int32_t>& prefix,
                               const DecoderParamsT<S>& params, const InferSpec& spec,
                               Rng& rng) {
    const ModelConfig& mc = params.config;
    if (spec.kind == InferSpec::Kind::langevin) {
        LangevinConfig cfg = spec.langevin;
        cfg.seed = rng.next_u64();
        return langevin_infer(prefix, params, cfg).z;
    }
    VariationalStateT<S> state;
    if (prefix.size() < 2 || spec.t_fast == 0) {
        // nothing to optimize against; fall back to the prior
        state = init_state<S>(mc);
    } else {
        TrainConfig tc;
        tc.total_steps = 1;
        tc.warmup_steps = 0;
        auto res = fast_infer(prefix, params, tc, spec.t_fast, spec.eta, rng);
        state = std::move(res.state);
    }
    if (spec.use_mean) {
        LatentThoughtT<S> z;
        z.z = state.mu.detach_copy();
        return z;
    }
    auto noise = TensorT<S>::randn(state.mu.shape(), rng);
    auto z = reparam_sample(state, noise);
    LatentThoughtT<S> out;
    out.z = z.z.detach_copy();
    return out;
}

}  // namespace

template <class S>
std::vector<int32_t> generate_unconditional(const DecoderParamsT<S>& params, int64_t length,
                                            const DecodeStrategy& strategy, Rng& rng) {
    const ModelConfig& mc = params.config;
    if (length < 1 || length > mc.max_seq_len) {
        throw ConfigError("generate: length must be in [1, max_seq_len]");
    }
    LatentThoughtT<S> z;
    z.z = TensorT<S>::randn({mc.n_layers, mc.n_latents_per_layer, mc.hidden}, rng);
    auto frozen = params.shared_replica(false);
    std::vector<int32_t> seq = {Vocab::bos};
    for (int64_t i = 0; i < length; ++i) {
        seq.push_back(next_token(seq, z, frozen, strategy, rng));
    }
    return {seq.begin() + 1, seq.end()};
}

template <class S>
std::vector<int32_t> generate_conditional(const std::vector<int32_t>& prompt, int64_t n_new,
                                          const DecoderParamsT<S>& params,
                                          const InferSpec& infer,
                                          const DecodeStrategy& strategy, Rng& rng,
                                          bool reinfer_each_token) {
    const ModelConfig& mc = params.config;
    if (prompt.empty()) {
        throw ShapeError("generate_conditional: empty prompt");
    }
    if (static_cast<int64_t>(prompt.size()) + n_new > mc.max_seq_len) {
        throw ConfigError("generate_conditional: prompt plus completion exceeds max_seq_len");
    }
    if (n_new == 0) {
        return prompt;
    }
    auto frozen = params.shared_replica(false);
    auto z = infer_latent(prompt, frozen, infer, rng);
    std::vector<int32_t> seq = prompt;
    for (int64_t i = 0; i < n_new; ++i) {
        seq.push_back(next_token(seq, z, frozen, strategy, rng));
        if (reinfer_each_token && i + 1 < n_new) {
            z = infer_latent(seq, frozen, infer, rng);
        }
    }
    return seq;
}

// ============================================================================
// Explicit instantiations
// ============================================================================

#define LTM_INSTANTIATE_SAMPLER(S)                                                          \
    template int32_t sample_token<S>(std::span<const S>, const DecodeStrategy&, Rng&);      \
    template LatentThoughtT<S> langevin_step<S>(const LatentThoughtT<S>&,                   \
                                                const std::vector<int32_t>&,                \
                                                const DecoderParamsT<S>&, double,           \
                                                const TensorT<S>&);                         \
    template double log_joint<S>(const std::vector<int32_t>&, const LatentThoughtT<S>&,     \
                                 const DecoderParamsT<S>&);                                 \
    template LangevinResultT<S> langevin_infer<S>(const std::vector<int32_t>&,              \
                                                  const DecoderParamsT<S>&,                 \
                                                  const LangevinConfig&);                   \
    template std::vector<int32_t> generate_unconditional<S>(const DecoderParamsT<S>&,       \
                                                            int64_t, const DecodeStrategy&, \
                                                            Rng&);                          \
    template std::vector<int32_t> generate_conditional<S>(                                  \
        const std::vector<int32_t>&, int64_t, const DecoderParamsT<S>&, const InferSpec&,   \
        const DecodeStrategy&, Rng&, bool);

LTM_INSTANTIATE_SAMPLER(float)
LTM_INSTANTIATE_SAMPLER(double)

#undef LTM_INSTANTIATE_SAMPLER

}  // namespace ltm
