#include "ltm/model.hpp"

#include <cmath>

namespace ltm {

// ============================================================================
// ModelConfig
// ============================================================================

int64_t ModelConfig::ffn_hidden() const {
    const double w = ffn_mult * static_cast<double>(hidden);
    int64_t rounded = 8 * static_cast<int64_t>(std::llround(w / 8.0));
    return std::max<int64_t>(8, rounded);
}

AttentionConfig ModelConfig::attention_config() const {
    AttentionConfig cfg;
    cfg.n_heads = n_heads;
    cfg.head_dim = head_dim();
    cfg.window_k = window_k;
    cfg.rope_base = rope_base;
    return cfg;
}

void ModelConfig::validate() const {
    if (n_layers < 1) {
        throw ConfigError("config: n_layers must be >= 1");
    }
    if (hidden < n_heads || n_heads < 1 || hidden % n_heads != 0) {
        throw ConfigError("config: hidden must be a positive multiple of n_heads");
    }
    if (head_dim() % 2 != 0) {
        throw ConfigError("config: head_dim must be even for rotary embedding, got " +
                          std::to_string(head_dim()));
    }
    if (n_latents_per_layer < 1) {
        throw ConfigError("config: n_latents_per_layer must be >= 1");
    }
    if (vocab < 2) {
        throw ConfigError("config: vocab must be >= 2");
    }
    if (window_k < 1 || window_k > max_seq_len) {
        throw ConfigError("config: require 1 <= window_k <= max_seq_len");
    }
    if (rope_base <= 1.0) {
        throw ConfigError("config: rope_base must be > 1");
    }
    if (ffn_mult <= 0.0) {
        throw ConfigError("config: ffn_mult must be positive");
    }
}

ModelConfig ModelConfig::preset(const std::string& name) {
    ModelConfig cfg;
    cfg.hidden = 512;
    cfg.n_heads = 8;
    cfg.window_k = 256;
    cfg.max_seq_len = 1024;
    if (name == "ltm-small") {
        cfg.n_layers = 3;
    } else if (name == "ltm-medium") {
        cfg.n_layers = 6;
    } else if (name == "ltm-large") {
        cfg.n_layers = 12;
    } else {
        throw ConfigError("unknown model preset '" + name + "'");
    }
    return cfg;
}

// ============================================================================
// Parameter enumeration
// ============================================================================

namespace {

template <class P, class F>
void visit_params(P& params, F fn) {
    fn("tok_emb", params.token_embedding);
    for (size_t l = 0; l < params.layers.size(); ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        auto& lp = params.layers[l];
        fn(p + "attn_norm", lp.attn_norm_gain);
        fn(p + "attn.wq", lp.self_attn.wq);
        fn(p + "attn.wk", lp.self_attn.wk);
        fn(p + "attn.wv", lp.self_attn.wv);
        fn(p + "attn.wo", lp.self_attn.wo);
        fn(p + "cross_norm", lp.cross_norm_gain);
        fn(p + "cross.wq", lp.cross_attn.wq);
        fn(p + "cross.wk", lp.cross_attn.wk);
        fn(p + "cross.wv", lp.cross_attn.wv);
        fn(p + "cross.wo", lp.cross_attn.wo);
        fn(p + "ffn_norm", lp.ffn_norm_gain);
        fn(p + "ffn.w_in", lp.w_in);
        fn(p + "ffn.w_gate", lp.w_gate);
        fn(p + "ffn.w_out", lp.w_out);
    }
    fn("final_norm", params.final_norm_gain);
    fn("unemb", params.unembedding);
}

}  // namespace

template <class S>
std::vector<std::pair<std::string, TensorT<S>*>> DecoderParamsT<S>::named_tensors() {
    std::vector<std::pair<std::string, TensorT<S>*>> out;
    visit_params(*this, [&](const std::string& n, TensorT<S>& t) { out.emplace_back(n, &t); });
    return out;
}

template <class S>
std::vector<std::pair<std::string, const TensorT<S>*>> DecoderParamsT<S>::named_tensors() const {
    std::vector<std::pair<std::string, const TensorT<S>*>> out;
    visit_params(*this,
                 [&](const std::string& n, const TensorT<S>& t) { out.emplace_back(n, &t); });
    return out;
}

template <class S>
DecoderParamsT<S> DecoderParamsT<S>::shared_replica(bool requires_grad) const {
    DecoderParamsT<S> rep;
    rep.config = config;
    rep.layers.resize(layers.size());
    auto src = named_tensors();
    auto dst = rep.named_tensors();
    for (size_t i = 0; i < src.size(); ++i) {
        *dst[i].second = src[i].second->shared_leaf(requires_grad);
    }
    return rep;
}

template <class S>
int64_t DecoderParamsT<S>::parameter_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : named_tensors()) {
        (void)name;
        n += t->numel();
    }
    return n;
}

template <class S>
bool DecoderParamsT<S>::decayed(const std::string& name) {
    if (name == "tok_emb" || name == "unemb") {
        return false;
    }
    return name.find("norm") == std::string::npos;
}

// ============================================================================
// Initialization
// ============================================================================

namespace {

// N(0, stddev^2) truncated at +-3 sigma by resampling.
template <class S>
TensorT<S> trunc_normal(std::vector<int64_t> shape, Rng& rng, double stddev) {
    auto t = TensorT<S>::zeros(std::move(shape));
    auto buf = t.data_mut();
    for (size_t i = 0; i < buf.size(); ++i) {
        double u = rng.normal();
        while (std::abs(u) > 3.0) {
            u = rng.normal();
        }
        buf[i] = static_cast<S>(u * stddev);
    }
    return t;
}

}  // namespace

template <class S>
DecoderParamsT<S> init_params(const ModelConfig& config, uint64_t seed) {
    config.validate();
    Rng rng = Rng::stream({seed, 0x696e6974ULL});
    const int64_t h = config.hidden;
    const int64_t v = config.vocab;
    const int64_t hf = config.ffn_hidden();
    const double base_std = 0.02;
    const double resid_std = base_std / std::sqrt(2.0 * static_cast<double>(config.n_layers));

    DecoderParamsT<S> params;
    params.config = config;
    params.token_embedding = trunc_normal<S>({v, h}, rng, base_std);
    params.layers.resize(static_cast<size_t>(config.n_layers));
    for (auto& lp : params.layers) {
        lp.attn_norm_gain = TensorT<S>::full({h}, S(1));
        lp.self_attn.wq = trunc_normal<S>({h, h}, rng, base_std);
        lp.self_attn.wk = trunc_normal<S>({h, h}, rng, base_std);
        lp.self_attn.wv = trunc_normal<S>({h, h}, rng, base_std);
        lp.self_attn.wo = trunc_normal<S>({h, h}, rng, resid_std);
        lp.cross_norm_gain = TensorT<S>::full({h}, S(1));
        lp.cross_attn.wq = trunc_normal<S>({h, h}, rng, base_std);
        lp.cross_attn.wk = trunc_normal<S>({h, h}, rng, base_std);
        lp.cross_attn.wv = trunc_normal<S>({h, h}, rng, base_std);
        lp.cross_attn.wo = trunc_normal<S>({h, h}, rng, resid_std);
        lp.ffn_norm_gain = TensorT<S>::full({h}, S(1));
        lp.w_in = trunc_normal<S>({h, hf}, rng, base_std);
        lp.w_gate = trunc_normal<S>({h, hf}, rng, base_std);
        lp.w_out = trunc_normal<S>({hf, h}, rng, resid_std);
    }
    params.final_norm_gain = TensorT<S>::full({h}, S(1));
    params.unembedding = trunc_normal<S>({h, v}, rng, base_std);
    return params;
}

// ============================================================================
// Forward pass
// ============================================================================

template <class S>
TensorT<S> forward_logits(const std::vector<int32_t>& x, const LatentThoughtT<S>& z,
                          const DecoderParamsT<S>& params,
                          std::vector<std::vector<S>>* capture_layers) {
    const ModelConfig& cfg = params.config;
    const int64_t t = static_cast<int64_t>(x.size());
    if (t < 1) {
        throw ShapeError("forward_logits: empty input");
    }
    if (t > cfg.max_seq_len) {
        throw ShapeError("forward_logits: sequence length " + std::to_string(t) +
                         " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    if (z.z.shape() !=
        std::vector<int64_t>{cfg.n_layers, cfg.n_latents_per_layer, cfg.hidden}) {
        throw ShapeError("forward_logits: latent shape mismatch");
    }
    const AttentionConfig acfg = cfg.attention_config();
    std::vector<int64_t> positions(static_cast<size_t>(t));
    for (int64_t i = 0; i < t; ++i) {
        positions[static_cast<size_t>(i)] = i;
    }
    std::vector<int64_t> latent_positions(static_cast<size_t>(cfg.n_latents_per_layer));
    for (int64_t i = 0; i < cfg.n_latents_per_layer; ++i) {
        latent_positions[static_cast<size_t>(i)] = i;
    }

    TensorT<S> h;
    {
        MacScope scope(MacScopeId::Embed);
        h = embedding(params.token_embedding, x);
    }
    auto z_flat = reshape(z.z, {cfg.total_latents(), cfg.hidden});
    for (int64_t l = 0; l < cfg.n_layers; ++l) {
        const auto& lp = params.layers[static_cast<size_t>(l)];
        {
            MacScope scope(MacScopeId::SelfAttn);
            h = add(h, self_attn_block(rmsnorm(h, lp.attn_norm_gain), lp.self_attn, acfg,
                                       positions));
        }
        {
            MacScope scope(MacScopeId::CrossAttn);
            auto z_l = row_block(z_flat, l * cfg.n_latents_per_layer, cfg.n_latents_per_layer);
            h = add(h, latent_cross_attn(rmsnorm(h, lp.cross_norm_gain), z_l, lp.cross_attn,
                                         acfg, positions, latent_positions));
        }
        {
            MacScope scope(MacScopeId::Ffn);
            h = add(h, swiglu_ffn(rmsnorm(h, lp.ffn_norm_gain), lp.w_in, lp.w_gate, lp.w_out));
        }
        if (capture_layers != nullptr) {
            capture_layers->emplace_back(h.data().begin(), h.data().end());
        }
    }
    h = rmsnorm(h, params.final_norm_gain);
    MacScope scope(MacScopeId::Embed);
    return matmul(h, params.unembedding);
}

// ============================================================================
// Log-likelihood
// ============================================================================

template <class S>
LogLikelihoodT<S> log_likelihood(const std::vector<int32_t>& x, const LatentThoughtT<S>& z,
                                 const DecoderParamsT<S>& params) {
    const int64_t t = static_cast<int64_t>(x.size());
    if (t < 2) {
        throw ShapeError("log_likelihood: need at least 2 tokens (one predicted), got " +
                         std::to_string(t));
    }
    // The last token never conditions a prediction and is dropped from the
    // decoder input.
    std::vector<int32_t> input(x.begin(), x.end() - 1);
    std::vector<int32_t> targets(x.begin() + 1, x.end());
    auto logits = forward_logits(input, z, params);
    LogLikelihoodT<S> out;
    out.per_token = token_log_probs(logits, targets);
    out.total = sum(out.per_token);
    return out;
}

template <class S>
void zero_cross_attn_outputs(DecoderParamsT<S>& params) {
    for (auto& lp : params.layers) {
        auto buf = lp.cross_attn.wo.data_mut();
        std::fill(buf.begin(), buf.end(), S(0));
    }
}

// ============================================================================
// Explicit instantiations
// ============================================================================

#define LTM_INSTANTIATE_MODEL(S)                                                          \
    template struct DecoderParamsT<S>;                                                    \
    template DecoderParamsT<S> init_params<S>(const ModelConfig&, uint64_t);              \
    template TensorT<S> forward_logits<S>(const std::vector<int32_t>&,                    \
                                          const LatentThoughtT<S>&,                       \
                                          const DecoderParamsT<S>&,                       \
                                          std::vector<std::vector<S>>*);                  \
    template LogLikelihoodT<S> log_likelihood<S>(const std::vector<int32_t>&,             \
                                                 const LatentThoughtT<S>&,                \
                                                 const DecoderParamsT<S>&);               \
    template void zero_cross_attn_outputs<S>(DecoderParamsT<S>&);

LTM_INSTANTIATE_MODEL(float)
LTM_INSTANTIATE_MODEL(double)

#undef LTM_INSTANTIATE_MODEL

}  // namespace ltm
