#include "ltm/nn.hpp"

namespace ltm {

template <class S>
TensorT<S> split_heads(const TensorT<S>& x, int64_t n_heads) {
    if (x.rank() != 2 || x.dim(1) % n_heads != 0) {
        throw ShapeError("split_heads: cannot split last dim of " +
                         std::to_string(x.rank() == 2 ? x.dim(1) : -1) + " into " +
                         std::to_string(n_heads) + " heads");
    }
    return reshape(x, {x.dim(0), n_heads, x.dim(1) / n_heads});
}

template <class S>
TensorT<S> merge_heads(const TensorT<S>& x) {
    if (x.rank() != 3) {
        throw ShapeError("merge_heads: expected [T, n_heads, head_dim]");
    }
    return reshape(x, {x.dim(0), x.dim(1) * x.dim(2)});
}

template <class S>
TensorT<S> swiglu_ffn(const TensorT<S>& x, const TensorT<S>& w_in, const TensorT<S>& w_gate,
                      const TensorT<S>& w_out) {
    return matmul(mul(matmul(x, w_in), silu(matmul(x, w_gate))), w_out);
}

template <class S>
TensorT<S> sliding_causal_attn(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v,
                               int64_t window_k) {
    if (window_k < 1) {
        throw ConfigError("sliding_causal_attn: window_k must be >= 1");
    }
    return attention(q, k, v, window_k);
}

template <class S>
TensorT<S> self_attn_block(const TensorT<S>& h, const AttnProjectionsT<S>& proj,
                           const AttentionConfig& cfg, const std::vector<int64_t>& positions) {
    auto q = rope(split_heads(matmul(h, proj.wq), cfg.n_heads), positions, cfg.rope_base);
    auto k = rope(split_heads(matmul(h, proj.wk), cfg.n_heads), positions, cfg.rope_base);
    auto v = split_heads(matmul(h, proj.wv), cfg.n_heads);
    auto att = sliding_causal_attn(q, k, v, cfg.window_k);
    return matmul(merge_heads(att), proj.wo);
}

template <class S>
TensorT<S> latent_cross_attn(const TensorT<S>& h, const TensorT<S>& z_l,
                             const AttnProjectionsT<S>& proj, const AttentionConfig& cfg,
                             const std::vector<int64_t>& token_positions,
                             const std::vector<int64_t>& latent_positions) {
    if (z_l.rank() != 2 || z_l.dim(0) < 1) {
        throw ConfigError("latent_cross_attn: need at least one latent vector");
    }
    auto q = rope(split_heads(matmul(h, proj.wq), cfg.n_heads), token_positions, cfg.rope_base);
    auto k = rope(split_heads(matmul(z_l, proj.wk), cfg.n_heads), latent_positions,
                  cfg.rope_base);
    auto v = split_heads(matmul(z_l, proj.wv), cfg.n_heads);
    auto att = attention(q, k, v, /*window=*/0);
    return matmul(merge_heads(att), proj.wo);
}

#define LTM_INSTANTIATE_NN(S)                                                                \
    template TensorT<S> split_heads<S>(const TensorT<S>&, int64_t);                          \
    template TensorT<S> merge_heads<S>(const TensorT<S>&);                                   \
    template TensorT<S> swiglu_ffn<S>(const TensorT<S>&, const TensorT<S>&,                  \
                                      const TensorT<S>&, const TensorT<S>&);                 \
    template TensorT<S> sliding_causal_attn<S>(const TensorT<S>&, const TensorT<S>&,         \
                                               const TensorT<S>&, int64_t);                  \
    template TensorT<S> self_attn_block<S>(const TensorT<S>&, const AttnProjectionsT<S>&,    \
                                           const AttentionConfig&,                           \
                                           const std::vector<int64_t>&);                     \
    template TensorT<S> latent_cross_attn<S>(const TensorT<S>&, const TensorT<S>&,           \
                                             const AttnProjectionsT<S>&,                     \
                                             const AttentionConfig&,                         \
                                             const std::vector<int64_t>&,                    \
                                             const std::vector<int64_t>&);

LTM_INSTANTIATE_NN(float)
LTM_INSTANTIATE_NN(double)

#undef LTM_INSTANTIATE_NN

}  // namespace ltm
