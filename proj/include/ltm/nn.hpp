#pragma once

#include <vector>

#include "ltm/tensor.hpp"

namespace ltm {

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Attention geometry shared by self- and cross-attention.
struct AttentionConfig {
    int64_t n_heads = 8;
    int64_t head_dim = 8;
    int64_t window_k = 256;
    double rope_base = 10000.0;
};

// Projection set for one attention block; all [H, H].
template <class S>
struct AttnProjectionsT {
    TensorT<S> wq, wk, wv, wo;
};

// [T, H] -> [T, n_heads, head_dim] view and back.
template <class S>
TensorT<S> split_heads(const TensorT<S>& x, int64_t n_heads);
template <class S>
TensorT<S> merge_heads(const TensorT<S>& x);

// out = ((x W_in) * silu(x W_gate)) W_out
template <class S>
TensorT<S> swiglu_ffn(const TensorT<S>& x, const TensorT<S>& w_in, const TensorT<S>& w_gate,
                      const TensorT<S>& w_out);

// Raw sliding-window causal attention over [T, n_heads, head_dim] inputs.
// Query i attends to keys [max(0, i-window_k+1), i].
template <class S>
TensorT<S> sliding_causal_attn(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v,
                               int64_t window_k);

// Full self-attention block: project, rope at token positions, windowed
// attention, output projection. Input and output are [T, H].
template <class S>
TensorT<S> self_attn_block(const TensorT<S>& h, const AttnProjectionsT<S>& proj,
                           const AttentionConfig& cfg, const std::vector<int64_t>& positions);

// Cross-attention of token states [T, H] onto one layer's latents
// [N_zl, H]: latents provide keys and values, tokens the queries; no mask.
// Queries are roped at token positions, keys at latent positions.
template <class S>
TensorT<S> latent_cross_attn(const TensorT<S>& h, const TensorT<S>& z_l,
                             const AttnProjectionsT<S>& proj, const AttentionConfig& cfg,
                             const std::vector<int64_t>& token_positions,
                             const std::vector<int64_t>& latent_positions);

}  // namespace ltm
