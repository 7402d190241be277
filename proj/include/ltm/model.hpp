#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ltm/nn.hpp"
#include "ltm/tensor.hpp"

namespace ltm {

// ============================================================================
// Configuration
// ============================================================================

struct ModelConfig {
    int64_t n_layers = 3;
    int64_t hidden = 64;
    int64_t n_heads = 8;
    int64_t n_latents_per_layer = 4;
    int64_t vocab = 258;
    int64_t window_k = 64;
    int64_t max_seq_len = 256;
    double rope_base = 10000.0;
    double ffn_mult = 8.0 / 3.0;

    int64_t head_dim() const { return hidden / n_heads; }
    // ffn_mult * hidden rounded to the nearest multiple of 8
    int64_t ffn_hidden() const;
    int64_t total_latents() const { return n_layers * n_latents_per_layer; }
    AttentionConfig attention_config() const;

    void validate() const;  // throws ConfigError
    // "ltm-small" / "ltm-medium" / "ltm-large": 3 / 6 / 12 layers
    static ModelConfig preset(const std::string& name);

    bool operator==(const ModelConfig&) const = default;
};

// ============================================================================
// Parameters
// ============================================================================

template <class S>
struct LayerParamsT {
    TensorT<S> attn_norm_gain;                 // [H]
    AttnProjectionsT<S> self_attn;             // four [H, H]
    TensorT<S> cross_norm_gain;                // [H]
    AttnProjectionsT<S> cross_attn;            // four [H, H]
    TensorT<S> ffn_norm_gain;                  // [H]
    TensorT<S> w_in, w_gate;                   // [H, H_ff]
    TensorT<S> w_out;                          // [H_ff, H]
};

template <class S>
struct DecoderParamsT {
    ModelConfig config;
    TensorT<S> token_embedding;  // [V, H]
    std::vector<LayerParamsT<S>> layers;
    TensorT<S> final_norm_gain;  // [H]
    TensorT<S> unembedding;      // [H, V]

    // Deterministic enumeration; the order defines checkpoint layout and
    // optimizer state pairing.
    std::vector<std::pair<std::string, TensorT<S>*>> named_tensors();
    std::vector<std::pair<std::string, const TensorT<S>*>> named_tensors() const;

    // Leaves sharing this parameter set's value buffers. Used for read-only
    // concurrent evaluation; gradients accumulate per-replica.
    DecoderParamsT shared_replica(bool requires_grad) const;
    int64_t parameter_count() const;
    // True for matrix weights that receive weight decay (norm gains and the
    // two embedding tables are excluded).
    static bool decayed(const std::string& name);
};

// One sample z = (z_1, ..., z_L) of the layered latent thought vectors.
template <class S>
struct LatentThoughtT {
    TensorT<S> z;  // [L, N_zl, H]
};

// ============================================================================
// Operations
// ============================================================================

// Weights ~ N(0, 0.02^2) truncated at +-3 sigma; norm gains 1; residual
// branch output projections additionally scaled by 1/sqrt(2 L).
template <class S>
DecoderParamsT<S> init_params(const ModelConfig& config, uint64_t seed);

// Token-level logits [T, V]; row i parameterizes the distribution of the
// token following x[0..i] given z. Optional capture receives a copy of the
// hidden state after every layer (for dataflow tests and probing).
template <class S>
TensorT<S> forward_logits(const std::vector<int32_t>& x, const LatentThoughtT<S>& z,
                          const DecoderParamsT<S>& params,
                          std::vector<std::vector<S>>* capture_layers = nullptr);

template <class S>
struct LogLikelihoodT {
    TensorT<S> total;      // scalar, nats
    TensorT<S> per_token;  // [T-1]; per_token[n-1] = log p(x_n | x_<n, z)
};

// Sum over n >= 1 of log p(x_n | z, previous window). Requires T >= 2.
template <class S>
LogLikelihoodT<S> log_likelihood(const std::vector<int32_t>& x, const LatentThoughtT<S>& z,
                                 const DecoderParamsT<S>& params);

// Zeroes every layer's cross-attention output projection, severing the
// influence of z on the logits. Used by ablation baselines.
template <class S>
void zero_cross_attn_outputs(DecoderParamsT<S>& params);

}  // namespace ltm
