#pragma once

#include <span>

#include "ltm/trainer.hpp"

namespace ltm {

// ============================================================================
// Decode strategies
// ============================================================================

struct DecodeStrategy {
    enum class Kind { greedy, multinomial, top_k, nucleus };
    Kind kind = Kind::greedy;
    double temperature = 1.0;
    int64_t k = 1;    // top_k support size
    double p = 0.95;  // nucleus mass

    void validate() const;
    static DecodeStrategy parse(const std::string& name);
};

// Draws one token id. Greedy breaks ties toward the lowest index; top_k and
// nucleus renormalize over their restricted support, which always contains
// the highest-probability token.
template <class S>
int32_t sample_token(std::span<const S> logits, const DecodeStrategy& strategy, Rng& rng);

// ============================================================================
// Langevin inference
// ============================================================================

struct LangevinConfig {
    double step_size = 0.05;
    int64_t n_steps = 100;
    uint64_t seed = 0;

    void validate() const;
};

// z' = z + s * grad_z[log p(z) + log p(x|z)] + sqrt(2 s) * noise, with
// grad log p(z) = -z. s = 0 is accepted for limit tests and returns z
// unchanged.
template <class S>
LatentThoughtT<S> langevin_step(const LatentThoughtT<S>& z, const std::vector<int32_t>& x,
                                const DecoderParamsT<S>& params, double s,
                                const TensorT<S>& noise);

template <class S>
struct LangevinResultT {
    LatentThoughtT<S> z;
    std::vector<double> log_joint_trace;  // log p(z) + log p(x|z) entering each step
};

// Chain of n_steps from z0 ~ N(0, I).
template <class S>
LangevinResultT<S> langevin_infer(const std::vector<int32_t>& x,
                                  const DecoderParamsT<S>& params, const LangevinConfig& cfg);

// log p(z) + log p(x|z) with the standard-normal prior constant included.
template <class S>
double log_joint(const std::vector<int32_t>& x, const LatentThoughtT<S>& z,
                 const DecoderParamsT<S>& params);

// ============================================================================
// Generation
// ============================================================================

// How to obtain z for conditional generation.
struct InferSpec {
    enum class Kind { vb, langevin };
    Kind kind = Kind::vb;
    int64_t t_fast = 16;
    double eta = 0.3;
    bool use_mean = false;  // z = mu instead of one posterior sample
    LangevinConfig langevin;
};

// Draws z from the prior, then decodes `length` tokens autoregressively
// starting from a BOS seed. Returns the generated tokens (BOS excluded).
template <class S>
std::vector<int32_t> generate_unconditional(const DecoderParamsT<S>& params, int64_t length,
                                            const DecodeStrategy& strategy, Rng& rng);

// Infers z from the prompt, freezes it, then decodes n_new tokens. Returns
// prompt ++ completion. With reinfer_each_token, z is re-inferred after
// every emitted token (the expensive variant; off by default).
template <class S>
std::vector<int32_t> generate_conditional(const std::vector<int32_t>& prompt, int64_t n_new,
                                          const DecoderParamsT<S>& params,
                                          const InferSpec& infer,
                                          const DecodeStrategy& strategy, Rng& rng,
                                          bool reinfer_each_token = false);

}  // namespace ltm
