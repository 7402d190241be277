#pragma once

#include "ltm/checkpoint.hpp"
#include "ltm/model.hpp"
#include "ltm/tensor.hpp"

namespace ltm {

constexpr double kLogVarMin = -12.0;
constexpr double kLogVarMax = 6.0;

// Per-sequence diagonal-Gaussian posterior over the layered latents.
template <class S>
struct VariationalStateT {
    TensorT<S> mu;      // [L, N_zl, H]
    TensorT<S> logvar;  // [L, N_zl, H], clamped to [kLogVarMin, kLogVarMax]
};

// q initialized to the prior: mu = 0, logvar = 0. Deterministic.
template <class S>
VariationalStateT<S> init_state(const ModelConfig& config);

// Clamps logvar into [kLogVarMin, kLogVarMax] in place (leaf buffers only).
template <class S>
void clamp_logvar(VariationalStateT<S>& state);

// Closed-form KL(q || N(0, I)) = 0.5 sum(mu^2 + sigma^2 - 1 - log sigma^2).
// Differentiable wrt mu and logvar.
template <class S>
TensorT<S> kl_to_prior(const VariationalStateT<S>& state);

// z = mu + exp(logvar / 2) * noise; differentiable wrt mu and logvar.
template <class S>
LatentThoughtT<S> reparam_sample(const VariationalStateT<S>& state, const TensorT<S>& noise);

template <class S>
struct ElboT {
    TensorT<S> elbo;   // scalar graph value, nats; == recon - kl
    TensorT<S> recon;  // E_q[log p(x|z)] estimate
    TensorT<S> kl;
};

// Monte Carlo ELBO with n_mc reparameterized samples drawn from rng.
template <class S>
ElboT<S> elbo(const std::vector<int32_t>& x, const VariationalStateT<S>& state,
              const DecoderParamsT<S>& params, int n_mc, Rng& rng);

// Deterministic single-sample ELBO with a caller-provided noise tensor.
// The gradient-check harness relies on this form.
template <class S>
ElboT<S> elbo_with_noise(const std::vector<int32_t>& x, const VariationalStateT<S>& state,
                         const DecoderParamsT<S>& params, const TensorT<S>& noise);

// States exported per document in the container format ("docN.mu",
// "docN.logvar"), for probing and reuse.
template <class S>
void add_states_to_container(Container& c, const std::vector<VariationalStateT<S>>& states);
template <class S>
std::vector<VariationalStateT<S>> states_from_container(const Container& c,
                                                        const ModelConfig& cfg);

}  // namespace ltm
