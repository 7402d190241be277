#include "ltm/variational.hpp"

namespace ltm {

template <class S>
VariationalStateT<S> init_state(const ModelConfig& config) {
    config.validate();
    const std::vector<int64_t> shape = {config.n_layers, config.n_latents_per_layer,
                                        config.hidden};
    VariationalStateT<S> st;
    st.mu = TensorT<S>::zeros(shape, true);
    st.logvar = TensorT<S>::zeros(shape, true);
    return st;
}

template <class S>
void clamp_logvar(VariationalStateT<S>& state) {
    auto buf = state.logvar.data_mut();
    for (S& v : buf) {
        v = std::min(static_cast<S>(kLogVarMax), std::max(static_cast<S>(kLogVarMin), v));
    }
}

template <class S>
TensorT<S> kl_to_prior(const VariationalStateT<S>& state) {
    // 0.5 * sum(mu^2 + sigma^2 - 1 - logvar)
    auto var = exp(state.logvar);
    auto inner = sub(add(square(state.mu), var), add_scalar(state.logvar, S(1)));
    return scale(sum(inner), S(0.5));
}

template <class S>
LatentThoughtT<S> reparam_sample(const VariationalStateT<S>& state, const TensorT<S>& noise) {
    if (noise.shape() != state.mu.shape()) {
        throw ShapeError("reparam_sample: noise shape mismatch");
    }
    auto sigma = exp(scale(state.logvar, S(0.5)));
    LatentThoughtT<S> out;
    out.z = add(state.mu, mul(sigma, noise));
    return out;
}

template <class S>
ElboT<S> elbo_with_noise(const std::vector<int32_t>& x, const VariationalStateT<S>& state,
                         const DecoderParamsT<S>& params, const TensorT<S>& noise) {
    auto z = reparam_sample(state, noise);
    auto ll = log_likelihood(x, z, params);
    ElboT<S> out;
    out.recon = ll.total;
    out.kl = kl_to_prior(state);
    out.elbo = sub(out.recon, out.kl);
    return out;
}

template <class S>
ElboT<S> elbo(const std::vector<int32_t>& x, const VariationalStateT<S>& state,
              const DecoderParamsT<S>& params, int n_mc, Rng& rng) {
    if (n_mc < 1) {
        throw ConfigError("elbo: n_mc must be >= 1");
    }
    TensorT<S> recon;
    for (int s = 0; s < n_mc; ++s) {
        auto noise = TensorT<S>::randn(state.mu.shape(), rng);
        auto z = reparam_sample(state, noise);
        auto ll = log_likelihood(x, z, params);
        recon = s == 0 ? ll.total : add(recon, ll.total);
    }
    if (n_mc > 1) {
        recon = scale(recon, S(1) / static_cast<S>(n_mc));
    }
    ElboT<S> out;
    out.recon = recon;
    out.kl = kl_to_prior(state);
    out.elbo = sub(out.recon, out.kl);
    return out;
}

template <class S>
void add_states_to_container(Container& c, const std::vector<VariationalStateT<S>>& states) {
    for (size_t i = 0; i < states.size(); ++i) {
        const std::string prefix = "doc" + std::to_string(i) + ".";
        NamedTensorData mu, lv;
        mu.shape = states[i].mu.shape();
        mu.data.assign(states[i].mu.data().begin(), states[i].mu.data().end());
        lv.shape = states[i].logvar.shape();
        lv.data.assign(states[i].logvar.data().begin(), states[i].logvar.data().end());
        c.tensors.emplace_back(prefix + "mu", std::move(mu));
        c.tensors.emplace_back(prefix + "logvar", std::move(lv));
    }
    c.set("n_states", std::to_string(states.size()));
}

template <class S>
std::vector<VariationalStateT<S>> states_from_container(const Container& c,
                                                        const ModelConfig& cfg) {
    const int64_t n = c.get_int("n_states");
    const std::vector<int64_t> want = {cfg.n_layers, cfg.n_latents_per_layer, cfg.hidden};
    std::vector<VariationalStateT<S>> out;
    for (int64_t i = 0; i < n; ++i) {
        const std::string prefix = "doc" + std::to_string(i) + ".";
        const NamedTensorData* mu = c.find_tensor(prefix + "mu");
        const NamedTensorData* lv = c.find_tensor(prefix + "logvar");
        if (mu == nullptr || lv == nullptr) {
            throw IoError("state container missing tensors for document " + std::to_string(i));
        }
        if (mu->shape != want || lv->shape != want) {
            throw IoError("state container shapes disagree with model config");
        }
        VariationalStateT<S> st;
        st.mu = TensorT<S>::from_data(want, {mu->data.begin(), mu->data.end()}, true);
        st.logvar = TensorT<S>::from_data(want, {lv->data.begin(), lv->data.end()}, true);
        out.push_back(std::move(st));
    }
    return out;
}

#define LTM_INSTANTIATE_VARIATIONAL(S)                                                     \
    template VariationalStateT<S> init_state<S>(const ModelConfig&);                       \
    template void clamp_logvar<S>(VariationalStateT<S>&);                                  \
    template TensorT<S> kl_to_prior<S>(const VariationalStateT<S>&);                       \
    template LatentThoughtT<S> reparam_sample<S>(const VariationalStateT<S>&,              \
                                                 const TensorT<S>&);                       \
    template ElboT<S> elbo<S>(const std::vector<int32_t>&, const VariationalStateT<S>&,    \
                              const DecoderParamsT<S>&, int, Rng&);                        \
    template ElboT<S> elbo_with_noise<S>(const std::vector<int32_t>&,                      \
                                         const VariationalStateT<S>&,                      \
                                         const DecoderParamsT<S>&, const TensorT<S>&);     \
    template void add_states_to_container<S>(Container&,                                   \
                                             const std::vector<VariationalStateT<S>>&);    \
    template std::vector<VariationalStateT<S>> states_from_container<S>(const Container&,  \
                                                                        const ModelConfig&);

LTM_INSTANTIATE_VARIATIONAL(float)
LTM_INSTANTIATE_VARIATIONAL(double)

#undef LTM_INSTANTIATE_VARIATIONAL

}  // namespace ltm
