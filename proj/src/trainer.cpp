#include "ltm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ltm/profiler.hpp"

namespace ltm {

namespace {

constexpr double kPi = 3.14159265358979323846;
// consecutive skipped slow updates before the run aborts
constexpr int kMaxConsecutiveSkips = 25;

}  // namespace

void TrainConfig::validate() const {
    if (t_fast < 0) {
        throw ConfigError("train: t_fast must be >= 0");
    }
    if (eta_fast_start <= 0 || eta_fast_end <= 0 || eta_slow_peak <= 0 || eta_slow_floor <= 0) {
        throw ConfigError("train: learning rates must be positive");
    }
    if (warmup_steps < 0 || warmup_steps > total_steps) {
        throw ConfigError("train: require 0 <= warmup_steps <= total_steps");
    }
    if (total_steps < 0 || batch_size < 1) {
        throw ConfigError("train: bad step or batch configuration");
    }
    if (grad_clip_norm <= 0) {
        throw ConfigError("train: grad_clip_norm must be positive");
    }
}

// ============================================================================
// Schedules
// ============================================================================

double fast_lr(const TrainConfig& tc, int64_t t) {
    if (t < 0 || t > tc.total_steps) {
        throw ConfigError("fast_lr: step out of range");
    }
    if (tc.total_steps == 0 || t == tc.total_steps) {
        return t == 0 ? tc.eta_fast_start : tc.eta_fast_end;
    }
    const double frac = static_cast<double>(t) / static_cast<double>(tc.total_steps);
    return tc.eta_fast_start + (tc.eta_fast_end - tc.eta_fast_start) * frac;
}

double slow_lr(const TrainConfig& tc, int64_t t) {
    if (t < 0 || t > tc.total_steps) {
        throw ConfigError("slow_lr: step out of range");
    }
    if (t <= tc.warmup_steps) {
        if (tc.warmup_steps == 0) {
            return tc.eta_slow_peak;
        }
        return tc.eta_slow_peak * static_cast<double>(t) / static_cast<double>(tc.warmup_steps);
    }
    if (t == tc.total_steps) {
        return tc.eta_slow_floor;
    }
    const double progress = static_cast<double>(t - tc.warmup_steps) /
                            static_cast<double>(tc.total_steps - tc.warmup_steps);
    return tc.eta_slow_floor +
           0.5 * (tc.eta_slow_peak - tc.eta_slow_floor) * (1.0 + std::cos(kPi * progress));
}

// ============================================================================
// Adam updates
// ============================================================================

namespace {

template <class S>
void adam_init(AdamMomentsT<S>& mom, const std::vector<size_t>& sizes) {
    mom.m.resize(sizes.size());
    mom.v.resize(sizes.size());
    for (size_t i = 0; i < sizes.size(); ++i) {
        mom.m[i].assign(sizes[i], S(0));
        mom.v[i].assign(sizes[i], S(0));
    }
    mom.t = 0;
}

// One Adam step on a single buffer; grad g minimizes. decay > 0 applies
// decoupled weight decay.
template <class S>
void adam_update(std::span<S> p, std::span<const S> g, std::vector<S>& m, std::vector<S>& v,
                 double lr, double beta1, double beta2, double eps, double decay,
                 double bias1, double bias2) {
    for (size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * gi;
        const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * gi * gi;
        m[i] = static_cast<S>(mi);
        v[i] = static_cast<S>(vi);
        const double mhat = mi / bias1;
        const double vhat = vi / bias2;
        double step = lr * mhat / (std::sqrt(vhat) + eps);
        if (decay > 0.0) {
            step += lr * decay * static_cast<double>(p[i]);
        }
        p[i] = static_cast<S>(static_cast<double>(p[i]) - step);
    }
}

}  // namespace

// ============================================================================
// Fast loop
// ============================================================================

template <class S>
FastResultT<S> fast_infer(const std::vector<int32_t>& x, const DecoderParamsT<S>& params,
                          const TrainConfig& tc, int64_t t_fast, double eta_fast, Rng& rng,
                          const VariationalStateT<S>* warm_start) {
    FastResultT<S> out;
    if (warm_start != nullptr) {
        out.state.mu = warm_start->mu.detach_copy();
        out.state.logvar = warm_start->logvar.detach_copy();
        out.state.mu.set_requires_grad(true);
        out.state.logvar.set_requires_grad(true);
    } else {
        out.state = init_state<S>(params.config);
    }
    if (t_fast == 0) {
        return out;
    }
    // frozen decoder view: no beta gradients are ever formed
    auto frozen = params.shared_replica(false);

    AdamMomentsT<S> mom;
    adam_init(mom, {static_cast<size_t>(out.state.mu.numel()),
                    static_cast<size_t>(out.state.logvar.numel())});

    for (int64_t t = 1; t <= t_fast; ++t) {
        auto noise = TensorT<S>::randn(out.state.mu.shape(), rng);
        auto e = elbo_with_noise(x, out.state, frozen, noise);
        const double value = static_cast<double>(e.elbo.item());
        out.elbo_trace.push_back(value);
        if (!std::isfinite(value)) {
            ++out.skipped_steps;
            continue;  // state rolled back: the update is simply not applied
        }
        backward(e.elbo);
        mom.t += 1;
        const double bias1 = 1.0 - std::pow(tc.adam_fast_beta1, static_cast<double>(mom.t));
        const double bias2 = 1.0 - std::pow(tc.adam_fast_beta2, static_cast<double>(mom.t));
        // maximize the ELBO: descend on its negation
        std::vector<S> neg_mu(out.state.mu.grad().begin(), out.state.mu.grad().end());
        std::vector<S> neg_lv(out.state.logvar.grad().begin(), out.state.logvar.grad().end());
        for (auto& g : neg_mu) {
            g = -g;
        }
        for (auto& g : neg_lv) {
            g = -g;
        }
        adam_update<S>(out.state.mu.data_mut(), neg_mu, mom.m[0], mom.v[0], eta_fast,
                       tc.adam_fast_beta1, tc.adam_fast_beta2, tc.adam_eps, 0.0, bias1, bias2);
        adam_update<S>(out.state.logvar.data_mut(), neg_lv, mom.m[1], mom.v[1], eta_fast,
                       tc.adam_fast_beta1, tc.adam_fast_beta2, tc.adam_eps, 0.0, bias1, bias2);
        clamp_logvar(out.state);
        out.state.mu.zero_grad();
        out.state.logvar.zero_grad();
    }
    return out;
}

// ============================================================================
// Slow loop
// ============================================================================

namespace {

// closed-form KL from raw buffers (no graph)
template <class S>
double kl_value(const VariationalStateT<S>& st) {
    double kl = 0;
    const auto mu = st.mu.data();
    const auto lv = st.logvar.data();
    for (size_t i = 0; i < mu.size(); ++i) {
        const double m = mu[i];
        const double l = lv[i];
        kl += 0.5 * (m * m + std::exp(l) - 1.0 - l);
    }
    return kl;
}

template <class S>
LatentThoughtT<S> sample_z_value(const VariationalStateT<S>& st, Rng& rng) {
    std::vector<S> z(static_cast<size_t>(st.mu.numel()));
    const auto mu = st.mu.data();
    const auto lv = st.logvar.data();
    for (size_t i = 0; i < z.size(); ++i) {
        z[i] = static_cast<S>(static_cast<double>(mu[i]) +
                              std::exp(0.5 * static_cast<double>(lv[i])) * rng.normal());
    }
    LatentThoughtT<S> out;
    out.z = TensorT<S>::from_data(st.mu.shape(), std::move(z));
    return out;
}

bool frozen_param(const TrainConfig& tc, const std::string& name) {
    return tc.zero_cross_output && name.find("cross.wo") != std::string::npos;
}

}  // namespace

template <class S>
SlowMetrics slow_step(const std::vector<std::vector<int32_t>>& batch,
                      const std::vector<VariationalStateT<S>>& states,
                      DecoderParamsT<S>& params, OptStateT<S>& opt, const TrainConfig& tc,
                      int64_t step) {
    const size_t b = batch.size();
    if (!tc.plain_lm && states.size() != b) {
        throw ShapeError("slow_step: one state per sequence required");
    }
    const int threads = tc.threads > 0 ? tc.threads : default_thread_count();

    std::vector<DecoderParamsT<S>> replicas(b);
    std::vector<double> recon(b, 0.0), kl(b, 0.0);
    parallel_for(static_cast<int64_t>(b), threads, [&](int64_t i) {
        auto replica = params.shared_replica(true);
        LatentThoughtT<S> z;
        if (tc.plain_lm) {
            z.z = TensorT<S>::zeros({params.config.n_layers, params.config.n_latents_per_layer,
                                     params.config.hidden});
        } else {
            Rng rng = Rng::stream({tc.seed, static_cast<uint64_t>(step),
                                   static_cast<uint64_t>(i), 0x736c6f77ULL});
            z = sample_z_value(states[static_cast<size_t>(i)], rng);
            kl[static_cast<size_t>(i)] = kl_value(states[static_cast<size_t>(i)]);
        }
        auto ll = log_likelihood(batch[static_cast<size_t>(i)], z, replica);
        recon[static_cast<size_t>(i)] = static_cast<double>(ll.total.item());
        if (std::isfinite(recon[static_cast<size_t>(i)])) {
            backward(ll.total);
        }
        replicas[static_cast<size_t>(i)] = std::move(replica);
    });

    SlowMetrics metrics;
    for (size_t i = 0; i < b; ++i) {
        metrics.recon += recon[i] / static_cast<double>(b);
        metrics.kl += kl[i] / static_cast<double>(b);
    }
    metrics.elbo = metrics.recon - metrics.kl;
    if (!std::isfinite(metrics.elbo)) {
        metrics.skipped = true;
        return metrics;
    }

    // batch loss = -(1/B) sum_i (recon_i - kl_i); only recon reaches beta
    auto named = params.named_tensors();
    if (opt.slow.m.empty()) {
        std::vector<size_t> sizes;
        sizes.reserve(named.size());
        for (const auto& [name, t] : named) {
            (void)name;
            sizes.push_back(static_cast<size_t>(t->numel()));
        }
        adam_init(opt.slow, sizes);
    }

    std::vector<std::vector<std::pair<std::string, TensorT<S>*>>> replica_named(b);
    for (size_t i = 0; i < b; ++i) {
        replica_named[i] = replicas[i].named_tensors();
    }
    std::vector<std::vector<S>> grads(named.size());
    const S inv_b = static_cast<S>(-1.0 / static_cast<double>(b));
    for (size_t p = 0; p < named.size(); ++p) {
        grads[p].assign(static_cast<size_t>(named[p].second->numel()), S(0));
        if (frozen_param(tc, named[p].first)) {
            continue;  // frozen tensors take no part in the update or the norm
        }
        for (size_t i = 0; i < b; ++i) {
            if (!replica_named[i][p].second->has_grad()) {
                continue;
            }
            const auto g = replica_named[i][p].second->grad();
            for (size_t j = 0; j < grads[p].size(); ++j) {
                grads[p][j] += inv_b * g[j];
            }
        }
    }

    double norm_sq = 0;
    bool finite = true;
    for (const auto& g : grads) {
        for (S v : g) {
            const double d = static_cast<double>(v);
            norm_sq += d * d;
            if (!std::isfinite(d)) {
                finite = false;
            }
        }
    }
    metrics.grad_norm = std::sqrt(norm_sq);
    if (!finite || !std::isfinite(metrics.grad_norm)) {
        metrics.skipped = true;
        return metrics;
    }
    S clip_scale = S(1);
    if (metrics.grad_norm > tc.grad_clip_norm) {
        clip_scale = static_cast<S>(tc.grad_clip_norm / metrics.grad_norm);
    }

    opt.slow.t += 1;
    const double lr = slow_lr(tc, step);
    const double bias1 = 1.0 - std::pow(tc.adamw_beta1, static_cast<double>(opt.slow.t));
    const double bias2 = 1.0 - std::pow(tc.adamw_beta2, static_cast<double>(opt.slow.t));
    for (size_t p = 0; p < named.size(); ++p) {
        auto& [name, tensor] = named[p];
        if (frozen_param(tc, name)) {
            continue;
        }
        if (clip_scale != S(1)) {
            for (S& v : grads[p]) {
                v *= clip_scale;
            }
        }
        const double decay = DecoderParamsT<S>::decayed(name) ? tc.weight_decay : 0.0;
        adam_update<S>(tensor->data_mut(), grads[p], opt.slow.m[p], opt.slow.v[p], lr,
                       tc.adamw_beta1, tc.adamw_beta2, tc.adam_eps, decay, bias1, bias2);
    }
    return metrics;
}

// ============================================================================
// Metrics records
// ============================================================================

std::string format_step_record(const StepRecord& r) {
    std::ostringstream os;
    os.precision(10);
    os << "step=" << r.step << " elbo=" << r.elbo << " recon=" << r.recon << " kl=" << r.kl
       << " grad_norm=" << r.grad_norm << " lr_fast=" << r.lr_fast << " lr_slow=" << r.lr_slow
       << " tokens_seen=" << r.tokens_seen << " tfpt_cum=" << r.tfpt_cum
       << " wall_ms=" << r.wall_ms;
    return os.str();
}

std::optional<StepRecord> parse_step_record(const std::string& line) {
    StepRecord r;
    std::istringstream is(line);
    std::string field;
    bool saw_step = false;
    while (is >> field) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) {
            continue;
        }
        const std::string key = field.substr(0, eq);
        const std::string val = field.substr(eq + 1);
        try {
            if (key == "step") {
                r.step = std::stoll(val);
                saw_step = true;
            } else if (key == "elbo") {
                r.elbo = std::stod(val);
            } else if (key == "recon") {
                r.recon = std::stod(val);
            } else if (key == "kl") {
                r.kl = std::stod(val);
            } else if (key == "grad_norm") {
                r.grad_norm = std::stod(val);
            } else if (key == "lr_fast") {
                r.lr_fast = std::stod(val);
            } else if (key == "lr_slow") {
                r.lr_slow = std::stod(val);
            } else if (key == "tokens_seen") {
                r.tokens_seen = std::stoll(val);
            } else if (key == "tfpt_cum") {
                r.tfpt_cum = std::stod(val);
            } else if (key == "wall_ms") {
                r.wall_ms = std::stod(val);
            }
        } catch (const std::exception&) {
            return std::nullopt;
        }
    }
    if (!saw_step) {
        return std::nullopt;
    }
    return r;
}

// ============================================================================
// Training checkpoints
// ============================================================================

template <class S>
void save_train_checkpoint(const std::string& path, const DecoderParamsT<S>& params,
                           const OptStateT<S>& opt, int64_t step, int64_t tokens_seen) {
    Container c;
    header_from_config(c, params.config);
    c.set("step", std::to_string(step));
    c.set("tokens_seen", std::to_string(tokens_seen));
    c.set("opt_t", std::to_string(opt.slow.t));
    add_params_to_container(c, params);
    auto named = params.named_tensors();
    if (!opt.slow.m.empty()) {
        for (size_t p = 0; p < named.size(); ++p) {
            NamedTensorData m, v;
            m.shape = named[p].second->shape();
            v.shape = m.shape;
            m.data.assign(opt.slow.m[p].begin(), opt.slow.m[p].end());
            v.data.assign(opt.slow.v[p].begin(), opt.slow.v[p].end());
            c.tensors.emplace_back("opt.m." + named[p].first, std::move(m));
            c.tensors.emplace_back("opt.v." + named[p].first, std::move(v));
        }
    }
    write_container(path, c);
}

template <class S>
void load_train_checkpoint(const std::string& path, DecoderParamsT<S>& params,
                           OptStateT<S>& opt, int64_t& step, int64_t& tokens_seen) {
    Container c = read_container(path);
    params = params_from_container<S>(c);
    step = c.get_int("step");
    tokens_seen = c.get_int("tokens_seen");
    auto named = params.named_tensors();
    opt.slow.t = c.get_int("opt_t");
    opt.slow.m.clear();
    opt.slow.v.clear();
    if (c.find_tensor("opt.m." + named[0].first) != nullptr) {
        opt.slow.m.resize(named.size());
        opt.slow.v.resize(named.size());
        for (size_t p = 0; p < named.size(); ++p) {
            const auto* m = c.find_tensor("opt.m." + named[p].first);
            const auto* v = c.find_tensor("opt.v." + named[p].first);
            if (m == nullptr || v == nullptr) {
                throw IoError("training checkpoint missing optimizer state for '" +
                              named[p].first + "'");
            }
            opt.slow.m[p].assign(m->data.begin(), m->data.end());
            opt.slow.v[p].assign(v->data.begin(), v->data.end());
        }
    }
}

// ============================================================================
// Training driver
// ============================================================================

template <class S>
TrainResult train(const ModelConfig& mc, const TrainConfig& tc, const PackedDataset& ds,
                  const std::string& out_dir, const std::string& resume_from) {
    mc.validate();
    tc.validate();
    if (ds.rows() < 1) {
        throw ConfigError("train: dataset has no rows");
    }
    if (tc.batch_size > ds.rows()) {
        throw ConfigError("train: batch_size exceeds dataset rows");
    }
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "checkpoints", ec);
    if (ec) {
        throw IoError("cannot create run directory '" + out_dir + "': " + ec.message());
    }

    DecoderParamsT<S> params;
    OptStateT<S> opt;
    int64_t start_step = 0;
    int64_t tokens_seen = 0;
    if (!resume_from.empty()) {
        load_train_checkpoint(resume_from, params, opt, start_step, tokens_seen);
        if (!(params.config == mc)) {
            throw ConfigError("train: resume checkpoint config disagrees with requested config");
        }
    } else {
        params = init_params<S>(mc, tc.seed);
        if (tc.zero_cross_output) {
            zero_cross_attn_outputs(params);
        }
    }

    const std::string metrics_path = (fs::path(out_dir) / "metrics.log").string();
    std::ofstream metrics(metrics_path, resume_from.empty() ? std::ios::trunc : std::ios::app);
    if (!metrics) {
        throw IoError("cannot open metrics log '" + metrics_path + "'");
    }

    TrainResult result;
    const auto ckpt_path = [&](int64_t step) {
        return (fs::path(out_dir) / "checkpoints" /
                ("step_" + std::to_string(step) + ".ltmc"))
            .string();
    };
    if (resume_from.empty()) {
        save_train_checkpoint(ckpt_path(0), params, opt, 0, 0);
    }

    const int64_t steps_per_epoch = ds.rows() / tc.batch_size;
    const double tfpt_value = tfpt(mc, ds.row_len, tc.plain_lm ? 0 : tc.t_fast);
    const int threads = tc.threads > 0 ? tc.threads : default_thread_count();
    std::map<int64_t, VariationalStateT<S>> state_cache;
    std::vector<double> elbo_history;
    int consecutive_skips = 0;

    for (int64_t step = start_step + 1; step <= tc.total_steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        const int64_t epoch = (step - 1) / steps_per_epoch;
        const int64_t batch_idx = (step - 1) % steps_per_epoch;
        const auto batches = epoch_batches(ds.rows(), tc.batch_size, tc.seed, epoch);
        const auto& rows = batches[static_cast<size_t>(batch_idx)];

        std::vector<std::vector<int32_t>> batch;
        batch.reserve(rows.size());
        for (int64_t r : rows) {
            auto row = ds.row(r);
            batch.emplace_back(row.begin(), row.end());
        }

        const double lr_f = fast_lr(tc, step - 1);
        std::vector<VariationalStateT<S>> states(batch.size());
        int fast_skipped = 0;
        if (!tc.plain_lm) {
            std::vector<int> skip_counts(batch.size(), 0);
            parallel_for(static_cast<int64_t>(batch.size()), threads, [&](int64_t i) {
                Rng rng = Rng::stream({tc.seed, static_cast<uint64_t>(step),
                                       static_cast<uint64_t>(i), 0x66617374ULL});
                const VariationalStateT<S>* warm = nullptr;
                if (tc.persist_states) {
                    auto it = state_cache.find(rows[static_cast<size_t>(i)]);
                    if (it != state_cache.end()) {
                        warm = &it->second;
                    }
                }
                auto res = fast_infer(batch[static_cast<size_t>(i)], params, tc, tc.t_fast,
                                      lr_f, rng, warm);
                skip_counts[static_cast<size_t>(i)] = res.skipped_steps;
                states[static_cast<size_t>(i)] = std::move(res.state);
            });
            for (size_t i = 0; i < batch.size(); ++i) {
                fast_skipped += skip_counts[i];
                if (tc.persist_states) {
                    VariationalStateT<S> copy;
                    copy.mu = states[i].mu.detach_copy();
                    copy.logvar = states[i].logvar.detach_copy();
                    state_cache[rows[i]] = std::move(copy);
                }
            }
        }

        SlowMetrics sm = slow_step(batch, states, params, opt, tc, step);
        if (sm.skipped) {
            ++consecutive_skips;
            std::cerr << "event=skipped_update step=" << step << " elbo=" << sm.elbo << "\n";
            if (consecutive_skips >= kMaxConsecutiveSkips) {
                throw NumericError("training aborted: " +
                                   std::to_string(consecutive_skips) +
                                   " consecutive non-finite updates");
            }
        } else {
            consecutive_skips = 0;
        }
        if (fast_skipped > 0) {
            std::cerr << "event=skipped_fast_steps step=" << step << " count=" << fast_skipped
                      << "\n";
        }

        tokens_seen += static_cast<int64_t>(batch.size()) * ds.row_len;
        const auto t1 = std::chrono::steady_clock::now();

        StepRecord rec;
        rec.step = step;
        rec.elbo = sm.elbo;
        rec.recon = sm.recon;
        rec.kl = sm.kl;
        rec.grad_norm = sm.grad_norm;
        rec.lr_fast = lr_f;
        rec.lr_slow = slow_lr(tc, step);
        rec.tokens_seen = tokens_seen;
        rec.tfpt_cum = static_cast<double>(tokens_seen) * tfpt_value;
        rec.wall_ms =
            std::chrono::duration_cast<std::chrono::microseconds>(t1 - t0).count() / 1000.0;
        result.records.push_back(rec);
        if (step % tc.log_every == 0 || step == tc.total_steps) {
            metrics << format_step_record(rec) << "\n";
            metrics.flush();
        }
        if (tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0 &&
            step != tc.total_steps) {
            save_train_checkpoint(ckpt_path(step), params, opt, step, tokens_seen);
        }

        elbo_history.push_back(sm.elbo);
        if (tc.plateau_stop &&
            static_cast<int64_t>(elbo_history.size()) >= 2 * tc.plateau_window) {
            const auto w = static_cast<size_t>(tc.plateau_window);
            double recent = 0, earlier = 0;
            for (size_t i = elbo_history.size() - w; i < elbo_history.size(); ++i) {
                recent += elbo_history[i];
            }
            for (size_t i = elbo_history.size() - 2 * w; i < elbo_history.size() - w; ++i) {
                earlier += elbo_history[i];
            }
            if ((recent - earlier) / static_cast<double>(w) < tc.plateau_eps) {
                result.final_step = step;
                result.final_checkpoint = ckpt_path(step);
                save_train_checkpoint(result.final_checkpoint, params, opt, step, tokens_seen);
                return result;
            }
        }
        result.final_step = step;
    }

    result.final_step = std::max(result.final_step, start_step);
    result.final_checkpoint = ckpt_path(result.final_step);
    save_train_checkpoint(result.final_checkpoint, params, opt, result.final_step, tokens_seen);
    return result;
}

// ============================================================================
// Explicit instantiations
// ============================================================================

#define LTM_INSTANTIATE_TRAINER(S)                                                         \
    template struct FastResultT<S>;                                                        \
    template FastResultT<S> fast_infer<S>(const std::vector<int32_t>&,                     \
                                          const DecoderParamsT<S>&, const TrainConfig&,    \
                                          int64_t, double, Rng&,                           \
                                          const VariationalStateT<S>*);                    \
    template SlowMetrics slow_step<S>(const std::vector<std::vector<int32_t>>&,            \
                                      const std::vector<VariationalStateT<S>>&,            \
                                      DecoderParamsT<S>&, OptStateT<S>&,                   \
                                      const TrainConfig&, int64_t);                        \
    template TrainResult train<S>(const ModelConfig&, const TrainConfig&,                  \
                                  const PackedDataset&, const std::string&,                \
                                  const std::string&);                                     \
    template void save_train_checkpoint<S>(const std::string&, const DecoderParamsT<S>&,   \
                                           const OptStateT<S>&, int64_t, int64_t);         \
    template void load_train_checkpoint<S>(const std::string&, DecoderParamsT<S>&,         \
                                           OptStateT<S>&, int64_t&, int64_t&);

LTM_INSTANTIATE_TRAINER(float)
LTM_INSTANTIATE_TRAINER(double)

#undef LTM_INSTANTIATE_TRAINER

}  // namespace ltm
