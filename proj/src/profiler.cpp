#include "ltm/profiler.hpp"

#include <iomanip>
#include <sstream>

#include "ltm/variational.hpp"

namespace ltm {

namespace {

// sum over query positions of the attended key count
uint64_t windowed_key_sum(int64_t n, int64_t window) {
    uint64_t s = 0;
    for (int64_t i = 0; i < n; ++i) {
        s += static_cast<uint64_t>(std::min(window, i + 1));
    }
    return s;
}

}  // namespace

std::array<double, 4> FlopsReport::shares() const {
    const double total = static_cast<double>(total_macs());
    return {static_cast<double>(self_attn_macs) / total,
            static_cast<double>(cross_attn_macs) / total,
            static_cast<double>(ffn_macs) / total,
            static_cast<double>(embed_macs) / total};
}

FlopsReport forward_flops(const ModelConfig& config, int64_t n) {
    // n_layers == 0 is accepted here as a degenerate test-mode config in
    // which only the embedding term survives
    if (config.n_layers > 0) {
        config.validate();
    }
    if (n > config.max_seq_len) {
        throw ConfigError("forward_flops: n exceeds max_seq_len");
    }
    const uint64_t nn = static_cast<uint64_t>(n);
    const uint64_t h = static_cast<uint64_t>(config.hidden);
    const uint64_t hf = static_cast<uint64_t>(config.ffn_hidden());
    const uint64_t v = static_cast<uint64_t>(config.vocab);
    const uint64_t nz = static_cast<uint64_t>(config.n_latents_per_layer);
    const uint64_t l = static_cast<uint64_t>(config.n_layers);
    const uint64_t sw = windowed_key_sum(n, config.window_k);

    FlopsReport r;
    r.n_tokens = n;
    // q, k, v, o projections plus scores and value mixing over the window
    r.self_attn_macs = l * (4 * nn * h * h + 2 * sw * h);
    r.dense_self_attn_macs = l * (4 * nn * h * h + 2 * nn * nn * h);
    // token-side q and o projections, latent-side k and v projections,
    // dense scores over N_zl keys
    r.cross_attn_macs = l * (2 * nn * h * h + 2 * nz * h * h + 2 * nn * nz * h);
    r.ffn_macs = l * 3 * nn * h * hf;
    // unembedding matmul; the token-embedding lookup performs no multiplies
    r.embed_macs = nn * h * v;

    // secondary estimate: rmsnorm (~3 flops/elem + row reductions), rope
    // (6 flops per rotated pair), softmax (~5 flops per score), silu and
    // gating (~6 flops/elem), residual adds
    const double norm_flops = static_cast<double>(l * 3 + 1) * 4.0 * static_cast<double>(nn * h);
    const double rope_flops =
        static_cast<double>(l) * 6.0 * static_cast<double>(2 * nn * h + 2 * nz * h);
    const double softmax_flops =
        static_cast<double>(l) * 5.0 *
        static_cast<double>(sw + nn * nz) * static_cast<double>(config.n_heads);
    const double act_flops = static_cast<double>(l) * 6.0 * static_cast<double>(nn * hf);
    const double resid_flops = static_cast<double>(l) * 3.0 * static_cast<double>(nn * h);
    r.non_matmul_flops = norm_flops + rope_flops + softmax_flops + act_flops + resid_flops;
    return r;
}

double tfpt(const ModelConfig& config, int64_t n, int64_t t_fast) {
    if (t_fast < 0) {
        throw ConfigError("tfpt: t_fast must be >= 0");
    }
    const FlopsReport r = forward_flops(config, n);
    const double per_pass = r.forward_flops() * (1.0 + r.backward_multiplier);
    return static_cast<double>(t_fast + 1) * per_pass / static_cast<double>(n);
}

FlopsReport flops_report(const ModelConfig& config, int64_t n, int64_t t_fast) {
    FlopsReport r = forward_flops(config, n);
    r.t_fast = t_fast;
    r.tfpt_total = tfpt(config, n, t_fast);
    return r;
}

MacCounts mac_oracle(const ModelConfig& config, int64_t n, uint64_t seed) {
    auto params = init_params<float>(config, seed);
    Rng rng = Rng::stream({seed, 0x6f7261636cULL});
    std::vector<int32_t> x(static_cast<size_t>(n));
    for (auto& t : x) {
        t = static_cast<int32_t>(rng.uniform_int(static_cast<uint64_t>(config.vocab)));
    }
    LatentThoughtT<float> z;
    z.z = Tensor::randn({config.n_layers, config.n_latents_per_layer, config.hidden}, rng);
    mac_counting_start();
    auto logits = forward_logits(x, z, params);
    (void)logits;
    return mac_counting_stop();
}

std::vector<SweepRow> breakdown_sweep(
    const std::vector<std::pair<std::string, ModelConfig>>& configs, int64_t n, int64_t t_fast) {
    if (configs.empty()) {
        throw ConfigError("breakdown_sweep: no configs given");
    }
    std::vector<SweepRow> rows;
    rows.reserve(configs.size());
    for (const auto& [label, cfg] : configs) {
        rows.push_back({label, flops_report(cfg, n, t_fast)});
    }
    return rows;
}

std::string format_sweep_table(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << std::left << std::setw(14) << "config" << std::right << std::setw(12) << "fwd_MFLOPs"
       << std::setw(10) << "self" << std::setw(10) << "cross" << std::setw(10) << "ffn"
       << std::setw(10) << "embed" << std::setw(14) << "tfpt" << "\n";
    for (const auto& row : rows) {
        const auto s = row.report.shares();
        os << std::left << std::setw(14) << row.label << std::right << std::fixed
           << std::setprecision(2) << std::setw(12) << row.report.forward_flops() / 1e6
           << std::setprecision(4) << std::setw(10) << s[0] << std::setw(10) << s[1]
           << std::setw(10) << s[2] << std::setw(10) << s[3] << std::scientific
           << std::setprecision(3) << std::setw(14) << row.report.tfpt_total << "\n";
        os.unsetf(std::ios::floatfield);
    }
    return os.str();
}

std::string format_sweep_records(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os.precision(12);
    for (const auto& row : rows) {
        const auto s = row.report.shares();
        os << "config=" << row.label << " n=" << row.report.n_tokens
           << " t_fast=" << row.report.t_fast << " self_attn_macs=" << row.report.self_attn_macs
           << " cross_attn_macs=" << row.report.cross_attn_macs
           << " ffn_macs=" << row.report.ffn_macs << " embed_macs=" << row.report.embed_macs
           << " share_self=" << s[0] << " share_cross=" << s[1] << " share_ffn=" << s[2]
           << " share_embed=" << s[3] << " dense_self_attn_macs="
           << row.report.dense_self_attn_macs << " non_matmul_flops="
           << row.report.non_matmul_flops << " tfpt=" << row.report.tfpt_total << "\n";
    }
    return os.str();
}

std::string format_sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os.precision(12);
    os << "config,n,t_fast,self_attn_macs,cross_attn_macs,ffn_macs,embed_macs,"
          "share_self,share_cross,share_ffn,share_embed,tfpt\n";
    for (const auto& row : rows) {
        const auto s = row.report.shares();
        os << row.label << "," << row.report.n_tokens << "," << row.report.t_fast << ","
           << row.report.self_attn_macs << "," << row.report.cross_attn_macs << ","
           << row.report.ffn_macs << "," << row.report.embed_macs << "," << s[0] << "," << s[1]
           << "," << s[2] << "," << s[3] << "," << row.report.tfpt_total << "\n";
    }
    return os.str();
}

}  // namespace ltm
