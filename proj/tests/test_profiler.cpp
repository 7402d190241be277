#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ltm/profiler.hpp"

using namespace ltm;

namespace {

ModelConfig desk_config() {
    ModelConfig cfg;
    cfg.n_layers = 3;
    cfg.hidden = 64;
    cfg.n_heads = 8;
    cfg.n_latents_per_layer = 4;
    cfg.vocab = 258;
    cfg.window_k = 64;
    cfg.max_seq_len = 512;
    return cfg;
}

}  // namespace

TEST_CASE("degenerate zero-layer config counts only the embedding term") {
    ModelConfig cfg = desk_config();
    cfg.n_layers = 0;  // test mode
    auto r = forward_flops(cfg, 32);
    CHECK(r.self_attn_macs == 0);
    CHECK(r.cross_attn_macs == 0);
    CHECK(r.ffn_macs == 0);
    CHECK(r.embed_macs == 32ull * 64 * 258);
}

TEST_CASE("polynomial structure under hidden-size doubling") {
    // H divisible by 3 keeps the ffn width rounding exact under doubling
    ModelConfig a = desk_config();
    a.hidden = 48;
    a.n_heads = 8;
    ModelConfig b = a;
    b.hidden = 96;
    const auto ra = forward_flops(a, 128);
    const auto rb = forward_flops(b, 128);
    CHECK(rb.ffn_macs == 4 * ra.ffn_macs);
    CHECK(rb.embed_macs == 2 * ra.embed_macs);
}

TEST_CASE("cross-attention component is linear in the latent count") {
    ModelConfig a = desk_config();
    ModelConfig b = desk_config();
    b.n_latents_per_layer = 8;
    const auto ra = forward_flops(a, 128);
    const auto rb = forward_flops(b, 128);
    // subtract the token-side projections, which do not depend on N_zl
    const uint64_t token_side = 3ull * 2 * 128 * 64 * 64;
    CHECK(rb.cross_attn_macs - token_side == 2 * (ra.cross_attn_macs - token_side));
}

TEST_CASE("analytic counts equal the runtime mac oracle exactly") {
    for (int64_t l : {1, 2, 3}) {
        for (int64_t h : {16, 32, 64}) {
            for (int64_t nz : {1, 4}) {
                ModelConfig cfg = desk_config();
                cfg.n_layers = l;
                cfg.hidden = h;
                cfg.n_heads = h / 8 >= 2 ? 8 : 2;
                cfg.n_latents_per_layer = nz;
                cfg.window_k = 16;
                const int64_t n = 48;
                const auto analytic = forward_flops(cfg, n);
                const auto counted = mac_oracle(cfg, n);
                CHECK(analytic.self_attn_macs == counted[MacScopeId::SelfAttn]);
                CHECK(analytic.cross_attn_macs == counted[MacScopeId::CrossAttn]);
                CHECK(analytic.ffn_macs == counted[MacScopeId::Ffn]);
                CHECK(analytic.embed_macs == counted[MacScopeId::Embed]);
                CHECK(counted[MacScopeId::Other] == 0);
            }
        }
    }
}

TEST_CASE("desk configuration matches the oracle at full length") {
    ModelConfig cfg = desk_config();
    cfg.window_k = 256;
    cfg.max_seq_len = 512;
    const auto analytic = forward_flops(cfg, 512);
    const auto counted = mac_oracle(cfg, 512);
    CHECK(analytic.self_attn_macs == counted[MacScopeId::SelfAttn]);
    CHECK(analytic.cross_attn_macs == counted[MacScopeId::CrossAttn]);
    CHECK(analytic.ffn_macs == counted[MacScopeId::Ffn]);
    CHECK(analytic.embed_macs == counted[MacScopeId::Embed]);
    CHECK(analytic.total_macs() == counted.total());
}

TEST_CASE("tfpt is affine in t_fast with the per-pass slope") {
    const ModelConfig cfg = desk_config();
    const int64_t n = 256;
    const double slope = tfpt(cfg, n, 1) - tfpt(cfg, n, 0);
    for (int64_t t = 0; t < 12; ++t) {
        CHECK(tfpt(cfg, n, t + 1) - tfpt(cfg, n, t) == doctest::Approx(slope).epsilon(1e-12));
    }
    // t_fast = 0: exactly one combined forward+backward pass
    const auto r = forward_flops(cfg, n);
    CHECK(tfpt(cfg, n, 0) ==
          doctest::Approx(3.0 * r.forward_flops() / static_cast<double>(n)).epsilon(1e-12));
}

TEST_CASE("shares sum to one and are invariant to t_fast") {
    const ModelConfig cfg = desk_config();
    auto r = flops_report(cfg, 256, 16);
    const auto s = r.shares();
    CHECK(std::abs(s[0] + s[1] + s[2] + s[3] - 1.0) <= 1e-9);
    auto r2 = flops_report(cfg, 256, 64);
    const auto s2 = r2.shares();
    for (int i = 0; i < 4; ++i) {
        CHECK(s[i] == doctest::Approx(s2[i]).epsilon(1e-15));
    }
}

TEST_CASE("embedding share strictly decreases as layers grow") {
    std::vector<std::pair<std::string, ModelConfig>> configs;
    for (int64_t l : {3, 6, 12}) {
        ModelConfig cfg = desk_config();
        cfg.n_layers = l;
        configs.emplace_back("L" + std::to_string(l), cfg);
    }
    auto rows = breakdown_sweep(configs, 256, 16);
    REQUIRE(rows.size() == 3);
    double prev = 2.0;
    for (const auto& row : rows) {
        const double embed_share = row.report.shares()[3];
        CHECK(embed_share < prev);
        prev = embed_share;
    }
}

TEST_CASE("sweep formatting round trips the key numbers") {
    std::vector<std::pair<std::string, ModelConfig>> configs = {{"desk", desk_config()}};
    auto rows = breakdown_sweep(configs, 128, 4);
    const auto table = format_sweep_table(rows);
    CHECK(table.find("desk") != std::string::npos);
    const auto records = format_sweep_records(rows);
    CHECK(records.find("config=desk") != std::string::npos);
    CHECK(records.find("tfpt=") != std::string::npos);
    const auto csv = format_sweep_csv(rows);
    CHECK(csv.find("config,n,t_fast") != std::string::npos);
    CHECK_THROWS_AS(breakdown_sweep({}, 128, 4), ConfigError);
    // single config row shares match forward_flops
    const auto direct = forward_flops(desk_config(), 128);
    CHECK(rows[0].report.self_attn_macs == direct.self_attn_macs);
}

TEST_CASE("dense attention form dominates the windowed count") {
    const ModelConfig cfg = desk_config();
    auto r = forward_flops(cfg, 512);
    CHECK(r.dense_self_attn_macs >= r.self_attn_macs);
    // at n <= window the causal count is the triangular number n(n+1)/2
    auto small = forward_flops(cfg, 32);
    const uint64_t expect =
        3ull * (4ull * 32 * 64 * 64 + 2ull * (32ull * 33 / 2) * 64);
    CHECK(small.self_attn_macs == expect);
}
