#pragma once

#include <array>
#include <string>
#include <vector>

#include "ltm/model.hpp"

namespace ltm {

// Analytic compute accounting for one forward pass over N tokens.
// Convention: 1 multiply-accumulate = 2 FLOPs; only matmul-order work is
// counted in the headline numbers (norms, softmax, activations and rotary
// arithmetic go into `non_matmul_flops` as a secondary estimate).
struct FlopsReport {
    int64_t n_tokens = 0;
    int64_t t_fast = 0;

    // forward MACs per component, exact counts for the windowed model
    uint64_t self_attn_macs = 0;
    uint64_t cross_attn_macs = 0;
    uint64_t ffn_macs = 0;
    uint64_t embed_macs = 0;

    uint64_t total_macs() const {
        return self_attn_macs + cross_attn_macs + ffn_macs + embed_macs;
    }
    double forward_flops() const { return 2.0 * static_cast<double>(total_macs()); }

    // component shares of the forward pass; sum to 1
    std::array<double, 4> shares() const;  // self, cross, ffn, embed

    // the same expression with dense (unwindowed) N^2 attention, for
    // comparison against the quadratic form of the cost model
    uint64_t dense_self_attn_macs = 0;

    double non_matmul_flops = 0.0;  // secondary column, analytic estimate
    double backward_multiplier = 2.0;

    // training FLOPs per token under the dual-rate scheme:
    // (T_fast + 1) * (forward + backward) / N
    double tfpt_total = 0.0;
};

// Exact per-matmul MAC counts for a forward pass over n tokens, grouped by
// architectural component. Matches the runtime MAC-counting oracle exactly.
FlopsReport forward_flops(const ModelConfig& config, int64_t n);

// (t_fast + 1) passes, each forward + backward at 2x forward cost, per token.
double tfpt(const ModelConfig& config, int64_t n, int64_t t_fast);

// Populates a report including the tfpt total.
FlopsReport flops_report(const ModelConfig& config, int64_t n, int64_t t_fast);

// Runs a real forward pass with MAC counting enabled and returns the
// per-component counts observed inside the tensor kernels.
MacCounts mac_oracle(const ModelConfig& config, int64_t n, uint64_t seed = 1);

struct SweepRow {
    std::string label;
    FlopsReport report;
};

// One report per config, shared N and T_fast.
std::vector<SweepRow> breakdown_sweep(const std::vector<std::pair<std::string, ModelConfig>>& configs,
                                      int64_t n, int64_t t_fast);

// Plain-text table and machine-readable key=value records.
std::string format_sweep_table(const std::vector<SweepRow>& rows);
std::string format_sweep_records(const std::vector<SweepRow>& rows);
std::string format_sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace ltm
