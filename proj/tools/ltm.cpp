// Command-line surface: train, eval, infer, generate, probe, flops.
//
// Configuration comes from a flat key = value file plus --set overrides
// (flag wins over file). Unknown keys are hard errors. Exit codes:
// 0 success, 2 config error, 3 IO error, 4 numeric abort.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "ltm/data.hpp"
#include "ltm/evalprobe.hpp"
#include "ltm/profiler.hpp"
#include "ltm/sampler.hpp"
#include "ltm/trainer.hpp"

namespace fs = std::filesystem;
using namespace ltm;

namespace {

// ============================================================================
// Key-value configuration
// ============================================================================

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        // model
        "preset", "n_layers", "hidden", "n_heads", "n_latents_per_layer", "vocab", "window_k",
        "max_seq_len", "rope_base", "ffn_mult",
        // training
        "t_fast", "eta_fast_start", "eta_fast_end", "eta_slow_peak", "eta_slow_floor",
        "warmup_steps", "total_steps", "batch_size", "grad_clip_norm", "adamw_beta1",
        "adamw_beta2", "adam_fast_beta1", "adam_fast_beta2", "adam_eps", "weight_decay",
        "seed", "threads", "checkpoint_every", "log_every", "persist_states", "plain_lm",
        "zero_cross_output", "plateau_stop", "plateau_window", "plateau_eps",
        // data
        "corpus", "valid_fraction",
    };
    return keys;
}

struct KvConfig {
    std::map<std::string, std::string> values;

    static KvConfig load(const std::string& path) {
        std::ifstream is(path);
        if (!is) {
            throw IoError("cannot open config file '" + path + "'");
        }
        KvConfig cfg;
        std::string line;
        int line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) {
                line = line.substr(0, hash);
            }
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) {
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("config line " + std::to_string(line_no) +
                                  ": expected 'key = value'");
            }
            auto trim = [](std::string s) {
                const auto a = s.find_first_not_of(" \t\r");
                const auto b = s.find_last_not_of(" \t\r");
                return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
            };
            cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
        return cfg;
    }

    void set(const std::string& key, const std::string& value) {
        if (known_keys().count(key) == 0) {
            throw ConfigError("unknown configuration key '" + key + "'");
        }
        values[key] = value;
    }

    void apply_override(const std::string& kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        }
        set(kv.substr(0, eq), kv.substr(eq + 1));
    }

    bool has(const std::string& key) const { return values.count(key) > 0; }
    std::string str(const std::string& key, const std::string& dflt) const {
        auto it = values.find(key);
        return it == values.end() ? dflt : it->second;
    }
    int64_t num(const std::string& key, int64_t dflt) const {
        auto it = values.find(key);
        if (it == values.end()) {
            return dflt;
        }
        try {
            return std::stoll(it->second);
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': expected integer, got '" + it->second + "'");
        }
    }
    double real(const std::string& key, double dflt) const {
        auto it = values.find(key);
        if (it == values.end()) {
            return dflt;
        }
        try {
            return std::stod(it->second);
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': expected number, got '" + it->second + "'");
        }
    }
    bool flag(const std::string& key, bool dflt) const {
        auto it = values.find(key);
        if (it == values.end()) {
            return dflt;
        }
        if (it->second == "true" || it->second == "1") {
            return true;
        }
        if (it->second == "false" || it->second == "0") {
            return false;
        }
        throw ConfigError("key '" + key + "': expected true/false, got '" + it->second + "'");
    }
};

ModelConfig model_from_kv(const KvConfig& kv) {
    ModelConfig mc;
    if (kv.has("preset")) {
        mc = ModelConfig::preset(kv.str("preset", ""));
    }
    mc.n_layers = kv.num("n_layers", mc.n_layers);
    mc.hidden = kv.num("hidden", mc.hidden);
    mc.n_heads = kv.num("n_heads", mc.n_heads);
    mc.n_latents_per_layer = kv.num("n_latents_per_layer", mc.n_latents_per_layer);
    mc.vocab = kv.num("vocab", mc.vocab);
    mc.window_k = kv.num("window_k", mc.window_k);
    mc.max_seq_len = kv.num("max_seq_len", mc.max_seq_len);
    mc.rope_base = kv.real("rope_base", mc.rope_base);
    mc.ffn_mult = kv.real("ffn_mult", mc.ffn_mult);
    mc.validate();
    return mc;
}

TrainConfig train_from_kv(const KvConfig& kv) {
    TrainConfig tc;
    tc.t_fast = kv.num("t_fast", tc.t_fast);
    tc.eta_fast_start = kv.real("eta_fast_start", tc.eta_fast_start);
    tc.eta_fast_end = kv.real("eta_fast_end", tc.eta_fast_end);
    tc.eta_slow_peak = kv.real("eta_slow_peak", tc.eta_slow_peak);
    tc.eta_slow_floor = kv.real("eta_slow_floor", tc.eta_slow_floor);
    tc.warmup_steps = kv.num("warmup_steps", tc.warmup_steps);
    tc.total_steps = kv.num("total_steps", tc.total_steps);
    tc.batch_size = kv.num("batch_size", tc.batch_size);
    tc.grad_clip_norm = kv.real("grad_clip_norm", tc.grad_clip_norm);
    tc.adamw_beta1 = kv.real("adamw_beta1", tc.adamw_beta1);
    tc.adamw_beta2 = kv.real("adamw_beta2", tc.adamw_beta2);
    tc.adam_fast_beta1 = kv.real("adam_fast_beta1", tc.adam_fast_beta1);
    tc.adam_fast_beta2 = kv.real("adam_fast_beta2", tc.adam_fast_beta2);
    tc.adam_eps = kv.real("adam_eps", tc.adam_eps);
    tc.weight_decay = kv.real("weight_decay", tc.weight_decay);
    tc.seed = static_cast<uint64_t>(kv.num("seed", 0));
    tc.threads = static_cast<int>(kv.num("threads", 0));
    tc.checkpoint_every = kv.num("checkpoint_every", tc.checkpoint_every);
    tc.log_every = kv.num("log_every", tc.log_every);
    tc.persist_states = kv.flag("persist_states", tc.persist_states);
    tc.plain_lm = kv.flag("plain_lm", tc.plain_lm);
    tc.zero_cross_output = kv.flag("zero_cross_output", tc.zero_cross_output);
    tc.plateau_stop = kv.flag("plateau_stop", tc.plateau_stop);
    tc.plateau_window = kv.num("plateau_window", tc.plateau_window);
    tc.plateau_eps = kv.real("plateau_eps", tc.plateau_eps);
    tc.validate();
    return tc;
}

void echo_resolved_config(const KvConfig& kv, const ModelConfig& mc, const TrainConfig& tc,
                          const std::string& out_dir) {
    std::ofstream os(fs::path(out_dir) / "config.resolved");
    if (!os) {
        throw IoError("cannot write resolved config under '" + out_dir + "'");
    }
    os.precision(17);
    os << "# resolved configuration\n";
    os << "n_layers = " << mc.n_layers << "\n";
    os << "hidden = " << mc.hidden << "\n";
    os << "n_heads = " << mc.n_heads << "\n";
    os << "n_latents_per_layer = " << mc.n_latents_per_layer << "\n";
    os << "vocab = " << mc.vocab << "\n";
    os << "window_k = " << mc.window_k << "\n";
    os << "max_seq_len = " << mc.max_seq_len << "\n";
    os << "rope_base = " << mc.rope_base << "\n";
    os << "ffn_mult = " << mc.ffn_mult << "\n";
    os << "t_fast = " << tc.t_fast << "\n";
    os << "eta_fast_start = " << tc.eta_fast_start << "\n";
    os << "eta_fast_end = " << tc.eta_fast_end << "\n";
    os << "eta_slow_peak = " << tc.eta_slow_peak << "\n";
    os << "eta_slow_floor = " << tc.eta_slow_floor << "\n";
    os << "warmup_steps = " << tc.warmup_steps << "\n";
    os << "total_steps = " << tc.total_steps << "\n";
    os << "batch_size = " << tc.batch_size << "\n";
    os << "grad_clip_norm = " << tc.grad_clip_norm << "\n";
    os << "adamw_beta1 = " << tc.adamw_beta1 << "\n";
    os << "adamw_beta2 = " << tc.adamw_beta2 << "\n";
    os << "adam_fast_beta1 = " << tc.adam_fast_beta1 << "\n";
    os << "adam_fast_beta2 = " << tc.adam_fast_beta2 << "\n";
    os << "adam_eps = " << tc.adam_eps << "\n";
    os << "weight_decay = " << tc.weight_decay << "\n";
    os << "seed = " << tc.seed << "\n";
    os << "threads = " << tc.threads << "\n";
    os << "checkpoint_every = " << tc.checkpoint_every << "\n";
    os << "log_every = " << tc.log_every << "\n";
    os << "persist_states = " << (tc.persist_states ? "true" : "false") << "\n";
    os << "plain_lm = " << (tc.plain_lm ? "true" : "false") << "\n";
    os << "zero_cross_output = " << (tc.zero_cross_output ? "true" : "false") << "\n";
    os << "plateau_stop = " << (tc.plateau_stop ? "true" : "false") << "\n";
    os << "plateau_window = " << tc.plateau_window << "\n";
    os << "plateau_eps = " << tc.plateau_eps << "\n";
    os << "corpus = " << kv.str("corpus", "") << "\n";
    os << "valid_fraction = " << kv.real("valid_fraction", 0.1) << "\n";
}

std::vector<std::vector<int32_t>> rows_of(const PackedDataset& ds) {
    std::vector<std::vector<int32_t>> rows;
    rows.reserve(static_cast<size_t>(ds.rows()));
    for (int64_t r = 0; r < ds.rows(); ++r) {
        auto row = ds.row(r);
        rows.emplace_back(row.begin(), row.end());
    }
    return rows;
}

PackedDataset pack_split(const std::string& corpus_path, const std::string& split,
                         double valid_fraction, int64_t n_max) {
    auto docs = load_corpus(corpus_path);
    if (split == "all") {
        return pack_corpus(docs, n_max);
    }
    auto parts = split_corpus(std::move(docs), valid_fraction);
    if (split == "train") {
        return pack_corpus(parts.train, n_max);
    }
    if (split == "valid") {
        if (parts.valid.empty()) {
            throw ConfigError("validation split is empty at this corpus size");
        }
        return pack_corpus(parts.valid, n_max);
    }
    throw ConfigError("unknown split '" + split + "' (train|valid|all)");
}

// ============================================================================
// Commands
// ============================================================================

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              std::string corpus_path, const std::string& out_dir,
              const std::string& resume) {
    KvConfig kv;
    if (!config_path.empty()) {
        kv = KvConfig::load(config_path);
    }
    for (const auto& o : overrides) {
        kv.apply_override(o);
    }
    const ModelConfig mc = model_from_kv(kv);
    const TrainConfig tc = train_from_kv(kv);
    if (corpus_path.empty()) {
        corpus_path = kv.str("corpus", "");
    }
    if (corpus_path.empty()) {
        throw ConfigError("train: no corpus given (flag --corpus or key 'corpus')");
    }
    auto docs = load_corpus(corpus_path);
    auto ds = pack_corpus(docs, mc.max_seq_len);

    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "checkpoints", ec);
    fs::create_directories(fs::path(out_dir) / "samples", ec);
    fs::create_directories(fs::path(out_dir) / "reports", ec);
    if (!fs::exists(out_dir)) {
        throw IoError("cannot create run directory '" + out_dir + "'");
    }
    echo_resolved_config(kv, mc, tc, out_dir);

    auto result = train<float>(mc, tc, ds, out_dir, resume);
    std::cout << "trained to step " << result.final_step << "; final checkpoint "
              << result.final_checkpoint << "\n";
    if (!result.records.empty()) {
        std::cout << format_step_record(result.records.back()) << "\n";
    }
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& corpus_path, const std::string& split,
             double valid_fraction, int n_mc, int64_t t_fast_eval, double eta_fast,
             uint64_t seed, int threads, int64_t n_max) {
    auto params = load_checkpoint<float>(ckpt);
    const int64_t row_len = n_max > 0 ? n_max : params.config.max_seq_len;
    auto ds = pack_split(corpus_path, split, valid_fraction, row_len);
    if (ds.rows() == 0) {
        throw ConfigError("eval: corpus too small for one row of length " +
                          std::to_string(row_len));
    }
    EvalOptions opts;
    opts.t_fast = t_fast_eval;
    opts.eta_fast = eta_fast;
    opts.n_mc = n_mc;
    opts.seed = seed;
    opts.threads = threads;
    auto res = evaluate_ppl_bound(params, rows_of(ds), opts);
    std::cout.precision(10);
    std::cout << "split=" << split << " rows=" << ds.rows() << " tokens="
              << res.n_predicted_tokens << " elbo_total=" << res.total_elbo
              << " recon_total=" << res.total_recon << " kl_total=" << res.total_kl
              << " elbo_per_token=" << res.total_elbo / static_cast<double>(res.n_predicted_tokens)
              << " ppl_bound=" << res.ppl_bound << "\n";
    return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& corpus_path, const std::string& out,
              int64_t t_fast, double eta_fast, uint64_t seed, int threads, int64_t n_max) {
    auto params = load_checkpoint<float>(ckpt);
    const int64_t row_len = n_max > 0 ? n_max : params.config.max_seq_len;
    auto docs = load_corpus(corpus_path);
    auto ds = pack_corpus(docs, row_len);
    if (ds.rows() == 0) {
        throw ConfigError("infer: corpus too small for one row");
    }
    auto rows = rows_of(ds);
    std::vector<VariationalStateT<float>> states(rows.size());
    TrainConfig tc;
    tc.total_steps = 1;
    tc.warmup_steps = 0;
    const int n_threads = threads > 0 ? threads : default_thread_count();
    parallel_for(static_cast<int64_t>(rows.size()), n_threads, [&](int64_t i) {
        Rng rng = Rng::stream({seed, static_cast<uint64_t>(i), 0x696e666572ULL});
        auto frozen = params.shared_replica(false);
        states[static_cast<size_t>(i)] =
            fast_infer(rows[static_cast<size_t>(i)], frozen, tc, t_fast, eta_fast, rng).state;
    });
    Container c;
    header_from_config(c, params.config);
    c.set("kind", "states");
    add_states_to_container(c, states);
    write_container(out, c);
    std::cout << "inferred states for " << rows.size() << " rows -> " << out << "\n";
    return 0;
}

int cmd_generate(const std::string& ckpt, bool uncond, int64_t len,
                 const std::string& prompt_file, int64_t n_new, const std::string& strategy_name,
                 double temperature, int64_t top_k, double nucleus_p, uint64_t seed,
                 const std::string& out_ids, bool report_entropy, const std::string& infer_kind,
                 int64_t t_fast, double eta_fast, bool use_mean, bool reinfer,
                 const std::string& eos_glyph) {
    auto params = load_checkpoint<float>(ckpt);
    DecodeStrategy strategy = DecodeStrategy::parse(strategy_name);
    strategy.temperature = temperature;
    strategy.k = top_k;
    strategy.p = nucleus_p;
    strategy.validate();
    Rng rng = Rng::stream({seed, 0x67656eULL});

    std::vector<int32_t> output;
    std::vector<int32_t> generated_only;
    ByteTokenizer tok(eos_glyph);
    if (uncond) {
        output = generate_unconditional(params, len, strategy, rng);
        generated_only = output;
    } else {
        if (prompt_file.empty()) {
            throw ConfigError("generate: need --uncond or --prompt-file");
        }
        std::ifstream is(prompt_file, std::ios::binary);
        if (!is) {
            throw IoError("cannot read prompt file '" + prompt_file + "'");
        }
        std::ostringstream ss;
        ss << is.rdbuf();
        auto prompt = tok.tokenize(ss.str());
        if (prompt.empty()) {
            throw ConfigError("generate: prompt file is empty");
        }
        InferSpec spec;
        spec.kind = infer_kind == "langevin" ? InferSpec::Kind::langevin : InferSpec::Kind::vb;
        spec.t_fast = t_fast;
        spec.eta = eta_fast;
        spec.use_mean = use_mean;
        output = generate_conditional(prompt, n_new, params, spec, strategy, rng, reinfer);
        generated_only.assign(output.begin() + static_cast<int64_t>(prompt.size()),
                              output.end());
    }

    std::cout << tok.detokenize(output) << "\n";
    if (report_entropy && !generated_only.empty()) {
        std::cout << "unigram_entropy=" << unigram_entropy(generated_only) << "\n";
    }
    if (!out_ids.empty()) {
        std::ofstream os(out_ids);
        if (!os) {
            throw IoError("cannot write token ids to '" + out_ids + "'");
        }
        for (int32_t t : output) {
            os << t << "\n";
        }
    }
    return 0;
}

int cmd_probe(const std::string& ckpt, const std::string& probe_set, const std::string& out_dir,
              int64_t t_fast, double eta_fast, uint64_t seed, int threads, int64_t n_max) {
    auto params = load_checkpoint<float>(ckpt);
    const int64_t row_len = n_max > 0 ? n_max : params.config.max_seq_len;
    auto docs = load_corpus(probe_set);
    auto ds = pack_corpus(docs, row_len);
    if (ds.rows() == 0) {
        throw ConfigError("probe: probe set too small for one row");
    }
    auto rows = rows_of(ds);
    std::vector<VariationalStateT<float>> states(rows.size());
    TrainConfig tc;
    tc.total_steps = 1;
    tc.warmup_steps = 0;
    const int n_threads = threads > 0 ? threads : default_thread_count();
    parallel_for(static_cast<int64_t>(rows.size()), n_threads, [&](int64_t i) {
        Rng rng = Rng::stream({seed, static_cast<uint64_t>(i), 0x70726f6265ULL});
        auto frozen = params.shared_replica(false);
        states[static_cast<size_t>(i)] =
            fast_infer(rows[static_cast<size_t>(i)], frozen, tc, t_fast, eta_fast, rng).state;
    });
    auto report = probe_report(rows, states, params, threads);

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::ofstream table(fs::path(out_dir) / "probe_table.txt");
    table << format_probe_table(report);
    std::ofstream records(fs::path(out_dir) / "probe_records.txt");
    records << format_probe_records(report);
    if (!table || !records) {
        throw IoError("cannot write probe reports under '" + out_dir + "'");
    }
    std::cout << format_probe_table(report);
    return 0;
}

int cmd_flops(const std::string& config_path, const std::vector<std::string>& overrides,
              int64_t n, int64_t t_fast, const std::string& sweep_layers, bool oracle,
              bool csv) {
    KvConfig kv;
    if (!config_path.empty()) {
        kv = KvConfig::load(config_path);
    }
    for (const auto& o : overrides) {
        kv.apply_override(o);
    }
    const ModelConfig mc = model_from_kv(kv);
    const int64_t n_eff = n > 0 ? std::min(n, mc.max_seq_len) : mc.max_seq_len;

    std::vector<std::pair<std::string, ModelConfig>> configs;
    if (!sweep_layers.empty()) {
        std::istringstream ss(sweep_layers);
        std::string item;
        while (std::getline(ss, item, ',')) {
            ModelConfig c = mc;
            c.n_layers = std::stoll(item);
            configs.emplace_back("L" + item, c);
        }
    } else {
        configs.emplace_back("model", mc);
    }
    auto rows = breakdown_sweep(configs, n_eff, t_fast);
    std::cout << (csv ? format_sweep_csv(rows) : format_sweep_table(rows));
    if (!csv) {
        std::cout << format_sweep_records(rows);
    }

    if (oracle) {
        bool all_match = true;
        for (const auto& [label, cfg] : configs) {
            const auto analytic = forward_flops(cfg, n_eff);
            const auto counted = mac_oracle(cfg, n_eff);
            const bool match = analytic.self_attn_macs == counted[MacScopeId::SelfAttn] &&
                               analytic.cross_attn_macs == counted[MacScopeId::CrossAttn] &&
                               analytic.ffn_macs == counted[MacScopeId::Ffn] &&
                               analytic.embed_macs == counted[MacScopeId::Embed];
            all_match = all_match && match;
            std::cout << "oracle " << label << ": " << (match ? "exact match" : "MISMATCH")
                      << " (analytic " << analytic.total_macs() << " MACs, counted "
                      << counted.total() << ")\n";
        }
        if (!all_match) {
            throw NumericError("flops oracle mismatch");
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latent-thought language model toolkit"};
    app.require_subcommand(1);

    // train
    auto* train_cmd = app.add_subcommand("train", "run the dual-rate training loop");
    std::string config_path, corpus_path, out_dir = "run", resume;
    std::vector<std::string> overrides;
    train_cmd->add_option("--config", config_path, "key = value configuration file");
    train_cmd->add_option("--set", overrides, "override key=value (repeatable)");
    train_cmd->add_option("--corpus", corpus_path, "corpus directory or file");
    train_cmd->add_option("--out", out_dir, "run directory");
    train_cmd->add_option("--resume", resume, "training checkpoint to resume from");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "perplexity upper bound on a corpus split");
    std::string e_ckpt, e_corpus, e_split = "valid";
    double e_vf = 0.1, e_eta = 0.3;
    int e_nmc = 8, e_threads = 0;
    int64_t e_tfast = 16, e_nmax = 0;
    uint64_t e_seed = 0;
    eval_cmd->add_option("--checkpoint", e_ckpt)->required();
    eval_cmd->add_option("--corpus", e_corpus)->required();
    eval_cmd->add_option("--split", e_split, "train|valid|all");
    eval_cmd->add_option("--valid-fraction", e_vf);
    eval_cmd->add_option("--n-mc", e_nmc);
    eval_cmd->add_option("--t-fast-eval", e_tfast);
    eval_cmd->add_option("--eta-fast", e_eta);
    eval_cmd->add_option("--seed", e_seed);
    eval_cmd->add_option("--threads", e_threads);
    eval_cmd->add_option("--n-max", e_nmax, "row length (default: model max_seq_len)");

    // infer
    auto* infer_cmd = app.add_subcommand("infer", "infer latent states for a corpus");
    std::string i_ckpt, i_corpus, i_out = "states.ltmc";
    int64_t i_tfast = 16, i_nmax = 0;
    double i_eta = 0.3;
    uint64_t i_seed = 0;
    int i_threads = 0;
    infer_cmd->add_option("--checkpoint", i_ckpt)->required();
    infer_cmd->add_option("--corpus", i_corpus)->required();
    infer_cmd->add_option("--out", i_out);
    infer_cmd->add_option("--t-fast", i_tfast);
    infer_cmd->add_option("--eta-fast", i_eta);
    infer_cmd->add_option("--seed", i_seed);
    infer_cmd->add_option("--threads", i_threads);
    infer_cmd->add_option("--n-max", i_nmax);

    // generate
    auto* gen_cmd = app.add_subcommand("generate", "sample text from a checkpoint");
    std::string g_ckpt, g_prompt_file, g_strategy = "greedy", g_out_ids, g_infer = "vb";
    std::string g_eos = "\n";
    bool g_uncond = false, g_entropy = false, g_use_mean = false, g_reinfer = false;
    int64_t g_len = 64, g_nnew = 64, g_topk = 1, g_tfast = 16;
    double g_temp = 1.0, g_p = 0.95, g_eta = 0.3;
    uint64_t g_seed = 0;
    gen_cmd->add_option("--checkpoint", g_ckpt)->required();
    gen_cmd->add_flag("--uncond", g_uncond, "unconditional generation from BOS");
    gen_cmd->add_option("--len", g_len, "tokens to generate unconditionally");
    gen_cmd->add_option("--prompt-file", g_prompt_file);
    gen_cmd->add_option("--n-new", g_nnew, "completion length");
    gen_cmd->add_option("--strategy", g_strategy, "greedy|multinomial|top_k|nucleus");
    gen_cmd->add_option("--temperature", g_temp);
    gen_cmd->add_option("--k", g_topk, "top_k support size");
    gen_cmd->add_option("--p", g_p, "nucleus mass");
    gen_cmd->add_option("--seed", g_seed);
    gen_cmd->add_option("--out-ids", g_out_ids, "write token ids, one per line");
    gen_cmd->add_flag("--report-entropy", g_entropy);
    gen_cmd->add_option("--infer", g_infer, "vb|langevin");
    gen_cmd->add_option("--t-fast", g_tfast);
    gen_cmd->add_option("--eta-fast", g_eta);
    gen_cmd->add_flag("--use-mean", g_use_mean, "z = posterior mean (deterministic)");
    gen_cmd->add_flag("--reinfer", g_reinfer, "re-infer z after every emitted token");
    gen_cmd->add_option("--eos-glyph", g_eos, "detokenizer rendering of EOS");

    // probe
    auto* probe_cmd = app.add_subcommand("probe", "progressive layer-inclusion probing");
    std::string p_ckpt, p_set, p_out = "probe_out";
    int64_t p_tfast = 16, p_nmax = 0;
    double p_eta = 0.3;
    uint64_t p_seed = 0;
    int p_threads = 0;
    probe_cmd->add_option("--checkpoint", p_ckpt)->required();
    probe_cmd->add_option("--probe-set", p_set)->required();
    probe_cmd->add_option("--out", p_out);
    probe_cmd->add_option("--t-fast", p_tfast);
    probe_cmd->add_option("--eta-fast", p_eta);
    probe_cmd->add_option("--seed", p_seed);
    probe_cmd->add_option("--threads", p_threads);
    probe_cmd->add_option("--n-max", p_nmax);

    // flops
    auto* flops_cmd = app.add_subcommand("flops", "analytic compute accounting");
    std::string f_config, f_sweep;
    std::vector<std::string> f_overrides;
    int64_t f_n = 0, f_tfast = 16;
    bool f_oracle = false, f_csv = false;
    flops_cmd->add_option("--config", f_config);
    flops_cmd->add_option("--set", f_overrides, "override key=value (repeatable)");
    flops_cmd->add_option("--n", f_n, "sequence length (default: max_seq_len)");
    flops_cmd->add_option("--t-fast", f_tfast);
    flops_cmd->add_option("--sweep", f_sweep, "comma-separated layer counts");
    flops_cmd->add_flag("--oracle", f_oracle, "compare against the runtime MAC counter");
    flops_cmd->add_flag("--csv", f_csv);

    try {
        app.parse(argc, argv);
        if (train_cmd->parsed()) {
            return cmd_train(config_path, overrides, corpus_path, out_dir, resume);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(e_ckpt, e_corpus, e_split, e_vf, e_nmc, e_tfast, e_eta, e_seed,
                            e_threads, e_nmax);
        }
        if (infer_cmd->parsed()) {
            return cmd_infer(i_ckpt, i_corpus, i_out, i_tfast, i_eta, i_seed, i_threads,
                             i_nmax);
        }
        if (gen_cmd->parsed()) {
            return cmd_generate(g_ckpt, g_uncond, g_len, g_prompt_file, g_nnew, g_strategy,
                                g_temp, g_topk, g_p, g_seed, g_out_ids, g_entropy, g_infer,
                                g_tfast, g_eta, g_use_mean, g_reinfer, g_eos);
        }
        if (probe_cmd->parsed()) {
            return cmd_probe(p_ckpt, p_set, p_out, p_tfast, p_eta, p_seed, p_threads, p_nmax);
        }
        if (flops_cmd->parsed()) {
            return cmd_flops(f_config, f_overrides, f_n, f_tfast, f_sweep, f_oracle, f_csv);
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
