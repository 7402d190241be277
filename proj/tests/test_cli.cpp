#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ltm/variational.hpp"
#include "support/synthetic_corpus.hpp"

using namespace ltm;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code;
    std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args) {
    const fs::path out = fs::temp_directory_path() / "ltm_cli_out.txt";
    const std::string cmd =
        std::string(LTM_CLI_PATH) + " " + args + " > " + out.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream is(out);
    std::ostringstream ss;
    ss << is.rdbuf();
    return {WEXITSTATUS(status), ss.str()};
}

fs::path work_dir() {
    const fs::path p = fs::temp_directory_path() / "ltm_cli_work";
    fs::create_directories(p);
    return p;
}

fs::path make_corpus() {
    const fs::path dir = work_dir() / "corpus";
    if (!fs::exists(dir / "doc00.txt")) {
        fs::create_directories(dir);
        auto docs = testsupport::synthetic_corpus(6, 400, 31);
        for (size_t i = 0; i < docs.size(); ++i) {
            std::ofstream(dir / ("doc0" + std::to_string(i) + ".txt")) << docs[i];
        }
    }
    return dir;
}

fs::path make_config() {
    const fs::path cfg = work_dir() / "tiny.cfg";
    std::ofstream os(cfg);
    os << "# tiny run\n"
       << "n_layers = 2\n"
       << "hidden = 32\n"
       << "n_heads = 4\n"
       << "n_latents_per_layer = 2\n"
       << "window_k = 8\n"
       << "max_seq_len = 64\n"
       << "t_fast = 2\n"
       << "total_steps = 3\n"
       << "warmup_steps = 1\n"
       << "batch_size = 2\n"
       << "threads = 2\n";
    return cfg;
}

}  // namespace

TEST_CASE("missing corpus fails with the path in the message") {
    auto r = run_cli("train --config " + make_config().string() +
                     " --corpus /no/such/ltm/corpus --out " +
                     (work_dir() / "runx").string());
    CHECK(r.exit_code == 3);
    CHECK(r.output.find("/no/such/ltm/corpus") != std::string::npos);
}

TEST_CASE("unknown config key is a hard error") {
    const fs::path cfg = work_dir() / "bad.cfg";
    std::ofstream(cfg) << "n_layzers = 2\n";
    auto r = run_cli("train --config " + cfg.string() + " --corpus " +
                     make_corpus().string() + " --out " + (work_dir() / "runy").string());
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("n_layzers") != std::string::npos);

    auto r2 = run_cli("train --config " + make_config().string() + " --set no_such=1 --corpus " +
                      make_corpus().string() + " --out " + (work_dir() / "runy").string());
    CHECK(r2.exit_code == 2);
}

TEST_CASE("train with total_steps 0 emits the initial checkpoint and exits 0") {
    const fs::path out = work_dir() / "run0";
    fs::remove_all(out);
    auto r = run_cli("train --config " + make_config().string() +
                     " --set total_steps=0 --set warmup_steps=0 --corpus " +
                     make_corpus().string() + " --out " + out.string());
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(out / "checkpoints" / "step_0.ltmc"));
    CHECK(fs::exists(out / "config.resolved"));
}

TEST_CASE("short training run leaves metrics and resolved config") {
    const fs::path out = work_dir() / "run3";
    fs::remove_all(out);
    auto r = run_cli("train --config " + make_config().string() + " --corpus " +
                     make_corpus().string() + " --out " + out.string());
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(out / "metrics.log"));
    CHECK(fs::exists(out / "checkpoints" / "step_3.ltmc"));
    // resolved config echoes the overriding values
    std::ifstream is(out / "config.resolved");
    std::ostringstream ss;
    ss << is.rdbuf();
    CHECK(ss.str().find("total_steps = 3") != std::string::npos);
}

TEST_CASE("generate is reproducible from seed and flags") {
    const fs::path ckpt = work_dir() / "run3" / "checkpoints" / "step_3.ltmc";
    REQUIRE(fs::exists(ckpt));
    const std::string cmd = "generate --checkpoint " + ckpt.string() +
                            " --uncond --len 24 --strategy nucleus --p 0.9 --seed 42";
    auto a = run_cli(cmd);
    auto b = run_cli(cmd);
    CHECK(a.exit_code == 0);
    CHECK(a.output == b.output);
    auto c = run_cli("generate --checkpoint " + ckpt.string() +
                     " --uncond --len 24 --strategy nucleus --p 0.9 --seed 43");
    CHECK(c.output != a.output);
}

TEST_CASE("generate --uncond --len 1 emits exactly one token id") {
    const fs::path ckpt = work_dir() / "run3" / "checkpoints" / "step_3.ltmc";
    const fs::path ids = work_dir() / "ids.txt";
    auto r = run_cli("generate --checkpoint " + ckpt.string() +
                     " --uncond --len 1 --seed 1 --out-ids " + ids.string());
    CHECK(r.exit_code == 0);
    std::ifstream is(ids);
    int count = 0;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty()) {
            ++count;
        }
    }
    CHECK(count == 1);
}

TEST_CASE("eval on a uniform-output checkpoint reports ppl equal to vocab") {
    // zero the unembedding so every predictive distribution is uniform
    ModelConfig mc;
    mc.n_layers = 2;
    mc.hidden = 32;
    mc.n_heads = 4;
    mc.n_latents_per_layer = 2;
    mc.window_k = 8;
    mc.max_seq_len = 64;
    auto params = init_params<float>(mc, 5);
    auto buf = params.unembedding.data_mut();
    std::fill(buf.begin(), buf.end(), 0.0f);
    const fs::path ckpt = work_dir() / "uniform.ltmc";
    save_checkpoint(ckpt.string(), params, 0);

    auto r = run_cli("eval --checkpoint " + ckpt.string() + " --corpus " +
                     make_corpus().string() +
                     " --split all --t-fast-eval 0 --n-mc 1 --threads 2");
    CHECK(r.exit_code == 0);
    const auto pos = r.output.find("ppl_bound=");
    REQUIRE(pos != std::string::npos);
    const double ppl = std::stod(r.output.substr(pos + 10));
    CHECK(ppl == doctest::Approx(258.0).epsilon(1e-6));
}

TEST_CASE("eval is deterministic for a fixed seed") {
    const fs::path ckpt = work_dir() / "run3" / "checkpoints" / "step_3.ltmc";
    const std::string cmd = "eval --checkpoint " + ckpt.string() + " --corpus " +
                            make_corpus().string() +
                            " --split all --t-fast-eval 2 --n-mc 2 --seed 9 --threads 2";
    auto a = run_cli(cmd);
    auto b = run_cli(cmd);
    CHECK(a.exit_code == 0);
    CHECK(a.output == b.output);
}

TEST_CASE("probe writes its report files") {
    const fs::path ckpt = work_dir() / "run3" / "checkpoints" / "step_3.ltmc";
    const fs::path out = work_dir() / "probe";
    fs::remove_all(out);
    auto r = run_cli("probe --checkpoint " + ckpt.string() + " --probe-set " +
                     make_corpus().string() + " --out " + out.string() +
                     " --t-fast 2 --threads 2");
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(out / "probe_table.txt"));
    CHECK(fs::exists(out / "probe_records.txt"));
    // m sweep covers 0..L inclusive (L = 2)
    std::ifstream is(out / "probe_records.txt");
    std::ostringstream ss;
    ss << is.rdbuf();
    CHECK(ss.str().find("m=0 ") != std::string::npos);
    CHECK(ss.str().find("m=2 ") != std::string::npos);
}

TEST_CASE("infer writes a loadable state container") {
    const fs::path ckpt = work_dir() / "run3" / "checkpoints" / "step_3.ltmc";
    const fs::path out = work_dir() / "states.ltmc";
    auto r = run_cli("infer --checkpoint " + ckpt.string() + " --corpus " +
                     make_corpus().string() + " --out " + out.string() +
                     " --t-fast 2 --threads 2");
    CHECK(r.exit_code == 0);
    auto c = read_container(out.string());
    const auto cfg = config_from_header(c);
    auto states = states_from_container<float>(c, cfg);
    CHECK(states.size() > 0);
}

TEST_CASE("flops oracle agrees through the CLI") {
    auto r = run_cli("flops --set n_layers=2 --set hidden=32 --set n_heads=4"
                     " --set window_k=8 --set max_seq_len=64 --n 48 --t-fast 4 --oracle");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("exact match") != std::string::npos);

    auto sweep = run_cli("flops --set hidden=64 --set window_k=16 --set max_seq_len=128"
                         " --sweep 3,6,12 --csv");
    CHECK(sweep.exit_code == 0);
    CHECK(sweep.output.find("L3") != std::string::npos);
    CHECK(sweep.output.find("L12") != std::string::npos);
}
