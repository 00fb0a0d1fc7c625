// Imagination benchmark CLI: seeds (or loads) a world model, verifies that
// the batched generation modes reproduce the token-by-token reference, and
// reports call counts and wall-clock timings per mode.
//
// Exit codes: 0 success, 1 usage or runtime error, 2 equivalence failure.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rpop/bench.hpp"
#include "rpop/serialize.hpp"

namespace {

struct CliOptions {
    rpop::BenchConfig cfg;
    std::string out_path;
    std::string format = "csv";
    std::string mode = "all";
    std::string precision = "f64";
    std::string save_model;
    std::vector<int> sweep_k;
};

void add_common_options(CLI::App* cmd, CliOptions& opt) {
    cmd->add_flag_callback(
        "--preset-paper,--preset",
        [&opt] { opt.cfg = rpop::BenchConfig::paper_preset(); },
        "Use the reference configuration (K=64 N=512 d=256 ffn=1024 L=5 h=4 H=10 Bbar=3)");
    cmd->add_option("--K", opt.cfg.tokens_per_obs, "Observation tokens per block");
    cmd->add_option("--N", opt.cfg.vocab, "Tokenizer vocabulary size");
    cmd->add_option("--d-model", opt.cfg.d_model, "Embedding width");
    cmd->add_option("--d-ffn", opt.cfg.d_ffn, "Feed-forward width");
    cmd->add_option("--layers", opt.cfg.layers, "Layer count");
    cmd->add_option("--heads", opt.cfg.heads, "Retention heads");
    cmd->add_option("--horizon", opt.cfg.horizon, "Imagination steps H");
    cmd->add_option("--blocks-per-chunk", opt.cfg.blocks_per_chunk, "Blocks per chunk");
    cmd->add_option("--batch", opt.cfg.batch, "Parallel rollouts per repetition");
    cmd->add_option("--actions", opt.cfg.actions, "Action set size");
    cmd->add_option("--context", opt.cfg.context_blocks, "Context blocks summarized before imagination");
    cmd->add_option("--seed", opt.cfg.seed, "Model and rollout seed");
    cmd->add_option("--temperature", opt.cfg.temperature, "Sampling temperature for timed runs");
    cmd->add_option("--reps", opt.cfg.repetitions, "Timed repetitions per mode");
    cmd->add_option("--mode", opt.mode, "pop-default | pop-combined | no-pop-oracle | all");
    cmd->add_option("--precision", opt.precision, "f64 | f32");
    cmd->add_option("--model", opt.cfg.model_path, "Load an RPOPv1 bundle instead of seeding");
    cmd->add_option("--mem-cap-mb", opt.cfg.mem_cap_mb, "Reject configurations above this memory estimate");
}

int finalize_config(CliOptions& opt) {
    if (opt.precision == "f64") {
        opt.cfg.precision = rpop::Precision::f64;
    } else if (opt.precision == "f32") {
        opt.cfg.precision = rpop::Precision::f32;
    } else {
        std::cerr << "error: unknown precision '" << opt.precision << "'\n";
        return 1;
    }
    if (opt.mode == "all") {
        opt.cfg.modes = {rpop::GenMode::pop_default, rpop::GenMode::pop_combined, rpop::GenMode::no_pop_oracle};
    } else if (opt.mode == "pop-default") {
        opt.cfg.modes = {rpop::GenMode::pop_default, rpop::GenMode::no_pop_oracle};
    } else if (opt.mode == "pop-combined") {
        opt.cfg.modes = {rpop::GenMode::pop_combined, rpop::GenMode::no_pop_oracle};
    } else if (opt.mode == "no-pop-oracle") {
        opt.cfg.modes = {rpop::GenMode::no_pop_oracle};
    } else {
        std::cerr << "error: unknown mode '" << opt.mode << "'\n";
        return 1;
    }
    return 0;
}

int write_or_print(const rpop::BenchReport& report, const CliOptions& opt) {
    const auto fmt = opt.format == "text" ? rpop::ReportFormat::text : rpop::ReportFormat::csv;
    if (opt.format != "csv" && opt.format != "text") {
        std::cerr << "error: unknown format '" << opt.format << "'\n";
        return 1;
    }
    if (opt.out_path.empty()) {
        std::cout << rpop::render_report(report, fmt);
    } else {
        rpop::emit_report(report, opt.out_path, fmt);
        std::cout << "wrote " << report.rows.size() << " row(s) to " << opt.out_path << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rpop imagination benchmark"};
    app.require_subcommand(1);

    CliOptions opt;

    auto* run = app.add_subcommand("run", "Verify equivalence, then time the configured modes");
    add_common_options(run, opt);
    run->add_option("--out", opt.out_path, "Report path (stdout when omitted)");
    run->add_option("--format", opt.format, "csv | text");
    run->add_option("--save-model", opt.save_model, "Write the seeded model as an RPOPv1 bundle");
    run->add_flag("--train-forward", opt.cfg.time_train_forward, "Also time the chunked training forward");

    auto* verify = app.add_subcommand("verify", "Run only the generation-mode equivalence gate");
    add_common_options(verify, opt);

    auto* sweep = app.add_subcommand("sweep", "Repeat the benchmark across a list of K values");
    add_common_options(sweep, opt);
    sweep->add_option("--K-list", opt.sweep_k, "Comma-separated K values")->delimiter(',')->required();
    sweep->add_option("--out", opt.out_path, "Report path (stdout when omitted)");
    sweep->add_option("--format", opt.format, "csv | text");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (int rc = finalize_config(opt); rc != 0) return rc;

    try {
        if (!opt.save_model.empty()) {
            rpop::save_bundle(opt.save_model, rpop::random_world_model(opt.cfg.model_config(), opt.cfg.seed));
            std::cout << "saved model bundle to " << opt.save_model << "\n";
        }
        if (verify->parsed()) {
            rpop::verify_equivalence(opt.cfg);
            std::cout << "equivalence gate passed: greedy trajectories identical across modes\n";
            return 0;
        }
        if (run->parsed()) {
            return write_or_print(rpop::run_benchmark(opt.cfg), opt);
        }
        if (sweep->parsed()) {
            rpop::BenchReport merged;
            for (int k : opt.sweep_k) {
                rpop::BenchConfig cfg = opt.cfg;
                cfg.tokens_per_obs = k;
                auto rep = rpop::run_benchmark(cfg);
                merged.rows.insert(merged.rows.end(), rep.rows.begin(), rep.rows.end());
            }
            return write_or_print(merged, opt);
        }
    } catch (const rpop::EquivalenceError& e) {
        std::cerr << "equivalence failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
