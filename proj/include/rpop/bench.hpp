#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "rpop/world_model.hpp"

namespace rpop {

enum class Precision { f64, f32 };

struct BenchConfig {
    int tokens_per_obs = 64;  // K
    int vocab = 512;          // N
    int d_model = 256;
    int d_ffn = 1024;
    int layers = 5;
    int heads = 4;
    int horizon = 10;
    int blocks_per_chunk = 3;
    int batch = 1;  // parallel rollouts per repetition
    int actions = 6;
    int context_blocks = 2;
    int repetitions = 5;
    uint64_t seed = 0;
    double temperature = 0.5;  // eval sampling temperature
    Precision precision = Precision::f64;
    std::vector<GenMode> modes{GenMode::pop_default, GenMode::pop_combined, GenMode::no_pop_oracle};
    bool time_train_forward = false;
    int mem_cap_mb = 2048;
    std::string model_path;  // load instead of seeding when non-empty

    // The hyperparameters the reference configuration fixes: K=64, N=512,
    // d_model=256, d_ffn=1024, L=5, h=4, H=10, 3 blocks per chunk.
    static BenchConfig paper_preset() { return BenchConfig{}; }

    ModelConfig model_config() const;
    long long expected_calls(GenMode mode) const;
};

struct BenchRow {
    std::string config_hash;
    std::string mode;
    long long calls = 0;
    double tokens_per_call = 0.0;
    double wall_ms_mean = 0.0;
    double wall_ms_std = 0.0;
    double wall_ms_median = 0.0;
    double tok_per_s = 0.0;
    double speedup = 0.0;  // oracle median / mode median; 0 when the oracle was not timed
};

struct BenchReport {
    std::vector<BenchRow> rows;
};

// Greedy-decoded trajectories of two generation modes disagreed; correctness
// precedes speed, so the harness aborts instead of timing.
struct EquivalenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string mode_name(GenMode mode);
std::string config_hash(const BenchConfig& cfg);

// Deterministic synthetic inputs shared by the gate and the timed runs.
TokenTrajectory make_context(const ModelConfig& cfg, uint64_t seed);
Policy make_policy(int actions, uint64_t seed);

// Greedy equivalence gate: token-identical trajectories across the configured
// modes for the run's seed. Throws EquivalenceError on mismatch.
void verify_equivalence(const BenchConfig& cfg);

// Gate, then warm-up and timed repetitions per mode. Throws EquivalenceError
// if the gate fails and std::invalid_argument on bad configurations.
BenchReport run_benchmark(const BenchConfig& cfg);

enum class ReportFormat { csv, text };

void emit_report(const BenchReport& report, const std::string& path, ReportFormat format);
std::string render_report(const BenchReport& report, ReportFormat format);
BenchReport parse_report_csv(const std::string& text);

// Honors the RPOP_THREADS environment variable (caps the OpenMP team size).
void apply_thread_env();

}  // namespace rpop
