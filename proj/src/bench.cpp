#include "rpop/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include <omp.h>

#include "rpop/rng.hpp"
#include "rpop/serialize.hpp"

namespace rpop {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

double fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return static_cast<double>(h);
}

std::string format_sig(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

struct Stats {
    double mean = 0.0, stddev = 0.0, median = 0.0;
};

Stats summarize(std::vector<double> samples) {
    Stats s;
    if (samples.empty()) return s;
    s.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / samples.size();
    double var = 0.0;
    for (double v : samples) var += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(var / samples.size());
    std::sort(samples.begin(), samples.end());
    const size_t n = samples.size();
    s.median = n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
    return s;
}

uint64_t hash_tokens(const std::vector<int>& v, uint64_t h) {
    for (int x : v) h = mix_seed(h, static_cast<uint64_t>(x) + 0x51ed270b);
    return h;
}

// Bytes for parameters plus the dominant per-call activations.
long long estimate_bytes(const ModelConfig& c, int batch) {
    const long long dm = c.d_model;
    long long per_layer = 3 * c.heads * dm * c.d_head() + 2 * dm * dm + 2 * dm * c.d_ffn + 6 * dm;
    long long params = c.layers * per_layer + static_cast<long long>(c.vocab) * c.d_embed + c.d_embed * dm +
                       static_cast<long long>(c.actions) * dm + static_cast<long long>(c.tokens_per_obs) * dm +
                       dm * (c.vocab + 5);
    const long long rows = static_cast<long long>(c.blocks_per_chunk) * (2 * c.tokens_per_obs + 1);
    long long act = rows * (dm + c.d_ffn) * 8 + rows * rows;
    return (params * 8 + act * std::max(1, batch)) * 2;
}

template <typename T>
ImaginationTrace greedy_rollout(const WorldModel<T>& model, const BenchConfig& cfg, GenMode mode) {
    auto context = make_context(model.cfg, mix_seed(cfg.seed, 0xc0));
    auto policy = make_policy(model.cfg.actions, mix_seed(cfg.seed, 0xb0));
    Sampler sampler{0.0, SplitMix64(mix_seed(cfg.seed, 0x5a))};
    return imagine_rollout(model, context, policy, cfg.horizon, mode, sampler);
}

template <typename T>
void check_gate(const WorldModel<T>& model, const BenchConfig& cfg) {
    auto base = greedy_rollout(model, cfg, GenMode::pop_default);
    if (base.sequential_calls != cfg.expected_calls(GenMode::pop_default))
        throw EquivalenceError("gate: pop-default made " + std::to_string(base.sequential_calls) +
                               " sequential calls, expected " +
                               std::to_string(cfg.expected_calls(GenMode::pop_default)));
    for (GenMode mode : {GenMode::pop_combined, GenMode::no_pop_oracle}) {
        auto other = greedy_rollout(model, cfg, mode);
        if (other.sequential_calls != cfg.expected_calls(mode))
            throw EquivalenceError("gate: " + mode_name(mode) + " made " + std::to_string(other.sequential_calls) +
                                   " sequential calls, expected " + std::to_string(cfg.expected_calls(mode)));
        for (int t = 0; t < cfg.horizon; ++t) {
            const auto& a = base.blocks[t];
            const auto& b = other.blocks[t];
            if (a.obs != b.obs || a.action != b.action || a.done != b.done || std::abs(a.reward - b.reward) > 1e-6)
                throw EquivalenceError("gate: greedy trajectories of pop-default and " + mode_name(mode) +
                                       " diverge at step " + std::to_string(t));
        }
    }
}

template <typename T>
double timed_imagination(const WorldModel<T>& model, const BenchConfig& cfg, GenMode mode, uint64_t rep_seed) {
    auto context = make_context(model.cfg, mix_seed(cfg.seed, 0xc0));
    auto policy = make_policy(model.cfg.actions, mix_seed(cfg.seed, 0xb0));
    const auto t0 = Clock::now();
#pragma omp parallel for schedule(static) if (cfg.batch > 1)
    for (int b = 0; b < cfg.batch; ++b) {
        Sampler sampler{cfg.temperature, SplitMix64(mix_seed(rep_seed, b))};
        auto trace = imagine_rollout(model, context, policy, cfg.horizon, mode, sampler);
        if (trace.sequential_calls != cfg.expected_calls(mode))
            throw EquivalenceError("benchmark: sequential call count drifted from the closed form");
    }
    return ms_since(t0);
}

template <typename T>
double timed_train_forward(const WorldModel<T>& model, const BenchConfig& cfg, uint64_t rep_seed) {
    TokenTrajectory segment = make_context(model.cfg, mix_seed(rep_seed, 0x7f));
    const auto t0 = Clock::now();
#pragma omp parallel for schedule(static) if (cfg.batch > 1)
    for (int b = 0; b < cfg.batch; ++b) {
        auto out = train_forward(model, segment);
        (void)out;
    }
    return ms_since(t0);
}

double mean_cost(const BenchConfig& cfg, GenMode mode) {
    const double k = cfg.tokens_per_obs;
    switch (mode) {
        case GenMode::pop_default:
            return (2.0 * k + 1.0) / 2.0;  // calls of cost K+1 and K per step
        case GenMode::pop_combined:
            return 2.0 * k + 1.0;
        case GenMode::no_pop_oracle:
            return 1.0;
    }
    return 0.0;
}

template <typename T>
BenchReport run_impl(const WorldModel<T>& model, const BenchConfig& cfg) {
    check_gate(model, cfg);

    BenchReport report;
    const std::string hash = config_hash(cfg);
    const double generated_tokens = static_cast<double>(cfg.tokens_per_obs) * cfg.horizon * cfg.batch;

    std::vector<std::pair<GenMode, Stats>> timed;
    for (GenMode mode : cfg.modes) {
        timed_imagination(model, cfg, mode, mix_seed(cfg.seed, 0xdead));  // warm-up
        std::vector<double> samples;
        for (int r = 0; r < cfg.repetitions; ++r)
            samples.push_back(timed_imagination(model, cfg, mode, mix_seed(cfg.seed, 0x100 + r)));
        timed.emplace_back(mode, summarize(samples));
    }

    double oracle_median = 0.0;
    for (const auto& [mode, stats] : timed)
        if (mode == GenMode::no_pop_oracle) oracle_median = stats.median;

    for (const auto& [mode, stats] : timed) {
        BenchRow row;
        row.config_hash = hash;
        row.mode = mode_name(mode);
        row.calls = cfg.expected_calls(mode);
        row.tokens_per_call = mean_cost(cfg, mode);
        row.wall_ms_mean = stats.mean;
        row.wall_ms_std = stats.stddev;
        row.wall_ms_median = stats.median;
        row.tok_per_s = stats.median > 0.0 ? generated_tokens / (stats.median / 1000.0) : 0.0;
        row.speedup = oracle_median > 0.0 && stats.median > 0.0 ? oracle_median / stats.median : 0.0;
        report.rows.push_back(row);
    }

    if (cfg.time_train_forward) {
        timed_train_forward(model, cfg, mix_seed(cfg.seed, 0xfeed));
        std::vector<double> samples;
        for (int r = 0; r < cfg.repetitions; ++r)
            samples.push_back(timed_train_forward(model, cfg, mix_seed(cfg.seed, 0x200 + r)));
        auto stats = summarize(samples);
        BenchRow row;
        row.config_hash = hash;
        row.mode = "train-forward";
        row.calls = (cfg.horizon + cfg.blocks_per_chunk - 1) / cfg.blocks_per_chunk;
        row.tokens_per_call = static_cast<double>(cfg.horizon) * (2 * cfg.tokens_per_obs + 1) / row.calls;
        row.wall_ms_mean = stats.mean;
        row.wall_ms_std = stats.stddev;
        row.wall_ms_median = stats.median;
        row.tok_per_s = stats.median > 0.0 ? generated_tokens / (stats.median / 1000.0) : 0.0;
        row.speedup = 0.0;
        report.rows.push_back(row);
    }
    return report;
}

}  // namespace

ModelConfig BenchConfig::model_config() const {
    ModelConfig c;
    c.layers = layers;
    c.heads = heads;
    c.d_model = d_model;
    c.d_ffn = d_ffn;
    c.tokens_per_obs = tokens_per_obs;
    c.vocab = vocab;
    c.actions = actions;
    c.d_embed = d_model;
    c.blocks_per_chunk = blocks_per_chunk;
    c.context_blocks = context_blocks;
    c.validate();
    return c;
}

long long BenchConfig::expected_calls(GenMode mode) const {
    switch (mode) {
        case GenMode::pop_default:
            return 2LL * horizon;
        case GenMode::pop_combined:
            return horizon;
        case GenMode::no_pop_oracle:
            return static_cast<long long>(tokens_per_obs) * horizon;
    }
    return 0;
}

std::string mode_name(GenMode mode) {
    switch (mode) {
        case GenMode::pop_default:
            return "pop-default";
        case GenMode::pop_combined:
            return "pop-combined";
        case GenMode::no_pop_oracle:
            return "no-pop-oracle";
    }
    return "?";
}

std::string config_hash(const BenchConfig& cfg) {
    std::ostringstream os;
    os << cfg.tokens_per_obs << ',' << cfg.vocab << ',' << cfg.d_model << ',' << cfg.d_ffn << ',' << cfg.layers << ','
       << cfg.heads << ',' << cfg.horizon << ',' << cfg.blocks_per_chunk << ',' << cfg.batch << ',' << cfg.actions
       << ',' << cfg.context_blocks << ',' << cfg.seed << ',' << (cfg.precision == Precision::f64 ? "f64" : "f32");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(os.str())));
    return buf;
}

TokenTrajectory make_context(const ModelConfig& cfg, uint64_t seed) {
    SplitMix64 rng(seed);
    TokenTrajectory traj;
    for (int b = 0; b < cfg.context_blocks; ++b) {
        Block blk;
        blk.obs.resize(cfg.tokens_per_obs);
        for (auto& z : blk.obs) z = static_cast<int>(rng.next_below(cfg.vocab));
        blk.action = static_cast<int>(rng.next_below(cfg.actions));
        blk.reward = 0.0;
        blk.done = 0;
        traj.push_back(std::move(blk));
    }
    return traj;
}

Policy make_policy(int actions, uint64_t seed) {
    return [actions, seed](const std::vector<int>& obs, const std::vector<int>& hist) {
        uint64_t h = mix_seed(seed, hist.size());
        if (!hist.empty()) h = mix_seed(h, static_cast<uint64_t>(hist.back()) + 1);
        h = hash_tokens(obs, h);
        std::vector<double> logits(actions);
        SplitMix64 rng(h);
        for (auto& v : logits) v = 2.0 * rng.next_unit() - 1.0;
        double mx = logits[0];
        for (double v : logits) mx = std::max(mx, v);
        double z = 0.0;
        std::vector<double> dist(actions);
        for (int a = 0; a < actions; ++a) {
            dist[a] = std::exp(logits[a] - mx);
            z += dist[a];
        }
        for (auto& p : dist) p /= z;
        return dist;
    };
}

void apply_thread_env() {
    if (const char* env = std::getenv("RPOP_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) omp_set_num_threads(n);
    }
    omp_set_dynamic(0);
}

void verify_equivalence(const BenchConfig& cfg) {
    apply_thread_env();
    const ModelConfig mc = cfg.model_config();
    WorldModel<double> model =
        cfg.model_path.empty() ? random_world_model(mc, mix_seed(cfg.seed, 0xa11)) : load_bundle(cfg.model_path);
    if (cfg.precision == Precision::f32) {
        check_gate(model.cast<float>(), cfg);
    } else {
        check_gate(model, cfg);
    }
}

BenchReport run_benchmark(const BenchConfig& cfg) {
    apply_thread_env();
    if (cfg.repetitions < 1) throw std::invalid_argument("run_benchmark: repetitions must be >= 1");
    if (cfg.batch < 1) throw std::invalid_argument("run_benchmark: batch must be >= 1");
    if (cfg.modes.empty() && !cfg.time_train_forward)
        throw std::invalid_argument("run_benchmark: nothing to measure");
    const ModelConfig mc = cfg.model_config();
    const long long est = estimate_bytes(mc, cfg.batch);
    if (est > static_cast<long long>(cfg.mem_cap_mb) * (1 << 20))
        throw std::invalid_argument("run_benchmark: configuration needs ~" + std::to_string(est >> 20) +
                                    " MiB, above the " + std::to_string(cfg.mem_cap_mb) + " MiB cap");

    WorldModel<double> model =
        cfg.model_path.empty() ? random_world_model(mc, mix_seed(cfg.seed, 0xa11)) : load_bundle(cfg.model_path);
    if (cfg.precision == Precision::f32) return run_impl(model.cast<float>(), cfg);
    return run_impl(model, cfg);
}

std::string render_report(const BenchReport& report, ReportFormat format) {
    if (report.rows.empty()) throw std::invalid_argument("render_report: empty report");
    std::ostringstream os;
    if (format == ReportFormat::csv) {
        os << "config,mode,calls,tokens_per_call,wall_ms_mean,wall_ms_std,tok_per_s,speedup\n";
        for (const auto& r : report.rows)
            os << r.config_hash << ',' << r.mode << ',' << r.calls << ',' << format_sig(r.tokens_per_call) << ','
               << format_sig(r.wall_ms_mean) << ',' << format_sig(r.wall_ms_std) << ',' << format_sig(r.tok_per_s)
               << ',' << format_sig(r.speedup) << "\n";
        return os.str();
    }
    os << "config            mode           calls  tok/call    mean ms     std ms  median ms      tok/s  speedup\n";
    for (const auto& r : report.rows) {
        char line[256];
        std::snprintf(line, sizeof line, "%-16s  %-13s %6lld  %8.6g %10.6g %10.6g %10.6g %10.6g %8.6g\n",
                      r.config_hash.c_str(), r.mode.c_str(), r.calls, r.tokens_per_call, r.wall_ms_mean, r.wall_ms_std,
                      r.wall_ms_median, r.tok_per_s, r.speedup);
        os << line;
    }
    return os.str();
}

void emit_report(const BenchReport& report, const std::string& path, ReportFormat format) {
    const std::string text = render_report(report, format);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("emit_report: cannot open " + path);
    out << text;
    if (!out) throw std::runtime_error("emit_report: write failed for " + path);
}

BenchReport parse_report_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "config,mode,calls,tokens_per_call,wall_ms_mean,wall_ms_std,tok_per_s,speedup")
        throw std::runtime_error("parse_report_csv: bad header");
    BenchReport report;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        BenchRow r;
        std::string field;
        std::getline(ls, r.config_hash, ',');
        std::getline(ls, r.mode, ',');
        std::getline(ls, field, ',');
        r.calls = std::stoll(field);
        std::getline(ls, field, ',');
        r.tokens_per_call = std::stod(field);
        std::getline(ls, field, ',');
        r.wall_ms_mean = std::stod(field);
        std::getline(ls, field, ',');
        r.wall_ms_std = std::stod(field);
        std::getline(ls, field, ',');
        r.tok_per_s = std::stod(field);
        std::getline(ls, field, ',');
        r.speedup = std::stod(field);
        report.rows.push_back(std::move(r));
    }
    return report;
}

}  // namespace rpop
