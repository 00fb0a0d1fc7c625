#include "rpop/trajectory.hpp"

#include <atomic>
#include <charconv>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "rpop/rng.hpp"

namespace rpop {

namespace {

constexpr const char* kFormat = "rpop.traj";
constexpr int kVersion = 1;

std::string reward_to_string(double r) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), r);
    return std::string(buf, res.ptr);
}

double reward_from_string(const std::string& s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw std::runtime_error("trajectory load: bad reward literal '" + s + "'");
    return v;
}

}  // namespace

void TrajectoryStore::validate_episode(const EpisodeRecord& e, int expected_k) {
    if (e.blocks.empty()) throw std::invalid_argument("append_episode: empty episode");
    const int k = static_cast<int>(e.blocks.front().obs.size());
    if (expected_k >= 0 && k != expected_k)
        throw std::invalid_argument("append_episode: episode K=" + std::to_string(k) +
                                    " differs from store K=" + std::to_string(expected_k));
    for (size_t i = 0; i < e.blocks.size(); ++i) {
        const auto& b = e.blocks[i];
        if (static_cast<int>(b.obs.size()) != k)
            throw std::invalid_argument("append_episode: block " + std::to_string(i) + " has inconsistent K");
        for (int tok : b.obs)
            if (tok < 0) throw std::invalid_argument("append_episode: negative observation token");
        if (b.action < 0) throw std::invalid_argument("append_episode: negative action token");
        if (b.done != 0 && b.done != 1) throw std::invalid_argument("append_episode: done flag must be 0 or 1");
        if (b.done == 1 && i + 1 != e.blocks.size())
            throw std::invalid_argument("append_episode: done flag before the final block");
    }
}

int64_t TrajectoryStore::append_episode(EpisodeRecord episode) {
    std::unique_lock lock(mutex_);
    validate_episode(episode, tokens_per_obs_);
    if (tokens_per_obs_ < 0) tokens_per_obs_ = static_cast<int>(episode.blocks.front().obs.size());
    episode.id = next_id_.fetch_add(1);
    episodes_.push_back(std::move(episode));
    return episodes_.back().id;
}

int64_t TrajectoryStore::append_episode(TokenTrajectory blocks, uint64_t seed) {
    EpisodeRecord e;
    e.seed = seed;
    e.blocks = std::move(blocks);
    return append_episode(std::move(e));
}

size_t TrajectoryStore::size() const {
    std::shared_lock lock(mutex_);
    return episodes_.size();
}

int TrajectoryStore::tokens_per_obs() const {
    std::shared_lock lock(mutex_);
    return tokens_per_obs_;
}

EpisodeRecord TrajectoryStore::get(int64_t id) const {
    std::shared_lock lock(mutex_);
    for (const auto& e : episodes_)
        if (e.id == id) return e;
    throw std::out_of_range("TrajectoryStore::get: no episode with id " + std::to_string(id));
}

std::vector<EpisodeRecord> TrajectoryStore::snapshot() const {
    std::shared_lock lock(mutex_);
    return episodes_;
}

TokenTrajectory TrajectoryStore::sample_segment(int length, uint64_t seed) const {
    if (length < 1) throw std::invalid_argument("sample_segment: length must be >= 1");
    std::shared_lock lock(mutex_);
    uint64_t total = 0;
    for (const auto& e : episodes_)
        if (e.blocks.size() >= static_cast<size_t>(length)) total += e.blocks.size() - length + 1;
    if (total == 0)
        throw std::runtime_error("sample_segment: no eligible segment of length " + std::to_string(length));
    SplitMix64 rng(seed);
    uint64_t pick = rng.next_below(total);
    for (const auto& e : episodes_) {
        if (e.blocks.size() < static_cast<size_t>(length)) continue;
        const uint64_t starts = e.blocks.size() - length + 1;
        if (pick < starts)
            return TokenTrajectory(e.blocks.begin() + static_cast<long>(pick),
                                   e.blocks.begin() + static_cast<long>(pick) + length);
        pick -= starts;
    }
    throw std::logic_error("sample_segment: selection walked past the store");
}

void TrajectoryStore::save(const std::string& path) const {
    std::shared_lock lock(mutex_);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("TrajectoryStore::save: cannot open " + path);
    nlohmann::json header{{"format", kFormat}, {"version", kVersion}};
    out << header.dump() << "\n";
    for (const auto& e : episodes_) {
        nlohmann::json blocks = nlohmann::json::array();
        for (const auto& b : e.blocks)
            blocks.push_back({{"z", b.obs}, {"a", b.action}, {"r", reward_to_string(b.reward)}, {"d", b.done}});
        nlohmann::json line{{"id", e.id},
                            {"K", e.blocks.front().obs.size()},
                            {"seed", e.seed},
                            {"blocks", std::move(blocks)}};
        out << line.dump() << "\n";
    }
    if (!out) throw std::runtime_error("TrajectoryStore::save: write failed for " + path);
}

TrajectoryStore TrajectoryStore::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("TrajectoryStore::load: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("TrajectoryStore::load: empty file " + path);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
        throw std::runtime_error("TrajectoryStore::load: malformed header in " + path);
    }
    if (!header.contains("format") || header["format"] != kFormat)
        throw std::runtime_error("TrajectoryStore::load: not a trajectory store file: " + path);
    if (!header.contains("version") || header["version"] != kVersion)
        throw std::runtime_error("TrajectoryStore::load: unsupported version in " + path);

    TrajectoryStore store;
    int64_t max_id = -1;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
            throw std::runtime_error("TrajectoryStore::load: malformed episode at line " + std::to_string(line_no));
        }
        EpisodeRecord e;
        e.id = j.at("id").get<int64_t>();
        e.seed = j.value("seed", uint64_t{0});
        for (const auto& jb : j.at("blocks")) {
            Block b;
            b.obs = jb.at("z").get<std::vector<int>>();
            b.action = jb.at("a").get<int>();
            b.reward = reward_from_string(jb.at("r").get<std::string>());
            b.done = jb.at("d").get<int>();
            e.blocks.push_back(std::move(b));
        }
        validate_episode(e, store.tokens_per_obs_);
        if (store.tokens_per_obs_ < 0) store.tokens_per_obs_ = static_cast<int>(e.blocks.front().obs.size());
        max_id = std::max(max_id, e.id);
        store.episodes_.push_back(std::move(e));
    }
    store.next_id_.store(max_id + 1);
    return store;
}

}  // namespace rpop
