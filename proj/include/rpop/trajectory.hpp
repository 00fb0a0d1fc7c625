#pragma once

#include <atomic>
#include <cstdint>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include "rpop/world_model.hpp"

namespace rpop {

struct EpisodeRecord {
    int64_t id = 0;
    uint64_t seed = 0;  // provenance of the generator that produced it
    TokenTrajectory blocks;
};

// Replay storage with uniform segment sampling. Single writer, multiple
// readers; appends are atomic at episode granularity and readers always see
// complete episodes. File format: JSON lines (".traj.jsonl"), a header line
// followed by one episode per line, rewards encoded as decimal strings so
// save/load round trips are exact.
class TrajectoryStore {
  public:
    TrajectoryStore() = default;
    TrajectoryStore(const TrajectoryStore& o) : episodes_(o.snapshot()), next_id_(o.next_id_.load()) {}

    int64_t append_episode(EpisodeRecord episode);
    int64_t append_episode(TokenTrajectory blocks, uint64_t seed = 0);

    size_t size() const;
    EpisodeRecord get(int64_t id) const;

    // Uniform over all (episode, start) pairs admitting `length` consecutive
    // blocks inside one episode. Episodes shorter than `length` are skipped.
    TokenTrajectory sample_segment(int length, uint64_t seed) const;

    void save(const std::string& path) const;
    static TrajectoryStore load(const std::string& path);

    int tokens_per_obs() const;

  private:
    std::vector<EpisodeRecord> snapshot() const;
    static void validate_episode(const EpisodeRecord& e, int expected_k);

    mutable std::shared_mutex mutex_;
    std::vector<EpisodeRecord> episodes_;
    std::atomic<int64_t> next_id_{0};
    int tokens_per_obs_ = -1;  // fixed by the first appended episode
};

}  // namespace rpop
