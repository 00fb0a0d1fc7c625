#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "rpop/rng.hpp"
#include "rpop/trajectory.hpp"

using namespace rpop;

namespace {

Block make_block(SplitMix64& rng, int k) {
    Block b;
    b.obs.resize(k);
    for (auto& z : b.obs) z = static_cast<int>(rng.next_below(32));
    b.action = static_cast<int>(rng.next_below(5));
    b.reward = rng.next_gaussian();
    b.done = 0;
    return b;
}

TokenTrajectory make_episode(SplitMix64& rng, int k, int blocks, bool terminal) {
    TokenTrajectory t;
    for (int i = 0; i < blocks; ++i) t.push_back(make_block(rng, k));
    if (terminal) t.back().done = 1;
    return t;
}

bool blocks_equal(const TokenTrajectory& a, const TokenTrajectory& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i].obs != b[i].obs || a[i].action != b[i].action || a[i].reward != b[i].reward || a[i].done != b[i].done)
            return false;
    return true;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

double chi2_crit_p01(int dof) {
    const double z = 2.3263478740408408;
    const double a = 2.0 / (9.0 * dof);
    const double t = 1.0 - a + z * std::sqrt(a);
    return dof * t * t * t;
}

}  // namespace

TEST_CASE("append and fetch round trip with monotonic ids") {
    TrajectoryStore store;
    SplitMix64 rng(1);
    auto ep0 = make_episode(rng, 4, 3, true);
    auto ep1 = make_episode(rng, 4, 5, false);
    auto id0 = store.append_episode(ep0, 7);
    auto id1 = store.append_episode(ep1, 8);
    CHECK(id1 > id0);
    CHECK(store.size() == 2);
    CHECK(blocks_equal(store.get(id0).blocks, ep0));
    CHECK(blocks_equal(store.get(id1).blocks, ep1));
    CHECK(store.get(id1).seed == 8);
    CHECK_THROWS_AS(store.get(12345), std::out_of_range);
}

TEST_CASE("episode invariants are enforced") {
    TrajectoryStore store;
    SplitMix64 rng(2);
    CHECK_THROWS_AS(store.append_episode(TokenTrajectory{}), std::invalid_argument);

    auto bad_mid_done = make_episode(rng, 4, 4, false);
    bad_mid_done[1].done = 1;
    CHECK_THROWS_AS(store.append_episode(bad_mid_done), std::invalid_argument);

    auto ragged = make_episode(rng, 4, 3, false);
    ragged[2].obs.pop_back();
    CHECK_THROWS_AS(store.append_episode(ragged), std::invalid_argument);

    store.append_episode(make_episode(rng, 4, 2, false));
    CHECK_THROWS_AS(store.append_episode(make_episode(rng, 6, 2, false)), std::invalid_argument);
}

TEST_CASE("sampling a store with one exact-length episode") {
    TrajectoryStore store;
    SplitMix64 rng(3);
    auto ep = make_episode(rng, 4, 5, false);
    store.append_episode(ep);
    for (uint64_t seed = 0; seed < 10; ++seed) CHECK(blocks_equal(store.sample_segment(5, seed), ep));
    CHECK_THROWS_AS(store.sample_segment(6, 0), std::runtime_error);
}

TEST_CASE("two possible starts split evenly") {
    TrajectoryStore store;
    SplitMix64 rng(4);
    store.append_episode(make_episode(rng, 4, 6, false));  // H_total + 1 blocks
    const int draws = 10000;
    int first = 0;
    auto whole = store.get(0).blocks;
    for (int i = 0; i < draws; ++i) {
        auto seg = store.sample_segment(5, 900 + i);
        if (blocks_equal(seg, TokenTrajectory(whole.begin(), whole.begin() + 5))) ++first;
    }
    const double sigma = std::sqrt(0.25 * draws);
    CHECK(std::abs(first - draws / 2.0) < 3.0 * sigma);
}

TEST_CASE("segment starts are uniform (chi-squared at p > 0.01)") {
    TrajectoryStore store;
    SplitMix64 rng(5);
    store.append_episode(make_episode(rng, 2, 12, false));
    store.append_episode(make_episode(rng, 2, 8, false));
    const int len = 4;
    // Valid starts: 9 in the first episode, 5 in the second.
    const int cells = 14;
    std::vector<int> counts(cells, 0);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        auto seg = store.sample_segment(len, 777 + i);
        bool found = false;
        int cell = 0;
        for (int e = 0; e < 2 && !found; ++e) {
            auto blocks = store.get(e).blocks;
            for (size_t s = 0; s + len <= blocks.size() && !found; ++s, ++cell)
                if (blocks_equal(seg, TokenTrajectory(blocks.begin() + s, blocks.begin() + s + len))) {
                    counts[cell]++;
                    found = true;
                }
        }
        REQUIRE(found);
    }
    const double expect = static_cast<double>(draws) / cells;
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - expect) * (c - expect) / expect;
    CHECK(chi2 < chi2_crit_p01(cells - 1));
}

TEST_CASE("save and load are lossless, including awkward rewards") {
    TrajectoryStore store;
    SplitMix64 rng(6);
    for (int e = 0; e < 20; ++e) store.append_episode(make_episode(rng, 3, 2 + static_cast<int>(rng.next_below(6)), e % 2 == 0), e);
    auto tricky = make_episode(rng, 3, 2, false);
    tricky[0].reward = 0.1;
    tricky[1].reward = -1.0 / 3.0;
    auto tricky_id = store.append_episode(tricky);

    const auto path = temp_path("rpop_store_roundtrip.traj.jsonl");
    store.save(path);
    auto loaded = TrajectoryStore::load(path);
    REQUIRE(loaded.size() == store.size());
    for (size_t e = 0; e < store.size(); ++e) {
        auto a = store.get(static_cast<int64_t>(e));
        auto b = loaded.get(static_cast<int64_t>(e));
        CHECK(blocks_equal(a.blocks, b.blocks));
        CHECK(a.seed == b.seed);
    }
    CHECK(loaded.get(tricky_id).blocks[0].reward == 0.1);
    CHECK(loaded.get(tricky_id).blocks[1].reward == -1.0 / 3.0);
    std::filesystem::remove(path);
}

TEST_CASE("empty store round trip") {
    TrajectoryStore store;
    const auto path = temp_path("rpop_store_empty.traj.jsonl");
    store.save(path);
    auto loaded = TrajectoryStore::load(path);
    CHECK(loaded.size() == 0);
    std::filesystem::remove(path);
}

TEST_CASE("corrupted header fails without a partial load") {
    TrajectoryStore store;
    SplitMix64 rng(7);
    store.append_episode(make_episode(rng, 3, 4, false));
    const auto path = temp_path("rpop_store_corrupt.traj.jsonl");
    store.save(path);
    {
        std::fstream f(path, std::ios::in | std::ios::out);
        f.seekp(2);
        f.write("XX", 2);
    }
    CHECK_THROWS_AS(TrajectoryStore::load(path), std::runtime_error);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(TrajectoryStore::load(path), std::runtime_error);
}

TEST_CASE("ids continue after a load") {
    TrajectoryStore store;
    SplitMix64 rng(8);
    store.append_episode(make_episode(rng, 3, 4, false));
    store.append_episode(make_episode(rng, 3, 4, false));
    const auto path = temp_path("rpop_store_resume.traj.jsonl");
    store.save(path);
    auto loaded = TrajectoryStore::load(path);
    auto id = loaded.append_episode(make_episode(rng, 3, 4, false));
    CHECK(id == 2);
    std::filesystem::remove(path);
}
