#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "reference.hpp"
#include "rpop/retention.hpp"
#include "rpop/rng.hpp"

using namespace rpop;

namespace {

Mat<double> random_mat(int r, int c, uint64_t seed) { return gaussian_mat(r, c, seed, 1.0); }

struct ProjectedChunk {
    Mat<double> q, k, v;  // unrotated projections
};

ProjectedChunk random_chunk(int n, int dk, int dv, uint64_t seed) {
    return {random_mat(n, dk, mix_seed(seed, 1)), random_mat(n, dk, mix_seed(seed, 2)),
            random_mat(n, dv, mix_seed(seed, 3))};
}

// Run the per-token recurrence over rotated inputs; the definitional oracle.
Mat<double> recurrent_outputs(const Mat<double>& qr, const Mat<double>& kr, const Mat<double>& v, double eta,
                              Mat<double>& state) {
    Mat<double> y(qr.rows, v.cols);
    for (int t = 0; t < qr.rows; ++t) {
        std::vector<double> q(qr.row(t), qr.row(t) + qr.cols);
        std::vector<double> k(kr.row(t), kr.row(t) + kr.cols);
        std::vector<double> vv(v.row(t), v.row(t) + v.cols);
        auto r = retention_recurrent_step(state, q, k, vv, eta);
        state = r.state;
        for (int j = 0; j < v.cols; ++j) y(t, j) = r.output[j];
    }
    return y;
}

}  // namespace

TEST_CASE("decay_matrix closed form") {
    auto d = decay_matrix(3, 1.0);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) CHECK(d.entries(r, c) == (r >= c ? 1.0 : 0.0));

    auto d2 = decay_matrix(2, 0.5);
    CHECK(d2.entries(0, 0) == 1.0);
    CHECK(d2.entries(0, 1) == 0.0);
    CHECK(d2.entries(1, 0) == 0.5);
    CHECK(d2.entries(1, 1) == 1.0);

    // Row sums cross-checked by brute-force summation of eta^(r-c).
    auto d3 = decay_matrix(3, 0.5);
    const double expect[3] = {1.0, 1.5, 1.75};
    for (int r = 0; r < 3; ++r) {
        double brute = 0.0;
        for (int c = 0; c <= r; ++c) brute += std::pow(0.5, r - c);
        CHECK(brute == doctest::Approx(expect[r]).epsilon(1e-15));
        double sum = 0.0;
        for (int c = 0; c < 3; ++c) sum += d3.entries(r, c);
        CHECK(sum == doctest::Approx(expect[r]).epsilon(1e-15));
    }
}

TEST_CASE("decay_matrix validates arguments") {
    CHECK_THROWS_AS(decay_matrix(0, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(decay_matrix(3, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(decay_matrix(3, 1.5), std::invalid_argument);
}

TEST_CASE("decay_matrix support is exactly lower triangular") {
    auto d = decay_matrix(17, 0.9);
    for (int r = 0; r < 17; ++r) {
        CHECK(d.entries(r, r) == 1.0);
        for (int c = r + 1; c < 17; ++c) CHECK(d.entries(r, c) == 0.0);
    }
}

TEST_CASE("rotation at index 0 is the identity") {
    auto angles = RotationAngles::standard(8);
    auto x = random_mat(1, 8, 42);
    for (bool conj : {false, true}) {
        auto y = apply_position_rotation(x, 0, angles, conj);
        CHECK(max_abs_diff(x, y) == 0.0);
    }
}

TEST_CASE("rotation of a unit pair matches direct trigonometry") {
    RotationAngles angles;
    angles.dim = 2;
    angles.theta = {0.1};
    Mat<double> x(1, 2);
    x(0, 0) = 1.0;
    x(0, 1) = 0.0;
    for (long long n : {1LL, 7LL, 100LL}) {
        auto y = apply_position_rotation(x, n, angles, false);
        CHECK(y(0, 0) == doctest::Approx(std::cos(0.1 * n)).epsilon(1e-14));
        CHECK(y(0, 1) == doctest::Approx(std::sin(0.1 * n)).epsilon(1e-14));
    }
}

TEST_CASE("rotation depends on relative position only") {
    auto angles = RotationAngles::standard(16);
    SplitMix64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        auto q = random_mat(1, 16, rng.next());
        auto k = random_mat(1, 16, rng.next());
        const long long n = 5 + static_cast<long long>(rng.next_below(40));
        const long long m = static_cast<long long>(rng.next_below(5));
        auto qa = apply_position_rotation(q, n, angles, false);
        auto kb = apply_position_rotation(k, m, angles, true);
        auto qc = apply_position_rotation(q, n - m, angles, false);
        auto kd = apply_position_rotation(k, 0, angles, true);
        const double lhs = dot(qa.row(0), kb.row(0), 16);
        const double rhs = dot(qc.row(0), kd.row(0), 16);
        CHECK(std::abs(lhs - rhs) < 1e-10);
    }
}

TEST_CASE("rotation preserves pair norms") {
    auto angles = RotationAngles::standard(32);
    auto x = random_mat(9, 32, 99);
    auto y = apply_position_rotation(x, 1234, angles, false);
    for (int r = 0; r < x.rows; ++r) {
        double nx = 0, ny = 0;
        for (int c = 0; c < 32; ++c) {
            nx += x(r, c) * x(r, c);
            ny += y(r, c) * y(r, c);
        }
        CHECK(std::abs(std::sqrt(nx) - std::sqrt(ny)) < 1e-12);
    }
}

TEST_CASE("rotation rejects odd width") {
    RotationAngles angles;
    angles.dim = 3;
    angles.theta = {0.1};
    Mat<double> x(1, 3);
    CHECK_THROWS_AS(apply_position_rotation(x, 0, angles, false), std::invalid_argument);
}

TEST_CASE("recurrent step base cases") {
    const int d = 6;
    Mat<double> zero(d, d);
    SplitMix64 rng(11);
    auto q = random_mat(1, d, rng.next());
    auto k = random_mat(1, d, rng.next());
    auto v = random_mat(1, d, rng.next());
    std::vector<double> qv(q.row(0), q.row(0) + d), kv(k.row(0), k.row(0) + d), vv(v.row(0), v.row(0) + d);

    // eta = 0 and "first token from zero state" both reduce to (q.k) v.
    const double qk = dot(q.row(0), k.row(0), d);
    for (double eta : {0.0, 0.7}) {
        auto r = retention_recurrent_step(zero, qv, kv, vv, eta);
        for (int j = 0; j < d; ++j) CHECK(r.output[j] == doctest::Approx(qk * vv[j]).epsilon(1e-14));
    }
}

TEST_CASE("recurrent step rejects dimension mismatch") {
    Mat<double> state(4, 4);
    std::vector<double> q(3), k(4), v(4);
    CHECK_THROWS_AS(retention_recurrent_step(state, q, k, v, 0.5), std::invalid_argument);
}

TEST_CASE("parallel form matches composed recurrent steps") {
    auto angles = RotationAngles::standard(8);
    auto ch = random_chunk(16, 8, 8, 123);
    auto qr = apply_position_rotation(ch.q, 0, angles, false);
    auto kr = apply_position_rotation(ch.k, 0, angles, true);
    for (double eta : {0.3, 0.9, 0.96875}) {
        auto par = retention_parallel(qr, kr, ch.v, eta);
        Mat<double> state(8, 8);
        auto rec = recurrent_outputs(qr, kr, ch.v, eta, state);
        CHECK(max_rel_diff(par, rec) < 1e-10);
        CHECK(max_rel_diff(par, ref::naive_retention(qr, kr, ch.v, eta)) < 1e-10);
    }
}

TEST_CASE("parallel form trivial cases") {
    auto ch = random_chunk(1, 4, 4, 5);
    auto y = retention_parallel(ch.q, ch.k, ch.v, 0.5);
    const double qk = dot(ch.q.row(0), ch.k.row(0), 4);
    for (int j = 0; j < 4; ++j) CHECK(y(0, j) == doctest::Approx(qk * ch.v(0, j)).epsilon(1e-14));

    Mat<double> vzero(3, 4);
    auto ch3 = random_chunk(3, 4, 4, 6);
    auto y0 = retention_parallel(ch3.q, ch3.k, vzero, 0.5);
    CHECK(is_zero(y0));
}

TEST_CASE("chunkwise equals parallel when incoming state is zero") {
    auto angles = RotationAngles::standard(8);
    auto ch = random_chunk(7, 8, 8, 77);
    Mat<double> zero(8, 8);
    auto cw = retention_chunkwise(ch.q, ch.k, ch.v, zero, 0, 0.9, angles);
    auto qr = apply_position_rotation(ch.q, 0, angles, false);
    auto kr = apply_position_rotation(ch.k, 0, angles, true);
    auto par = retention_parallel(qr, kr, ch.v, 0.9);
    CHECK(max_rel_diff(cw.output, par) < 1e-12);
}

TEST_CASE("chunk splitting invariance") {
    const int n = 12, d = 8;
    auto angles = RotationAngles::standard(d);
    auto ch = random_chunk(n, d, d, 314);
    const double eta = 0.9;

    auto qr = apply_position_rotation(ch.q, 0, angles, false);
    auto kr = apply_position_rotation(ch.k, 0, angles, true);
    auto full = retention_parallel(qr, kr, ch.v, eta);

    for (int split : {1, 2, 4, 6, 12}) {
        Mat<double> state(d, d);
        Mat<double> got(n, d);
        for (int start = 0; start < n; start += split) {
            const int len = std::min(split, n - start);
            Mat<double> q(len, d), k(len, d), v(len, d);
            for (int r = 0; r < len; ++r)
                for (int c = 0; c < d; ++c) {
                    q(r, c) = ch.q(start + r, c);
                    k(r, c) = ch.k(start + r, c);
                    v(r, c) = ch.v(start + r, c);
                }
            auto res = retention_chunkwise(q, k, v, state, start, eta, angles);
            state = res.outgoing;
            for (int r = 0; r < len; ++r)
                for (int c = 0; c < d; ++c) got(start + r, c) = res.output(r, c);
        }
        CHECK(max_rel_diff(got, full) < 1e-8);

        // Final state agrees with running the recurrence across everything.
        auto sref = ref::naive_state(kr, ch.v, Mat<double>(d, d), eta);
        CHECK(max_rel_diff(state, sref) < 1e-10);
    }
}

TEST_CASE("chunkwise outgoing state matches recurrent steps") {
    const int n = 9, d = 6;
    auto angles = RotationAngles::standard(d);
    auto ch = random_chunk(n, d, d, 2024);
    const double eta = 0.75;
    Mat<double> s0 = random_mat(d, d, 555);

    auto res = retention_chunkwise(ch.q, ch.k, ch.v, s0, 0, eta, angles);

    auto qr = apply_position_rotation(ch.q, 0, angles, false);
    auto kr = apply_position_rotation(ch.k, 0, angles, true);
    Mat<double> state = s0;
    auto rec = recurrent_outputs(qr, kr, ch.v, eta, state);
    CHECK(max_rel_diff(res.outgoing, state) < 1e-10);
    CHECK(max_rel_diff(res.output, rec) < 1e-10);
}

TEST_CASE("mode equivalence property sweep") {
    SplitMix64 rng(9001);
    for (int dk : {4, 16, 64}) {
        auto angles = RotationAngles::standard(dk);
        for (double eta : {0.3, 0.9, 0.96875}) {
            const int n = 1 + static_cast<int>(rng.next_below(128));
            auto ch = random_chunk(n, dk, dk, rng.next());
            auto qr = apply_position_rotation(ch.q, 0, angles, false);
            auto kr = apply_position_rotation(ch.k, 0, angles, true);

            auto par = retention_parallel(qr, kr, ch.v, eta);
            Mat<double> state(dk, dk);
            auto rec = recurrent_outputs(qr, kr, ch.v, eta, state);
            Mat<double> zero(dk, dk);
            auto cw = retention_chunkwise(ch.q, ch.k, ch.v, zero, 0, eta, angles);
            CHECK(max_rel_diff(par, rec) < 1e-8);
            CHECK(max_rel_diff(par, cw.output) < 1e-8);
        }
    }
}

TEST_CASE("chunkwise rejects eta outside (0,1] and bad shapes") {
    auto angles = RotationAngles::standard(4);
    auto ch = random_chunk(3, 4, 4, 1);
    Mat<double> s(4, 4);
    CHECK_THROWS_AS(retention_chunkwise(ch.q, ch.k, ch.v, s, 0, 0.0, angles), std::invalid_argument);
    Mat<double> bad(3, 4);
    CHECK_THROWS_AS(retention_chunkwise(ch.q, ch.k, ch.v, bad, 0, 0.5, angles), std::invalid_argument);
}
