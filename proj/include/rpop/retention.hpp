#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "rpop/mat.hpp"

namespace rpop {

// ---------------------------------------------------------------------------
// Retention: an attention-like mechanism with exponential temporal decay that
// admits three equivalent computation forms. The per-token recurrence
//
//     S_n = eta * S_{n-1} + k_n^T v_n,   y_n = q_n * S_n,   S_0 = 0
//
// is the normative definition; the parallel and chunkwise forms below must
// reproduce it. Within-chunk exponents use 0-based local indices: the
// cross-chunk output weight for local row r is eta^(r+1), and the state
// contribution weight for local row m of a length-n chunk is eta^(n-1-m).
// ---------------------------------------------------------------------------

// Per-head recurrent accumulator, d_k x d_v. Zero before any token.
template <typename T>
using HeadState = Mat<T>;

template <typename T>
struct DecayMask {
    int size = 0;
    double eta = 1.0;
    Mat<T> entries;  // entries(r,c) = eta^(r-c) for r >= c, exactly 0 above the diagonal
};

// Pairwise rotation angles for relative position encoding. dim must be even;
// coordinate pair j rotates by (absolute index) * theta[j].
struct RotationAngles {
    int dim = 0;
    std::vector<double> theta;  // dim/2 angles, radians

    static RotationAngles standard(int dim) {
        if (dim <= 0 || dim % 2 != 0) throw std::invalid_argument("RotationAngles: dim must be even and positive");
        RotationAngles a;
        a.dim = dim;
        a.theta.resize(dim / 2);
        for (int j = 0; j < dim / 2; ++j) a.theta[j] = std::pow(10000.0, -2.0 * j / dim);
        return a;
    }
};

// Single-head projection weights. eta in (0,1].
template <typename T>
struct HeadProjections {
    Mat<T> w_q, w_k, w_v;  // d_in x d_head each
    double eta = 1.0;
};

namespace detail {

inline void check_eta_open(double eta, const char* who) {
    if (!(eta > 0.0) || eta > 1.0) throw std::invalid_argument(std::string(who) + ": eta must lie in (0,1]");
}

inline void check_eta_closed(double eta, const char* who) {
    if (eta < 0.0 || eta > 1.0) throw std::invalid_argument(std::string(who) + ": eta must lie in [0,1]");
}

// pows[k] = eta^k for k = 0..n, each computed in closed form.
inline std::vector<double> eta_powers(double eta, int n) {
    std::vector<double> p(static_cast<size_t>(n) + 1);
    for (int k = 0; k <= n; ++k) p[k] = std::pow(eta, static_cast<double>(k));
    return p;
}

}  // namespace detail

template <typename T = double>
DecayMask<T> decay_matrix(int n, double eta) {
    if (n < 1) throw std::invalid_argument("decay_matrix: n must be positive");
    detail::check_eta_open(eta, "decay_matrix");
    DecayMask<T> d;
    d.size = n;
    d.eta = eta;
    d.entries = Mat<T>(n, n);
    const auto pows = detail::eta_powers(eta, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c <= r; ++c) d.entries(r, c) = static_cast<T>(pows[r - c]);
    return d;
}

// Rotates each coordinate pair of row p by angle (start_index + p) * theta[j].
// The conjugate flag selects the key-side branch of the complex formulation;
// in this real pair representation the conjugation is absorbed by the dot
// product (real-dot(u, v) = Re(u * conj(v)) on pairs read as complex numbers),
// so both branches apply the same rotation. Negating the angle instead would
// destroy the relative-position property dot(rot(q,n), rot(k,m)) = f(n-m).
template <typename T>
Mat<T> apply_position_rotation(const Mat<T>& x, long long start_index, const RotationAngles& angles, bool conjugate) {
    (void)conjugate;
    if (x.cols % 2 != 0) throw std::invalid_argument("apply_position_rotation: odd vector width");
    if (x.cols != angles.dim) throw std::invalid_argument("apply_position_rotation: angle count mismatch");
    if (start_index < 0) throw std::invalid_argument("apply_position_rotation: negative start index");
    Mat<T> y(x.rows, x.cols);
    for (int p = 0; p < x.rows; ++p) {
        const T* xr = x.row(p);
        T* yr = y.row(p);
        const double pos = static_cast<double>(start_index + p);
        for (int j = 0; j < x.cols / 2; ++j) {
            const double phi = pos * angles.theta[j];
            const T c = static_cast<T>(std::cos(phi));
            const T s = static_cast<T>(std::sin(phi));
            const T a = xr[2 * j], b = xr[2 * j + 1];
            yr[2 * j] = a * c - b * s;
            yr[2 * j + 1] = a * s + b * c;
        }
    }
    return y;
}

// One step of the defining recurrence. Mutates state in place; this is the
// hot path of the token-by-token forms.
template <typename T>
void retention_recurrent_step_inplace(Mat<T>& state, const T* q, const T* k, const T* v, double eta, T* y_out) {
    const int dk = state.rows, dv = state.cols;
    const T e = static_cast<T>(eta);
    for (int i = 0; i < dk; ++i) {
        T* srow = state.row(i);
        const T ki = k[i];
#pragma omp simd
        for (int j = 0; j < dv; ++j) srow[j] = e * srow[j] + ki * v[j];
    }
    std::fill(y_out, y_out + dv, T(0));
    for (int i = 0; i < dk; ++i) {
        const T* srow = state.row(i);
        const T qi = q[i];
#pragma omp simd
        for (int j = 0; j < dv; ++j) y_out[j] += qi * srow[j];
    }
}

template <typename T>
struct RecurrentStepResult {
    std::vector<T> output;
    HeadState<T> state;
};

// Pure form: new state = eta*state + k^T v, output = q * new state.
template <typename T>
RecurrentStepResult<T> retention_recurrent_step(const HeadState<T>& state, const std::vector<T>& q,
                                                const std::vector<T>& k, const std::vector<T>& v, double eta) {
    detail::check_eta_closed(eta, "retention_recurrent_step");
    if (static_cast<int>(q.size()) != state.rows || static_cast<int>(k.size()) != state.rows ||
        static_cast<int>(v.size()) != state.cols)
        throw std::invalid_argument("retention_recurrent_step: dimension mismatch");
    RecurrentStepResult<T> r{std::vector<T>(state.cols), state};
    retention_recurrent_step_inplace(r.state, q.data(), k.data(), v.data(), eta, r.output.data());
    return r;
}

namespace detail {

// (Q K^T (.) D) V for already-rotated Q, K.
template <typename T>
Mat<T> masked_retention(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v, const std::vector<double>& pows) {
    Mat<T> a = matmul_nt(q, k);
    const int n = a.rows;
    for (int r = 0; r < n; ++r) {
        T* ar = a.row(r);
        for (int c = 0; c <= r; ++c) ar[c] *= static_cast<T>(pows[r - c]);
        for (int c = r + 1; c < n; ++c) ar[c] = T(0);
    }
    return matmul(a, v);
}

// sum_m eta^(n-1-m) k_m^T v_m over all rows of a chunk.
template <typename T>
Mat<T> decayed_outer_sum(const Mat<T>& k, const Mat<T>& v, const std::vector<double>& pows) {
    const int n = k.rows;
    Mat<T> s(k.cols, v.cols);
    for (int m = 0; m < n; ++m) {
        const T w = static_cast<T>(pows[n - 1 - m]);
        const T* km = k.row(m);
        const T* vm = v.row(m);
        for (int i = 0; i < k.cols; ++i) {
            const T wk = w * km[i];
            T* si = s.row(i);
#pragma omp simd
            for (int j = 0; j < v.cols; ++j) si[j] += wk * vm[j];
        }
    }
    return s;
}

template <typename T>
struct ChunkResult {
    Mat<T> output;
    HeadState<T> state;
};

// Chunk form on already-rotated Q, K: output row r gains eta^(r+1) * q_r * S_in,
// outgoing state is eta^n * S_in + decayed key/value outer products.
template <typename T>
ChunkResult<T> retention_chunk_core(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v, const HeadState<T>& incoming,
                                    double eta) {
    const int n = q.rows;
    const auto pows = eta_powers(eta, n);
    ChunkResult<T> r{masked_retention(q, k, v, pows), decayed_outer_sum(k, v, pows)};
    if (!is_zero(incoming)) {
        Mat<T> cross = matmul(q, incoming);
        for (int rr = 0; rr < n; ++rr) {
            const T w = static_cast<T>(pows[rr + 1]);
            T* yr = r.output.row(rr);
            const T* cr = cross.row(rr);
#pragma omp simd
            for (int j = 0; j < r.output.cols; ++j) yr[j] += w * cr[j];
        }
        const T decay = static_cast<T>(pows[n]);
        for (size_t i = 0; i < r.state.data.size(); ++i) r.state.data[i] += decay * incoming.data[i];
    }
    return r;
}

}  // namespace detail

// Parallel form over a whole sequence from the zero state. Q and K must
// already carry their position rotations.
template <typename T>
Mat<T> retention_parallel(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v, double eta) {
    detail::check_eta_closed(eta, "retention_parallel");
    if (q.rows != k.rows || k.rows != v.rows) throw std::invalid_argument("retention_parallel: row counts differ");
    if (q.cols != k.cols) throw std::invalid_argument("retention_parallel: q/k widths differ");
    return detail::masked_retention(q, k, v, detail::eta_powers(eta, q.rows));
}

template <typename T>
struct ChunkwiseResult {
    Mat<T> output;
    HeadState<T> outgoing;
};

// Chunk form on projected (not yet rotated) Q, K, V; rotation is applied here
// at absolute positions chunk_token_offset + row. eta = 0 is rejected: it
// would silently erase the incoming state across the call boundary.
template <typename T>
ChunkwiseResult<T> retention_chunkwise(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v,
                                       const HeadState<T>& incoming, long long chunk_token_offset, double eta,
                                       const RotationAngles& angles) {
    detail::check_eta_open(eta, "retention_chunkwise");
    if (q.rows != k.rows || k.rows != v.rows || q.rows < 1)
        throw std::invalid_argument("retention_chunkwise: bad chunk shape");
    if (q.cols != k.cols || incoming.rows != k.cols || incoming.cols != v.cols)
        throw std::invalid_argument("retention_chunkwise: dimension mismatch");
    Mat<T> qr = apply_position_rotation(q, chunk_token_offset, angles, false);
    Mat<T> kr = apply_position_rotation(k, chunk_token_offset, angles, true);
    auto res = detail::retention_chunk_core(qr, kr, v, incoming, eta);
    return {std::move(res.output), std::move(res.state)};
}

}  // namespace rpop
