#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rpop {

// Dense row-major matrix. Every kernel below accumulates each output element
// in a fixed serial order, so results are independent of the OpenMP thread
// count and bitwise repeatable across calls.
template <typename T>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), T(0)) {
        if (r < 0 || c < 0) throw std::invalid_argument("Mat: negative shape");
    }

    static Mat zeros(int r, int c) { return Mat(r, c); }

    static Mat identity(int n) {
        Mat m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = T(1);
        return m;
    }

    T* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const T* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

    T& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    const T& operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    template <typename U>
    Mat<U> cast() const {
        Mat<U> out(rows, cols);
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

namespace detail {
// Fork only when a product is large enough to amortize team startup, which
// costs on the order of 0.1 ms on small shared boxes; medium shapes run
// faster on the encountering thread. Single-row products (the token-by-token
// path) always stay serial.
inline bool gemm_parallel(int m, long long ops) { return m >= 8 && ops >= (1LL << 25); }
}  // namespace detail

namespace detail {

// One k-tile over a row range: 4 x 8 register accumulators, accumulating into
// C in ascending-k order.
template <typename T>
void gemm_rows_tile(const T* a, const T* b, T* c, int r0, int r1, int kk0, int kk1, int k, int n) {
    constexpr int JT = 8;
    int i = r0;
    for (; i + 4 <= r1; i += 4) {
        const T* a0 = a + static_cast<size_t>(i + 0) * k;
        const T* a1 = a + static_cast<size_t>(i + 1) * k;
        const T* a2 = a + static_cast<size_t>(i + 2) * k;
        const T* a3 = a + static_cast<size_t>(i + 3) * k;
        T* c0 = c + static_cast<size_t>(i + 0) * n;
        T* c1 = c + static_cast<size_t>(i + 1) * n;
        T* c2 = c + static_cast<size_t>(i + 2) * n;
        T* c3 = c + static_cast<size_t>(i + 3) * n;
        int j0 = 0;
        for (; j0 + JT <= n; j0 += JT) {
            T acc0[JT], acc1[JT], acc2[JT], acc3[JT];
            for (int t = 0; t < JT; ++t) {
                acc0[t] = c0[j0 + t];
                acc1[t] = c1[j0 + t];
                acc2[t] = c2[j0 + t];
                acc3[t] = c3[j0 + t];
            }
            for (int kk = kk0; kk < kk1; ++kk) {
                const T* bk = b + static_cast<size_t>(kk) * n + j0;
                const T v0 = a0[kk], v1 = a1[kk], v2 = a2[kk], v3 = a3[kk];
#pragma omp simd
                for (int t = 0; t < JT; ++t) {
                    const T bv = bk[t];
                    acc0[t] += v0 * bv;
                    acc1[t] += v1 * bv;
                    acc2[t] += v2 * bv;
                    acc3[t] += v3 * bv;
                }
            }
            for (int t = 0; t < JT; ++t) {
                c0[j0 + t] = acc0[t];
                c1[j0 + t] = acc1[t];
                c2[j0 + t] = acc2[t];
                c3[j0 + t] = acc3[t];
            }
        }
        for (; j0 < n; ++j0) {
            T s0 = c0[j0], s1 = c1[j0], s2 = c2[j0], s3 = c3[j0];
            for (int kk = kk0; kk < kk1; ++kk) {
                const T bv = b[static_cast<size_t>(kk) * n + j0];
                s0 += a0[kk] * bv;
                s1 += a1[kk] * bv;
                s2 += a2[kk] * bv;
                s3 += a3[kk] * bv;
            }
            c0[j0] = s0;
            c1[j0] = s1;
            c2[j0] = s2;
            c3[j0] = s3;
        }
    }
    for (; i < r1; ++i) {
        T* ci = c + static_cast<size_t>(i) * n;
        const T* ai = a + static_cast<size_t>(i) * k;
        for (int kk = kk0; kk < kk1; ++kk) {
            const T av = ai[kk];
            const T* bk = b + static_cast<size_t>(kk) * n;
#pragma omp simd
            for (int j = 0; j < n; ++j) ci[j] += av * bk[j];
        }
    }
}

}  // namespace detail

// C := A * B, shapes (m x k) * (k x n). Threads own contiguous row ranges;
// within a range, a k-tile of B stays cache-resident across the 4x8
// register-blocked passes, so B streams from memory once per call. Each
// output element accumulates in ascending-k order, independent of the thread
// count. The single-row remainder path is the bandwidth-friendly layout for
// token-by-token products.
template <typename T>
void gemm(const T* a, const T* b, T* c, int m, int k, int n) {
    const long long ops = static_cast<long long>(m) * k * n;
    const bool par = detail::gemm_parallel(m, ops);
    const int k_tile = std::max(32, (1 << 19) / (n * static_cast<int>(sizeof(T))));
#pragma omp parallel if (par)
    {
#ifdef _OPENMP
        const int nth = omp_get_num_threads();
        const int tid = omp_get_thread_num();
#else
        const int nth = 1, tid = 0;
#endif
        const int nblk = (m + 3) / 4;
        const int r0 = std::min(m, 4 * static_cast<int>(static_cast<long long>(nblk) * tid / nth));
        const int r1 = std::min(m, 4 * static_cast<int>(static_cast<long long>(nblk) * (tid + 1) / nth));
        if (r0 < r1) {
            std::fill(c + static_cast<size_t>(r0) * n, c + static_cast<size_t>(r1) * n, T(0));
            for (int kk0 = 0; kk0 < k; kk0 += k_tile)
                detail::gemm_rows_tile(a, b, c, r0, r1, kk0, std::min(k, kk0 + k_tile), k, n);
        }
    }
}

template <typename T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimensions differ");
    Mat<T> c(a.rows, b.cols);
    gemm(a.data.data(), b.data.data(), c.data.data(), a.rows, a.cols, b.cols);
    return c;
}

// C := A * B^T, shapes (m x k) * (n x k).
template <typename T>
Mat<T> matmul_nt(const Mat<T>& a, const Mat<T>& b) {
    if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: inner dimensions differ");
    Mat<T> c(a.rows, b.rows);
    const int m = a.rows, n = b.rows, k = a.cols;
    const bool par = detail::gemm_parallel(m, static_cast<long long>(m) * n * k);
#pragma omp parallel for schedule(static) if (par)
    for (int i = 0; i < m; ++i) {
        const T* ai = a.row(i);
        T* ci = c.row(i);
        for (int j = 0; j < n; ++j) {
            const T* bj = b.row(j);
            T acc = T(0);
#pragma omp simd reduction(+ : acc)
            for (int kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
            ci[j] = acc;
        }
    }
    return c;
}

// C := A^T * B, shapes (k x m) * (k x n).
template <typename T>
Mat<T> matmul_tn(const Mat<T>& a, const Mat<T>& b) {
    if (a.rows != b.rows) throw std::invalid_argument("matmul_tn: inner dimensions differ");
    Mat<T> c(a.cols, b.cols);
    const int m = a.cols, n = b.cols, k = a.rows;
    for (int kk = 0; kk < k; ++kk) {
        const T* ak = a.row(kk);
        const T* bk = b.row(kk);
        for (int i = 0; i < m; ++i) {
            const T av = ak[i];
            T* ci = c.row(i);
#pragma omp simd
            for (int j = 0; j < n; ++j) ci[j] += av * bk[j];
        }
    }
    return c;
}

template <typename T>
void add_inplace(Mat<T>& a, const Mat<T>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add_inplace: shape mismatch");
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

template <typename T>
void hadamard_inplace(Mat<T>& a, const Mat<T>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("hadamard_inplace: shape mismatch");
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] *= b.data[i];
}

template <typename T>
void scale_inplace(Mat<T>& a, T s) {
    for (auto& v : a.data) v *= s;
}

template <typename T>
bool is_zero(const Mat<T>& a) {
    return std::all_of(a.data.begin(), a.data.end(), [](T v) { return v == T(0); });
}

// y := x * W for a single row vector x (1 x k), W (k x n).
template <typename T>
void rowvec_matmul(const T* x, const Mat<T>& w, T* y) {
    gemm(x, w.data.data(), y, 1, w.rows, w.cols);
}

template <typename T>
T dot(const T* a, const T* b, int n) {
    T acc = T(0);
#pragma omp simd reduction(+ : acc)
    for (int i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

template <typename T>
double max_abs_diff(const Mat<T>& a, const Mat<T>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    return m;
}

// max |a-b| / (1 + max(|a|,|b|)) over all entries.
template <typename T>
double max_rel_diff(const Mat<T>& a, const Mat<T>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_rel_diff: shape mismatch");
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double x = static_cast<double>(a.data[i]);
        const double y = static_cast<double>(b.data[i]);
        m = std::max(m, std::abs(x - y) / (1.0 + std::max(std::abs(x), std::abs(y))));
    }
    return m;
}

}  // namespace rpop
