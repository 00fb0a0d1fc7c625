#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rpop/mat.hpp"
#include "rpop/retention.hpp"
#include "rpop/rng.hpp"

namespace rpop {

enum class RetentionMode { parallel, recurrent, chunkwise };

enum class RewardMode { mse, categorical };

struct ModelConfig {
    int layers = 5;
    int heads = 4;
    int d_model = 256;
    int d_ffn = 1024;
    int tokens_per_obs = 64;  // K
    int vocab = 512;          // N, tokenizer codebook size
    int actions = 6;
    int d_embed = 256;  // tokenizer latent width
    int blocks_per_chunk = 3;
    int context_blocks = 2;
    RewardMode reward_mode = RewardMode::categorical;
    double dropout = 0.1;  // config parity only; inference never applies it
    double ln_eps = 1e-6;
    double gn_eps = 1e-6;

    int d_head() const { return d_model / heads; }
    int reward_dim() const { return reward_mode == RewardMode::categorical ? 3 : 1; }
    int block_tokens() const { return tokens_per_obs + 1; }

    void validate() const {
        if (layers < 1) throw std::invalid_argument("ModelConfig: layers must be >= 1");
        if (heads < 1 || d_model < 1 || d_model % heads != 0)
            throw std::invalid_argument("ModelConfig: d_model must be a positive multiple of heads");
        if ((d_model / heads) % 2 != 0) throw std::invalid_argument("ModelConfig: head width must be even");
        if (d_ffn < 1) throw std::invalid_argument("ModelConfig: d_ffn must be >= 1");
        if (tokens_per_obs < 1 || vocab < 2 || actions < 1 || d_embed < 1)
            throw std::invalid_argument("ModelConfig: bad vocabulary sizes");
        if (blocks_per_chunk < 1) throw std::invalid_argument("ModelConfig: blocks_per_chunk must be >= 1");
    }
};

// Decay schedule: head i of every layer uses eta_i = 1 - 2^(-5-i).
inline double head_eta(int head_index) { return 1.0 - std::ldexp(1.0, -5 - head_index); }

template <typename T>
struct LayerNormParams {
    std::vector<T> scale, shift;
};

template <typename T>
struct MsrParams {
    std::vector<HeadProjections<T>> heads;
    Mat<T> w_g, w_o;                   // d_model x d_model
    std::vector<T> gn_scale, gn_shift; // per channel, identity-initialized
};

template <typename T>
struct LayerParams {
    MsrParams<T> msr;
    Mat<T> ffn_w1, ffn_w2;
    LayerNormParams<T> ln1, ln2;
};

// Per-layer, per-head recurrent accumulators.
template <typename T>
struct LayerStates {
    std::vector<std::vector<HeadState<T>>> s;

    static LayerStates zeros(const ModelConfig& cfg) {
        LayerStates st;
        st.s.assign(cfg.layers, std::vector<HeadState<T>>(cfg.heads, HeadState<T>(cfg.d_head(), cfg.d_head())));
        return st;
    }

    template <typename U>
    LayerStates<U> cast() const {
        LayerStates<U> out;
        out.s.resize(s.size());
        for (size_t l = 0; l < s.size(); ++l) {
            out.s[l].reserve(s[l].size());
            for (const auto& m : s[l]) out.s[l].push_back(m.template cast<U>());
        }
        return out;
    }
};

template <typename T>
struct StackParams {
    std::vector<LayerParams<T>> layers;
    ModelConfig config;
    RotationAngles angles;

    template <typename U>
    StackParams<U> cast() const;
};

namespace detail {

template <typename T>
std::vector<T> identity_scale(int n) {
    return std::vector<T>(n, T(1));
}

}  // namespace detail

inline StackParams<double> random_stack(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    StackParams<double> p;
    p.config = cfg;
    p.angles = RotationAngles::standard(cfg.d_head());
    p.layers.resize(cfg.layers);
    for (int l = 0; l < cfg.layers; ++l) {
        auto& lp = p.layers[l];
        const uint64_t ls = mix_seed(seed, 1000 + l);
        lp.msr.heads.resize(cfg.heads);
        for (int h = 0; h < cfg.heads; ++h) {
            auto& hp = lp.msr.heads[h];
            hp.w_q = gaussian_mat(cfg.d_model, cfg.d_head(), mix_seed(ls, 3 * h + 0), 0.02);
            hp.w_k = gaussian_mat(cfg.d_model, cfg.d_head(), mix_seed(ls, 3 * h + 1), 0.02);
            hp.w_v = gaussian_mat(cfg.d_model, cfg.d_head(), mix_seed(ls, 3 * h + 2), 0.02);
            hp.eta = head_eta(h);
        }
        lp.msr.w_g = gaussian_mat(cfg.d_model, cfg.d_model, mix_seed(ls, 100), 0.02);
        lp.msr.w_o = gaussian_mat(cfg.d_model, cfg.d_model, mix_seed(ls, 101), 0.02);
        lp.msr.gn_scale = detail::identity_scale<double>(cfg.d_model);
        lp.msr.gn_shift = std::vector<double>(cfg.d_model, 0.0);
        lp.ffn_w1 = gaussian_mat(cfg.d_model, cfg.d_ffn, mix_seed(ls, 102), 0.02);
        lp.ffn_w2 = gaussian_mat(cfg.d_ffn, cfg.d_model, mix_seed(ls, 103), 0.02);
        lp.ln1 = {detail::identity_scale<double>(cfg.d_model), std::vector<double>(cfg.d_model, 0.0)};
        lp.ln2 = {detail::identity_scale<double>(cfg.d_model), std::vector<double>(cfg.d_model, 0.0)};
    }
    return p;
}

template <typename T>
template <typename U>
StackParams<U> StackParams<T>::cast() const {
    StackParams<U> out;
    out.config = config;
    out.angles = angles;
    out.layers.resize(layers.size());
    for (size_t l = 0; l < layers.size(); ++l) {
        const auto& a = layers[l];
        auto& b = out.layers[l];
        b.msr.heads.resize(a.msr.heads.size());
        for (size_t h = 0; h < a.msr.heads.size(); ++h) {
            b.msr.heads[h].w_q = a.msr.heads[h].w_q.template cast<U>();
            b.msr.heads[h].w_k = a.msr.heads[h].w_k.template cast<U>();
            b.msr.heads[h].w_v = a.msr.heads[h].w_v.template cast<U>();
            b.msr.heads[h].eta = a.msr.heads[h].eta;
        }
        b.msr.w_g = a.msr.w_g.template cast<U>();
        b.msr.w_o = a.msr.w_o.template cast<U>();
        b.msr.gn_scale.assign(a.msr.gn_scale.begin(), a.msr.gn_scale.end());
        b.msr.gn_shift.assign(a.msr.gn_shift.begin(), a.msr.gn_shift.end());
        b.ffn_w1 = a.ffn_w1.template cast<U>();
        b.ffn_w2 = a.ffn_w2.template cast<U>();
        b.ln1.scale.assign(a.ln1.scale.begin(), a.ln1.scale.end());
        b.ln1.shift.assign(a.ln1.shift.begin(), a.ln1.shift.end());
        b.ln2.scale.assign(a.ln2.scale.begin(), a.ln2.scale.end());
        b.ln2.shift.assign(a.ln2.shift.begin(), a.ln2.shift.end());
    }
    return out;
}

// --- elementwise pieces -----------------------------------------------------

template <typename T>
T swish(T z) {
    return z / (T(1) + std::exp(-z));
}

// Exact erf-based gelu; the tanh approximation is too loose for the
// cross-form tolerances used in the tests.
template <typename T>
T gelu(T z) {
    return T(0.5) * z * (T(1) + std::erf(z * T(M_SQRT1_2)));
}

template <typename T>
void layer_norm_row(const T* x, T* y, int n, const LayerNormParams<T>& p, double eps) {
    T mean = T(0);
    for (int i = 0; i < n; ++i) mean += x[i];
    mean /= T(n);
    T var = T(0);
    for (int i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= T(n);
    const T inv = T(1) / std::sqrt(var + T(eps));
    for (int i = 0; i < n; ++i) y[i] = (x[i] - mean) * inv * p.scale[i] + p.shift[i];
}

template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const LayerNormParams<T>& p, double eps) {
    Mat<T> y(x.rows, x.cols);
    for (int r = 0; r < x.rows; ++r) layer_norm_row(x.row(r), y.row(r), x.cols, p, eps);
    return y;
}

// Per-token group normalization; channels split into `groups` equal groups.
template <typename T>
void group_norm_inplace(Mat<T>& x, int groups, double eps, const std::vector<T>& scale, const std::vector<T>& shift) {
    if (x.cols % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
    const int gsize = x.cols / groups;
    for (int r = 0; r < x.rows; ++r) {
        T* xr = x.row(r);
        for (int g = 0; g < groups; ++g) {
            T* xg = xr + g * gsize;
            T mean = T(0);
            for (int i = 0; i < gsize; ++i) mean += xg[i];
            mean /= T(gsize);
            T var = T(0);
            for (int i = 0; i < gsize; ++i) var += (xg[i] - mean) * (xg[i] - mean);
            var /= T(gsize);
            const T inv = T(1) / std::sqrt(var + T(eps));
            for (int i = 0; i < gsize; ++i) {
                const int c = g * gsize + i;
                xg[i] = (xg[i] - mean) * inv * scale[c] + shift[c];
            }
        }
    }
}

template <typename T>
Mat<T> ffn_forward(const Mat<T>& x, const Mat<T>& w1, const Mat<T>& w2) {
    Mat<T> h = matmul(x, w1);
    for (auto& v : h.data) v = gelu(v);
    return matmul(h, w2);
}

// --- multi-scale retention ---------------------------------------------------

template <typename T>
struct MsrResult {
    Mat<T> output;
    std::vector<HeadState<T>> states;
};

namespace detail {

template <typename T>
void check_msr_inputs(const MsrParams<T>& p, const Mat<T>& x, const std::vector<HeadState<T>>& states,
                      long long token_offset) {
    if (token_offset < 0) throw std::invalid_argument("msr_forward: negative token offset");
    if (x.rows < 1) throw std::invalid_argument("msr_forward: empty input");
    const int d_model = p.w_g.rows;
    if (x.cols != d_model) throw std::invalid_argument("msr_forward: input width mismatch");
    if (states.size() != p.heads.size()) throw std::invalid_argument("msr_forward: state count mismatch");
    const int dh = d_model / static_cast<int>(p.heads.size());
    for (const auto& s : states)
        if (s.rows != dh || s.cols != dh) throw std::invalid_argument("msr_forward: state shape mismatch");
}

// Gate and output projection shared by every retention path:
// (swish(x W_G) (.) group_norm(Y)) W_O.
template <typename T>
Mat<T> msr_combine(const MsrParams<T>& p, const Mat<T>& x, Mat<T>&& concat, double gn_eps) {
    group_norm_inplace(concat, static_cast<int>(p.heads.size()), gn_eps, p.gn_scale, p.gn_shift);
    Mat<T> gate = matmul(x, p.w_g);
    for (auto& v : gate.data) v = swish(v);
    hadamard_inplace(concat, gate);
    return matmul(concat, p.w_o);
}

}  // namespace detail

// x is the (already layer-normalized) sublayer input of one chunk.
template <typename T>
MsrResult<T> msr_forward(const MsrParams<T>& p, const Mat<T>& x, const std::vector<HeadState<T>>& states,
                         long long token_offset, RetentionMode mode, const RotationAngles& angles,
                         double gn_eps = 1e-6) {
    detail::check_msr_inputs(p, x, states, token_offset);
    const int h = static_cast<int>(p.heads.size());
    const int n = x.rows;
    const int dh = x.cols / h;

    if (mode == RetentionMode::parallel) {
        for (const auto& s : states)
            if (!is_zero(s)) throw std::invalid_argument("msr_forward: parallel mode requires zero incoming state");
    }

    Mat<T> concat(n, x.cols);
    MsrResult<T> out;
    out.states.resize(h);
    for (int i = 0; i < h; ++i) {
        const auto& hp = p.heads[i];
        Mat<T> q = apply_position_rotation(matmul(x, hp.w_q), token_offset, angles, false);
        Mat<T> k = apply_position_rotation(matmul(x, hp.w_k), token_offset, angles, true);
        Mat<T> v = matmul(x, hp.w_v);

        Mat<T> y;
        if (mode == RetentionMode::recurrent) {
            HeadState<T> s = states[i];
            y = Mat<T>(n, dh);
            for (int t = 0; t < n; ++t) retention_recurrent_step_inplace(s, q.row(t), k.row(t), v.row(t), hp.eta, y.row(t));
            out.states[i] = std::move(s);
        } else {
            auto res = detail::retention_chunk_core(q, k, v, states[i], hp.eta);
            y = std::move(res.output);
            out.states[i] = std::move(res.state);
        }
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < dh; ++c) concat(r, i * dh + c) = y(r, c);
    }
    out.output = detail::msr_combine(p, x, std::move(concat), gn_eps);
    return out;
}

// --- layer / stack -----------------------------------------------------------

template <typename T>
struct LayerResult {
    Mat<T> output;
    std::vector<HeadState<T>> states;
};

// Pre-norm residual wiring: y = MSR(LN(x)) + x; out = FFN(LN(y)) + y.
template <typename T>
LayerResult<T> layer_forward(const LayerParams<T>& p, const Mat<T>& x, const std::vector<HeadState<T>>& states,
                             long long token_offset, RetentionMode mode, const RotationAngles& angles,
                             double ln_eps = 1e-6, double gn_eps = 1e-6) {
    Mat<T> a = layer_norm(x, p.ln1, ln_eps);
    auto msr = msr_forward(p.msr, a, states, token_offset, mode, angles, gn_eps);
    Mat<T> y = std::move(msr.output);
    add_inplace(y, x);
    Mat<T> b = layer_norm(y, p.ln2, ln_eps);
    Mat<T> out = ffn_forward(b, p.ffn_w1, p.ffn_w2);
    add_inplace(out, y);
    return {std::move(out), std::move(msr.states)};
}

template <typename T>
struct StackResult {
    Mat<T> output;
    LayerStates<T> states;
};

// One contiguous span of tokens through every layer.
template <typename T>
StackResult<T> stack_forward(const StackParams<T>& p, const Mat<T>& x, const LayerStates<T>& states,
                             long long token_offset, RetentionMode mode) {
    if (states.s.size() != p.layers.size()) throw std::invalid_argument("stack_forward: layer state count mismatch");
    StackResult<T> r{x, states};
    for (size_t l = 0; l < p.layers.size(); ++l) {
        auto lr = layer_forward(p.layers[l], r.output, r.states.s[l], token_offset, mode, p.angles, p.config.ln_eps,
                                p.config.gn_eps);
        r.output = std::move(lr.output);
        r.states.s[l] = std::move(lr.states);
    }
    return r;
}

template <typename T>
struct StackChunkwiseResult {
    std::vector<Mat<T>> outputs;
    LayerStates<T> states;
};

// Ordered chunks threaded through the stack, carrying states and absolute
// token positions between chunks.
template <typename T>
StackChunkwiseResult<T> stack_forward_chunkwise(const StackParams<T>& p, const std::vector<Mat<T>>& chunks,
                                                const LayerStates<T>& initial, long long initial_token_offset = 0) {
    if (chunks.empty()) throw std::invalid_argument("stack_forward_chunkwise: empty chunk list");
    StackChunkwiseResult<T> r;
    r.states = initial;
    long long offset = initial_token_offset;
    for (const auto& chunk : chunks) {
        auto sr = stack_forward(p, chunk, r.states, offset, RetentionMode::chunkwise);
        offset += chunk.rows;
        r.outputs.push_back(std::move(sr.output));
        r.states = std::move(sr.states);
    }
    return r;
}

// Single-token step mutating states in place: the serial reference path used
// by the token-by-token generation mode. Equivalent to stack_forward on a
// one-row chunk (covered by tests), without the per-call state copies.
template <typename T>
std::vector<T> stack_step_inplace(const StackParams<T>& p, const T* row, LayerStates<T>& states,
                                  long long token_offset) {
    const int d_model = p.config.d_model;
    const int h = p.config.heads;
    const int dh = p.config.d_head();
    std::vector<T> x(row, row + d_model);
    std::vector<T> a(d_model), concat(d_model), tmp(d_model);
    std::vector<T> q(dh), k(dh), v(dh), yh(dh);
    Mat<T> arow(1, d_model);

    for (size_t l = 0; l < p.layers.size(); ++l) {
        const auto& lp = p.layers[l];
        layer_norm_row(x.data(), a.data(), d_model, lp.ln1, p.config.ln_eps);

        for (int i = 0; i < h; ++i) {
            const auto& hp = lp.msr.heads[i];
            rowvec_matmul(a.data(), hp.w_q, q.data());
            rowvec_matmul(a.data(), hp.w_k, k.data());
            rowvec_matmul(a.data(), hp.w_v, v.data());
            const double pos = static_cast<double>(token_offset);
            for (int j = 0; j < dh / 2; ++j) {
                const double phi = pos * p.angles.theta[j];
                const T c = static_cast<T>(std::cos(phi));
                const T s = static_cast<T>(std::sin(phi));
                const T q0 = q[2 * j], q1 = q[2 * j + 1];
                q[2 * j] = q0 * c - q1 * s;
                q[2 * j + 1] = q0 * s + q1 * c;
                const T k0 = k[2 * j], k1 = k[2 * j + 1];
                k[2 * j] = k0 * c - k1 * s;
                k[2 * j + 1] = k0 * s + k1 * c;
            }
            retention_recurrent_step_inplace(states.s[l][i], q.data(), k.data(), v.data(), hp.eta, yh.data());
            std::copy(yh.begin(), yh.end(), concat.begin() + static_cast<size_t>(i) * dh);
        }

        std::copy(a.begin(), a.end(), arow.data.begin());
        Mat<T> crow(1, d_model);
        std::copy(concat.begin(), concat.end(), crow.data.begin());
        Mat<T> m = detail::msr_combine(lp.msr, arow, std::move(crow), p.config.gn_eps);
        for (int c = 0; c < d_model; ++c) x[c] += m(0, c);

        layer_norm_row(x.data(), a.data(), d_model, lp.ln2, p.config.ln_eps);
        std::vector<T> hid(p.config.d_ffn);
        rowvec_matmul(a.data(), lp.ffn_w1, hid.data());
        for (auto& hv : hid) hv = gelu(hv);
        rowvec_matmul(hid.data(), lp.ffn_w2, tmp.data());
        for (int c = 0; c < d_model; ++c) x[c] += tmp[c];
    }
    return x;
}

}  // namespace rpop
