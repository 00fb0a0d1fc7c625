#pragma once

#include <stdexcept>
#include <vector>

#include "rpop/retention.hpp"
#include "rpop/retnet.hpp"

namespace rpop {

// ---------------------------------------------------------------------------
// POP chunkwise forward: alongside the ordinary chunk outputs, compute for
// every observation-action block j of the chunk the outputs of a bank of K
// prediction tokens conditioned on the recurrent state that summarizes the
// trajectory up to block j-1. Bank j stands in for block j's observation and
// occupies exactly the absolute positions of those K tokens. Prediction
// tokens never contribute to the recurrent state.
// ---------------------------------------------------------------------------

// Intermediate state of one (K+1)-token block from the zero state:
// S~ = sum_m eta^(K-m) k_m^T v_m, m = 0..K (0-based within the block).
template <typename T>
HeadState<T> pop_pseudo_states(const Mat<T>& block_k, const Mat<T>& block_v, double eta, int tokens_per_obs) {
    detail::check_eta_closed(eta, "pop_pseudo_states");
    if (block_k.rows != tokens_per_obs + 1 || block_v.rows != tokens_per_obs + 1)
        throw std::invalid_argument("pop_pseudo_states: block must hold exactly K+1 tokens");
    return detail::decayed_outer_sum(block_k, block_v, detail::eta_powers(eta, block_k.rows));
}

// Sequential scan S_j = S~_j + eta^(K+1) S_{j-1}, seeded by the incoming chunk
// state. Returns all boundary states S_0..S_B (S_0 = incoming).
template <typename T>
std::vector<HeadState<T>> pop_recombine_states(const std::vector<HeadState<T>>& pseudo, const HeadState<T>& incoming,
                                               double eta, int tokens_per_obs) {
    detail::check_eta_closed(eta, "pop_recombine_states");
    if (pseudo.empty()) throw std::invalid_argument("pop_recombine_states: empty pseudo-state list");
    const T decay = static_cast<T>(std::pow(eta, static_cast<double>(tokens_per_obs + 1)));
    std::vector<HeadState<T>> out;
    out.reserve(pseudo.size() + 1);
    out.push_back(incoming);
    for (const auto& ps : pseudo) {
        if (!ps.same_shape(incoming)) throw std::invalid_argument("pop_recombine_states: state shape mismatch");
        HeadState<T> s = ps;
        const auto& prev = out.back();
        for (size_t i = 0; i < s.data.size(); ++i) s.data[i] += decay * prev.data[i];
        out.push_back(std::move(s));
    }
    return out;
}

template <typename T>
struct PopLayerResult {
    Mat<T> chunk_output;                // B*(K+1) x d_model
    std::vector<Mat<T>> bank_outputs;   // per block: K x d_model
    std::vector<HeadState<T>> states;   // outgoing, prediction tokens excluded
};

namespace detail {

template <typename T>
Mat<T> slice_rows(const Mat<T>& m, int first, int count) {
    Mat<T> out(count, m.cols);
    std::copy(m.row(first), m.row(first) + static_cast<size_t>(count) * m.cols, out.data.begin());
    return out;
}

}  // namespace detail

// One full layer (pre-norm residuals, MSR, FFN) applied to the chunk and, in
// parallel, to every prediction bank with its own boundary state and position
// offsets. The returned states come from the whole-chunk decay sum, the same
// arithmetic as the plain chunkwise forward; the recombined boundary scan
// reproduces them up to floating-point reassociation (checked in tests).
//
// bank_shift selects what the banks stand in for: 0 means bank j replaces
// chunk block j (training form, conditioned on the state before block j);
// 1 means bank j predicts the block after block j (single-call generation,
// conditioned on the state after block j).
template <typename T>
PopLayerResult<T> pop_layer_forward(const LayerParams<T>& p, const Mat<T>& z, const std::vector<Mat<T>>& banks,
                                    const std::vector<HeadState<T>>& states, long long first_block_index,
                                    const RotationAngles& angles, double ln_eps = 1e-6, double gn_eps = 1e-6,
                                    int bank_shift = 0) {
    if (bank_shift != 0 && bank_shift != 1) throw std::invalid_argument("pop_layer_forward: bank_shift must be 0 or 1");
    if (banks.empty()) throw std::invalid_argument("pop_layer_forward: no prediction banks");
    const int n_banks = static_cast<int>(banks.size());
    const int tokens_per_obs = banks[0].rows;
    const int block_tokens = tokens_per_obs + 1;
    if (first_block_index < 0) throw std::invalid_argument("pop_layer_forward: negative block index");
    if (z.rows != n_banks * block_tokens)
        throw std::invalid_argument("pop_layer_forward: bank count does not match chunk blocks");
    for (const auto& b : banks)
        if (b.rows != tokens_per_obs || b.cols != z.cols)
            throw std::invalid_argument("pop_layer_forward: bank shape mismatch");

    const int h = static_cast<int>(p.msr.heads.size());
    const int d_model = z.cols;
    const int dh = d_model / h;
    const long long chunk_offset = first_block_index * static_cast<long long>(block_tokens);

    PopLayerResult<T> out;

    // Main branch: the ordinary chunkwise layer, bit-identical to layer_forward.
    auto main = layer_forward(p, z, states, chunk_offset, RetentionMode::chunkwise, angles, ln_eps, gn_eps);
    out.chunk_output = std::move(main.output);
    out.states = std::move(main.states);

    // Per-head boundary states S_0..S_B from the pseudo-state scan.
    Mat<T> a = layer_norm(z, p.ln1, ln_eps);
    std::vector<std::vector<HeadState<T>>> boundary(h);
    for (int i = 0; i < h; ++i) {
        const auto& hp = p.msr.heads[i];
        Mat<T> k = apply_position_rotation(matmul(a, hp.w_k), chunk_offset, angles, true);
        Mat<T> v = matmul(a, hp.w_v);
        std::vector<HeadState<T>> pseudo;
        pseudo.reserve(n_banks);
        for (int j = 0; j < n_banks; ++j)
            pseudo.push_back(pop_pseudo_states(detail::slice_rows(k, j * block_tokens, block_tokens),
                                               detail::slice_rows(v, j * block_tokens, block_tokens), hp.eta,
                                               tokens_per_obs));
        boundary[i] = pop_recombine_states(pseudo, states[i], hp.eta, tokens_per_obs);
    }

    // Prediction banks, batched: shared projections over the stacked rows,
    // then per-bank retention with bank j's own state and positions.
    Mat<T> hstack(n_banks * tokens_per_obs, d_model);
    for (int j = 0; j < n_banks; ++j)
        std::copy(banks[j].data.begin(), banks[j].data.end(), hstack.row(j * tokens_per_obs));

    Mat<T> ab = layer_norm(hstack, p.ln1, ln_eps);
    Mat<T> bconcat(hstack.rows, d_model);
    for (int i = 0; i < h; ++i) {
        const auto& hp = p.msr.heads[i];
        Mat<T> q = matmul(ab, hp.w_q);
        Mat<T> k = matmul(ab, hp.w_k);
        Mat<T> v = matmul(ab, hp.w_v);
#pragma omp parallel for schedule(static) if (n_banks >= 3)
        for (int j = 0; j < n_banks; ++j) {
            const long long bank_offset =
                (first_block_index + j + bank_shift) * static_cast<long long>(block_tokens);
            Mat<T> qj = apply_position_rotation(detail::slice_rows(q, j * tokens_per_obs, tokens_per_obs),
                                                bank_offset, angles, false);
            Mat<T> kj = apply_position_rotation(detail::slice_rows(k, j * tokens_per_obs, tokens_per_obs),
                                                bank_offset, angles, true);
            Mat<T> vj = detail::slice_rows(v, j * tokens_per_obs, tokens_per_obs);
            auto res = detail::retention_chunk_core(qj, kj, vj, boundary[i][j + bank_shift], hp.eta);
            for (int r = 0; r < tokens_per_obs; ++r)
                for (int c = 0; c < dh; ++c) bconcat(j * tokens_per_obs + r, i * dh + c) = res.output(r, c);
        }
    }
    Mat<T> bank_msr = detail::msr_combine(p.msr, ab, std::move(bconcat), gn_eps);
    add_inplace(bank_msr, hstack);
    Mat<T> bank_ln = layer_norm(bank_msr, p.ln2, ln_eps);
    Mat<T> bank_out = ffn_forward(bank_ln, p.ffn_w1, p.ffn_w2);
    add_inplace(bank_out, bank_msr);

    out.bank_outputs.reserve(n_banks);
    for (int j = 0; j < n_banks; ++j) out.bank_outputs.push_back(detail::slice_rows(bank_out, j * tokens_per_obs, tokens_per_obs));
    return out;
}

template <typename T>
struct PopChunkOutput {
    std::vector<Mat<T>> obs_outputs;  // per block: K x d_model prediction-bank outputs
    Mat<T> block_tail_outputs;        // per block: the action-position output row
    LayerStates<T> states;
};

// Threads (chunk, banks) through every layer. Banks start from the prediction
// token embeddings at layer 0 and evolve with the layer stack.
template <typename T>
PopChunkOutput<T> pop_chunkwise_forward(const StackParams<T>& p, const Mat<T>& chunk, const Mat<T>& pred_embed,
                                        const LayerStates<T>& incoming, long long first_block_index,
                                        int bank_shift = 0) {
    const int tokens_per_obs = pred_embed.rows;
    const int block_tokens = tokens_per_obs + 1;
    if (chunk.rows < block_tokens || chunk.rows % block_tokens != 0)
        throw std::invalid_argument("pop_chunkwise_forward: chunk must hold complete blocks");
    if (pred_embed.cols != chunk.cols) throw std::invalid_argument("pop_chunkwise_forward: embedding width mismatch");
    if (incoming.s.size() != p.layers.size())
        throw std::invalid_argument("pop_chunkwise_forward: state layer count mismatch");
    const int n_blocks = chunk.rows / block_tokens;

    Mat<T> z = chunk;
    std::vector<Mat<T>> banks(n_blocks, pred_embed);
    PopChunkOutput<T> out;
    out.states = incoming;
    for (size_t l = 0; l < p.layers.size(); ++l) {
        auto lr = pop_layer_forward(p.layers[l], z, banks, out.states.s[l], first_block_index, p.angles,
                                    p.config.ln_eps, p.config.gn_eps, bank_shift);
        z = std::move(lr.chunk_output);
        banks = std::move(lr.bank_outputs);
        out.states.s[l] = std::move(lr.states);
    }
    out.obs_outputs = std::move(banks);
    out.block_tail_outputs = Mat<T>(n_blocks, chunk.cols);
    for (int j = 0; j < n_blocks; ++j) {
        const T* src = z.row((j + 1) * block_tokens - 1);
        std::copy(src, src + chunk.cols, out.block_tail_outputs.row(j));
    }
    return out;
}

// Deliberately sequential reference: forward blocks 1..t-1 as one chunk, then
// one chunkwise pass of the prediction bank at block t's observation
// positions. O(t*K) per block; the parallel path must match it.
template <typename T>
Mat<T> oracle_blockwise_forward(const StackParams<T>& p, const Mat<T>& trajectory_embed, const Mat<T>& pred_embed,
                                int block_index) {
    const int block_tokens = pred_embed.rows + 1;
    const int available = trajectory_embed.rows / block_tokens;
    if (block_index < 1 || block_index > available + 1 || (block_index - 1) * block_tokens > trajectory_embed.rows)
        throw std::invalid_argument("oracle_blockwise_forward: block index out of range");

    LayerStates<T> states = LayerStates<T>::zeros(p.config);
    const long long prefix_rows = static_cast<long long>(block_index - 1) * block_tokens;
    if (prefix_rows > 0) {
        Mat<T> prefix = detail::slice_rows(trajectory_embed, 0, static_cast<int>(prefix_rows));
        states = stack_forward(p, prefix, states, 0, RetentionMode::chunkwise).states;
    }
    return stack_forward(p, pred_embed, states, prefix_rows, RetentionMode::chunkwise).output;
}

}  // namespace rpop
