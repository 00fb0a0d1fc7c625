#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rpop/pop.hpp"
#include "rpop/retnet.hpp"
#include "rpop/rng.hpp"

namespace rpop {

// One environment step as tokens: K observation tokens, one action token,
// the observed reward and termination flag.
struct Block {
    std::vector<int> obs;
    int action = 0;
    double reward = 0.0;
    int done = 0;
};

using TokenTrajectory = std::vector<Block>;

// The world model bundle. Observation tokens are embedded through the
// tokenizer codebook (shared, never owned) via a fixed linear adapter;
// actions and prediction tokens have dedicated tables.
template <typename T>
struct WorldModel {
    ModelConfig cfg;
    StackParams<T> stack;
    Mat<T> codebook;      // N x d_embed
    Mat<T> adapter;       // d_embed x d_model, identity when widths match
    Mat<T> action_table;  // |A| x d_model
    Mat<T> pred_tokens;   // K x d_model
    Mat<T> obs_head;      // d_model x N
    Mat<T> reward_head;   // d_model x reward_dim
    Mat<T> done_head;     // d_model x 2

    template <typename U>
    WorldModel<U> cast() const {
        WorldModel<U> w;
        w.cfg = cfg;
        w.stack = stack.template cast<U>();
        w.codebook = codebook.template cast<U>();
        w.adapter = adapter.template cast<U>();
        w.action_table = action_table.template cast<U>();
        w.pred_tokens = pred_tokens.template cast<U>();
        w.obs_head = obs_head.template cast<U>();
        w.reward_head = reward_head.template cast<U>();
        w.done_head = done_head.template cast<U>();
        return w;
    }
};

inline WorldModel<double> random_world_model(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    WorldModel<double> w;
    w.cfg = cfg;
    w.stack = random_stack(cfg, mix_seed(seed, 1));
    w.codebook = gaussian_mat(cfg.vocab, cfg.d_embed, mix_seed(seed, 2), 0.02);
    w.adapter = cfg.d_embed == cfg.d_model ? Mat<double>::identity(cfg.d_model)
                                           : gaussian_mat(cfg.d_embed, cfg.d_model, mix_seed(seed, 3), 0.02);
    w.action_table = gaussian_mat(cfg.actions, cfg.d_model, mix_seed(seed, 4), 0.02);
    w.pred_tokens = gaussian_mat(cfg.tokens_per_obs, cfg.d_model, mix_seed(seed, 5), 0.02);
    w.obs_head = gaussian_mat(cfg.d_model, cfg.vocab, mix_seed(seed, 6), 0.02);
    w.reward_head = gaussian_mat(cfg.d_model, cfg.reward_dim(), mix_seed(seed, 7), 0.02);
    w.done_head = gaussian_mat(cfg.d_model, 2, mix_seed(seed, 8), 0.02);
    return w;
}

namespace detail {

template <typename T>
void check_block(const WorldModel<T>& w, const Block& b, int block_index) {
    if (static_cast<int>(b.obs.size()) != w.cfg.tokens_per_obs)
        throw std::invalid_argument("block " + std::to_string(block_index) + ": expected " +
                                    std::to_string(w.cfg.tokens_per_obs) + " observation tokens, got " +
                                    std::to_string(b.obs.size()));
    for (size_t k = 0; k < b.obs.size(); ++k)
        if (b.obs[k] < 0 || b.obs[k] >= w.cfg.vocab)
            throw std::invalid_argument("block " + std::to_string(block_index) + ", slot " + std::to_string(k) +
                                        ": observation token " + std::to_string(b.obs[k]) +
                                        " outside vocabulary [0," + std::to_string(w.cfg.vocab) + ")");
    if (b.action < 0 || b.action >= w.cfg.actions)
        throw std::invalid_argument("block " + std::to_string(block_index) + ": action token " +
                                    std::to_string(b.action) + " outside action set [0," +
                                    std::to_string(w.cfg.actions) + ")");
}

}  // namespace detail

// K codebook lookups through the adapter followed by one action embedding.
template <typename T>
Mat<T> embed_block(const WorldModel<T>& w, const Block& b, int block_index = 0) {
    detail::check_block(w, b, block_index);
    const int K = w.cfg.tokens_per_obs;
    Mat<T> latents(K, w.cfg.d_embed);
    for (int k = 0; k < K; ++k) {
        const T* src = w.codebook.row(b.obs[k]);
        std::copy(src, src + w.cfg.d_embed, latents.row(k));
    }
    Mat<T> rows = matmul(latents, w.adapter);
    Mat<T> out(K + 1, w.cfg.d_model);
    std::copy(rows.data.begin(), rows.data.end(), out.data.begin());
    const T* act = w.action_table.row(b.action);
    std::copy(act, act + w.cfg.d_model, out.row(K));
    return out;
}

// Embeddings grouped into chunks of blocks_per_chunk complete blocks; the
// last chunk may be shorter.
template <typename T>
std::vector<Mat<T>> embed_trajectory(const WorldModel<T>& w, const TokenTrajectory& traj) {
    if (traj.empty()) throw std::invalid_argument("embed_trajectory: empty trajectory");
    const int bt = w.cfg.block_tokens();
    std::vector<Mat<T>> chunks;
    for (size_t first = 0; first < traj.size(); first += w.cfg.blocks_per_chunk) {
        const int nb = static_cast<int>(std::min<size_t>(w.cfg.blocks_per_chunk, traj.size() - first));
        Mat<T> chunk(nb * bt, w.cfg.d_model);
        for (int j = 0; j < nb; ++j) {
            Mat<T> be = embed_block(w, traj[first + j], static_cast<int>(first) + j);
            std::copy(be.data.begin(), be.data.end(), chunk.row(j * bt));
        }
        chunks.push_back(std::move(chunk));
    }
    return chunks;
}

template <typename T>
struct TrainForwardOutput {
    std::vector<Mat<T>> obs_logits;  // per step: K x N
    Mat<T> reward_out;               // H x reward_dim
    Mat<T> done_logits;              // H x 2
    LayerStates<T> final_states;
};

// Training-mode forward: every chunk through the POP forward, observation
// logits from the prediction banks (block t's bank sees the prefix through
// block t-1), reward/termination from the action-position outputs.
template <typename T>
TrainForwardOutput<T> train_forward(const WorldModel<T>& w, const TokenTrajectory& segment) {
    if (segment.empty()) throw std::invalid_argument("train_forward: empty segment");
    const int H = static_cast<int>(segment.size());
    auto chunks = embed_trajectory(w, segment);

    TrainForwardOutput<T> out;
    out.reward_out = Mat<T>(H, w.cfg.reward_dim());
    out.done_logits = Mat<T>(H, 2);
    out.final_states = LayerStates<T>::zeros(w.cfg);

    long long first_block = 0;
    for (const auto& chunk : chunks) {
        auto pc = pop_chunkwise_forward(w.stack, chunk, w.pred_tokens, out.final_states, first_block);
        out.final_states = std::move(pc.states);
        const int nb = static_cast<int>(pc.obs_outputs.size());
        for (int j = 0; j < nb; ++j) {
            out.obs_logits.push_back(matmul(pc.obs_outputs[j], w.obs_head));
            const int t = static_cast<int>(first_block) + j;
            Mat<T> tail(1, w.cfg.d_model);
            std::copy(pc.block_tail_outputs.row(j), pc.block_tail_outputs.row(j) + w.cfg.d_model, tail.data.begin());
            Mat<T> r = matmul(tail, w.reward_head);
            std::copy(r.data.begin(), r.data.end(), out.reward_out.row(t));
            Mat<T> d = matmul(tail, w.done_head);
            std::copy(d.data.begin(), d.data.end(), out.done_logits.row(t));
        }
        first_block += nb;
    }
    return out;
}

// --- losses -------------------------------------------------------------

struct WmLoss {
    double obs_ce = 0.0;
    double reward_loss = 0.0;
    double done_ce = 0.0;
};

namespace detail {

constexpr double kLogitCap = 30.0;  // keeps softmax finite in reduced precision

inline double capped(double v) { return std::min(kLogitCap, std::max(-kLogitCap, v)); }

template <typename T>
double cross_entropy_row(const T* logits, int n, int target) {
    double mx = -kLogitCap;
    for (int i = 0; i < n; ++i) mx = std::max(mx, capped(static_cast<double>(logits[i])));
    double lse = 0.0;
    for (int i = 0; i < n; ++i) lse += std::exp(capped(static_cast<double>(logits[i])) - mx);
    return std::log(lse) + mx - capped(static_cast<double>(logits[target]));
}

inline int reward_class(double r) { return r < 0.0 ? 0 : (r > 0.0 ? 2 : 1); }

}  // namespace detail

// Mean cross-entropy over all H*K observation tokens and over the H
// termination flags; reward per mode (categorical over sign(r) by default).
template <typename T>
WmLoss wm_loss(const TrainForwardOutput<T>& out, const TokenTrajectory& targets, RewardMode reward_mode) {
    const int H = static_cast<int>(targets.size());
    if (static_cast<int>(out.obs_logits.size()) != H || out.reward_out.rows != H || out.done_logits.rows != H)
        throw std::invalid_argument("wm_loss: output/target length mismatch");
    if (reward_mode == RewardMode::categorical && out.reward_out.cols != 3)
        throw std::invalid_argument("wm_loss: categorical reward mode needs a 3-way head");
    if (reward_mode == RewardMode::mse && out.reward_out.cols != 1)
        throw std::invalid_argument("wm_loss: mse reward mode needs a scalar head");

    WmLoss loss;
    long long n_obs = 0;
    for (int t = 0; t < H; ++t) {
        const auto& lg = out.obs_logits[t];
        const int K = lg.rows;
        if (static_cast<int>(targets[t].obs.size()) != K) throw std::invalid_argument("wm_loss: token count mismatch");
        for (int k = 0; k < K; ++k) {
            loss.obs_ce += detail::cross_entropy_row(lg.row(k), lg.cols, targets[t].obs[k]);
            ++n_obs;
        }
        loss.done_ce += detail::cross_entropy_row(out.done_logits.row(t), 2, targets[t].done ? 1 : 0);
        if (reward_mode == RewardMode::categorical) {
            loss.reward_loss += detail::cross_entropy_row(out.reward_out.row(t), 3, detail::reward_class(targets[t].reward));
        } else {
            const double d = static_cast<double>(out.reward_out(t, 0)) - targets[t].reward;
            loss.reward_loss += d * d;
        }
    }
    loss.obs_ce /= static_cast<double>(n_obs);
    loss.done_ce /= static_cast<double>(H);
    loss.reward_loss /= static_cast<double>(H);
    return loss;
}

// States after the plain chunkwise forward over the context blocks.
template <typename T>
LayerStates<T> summarize_context(const WorldModel<T>& w, const TokenTrajectory& context) {
    if (context.empty()) throw std::invalid_argument("summarize_context: empty context");
    auto chunks = embed_trajectory(w, context);
    return stack_forward_chunkwise(w.stack, chunks, LayerStates<T>::zeros(w.cfg)).states;
}

// --- imagination ----------------------------------------------------------

enum class StepMode { pop_default, pop_combined };
enum class GenMode { pop_default, pop_combined, no_pop_oracle };

struct Sampler {
    double temperature = 0.5;
    SplitMix64 rng{0};

    // Temperature-scaled softmax draw; temperature 0 is argmax with
    // lowest-index tie breaking.
    template <typename T>
    int sample_row(const T* logits, int n) {
        if (temperature <= 0.0) {
            int best = 0;
            for (int i = 1; i < n; ++i)
                if (static_cast<double>(logits[i]) > static_cast<double>(logits[best])) best = i;
            return best;
        }
        std::vector<double> p(n);
        double mx = -detail::kLogitCap;
        for (int i = 0; i < n; ++i) mx = std::max(mx, detail::capped(static_cast<double>(logits[i])) / temperature);
        double z = 0.0;
        for (int i = 0; i < n; ++i) {
            p[i] = std::exp(detail::capped(static_cast<double>(logits[i])) / temperature - mx);
            z += p[i];
        }
        double u = rng.next_unit() * z;
        for (int i = 0; i < n; ++i) {
            u -= p[i];
            if (u < 0.0) return i;
        }
        return n - 1;
    }
};

// Rollout position bookkeeping: the recurrent states plus the number of
// blocks they summarize (fixes the absolute token positions of what follows).
template <typename T>
struct RolloutState {
    LayerStates<T> states;
    long long blocks_consumed = 0;
};

template <typename T>
struct StepOutput {
    std::vector<int> next_obs;
    std::optional<double> reward;
    std::optional<int> done;
    int calls = 0;
    std::vector<int> call_costs;
};

namespace detail {

template <typename T>
double reward_from_row(const WorldModel<T>& w, const T* row) {
    if (w.cfg.reward_mode == RewardMode::mse) return static_cast<double>(row[0]);
    // expectation over the {-1, 0, +1} classes
    double mx = -kLogitCap;
    for (int i = 0; i < 3; ++i) mx = std::max(mx, capped(static_cast<double>(row[i])));
    double z = 0.0, e = 0.0;
    const double vals[3] = {-1.0, 0.0, 1.0};
    for (int i = 0; i < 3; ++i) {
        const double p = std::exp(capped(static_cast<double>(row[i])) - mx);
        z += p;
        e += p * vals[i];
    }
    return e / z;
}

template <typename T>
int done_from_row(const T* row, Sampler& sampler) {
    return sampler.sample_row(row, 2);
}

// Consumes one observation-action block into the states (one chunkwise call)
// and reads reward/termination off the action-position output.
template <typename T>
void consume_block_chunkwise(const WorldModel<T>& w, RolloutState<T>& rs, const Block& b, Sampler& sampler,
                             StepOutput<T>& out) {
    Mat<T> e = embed_block(w, b);
    auto sr = stack_forward(w.stack, e, rs.states, rs.blocks_consumed * w.cfg.block_tokens(),
                            RetentionMode::chunkwise);
    rs.states = std::move(sr.states);
    rs.blocks_consumed += 1;
    const T* tail = sr.output.row(e.rows - 1);
    std::vector<T> rrow(w.cfg.reward_dim()), drow(2);
    rowvec_matmul(tail, w.reward_head, rrow.data());
    rowvec_matmul(tail, w.done_head, drow.data());
    out.reward = reward_from_row(w, rrow.data());
    out.done = done_from_row(drow.data(), sampler);
}

// All K next-observation tokens in one pass from the prediction bank; the
// states are read but never written.
template <typename T>
std::vector<int> sample_obs_from_bank(const WorldModel<T>& w, const Mat<T>& bank_out, Sampler& sampler) {
    Mat<T> logits = matmul(bank_out, w.obs_head);
    std::vector<int> tokens(logits.rows);
    for (int k = 0; k < logits.rows; ++k) tokens[k] = sampler.sample_row(logits.row(k), logits.cols);
    return tokens;
}

}  // namespace detail

// One imagination step. pop_default: two sequential calls, block consumption
// (cost K+1) then the prediction bank (cost K). pop_combined: one POP call on
// [block || prediction bank] (cost 2K+1) whose returned state excludes the
// bank. prev_block may be absent only at the handoff from summarize_context,
// in which case only the bank call runs and no reward/termination is emitted.
template <typename T>
StepOutput<T> imagine_step(const WorldModel<T>& w, RolloutState<T>& rs, const std::optional<Block>& prev_block,
                           StepMode mode, Sampler& sampler) {
    const int K = w.cfg.tokens_per_obs;
    StepOutput<T> out;
    if (mode == StepMode::pop_combined) {
        if (!prev_block) throw std::invalid_argument("imagine_step: combined mode requires the previous block");
        Mat<T> e = embed_block(w, *prev_block);
        // One call on [block || prediction bank]: the bank predicts the block
        // after the one consumed, and the returned state excludes the bank.
        auto pc = pop_chunkwise_forward(w.stack, e, w.pred_tokens, rs.states, rs.blocks_consumed, /*bank_shift=*/1);
        rs.states = std::move(pc.states);
        rs.blocks_consumed += 1;
        const T* tail = pc.block_tail_outputs.row(0);
        std::vector<T> rrow(w.cfg.reward_dim()), drow(2);
        rowvec_matmul(tail, w.reward_head, rrow.data());
        rowvec_matmul(tail, w.done_head, drow.data());
        out.reward = detail::reward_from_row(w, rrow.data());
        out.done = detail::done_from_row(drow.data(), sampler);
        out.next_obs = detail::sample_obs_from_bank(w, pc.obs_outputs[0], sampler);
        out.calls = 1;
        out.call_costs = {2 * K + 1};
        return out;
    }

    if (prev_block) {
        detail::consume_block_chunkwise(w, rs, *prev_block, sampler, out);
        out.calls += 1;
        out.call_costs.push_back(K + 1);
    }
    auto bank = stack_forward(w.stack, w.pred_tokens, rs.states, rs.blocks_consumed * w.cfg.block_tokens(),
                              RetentionMode::chunkwise);
    out.next_obs = detail::sample_obs_from_bank(w, bank.output, sampler);
    out.calls += 1;
    out.call_costs.push_back(K);
    return out;
}

// Trace of an imagined rollout. Entry t holds the action taken at step t, the
// predicted reward/termination for that action, and the observation generated
// for step t+1.
struct ImaginationTrace {
    TokenTrajectory blocks;
    long long sequential_calls = 0;
    std::vector<int> call_costs;
};

using Policy = std::function<std::vector<double>(const std::vector<int>& obs, const std::vector<int>& actions)>;

namespace detail {

inline int sample_policy_action(const std::vector<double>& dist, Sampler& sampler) {
    if (sampler.temperature <= 0.0) {
        int best = 0;
        for (size_t i = 1; i < dist.size(); ++i)
            if (dist[i] > dist[best]) best = static_cast<int>(i);
        return best;
    }
    double u = sampler.rng.next_unit();
    for (size_t i = 0; i < dist.size(); ++i) {
        u -= dist[i];
        if (u < 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(dist.size()) - 1;
}

inline void check_policy_dist(const std::vector<double>& dist, int actions) {
    if (static_cast<int>(dist.size()) != actions)
        throw std::invalid_argument("imagine_rollout: policy distribution has wrong size");
    double sum = 0.0;
    for (double p : dist) {
        if (!(p >= 0.0)) throw std::invalid_argument("imagine_rollout: policy distribution has negative mass");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw std::invalid_argument("imagine_rollout: policy distribution does not sum to 1");
}

// Token-by-token generation with the same model: consume the previous block
// one token at a time, then sample each observation token from a single-token
// call on a scratch copy of the states. Only the K observation-prediction
// calls are counted, matching the sequential-call accounting of the batched
// modes; the block consumption is the same work the batched call 1 performs.
template <typename T>
StepOutput<T> oracle_step(const WorldModel<T>& w, RolloutState<T>& rs, const Block& prev_block, Sampler& sampler) {
    const int K = w.cfg.tokens_per_obs;
    StepOutput<T> out;

    Mat<T> e = embed_block(w, prev_block);
    const long long base = rs.blocks_consumed * w.cfg.block_tokens();
    std::vector<T> y;
    for (int r = 0; r < e.rows; ++r) y = stack_step_inplace(w.stack, e.row(r), rs.states, base + r);
    rs.blocks_consumed += 1;
    std::vector<T> rrow(w.cfg.reward_dim()), drow(2);
    rowvec_matmul(y.data(), w.reward_head, rrow.data());
    rowvec_matmul(y.data(), w.done_head, drow.data());
    out.reward = reward_from_row(w, rrow.data());
    out.done = done_from_row(drow.data(), sampler);

    LayerStates<T> scratch = rs.states;  // prediction tokens must not touch the real states
    const long long bank_base = rs.blocks_consumed * w.cfg.block_tokens();
    out.next_obs.resize(K);
    std::vector<T> logits(w.cfg.vocab);
    for (int k = 0; k < K; ++k) {
        std::vector<T> o = stack_step_inplace(w.stack, w.pred_tokens.row(k), scratch, bank_base + k);
        rowvec_matmul(o.data(), w.obs_head, logits.data());
        out.next_obs[k] = sampler.sample_row(logits.data(), w.cfg.vocab);
        out.calls += 1;
        out.call_costs.push_back(1);
    }
    return out;
}

}  // namespace detail

// Imagination rollout of H steps from a context of real blocks. All context
// blocks but the last are summarized into the states; the last context
// observation is the first observation the policy acts on, its recorded
// action being replaced by the policy's choice. Sequential call counts per
// mode: 2H (pop_default), H (pop_combined), K*H (no_pop_oracle). Termination
// predictions are recorded but do not stop the rollout.
template <typename T>
ImaginationTrace imagine_rollout(const WorldModel<T>& w, const TokenTrajectory& context, const Policy& policy,
                                 int horizon, GenMode mode, Sampler sampler) {
    if (horizon < 1) throw std::invalid_argument("imagine_rollout: horizon must be >= 1");
    if (context.empty()) throw std::invalid_argument("imagine_rollout: empty context");

    RolloutState<T> rs{LayerStates<T>::zeros(w.cfg), 0};
    std::vector<int> action_history;
    if (context.size() > 1) {
        TokenTrajectory head(context.begin(), context.end() - 1);
        rs.states = summarize_context(w, head);
        rs.blocks_consumed = static_cast<long long>(head.size());
        for (const auto& b : head) action_history.push_back(b.action);
    }
    std::vector<int> cur_obs = context.back().obs;

    ImaginationTrace trace;
    for (int t = 0; t < horizon; ++t) {
        auto dist = policy(cur_obs, action_history);
        detail::check_policy_dist(dist, w.cfg.actions);
        const int action = detail::sample_policy_action(dist, sampler);
        Block prev{cur_obs, action, 0.0, 0};

        StepOutput<T> step;
        switch (mode) {
            case GenMode::pop_default:
                step = imagine_step(w, rs, prev, StepMode::pop_default, sampler);
                break;
            case GenMode::pop_combined:
                step = imagine_step(w, rs, prev, StepMode::pop_combined, sampler);
                break;
            case GenMode::no_pop_oracle:
                step = detail::oracle_step(w, rs, prev, sampler);
                break;
        }
        trace.sequential_calls += step.calls;
        trace.call_costs.insert(trace.call_costs.end(), step.call_costs.begin(), step.call_costs.end());
        trace.blocks.push_back(Block{step.next_obs, action, step.reward.value_or(0.0), step.done.value_or(0)});
        cur_obs = step.next_obs;
        action_history.push_back(action);
    }
    return trace;
}

}  // namespace rpop
