#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "rpop/rng.hpp"

namespace rpop {

// ---------------------------------------------------------------------------
// Controller mathematics as pure evaluations on imagined trajectories: no
// networks, no gradients. Loss reductions are means; stop-gradient is the
// identity at evaluation time.
// ---------------------------------------------------------------------------

struct ReturnInputs {
    std::vector<double> rewards;  // H
    std::vector<int> dones;       // H, each 0 or 1
    std::vector<double> values;   // H+1, bootstrap value last
    double gamma = 0.995;
    double lambda = 0.95;
};

// Backward recursion
//   G_t = r_t + gamma (1 - d_t) ((1 - lambda) V_{t+1} + lambda G_{t+1}),
//   G_H = V_H.
inline std::vector<double> lambda_returns(const ReturnInputs& in) {
    const size_t h = in.rewards.size();
    if (in.dones.size() != h || in.values.size() != h + 1)
        throw std::invalid_argument("lambda_returns: rewards/dones/values lengths must be H, H, H+1");
    if (!(in.gamma > 0.0) || in.gamma > 1.0 || in.lambda < 0.0 || in.lambda > 1.0)
        throw std::invalid_argument("lambda_returns: gamma in (0,1], lambda in [0,1]");
    std::vector<double> g(h);
    double next = in.values[h];
    for (size_t i = h; i-- > 0;) {
        const double cont = in.dones[i] ? 0.0 : 1.0;
        g[i] = in.rewards[i] + in.gamma * cont * ((1.0 - in.lambda) * in.values[i + 1] + in.lambda * next);
        next = g[i];
    }
    return g;
}

// Mean of (V_t - sg(G_t))^2.
inline double value_loss(const std::vector<double>& values, const std::vector<double>& returns) {
    if (values.size() != returns.size() || values.empty())
        throw std::invalid_argument("value_loss: length mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < values.size(); ++i) acc += (values[i] - returns[i]) * (values[i] - returns[i]);
    return acc / static_cast<double>(values.size());
}

struct PolicyStep {
    std::vector<double> action_log_probs;
    int chosen_action = 0;
    double return_value = 0.0;  // G_t
    double baseline = 0.0;      // V_t
    double entropy_weight = 0.001;
};

inline std::vector<double> log_softmax(const std::vector<double>& logits) {
    std::vector<double> out(logits.size());
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    const double lse = std::log(z) + mx;
    for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

// REINFORCE with baseline and entropy bonus, averaged over steps:
//   mean_t [ -log pi(a_t) (G_t - V_t) - alpha H(pi_t) ].
inline double policy_loss(const std::vector<PolicyStep>& steps) {
    if (steps.empty()) throw std::invalid_argument("policy_loss: no steps");
    double acc = 0.0;
    for (const auto& s : steps) {
        if (s.action_log_probs.empty() || s.chosen_action < 0 ||
            s.chosen_action >= static_cast<int>(s.action_log_probs.size()))
            throw std::invalid_argument("policy_loss: bad action index");
        double mass = 0.0, entropy = 0.0;
        for (double lp : s.action_log_probs) {
            const double p = std::exp(lp);
            mass += p;
            entropy -= p * lp;
        }
        if (mass > 1.0 + 1e-9 || mass < 1.0 - 1e-6)
            throw std::invalid_argument("policy_loss: action log-probs are not normalized");
        acc += -s.action_log_probs[s.chosen_action] * (s.return_value - s.baseline) - s.entropy_weight * entropy;
    }
    return acc / static_cast<double>(steps.size());
}

// Epsilon-greedy over a temperature-scaled softmax. temperature 0 is argmax
// with lowest-index tie breaking.
inline int sample_action(const std::vector<double>& logits, double temperature, double epsilon, uint64_t seed) {
    if (logits.empty()) throw std::invalid_argument("sample_action: empty action set");
    if (temperature < 0.0) throw std::invalid_argument("sample_action: negative temperature");
    if (epsilon < 0.0 || epsilon > 1.0) throw std::invalid_argument("sample_action: epsilon outside [0,1]");
    SplitMix64 rng(seed);
    const int n = static_cast<int>(logits.size());
    if (epsilon > 0.0 && rng.next_unit() < epsilon) return static_cast<int>(rng.next_below(n));
    if (temperature == 0.0) {
        int best = 0;
        for (int i = 1; i < n; ++i)
            if (logits[i] > logits[best]) best = i;
        return best;
    }
    std::vector<double> scaled(n);
    for (int i = 0; i < n; ++i) scaled[i] = logits[i] / temperature;
    auto lp = log_softmax(scaled);
    double u = rng.next_unit();
    for (int i = 0; i < n; ++i) {
        u -= std::exp(lp[i]);
        if (u < 0.0) return i;
    }
    return n - 1;
}

}  // namespace rpop
