#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "bayesgap/core.hpp"
#include "bayesgap/posterior.hpp"

namespace bayesgap {

struct Bounds {
    Vector upper;
    Vector lower;
    Vector diameter;  // s_k = U_k - L_k
};

/// U = μ̂ + βσ̂, L = μ̂ - βσ̂, s = 2βσ̂.
inline Bounds compute_bounds(const ArmMarginals& m, double beta) {
    if (!(beta >= 0.0)) throw Error(ErrorCode::InvalidConfig, "beta must be nonnegative");
    Bounds b;
    b.upper = m.means + beta * m.stds;
    b.lower = m.means - beta * m.stds;
    b.diameter = 2.0 * beta * m.stds;
    return b;
}

struct GapIndices {
    Vector gaps;  // B_k = max_{i≠k} U_i - L_k
    Arm best = 0;       // J: argmin_k B_k
    Arm runner_up = 1;  // j: argmax_{k≠J} U_k
};

/// O(K) evaluation using the two largest upper bounds. Ties go to the lowest
/// arm index, matching a left-to-right brute-force scan.
inline GapIndices gap_indices(const Vector& upper, const Vector& lower) {
    const Eigen::Index k_arms = upper.size();
    if (k_arms < 2) throw Error(ErrorCode::TooFewArms, "gap indices need at least two arms");
    if (lower.size() != k_arms) throw Error(ErrorCode::DimensionMismatch, "U and L differ in length");

    Arm top = 0;
    for (Arm k = 1; k < k_arms; ++k) {
        if (upper[k] > upper[top]) top = k;
    }
    Arm second = top == 0 ? 1 : 0;
    for (Arm k = 0; k < k_arms; ++k) {
        if (k != top && upper[k] > upper[second]) second = k;
    }

    GapIndices out;
    out.gaps.resize(k_arms);
    for (Arm k = 0; k < k_arms; ++k) {
        out.gaps[k] = (k == top ? upper[second] : upper[top]) - lower[k];
    }
    out.best = 0;
    for (Arm k = 1; k < k_arms; ++k) {
        if (out.gaps[k] < out.gaps[out.best]) out.best = k;
    }
    out.runner_up = out.best == top ? second : top;
    return out;
}

struct HardnessEstimate {
    Vector delta_hat;  // Δ̂_k, clamped at zero
    Vector h_k;        // H_kε = max(½(Δ̂_k + ε), ε)
    double h_eps = 0;  // Σ_k H_kε⁻², +inf when some H_kε = 0
    double epsilon = 0;

    bool infinite() const { return std::isinf(h_eps); }
};

namespace detail {

inline HardnessEstimate hardness_from_gaps(Vector delta, double eps) {
    HardnessEstimate h;
    h.epsilon = eps;
    h.delta_hat = std::move(delta);
    h.h_k.resize(h.delta_hat.size());
    double total = 0.0;
    bool degenerate = false;
    for (Eigen::Index k = 0; k < h.delta_hat.size(); ++k) {
        h.h_k[k] = std::max(0.5 * (h.delta_hat[k] + eps), eps);
        if (h.h_k[k] > 0.0) {
            total += 1.0 / (h.h_k[k] * h.h_k[k]);
        } else {
            degenerate = true;
        }
    }
    h.h_eps = degenerate ? std::numeric_limits<double>::infinity() : total;
    return h;
}

// max over i≠k of values[i], for every k, in O(K).
inline Vector max_excluding_self(const Vector& values) {
    const Eigen::Index n = values.size();
    Arm top = 0;
    for (Arm k = 1; k < n; ++k) {
        if (values[k] > values[top]) top = k;
    }
    double second = -std::numeric_limits<double>::infinity();
    for (Arm k = 0; k < n; ++k) {
        if (k != top) second = std::max(second, values[k]);
    }
    Vector out(n);
    for (Arm k = 0; k < n; ++k) out[k] = k == top ? second : values[top];
    return out;
}

}  // namespace detail

/// Adaptive hardness from posterior marginals: the gap of each arm is bounded
/// using intervals of three posterior standard deviations.
inline HardnessEstimate estimate_hardness(const ArmMarginals& m, double eps) {
    if (m.means.size() < 2) throw Error(ErrorCode::TooFewArms, "hardness needs at least two arms");
    if (!(eps >= 0.0)) throw Error(ErrorCode::InvalidConfig, "epsilon must be nonnegative");
    const Vector optimistic = m.means + 3.0 * m.stds;
    const Vector pessimistic = m.means - 3.0 * m.stds;
    const Vector best_other = detail::max_excluding_self(optimistic);
    const Vector delta = (best_other - pessimistic).cwiseMax(0.0);
    return detail::hardness_from_gaps(delta, eps);
}

/// Hardness from the true means, Δ_k = |max_{i≠k} μ_i - μ_k|.
inline HardnessEstimate oracle_hardness(const Vector& true_means, double eps) {
    if (true_means.size() < 2) throw Error(ErrorCode::TooFewArms, "hardness needs at least two arms");
    if (!(eps >= 0.0)) throw Error(ErrorCode::InvalidConfig, "epsilon must be nonnegative");
    const Vector delta = (detail::max_excluding_self(true_means) - true_means).cwiseAbs();
    return detail::hardness_from_gaps(delta, eps);
}

/// κ = Σ_k ‖x_k‖⁻².
inline double kappa(const Vector& arm_norms) {
    double total = 0.0;
    for (Eigen::Index k = 0; k < arm_norms.size(); ++k) {
        if (!(arm_norms[k] > 0.0)) {
            throw Error(ErrorCode::ZeroNormArm, "arm " + std::to_string(k) + " has a zero feature vector");
        }
        total += 1.0 / (arm_norms[k] * arm_norms[k]);
    }
    return total;
}

/// Exploration constant β² = ((T-K)/σ² + κ/η²) / (4 H_ε), with T-K floored at
/// zero. Returns 0 when H_ε is infinite.
inline double compute_beta(long horizon, Eigen::Index num_arms, const ModelConfig& cfg,
                           const Vector& arm_norms, const HardnessEstimate& hardness) {
    if (horizon <= 0) throw Error(ErrorCode::InvalidConfig, "horizon must be positive");
    if (num_arms < 2) throw Error(ErrorCode::TooFewArms, "beta needs at least two arms");
    if (arm_norms.size() != num_arms) throw Error(ErrorCode::DimensionMismatch, "arm_norms length != K");
    const double k_sum = kappa(arm_norms);
    if (hardness.infinite()) return 0.0;
    const double budget = static_cast<double>(std::max<long>(horizon - static_cast<long>(num_arms), 0));
    const double beta_sq =
        (budget / (cfg.sigma * cfg.sigma) + k_sum / (cfg.eta * cfg.eta)) / (4.0 * hardness.h_eps);
    return std::sqrt(beta_sq);
}

/// Per-round snapshot of the gap machinery plus the running recommendation.
struct GapState {
    Bounds bounds;
    GapIndices indices;
    double beta = 0.0;
    double best_gap_so_far = std::numeric_limits<double>::infinity();
    Arm best_arm_so_far = -1;
    long rounds = 0;

    /// Folds in this round's (J, B_J); strict improvement keeps the earliest round on ties.
    void record_round() {
        const double gap = indices.gaps[indices.best];
        if (rounds == 0 || gap < best_gap_so_far) {
            best_gap_so_far = gap;
            best_arm_so_far = indices.best;
        }
        ++rounds;
    }
};

/// a_t = argmax_{k∈{j,J}} s_k; ties go to J.
inline Arm bayesgap_select(const GapState& state) {
    const Arm big_j = state.indices.best;
    const Arm small_j = state.indices.runner_up;
    return state.bounds.diameter[small_j] > state.bounds.diameter[big_j] ? small_j : big_j;
}

inline Arm bayesgap_recommend(const GapState& state) {
    if (state.rounds == 0) throw Error(ErrorCode::NoRoundsElapsed, "no rounds have elapsed");
    return state.best_arm_so_far;
}

struct RoundGap {
    Arm best;    // J(t)
    double gap;  // B_{J(t)}(t)
};

/// Post-hoc scan: J at the earliest round minimising B_{J(t)}(t).
inline Arm recommend_from_trace(std::span<const RoundGap> trace) {
    if (trace.empty()) throw Error(ErrorCode::NoRoundsElapsed, "empty trace");
    std::size_t best = 0;
    for (std::size_t t = 1; t < trace.size(); ++t) {
        if (trace[t].gap < trace[best].gap) best = t;
    }
    return trace[best].best;
}

}  // namespace bayesgap
