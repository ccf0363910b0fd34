#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bayesgap/core.hpp"
#include "bayesgap/episode.hpp"
#include "bayesgap/gap.hpp"
#include "bayesgap/parallel.hpp"
#include "bayesgap/stats.hpp"

namespace bayesgap::theory {

struct BoundParams {
    double beta = 0.0;
    double sigma = 1.0;
    double eta = 1.0;
    double norm = 1.0;  // ‖x_k‖
};

/// Ceiling on arm k's confidence diameter after N pulls of that arm alone:
/// g_k(N) = 2β sqrt(σ²‖x_k‖² / (σ²/η² + N‖x_k‖²)). Decreasing in N.
inline double g_k(double pulls, const BoundParams& p) {
    const double n2 = p.norm * p.norm;
    const double s2 = p.sigma * p.sigma;
    return 2.0 * p.beta * std::sqrt(s2 * n2 / (s2 / (p.eta * p.eta) + pulls * n2));
}

/// Inverse of g_k: 4(βσ)²/s² - (σ²/η²)/‖x_k‖². Negative for large s.
inline double g_k_inverse(double s, const BoundParams& p) {
    const double bs = p.beta * p.sigma;
    return 4.0 * bs * bs / (s * s) - (p.sigma * p.sigma) / (p.eta * p.eta) / (p.norm * p.norm);
}

/// Σ_k g_k⁻¹(H_kε) - (T - K) with β from `compute_beta` on the same inputs.
/// The budget T - K is floored at zero, as in `compute_beta`. Returns nullopt
/// when H_ε is infinite (β = 0) and the identity does not apply.
inline std::optional<double> budget_identity_check(long horizon, Eigen::Index num_arms, const ModelConfig& cfg,
                                                   const Vector& arm_norms, const HardnessEstimate& hardness) {
    const double beta = compute_beta(horizon, num_arms, cfg, arm_norms, hardness);
    if (hardness.infinite()) return std::nullopt;
    double total = 0.0;
    for (Eigen::Index k = 0; k < num_arms; ++k) {
        total += g_k_inverse(hardness.h_k[k], {beta, cfg.sigma, cfg.eta, arm_norms[k]});
    }
    return total - static_cast<double>(std::max<long>(horizon - static_cast<long>(num_arms), 0));
}

/// Lower bound on Pr(|X - μ| ≤ βσ) for Gaussian X: 1 - e^{-β²/2}.
inline double gaussian_deviation_bound(double beta) {
    if (!(beta >= 0.0)) throw Error(ErrorCode::InvalidConfig, "beta must be nonnegative");
    return 1.0 - std::exp(-0.5 * beta * beta);
}

struct RegretBound {
    double epsilon = 0.0;
    double delta = 1.0;       // e^{-β²/2}, per-bound failure probability
    double prob_bound = 0.0;  // 1 - K T delta, lower bound on Pr(R ≤ ε)

    bool vacuous() const { return prob_bound <= 0.0; }
};

inline RegretBound simple_regret_bound(Eigen::Index num_arms, long horizon, double beta, double epsilon = 0.0) {
    if (num_arms < 1 || horizon < 1) throw Error(ErrorCode::InvalidConfig, "K and T must be at least 1");
    RegretBound b;
    b.epsilon = epsilon;
    b.delta = std::exp(-0.5 * beta * beta);
    b.prob_bound = 1.0 - static_cast<double>(num_arms) * static_cast<double>(horizon) * b.delta;
    return b;
}

/// Oracle β: the exploration constant computed from the true gaps.
inline double oracle_beta(const Vector& true_means, const DesignMatrix& design, const ModelConfig& cfg,
                          long horizon, double epsilon) {
    return compute_beta(horizon, design.arms(), cfg, design.arm_norms(), oracle_hardness(true_means, epsilon));
}

// ---------------------------------------------------------------------------
// Monte Carlo verifiers

struct DeviationCheck {
    double beta = 0.0;
    long samples = 0;
    long exceedances = 0;  // draws with |Z| > β
    double ceiling = 1.0;  // e^{-β²/2}
    double exact = 0.0;    // Pr(|Z| > β) from the error function

    double frequency() const { return samples > 0 ? static_cast<double>(exceedances) / samples : 0.0; }
    bool holds() const { return frequency() <= ceiling; }
};

inline DeviationCheck gaussian_deviation_monte_carlo(double beta, long samples, Rng& rng) {
    DeviationCheck c;
    c.beta = beta;
    c.samples = samples;
    c.ceiling = std::exp(-0.5 * beta * beta);
    c.exact = std::erfc(beta / std::numbers::sqrt2);
    for (long i = 0; i < samples; ++i) {
        if (std::abs(standard_normal(rng)) > beta) ++c.exceedances;
    }
    return c;
}

struct TheoremCheck {
    long horizon = 0;
    Eigen::Index arms = 0;
    double epsilon = 0.0;
    double beta = 0.0;
    long replications = 0;
    long errors = 0;  // episodes with simple regret > ε
    stats::Interval interval;
    double ceiling = 1.0;  // K T e^{-β²/2}

    double rate() const { return replications > 0 ? static_cast<double>(errors) / replications : 0.0; }
    bool vacuous() const { return ceiling >= 1.0; }
    /// Evidence against the bound: the whole interval lies above the ceiling.
    bool violation() const { return !vacuous() && interval.lower > ceiling; }
    /// Stricter reading: the interval's upper edge stays below the ceiling.
    bool upper_within_ceiling() const { return vacuous() || interval.upper <= ceiling; }
};

/// Runs BayesGap with the oracle β on `instance` and estimates Pr(R > ε).
/// Replication r uses streams derived from (seed, r); results are merged by
/// summation, so the worker count does not affect the outcome.
inline TheoremCheck verify_theorem_monte_carlo(const BanditInstance& instance, const ModelConfig& model,
                                               long horizon, double epsilon, long replications,
                                               std::uint64_t seed, unsigned workers = 1) {
    instance.validate();
    TheoremCheck check;
    check.horizon = horizon;
    check.arms = instance.arms();
    check.epsilon = epsilon;
    check.replications = replications;
    check.beta = oracle_beta(instance.true_means, *instance.design, model, horizon, epsilon);
    check.ceiling = static_cast<double>(instance.arms()) * static_cast<double>(horizon) *
                    std::exp(-0.5 * check.beta * check.beta);

    PolicyContext ctx;
    ctx.design = instance.design;
    ctx.model = model;
    ctx.horizon = horizon;
    ctx.epsilon = epsilon;
    ctx.options.fixed_beta = check.beta;

    std::vector<char> failed(static_cast<std::size_t>(replications), 0);
    parallel_for(failed.size(), workers, [&](std::size_t r) {
        BayesGapPolicy policy(ctx);
        SimulatedOracle oracle(instance, seeding::derive(seed, "theorem-env", r));
        const EpisodeTrace trace = run_policy(policy, oracle, horizon);
        failed[r] = instance.simple_regret(trace.recommendation) > epsilon ? 1 : 0;
    });
    for (char f : failed) check.errors += f;
    check.interval = stats::wilson_interval(check.errors, check.replications);
    return check;
}

struct GapBoundCheck {
    long rounds = 0;           // rounds inspected
    long rounds_on_event = 0;  // rounds where every true mean lay inside [L, U]
    long violations = 0;       // (round, suboptimal arm) pairs with B_k < R_k on those rounds
};

/// On rounds where all true means are inside their bounds, the gap index of
/// every suboptimal arm must dominate its simple regret: B_k(t) ≥ μ* - μ_k.
inline GapBoundCheck check_gap_dominates_regret(const std::vector<BoundsSnapshot>& rounds, const Vector& true_means,
                                                double tolerance = 1e-12) {
    GapBoundCheck out;
    const double best = true_means.maxCoeff();
    for (const auto& snap : rounds) {
        ++out.rounds;
        const bool on_event = ((true_means.array() >= snap.lower.array()) &&
                               (true_means.array() <= snap.upper.array())).all();
        if (!on_event) continue;
        ++out.rounds_on_event;
        const GapIndices gi = gap_indices(snap.upper, snap.lower);
        for (Eigen::Index k = 0; k < true_means.size(); ++k) {
            if (true_means[k] >= best) continue;
            if (gi.gaps[k] < best - true_means[k] - tolerance) ++out.violations;
        }
    }
    return out;
}

inline nlohmann::json to_json(const DeviationCheck& c) {
    return {{"check", "gaussian_deviation"},
            {"beta", c.beta},
            {"samples", c.samples},
            {"empirical_rate", c.frequency()},
            {"exact_rate", c.exact},
            {"ceiling", c.ceiling},
            {"verdict", c.holds() ? "holds" : "violated"}};
}

inline nlohmann::json to_json(const TheoremCheck& c) {
    std::string verdict = "holds";
    if (c.vacuous()) {
        verdict = "vacuous";
    } else if (c.violation()) {
        verdict = "violated";
    }
    return {{"check", "simple_regret_theorem"},
            {"K", c.arms},
            {"T", c.horizon},
            {"epsilon", c.epsilon},
            {"beta", c.beta},
            {"replications", c.replications},
            {"errors", c.errors},
            {"empirical_rate", c.rate()},
            {"interval", {c.interval.lower, c.interval.upper}},
            {"ceiling", c.ceiling},
            {"upper_within_ceiling", c.upper_within_ceiling()},
            {"verdict", verdict}};
}

}  // namespace bayesgap::theory
