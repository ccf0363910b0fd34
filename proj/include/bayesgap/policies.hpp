#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bayesgap/core.hpp"
#include "bayesgap/gap.hpp"
#include "bayesgap/posterior.hpp"
#include "bayesgap/stats.hpp"

namespace bayesgap {

/// Per-policy tuning knobs. Each policy reads only the fields it uses.
struct PolicyOptions {
    std::optional<double> fixed_beta;  // bayesgap: skip the adaptive hardness estimate
    bool record_bounds = false;        // bayesgap: keep U/L for every round
    double xi = 0.01;                  // pi, ei: improvement margin over the incumbent
    double gpucb_delta = 0.1;
    double bayesucb_c = 5.0;
    double exploration_scale = 1.0;    // ucbe, ugap: multiplier on a = (T-K)/H_ε
};

/// Everything a policy may see. True means are deliberately absent.
struct PolicyContext {
    std::shared_ptr<const DesignMatrix> design;
    ModelConfig model;
    long horizon = 1;
    double epsilon = 0.0;
    std::uint64_t seed = 0;
    PolicyOptions options;

    Eigen::Index arms() const { return design->arms(); }
};

/// Fixed-budget pure-exploration strategy: `select` for rounds t = 1..T, one
/// `observe` per pulled arm, and a single recommendation at any point.
class Policy {
public:
    virtual ~Policy() = default;
    virtual std::string_view name() const = 0;
    virtual Arm select(long round) = 0;
    virtual void observe(Arm arm, double reward) = 0;
    virtual Arm recommend() const = 0;
    virtual std::unique_ptr<Policy> clone() const = 0;
};

inline constexpr std::array<std::string_view, 8> kPolicyNames = {
    "bayesgap", "ugap", "ucbe", "gpucb", "bayesucb", "thompson", "pi", "ei"};

namespace detail {

inline Arm argmax_lowest(const Vector& values) {
    Arm best = 0;
    for (Arm k = 1; k < values.size(); ++k) {
        if (values[k] > values[best]) best = k;
    }
    return best;
}

template <typename Derived>
class ClonablePolicy : public Policy {
public:
    std::unique_ptr<Policy> clone() const override {
        return std::make_unique<Derived>(static_cast<const Derived&>(*this));
    }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// BayesGap

struct BoundsSnapshot {
    Vector upper;
    Vector lower;
};

/// Gap-based Bayesian best-arm identification. Each `select` recomputes the
/// marginals, the hardness estimate and β, then the bounds and gap indices.
class BayesGapPolicy final : public detail::ClonablePolicy<BayesGapPolicy> {
public:
    explicit BayesGapPolicy(PolicyContext ctx) : ctx_(std::move(ctx)), posterior_(ctx_.model, *ctx_.design) {
        if (ctx_.arms() < 2) throw Error(ErrorCode::TooFewArms, "bayesgap needs at least two arms");
    }

    std::string_view name() const override { return "bayesgap"; }

    Arm select(long /*round*/) override {
        const ArmMarginals m = arm_marginals(posterior_, *ctx_.design);
        double beta = 0.0;
        if (ctx_.options.fixed_beta) {
            beta = *ctx_.options.fixed_beta;
        } else {
            const HardnessEstimate h = estimate_hardness(m, ctx_.epsilon);
            beta = compute_beta(ctx_.horizon, ctx_.arms(), ctx_.model, ctx_.design->arm_norms(), h);
        }
        state_.beta = beta;
        state_.bounds = compute_bounds(m, beta);
        state_.indices = gap_indices(state_.bounds.upper, state_.bounds.lower);
        state_.record_round();
        trace_.push_back({state_.indices.best, state_.indices.gaps[state_.indices.best]});
        if (ctx_.options.record_bounds) bounds_trace_.push_back({state_.bounds.upper, state_.bounds.lower});
        return bayesgap_select(state_);
    }

    void observe(Arm arm, double reward) override { posterior_.update(*ctx_.design, arm, reward); }

    Arm recommend() const override { return bayesgap_recommend(state_); }

    const GapState& state() const { return state_; }
    const Posterior& posterior() const { return posterior_; }
    const std::vector<RoundGap>& trace() const { return trace_; }
    const std::vector<BoundsSnapshot>& bounds_trace() const { return bounds_trace_; }

private:
    PolicyContext ctx_;
    Posterior posterior_;
    GapState state_;
    std::vector<RoundGap> trace_;
    std::vector<BoundsSnapshot> bounds_trace_;
};

// ---------------------------------------------------------------------------
// Bayesian index baselines

inline Arm thompson_select(const Posterior& p, const DesignMatrix& design, Rng& rng) {
    return detail::argmax_lowest(p.sample_arm_means(design, rng));
}

class ThompsonPolicy final : public detail::ClonablePolicy<ThompsonPolicy> {
public:
    explicit ThompsonPolicy(PolicyContext ctx)
        : ctx_(std::move(ctx)), posterior_(ctx_.model, *ctx_.design), rng_(ctx_.seed) {}

    std::string_view name() const override { return "thompson"; }
    Arm select(long /*round*/) override { return thompson_select(posterior_, *ctx_.design, rng_); }
    void observe(Arm arm, double reward) override { posterior_.update(*ctx_.design, arm, reward); }
    Arm recommend() const override { return detail::argmax_lowest(ctx_.design->rows() * posterior_.theta_hat()); }

private:
    PolicyContext ctx_;
    Posterior posterior_;
    Rng rng_;
};

enum class IndexKind { GpUcb, BayesUcb, ProbabilityOfImprovement, ExpectedImprovement };

/// Acquisition values over the posterior marginals. `round` is 1-based.
inline Vector acquisition(IndexKind kind, const ArmMarginals& m, long round, long horizon,
                          const PolicyOptions& opt) {
    const Eigen::Index k_arms = m.means.size();
    const double t = static_cast<double>(round);
    Vector out(k_arms);
    switch (kind) {
        case IndexKind::GpUcb: {
            const double arg = static_cast<double>(k_arms) * t * t * std::numbers::pi * std::numbers::pi /
                               (6.0 * opt.gpucb_delta);
            const double scale = std::sqrt(2.0 * std::log(arg));
            out = m.means + scale * m.stds;
            break;
        }
        case IndexKind::BayesUcb: {
            const double log_t = std::log(static_cast<double>(horizon));
            double level = 1.0 - 1.0 / (t * std::pow(log_t, opt.bayesucb_c));
            if (!(level >= 0.5)) level = 0.5;
            level = std::min(level, 1.0 - 1e-12);
            out = m.means + stats::normal_quantile(level) * m.stds;
            break;
        }
        case IndexKind::ProbabilityOfImprovement:
        case IndexKind::ExpectedImprovement: {
            const double incumbent = m.means.maxCoeff();
            for (Eigen::Index k = 0; k < k_arms; ++k) {
                const double gain = m.means[k] - incumbent - opt.xi;
                const double sd = m.stds[k];
                if (sd <= 0.0) {
                    out[k] = kind == IndexKind::ProbabilityOfImprovement ? (gain > 0.0 ? 1.0 : 0.0)
                                                                         : std::max(gain, 0.0);
                    continue;
                }
                const double z = gain / sd;
                out[k] = kind == IndexKind::ProbabilityOfImprovement
                             ? stats::normal_cdf(z)
                             : gain * stats::normal_cdf(z) + sd * stats::normal_pdf(z);
            }
            break;
        }
    }
    return out;
}

/// GPUCB, BayesUCB, PI and EI: argmax of an acquisition over ρ_kt, and
/// recommend the arm with the highest posterior mean.
class IndexPolicy final : public detail::ClonablePolicy<IndexPolicy> {
public:
    IndexPolicy(IndexKind kind, PolicyContext ctx)
        : kind_(kind), ctx_(std::move(ctx)), posterior_(ctx_.model, *ctx_.design) {}

    std::string_view name() const override {
        switch (kind_) {
            case IndexKind::GpUcb: return "gpucb";
            case IndexKind::BayesUcb: return "bayesucb";
            case IndexKind::ProbabilityOfImprovement: return "pi";
            case IndexKind::ExpectedImprovement: return "ei";
        }
        return "index";
    }

    Arm select(long round) override {
        const ArmMarginals m = arm_marginals(posterior_, *ctx_.design);
        return detail::argmax_lowest(acquisition(kind_, m, round, ctx_.horizon, ctx_.options));
    }

    void observe(Arm arm, double reward) override { posterior_.update(*ctx_.design, arm, reward); }

    Arm recommend() const override { return detail::argmax_lowest(ctx_.design->rows() * posterior_.theta_hat()); }

private:
    IndexKind kind_;
    PolicyContext ctx_;
    Posterior posterior_;
};

// ---------------------------------------------------------------------------
// Frequentist baselines (independent arms, initialization sweep)

/// Running per-arm sample statistics shared by UCBE and UGap.
class EmpiricalArms {
public:
    EmpiricalArms(Eigen::Index arms, double sigma)
        : counts_(Vector::Zero(arms)), sums_(Vector::Zero(arms)), sigma_(sigma) {}

    void add(Arm arm, double reward) {
        check_arm(arm, counts_.size());
        counts_[arm] += 1.0;
        sums_[arm] += reward;
    }

    Eigen::Index arms() const { return counts_.size(); }
    const Vector& counts() const { return counts_; }
    bool all_pulled() const { return counts_.minCoeff() > 0.0; }

    std::optional<Arm> first_unpulled() const {
        for (Arm k = 0; k < counts_.size(); ++k) {
            if (counts_[k] == 0.0) return k;
        }
        return std::nullopt;
    }

    /// Empirical means with standard errors σ/√N_k. Requires every arm pulled.
    ArmMarginals summary() const {
        ArmMarginals m;
        m.means = sums_.cwiseQuotient(counts_);
        m.stds = sigma_ * counts_.cwiseSqrt().cwiseInverse();
        return m;
    }

    /// Exploration constant a = scale·(T-K)/Ĥ_ε with Ĥ_ε from means ± 3 stderr.
    double exploration(long horizon, double eps, double scale) const {
        const HardnessEstimate h = estimate_hardness(summary(), eps);
        if (h.infinite()) return 0.0;
        const double budget = static_cast<double>(std::max<long>(horizon - static_cast<long>(arms()), 0));
        return scale * budget / h.h_eps;
    }

    Vector radius(double a) const { return (a * counts_.cwiseInverse()).cwiseSqrt(); }

    Arm best_mean() const {
        Arm best = -1;
        double value = 0.0;
        for (Arm k = 0; k < counts_.size(); ++k) {
            if (counts_[k] == 0.0) continue;
            const double mean = sums_[k] / counts_[k];
            if (best < 0 || mean > value) {
                best = k;
                value = mean;
            }
        }
        if (best < 0) throw Error(ErrorCode::NoRoundsElapsed, "no arm has been pulled");
        return best;
    }

private:
    Vector counts_;
    Vector sums_;
    double sigma_;
};

inline void require_full_sweep(const PolicyContext& ctx, std::string_view policy) {
    if (ctx.arms() > ctx.horizon) {
        throw Error(ErrorCode::BudgetTooSmallForFrequentist,
                    std::string(policy) + " must pull all " + std::to_string(ctx.arms()) +
                        " arms but the budget is " + std::to_string(ctx.horizon));
    }
}

/// UCB-E: index μ̄_k + sqrt(a/N_k) after one pull of every arm.
class UcbePolicy final : public detail::ClonablePolicy<UcbePolicy> {
public:
    explicit UcbePolicy(PolicyContext ctx) : ctx_(std::move(ctx)), stats_(ctx_.arms(), ctx_.model.sigma) {
        require_full_sweep(ctx_, name());
    }

    std::string_view name() const override { return "ucbe"; }

    Arm select(long /*round*/) override {
        if (auto arm = stats_.first_unpulled()) return *arm;
        const double a = stats_.exploration(ctx_.horizon, ctx_.epsilon, ctx_.options.exploration_scale);
        return detail::argmax_lowest(stats_.summary().means + stats_.radius(a));
    }

    void observe(Arm arm, double reward) override { stats_.add(arm, reward); }
    Arm recommend() const override { return stats_.best_mean(); }

private:
    PolicyContext ctx_;
    EmpiricalArms stats_;
};

/// UGap: the gap machinery driven by empirical bounds μ̄_k ± sqrt(a/N_k).
/// The recommendation scan covers rounds after the sweep; if the sweep used
/// the whole budget, the final statistics are scanned once instead.
class UGapPolicy final : public detail::ClonablePolicy<UGapPolicy> {
public:
    explicit UGapPolicy(PolicyContext ctx) : ctx_(std::move(ctx)), stats_(ctx_.arms(), ctx_.model.sigma) {
        require_full_sweep(ctx_, name());
    }

    std::string_view name() const override { return "ugap"; }

    Arm select(long /*round*/) override {
        if (auto arm = stats_.first_unpulled()) return *arm;
        evaluate(state_);
        state_.record_round();
        return bayesgap_select(state_);
    }

    void observe(Arm arm, double reward) override { stats_.add(arm, reward); }

    Arm recommend() const override {
        if (state_.rounds > 0) return bayesgap_recommend(state_);
        if (!stats_.all_pulled()) return stats_.best_mean();
        GapState final_state;
        evaluate(final_state);
        final_state.record_round();
        return bayesgap_recommend(final_state);
    }

    const GapState& state() const { return state_; }

private:
    void evaluate(GapState& state) const {
        const double a = stats_.exploration(ctx_.horizon, ctx_.epsilon, ctx_.options.exploration_scale);
        const ArmMarginals m = stats_.summary();
        const Vector r = stats_.radius(a);
        state.beta = a;
        state.bounds.upper = m.means + r;
        state.bounds.lower = m.means - r;
        state.bounds.diameter = 2.0 * r;
        state.indices = gap_indices(state.bounds.upper, state.bounds.lower);
    }

    PolicyContext ctx_;
    EmpiricalArms stats_;
    GapState state_;
};

// ---------------------------------------------------------------------------

inline std::unique_ptr<Policy> make_policy(std::string_view name, PolicyContext ctx) {
    if (!ctx.design) throw Error(ErrorCode::InvalidConfig, "policy context has no design matrix");
    if (ctx.horizon < 1) throw Error(ErrorCode::InvalidConfig, "horizon must be at least 1");
    ctx.model.validate();
    if (name == "bayesgap") return std::make_unique<BayesGapPolicy>(std::move(ctx));
    if (name == "thompson") return std::make_unique<ThompsonPolicy>(std::move(ctx));
    if (name == "gpucb") return std::make_unique<IndexPolicy>(IndexKind::GpUcb, std::move(ctx));
    if (name == "bayesucb") return std::make_unique<IndexPolicy>(IndexKind::BayesUcb, std::move(ctx));
    if (name == "pi") return std::make_unique<IndexPolicy>(IndexKind::ProbabilityOfImprovement, std::move(ctx));
    if (name == "ei") return std::make_unique<IndexPolicy>(IndexKind::ExpectedImprovement, std::move(ctx));
    if (name == "ucbe") return std::make_unique<UcbePolicy>(std::move(ctx));
    if (name == "ugap") return std::make_unique<UGapPolicy>(std::move(ctx));
    throw Error(ErrorCode::InvalidConfig, "unknown policy '" + std::string(name) + "'");
}

}  // namespace bayesgap
