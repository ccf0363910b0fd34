#pragma once

#include <vector>

#include "bayesgap/environments.hpp"
#include "bayesgap/policies.hpp"

namespace bayesgap {

struct EpisodeTrace {
    std::vector<Arm> arms;
    std::vector<double> rewards;
    Arm recommendation = -1;
};

/// The pure-exploration protocol: T rounds of select → pull → observe, then a
/// single recommendation. The loop owns the budget, so a policy can never see
/// more than `horizon` rewards.
inline EpisodeTrace run_policy(Policy& policy, RewardOracle& oracle, long horizon) {
    EpisodeTrace trace;
    trace.arms.reserve(static_cast<std::size_t>(horizon));
    trace.rewards.reserve(static_cast<std::size_t>(horizon));
    for (long t = 1; t <= horizon; ++t) {
        const Arm arm = policy.select(t);
        const double reward = oracle.pull(arm);
        policy.observe(arm, reward);
        trace.arms.push_back(arm);
        trace.rewards.push_back(reward);
    }
    trace.recommendation = policy.recommend();
    return trace;
}

}  // namespace bayesgap
