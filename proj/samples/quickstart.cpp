// Runs BayesGap and Thompson sampling against one synthetic world with
// correlated arms and prints what each recommends.

#include <cstdio>

#include "bayesgap/episode.hpp"
#include "bayesgap/environments.hpp"
#include "bayesgap/policies.hpp"

int main() {
    using namespace bayesgap;

    // 40 arms on a line; neighbours within a few grid units are strongly correlated.
    Rng rng(2024);
    const BanditInstance world = synthetic_gp_instance(40, {4.0, 1.0}, 0.2, 1.0, rng);
    std::printf("best arm %ld, mean %.3f\n", static_cast<long>(world.best_arm()), world.best_mean());

    PolicyContext ctx;
    ctx.design = world.design;
    ctx.model = {0.2, 1.0};
    ctx.horizon = 60;
    ctx.epsilon = 0.05;

    for (const char* name : {"bayesgap", "thompson"}) {
        ctx.seed = 7;
        const auto policy = make_policy(name, ctx);
        SimulatedOracle oracle(world, 11);
        const EpisodeTrace trace = run_policy(*policy, oracle, ctx.horizon);
        std::printf("%-9s recommends arm %2ld, simple regret %.4f\n", name, static_cast<long>(trace.recommendation),
                    world.simple_regret(trace.recommendation));
    }
}
