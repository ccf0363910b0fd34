// Command-line front end: run experiments, check the theory module's bounds by
// simulation, and cache instances to disk.
//
// Exit status: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "bayesgap/harness.hpp"
#include "bayesgap/theory.hpp"

namespace {

using namespace bayesgap;
using nlohmann::json;

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct ConfigFailure {
    std::string message;
};

struct Loaded {
    harness::ExperimentConfig config;
    std::optional<harness::InstanceSource> source;
};

// Everything up to and including instance construction counts as configuration.
Loaded load(const std::string& path, bool build_source) {
    try {
        Loaded l{harness::load_config(path), std::nullopt};
        if (build_source) l.source = harness::InstanceSource::from_json(l.config.instance, l.config.base_dir);
        return l;
    } catch (const Error& e) {
        throw ConfigFailure{std::string(to_string(e.code())) + ": " + e.what()};
    } catch (const json::exception& e) {
        throw ConfigFailure{std::string("malformed config '") + path + "': " + e.what()};
    }
}

int cmd_run(const std::string& config_path, std::optional<std::string> out_dir, std::optional<std::uint64_t> seed,
            std::optional<unsigned> workers) {
    Loaded l = load(config_path, true);
    if (seed) l.config.seed = *seed;
    if (workers) l.config.workers = *workers;
    const std::filesystem::path out = out_dir ? *out_dir : l.config.output;
    const auto result = harness::run_experiment(l.config, *l.source);
    harness::emit_report(result.report, result.episodes, out);
    for (const auto& p : result.report.policies) {
        std::cout << p.policy << ": " << p.completed << '/' << p.episodes << " completed";
        if (p.inapplicable > 0) std::cout << ", " << p.inapplicable << " inapplicable";
        if (p.failed > 0) std::cout << ", " << p.failed << " failed";
        if (p.error_probability) {
            std::cout << ", Pr(error) = " << *p.error_probability << " [" << p.error_interval.lower << ", "
                      << p.error_interval.upper << "]";
        }
        std::cout << '\n';
    }
    std::cout << "wrote " << out.string() << '\n';
    return 0;
}

int cmd_verify_theory(const std::string& config_path, std::optional<std::string> out_path, long samples) {
    const Loaded l = load(config_path, true);
    const auto& cfg = l.config;
    const auto& source = *l.source;
    if (!source.means_known()) throw ConfigFailure{"verify-theory needs an instance with known means"};
    const ModelConfig model = harness::model_for(cfg, source);
    const BanditInstance instance = source.instance(0);

    json checks = json::array();
    bool all_hold = true;
    for (double beta : {1.0, 2.0, 3.0}) {
        Rng rng(seeding::derive(cfg.seed, "deviation", static_cast<std::uint64_t>(beta)));
        const auto c = theory::gaussian_deviation_monte_carlo(beta, samples, rng);
        all_hold = all_hold && c.holds();
        checks.push_back(theory::to_json(c));
    }

    const auto hardness = oracle_hardness(instance.true_means, cfg.epsilon);
    const auto residual = theory::budget_identity_check(cfg.horizon, instance.arms(), model,
                                                        instance.design->arm_norms(), hardness);
    const double tolerance = 1e-6 * std::max(1.0, static_cast<double>(cfg.horizon));
    const bool identity_holds = !residual || std::abs(*residual) <= tolerance;
    all_hold = all_hold && identity_holds;
    checks.push_back({{"check", "budget_identity"},
                      {"residual", residual ? json(*residual) : json(nullptr)},
                      {"tolerance", tolerance},
                      {"verdict", !residual ? "not_applicable" : (identity_holds ? "holds" : "violated")}});

    const auto theorem = theory::verify_theorem_monte_carlo(instance, model, cfg.horizon, cfg.epsilon,
                                                            cfg.replications, cfg.seed, cfg.workers);
    all_hold = all_hold && !theorem.violation();
    checks.push_back(theory::to_json(theorem));

    const json doc = {{"instance", cfg.instance}, {"checks", checks}, {"all_hold", all_hold}};
    if (out_path) {
        std::ofstream out(*out_path);
        if (!(out << doc.dump(2) << '\n')) throw Error(ErrorCode::IoFailure, "cannot write '" + *out_path + "'");
    }
    std::cout << doc.dump(2) << '\n';
    return 0;
}

int cmd_make_instance(const std::string& config_path, const std::string& out_dir) {
    const Loaded l = load(config_path, true);
    harness::write_cached_instance(*l.source, l.config.replications, out_dir);
    std::cout << "wrote K=" << l.source->arms() << " instance to " << out_dir << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fixed-budget best-arm identification over correlated arms"};
    app.require_subcommand(1);
    app.footer(std::string("Config schema:\n") + harness::kConfigSchema);

    std::string config_path;
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> workers;
    long samples = 1'000'000;
    std::string instance_dir;

    auto* run = app.add_subcommand("run", "Run every configured policy for R replications");
    run->add_option("--config", config_path, "Experiment config (JSON)")->required();
    run->add_option("--out", out_dir, "Output directory (default: the config's output field)");
    run->add_option("--seed", seed, "Override the master seed");
    run->add_option("--workers", workers, "Override the worker count")->check(CLI::PositiveNumber);

    auto* verify = app.add_subcommand("verify-theory", "Monte Carlo checks of the regret bounds");
    verify->add_option("--config", config_path, "Experiment config (JSON)")->required();
    verify->add_option("--out", out_dir, "Also write the JSON verdicts to this file");
    verify->add_option("--samples", samples, "Normal draws per deviation check")->check(CLI::PositiveNumber);

    auto* make = app.add_subcommand("make-instance", "Build an instance and cache it as CSV files");
    make->add_option("--config", config_path, "Experiment config (JSON)")->required();
    make->add_option("--out", instance_dir, "Directory for kernel.csv, design.csv, means.csv, instance.json")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << "\nConfig schema:\n" << harness::kConfigSchema;
        return kExitConfig;
    }

    try {
        if (*run) return cmd_run(config_path, out_dir, seed, workers);
        if (*verify) return cmd_verify_theory(config_path, out_dir, samples);
        if (*make) return cmd_make_instance(config_path, instance_dir);
    } catch (const ConfigFailure& e) {
        std::cerr << "config error: " << e.message << "\n\nConfig schema:\n" << harness::kConfigSchema;
        return kExitConfig;
    } catch (const Error& e) {
        std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << '\n';
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitConfig;
}
