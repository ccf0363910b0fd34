#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "bayesgap/core.hpp"
#include "bayesgap/environments.hpp"
#include "bayesgap/external.hpp"
#include "bayesgap/matrix_io.hpp"
#include "bayesgap/parallel.hpp"
#include "bayesgap/policies.hpp"
#include "bayesgap/stats.hpp"
#include "bayesgap/theory.hpp"

namespace bayesgap::harness {

using nlohmann::json;

/// Model noise used when the world is noiseless and no σ is configured. The
/// posterior needs σ > 0; this keeps it numerically interpolating.
inline constexpr double kNoiselessSigmaFactor = 1e-6;

inline constexpr const char* kConfigSchema = R"({
  "instance":     { "type": "synthetic" | "explicit" | "grid" | "empirical" | "external" | "cached", ... },
  "policies":     [ "bayesgap" | { "name": "bayesgap", "label": "...", "oracle_beta": true,
                    "beta": 2.0, "xi": 0.01, "gpucb_delta": 0.1, "bayesucb_c": 5,
                    "exploration_scale": 1 }, ... ],
  "T":            horizon >= 1,
  "epsilon":      tolerance >= 0 (default 0),
  "replications": R >= 1,
  "seed":         master seed (default 0),
  "sigma":        model noise std > 0 (default: the instance noise),
  "eta":          prior std > 0 (default 1),
  "workers":      threads (default 1),
  "output":       output directory (default "out")
}
instance types:
  synthetic  K, length_scale=1, spacing=1, noise_sigma=0.1, eta=1, seed=0, redraw_means=false
  explicit   means[], kernel, noise_sigma=0
  grid       preset="regression_toolbox" | families=[{name, axes:[{name, values[]}]}],
             noise_sigma=0.1, eta=1, seed=0, redraw_means=false
  empirical  history_csv, eval_csv (default history_csv), noise_fraction=0.05, center=true
  external   command[], kernel, timeout_s=600
  cached     path (directory written by make-instance)
kernel:  { "type": "squared_exponential", "K", "length_scale", "spacing" } | { "type": "identity", "K" }
       | { "type": "matrix", "rows": [[...]] } | { "type": "csv", "path" } | { "type": "grid", ... }
policies: bayesgap ugap ucbe gpucb bayesucb thompson pi ei
)";

namespace detail {

[[noreturn]] inline void config_error(const std::string& message) { throw Error(ErrorCode::InvalidConfig, message); }

inline void reject_unknown_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                                const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            config_error("unknown field '" + key + "' in " + where);
        }
    }
}

inline const json& require(const json& obj, const char* key, const std::string& where) {
    const auto it = obj.find(key);
    if (it == obj.end()) config_error("missing field '" + std::string(key) + "' in " + where);
    return *it;
}

template <typename T>
T value_or(const json& obj, const char* key, T fallback) {
    const auto it = obj.find(key);
    return it == obj.end() ? fallback : it->get<T>();
}

inline std::string resolve_path(const std::filesystem::path& base, const std::string& path) {
    const std::filesystem::path p(path);
    return (p.is_absolute() || base.empty() ? p : base / p).string();
}

inline std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::vector<ModelFamily> parse_families(const json& spec, const std::string& where) {
    if (spec.contains("preset")) {
        if (spec.at("preset").get<std::string>() != "regression_toolbox") {
            config_error("unknown grid preset in " + where);
        }
        return regression_toolbox_grid();
    }
    std::vector<ModelFamily> families;
    for (const auto& f : require(spec, "families", where)) {
        ModelFamily family;
        family.name = value_or<std::string>(f, "name", "family");
        for (const auto& a : require(f, "axes", where)) {
            family.axes.push_back({value_or<std::string>(a, "name", "axis"), a.at("values").get<std::vector<double>>()});
        }
        families.push_back(std::move(family));
    }
    return families;
}

inline KernelMatrix parse_kernel(const json& spec, std::optional<Eigen::Index> arms,
                                 const std::filesystem::path& base) {
    const std::string where = "kernel";
    const auto type = require(spec, "type", where).get<std::string>();
    const auto arm_count = [&]() -> Eigen::Index {
        if (spec.contains("K")) return spec.at("K").get<Eigen::Index>();
        if (arms) return *arms;
        config_error("kernel of type '" + type + "' needs K");
    };
    if (type == "squared_exponential") {
        return squared_exponential_kernel(arm_count(), {value_or(spec, "length_scale", 1.0), value_or(spec, "spacing", 1.0)});
    }
    if (type == "identity") return KernelMatrix(Matrix::Identity(arm_count(), arm_count()));
    if (type == "matrix") {
        const auto rows = require(spec, "rows", where).get<std::vector<std::vector<double>>>();
        Matrix g(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != rows.size()) config_error("kernel matrix must be square");
            for (std::size_t j = 0; j < rows.size(); ++j) {
                g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
            }
        }
        return KernelMatrix(std::move(g));
    }
    if (type == "csv") return KernelMatrix(read_matrix_csv(resolve_path(base, require(spec, "path", where).get<std::string>())));
    if (type == "grid") return hyperparameter_grid_kernel(parse_families(spec, where));
    config_error("unknown kernel type '" + type + "'");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Instances

/// The world an experiment runs against. Kernel and design are shared by all
/// replications; the true means for replication r are column r mod M of a
/// K×M table, or a fresh prior draw per replication when `redraw_means` is set.
class InstanceSource {
public:
    static InstanceSource from_json(const json& spec, const std::filesystem::path& base = {}) {
        if (!spec.is_object()) detail::config_error("instance must be an object");
        const auto type = detail::require(spec, "type", "instance").get<std::string>();
        InstanceSource src;
        src.spec_ = spec;
        src.type_ = type;
        if (type == "synthetic" || type == "grid") {
            if (type == "synthetic") {
                detail::reject_unknown_keys(spec, {"type", "K", "length_scale", "spacing", "noise_sigma", "eta", "seed",
                                                   "redraw_means"}, "synthetic instance");
                const auto arms = detail::require(spec, "K", "synthetic instance").get<Eigen::Index>();
                if (arms < 2) throw Error(ErrorCode::TooFewArms, "synthetic instance needs K >= 2");
                src.kernel_ = std::make_shared<const KernelMatrix>(squared_exponential_kernel(
                    arms, {detail::value_or(spec, "length_scale", 1.0), detail::value_or(spec, "spacing", 1.0)}));
            } else {
                detail::reject_unknown_keys(spec, {"type", "preset", "families", "noise_sigma", "eta", "seed",
                                                   "redraw_means"}, "grid instance");
                src.kernel_ = std::make_shared<const KernelMatrix>(
                    hyperparameter_grid_kernel(detail::parse_families(spec, "grid instance")));
            }
            src.design_ = std::make_shared<const DesignMatrix>(kernel_to_design(*src.kernel_));
            src.noise_sigma_ = detail::value_or(spec, "noise_sigma", 0.1);
            src.prior_eta_ = detail::value_or(spec, "eta", 1.0);
            src.means_seed_ = detail::value_or<std::uint64_t>(spec, "seed", 0);
            src.redraw_ = detail::value_or(spec, "redraw_means", false);
            if (!(src.prior_eta_ > 0.0)) detail::config_error("instance eta must be positive");
            Rng rng(src.means_seed_);
            src.means_ = src.design_->rows() * (src.prior_eta_ * standard_normal_vector(src.design_->dim(), rng));
        } else if (type == "explicit") {
            detail::reject_unknown_keys(spec, {"type", "means", "kernel", "noise_sigma"}, "explicit instance");
            const auto means = detail::require(spec, "means", "explicit instance").get<std::vector<double>>();
            src.means_ = Eigen::Map<const Vector>(means.data(), static_cast<Eigen::Index>(means.size()));
            src.kernel_ = std::make_shared<const KernelMatrix>(
                detail::parse_kernel(detail::require(spec, "kernel", "explicit instance"), src.means_.rows(), base));
            src.design_ = std::make_shared<const DesignMatrix>(kernel_to_design(*src.kernel_));
            src.noise_sigma_ = detail::value_or(spec, "noise_sigma", 0.0);
        } else if (type == "empirical") {
            detail::reject_unknown_keys(spec, {"type", "history_csv", "eval_csv", "noise_fraction", "center"},
                                        "empirical instance");
            const auto history_path = detail::resolve_path(
                base, detail::require(spec, "history_csv", "empirical instance").get<std::string>());
            const DatasetTable history = read_dataset_csv(history_path);
            const DatasetTable eval = spec.contains("eval_csv")
                                          ? read_dataset_csv(detail::resolve_path(base, spec.at("eval_csv").get<std::string>()))
                                          : history;
            if (eval.arms() != history.arms()) {
                throw Error(ErrorCode::DimensionMismatch, "evaluation data has a different number of arms");
            }
            if (eval.records() < 1) throw Error(ErrorCode::DegenerateData, "evaluation data has no complete records");
            const EmpiricalWorld world = empirical_world(history, detail::value_or(spec, "noise_fraction", 0.05),
                                                         detail::value_or(spec, "center", true));
            src.kernel_ = world.kernel;
            src.design_ = world.design;
            src.noise_sigma_ = world.noise_sigma;
            src.means_ = eval.readings.transpose();
        } else if (type == "external") {
            detail::reject_unknown_keys(spec, {"type", "command", "kernel", "timeout_s"}, "external instance");
            ExternalCommand command;
            command.argv = detail::require(spec, "command", "external instance").get<std::vector<std::string>>();
            command.timeout = std::chrono::milliseconds(
                static_cast<long long>(1000.0 * detail::value_or(spec, "timeout_s", 600.0)));
            const ExternalWorld world = external_instance(
                std::move(command),
                detail::parse_kernel(detail::require(spec, "kernel", "external instance"), std::nullopt, base));
            src.kernel_ = std::make_shared<const KernelMatrix>(world.kernel);
            src.design_ = world.design;
            src.external_ = world.command;
        } else if (type == "cached") {
            detail::reject_unknown_keys(spec, {"type", "path"}, "cached instance");
            const std::filesystem::path dir =
                detail::resolve_path(base, detail::require(spec, "path", "cached instance").get<std::string>());
            std::ifstream meta_in(dir / "instance.json");
            if (!meta_in) throw Error(ErrorCode::IoFailure, "cannot open '" + (dir / "instance.json").string() + "'");
            const json meta = json::parse(meta_in);
            src.kernel_ = std::make_shared<const KernelMatrix>(read_matrix_csv((dir / "kernel.csv").string()));
            src.design_ = std::make_shared<const DesignMatrix>(read_matrix_csv((dir / "design.csv").string()));
            src.means_ = read_matrix_csv((dir / "means.csv").string());
            src.noise_sigma_ = meta.at("noise_sigma").get<double>();
            if (src.design_->arms() != src.kernel_->arms() || src.means_.rows() != src.kernel_->arms() ||
                src.means_.cols() < 1) {
                throw Error(ErrorCode::DimensionMismatch, "cached instance files disagree on K");
            }
        } else {
            detail::config_error("unknown instance type '" + type + "'");
        }
        if (!src.external_ && src.means_.rows() != src.kernel_->arms()) {
            throw Error(ErrorCode::DimensionMismatch, "means have length " + std::to_string(src.means_.rows()) +
                                                          " but the kernel has K = " + std::to_string(src.kernel_->arms()));
        }
        if (!(src.noise_sigma_ >= 0.0)) detail::config_error("noise_sigma must be nonnegative");
        if (!src.external_) src.instance(0);  // validates K >= 2 and finiteness
        return src;
    }

    const std::string& type() const { return type_; }
    const json& spec() const { return spec_; }
    Eigen::Index arms() const { return kernel_->arms(); }
    const std::shared_ptr<const KernelMatrix>& kernel() const { return kernel_; }
    const std::shared_ptr<const DesignMatrix>& design() const { return design_; }
    bool means_known() const { return !external_.has_value(); }
    std::optional<double> noise_sigma() const {
        return external_ ? std::nullopt : std::optional<double>(noise_sigma_);
    }
    const std::optional<ExternalCommand>& external_command() const { return external_; }

    Vector means(long replication) const {
        if (external_) throw Error(ErrorCode::InvalidConfig, "true means of an external world are unknown");
        if (redraw_) {
            Rng rng(seeding::derive(means_seed_, "means", static_cast<std::uint64_t>(replication)));
            return design_->rows() * (prior_eta_ * standard_normal_vector(design_->dim(), rng));
        }
        return means_.col(replication % means_.cols());
    }

    /// Means for replications 0..columns-1, or the stored table when it does
    /// not depend on the replication count.
    Matrix means_table(long replications) const {
        if (!redraw_) return means_;
        Matrix out(arms(), std::max(replications, 1L));
        for (long r = 0; r < out.cols(); ++r) out.col(r) = means(r);
        return out;
    }

    BanditInstance instance(long replication) const {
        BanditInstance inst;
        inst.true_means = means(replication);
        inst.noise_sigma = noise_sigma_;
        inst.kernel = kernel_;
        inst.design = design_;
        inst.name = type_;
        inst.provenance = spec_.dump();
        inst.validate();
        return inst;
    }

private:
    std::string type_;
    json spec_;
    std::shared_ptr<const KernelMatrix> kernel_;
    std::shared_ptr<const DesignMatrix> design_;
    double noise_sigma_ = 0.0;
    Matrix means_;
    bool redraw_ = false;
    double prior_eta_ = 1.0;
    std::uint64_t means_seed_ = 0;
    std::optional<ExternalCommand> external_;
};

/// Files written by `make-instance`: kernel.csv, design.csv, means.csv (one
/// column per stored world) and instance.json.
inline void write_cached_instance(const InstanceSource& source, long replications, const std::filesystem::path& dir) {
    if (!source.means_known()) throw Error(ErrorCode::InvalidConfig, "external worlds cannot be cached");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot create '" + dir.string() + "': " + ec.message());
    write_matrix_csv((dir / "kernel.csv").string(), source.kernel()->entries());
    write_matrix_csv((dir / "design.csv").string(), source.design()->rows());
    const Matrix means = source.means_table(replications);
    write_matrix_csv((dir / "means.csv").string(), means);
    const json meta = {{"K", source.arms()},
                       {"d", source.design()->dim()},
                       {"worlds", means.cols()},
                       {"noise_sigma", *source.noise_sigma()},
                       {"source", source.spec()}};
    std::ofstream out(dir / "instance.json");
    if (!(out << meta.dump(2) << '\n')) throw Error(ErrorCode::IoFailure, "cannot write instance.json");
}

// ---------------------------------------------------------------------------
// Configuration

struct PolicySpec {
    std::string name;
    std::string label;  // unique key in reports and seed derivation; defaults to name
    PolicyOptions options;
    bool oracle_beta = false;

    json to_json() const {
        json j = {{"name", name}, {"label", label}, {"oracle_beta", oracle_beta}};
        if (options.fixed_beta) j["beta"] = *options.fixed_beta;
        j["xi"] = options.xi;
        j["gpucb_delta"] = options.gpucb_delta;
        j["bayesucb_c"] = options.bayesucb_c;
        j["exploration_scale"] = options.exploration_scale;
        return j;
    }

    static PolicySpec from_json(const json& j) {
        PolicySpec p;
        if (j.is_string()) {
            p.name = j.get<std::string>();
        } else if (j.is_object()) {
            detail::reject_unknown_keys(j, {"name", "label", "oracle_beta", "beta", "xi", "gpucb_delta", "bayesucb_c",
                                            "exploration_scale"}, "policy");
            p.name = detail::require(j, "name", "policy").get<std::string>();
            p.label = detail::value_or<std::string>(j, "label", "");
            p.oracle_beta = detail::value_or(j, "oracle_beta", false);
            if (j.contains("beta")) p.options.fixed_beta = j.at("beta").get<double>();
            p.options.xi = detail::value_or(j, "xi", p.options.xi);
            p.options.gpucb_delta = detail::value_or(j, "gpucb_delta", p.options.gpucb_delta);
            p.options.bayesucb_c = detail::value_or(j, "bayesucb_c", p.options.bayesucb_c);
            p.options.exploration_scale = detail::value_or(j, "exploration_scale", p.options.exploration_scale);
        } else {
            detail::config_error("policy entries must be names or objects");
        }
        if (std::find(kPolicyNames.begin(), kPolicyNames.end(), p.name) == kPolicyNames.end()) {
            detail::config_error("unknown policy '" + p.name + "'");
        }
        if (p.label.empty()) p.label = p.name;
        if (p.oracle_beta && p.name != "bayesgap") detail::config_error("oracle_beta applies only to bayesgap");
        if (p.oracle_beta && p.options.fixed_beta) detail::config_error("policy sets both beta and oracle_beta");
        return p;
    }
};

struct ExperimentConfig {
    json instance;
    std::vector<PolicySpec> policies;
    long horizon = 1;
    double epsilon = 0.0;
    long replications = 1;
    std::uint64_t seed = 0;
    std::optional<double> sigma;
    double eta = 1.0;
    unsigned workers = 1;
    std::string output = "out";
    std::filesystem::path base_dir;  // relative paths in `instance` resolve here

    void validate() const {
        if (horizon < 1) detail::config_error("T must be at least 1");
        if (replications < 1) detail::config_error("replications must be at least 1");
        if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) detail::config_error("epsilon must be a finite value >= 0");
        if (sigma && !(*sigma > 0.0)) detail::config_error("sigma must be positive");
        if (!(eta > 0.0) || !std::isfinite(eta)) detail::config_error("eta must be positive");
        if (workers < 1) detail::config_error("workers must be at least 1");
        std::set<std::string> labels;
        for (const auto& p : policies) {
            if (!labels.insert(p.label).second) detail::config_error("duplicate policy label '" + p.label + "'");
        }
    }

    static ExperimentConfig from_json(const json& j, std::filesystem::path base_dir = {}) {
        try {
            if (!j.is_object()) detail::config_error("config must be a JSON object");
            detail::reject_unknown_keys(j, {"instance", "policies", "T", "epsilon", "replications", "seed", "sigma", "eta",
                                            "workers", "output"}, "config");
            ExperimentConfig c;
            c.base_dir = std::move(base_dir);
            c.instance = detail::require(j, "instance", "config");
            if (j.contains("policies")) {
                for (const auto& p : j.at("policies")) c.policies.push_back(PolicySpec::from_json(p));
            }
            c.horizon = detail::require(j, "T", "config").get<long>();
            c.epsilon = detail::value_or(j, "epsilon", 0.0);
            c.replications = detail::require(j, "replications", "config").get<long>();
            c.seed = detail::value_or<std::uint64_t>(j, "seed", 0);
            if (j.contains("sigma") && !j.at("sigma").is_null()) c.sigma = j.at("sigma").get<double>();
            c.eta = detail::value_or(j, "eta", 1.0);
            const long workers = detail::value_or(j, "workers", 1L);
            if (workers < 1) detail::config_error("workers must be at least 1");
            c.workers = static_cast<unsigned>(workers);
            c.output = detail::value_or<std::string>(j, "output", "out");
            c.validate();
            return c;
        } catch (const json::exception& e) {
            detail::config_error(std::string("malformed config: ") + e.what());
        }
    }

    /// Canonical form. Execution details (workers, output) are left out unless
    /// asked for, so they cannot leak into reports.
    json to_json(bool include_execution = false) const {
        json pols = json::array();
        for (const auto& p : policies) pols.push_back(p.to_json());
        json j = {{"instance", instance}, {"policies", pols},          {"T", horizon},
                  {"epsilon", epsilon},   {"replications", replications}, {"seed", seed},
                  {"sigma", sigma ? json(*sigma) : json(nullptr)},        {"eta", eta}};
        if (include_execution) {
            j["workers"] = workers;
            j["output"] = output;
        }
        return j;
    }
};

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open config file '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, "config file '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return ExperimentConfig::from_json(j, path.parent_path());
}

/// σ used by the policies: configured, else the instance noise, else a small
/// floor for noiseless worlds.
inline ModelConfig model_for(const ExperimentConfig& cfg, const InstanceSource& source) {
    if (cfg.sigma) return {*cfg.sigma, cfg.eta};
    const auto noise = source.noise_sigma();
    if (!noise) detail::config_error("sigma is required when the instance noise is unknown");
    return {*noise > 0.0 ? *noise : kNoiselessSigmaFactor * cfg.eta, cfg.eta};
}

// ---------------------------------------------------------------------------
// Episodes

enum class EpisodeStatus { Completed, Inapplicable, Failed };

inline std::string_view to_string(EpisodeStatus s) {
    switch (s) {
        case EpisodeStatus::Completed: return "completed";
        case EpisodeStatus::Inapplicable: return "inapplicable";
        case EpisodeStatus::Failed: return "failed";
    }
    return "failed";
}

struct EpisodeRecord {
    std::string policy;
    long replication = 0;
    EpisodeStatus status = EpisodeStatus::Completed;
    std::string error;  // "Code: message" for inapplicable or failed episodes
    std::vector<Arm> arms;
    std::vector<double> rewards;
    Arm recommendation = -1;
    std::optional<double> simple_regret;
    std::optional<bool> error_flag;  // simple_regret > ε
    std::optional<double> recommendation_reward;
    std::optional<double> beta;  // oracle β, when used
    double wall_time_s = 0.0;
};

inline std::uint64_t policy_seed(const ExperimentConfig& cfg, const PolicySpec& spec, long replication) {
    return seeding::derive(cfg.seed, spec.label, static_cast<std::uint64_t>(replication));
}

inline std::uint64_t environment_seed(const ExperimentConfig& cfg, long replication) {
    return seeding::derive(cfg.seed, "environment", static_cast<std::uint64_t>(replication));
}

/// One pure-exploration episode with a fresh policy. Errors abort the episode
/// and are recorded; pulls made before the abort are kept.
inline EpisodeRecord run_episode(const ExperimentConfig& cfg, const PolicySpec& spec, const InstanceSource& source,
                                 long replication) {
    const auto start = std::chrono::steady_clock::now();
    EpisodeRecord rec;
    rec.policy = spec.label;
    rec.replication = replication;
    try {
        PolicyContext ctx;
        ctx.design = source.design();
        ctx.model = model_for(cfg, source);
        ctx.horizon = cfg.horizon;
        ctx.epsilon = cfg.epsilon;
        ctx.seed = policy_seed(cfg, spec, replication);
        ctx.options = spec.options;

        std::optional<BanditInstance> world;
        std::unique_ptr<RewardOracle> oracle;
        if (source.means_known()) {
            world = source.instance(replication);
            oracle = std::make_unique<SimulatedOracle>(*world, environment_seed(cfg, replication));
        } else {
            oracle = std::make_unique<ExternalOracle>(*source.external_command(), environment_seed(cfg, replication));
        }
        if (spec.oracle_beta) {
            if (!world) detail::config_error("oracle_beta needs known true means");
            ctx.options.fixed_beta = theory::oracle_beta(world->true_means, *source.design(), ctx.model, cfg.horizon,
                                                         cfg.epsilon);
            rec.beta = ctx.options.fixed_beta;
        }

        const auto policy = make_policy(spec.name, ctx);
        rec.arms.reserve(static_cast<std::size_t>(cfg.horizon));
        rec.rewards.reserve(static_cast<std::size_t>(cfg.horizon));
        for (long t = 1; t <= cfg.horizon; ++t) {
            const Arm arm = policy->select(t);
            const double reward = oracle->pull(arm);
            policy->observe(arm, reward);
            rec.arms.push_back(arm);
            rec.rewards.push_back(reward);
        }
        rec.recommendation = policy->recommend();
        if (world) {
            rec.simple_regret = world->simple_regret(rec.recommendation);
            rec.error_flag = *rec.simple_regret > cfg.epsilon;
            rec.recommendation_reward = world->true_means[rec.recommendation];
        } else {
            rec.recommendation_reward = oracle->pull(rec.recommendation);
        }
    } catch (const Error& e) {
        rec.status = e.code() == ErrorCode::BudgetTooSmallForFrequentist ? EpisodeStatus::Inapplicable
                                                                         : EpisodeStatus::Failed;
        rec.error = std::string(to_string(e.code())) + ": " + e.what();
    } catch (const std::exception& e) {
        rec.status = EpisodeStatus::Failed;
        rec.error = std::string("Exception: ") + e.what();
    }
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rec;
}

// ---------------------------------------------------------------------------
// Aggregation

struct TheoryBound {
    double beta_min = 0.0;
    double beta_max = 0.0;
    double ceiling = 1.0;     // K T e^{-β_min²/2}, the weakest per-episode ceiling
    bool within = true;       // Wilson upper edge ≤ ceiling, or the ceiling is vacuous

    bool operator==(const TheoryBound&) const = default;
};

struct PolicyReport {
    std::string policy;
    std::string name;
    long episodes = 0;
    long completed = 0;
    long inapplicable = 0;
    long failed = 0;
    long scored = 0;  // completed episodes with a known error indicator
    long errors = 0;
    std::optional<double> error_probability;
    stats::Interval error_interval{0.0, 1.0};
    std::optional<double> mean_simple_regret;
    std::optional<double> median_simple_regret;
    std::optional<double> mean_recommendation_reward;
    std::vector<long> pull_histogram;            // completed episodes only
    std::vector<long> recommendation_histogram;  // completed episodes only
    std::optional<TheoryBound> theory;

    bool operator==(const PolicyReport&) const = default;
};

struct AggregateReport {
    json config;
    long arms = 0;
    long horizon = 0;
    long replications = 0;
    double epsilon = 0.0;
    std::vector<PolicyReport> policies;
    double wall_time_s = 0.0;

    bool operator==(const AggregateReport&) const = default;
};

/// Pure function of the episode stream: records are bucketed by policy label
/// and sorted by replication before any floating-point reduction.
inline AggregateReport aggregate(const ExperimentConfig& cfg, Eigen::Index arms, std::vector<EpisodeRecord> episodes) {
    std::stable_sort(episodes.begin(), episodes.end(), [](const EpisodeRecord& a, const EpisodeRecord& b) {
        return std::tie(a.policy, a.replication) < std::tie(b.policy, b.replication);
    });
    AggregateReport report;
    report.config = cfg.to_json();
    report.arms = static_cast<long>(arms);
    report.horizon = cfg.horizon;
    report.replications = cfg.replications;
    report.epsilon = cfg.epsilon;
    for (const auto& spec : cfg.policies) {
        PolicyReport p;
        p.policy = spec.label;
        p.name = spec.name;
        p.pull_histogram.assign(static_cast<std::size_t>(arms), 0);
        p.recommendation_histogram.assign(static_cast<std::size_t>(arms), 0);
        std::vector<double> regrets;
        double reward_sum = 0.0;
        long reward_count = 0;
        std::optional<double> beta_min;
        std::optional<double> beta_max;
        for (const auto& e : episodes) {
            if (e.policy != spec.label) continue;
            ++p.episodes;
            if (e.status == EpisodeStatus::Inapplicable) ++p.inapplicable;
            if (e.status == EpisodeStatus::Failed) ++p.failed;
            if (e.status != EpisodeStatus::Completed) continue;
            ++p.completed;
            for (Arm a : e.arms) ++p.pull_histogram[static_cast<std::size_t>(a)];
            ++p.recommendation_histogram[static_cast<std::size_t>(e.recommendation)];
            if (e.error_flag) {
                ++p.scored;
                if (*e.error_flag) ++p.errors;
            }
            if (e.simple_regret) regrets.push_back(*e.simple_regret);
            if (e.recommendation_reward) {
                reward_sum += *e.recommendation_reward;
                ++reward_count;
            }
            if (e.beta) {
                beta_min = std::min(beta_min.value_or(*e.beta), *e.beta);
                beta_max = std::max(beta_max.value_or(*e.beta), *e.beta);
            }
        }
        if (p.scored > 0) {
            p.error_probability = static_cast<double>(p.errors) / static_cast<double>(p.scored);
            p.error_interval = stats::wilson_interval(p.errors, p.scored);
        }
        if (!regrets.empty()) {
            double sum = 0.0;
            for (double r : regrets) sum += r;
            p.mean_simple_regret = sum / static_cast<double>(regrets.size());
            std::sort(regrets.begin(), regrets.end());
            const std::size_t mid = regrets.size() / 2;
            p.median_simple_regret =
                regrets.size() % 2 == 1 ? regrets[mid] : 0.5 * (regrets[mid - 1] + regrets[mid]);
        }
        if (reward_count > 0) p.mean_recommendation_reward = reward_sum / static_cast<double>(reward_count);
        if (beta_min) {
            TheoryBound b;
            b.beta_min = *beta_min;
            b.beta_max = *beta_max;
            b.ceiling = theory::simple_regret_bound(arms, cfg.horizon, *beta_min, cfg.epsilon).delta *
                        static_cast<double>(arms) * static_cast<double>(cfg.horizon);
            b.within = b.ceiling >= 1.0 || p.scored == 0 || p.error_interval.upper <= b.ceiling;
            p.theory = b;
        }
        report.policies.push_back(std::move(p));
    }
    return report;
}

struct ExperimentResult {
    std::vector<EpisodeRecord> episodes;  // policy-major, then replication
    AggregateReport report;
};

/// Every (policy, replication) episode runs in its own slot, so the result is
/// independent of the worker count and of scheduling.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const InstanceSource& source) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    const auto reps = static_cast<std::size_t>(cfg.replications);
    ExperimentResult result;
    result.episodes.resize(cfg.policies.size() * reps);
    parallel_for(result.episodes.size(), cfg.workers, [&](std::size_t i) {
        result.episodes[i] = run_episode(cfg, cfg.policies[i / reps], source, static_cast<long>(i % reps));
    });
    for (const auto& e : result.episodes) {
        if (e.status == EpisodeStatus::Failed) {
            logging::write(logging::Level::Warn, e.policy + " replication " + std::to_string(e.replication) + ": " + e.error);
        }
    }
    result.report = aggregate(cfg, source.arms(), result.episodes);
    result.report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    return run_experiment(cfg, InstanceSource::from_json(cfg.instance, cfg.base_dir));
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline std::optional<double> optional_double(const json& j) {
    return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

}  // namespace detail

inline json to_json(const PolicyReport& p) {
    json j = {{"policy", p.policy},
              {"name", p.name},
              {"episodes", p.episodes},
              {"completed", p.completed},
              {"inapplicable", p.inapplicable},
              {"failed", p.failed},
              {"scored", p.scored},
              {"errors", p.errors},
              {"error_probability", detail::optional_json(p.error_probability)},
              {"error_interval", {p.error_interval.lower, p.error_interval.upper}},
              {"mean_simple_regret", detail::optional_json(p.mean_simple_regret)},
              {"median_simple_regret", detail::optional_json(p.median_simple_regret)},
              {"mean_recommendation_reward", detail::optional_json(p.mean_recommendation_reward)},
              {"pull_histogram", p.pull_histogram},
              {"recommendation_histogram", p.recommendation_histogram},
              {"theory", nullptr}};
    if (p.theory) {
        j["theory"] = {{"beta_min", p.theory->beta_min},
                       {"beta_max", p.theory->beta_max},
                       {"ceiling", p.theory->ceiling},
                       {"within", p.theory->within}};
    }
    return j;
}

inline json to_json(const AggregateReport& r) {
    json pols = json::array();
    for (const auto& p : r.policies) pols.push_back(to_json(p));
    return {{"config", r.config},       {"K", r.arms}, {"T", r.horizon}, {"replications", r.replications},
            {"epsilon", r.epsilon},     {"policies", pols}, {"wall_time_s", r.wall_time_s}};
}

inline PolicyReport policy_report_from_json(const json& j) {
    PolicyReport p;
    p.policy = j.at("policy").get<std::string>();
    p.name = j.at("name").get<std::string>();
    p.episodes = j.at("episodes").get<long>();
    p.completed = j.at("completed").get<long>();
    p.inapplicable = j.at("inapplicable").get<long>();
    p.failed = j.at("failed").get<long>();
    p.scored = j.at("scored").get<long>();
    p.errors = j.at("errors").get<long>();
    p.error_probability = detail::optional_double(j.at("error_probability"));
    p.error_interval = {j.at("error_interval").at(0).get<double>(), j.at("error_interval").at(1).get<double>()};
    p.mean_simple_regret = detail::optional_double(j.at("mean_simple_regret"));
    p.median_simple_regret = detail::optional_double(j.at("median_simple_regret"));
    p.mean_recommendation_reward = detail::optional_double(j.at("mean_recommendation_reward"));
    p.pull_histogram = j.at("pull_histogram").get<std::vector<long>>();
    p.recommendation_histogram = j.at("recommendation_histogram").get<std::vector<long>>();
    if (!j.at("theory").is_null()) {
        const auto& t = j.at("theory");
        p.theory = TheoryBound{t.at("beta_min").get<double>(), t.at("beta_max").get<double>(),
                               t.at("ceiling").get<double>(), t.at("within").get<bool>()};
    }
    return p;
}

inline AggregateReport report_from_json(const json& j) {
    try {
        AggregateReport r;
        r.config = j.at("config");
        r.arms = j.at("K").get<long>();
        r.horizon = j.at("T").get<long>();
        r.replications = j.at("replications").get<long>();
        r.epsilon = j.at("epsilon").get<double>();
        for (const auto& p : j.at("policies")) r.policies.push_back(policy_report_from_json(p));
        r.wall_time_s = j.at("wall_time_s").get<double>();
        return r;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::IoFailure, std::string("malformed report: ") + e.what());
    }
}

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write '" + path.string() + "'");
    return out;
}

inline void finish_output(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) throw Error(ErrorCode::IoFailure, "write to '" + path.string() + "' failed");
}

inline std::string optional_csv(const std::optional<double>& v) { return v ? format_real(*v) : std::string(); }

}  // namespace detail

/// Writes report.json, report.csv (policy, metric, value), histograms.csv,
/// episodes.csv (policy, rep, t, arm, reward) and regrets.csv (one row per
/// episode) into `dir`.
inline void emit_report(const AggregateReport& report, const std::vector<EpisodeRecord>& episodes,
                        const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot create '" + dir.string() + "': " + ec.message());

    {
        const auto path = dir / "report.json";
        auto out = detail::open_output(path);
        out << to_json(report).dump(2) << '\n';
        detail::finish_output(out, path);
    }
    {
        const auto path = dir / "report.csv";
        auto out = detail::open_output(path);
        out << "policy,metric,value\n";
        for (const auto& p : report.policies) {
            const auto row = [&](const char* metric, const std::string& value) {
                out << p.policy << ',' << metric << ',' << value << '\n';
            };
            row("episodes", std::to_string(p.episodes));
            row("completed", std::to_string(p.completed));
            row("inapplicable", std::to_string(p.inapplicable));
            row("failed", std::to_string(p.failed));
            row("errors", std::to_string(p.errors));
            row("error_probability", detail::optional_csv(p.error_probability));
            row("error_interval_lower", detail::format_real(p.error_interval.lower));
            row("error_interval_upper", detail::format_real(p.error_interval.upper));
            row("mean_simple_regret", detail::optional_csv(p.mean_simple_regret));
            row("median_simple_regret", detail::optional_csv(p.median_simple_regret));
            row("mean_recommendation_reward", detail::optional_csv(p.mean_recommendation_reward));
            if (p.theory) {
                row("oracle_beta_min", detail::format_real(p.theory->beta_min));
                row("theory_ceiling", detail::format_real(p.theory->ceiling));
            }
        }
        detail::finish_output(out, path);
    }
    {
        const auto path = dir / "histograms.csv";
        auto out = detail::open_output(path);
        out << "policy,arm,pulls,recommendations\n";
        for (const auto& p : report.policies) {
            for (std::size_t k = 0; k < p.pull_histogram.size(); ++k) {
                out << p.policy << ',' << k << ',' << p.pull_histogram[k] << ',' << p.recommendation_histogram[k] << '\n';
            }
        }
        detail::finish_output(out, path);
    }
    {
        const auto path = dir / "episodes.csv";
        auto out = detail::open_output(path);
        out << "policy,rep,t,arm,reward\n";
        for (const auto& e : episodes) {
            for (std::size_t t = 0; t < e.arms.size(); ++t) {
                out << e.policy << ',' << e.replication << ',' << t + 1 << ',' << e.arms[t] << ','
                    << detail::format_real(e.rewards[t]) << '\n';
            }
        }
        detail::finish_output(out, path);
    }
    {
        const auto path = dir / "regrets.csv";
        auto out = detail::open_output(path);
        out << "policy,rep,status,recommendation,simple_regret,error,recommendation_reward,wall_time_s\n";
        for (const auto& e : episodes) {
            out << e.policy << ',' << e.replication << ',' << to_string(e.status) << ',' << e.recommendation << ','
                << detail::optional_csv(e.simple_regret) << ','
                << (e.error_flag ? std::to_string(static_cast<int>(*e.error_flag)) : std::string()) << ','
                << detail::optional_csv(e.recommendation_reward) << ',' << detail::format_real(e.wall_time_s) << '\n';
        }
        detail::finish_output(out, path);
    }
}

}  // namespace bayesgap::harness
