#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bayesgap/core.hpp"
#include "bayesgap/posterior.hpp"

namespace bayesgap {

/// A simulated pure-exploration problem. `true_means` is hidden from policies:
/// they are only ever handed the design matrix and the model config.
struct BanditInstance {
    Vector true_means;
    double noise_sigma = 0.0;
    std::shared_ptr<const KernelMatrix> kernel;
    std::shared_ptr<const DesignMatrix> design;
    std::string name;
    std::string provenance;

    Eigen::Index arms() const { return true_means.size(); }

    Arm best_arm() const {
        Arm best = 0;
        for (Arm k = 1; k < arms(); ++k) {
            if (true_means[k] > true_means[best]) best = k;
        }
        return best;
    }

    double best_mean() const { return true_means.maxCoeff(); }

    double simple_regret(Arm recommended) const {
        check_arm(recommended, arms());
        return best_mean() - true_means[recommended];
    }

    void validate() const {
        if (arms() < 2) throw Error(ErrorCode::TooFewArms, "instance needs at least two arms");
        if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::InvalidConfig, "noise sigma must be nonnegative");
        if (!true_means.allFinite()) throw Error(ErrorCode::InvalidConfig, "true means must be finite");
        if (!design || !kernel || design->arms() != arms() || kernel->arms() != arms()) {
            throw Error(ErrorCode::DimensionMismatch, "kernel/design do not match the number of arms");
        }
    }
};

/// y = μ_k + σ z with z drawn from the caller's stream.
inline double pull(const BanditInstance& instance, Arm arm, Rng& rng) {
    check_arm(arm, instance.arms());
    const double z = standard_normal(rng);
    return instance.true_means[arm] + instance.noise_sigma * z;
}

// ---------------------------------------------------------------------------
// Kernels

/// k(x, x') = exp(-(x - x')² / ℓ²) over the grid x_i = i · spacing.
struct SquaredExponentialSpec {
    double length_scale = 1.0;
    double spacing = 1.0;

    void validate() const {
        if (!(length_scale > 0.0) || !std::isfinite(length_scale)) {
            throw Error(ErrorCode::InvalidConfig, "length scale must be positive");
        }
        if (!(spacing > 0.0) || !std::isfinite(spacing)) {
            throw Error(ErrorCode::InvalidConfig, "grid spacing must be positive");
        }
    }
};

inline KernelMatrix squared_exponential_kernel(Eigen::Index arms, const SquaredExponentialSpec& spec) {
    spec.validate();
    Matrix g(arms, arms);
    for (Eigen::Index i = 0; i < arms; ++i) {
        for (Eigen::Index j = 0; j < arms; ++j) {
            const double d = static_cast<double>(i - j) * spec.spacing / spec.length_scale;
            g(i, j) = std::exp(-d * d);
        }
    }
    return KernelMatrix(std::move(g));
}

/// Draws θ ~ N(0, η² I) and sets μ = X θ, so the world lies in the model class.
inline BanditInstance synthetic_gp_instance(Eigen::Index arms, const SquaredExponentialSpec& spec,
                                            double noise_sigma, double prior_eta, Rng& rng) {
    if (arms < 2) throw Error(ErrorCode::TooFewArms, "instance needs at least two arms");
    if (!(prior_eta > 0.0)) throw Error(ErrorCode::InvalidConfig, "prior eta must be positive");
    BanditInstance inst;
    inst.kernel = std::make_shared<const KernelMatrix>(squared_exponential_kernel(arms, spec));
    inst.design = std::make_shared<const DesignMatrix>(kernel_to_design(*inst.kernel));
    inst.true_means = inst.design->rows() * (prior_eta * standard_normal_vector(inst.design->dim(), rng));
    inst.noise_sigma = noise_sigma;
    inst.name = "synthetic-se";
    std::ostringstream os;
    os << "squared exponential, K=" << arms << ", length_scale=" << spec.length_scale
       << ", spacing=" << spec.spacing << ", eta=" << prior_eta;
    inst.provenance = os.str();
    inst.validate();
    return inst;
}

/// Instance with caller-supplied means over a given kernel.
inline BanditInstance explicit_instance(Vector true_means, const KernelMatrix& kernel, double noise_sigma) {
    BanditInstance inst;
    inst.true_means = std::move(true_means);
    inst.kernel = std::make_shared<const KernelMatrix>(kernel);
    inst.design = std::make_shared<const DesignMatrix>(kernel_to_design(kernel));
    inst.noise_sigma = noise_sigma;
    inst.name = "explicit";
    inst.provenance = "explicit means";
    inst.validate();
    return inst;
}

// ---------------------------------------------------------------------------
// Hyperparameter grids: one block per model family

struct ParameterAxis {
    std::string name;
    std::vector<double> values;
};

struct ModelFamily {
    std::string name;
    std::vector<ParameterAxis> axes;

    /// Cartesian product of the axes; the first axis varies slowest.
    std::vector<std::vector<double>> points() const {
        std::vector<std::vector<double>> out{{}};
        for (const auto& axis : axes) {
            std::vector<std::vector<double>> next;
            next.reserve(out.size() * axis.values.size());
            for (const auto& prefix : out) {
                for (double v : axis.values) {
                    auto p = prefix;
                    p.push_back(v);
                    next.push_back(std::move(p));
                }
            }
            out = std::move(next);
        }
        return out;
    }
};

/// Block-diagonal kernel: exp(-‖x - x'‖²) within a family on raw parameter
/// values, zero across families.
inline KernelMatrix hyperparameter_grid_kernel(const std::vector<ModelFamily>& families) {
    if (families.empty()) throw Error(ErrorCode::EmptyGrid, "no model families given");
    std::vector<std::vector<std::vector<double>>> blocks;
    Eigen::Index total = 0;
    for (const auto& family : families) {
        if (family.axes.empty()) throw Error(ErrorCode::EmptyGrid, "family '" + family.name + "' has no axes");
        for (const auto& axis : family.axes) {
            if (axis.values.empty()) {
                throw Error(ErrorCode::EmptyGrid, "axis '" + axis.name + "' of '" + family.name + "' is empty");
            }
        }
        blocks.push_back(family.points());
        total += static_cast<Eigen::Index>(blocks.back().size());
    }
    Matrix g = Matrix::Zero(total, total);
    Eigen::Index offset = 0;
    for (const auto& pts : blocks) {
        const auto n = static_cast<Eigen::Index>(pts.size());
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) {
                double sq = 0.0;
                for (std::size_t d = 0; d < pts[i].size(); ++d) {
                    const double diff = pts[i][d] - pts[j][d];
                    sq += diff * diff;
                }
                g(offset + i, offset + j) = std::exp(-sq);
            }
        }
        offset += n;
    }
    return KernelMatrix(std::move(g));
}

/// The 160-model regression toolbox grid: Lasso, random forests, linear and
/// RBF SVMs, k-nearest neighbours.
inline std::vector<ModelFamily> regression_toolbox_grid() {
    const std::vector<double> svm_c = {0.001, 0.01, 0.1, 1.0};
    const std::vector<double> svm_eps = {0.0001, 0.001, 0.01, 0.1};
    return {
        {"lasso", {{"alpha", {0.0001, 0.0005, 0.001, 0.005, 0.01, 0.05, 0.1, 0.5}}}},
        {"random_forest",
         {{"n_estimators", {1, 10, 100, 1000}},
          {"min_samples_split", {1, 3, 5, 7}},
          {"min_samples_leaf", {2, 6, 10, 14}}}},
        {"linear_svm", {{"C", svm_c}, {"epsilon", svm_eps}}},
        {"rbf_svm", {{"C", svm_c}, {"epsilon", svm_eps}, {"gamma", {0.025, 0.05, 0.1, 0.2}}}},
        {"knn", {{"n_neighbors", {1, 3, 5, 7, 9, 11, 13, 15}}}},
    };
}

// ---------------------------------------------------------------------------
// Empirical (historical data) worlds

/// Historical readings: rows are time points, columns are arms.
struct DatasetTable {
    Matrix readings;
    std::vector<std::string> labels;
    long dropped_rows = 0;  // records skipped for missing entries

    Eigen::Index records() const { return readings.rows(); }
    Eigen::Index arms() const { return readings.cols(); }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) {
        const auto first = field.find_first_not_of(" \t\r");
        const auto last = field.find_last_not_of(" \t\r");
        out.push_back(first == std::string::npos ? std::string() : field.substr(first, last - first + 1));
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double parse_real(const std::string& text, const std::string& where) {
    std::size_t used = 0;
    double value = 0.0;
    try {
        value = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size()) {
        throw Error(ErrorCode::DegenerateData, "cannot parse '" + text + "' as a real number at " + where);
    }
    return value;
}

}  // namespace detail

/// CSV with a header row of column labels and one record per line. Records
/// with an empty field are dropped; non-numeric fields are an error.
inline DatasetTable read_dataset_csv(std::istream& in) {
    DatasetTable table;
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::DegenerateData, "dataset has no header row");
    table.labels = detail::split_csv_line(line);
    const auto width = table.labels.size();
    std::vector<std::vector<double>> rows;
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != width) {
            throw Error(ErrorCode::DegenerateData, "line " + std::to_string(line_no) + " has " +
                                                       std::to_string(fields.size()) + " fields, expected " +
                                                       std::to_string(width));
        }
        if (std::any_of(fields.begin(), fields.end(), [](const std::string& f) { return f.empty(); })) {
            ++table.dropped_rows;
            continue;
        }
        std::vector<double> row;
        row.reserve(width);
        for (const auto& f : fields) row.push_back(detail::parse_real(f, "line " + std::to_string(line_no)));
        rows.push_back(std::move(row));
    }
    table.readings.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < width; ++j) {
            table.readings(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }
    return table;
}

inline DatasetTable read_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open dataset '" + path + "'");
    return read_dataset_csv(in);
}

/// Column covariance with denominator n-1. With `center` false the raw second
/// moment matrix is returned instead.
inline KernelMatrix empirical_covariance(const DatasetTable& table, bool center = true) {
    if (table.records() < 2) {
        throw Error(ErrorCode::DegenerateData, "need at least two records, got " + std::to_string(table.records()));
    }
    Matrix data = table.readings;
    if (center) data.rowwise() -= data.colwise().mean();
    Matrix g = data.transpose() * data / static_cast<double>(table.records() - 1);
    g = 0.5 * (g + g.transpose()).eval();
    return KernelMatrix(std::move(g));
}

/// Shared pieces of an empirical world: the kernel, its design and the noise
/// level σ² = noise_fraction · mean(diag G). Per-run means are attached later.
struct EmpiricalWorld {
    std::shared_ptr<const KernelMatrix> kernel;
    std::shared_ptr<const DesignMatrix> design;
    double noise_sigma = 0.0;

    BanditInstance instance(Vector eval_row, std::string provenance = "empirical") const {
        if (eval_row.size() != kernel->arms()) {
            throw Error(ErrorCode::DimensionMismatch, "eval row length " + std::to_string(eval_row.size()) +
                                                          " != K = " + std::to_string(kernel->arms()));
        }
        BanditInstance inst;
        inst.true_means = std::move(eval_row);
        inst.noise_sigma = noise_sigma;
        inst.kernel = kernel;
        inst.design = design;
        inst.name = "empirical";
        inst.provenance = std::move(provenance);
        inst.validate();
        return inst;
    }
};

inline EmpiricalWorld empirical_world(const DatasetTable& table, double noise_fraction, bool center = true) {
    if (!(noise_fraction > 0.0 && noise_fraction <= 1.0)) {
        throw Error(ErrorCode::InvalidConfig, "noise fraction must lie in (0, 1]");
    }
    EmpiricalWorld world;
    world.kernel = std::make_shared<const KernelMatrix>(empirical_covariance(table, center));
    world.design = std::make_shared<const DesignMatrix>(kernel_to_design(*world.kernel));
    world.noise_sigma = std::sqrt(noise_fraction * world.kernel->entries().diagonal().mean());
    return world;
}

inline BanditInstance empirical_instance(const DatasetTable& table, Vector eval_row, double noise_fraction,
                                         bool center = true) {
    return empirical_world(table, noise_fraction, center).instance(std::move(eval_row));
}

// ---------------------------------------------------------------------------
// Reward oracles seen by the episode loop

class RewardOracle {
public:
    virtual ~RewardOracle() = default;
    virtual double pull(Arm arm) = 0;
};

class SimulatedOracle final : public RewardOracle {
public:
    SimulatedOracle(const BanditInstance& instance, std::uint64_t seed) : instance_(&instance), rng_(seed) {}
    double pull(Arm arm) override { return bayesgap::pull(*instance_, arm, rng_); }

private:
    const BanditInstance* instance_;
    Rng rng_;
};

}  // namespace bayesgap
