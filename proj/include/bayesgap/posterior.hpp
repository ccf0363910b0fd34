#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "bayesgap/core.hpp"

namespace bayesgap {

/// GP prior covariance over K discrete arms. Only squareness is enforced on
/// construction; symmetry and PSD are checked by `kernel_to_design`.
class KernelMatrix {
public:
    KernelMatrix() = default;

    explicit KernelMatrix(Matrix entries) : entries_(std::move(entries)) {
        if (entries_.rows() != entries_.cols()) {
            throw Error(ErrorCode::DimensionMismatch, "kernel matrix must be square");
        }
        if (!entries_.allFinite()) {
            throw Error(ErrorCode::InvalidConfig, "kernel matrix has non-finite entries");
        }
    }

    Eigen::Index arms() const { return entries_.rows(); }
    const Matrix& entries() const { return entries_; }
    double operator()(Eigen::Index i, Eigen::Index j) const { return entries_(i, j); }

    bool is_symmetric() const {
        for (Eigen::Index i = 0; i < arms(); ++i) {
            for (Eigen::Index j = i + 1; j < arms(); ++j) {
                const double a = entries_(i, j);
                const double b = entries_(j, i);
                if (std::abs(a - b) > 1e-12 * std::max(1.0, std::abs(a))) return false;
            }
        }
        return true;
    }

private:
    Matrix entries_;
};

/// Per-arm feature rows x_k with X Xᵀ = G.
class DesignMatrix {
public:
    DesignMatrix() = default;

    explicit DesignMatrix(Matrix rows) : rows_(std::move(rows)), norms_(rows_.rowwise().norm()) {}

    Eigen::Index arms() const { return rows_.rows(); }
    Eigen::Index dim() const { return rows_.cols(); }
    const Matrix& rows() const { return rows_; }
    auto row(Arm k) const { return rows_.row(k); }
    const Vector& arm_norms() const { return norms_; }

private:
    Matrix rows_;
    Vector norms_;
};

/// Eigendecomposition G = V D Vᵀ, X = V D^½. Eigenvalues below 1e-10·λ_max are
/// clamped to zero; X keeps all K columns.
inline DesignMatrix kernel_to_design(const KernelMatrix& kernel) {
    if (kernel.arms() == 0) throw Error(ErrorCode::DimensionMismatch, "empty kernel matrix");
    if (!kernel.is_symmetric()) throw Error(ErrorCode::NotSymmetric, "kernel matrix is not symmetric");

    const Matrix sym = 0.5 * (kernel.entries() + kernel.entries().transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
    if (eig.info() != Eigen::Success) {
        throw Error(ErrorCode::FactorizationFailure, "eigendecomposition of kernel failed");
    }
    Vector lambda = eig.eigenvalues();
    const double lambda_max = lambda.maxCoeff();
    const double cutoff = 1e-10 * std::max(lambda_max, 0.0);
    if (lambda.minCoeff() < -cutoff) {
        throw Error(ErrorCode::NotPSD, "smallest eigenvalue " + std::to_string(lambda.minCoeff()) +
                                           " below -1e-10 * " + std::to_string(lambda_max));
    }
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
        lambda[i] = lambda[i] < cutoff ? 0.0 : std::sqrt(lambda[i]);
    }
    return DesignMatrix(eig.eigenvectors() * lambda.asDiagonal());
}

struct ModelConfig {
    double sigma = 1.0;  // observation noise stddev
    double eta = 1.0;    // prior stddev on θ

    void validate() const {
        if (!(sigma > 0.0) || !std::isfinite(sigma)) {
            throw Error(ErrorCode::InvalidConfig, "model sigma must be positive");
        }
        if (!(eta > 0.0) || !std::isfinite(eta)) {
            throw Error(ErrorCode::InvalidConfig, "model eta must be positive");
        }
    }
};

struct ArmMarginals {
    Vector means;
    Vector stds;
    int clamped = 0;  // negative round-off variances set to zero
};

struct Observation {
    Arm arm;
    double reward;
};

/// Gaussian posterior N(θ̂, Σ̂) over the shared parameter of the linear
/// reward model. Updates are rank-one (Sherman–Morrison); the sufficient
/// statistics XᵀX and XᵀY are kept alongside so Σ̂ can be rebuilt every
/// `kRefactorInterval` updates.
class Posterior {
public:
    static constexpr int kRefactorInterval = 512;

    Posterior(const ModelConfig& cfg, const DesignMatrix& design)
        : cfg_(cfg),
          theta_(Vector::Zero(design.dim())),
          cov_(Matrix::Identity(design.dim(), design.dim()) * cfg.eta * cfg.eta),
          gram_(Matrix::Zero(design.dim(), design.dim())),
          xty_(Vector::Zero(design.dim())),
          pulls_(static_cast<std::size_t>(design.arms()), 0) {
        cfg_.validate();
    }

    /// Posterior with explicit moments and no recorded observations. Later
    /// refactorizations rebuild from observations only, so this is meant for
    /// inspecting acquisition behaviour on a fixed belief.
    static Posterior from_moments(const ModelConfig& cfg, const DesignMatrix& design, Vector theta,
                                  Matrix cov) {
        Posterior p(cfg, design);
        if (theta.size() != p.dim() || cov.rows() != p.dim() || cov.cols() != p.dim()) {
            throw Error(ErrorCode::DimensionMismatch, "moments do not match design dimension");
        }
        p.theta_ = std::move(theta);
        p.cov_ = std::move(cov);
        return p;
    }

    const ModelConfig& config() const { return cfg_; }
    const Vector& theta_hat() const { return theta_; }
    const Matrix& sigma_hat() const { return cov_; }
    long n_obs() const { return n_obs_; }
    const std::vector<long>& pull_counts() const { return pulls_; }
    Eigen::Index dim() const { return theta_.size(); }

    void update(const DesignMatrix& design, Arm arm, double reward) {
        check_shape(design);
        check_arm(arm, design.arms());
        const Vector x = design.row(arm).transpose();
        const double noise_var = cfg_.sigma * cfg_.sigma;

        gram_.noalias() += x * x.transpose();
        xty_ += x * reward;
        ++pulls_[static_cast<std::size_t>(arm)];
        ++n_obs_;

        if (++since_refactor_ >= kRefactorInterval) {
            refactor();
            return;
        }
        const Vector v = cov_ * x;
        const double denom = noise_var + x.dot(v);
        const double residual = reward - x.dot(theta_);
        theta_ += v * (residual / denom);
        cov_.noalias() -= (v / denom) * v.transpose();
        cov_ = 0.5 * (cov_ + cov_.transpose()).eval();
    }

    /// Rebuilds Σ̂ and θ̂ from the accumulated sufficient statistics.
    void refactor() {
        const double inv_noise = 1.0 / (cfg_.sigma * cfg_.sigma);
        const double inv_prior = 1.0 / (cfg_.eta * cfg_.eta);
        Matrix precision = gram_ * inv_noise;
        precision.diagonal().array() += inv_prior;
        Eigen::LLT<Matrix> llt(precision);
        if (llt.info() != Eigen::Success) {
            throw Error(ErrorCode::FactorizationFailure, "posterior precision is not positive definite");
        }
        cov_ = llt.solve(Matrix::Identity(dim(), dim()));
        cov_ = 0.5 * (cov_ + cov_.transpose()).eval();
        theta_ = cov_ * (xty_ * inv_noise);
        since_refactor_ = 0;
    }

    ArmMarginals marginals(const DesignMatrix& design) const;

    /// Draws θ ~ N(θ̂, Σ̂) and returns X θ.
    Vector sample_arm_means(const DesignMatrix& design, Rng& rng) const;

private:
    void check_shape(const DesignMatrix& design) const {
        if (design.dim() != dim() || static_cast<std::size_t>(design.arms()) != pulls_.size()) {
            throw Error(ErrorCode::DimensionMismatch, "design matrix does not match posterior");
        }
    }

    ModelConfig cfg_;
    Vector theta_;
    Matrix cov_;
    Matrix gram_;
    Vector xty_;
    std::vector<long> pulls_;
    long n_obs_ = 0;
    int since_refactor_ = 0;
};

inline Posterior posterior_init(const ModelConfig& cfg, const DesignMatrix& design) {
    return Posterior(cfg, design);
}

inline Posterior posterior_update(Posterior p, const DesignMatrix& design, Arm arm, double reward) {
    p.update(design, arm, reward);
    return p;
}

/// Direct evaluation of the posterior by assembling the stacked design X_t and
/// reward vector Y_t for the whole history. Independent of the rank-one path.
struct BatchPosterior {
    Vector theta_hat;
    Matrix sigma_hat;
    std::vector<long> pull_counts;
};

inline BatchPosterior posterior_batch(const ModelConfig& cfg, const DesignMatrix& design,
                                      std::span<const Observation> history) {
    cfg.validate();
    const auto n = static_cast<Eigen::Index>(history.size());
    Matrix xt(n, design.dim());
    Vector yt(n);
    std::vector<long> counts(static_cast<std::size_t>(design.arms()), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& obs = history[static_cast<std::size_t>(i)];
        check_arm(obs.arm, design.arms());
        xt.row(i) = design.row(obs.arm);
        yt[i] = obs.reward;
        ++counts[static_cast<std::size_t>(obs.arm)];
    }
    Matrix precision = xt.transpose() * xt / (cfg.sigma * cfg.sigma);
    precision.diagonal().array() += 1.0 / (cfg.eta * cfg.eta);
    Eigen::LDLT<Matrix> ldlt(precision);
    BatchPosterior out;
    out.sigma_hat = ldlt.solve(Matrix::Identity(design.dim(), design.dim()));
    out.theta_hat = out.sigma_hat * xt.transpose() * yt / (cfg.sigma * cfg.sigma);
    out.pull_counts = std::move(counts);
    return out;
}

inline ArmMarginals arm_marginals(const Posterior& p, const DesignMatrix& design) {
    if (design.dim() != p.dim() || static_cast<std::size_t>(design.arms()) != p.pull_counts().size()) {
        throw Error(ErrorCode::DimensionMismatch, "design matrix does not match posterior");
    }
    ArmMarginals m;
    m.means = design.rows() * p.theta_hat();
    const Matrix projected = design.rows() * p.sigma_hat();
    const Vector variances = projected.cwiseProduct(design.rows()).rowwise().sum();
    m.stds.resize(variances.size());
    for (Eigen::Index k = 0; k < variances.size(); ++k) {
        if (variances[k] < 0.0) {
            ++m.clamped;
            m.stds[k] = 0.0;
        } else {
            m.stds[k] = std::sqrt(variances[k]);
        }
    }
    if (m.clamped > 0) {
        logging::write(logging::Level::Debug,
                       "clamped " + std::to_string(m.clamped) + " negative marginal variances");
    }
    return m;
}

inline ArmMarginals Posterior::marginals(const DesignMatrix& design) const {
    return arm_marginals(*this, design);
}

/// Symmetric factorization of a PSD matrix as a square root factor S with
/// S Sᵀ = A, via pivoted LDLᵀ. Tiny negative pivots are treated as zero.
inline Matrix psd_sqrt_factor(const Matrix& a) {
    Eigen::LDLT<Matrix> ldlt(a);
    if (ldlt.info() != Eigen::Success) {
        throw Error(ErrorCode::FactorizationFailure, "LDLT of posterior covariance failed");
    }
    Vector d = ldlt.vectorD();
    const double scale = std::max(a.diagonal().cwiseAbs().maxCoeff(), 1e-300);
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        if (d[i] < -1e-9 * scale) {
            throw Error(ErrorCode::FactorizationFailure, "posterior covariance is indefinite");
        }
        d[i] = d[i] > 0.0 ? std::sqrt(d[i]) : 0.0;
    }
    const Matrix lower = ldlt.matrixL();
    return ldlt.transpositionsP().transpose() * (lower * d.asDiagonal());
}

inline Vector Posterior::sample_arm_means(const DesignMatrix& design, Rng& rng) const {
    check_shape(design);
    const Matrix factor = psd_sqrt_factor(cov_);
    const Vector theta = theta_ + factor * standard_normal_vector(dim(), rng);
    return design.rows() * theta;
}

inline Vector sample_arm_means(const Posterior& p, const DesignMatrix& design, Rng& rng) {
    return p.sample_arm_means(design, rng);
}

}  // namespace bayesgap
