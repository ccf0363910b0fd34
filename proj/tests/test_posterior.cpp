#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "bayesgap/posterior.hpp"
#include "test_support.hpp"

using namespace bayesgap;

namespace {

DesignMatrix scalar_design() {
    Matrix x(1, 1);
    x << 1.0;
    return DesignMatrix(x);
}

double relative_error(const Matrix& a, const Matrix& b) {
    const double scale = std::max(b.cwiseAbs().maxCoeff(), 1e-300);
    return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace

TEST(KernelToDesign, IdentityGivesOrthonormalRows) {
    const DesignMatrix x = kernel_to_design(KernelMatrix(Matrix::Identity(2, 2)));
    EXPECT_EQ(x.arms(), 2);
    EXPECT_EQ(x.dim(), 2);
    EXPECT_TRUE((x.rows() * x.rows().transpose()).isApprox(Matrix::Identity(2, 2), 1e-14));
    EXPECT_NEAR(x.arm_norms()[0], 1.0, 1e-14);
    EXPECT_NEAR(x.arm_norms()[1], 1.0, 1e-14);
}

TEST(KernelToDesign, RankOneKernelClampsZeroEigenvalue) {
    Matrix g(2, 2);
    g << 1, 1, 1, 1;
    const DesignMatrix x = kernel_to_design(KernelMatrix(g));
    EXPECT_EQ(x.dim(), 2);
    EXPECT_LT((x.row(0) - x.row(1)).norm(), 1e-14);
    EXPECT_LT((x.rows() * x.rows().transpose() - g).cwiseAbs().maxCoeff(), 1e-14);
    // one column is exactly zero after clamping
    const Vector col_norms = x.rows().colwise().norm();
    EXPECT_EQ(col_norms.minCoeff(), 0.0);
}

TEST(KernelToDesign, DiagonalKernelRowNorms) {
    Matrix g(2, 2);
    g << 4, 0, 0, 1;
    const DesignMatrix x = kernel_to_design(KernelMatrix(g));
    EXPECT_NEAR(x.arm_norms()[0], 2.0, 1e-14);
    EXPECT_NEAR(x.arm_norms()[1], 1.0, 1e-14);
    EXPECT_NEAR(x.row(0).dot(x.row(1)), 0.0, 1e-14);
}

TEST(KernelToDesign, RejectsAsymmetricKernel) {
    Matrix g(2, 2);
    g << 1, 0.5, 0.4, 1;
    try {
        kernel_to_design(KernelMatrix(g));
        FAIL() << "expected NotSymmetric";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotSymmetric);
    }
}

TEST(KernelToDesign, RejectsIndefiniteKernel) {
    Matrix g(2, 2);
    g << 1, 2, 2, 1;  // eigenvalues 3 and -1
    try {
        kernel_to_design(KernelMatrix(g));
        FAIL() << "expected NotPSD";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotPSD);
    }
}

TEST(KernelToDesign, ReconstructionPropertyOnRandomKernels) {
    Rng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const auto k = static_cast<Eigen::Index>(2 + rng() % 60);
        const KernelMatrix g = testing_support::random_psd_kernel(k, rng);
        const DesignMatrix x = kernel_to_design(g);
        const double tol = 1e-8 * g.entries().diagonal().maxCoeff();
        EXPECT_LE((x.rows() * x.rows().transpose() - g.entries()).cwiseAbs().maxCoeff(), tol) << "K=" << k;
        for (Eigen::Index r = 0; r < k; ++r) EXPECT_DOUBLE_EQ(x.arm_norms()[r], x.row(r).norm());
    }
}

TEST(PosteriorInit, PriorMoments) {
    const Posterior p(ModelConfig{1.0, 1.0}, scalar_design());
    EXPECT_EQ(p.theta_hat()[0], 0.0);
    EXPECT_EQ(p.sigma_hat()(0, 0), 1.0);
    EXPECT_EQ(p.n_obs(), 0);

    const DesignMatrix x3(Matrix::Identity(3, 3));
    const Posterior wide(ModelConfig{1.0, 20.0}, x3);
    EXPECT_TRUE(wide.sigma_hat().isApprox(400.0 * Matrix::Identity(3, 3)));
}

TEST(PosteriorInit, PriorMarginalsScaleWithArmNorm) {
    Rng rng(3);
    const DesignMatrix x = kernel_to_design(testing_support::random_psd_kernel(6, rng));
    const ModelConfig cfg{0.7, 2.5};
    const ArmMarginals m = arm_marginals(posterior_init(cfg, x), x);
    for (Eigen::Index k = 0; k < 6; ++k) {
        EXPECT_EQ(m.means[k], 0.0);
        EXPECT_NEAR(m.stds[k], cfg.eta * x.arm_norms()[k], 1e-12);
    }
}

TEST(PosteriorInit, RejectsInvalidConfig) {
    EXPECT_THROW(Posterior(ModelConfig{0.0, 1.0}, scalar_design()), Error);
    EXPECT_THROW(Posterior(ModelConfig{1.0, -1.0}, scalar_design()), Error);
}

TEST(PosteriorUpdate, ScalarHandComputation) {
    const DesignMatrix x = scalar_design();
    const Posterior p = posterior_update(posterior_init({1.0, 1.0}, x), x, 0, 2.0);
    EXPECT_NEAR(p.sigma_hat()(0, 0), 0.5, 1e-15);
    EXPECT_NEAR(p.theta_hat()[0], 1.0, 1e-15);
    EXPECT_EQ(p.pull_counts()[0], 1);

    const ArmMarginals m = arm_marginals(p, x);
    EXPECT_NEAR(m.means[0], 1.0, 1e-15);
    EXPECT_NEAR(m.stds[0], std::sqrt(0.5), 1e-15);
}

TEST(PosteriorUpdate, ZeroFeatureArmCarriesNoInformation) {
    Matrix rows(2, 2);
    rows << 1, 0, 0, 0;
    const DesignMatrix x(rows);
    Posterior p = posterior_init({1.0, 1.0}, x);
    const Posterior before = p;
    p.update(x, 1, 5.0);
    EXPECT_TRUE(p.theta_hat().isApprox(before.theta_hat()));
    EXPECT_TRUE(p.sigma_hat().isApprox(before.sigma_hat()));
    EXPECT_EQ(p.pull_counts()[1], 1);
    EXPECT_EQ(p.n_obs(), 1);
}

TEST(PosteriorUpdate, ArmOutOfRange) {
    const DesignMatrix x = scalar_design();
    Posterior p = posterior_init({1.0, 1.0}, x);
    try {
        p.update(x, 1, 0.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ArmOutOfRange);
    }
    EXPECT_THROW(p.update(x, -1, 0.0), Error);
}

TEST(PosteriorBatch, EmptyHistoryIsPrior) {
    const DesignMatrix x(Matrix::Identity(3, 3));
    const BatchPosterior b = posterior_batch({1.0, 2.0}, x, {});
    EXPECT_TRUE(b.theta_hat.isZero());
    EXPECT_TRUE(b.sigma_hat.isApprox(4.0 * Matrix::Identity(3, 3)));
}

TEST(PosteriorBatch, SingleObservationMatchesHandComputation) {
    const std::vector<Observation> h = {{0, 2.0}};
    const BatchPosterior b = posterior_batch({1.0, 1.0}, scalar_design(), h);
    EXPECT_NEAR(b.sigma_hat(0, 0), 0.5, 1e-15);
    EXPECT_NEAR(b.theta_hat[0], 1.0, 1e-15);
}

TEST(PosteriorBatch, RepeatedObservationClosedForm) {
    for (int n : {1, 2, 5, 40}) {
        const std::vector<Observation> h(static_cast<std::size_t>(n), Observation{0, 1.5});
        const BatchPosterior b = posterior_batch({1.0, 1.0}, scalar_design(), h);
        EXPECT_NEAR(b.sigma_hat(0, 0), 1.0 / (n + 1), 1e-14);
    }
}

TEST(PosteriorBatch, ArmOutOfRange) {
    const std::vector<Observation> h = {{3, 1.0}};
    EXPECT_THROW(posterior_batch({1.0, 1.0}, scalar_design(), h), Error);
}

TEST(PosteriorProperty, IncrementalMatchesBatch) {
    Rng rng(2024);
    for (int trial = 0; trial < 40; ++trial) {
        const auto k = static_cast<Eigen::Index>(2 + rng() % 20);
        const DesignMatrix x = kernel_to_design(testing_support::random_psd_kernel(k, rng));
        const ModelConfig cfg{testing_support::uniform(rng, 0.1, 2.0), testing_support::uniform(rng, 0.5, 5.0)};
        const auto history = testing_support::random_history(k, 1 + static_cast<int>(rng() % 200), rng);
        Posterior p = posterior_init(cfg, x);
        for (const auto& o : history) p.update(x, o.arm, o.reward);
        const BatchPosterior b = posterior_batch(cfg, x, history);
        EXPECT_LE(relative_error(p.theta_hat(), b.theta_hat), 1e-8);
        EXPECT_LE(relative_error(p.sigma_hat(), b.sigma_hat), 1e-8);
        EXPECT_EQ(p.pull_counts(), b.pull_counts);
    }
}

TEST(PosteriorProperty, RefactorizationKeepsAgreementOverLongHistories) {
    Rng rng(5);
    const DesignMatrix x = kernel_to_design(testing_support::random_psd_kernel(8, rng));
    const ModelConfig cfg{0.3, 2.0};
    const auto history = testing_support::random_history(8, 1500, rng);
    Posterior p = posterior_init(cfg, x);
    for (const auto& o : history) p.update(x, o.arm, o.reward);
    const BatchPosterior b = posterior_batch(cfg, x, history);
    EXPECT_LE(relative_error(p.theta_hat(), b.theta_hat), 1e-8);
    EXPECT_LE(relative_error(p.sigma_hat(), b.sigma_hat), 1e-8);
}

TEST(PosteriorProperty, MarginalVariancesNeverIncrease) {
    Rng rng(77);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::Index k = 10;
        const DesignMatrix x = kernel_to_design(testing_support::random_psd_kernel(k, rng));
        Posterior p = posterior_init({0.5, 3.0}, x);
        Vector previous = arm_marginals(p, x).stds.array().square();
        for (const auto& o : testing_support::random_history(k, 50, rng)) {
            p.update(x, o.arm, o.reward);
            const Vector current = arm_marginals(p, x).stds.array().square();
            EXPECT_TRUE(((current - previous).array() <= 1e-12).all());
            previous = current;
        }
        // eigenvalues of Σ̂ stay within the prior variance
        Eigen::SelfAdjointEigenSolver<Matrix> eig(p.sigma_hat());
        EXPECT_LE(eig.eigenvalues().maxCoeff(), 9.0 + 1e-9);
        EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0);
    }
}

TEST(PosteriorProperty, ConsistentOnHeavilyPulledArm) {
    // σ = 0.1, one arm pulled 10⁴ times: |μ̂ - μ| < 0.05 in at least 99% of seeds.
    const DesignMatrix x = kernel_to_design(KernelMatrix(Matrix::Identity(3, 3)));
    int close = 0;
    const int seeds = 200;
    for (int s = 0; s < seeds; ++s) {
        Rng rng(static_cast<std::uint64_t>(s));
        Posterior p = posterior_init({0.1, 5.0}, x);
        for (int i = 0; i < 10000; ++i) p.update(x, 1, 1.7 + 0.1 * standard_normal(rng));
        if (std::abs(arm_marginals(p, x).means[1] - 1.7) < 0.05) ++close;
    }
    EXPECT_GE(close, static_cast<int>(0.99 * seeds));
}

TEST(ArmMarginals, PerfectlyCorrelatedArmsMoveTogether) {
    Matrix g(3, 3);
    g << 1, 1, 0.2, 1, 1, 0.2, 0.2, 0.2, 1;
    const DesignMatrix x = kernel_to_design(KernelMatrix(g));
    Posterior p = posterior_init({0.5, 1.0}, x);
    p.update(x, 1, 0.8);
    const ArmMarginals m = arm_marginals(p, x);
    EXPECT_NEAR(m.means[0], m.means[1], 1e-12);
    EXPECT_NEAR(m.stds[0], m.stds[1], 1e-12);
}

TEST(ArmMarginals, DimensionMismatch) {
    const Posterior p = posterior_init({1.0, 1.0}, scalar_design());
    try {
        arm_marginals(p, DesignMatrix(Matrix::Identity(2, 2)));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
    }
}

TEST(ArmMarginals, StdsBoundedByPriorScale) {
    Rng rng(8);
    const DesignMatrix x = kernel_to_design(testing_support::random_psd_kernel(12, rng));
    const ModelConfig cfg{0.4, 1.7};
    Posterior p = posterior_init(cfg, x);
    for (const auto& o : testing_support::random_history(12, 30, rng)) p.update(x, o.arm, o.reward);
    const ArmMarginals m = arm_marginals(p, x);
    for (Eigen::Index k = 0; k < 12; ++k) {
        EXPECT_GE(m.stds[k], 0.0);
        EXPECT_LE(m.stds[k], cfg.eta * x.arm_norms()[k] + 1e-12);
    }
}

TEST(SampleArmMeans, DegeneratePosteriorReturnsMean) {
    const DesignMatrix x = kernel_to_design(KernelMatrix(Matrix::Identity(3, 3)));
    Vector theta(3);
    theta << 0.5, -1.0, 2.0;
    const Posterior p = Posterior::from_moments({1.0, 1.0}, x, theta, Matrix::Zero(3, 3));
    Rng rng(1);
    const Vector s = p.sample_arm_means(x, rng);
    EXPECT_LT((s - x.rows() * theta).norm(), 1e-12);
}

TEST(SampleArmMeans, PriorMonteCarloMeanNearZero) {
    Rng krng(4);
    const DesignMatrix x = kernel_to_design(testing_support::random_psd_kernel(5, krng));
    const ModelConfig cfg{1.0, 2.0};
    const Posterior p = posterior_init(cfg, x);
    Rng rng(99);
    const int n = 100000;
    Vector total = Vector::Zero(5);
    for (int i = 0; i < n; ++i) total += p.sample_arm_means(x, rng);
    const Vector mean = total / n;
    for (Eigen::Index k = 0; k < 5; ++k) {
        EXPECT_LE(std::abs(mean[k]), 3.0 * cfg.eta * x.arm_norms()[k] / std::sqrt(static_cast<double>(n)));
    }
}

TEST(SampleArmMeans, IdenticalRowsGiveIdenticalSamples) {
    Matrix g(3, 3);
    g << 2, 2, 0.5, 2, 2, 0.5, 0.5, 0.5, 1;
    const DesignMatrix x = kernel_to_design(KernelMatrix(g));
    Posterior p = posterior_init({0.3, 1.0}, x);
    p.update(x, 2, 0.4);
    Rng rng(6);
    for (int i = 0; i < 100; ++i) {
        const Vector s = p.sample_arm_means(x, rng);
        EXPECT_NEAR(s[0], s[1], 1e-12);
    }
}

TEST(SampleArmMeans, DeterministicGivenSeed) {
    Rng krng(4);
    const DesignMatrix x = kernel_to_design(testing_support::random_psd_kernel(7, krng));
    const Posterior p = posterior_init({1.0, 1.0}, x);
    Rng a(123);
    Rng b(123);
    EXPECT_EQ(p.sample_arm_means(x, a), p.sample_arm_means(x, b));
}

TEST(SampleArmMeans, IndefiniteCovarianceFails) {
    const DesignMatrix x(Matrix::Identity(2, 2));
    Matrix cov(2, 2);
    cov << 1, 0, 0, -1;
    const Posterior p = Posterior::from_moments({1.0, 1.0}, x, Vector::Zero(2), cov);
    Rng rng(1);
    try {
        p.sample_arm_means(x, rng);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::FactorizationFailure);
    }
}
