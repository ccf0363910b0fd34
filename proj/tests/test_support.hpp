#pragma once

#include <random>
#include <vector>

#include "bayesgap/core.hpp"
#include "bayesgap/posterior.hpp"

namespace testing_support {

inline double uniform(bayesgap::Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// A Aᵀ with A of random rank r ≤ K, scaled by a random factor, so the
/// generator covers both full-rank and rank-deficient kernels.
inline bayesgap::KernelMatrix random_psd_kernel(Eigen::Index k, bayesgap::Rng& rng) {
    const auto rank = static_cast<Eigen::Index>(1 + rng() % static_cast<std::uint64_t>(k));
    bayesgap::Matrix a(k, rank);
    for (Eigen::Index i = 0; i < k; ++i) {
        for (Eigen::Index j = 0; j < rank; ++j) a(i, j) = bayesgap::standard_normal(rng);
    }
    const double scale = std::pow(10.0, uniform(rng, -2.0, 2.0));
    bayesgap::Matrix g = scale * a * a.transpose();
    g = 0.5 * (g + g.transpose()).eval();
    return bayesgap::KernelMatrix(std::move(g));
}

inline std::vector<bayesgap::Observation> random_history(Eigen::Index k, int length, bayesgap::Rng& rng) {
    std::vector<bayesgap::Observation> h;
    h.reserve(static_cast<std::size_t>(length));
    for (int i = 0; i < length; ++i) {
        h.push_back({static_cast<bayesgap::Arm>(rng() % static_cast<std::uint64_t>(k)), uniform(rng, -3.0, 3.0)});
    }
    return h;
}

}  // namespace testing_support
