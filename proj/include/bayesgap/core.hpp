#pragma once

#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace bayesgap {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Arm indices are zero-based everywhere in the library and its file formats.
using Arm = Eigen::Index;

using Rng = std::mt19937_64;

enum class ErrorCode {
    NotSymmetric,
    NotPSD,
    ArmOutOfRange,
    DimensionMismatch,
    FactorizationFailure,
    InvalidConfig,
    TooFewArms,
    ZeroNormArm,
    NoRoundsElapsed,
    BudgetTooSmallForFrequentist,
    DegenerateData,
    EmptyGrid,
    ChildProcessFailure,
    MalformedReply,
    Timeout,
    IoFailure,
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::NotSymmetric: return "NotSymmetric";
        case ErrorCode::NotPSD: return "NotPSD";
        case ErrorCode::ArmOutOfRange: return "ArmOutOfRange";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::FactorizationFailure: return "FactorizationFailure";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::TooFewArms: return "TooFewArms";
        case ErrorCode::ZeroNormArm: return "ZeroNormArm";
        case ErrorCode::NoRoundsElapsed: return "NoRoundsElapsed";
        case ErrorCode::BudgetTooSmallForFrequentist: return "BudgetTooSmallForFrequentist";
        case ErrorCode::DegenerateData: return "DegenerateData";
        case ErrorCode::EmptyGrid: return "EmptyGrid";
        case ErrorCode::ChildProcessFailure: return "ChildProcessFailure";
        case ErrorCode::MalformedReply: return "MalformedReply";
        case ErrorCode::Timeout: return "Timeout";
        case ErrorCode::IoFailure: return "IoFailure";
    }
    return "Unknown";
}

/// Single exception type for the library; `code()` identifies the failure class.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline void check_arm(Arm arm, Eigen::Index num_arms) {
    if (arm < 0 || arm >= num_arms) {
        throw Error(ErrorCode::ArmOutOfRange,
                    "arm " + std::to_string(arm) + " not in [0, " + std::to_string(num_arms) + ")");
    }
}

inline double standard_normal(Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(rng);
}

inline Vector standard_normal_vector(Eigen::Index n, Rng& rng) {
    Vector z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = standard_normal(rng);
    return z;
}

namespace seeding {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Stable stream seed for (master, label, index). Independent of platform and
/// of which other labels exist, so adding a policy never shifts another's draws.
inline std::uint64_t derive(std::uint64_t master, std::string_view label, std::uint64_t index) {
    std::uint64_t h = splitmix64(master);
    h = splitmix64(h ^ fnv1a(label));
    return splitmix64(h ^ splitmix64(index));
}

}  // namespace seeding

namespace logging {

enum class Level { Debug = 0, Info = 1, Warn = 2, Off = 3 };

inline Level& threshold() {
    static Level level = [] {
        const char* env = std::getenv("BAYESGAP_LOG");
        if (env == nullptr) return Level::Warn;
        std::string_view v(env);
        if (v == "debug") return Level::Debug;
        if (v == "info") return Level::Info;
        if (v == "off") return Level::Off;
        return Level::Warn;
    }();
    return level;
}

inline void write(Level level, std::string_view message) {
    if (level < threshold()) return;
    static constexpr const char* names[] = {"debug", "info", "warn"};
    std::clog << "[bayesgap " << names[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace logging

}  // namespace bayesgap
