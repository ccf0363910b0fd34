#pragma once

#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "bayesgap/core.hpp"
#include "bayesgap/environments.hpp"

extern char** environ;

namespace bayesgap {

/// Wire protocol version carried in every request and reply.
inline constexpr int kEvaluatorProtocolVersion = 1;

struct ExternalCommand {
    std::vector<std::string> argv;
    std::chrono::milliseconds timeout{600'000};
};

/// A child process talking newline-delimited text over its stdin/stdout.
/// Stderr is inherited. The child is terminated on destruction.
class ChildProcess {
public:
    explicit ChildProcess(const std::vector<std::string>& argv) {
        if (argv.empty()) throw Error(ErrorCode::InvalidConfig, "empty evaluator command");
        static std::once_flag sigpipe_once;
        std::call_once(sigpipe_once, [] { std::signal(SIGPIPE, SIG_IGN); });

        int to_child[2];
        int from_child[2];
        if (::pipe2(to_child, O_CLOEXEC) != 0) throw spawn_error("pipe");
        if (::pipe2(from_child, O_CLOEXEC) != 0) {
            ::close(to_child[0]);
            ::close(to_child[1]);
            throw spawn_error("pipe");
        }

        posix_spawn_file_actions_t actions;
        posix_spawn_file_actions_init(&actions);
        posix_spawn_file_actions_adddup2(&actions, to_child[0], STDIN_FILENO);
        posix_spawn_file_actions_adddup2(&actions, from_child[1], STDOUT_FILENO);

        std::vector<char*> args;
        args.reserve(argv.size() + 1);
        for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
        args.push_back(nullptr);

        const int rc = ::posix_spawnp(&pid_, args[0], &actions, nullptr, args.data(), environ);
        posix_spawn_file_actions_destroy(&actions);
        ::close(to_child[0]);
        ::close(from_child[1]);
        if (rc != 0) {
            ::close(to_child[1]);
            ::close(from_child[0]);
            throw Error(ErrorCode::ChildProcessFailure,
                        "cannot start '" + argv[0] + "': " + std::strerror(rc));
        }
        write_fd_ = to_child[1];
        read_fd_ = from_child[0];
    }

    ChildProcess(const ChildProcess&) = delete;
    ChildProcess& operator=(const ChildProcess&) = delete;

    ~ChildProcess() { terminate(); }

    void write_line(const std::string& line) {
        std::string data = line + '\n';
        const char* p = data.data();
        std::size_t left = data.size();
        while (left > 0) {
            const ssize_t n = ::write(write_fd_, p, left);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw Error(ErrorCode::ChildProcessFailure, std::string("write to evaluator failed: ") +
                                                                std::strerror(errno));
            }
            p += n;
            left -= static_cast<std::size_t>(n);
        }
    }

    std::string read_line(std::chrono::milliseconds timeout) {
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        for (;;) {
            if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
                std::string line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                return line;
            }
            const auto remaining =
                std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (remaining.count() <= 0) {
                throw Error(ErrorCode::Timeout, "evaluator did not reply within " +
                                                    std::to_string(timeout.count()) + " ms");
            }
            pollfd pfd{read_fd_, POLLIN, 0};
            const int ready = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(remaining.count(), 1'000'000)));
            if (ready < 0) {
                if (errno == EINTR) continue;
                throw Error(ErrorCode::ChildProcessFailure, std::string("poll failed: ") + std::strerror(errno));
            }
            if (ready == 0) continue;
            char chunk[4096];
            const ssize_t n = ::read(read_fd_, chunk, sizeof(chunk));
            if (n < 0) {
                if (errno == EINTR) continue;
                throw Error(ErrorCode::ChildProcessFailure, std::string("read failed: ") + std::strerror(errno));
            }
            if (n == 0) throw Error(ErrorCode::ChildProcessFailure, "evaluator closed its output (exited?)");
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

private:
    static Error spawn_error(const char* what) {
        return Error(ErrorCode::ChildProcessFailure, std::string(what) + ": " + std::strerror(errno));
    }

    void terminate() noexcept {
        if (write_fd_ >= 0) ::close(write_fd_);
        if (read_fd_ >= 0) ::close(read_fd_);
        write_fd_ = read_fd_ = -1;
        if (pid_ <= 0) return;
        int status = 0;
        for (int i = 0; i < 50; ++i) {
            if (::waitpid(pid_, &status, WNOHANG) == pid_) {
                pid_ = -1;
                return;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
        pid_ = -1;
    }

    pid_t pid_ = -1;
    int write_fd_ = -1;
    int read_fd_ = -1;
    std::string buffer_;
};

inline std::string format_evaluator_request(Arm arm, std::uint64_t seed) {
    return "{\"v\":" + std::to_string(kEvaluatorProtocolVersion) + ",\"arm\":" + std::to_string(arm) +
           ",\"seed\":" + std::to_string(seed) + "}";
}

inline double parse_evaluator_reply(const std::string& line) {
    const auto reply = nlohmann::json::parse(line, nullptr, false);
    if (reply.is_discarded() || !reply.is_object()) {
        throw Error(ErrorCode::MalformedReply, "reply is not a JSON object: '" + line + "'");
    }
    const auto v = reply.find("v");
    if (v == reply.end() || !v->is_number_integer() || v->get<int>() != kEvaluatorProtocolVersion) {
        throw Error(ErrorCode::MalformedReply, "reply has missing or unsupported version: '" + line + "'");
    }
    const auto reward = reply.find("reward");
    if (reward == reply.end() || !reward->is_number()) {
        throw Error(ErrorCode::MalformedReply, "reply has no numeric reward: '" + line + "'");
    }
    const double value = reward->get<double>();
    if (!std::isfinite(value)) throw Error(ErrorCode::MalformedReply, "reward is not finite");
    return value;
}

/// One evaluator process; each `evaluate` is a single request/reply exchange.
class ExternalEvaluator {
public:
    explicit ExternalEvaluator(ExternalCommand command)
        : command_(std::move(command)), child_(command_.argv) {}

    double evaluate(Arm arm, std::uint64_t seed) {
        child_.write_line(format_evaluator_request(arm, seed));
        return parse_evaluator_reply(child_.read_line(command_.timeout));
    }

private:
    ExternalCommand command_;
    ChildProcess child_;
};

/// Reward oracle backed by an evaluator process. Per-pull seeds come from the
/// episode stream and are kept to 53 bits so any JSON reader holds them exactly.
class ExternalOracle final : public RewardOracle {
public:
    ExternalOracle(ExternalCommand command, std::uint64_t seed) : evaluator_(std::move(command)), rng_(seed) {}

    double pull(Arm arm) override { return evaluator_.evaluate(arm, next_seed()); }
    std::uint64_t next_seed() { return rng_() >> 11; }

private:
    ExternalEvaluator evaluator_;
    Rng rng_;
};

/// Black-box world: a kernel given to the policies and a command to pull arms.
/// True means are unknown.
struct ExternalWorld {
    ExternalCommand command;
    KernelMatrix kernel;
    std::shared_ptr<const DesignMatrix> design;

    Eigen::Index arms() const { return kernel.arms(); }
};

inline ExternalWorld external_instance(ExternalCommand command, const KernelMatrix& kernel) {
    if (command.argv.empty()) throw Error(ErrorCode::InvalidConfig, "evaluator command is empty");
    if (command.timeout.count() <= 0) throw Error(ErrorCode::InvalidConfig, "evaluator timeout must be positive");
    if (kernel.arms() < 2) throw Error(ErrorCode::TooFewArms, "instance needs at least two arms");
    ExternalWorld world;
    world.command = std::move(command);
    world.kernel = kernel;
    world.design = std::make_shared<const DesignMatrix>(kernel_to_design(kernel));
    return world;
}

}  // namespace bayesgap
