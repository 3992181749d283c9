#pragma once

// Helpers shared by the unit and acceptance tests. The oracles here are
// written from the documented rules and deliberately share no code with the
// library.

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace s2conv::testing {

inline std::filesystem::path fixture_dir() { return S2CONV_TEST_FIXTURES; }
inline std::filesystem::path golden_dir() { return S2CONV_TEST_GOLDEN; }

inline std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "s2conv") {
        std::string pattern = (std::filesystem::temp_directory_path() / (tag + "-XXXXXX")).string();
        if (::mkdtemp(pattern.data()) == nullptr) {
            throw std::runtime_error("mkdtemp failed");
        }
        path_ = pattern;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

struct ProcessResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

// Runs argv[0] with the given arguments, waits, and captures both streams.
// `env` entries ("NAME=value") are added to the current environment.
inline ProcessResult run_process(const std::vector<std::string>& argv,
                                 const std::vector<std::string>& env = {}) {
    TempDir io("s2conv-run");
    const auto out_path = (io / "out").string();
    const auto err_path = (io / "err").string();
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_addopen(&actions, 1, out_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    posix_spawn_file_actions_addopen(&actions, 2, err_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    posix_spawn_file_actions_addopen(&actions, 0, "/dev/null", O_RDONLY, 0);

    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    std::vector<std::string> env_storage;
    for (char** e = environ; *e; ++e) env_storage.emplace_back(*e);
    env_storage.insert(env_storage.end(), env.begin(), env.end());
    std::vector<char*> envp;
    for (auto& e : env_storage) envp.push_back(e.data());
    envp.push_back(nullptr);

    pid_t pid = 0;
    ProcessResult result;
    if (posix_spawn(&pid, args[0], &actions, nullptr, args.data(), envp.data()) == 0) {
        int status = 0;
        waitpid(pid, &status, 0);
        result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
    }
    posix_spawn_file_actions_destroy(&actions);
    result.out = slurp(out_path);
    result.err = slurp(err_path);
    return result;
}

namespace oracle {

inline std::vector<std::string> lowercase_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        const bool word = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
        if (word) {
            cur.push_back(static_cast<char>(c >= 'A' && c <= 'Z' ? c + 32 : c));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) {
        out.push_back(cur);
    }
    return out;
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h = (h ^ c) * 0x100000001b3ULL;
    }
    return h;
}

// Bucket counts, L2-normalized. Text without any word token counts as one
// token made of the whole text, lowercased.
inline std::vector<double> hashed_embedding(const std::string& text, std::size_t dim) {
    auto tokens = lowercase_tokens(text);
    if (tokens.empty()) {
        std::string whole;
        for (unsigned char c : text) {
            whole.push_back(static_cast<char>(c >= 'A' && c <= 'Z' ? c + 32 : c));
        }
        tokens.push_back(whole);
    }
    std::vector<double> v(dim, 0.0);
    for (const auto& t : tokens) {
        v[fnv1a64(t) % dim] += 1.0;
    }
    double ss = 0.0;
    for (double x : v) ss += x * x;
    for (double& x : v) x /= std::sqrt(ss);
    return v;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Brute-force memory choice: highest cosine between the query and
// "<aspect>: <content>"; among aspects within 1e-12 of the best, the
// lexicographically smallest name.
inline std::string best_aspect(const std::string& query,
                               const std::vector<std::pair<std::string, std::string>>& memory,
                               std::size_t dim = 256) {
    const auto q = hashed_embedding(query, dim);
    std::vector<std::pair<std::string, double>> scored;
    double best = -2.0;
    for (const auto& [aspect, content] : memory) {
        const double s = cosine(q, hashed_embedding(aspect + ": " + content, dim));
        scored.emplace_back(aspect, s);
        best = std::max(best, s);
    }
    std::string winner;
    for (const auto& [aspect, s] : scored) {
        if (best - s <= 1e-12 && (winner.empty() || aspect < winner)) {
            winner = aspect;
        }
    }
    return winner;
}

inline int positional_matches(const std::string& a, const std::string& b) {
    int n = 0;
    for (std::size_t i = 0; i < 4; ++i) n += a[i] == b[i];
    return n;
}

struct Moments {
    double avg, min, max, std;
};

// Two passes: mean first, then the mean squared deviation.
inline Moments population_moments(const std::vector<double>& xs) {
    double sum = 0.0, lo = xs.front(), hi = xs.front();
    for (double x : xs) {
        sum += x;
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    const double mean = sum / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, lo, hi, std::sqrt(ss / static_cast<double>(xs.size()))};
}

// Sample covariance over the product of sample standard deviations.
inline double pearson_definition(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i] / n;
        my += y[i] / n;
    }
    double cov = 0.0, vx = 0.0, vy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        cov += (x[i] - mx) * (y[i] - my) / (n - 1);
        vx += (x[i] - mx) * (x[i] - mx) / (n - 1);
        vy += (y[i] - my) * (y[i] - my) / (n - 1);
    }
    return cov / (std::sqrt(vx) * std::sqrt(vy));
}

}  // namespace oracle

}  // namespace s2conv::testing
