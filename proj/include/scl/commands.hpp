#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "scl/model.hpp"

namespace scl::commands {

// Exit-code contract shared by every subcommand:
// 0 success, 1 assertion/verification failure, 2 usage error, 3 I/O error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitVerificationFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitIo = 3;

inline constexpr const char* kArtifactVersion = "1.0.0";

struct VerifyTheoryArgs {
    int v = 6;
    double C = 10.0;
    NormMode norm = NormMode::identity;
    double eq_tol = 0.0;
    double tau = 1e-8;
    int exhaustive_cap_v = 8;  // refuse exhaustive enumeration beyond this v
    std::filesystem::path out;
};

int verify_theory(const VerifyTheoryArgs& args, nlohmann::json* report_out = nullptr);

struct TrainArgs {
    std::filesystem::path config;
    std::filesystem::path out_dir;
    bool strict = false;
};

int train(const TrainArgs& args);

struct SearchArgs {
    std::filesystem::path config;
    std::filesystem::path out_dir;
    int jobs = 0;  // 0 = take from config
    bool resume = false;
};

int search(const SearchArgs& args);

struct SummarizeArgs {
    std::filesystem::path in_dir;
    std::filesystem::path out_csv;  // default <in_dir>/summary.csv
    std::string group = "gap";
};

int summarize(const SummarizeArgs& args);

struct OthelloGenArgs {
    std::uint64_t count = 1000;
    std::uint64_t seed = 0;
    int min_len = 15;
    int max_len = 59;
    std::filesystem::path out;
    bool masks = false;
    bool no_pass_games = false;
};

int othello_gen(const OthelloGenArgs& args);

struct OthelloEvalArgs {
    std::filesystem::path logits;
    std::filesystem::path masks;  // optional cross-check sidecar
};

int othello_eval(const OthelloEvalArgs& args, nlohmann::json* report_out = nullptr);

}  // namespace scl::commands
