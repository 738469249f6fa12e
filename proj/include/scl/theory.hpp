#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "scl/model.hpp"
#include "scl/rng.hpp"

namespace scl {

/// The minimal closed-form solution: d = d_v = v-1, d_k = 1, W_Q = W_K = 0,
/// W_V = vC*I, W_O = I, E stacks the standard basis over an all-minus-ones
/// row, U is [-I | 0]. Identity norm keeps the certificate exact; rmsnorm
/// mode keeps gains at 1 (a single per-dimension gain cannot normalize rows
/// of unequal norm back to E).
ModelParams build_hardcoded(int v, double C, NormMode norm);

enum class EnumMode { exhaustive, sampled };

struct PrecisionLengthReport {
    int s = 0;
    // Least f(t)_u - f(t)_w over legal u and occupied w, and the same with w
    // restricted to the final token t_s.
    double min_displacement = 0.0;
    double min_displacement_final = 0.0;
    // Largest |f(t)_u - f(t)_u'| over legal pairs.
    double max_equality_deviation = 0.0;
    std::uint64_t sequences_checked = 0;
    bool exhaustive = true;
    bool passes = false;
};

struct PrecisionReport {
    double threshold = 0.0;  // the C being certified
    double eq_tol = 0.0;
    std::vector<PrecisionLengthReport> lengths;
    bool all_pass = false;
};

/// Certifies the precision property for a constant-attention model given by
/// (B, D): enumerates every repetition-free sequence of each requested length
/// (passes iff min_displacement > C and max_equality_deviation <= eq_tol).
/// Exhaustive mode refuses lengths whose sequence count exceeds the cap;
/// sampled mode draws `samples` random sequences instead and labels the
/// report non-exhaustive.
PrecisionReport check_precision(const Eigen::MatrixXd& B, const Eigen::MatrixXd& D,
                                const std::vector<int>& lengths, double C, double eq_tol,
                                EnumMode mode = EnumMode::exhaustive,
                                std::uint64_t exhaustive_cap = 10'000'000,
                                std::uint64_t samples = 1'000'000, Rng* rng = nullptr);

std::uint64_t sequence_count(int v, int s);  // v!/(v-s)!

struct RankReport {
    std::string name;
    std::vector<double> singular_values;  // descending
    int rank = 0;
    double tau = 0.0;
};

/// rank = #{sigma_i > tau * sigma_max}, via a backward-stable SVD.
RankReport numeric_rank(const Eigen::MatrixXd& m, double tau, std::string name = "");

/// Assembles 1 u^T + v 1^T + diag(w) (all w_i < 0 required) and returns its
/// numeric rank; the assembled matrix provably has rank >= n-1.
RankReport assembled_matrix_rank(const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                             const Eigen::VectorXd& w, double tau = 1e-10);

struct RankBoundsVerdict {
    PrecisionReport precision_len1;
    PrecisionReport precision_len12;
    RankReport rank_b_plus_d;
    RankReport rank_d;
    bool precision_len1_holds = false;  // precision C holds at length 1
    bool rank_b_plus_d_ok = false;       // rank(B+D) >= v-1
    bool precision_len12_holds = false;  // precision C holds at lengths 1 and 2
    bool rank_d_ok = false;       // rank(D) >= v-1
};

/// Numeric check of the rank bounds: when the precision hypotheses hold at
/// the given threshold, the corresponding ranks must reach v-1.
RankBoundsVerdict verify_rank_bounds(const Eigen::MatrixXd& B, const Eigen::MatrixXd& D,
                                     double C, double eq_tol, double tau);

struct BalanceReport {
    double threshold = 0.0;  // the C in "< 2C"
    double max_lhs = 0.0;    // max over distinct (t,u) of f((t))_u - f((t))_t
    bool holds = false;
};

BalanceReport check_balance_condition(const Eigen::MatrixXd& B, const Eigen::MatrixXd& D,
                                      double C);

struct DecayRow {
    int s = 0;
    double bound = 0.0;     // (2/s) * C
    double measured = 0.0;  // min displacement at length s
    bool holds = false;
};

struct DecayReport {
    double C = 0.0;
    bool hyp_precision = false;  // precision C at lengths 1 and 2
    bool hyp_balance = false;    // balance condition at C
    bool applicable = false;     // both hypotheses
    std::vector<DecayRow> rows;  // lengths 3..v-1
    bool conclusion_holds = true;
};

/// Measures per-length displacement against the (2/s)C decay bound for
/// 3 <= s < v. Hypothesis flags report the decay premises; the table and
/// conclusion are evaluated regardless so the decay behaviour of models that
/// fail a premise is still visible.
DecayReport check_length_decay(const Eigen::MatrixXd& B, const Eigen::MatrixXd& D,
                               double C, int v, double eq_tol,
                               std::uint64_t exhaustive_cap = 10'000'000);

}  // namespace scl
