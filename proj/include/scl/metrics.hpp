#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <span>

#include "scl/task.hpp"

namespace scl {

struct MetricValues {
    double tvd = 0.0;
    double itp = 0.0;
    double itr = 0.0;
};

// Mask-based cores: mask[u] != 0 marks a legal token. The target distribution
// is uniform over legal tokens; ITP is the mass on illegal ones; ITR flags an
// illegal argmax (ties broken by lowest index).
double tvd_mask(const Eigen::VectorXd& p, std::span<const std::uint8_t> mask);
double itp_mask(const Eigen::VectorXd& p, std::span<const std::uint8_t> mask);
double itr_mask(const Eigen::VectorXd& logits, std::span<const std::uint8_t> mask);

// Set-complement wrappers: legal = tokens absent from t.
double tvd(const Eigen::VectorXd& p, std::span<const int> t, int v);
double itp(const Eigen::VectorXd& p, std::span<const int> t, int v);
double itr(const Eigen::VectorXd& logits, std::span<const int> t, int v);

int argmax_lowest(const Eigen::VectorXd& x);

/// Fills logits for a prefix; the predictor owns any scratch state.
using LogitFn = std::function<void(std::span<const int> prefix, Eigen::VectorXd& logits)>;

/// Mean of each metric over all rows and prefix lengths 1..row_len of the
/// batch; with full_length_only the prefix set is just {row_len} (fixed
/// evaluation length).
MetricValues evaluate(const LogitFn& predictor, const SampleBatch& batch,
                      bool full_length_only = false);

/// Scores an external-logit JSONL stream: each line {"tokens": [...],
/// "logits": [...]} is one prefix evaluation; returns the mean metrics.
MetricValues evaluate_logit_lines(std::istream& in, int v, std::size_t* count_out = nullptr);

}  // namespace scl
