#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "scl/rng.hpp"

namespace scl {

// Tokens are 0-based integers in [0, v). A sequence is repetition-free; lengths
// up to v-1 are valid model inputs, length-v sequences serve as training
// carriers only.
using TokenSeq = std::vector<int>;

/// Throws std::invalid_argument unless every token is in [0, v) and no token repeats.
void check_sequence(std::span<const int> t, int v);

bool is_repetition_free(std::span<const int> t, int v);

/// Uniform distribution on the tokens absent from t: zero on [t], 1/(v-s) off it.
/// Requires |t| < v (otherwise no token remains).
Eigen::VectorXd perfect_distribution(std::span<const int> t, int v);

/// mask[u] is 1 iff u does not occur in t.
std::vector<std::uint8_t> legal_mask(std::span<const int> t, int v);

/// Uniform draw over all v!/(v-s)! ordered repetition-free sequences
/// (partial Fisher-Yates shuffle of 0..v-1). Requires 1 <= s <= v.
TokenSeq sample_sequence(int v, int s, Rng& rng);

/// Fixed-shape minibatch of repetition-free rows.
struct SampleBatch {
    int v = 0;
    int row_len = 0;
    int n_rows = 0;
    std::vector<int> tokens;  // row-major, n_rows * row_len

    std::span<const int> row(int i) const {
        return {tokens.data() + static_cast<std::size_t>(i) * row_len,
                static_cast<std::size_t>(row_len)};
    }
};

/// N rows of length s+1; position s'+1 is the sampled target for prefix length s'.
SampleBatch make_training_batch(int v, int s, int n, Rng& rng);

/// N rows of length v-1 (the longest valid inputs).
SampleBatch make_validation_batch(int v, int n, Rng& rng);

/// N rows of the given length (validation at the training length, etc.).
SampleBatch make_batch(int v, int len, int n, Rng& rng);

// Flat binary layout: header (v, row_len, n_rows as u32 LE), then
// n_rows*row_len token ids as u16 LE. JSONL form is one array per line.
void write_batch_binary(const SampleBatch& b, std::ostream& out);
SampleBatch read_batch_binary(std::istream& in);
void write_batch_jsonl(const SampleBatch& b, std::ostream& out);

}  // namespace scl
