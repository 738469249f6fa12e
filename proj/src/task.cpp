#include "scl/task.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <istream>
#include <stdexcept>

#include "scl/io.hpp"

namespace scl {

bool is_repetition_free(std::span<const int> t, int v) {
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(v), 0);
    for (int u : t) {
        if (u < 0 || u >= v || seen[static_cast<std::size_t>(u)]) return false;
        seen[static_cast<std::size_t>(u)] = 1;
    }
    return true;
}

void check_sequence(std::span<const int> t, int v) {
    if (v < 2) throw std::invalid_argument("vocabulary size must be at least 2");
    if (!is_repetition_free(t, v))
        throw std::invalid_argument("sequence has a repeated or out-of-range token");
}

Eigen::VectorXd perfect_distribution(std::span<const int> t, int v) {
    check_sequence(t, v);
    const int s = static_cast<int>(t.size());
    if (s >= v)
        throw std::invalid_argument("no token remains: sequence length >= vocabulary size");
    Eigen::VectorXd p = Eigen::VectorXd::Constant(v, 1.0 / (v - s));
    for (int u : t) p[u] = 0.0;
    return p;
}

std::vector<std::uint8_t> legal_mask(std::span<const int> t, int v) {
    check_sequence(t, v);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(v), 1);
    for (int u : t) mask[static_cast<std::size_t>(u)] = 0;
    return mask;
}

TokenSeq sample_sequence(int v, int s, Rng& rng) {
    if (s < 1 || s > v) throw std::invalid_argument("sequence length must be in [1, v]");
    TokenSeq pool(static_cast<std::size_t>(v));
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < s; ++i) {
        const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(v - i)));
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    pool.resize(static_cast<std::size_t>(s));
    return pool;
}

SampleBatch make_batch(int v, int len, int n, Rng& rng) {
    if (n < 1) throw std::invalid_argument("batch size must be positive");
    SampleBatch b;
    b.v = v;
    b.row_len = len;
    b.n_rows = n;
    b.tokens.reserve(static_cast<std::size_t>(n) * len);
    for (int i = 0; i < n; ++i) {
        TokenSeq row = sample_sequence(v, len, rng);
        b.tokens.insert(b.tokens.end(), row.begin(), row.end());
    }
    return b;
}

SampleBatch make_training_batch(int v, int s, int n, Rng& rng) {
    if (s + 1 > v) throw std::invalid_argument("training batch needs s+1 <= v");
    return make_batch(v, s + 1, n, rng);
}

SampleBatch make_validation_batch(int v, int n, Rng& rng) {
    if (v < 2) throw std::invalid_argument("vocabulary size must be at least 2");
    return make_batch(v, v - 1, n, rng);
}

void write_batch_binary(const SampleBatch& b, std::ostream& out) {
    io::write_u32(out, static_cast<std::uint32_t>(b.v));
    io::write_u32(out, static_cast<std::uint32_t>(b.row_len));
    io::write_u32(out, static_cast<std::uint32_t>(b.n_rows));
    for (int t : b.tokens) io::write_u16(out, static_cast<std::uint16_t>(t));
}

SampleBatch read_batch_binary(std::istream& in) {
    SampleBatch b;
    b.v = static_cast<int>(io::read_u32(in));
    b.row_len = static_cast<int>(io::read_u32(in));
    b.n_rows = static_cast<int>(io::read_u32(in));
    const std::size_t count = static_cast<std::size_t>(b.row_len) * b.n_rows;
    b.tokens.resize(count);
    for (std::size_t i = 0; i < count; ++i) b.tokens[i] = io::read_u16(in);
    if (!in) throw std::runtime_error("truncated batch stream");
    return b;
}

void write_batch_jsonl(const SampleBatch& b, std::ostream& out) {
    for (int i = 0; i < b.n_rows; ++i) {
        auto row = b.row(i);
        out << '[';
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (j) out << ',';
            out << row[j];
        }
        out << "]\n";
    }
}

}  // namespace scl
