#include "scl/metrics.hpp"

#include <cmath>
#include <istream>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace scl {

namespace {
void stable_softmax(const Eigen::VectorXd& logits, Eigen::VectorXd& p) {
    const double m = logits.maxCoeff();
    p = (logits.array() - m).exp();
    p /= p.sum();
}

int count_legal(std::span<const std::uint8_t> mask) {
    int k = 0;
    for (auto m : mask)
        if (m) ++k;
    return k;
}
}  // namespace

double tvd_mask(const Eigen::VectorXd& p, std::span<const std::uint8_t> mask) {
    if (p.size() != static_cast<Eigen::Index>(mask.size()))
        throw std::invalid_argument("tvd: size mismatch");
    const int k = count_legal(mask);
    if (k == 0) throw std::invalid_argument("tvd: no legal token");
    const double uniform = 1.0 / k;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
        acc += mask[static_cast<std::size_t>(i)] ? std::abs(p[i] - uniform) : std::abs(p[i]);
    return 0.5 * acc;
}

double itp_mask(const Eigen::VectorXd& p, std::span<const std::uint8_t> mask) {
    if (p.size() != static_cast<Eigen::Index>(mask.size()))
        throw std::invalid_argument("itp: size mismatch");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
        if (!mask[static_cast<std::size_t>(i)]) acc += p[i];
    return acc;
}

int argmax_lowest(const Eigen::VectorXd& x) {
    int best = 0;
    for (Eigen::Index i = 1; i < x.size(); ++i)
        if (x[i] > x[best]) best = static_cast<int>(i);
    return best;
}

double itr_mask(const Eigen::VectorXd& logits, std::span<const std::uint8_t> mask) {
    if (logits.size() != static_cast<Eigen::Index>(mask.size()))
        throw std::invalid_argument("itr: size mismatch");
    return mask[static_cast<std::size_t>(argmax_lowest(logits))] ? 0.0 : 1.0;
}

double tvd(const Eigen::VectorXd& p, std::span<const int> t, int v) {
    return tvd_mask(p, legal_mask(t, v));
}

double itp(const Eigen::VectorXd& p, std::span<const int> t, int v) {
    return itp_mask(p, legal_mask(t, v));
}

double itr(const Eigen::VectorXd& logits, std::span<const int> t, int v) {
    return itr_mask(logits, legal_mask(t, v));
}

MetricValues evaluate(const LogitFn& predictor, const SampleBatch& batch,
                      bool full_length_only) {
    const int v = batch.v;
    if (batch.row_len > v - 1)
        throw std::invalid_argument("evaluate: rows longer than v-1 have full-length prefixes "
                                    "with no legal continuation");
    MetricValues acc;
    Eigen::VectorXd logits(v), p(v);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(v));
    long long terms = 0;
    for (int i = 0; i < batch.n_rows; ++i) {
        const auto row = batch.row(i);
        std::fill(mask.begin(), mask.end(), 1);
        for (int len = 1; len <= batch.row_len; ++len) {
            mask[static_cast<std::size_t>(row[len - 1])] = 0;
            if (full_length_only && len < batch.row_len) continue;
            predictor(row.subspan(0, static_cast<std::size_t>(len)), logits);
            stable_softmax(logits, p);
            acc.tvd += tvd_mask(p, mask);
            acc.itp += itp_mask(p, mask);
            acc.itr += itr_mask(logits, mask);
            ++terms;
        }
    }
    acc.tvd /= static_cast<double>(terms);
    acc.itp /= static_cast<double>(terms);
    acc.itr /= static_cast<double>(terms);
    return acc;
}

MetricValues evaluate_logit_lines(std::istream& in, int v, std::size_t* count_out) {
    MetricValues acc;
    std::size_t count = 0;
    std::string line;
    Eigen::VectorXd logits(v), p(v);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        const auto tokens = j.at("tokens").get<std::vector<int>>();
        const auto raw = j.at("logits").get<std::vector<double>>();
        if (static_cast<int>(raw.size()) != v)
            throw std::invalid_argument("logit line has " + std::to_string(raw.size()) +
                                        " entries, expected " + std::to_string(v));
        for (int i = 0; i < v; ++i) logits[i] = raw[static_cast<std::size_t>(i)];
        const auto mask = legal_mask(tokens, v);
        stable_softmax(logits, p);
        acc.tvd += tvd_mask(p, mask);
        acc.itp += itp_mask(p, mask);
        acc.itr += itr_mask(logits, mask);
        ++count;
    }
    if (count == 0) throw std::invalid_argument("empty logit stream");
    acc.tvd /= static_cast<double>(count);
    acc.itp /= static_cast<double>(count);
    acc.itr /= static_cast<double>(count);
    if (count_out) *count_out = count;
    return acc;
}

}  // namespace scl
