#pragma once

// Statistics helpers shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace teststats {

// chi^2_{0.999} quantiles for the degrees of freedom the tests use
// (p > 0.001 acceptance <=> statistic below the quantile).
inline double chi2_quantile_999(int df) {
    switch (df) {
        case 1: return 10.828;
        case 2: return 13.816;
        case 3: return 16.266;
        case 5: return 20.515;
        case 11: return 31.264;
        case 23: return 49.728;
        default: break;
    }
    // Wilson-Hilferty approximation, accurate to ~0.5% at these sizes.
    const double z = 3.0902;  // Phi^{-1}(0.999)
    const double t = 1.0 - 2.0 / (9.0 * df) + z * std::sqrt(2.0 / (9.0 * df));
    return df * t * t * t;
}

inline double chi_square_statistic(const std::vector<long long>& counts, double expected) {
    double stat = 0.0;
    for (long long c : counts) {
        const double d = static_cast<double>(c) - expected;
        stat += d * d / expected;
    }
    return stat;
}

/// Kolmogorov-Smirnov p-value for samples against U[lo, hi], via the
/// asymptotic Kolmogorov distribution with the Stephens small-sample factor.
inline double ks_uniform_pvalue(std::vector<double> samples, double lo, double hi) {
    std::sort(samples.begin(), samples.end());
    const std::size_t n = samples.size();
    double d = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double u = (samples[i] - lo) / (hi - lo);
        const double hi_step = static_cast<double>(i + 1) / static_cast<double>(n);
        const double lo_step = static_cast<double>(i) / static_cast<double>(n);
        d = std::max(d, std::max(hi_step - u, u - lo_step));
    }
    const double sn = std::sqrt(static_cast<double>(n));
    const double lambda = (sn + 0.12 + 0.11 / sn) * d;
    double p = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = 2.0 * std::exp(-2.0 * k * k * lambda * lambda);
        p += (k % 2 == 1) ? term : -term;
    }
    return std::clamp(p, 0.0, 1.0);
}

/// One-sided sign test: P(X >= wins) for X ~ Binomial(n, 1/2).
inline double sign_test_pvalue(int wins, int n) {
    double p = 0.0;
    for (int k = wins; k <= n; ++k) {
        double log_c = 0.0;
        for (int i = 0; i < k; ++i)
            log_c += std::log(static_cast<double>(n - i)) - std::log(static_cast<double>(i + 1));
        p += std::exp(log_c - n * std::log(2.0));
    }
    return std::min(1.0, p);
}

}  // namespace teststats
