#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <string>
#include <stdexcept>
#include <vector>

namespace xva {

struct McStats {
    double mean = 0.0;
    double stdev = 0.0;     // sample stdev (n-1)
    double se = 0.0;        // stdev / sqrt(n)
    double ci_halfwidth = 0.0; // 1.96 * se
    std::size_t n = 0;
};

inline McStats mc_stats(const std::vector<double>& x) {
    if (x.empty()) throw std::invalid_argument("mc_stats: empty sample");
    McStats s;
    s.n = x.size();
    double sum = 0.0;
    for (double v : x) sum += v;
    s.mean = sum / static_cast<double>(s.n);
    double ss = 0.0;
    for (double v : x) {
        const double d = v - s.mean;
        ss += d * d;
    }
    s.stdev = (s.n > 1) ? std::sqrt(ss / static_cast<double>(s.n - 1)) : 0.0;
    s.se = s.stdev / std::sqrt(static_cast<double>(s.n));
    s.ci_halfwidth = 1.96 * s.se;
    return s;
}

inline double normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Empirical quantile with "higher" interpolation: smallest order statistic
// x_(k) with k >= alpha*n (1-based).
inline double quantile_higher(std::vector<double> v, double alpha) {
    if (v.empty()) throw std::invalid_argument("quantile_higher: empty sample");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("quantile_higher: alpha outside (0,1)");
    std::sort(v.begin(), v.end());
    const double an = alpha * static_cast<double>(v.size());
    std::size_t k = static_cast<std::size_t>(std::ceil(an));
    if (k < 1) k = 1;
    if (k > v.size()) k = v.size();
    return v[k - 1];
}

// Report CSVs carry 6 significant digits.
inline std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline bool matches_significant_digits(double value, double reference, int digits) {
    if (reference == 0.0) return std::fabs(value) < std::pow(10.0, -digits);
    const double mag = std::floor(std::log10(std::fabs(reference)));
    const double scale = std::pow(10.0, mag - digits + 1);
    return std::llround(value / scale) == std::llround(reference / scale);
}

} // namespace xva
