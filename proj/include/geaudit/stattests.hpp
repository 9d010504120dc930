#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace geaudit::stats {

/// Labeled sample of finite reals. NaN and infinities are rejected on construction.
class Sample {
public:
    Sample() = default;
    Sample(std::string label, std::vector<double> values);

    const std::string& label() const { return label_; }
    const std::vector<double>& values() const { return values_; }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

private:
    std::string label_;
    std::vector<double> values_;
};

enum class Method { MwExact, MwNormalApprox, KsAsymptotic };

std::string_view to_string(Method m);

struct TestResult {
    double statistic = 0.0;  // U for the first sample, or D
    double p_value = 1.0;    // two-sided
    Method method = Method::MwNormalApprox;
    std::size_t n1 = 0;
    std::size_t n2 = 0;
    bool degenerate = false;  // zero variance: every pooled value identical
};

/// Exact enumeration is used when the smaller sample has at most this many
/// values and the pooled sample has no ties.
inline constexpr std::size_t kExactMaxMinSize = 12;

/// Uniform sample without replacement of `target_n` values, preserving input
/// order. Deterministic for a given (seed, input order) on every platform:
/// selection sampling driven by mt19937_64 with no library distributions.
Sample balance_downsample(const Sample& larger, std::size_t target_n, std::uint64_t seed);

/// Two-sided Mann-Whitney U test. Mid-ranks for ties; exact null
/// distribution for small tie-free samples, otherwise the normal
/// approximation with tie-corrected variance and continuity correction.
TestResult mann_whitney_u(const Sample& a, const Sample& b);

/// Null distribution of U for sample sizes (n1, n2) as probabilities over
/// u = 0..n1*n2, computed by the Mann-Whitney counting recurrence.
std::vector<double> mann_whitney_null_distribution(std::size_t n1, std::size_t n2);

/// Two-sample Kolmogorov-Smirnov test: D over all pooled points, asymptotic
/// p-value from the Kolmogorov distribution at sqrt(n1*n2/(n1+n2)) * D.
TestResult ks_two_sample(const Sample& a, const Sample& b);

/// Survival function of the Kolmogorov distribution, P(K > lambda).
double kolmogorov_sf(double lambda);

/// "***" / "**" / "*" at 0.001 / 0.01 / 0.05, else "".
std::string significance_stars(double p);

}  // namespace geaudit::stats
