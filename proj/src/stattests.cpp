#include "geaudit/stattests.hpp"

#include "geaudit/common.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace geaudit::stats {

Sample::Sample(std::string label, std::vector<double> values) : label_(std::move(label)), values_(std::move(values)) {
    for (double v : values_) {
        if (!std::isfinite(v)) throw ValidationError("sample '" + label_ + "' contains a non-finite value");
    }
}

std::string_view to_string(Method m) {
    switch (m) {
        case Method::MwExact: return "mw_exact";
        case Method::MwNormalApprox: return "mw_normal_approx";
        case Method::KsAsymptotic: return "ks_asymptotic";
    }
    return "unknown";
}

Sample balance_downsample(const Sample& larger, std::size_t target_n, std::uint64_t seed) {
    const std::size_t n = larger.size();
    if (target_n > n) {
        throw ValidationError("balance_downsample: target " + std::to_string(target_n) + " exceeds sample size " +
                              std::to_string(n));
    }
    // Knuth's Algorithm S. Each value is kept with probability
    // (still needed) / (still available), which yields a uniform subset.
    std::mt19937_64 rng(seed);
    std::vector<double> out;
    out.reserve(target_n);
    std::size_t needed = target_n;
    for (std::size_t i = 0; i < n && needed > 0; ++i) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        if (static_cast<double>(n - i) * u < static_cast<double>(needed)) {
            out.push_back(larger.values()[i]);
            --needed;
        }
    }
    return Sample(larger.label(), std::move(out));
}

namespace {

struct RankSummary {
    double rank_sum_a = 0.0;
    double tie_term = 0.0;  // sum over tie groups of (t^3 - t)
    bool has_ties = false;
    bool all_equal = false;
};

RankSummary rank_summary(const Sample& a, const Sample& b) {
    struct Obs {
        double value;
        bool from_a;
    };
    std::vector<Obs> pooled;
    pooled.reserve(a.size() + b.size());
    for (double v : a.values()) pooled.push_back({v, true});
    for (double v : b.values()) pooled.push_back({v, false});
    std::sort(pooled.begin(), pooled.end(), [](const Obs& x, const Obs& y) { return x.value < y.value; });

    RankSummary s;
    std::size_t i = 0;
    while (i < pooled.size()) {
        std::size_t j = i;
        std::size_t in_a = 0;
        while (j < pooled.size() && pooled[j].value == pooled[i].value) {
            if (pooled[j].from_a) ++in_a;
            ++j;
        }
        const double t = static_cast<double>(j - i);
        const double mid_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        s.rank_sum_a += mid_rank * static_cast<double>(in_a);
        if (j - i > 1) {
            s.has_ties = true;
            s.tie_term += t * t * t - t;
        }
        if (i == 0 && j == pooled.size()) s.all_equal = true;
        i = j;
    }
    return s;
}

}  // namespace

std::vector<double> mann_whitney_null_distribution(std::size_t n1, std::size_t n2) {
    // c(m, n, u) = c(m-1, n, u-n) + c(m, n-1, u), rolled over n with m the
    // smaller size. The distribution is symmetric in (n1, n2).
    const std::size_t m = std::min(n1, n2);
    const std::size_t n = std::max(n1, n2);
    const std::size_t max_u = m * n;
    // counts[k][u] for k items against nn items, updated in place as nn
    // grows; row k-1 is already at nn when row k reads it.
    std::vector<std::vector<long double>> counts(m + 1, std::vector<long double>(max_u + 1, 0.0L));
    for (std::size_t k = 0; k <= m; ++k) counts[k][0] = 1.0L;  // nn = 0: only u = 0
    for (std::size_t nn = 1; nn <= n; ++nn) {
        for (std::size_t k = 1; k <= m; ++k) {
            for (std::size_t u = k * nn; u >= nn; --u) counts[k][u] += counts[k - 1][u - nn];
        }
    }
    long double total = 0.0L;
    for (auto c : counts[m]) total += c;
    std::vector<double> probs(max_u + 1);
    for (std::size_t u = 0; u <= max_u; ++u) probs[u] = static_cast<double>(counts[m][u] / total);
    return probs;
}

TestResult mann_whitney_u(const Sample& a, const Sample& b) {
    if (a.empty() || b.empty()) throw ValidationError("mann_whitney_u: both samples must be non-empty");
    const auto n1 = a.size();
    const auto n2 = b.size();
    const double n1d = static_cast<double>(n1);
    const double n2d = static_cast<double>(n2);
    const auto ranks = rank_summary(a, b);

    TestResult r;
    r.n1 = n1;
    r.n2 = n2;
    r.statistic = ranks.rank_sum_a - n1d * (n1d + 1.0) / 2.0;

    if (ranks.all_equal) {
        r.statistic = n1d * n2d / 2.0;
        r.p_value = 1.0;
        r.method = Method::MwNormalApprox;
        r.degenerate = true;
        return r;
    }

    if (std::min(n1, n2) <= kExactMaxMinSize && !ranks.has_ties) {
        const auto dist = mann_whitney_null_distribution(n1, n2);
        const auto u = static_cast<std::size_t>(std::llround(r.statistic));
        long double lower = 0.0L;
        long double upper = 0.0L;
        for (std::size_t k = 0; k <= u; ++k) lower += dist[k];
        for (std::size_t k = u; k < dist.size(); ++k) upper += dist[k];
        r.method = Method::MwExact;
        r.p_value = std::min(1.0, static_cast<double>(2.0L * std::min(lower, upper)));
        return r;
    }

    const double big_n = n1d + n2d;
    const double mean = n1d * n2d / 2.0;
    const double variance = n1d * n2d / 12.0 * ((big_n + 1.0) - ranks.tie_term / (big_n * (big_n - 1.0)));
    const double numerator = std::max(0.0, std::abs(r.statistic - mean) - 0.5);
    const double z = numerator / std::sqrt(variance);
    r.method = Method::MwNormalApprox;
    r.p_value = std::clamp(std::erfc(z / std::numbers::sqrt2), 0.0, 1.0);
    return r;
}

double kolmogorov_sf(double lambda) {
    if (lambda <= 0.0) return 1.0;
    constexpr double pi = std::numbers::pi;
    if (lambda < 1.18) {
        // Jacobi-theta form of the CDF converges quickly for small lambda.
        const double w = -pi * pi / (8.0 * lambda * lambda);
        double sum = 0.0;
        for (int k = 1; k <= 100; ++k) {
            const double odd = 2.0 * k - 1.0;
            const double term = std::exp(w * odd * odd);
            sum += term;
            if (term < 1e-18) break;
        }
        const double cdf = std::sqrt(2.0 * pi) / lambda * sum;
        return std::clamp(1.0 - cdf, 0.0, 1.0);
    }
    double sum = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += (k % 2 == 1) ? term : -term;
        if (term < 1e-18) break;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

TestResult ks_two_sample(const Sample& a, const Sample& b) {
    if (a.empty() || b.empty()) throw ValidationError("ks_two_sample: both samples must be non-empty");
    auto xs = a.values();
    auto ys = b.values();
    std::sort(xs.begin(), xs.end());
    std::sort(ys.begin(), ys.end());
    const double n1 = static_cast<double>(xs.size());
    const double n2 = static_cast<double>(ys.size());

    // Walk the pooled order; after consuming every copy of a value, both
    // ECDFs are evaluated at that value.
    double d = 0.0;
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < xs.size() || j < ys.size()) {
        double v;
        if (j == ys.size() || (i < xs.size() && xs[i] <= ys[j])) {
            v = xs[i];
        } else {
            v = ys[j];
        }
        while (i < xs.size() && xs[i] == v) ++i;
        while (j < ys.size() && ys[j] == v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / n1 - static_cast<double>(j) / n2));
    }

    TestResult r;
    r.n1 = xs.size();
    r.n2 = ys.size();
    r.statistic = d;
    r.method = Method::KsAsymptotic;
    const double effective_n = n1 * n2 / (n1 + n2);
    r.p_value = d == 0.0 ? 1.0 : kolmogorov_sf(std::sqrt(effective_n) * d);
    r.degenerate = xs.front() == xs.back() && ys.front() == ys.back() && xs.front() == ys.front();
    return r;
}

std::string significance_stars(double p) {
    if (p < 0.001) return "***";
    if (p < 0.01) return "**";
    if (p < 0.05) return "*";
    return "";
}

}  // namespace geaudit::stats
