// Independent reference implementations used only by tests. Deliberately
// naive: enumeration and double loops, no shared code with the library.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <set>
#include <utility>
#include <vector>

namespace oracles {

/// Two samples with sizes drawn from [lo, hi] and base values in {0..3},
/// de-tied by adding a distinct small jitter to every value.
inline std::pair<std::vector<double>, std::vector<double>> random_tie_free_pair(std::mt19937_64& rng,
                                                                                int lo, int hi) {
    std::uniform_int_distribution<int> size(lo, hi);
    std::uniform_int_distribution<int> base(0, 3);
    std::uniform_real_distribution<double> jitter(0.0, 0.5);
    std::vector<double> a(size(rng)), b(size(rng));
    std::set<double> used;
    auto draw = [&] {
        for (;;) {
            const double v = base(rng) + jitter(rng);
            if (used.insert(v).second) return v;
        }
    };
    for (auto& x : a) x = draw();
    for (auto& x : b) x = draw();
    return {a, b};
}

/// U for `a` as the number of (x in a, y in b) pairs with x > y, ties counting one half.
inline double u_by_pair_counting(const std::vector<double>& a, const std::vector<double>& b) {
    double u = 0.0;
    for (double x : a)
        for (double y : b) u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
    return u;
}

/// Two-sided exact p by enumerating every way to pick which |a| of the pooled
/// tie-free values belong to the first group.
inline double mw_exact_p_bruteforce(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> pooled(a);
    pooled.insert(pooled.end(), b.begin(), b.end());
    const std::size_t n = pooled.size();
    const double observed = u_by_pair_counting(a, b);
    std::vector<bool> pick(n, false);
    std::fill(pick.begin(), pick.begin() + static_cast<long>(a.size()), true);
    std::sort(pick.begin(), pick.end());
    double total = 0, le = 0, ge = 0;
    do {
        std::vector<double> ga, gb;
        for (std::size_t i = 0; i < n; ++i) (pick[i] ? ga : gb).push_back(pooled[i]);
        const double u = u_by_pair_counting(ga, gb);
        total += 1;
        if (u <= observed) le += 1;
        if (u >= observed) ge += 1;
    } while (std::next_permutation(pick.begin(), pick.end()));
    return std::min(1.0, 2.0 * std::min(le, ge) / total);
}

/// Textbook tie-free normal approximation with continuity correction.
inline double mw_normal_p(const std::vector<double>& a, const std::vector<double>& b) {
    const double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size());
    const double u = u_by_pair_counting(a, b);
    const double mu = n1 * n2 / 2.0;
    const double sigma = std::sqrt(n1 * n2 * (n1 + n2 + 1.0) / 12.0);
    const double z = std::max(0.0, std::abs(u - mu) - 0.5) / sigma;
    return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

/// sup |F_a - F_b| evaluated by counting at every pooled point.
inline double ks_d_bruteforce(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> pooled(a);
    pooled.insert(pooled.end(), b.begin(), b.end());
    double d = 0.0;
    for (double x : pooled) {
        std::size_t ca = 0, cb = 0;
        for (double v : a) ca += v <= x;
        for (double v : b) cb += v <= x;
        const double fa = static_cast<double>(ca) / static_cast<double>(a.size());
        const double fb = static_cast<double>(cb) / static_cast<double>(b.size());
        d = std::max(d, std::abs(fa - fb));
    }
    return d;
}

/// Max over the full similarity matrix, first maximum in row-major order.
struct MatrixMax {
    double value;
    std::size_t row;
    std::size_t col;
};

inline MatrixMax matrix_max(const std::vector<std::vector<double>>& rows_a,
                            const std::vector<std::vector<double>>& rows_b) {
    MatrixMax best{-2.0, 0, 0};
    for (std::size_t i = 0; i < rows_a.size(); ++i) {
        for (std::size_t j = 0; j < rows_b.size(); ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < rows_a[i].size(); ++k) dot += rows_a[i][k] * rows_b[j][k];
            dot = std::clamp(dot, -1.0, 1.0);
            if (dot > best.value) best = {dot, i, j};
        }
    }
    return best;
}

}  // namespace oracles
