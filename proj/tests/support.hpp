#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "snarm/bank.hpp"
#include "snarm/grid.hpp"
#include "snarm/layers.hpp"
#include "snarm/metrics.hpp"
#include "snarm/rng.hpp"

namespace snarm::testing {

inline constexpr int kPropertyCases = 200;

/// Hand-rolled generator: each property case gets its own engine derived from (suite, case).
struct Gen {
    Rng rng;
    Gen(const char* suite, int case_index) : rng(substream_seed(static_cast<std::uint64_t>(case_index), suite)) {}

    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
    double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
    double normal(double mean = 0.0, double sd = 1.0) { return std::normal_distribution<double>(mean, sd)(rng); }
    bool coin(double p = 0.5) { return real(0.0, 1.0) < p; }

    Grid grid(int h, int w, int c, double lo = -1.0, double hi = 1.0) {
        Grid g(h, w, c);
        for (double& v : g.data) v = real(lo, hi);
        return g;
    }
    std::vector<double> vec(std::size_t n, double lo = -1.0, double hi = 1.0) {
        std::vector<double> v(n);
        for (double& x : v) x = real(lo, hi);
        return v;
    }
    /// Values drawn from a small set so ties are common.
    std::vector<double> tied_scores(std::size_t n, int levels) {
        std::vector<double> v(n);
        for (double& x : v) x = integer(0, levels - 1) / static_cast<double>(levels);
        return v;
    }
    std::vector<std::uint8_t> labels(std::size_t n, bool both_classes = true) {
        std::vector<std::uint8_t> y(n);
        for (auto& l : y) l = coin() ? 1 : 0;
        if (both_classes && n >= 2) {
            const auto ones = std::count(y.begin(), y.end(), 1);
            const auto i = static_cast<std::size_t>(integer(0, static_cast<int>(n) - 1));
            if (ones == 0) y[i] = 1;
            if (ones == static_cast<long>(n)) y[i] = 0;
        }
        return y;
    }
};

inline PatchFeatureGrid feature_grid(Grid g, int patch = 1) {
    PatchFeatureGrid pf{std::move(g), {}};
    pf.geometry = PatchGeometry{pf.grid.h * patch, pf.grid.w * patch, pf.grid.h, pf.grid.w};
    return pf;
}

inline PrototypeBank bank_from_rows(const std::vector<std::vector<double>>& rows) {
    PrototypeBank b;
    b.dim = static_cast<int>(rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        b.prototypes.insert(b.prototypes.end(), rows[i].begin(), rows[i].end());
        b.selected.push_back(static_cast<std::uint32_t>(i));
    }
    return b;
}

inline RawFeaturePool pool_from_rows(const std::vector<std::vector<double>>& rows) {
    Grid g(1, static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), g.cell(i).begin());
    std::vector<PatchFeatureGrid> grids{feature_grid(g)};
    return build_raw_pool(grids);
}

// ---- finite differences -------------------------------------------------------------------------

inline constexpr double kFdStep = 1e-3;
inline constexpr double kFdTolerance = 1e-4;
/// Gradients smaller than this are compared absolutely against it.
inline constexpr double kFdFloor = 1e-2;

inline double fd_relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kFdFloor});
}

/// Central difference of f with respect to v[i].
inline double central_difference(std::vector<double>& v, std::size_t i, const std::function<double()>& f) {
    const double keep = v[i];
    v[i] = keep + kFdStep;
    const double up = f();
    v[i] = keep - kFdStep;
    const double down = f();
    v[i] = keep;
    return (up - down) / (2.0 * kFdStep);
}

/// Largest relative error over every entry of v.
inline double worst_fd_error(std::vector<double>& v, const std::vector<double>& analytic,
                             const std::function<double()>& f) {
    double worst = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) worst = std::max(worst, fd_relative_error(analytic[i], central_difference(v, i, f)));
    return worst;
}

inline double weighted_sum(const Grid& g, const std::vector<double>& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += g.data[i] * w[i];
    return s;
}

inline Grid weights_as_grid(const Grid& like, const std::vector<double>& w) {
    Grid g(like.h, like.w, like.c);
    g.data = w;
    return g;
}

// ---- exhaustive oracles -------------------------------------------------------------------------

inline double oracle_sqdist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

/// Indices of the k closest bank rows, each chosen by a fresh linear scan (lowest index on ties).
inline std::vector<std::size_t> oracle_knn(std::span<const double> q, const PrototypeBank& bank, std::size_t k) {
    std::vector<std::size_t> picked;
    std::vector<bool> used(bank.size(), false);
    for (std::size_t r = 0; r < k; ++r) {
        std::size_t best = bank.size();
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < bank.size(); ++t) {
            if (used[t]) continue;
            const double d = oracle_sqdist(q, bank.row(t));
            if (d < bd) {
                bd = d;
                best = t;
            }
        }
        used[best] = true;
        picked.push_back(best);
    }
    return picked;
}

inline double oracle_radius(const RawFeaturePool& pool, const std::vector<std::uint32_t>& centers) {
    double worst = 0.0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (auto c : centers) best = std::min(best, std::sqrt(oracle_sqdist(pool.row(i), pool.row(c))));
        worst = std::max(worst, best);
    }
    return worst;
}

/// Optimal k-center radius by enumerating every T-subset.
inline double oracle_optimal_radius(const RawFeaturePool& pool, std::size_t T) {
    const std::size_t n = pool.size();
    std::vector<int> pick(n, 0);
    std::fill(pick.begin(), pick.begin() + static_cast<long>(T), 1);
    std::sort(pick.begin(), pick.end());
    double best = std::numeric_limits<double>::infinity();
    do {
        std::vector<std::uint32_t> c;
        for (std::size_t i = 0; i < n; ++i)
            if (pick[i]) c.push_back(static_cast<std::uint32_t>(i));
        best = std::min(best, oracle_radius(pool, c));
    } while (std::next_permutation(pick.begin(), pick.end()));
    return best;
}

/// Greedy max-min selection recomputed from scratch at every step (no running distance table).
inline std::vector<std::uint32_t> oracle_greedy(const RawFeaturePool& pool, std::size_t T, std::size_t first) {
    std::vector<std::uint32_t> sel{static_cast<std::uint32_t>(first)};
    while (sel.size() < T) {
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            double dmin = std::numeric_limits<double>::infinity();
            for (auto s : sel) dmin = std::min(dmin, oracle_sqdist(pool.row(i), pool.row(s)));
            if (dmin > best) {
                best = dmin;
                arg = i;
            }
        }
        sel.push_back(static_cast<std::uint32_t>(arg));
    }
    return sel;
}

/// AUROC by comparing every positive/negative pair.
inline double oracle_auroc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
    double num = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!y[i]) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j]) continue;
            pairs += 1.0;
            num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    return num / pairs;
}

/// AP by enumerating every distinct threshold and recounting the confusion matrix each time.
inline double oracle_ap(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
    std::vector<double> t(s.begin(), s.end());
    std::sort(t.begin(), t.end(), std::greater<>());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    const double pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
    double ap = 0.0, prev_r = 0.0;
    for (double th : t) {
        double tp = 0, fp = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] >= th) (y[i] ? tp : fp) += 1;
        }
        const double r = tp / pos;
        ap += (r - prev_r) * tp / (tp + fp);
        prev_r = r;
    }
    return ap;
}

/// 4/8-connected components by repeated label propagation until a fixed point.
inline std::vector<int> oracle_components(const Map& m, int conn, int* count) {
    std::vector<int> lab(m.cells(), -1);
    for (std::size_t i = 0; i < m.cells(); ++i)
        if (m.data[i] > 0.5) lab[i] = static_cast<int>(i);
    bool changed = true;
    while (changed) {
        changed = false;
        for (int y = 0; y < m.h; ++y) {
            for (int x = 0; x < m.w; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * m.w + x;
                if (lab[i] < 0) continue;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (conn == 4 && dy != 0 && dx != 0) continue;
                        const int ny = y + dy, nx = x + dx;
                        if (ny < 0 || nx < 0 || ny >= m.h || nx >= m.w) continue;
                        const std::size_t j = static_cast<std::size_t>(ny) * m.w + nx;
                        if (lab[j] >= 0 && lab[j] < lab[i]) {
                            lab[i] = lab[j];
                            changed = true;
                        }
                    }
                }
            }
        }
    }
    std::vector<int> remap(m.cells(), -1);
    int n = 0;
    for (auto& l : lab) {
        if (l < 0) continue;
        if (remap[l] < 0) remap[l] = n++;
        l = remap[l];
    }
    if (count) *count = n;
    return lab;
}

/// PRO by sweeping every distinct threshold, recounting per-region overlap and FPR from scratch,
/// then integrating the resulting step-free polyline up to the limit.
inline double oracle_pro(const std::vector<Map>& scores, const std::vector<Map>& masks, double limit, int conn = 8) {
    std::vector<double> t;
    for (const auto& s : scores) t.insert(t.end(), s.data.begin(), s.data.end());
    std::sort(t.begin(), t.end(), std::greater<>());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    struct Region {
        std::size_t image;
        std::vector<std::size_t> pixels;
    };
    std::vector<Region> regions;
    double negatives = 0;
    for (std::size_t m = 0; m < masks.size(); ++m) {
        int n = 0;
        const auto lab = oracle_components(masks[m], conn, &n);
        const auto base = regions.size();
        regions.resize(base + n, Region{m, {}});
        for (std::size_t i = 0; i < lab.size(); ++i) {
            if (lab[i] >= 0) regions[base + lab[i]].pixels.push_back(i);
            else negatives += 1;
        }
    }
    std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
    for (double th : t) {
        double fp = 0;
        for (std::size_t m = 0; m < scores.size(); ++m)
            for (std::size_t i = 0; i < scores[m].size(); ++i)
                if (masks[m].data[i] <= 0.5 && scores[m].data[i] >= th) fp += 1;
        double ov = 0;
        for (const auto& r : regions) {
            double hit = 0;
            for (auto i : r.pixels) hit += scores[r.image].data[i] >= th;
            ov += hit / static_cast<double>(r.pixels.size());
        }
        pts.emplace_back(fp / negatives, ov / static_cast<double>(regions.size()));
    }
    double area = 0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
        auto [x0, y0] = pts[i - 1];
        auto [x1, y1] = pts[i];
        if (x0 >= limit) break;
        if (x1 > limit) {
            y1 = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
            x1 = limit;
        }
        area += (x1 - x0) * (y0 + y1) / 2;
    }
    return area / limit;
}

}  // namespace snarm::testing
