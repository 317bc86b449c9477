#include "snarm/navigator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "snarm/error.hpp"

namespace snarm {

WaypointMap waypoint_raw(const Grid& r, const NavigatorParams& params) {
    if (r.c != params.dim()) throw InvalidArgument("waypoint: residual channels do not match navigator weights");
    WaypointMap wm{Map(r.h, r.w, 1), Map(r.h, r.w, 1)};
    for (std::size_t i = 0; i < r.cells(); ++i) {
        auto v = r.cell(i);
        double z = params.bias.value[0];
        double mean = 0.0;
        for (int k = 0; k < r.c; ++k) {
            z += params.weight.value[k] * v[k];
            mean += v[k];
        }
        mean /= r.c;
        const double q = sigmoid(z);
        wm.q.data[i] = q;
        wm.q_star.data[i] = q + mean;
    }
    return wm;
}

WaypointMap waypoint(const ResidualGrid& residuals, const NavigatorParams& params) {
    if (residuals.kind != ResidualKind::inter) throw InvalidArgument("waypoint: expects inter-residuals");
    return waypoint_raw(residuals.values, params);
}

void waypoint_backward(const Grid& r, const WaypointMap& wm, const Map& grad_q, NavigatorParams& params) {
    require(grad_q.cells() == r.cells(), "waypoint_backward: shape mismatch");
    for (std::size_t i = 0; i < r.cells(); ++i) {
        const double q = wm.q.data[i];
        const double gz = grad_q.data[i] * q * (1.0 - q);
        if (gz == 0.0) continue;
        auto v = r.cell(i);
        for (int k = 0; k < r.c; ++k) params.weight.grad[k] += gz * v[k];
        params.bias.grad[0] += gz;
    }
}

double nearest_rank_percentile(std::vector<double> values, double p) {
    require(!values.empty(), "percentile of an empty set");
    require(p > 0.0 && p <= 100.0, "percentile p must be in (0, 100]");
    const auto n = values.size();
    auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(n)));
    rank = std::clamp<std::size_t>(rank, 1, n);
    std::nth_element(values.begin(), values.begin() + static_cast<long>(rank - 1), values.end());
    return values[rank - 1];
}

TrustedSet select_trusted(const WaypointMap& wm, const Grid& features, double p) {
    require(p > 0.0 && p < 100.0, "select_trusted: p must be in (0, 100)");
    const std::size_t M = wm.q_star.cells();
    require(features.cells() == M, "select_trusted: feature count does not match waypoint map");
    const auto& qs = wm.q_star.data;
    const double thr = nearest_rank_percentile(qs, p);
    TrustedSet ts;
    for (std::size_t k = 0; k < M; ++k) {
        if (qs[k] < thr) ts.indices.push_back(k);
    }
    if (ts.indices.empty()) {
        const auto want = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(p * static_cast<double>(M) / 100.0)));
        std::vector<std::size_t> order(M);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return qs[a] < qs[b]; });
        ts.indices.assign(order.begin(), order.begin() + static_cast<long>(std::min(want, M)));
        std::sort(ts.indices.begin(), ts.indices.end());
    }
    ts.features = Grid(static_cast<int>(ts.indices.size()), 1, features.c);
    for (std::size_t j = 0; j < ts.indices.size(); ++j) {
        auto src = features.cell(ts.indices[j]);
        std::copy(src.begin(), src.end(), ts.features.cell(j).begin());
    }
    return ts;
}

ResidualGrid intra_residual_grid(const Grid& features, const TrustedSet& trusted, int theta, std::size_t k) {
    if (trusted.indices.empty()) throw InvalidArgument("intra_residual_grid: empty trusted set");
    if (theta != 1 && theta != 2) throw InvalidArgument("residual exponent theta must be 1 or 2");
    require(trusted.features.c == features.c, "intra_residual_grid: dimension mismatch");
    const std::size_t S = trusted.indices.size();
    if (k < 1 || k > S) throw InvalidArgument("intra_residual_grid: k must be in [1, |trusted|]");
    ResidualGrid out{Grid(features.h, features.w, features.c), theta, ResidualKind::intra};
    std::vector<std::pair<double, std::size_t>> dist(S);
    std::vector<double> ref(features.c);
    for (std::size_t i = 0; i < features.cells(); ++i) {
        const auto f = features.cell(i);
        for (std::size_t s = 0; s < S; ++s) dist[s] = {squared_distance(f, trusted.features.cell(s)), s};
        std::partial_sort(dist.begin(), dist.begin() + static_cast<long>(k), dist.end());
        std::fill(ref.begin(), ref.end(), 0.0);
        for (std::size_t j = 0; j < k; ++j) {
            const auto t = trusted.features.cell(dist[j].second);
            for (int c = 0; c < features.c; ++c) ref[c] += t[c];
        }
        if (k > 1) {
            for (double& v : ref) v /= static_cast<double>(k);
        }
        auto dst = out.values.cell(i);
        for (int c = 0; c < features.c; ++c) {
            const double a = std::abs(f[c] - ref[c]);
            dst[c] = theta == 1 ? a : a * a;
        }
    }
    return out;
}

ResidualGrid hybrid(const ResidualGrid& inter, const ResidualGrid& intra) {
    if (inter.kind != ResidualKind::inter || intra.kind != ResidualKind::intra) {
        throw InvalidArgument("hybrid: expects (inter, intra) residuals");
    }
    if (!inter.values.same_shape(intra.values)) throw InvalidArgument("hybrid: shape mismatch");
    const int d = inter.values.c;
    ResidualGrid out{Grid(inter.values.h, inter.values.w, 2 * d), inter.theta, ResidualKind::hybrid};
    for (std::size_t i = 0; i < inter.values.cells(); ++i) {
        auto dst = out.values.cell(i);
        auto a = inter.values.cell(i);
        auto b = intra.values.cell(i);
        std::copy(a.begin(), a.end(), dst.begin());
        std::copy(b.begin(), b.end(), dst.begin() + d);
    }
    return out;
}

}  // namespace snarm
