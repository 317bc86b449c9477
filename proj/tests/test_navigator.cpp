#include <gtest/gtest.h>

#include <cmath>

#include "snarm/error.hpp"
#include "snarm/model.hpp"
#include "snarm/navigator.hpp"
#include "support.hpp"

using namespace snarm;
using snarm::testing::Gen;
using snarm::testing::kPropertyCases;

namespace {

ResidualGrid inter_of(Grid g) { return {std::move(g), 1, ResidualKind::inter}; }

WaypointMap stars(const std::vector<double>& qs) {
    WaypointMap wm{Map(1, static_cast<int>(qs.size()), 1, 0.5), Map(1, static_cast<int>(qs.size()), 1)};
    wm.q_star.data = qs;
    return wm;
}

Grid rows_grid(const std::vector<std::vector<double>>& rows) {
    Grid g(1, static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), g.cell(i).begin());
    return g;
}

}  // namespace

TEST(Waypoint, ZeroParamsZeroResiduals) {
    const auto wm = waypoint(inter_of(Grid(3, 2, 4)), NavigatorParams(4));
    for (double v : wm.q.data) EXPECT_EQ(v, 0.5);
    for (double v : wm.q_star.data) EXPECT_EQ(v, 0.5);
}

TEST(Waypoint, ChannelMeanAddsToHalf) {
    Grid r(1, 2, 4);
    for (int k = 0; k < 4; ++k) r.at(0, 1, k) = k + 1.0;
    const auto wm = waypoint(inter_of(r), NavigatorParams(4));
    EXPECT_DOUBLE_EQ(wm.q_star.data[1], 3.0);
    EXPECT_DOUBLE_EQ(wm.q_star.data[0], 0.5);
}

TEST(Waypoint, ScalingDoublesMeanBranch) {
    Gen g("waypoint.scale", 0);
    Grid r = g.grid(2, 3, 5, 0.0, 2.0);
    const auto a = waypoint(inter_of(r), NavigatorParams(5));
    for (double& v : r.data) v *= 2;
    const auto b = waypoint(inter_of(r), NavigatorParams(5));
    for (std::size_t i = 0; i < a.q_star.size(); ++i)
        EXPECT_NEAR(b.q_star.data[i] - 0.5, 2 * (a.q_star.data[i] - 0.5), 1e-12);
}

TEST(Waypoint, ClassifierIsOneByOneConv) {
    NavigatorParams p(2);
    p.weight.value = {1.0, -2.0};
    p.bias.value = {0.5};
    Grid r(1, 1, 2);
    r.data = {3.0, 1.0};
    const auto wm = waypoint(inter_of(r), p);
    EXPECT_DOUBLE_EQ(wm.q.data[0], sigmoid(1.5));
    EXPECT_DOUBLE_EQ(wm.q_star.data[0], sigmoid(1.5) + 2.0);
}

TEST(Waypoint, Rejections) {
    EXPECT_THROW(waypoint(inter_of(Grid(2, 2, 3)), NavigatorParams(4)), InvalidArgument);
    EXPECT_THROW(waypoint(ResidualGrid{Grid(2, 2, 4), 1, ResidualKind::intra}, NavigatorParams(4)), InvalidArgument);
}

TEST(Waypoint, BackwardMatchesFiniteDifferences) {
    Gen g("waypoint.fd", 0);
    const Grid r = g.grid(3, 3, 4, 0.0, 1.0);
    NavigatorParams p(4);
    for (double& v : p.weight.value) v = g.normal(0.0, 0.5);
    p.bias.value[0] = g.normal(0.0, 0.5);
    const auto w = g.vec(9);
    auto loss = [&] { return snarm::testing::weighted_sum(waypoint_raw(r, p).q, w); };
    p.weight.zero_grad();
    p.bias.zero_grad();
    waypoint_backward(r, waypoint_raw(r, p), snarm::testing::weights_as_grid(Map(3, 3, 1), w), p);
    EXPECT_LT(snarm::testing::worst_fd_error(p.weight.value, p.weight.grad, loss), snarm::testing::kFdTolerance);
    EXPECT_LT(snarm::testing::worst_fd_error(p.bias.value, p.bias.grad, loss), snarm::testing::kFdTolerance);
}

TEST(Percentile, NearestRank) {
    EXPECT_EQ(nearest_rank_percentile({0.9, 0.1, 0.3, 0.2}, 75), 0.3);
    EXPECT_EQ(nearest_rank_percentile({5.0}, 50), 5.0);
    EXPECT_EQ(nearest_rank_percentile({1, 2, 3, 4}, 100), 4.0);
    EXPECT_EQ(nearest_rank_percentile({1, 2, 3, 4}, 1), 1.0);
}

TEST(Trusted, StrictlyBelowThreshold) {
    const auto f = rows_grid({{0}, {1}, {2}, {3}});
    const auto t = select_trusted(stars({0.1, 0.2, 0.3, 0.9}), f, 75);
    EXPECT_EQ(t.indices, (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(t.features.data, (std::vector<double>{0, 1}));
}

TEST(Trusted, DefaultPercentIs75) { EXPECT_EQ(MatchingConfig{}.trusted_percent, 75.0); }

TEST(Trusted, UniformScoresFallBackToPrefix) {
    const auto f = rows_grid({{0}, {1}, {2}, {3}, {4}});
    const auto t = select_trusted(stars({0.7, 0.7, 0.7, 0.7, 0.7}), f, 50);
    EXPECT_EQ(t.indices, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Trusted, FallbackPicksLowestScores) {
    // threshold is the minimum, so nothing is strictly below it
    const auto f = rows_grid({{0}, {1}, {2}, {3}});
    const auto t = select_trusted(stars({0.5, 0.1, 0.9, 0.1}), f, 25);
    EXPECT_EQ(t.indices, (std::vector<std::size_t>{1}));
}

TEST(Trusted, RejectsBadPercent) {
    const auto f = rows_grid({{0}, {1}});
    EXPECT_THROW(select_trusted(stars({0.1, 0.2}), f, 0), InvalidArgument);
    EXPECT_THROW(select_trusted(stars({0.1, 0.2}), f, 100), InvalidArgument);
}

TEST(Intra, ExhaustiveNearestTrusted) {
    const auto f = rows_grid({{0, 0}, {1, 0}, {5, 5}});
    TrustedSet t{{0, 1}, rows_grid({{0, 0}, {1, 0}})};
    const auto r = intra_residual_grid(f, t, 1);
    EXPECT_EQ(r.kind, ResidualKind::intra);
    EXPECT_EQ(std::vector<double>(r.values.cell(std::size_t{2}).begin(), r.values.cell(std::size_t{2}).end()),
              (std::vector<double>{4, 5}));
    EXPECT_EQ(r.values.cell(std::size_t{0})[0], 0.0);
    EXPECT_EQ(r.values.cell(std::size_t{1})[0], 0.0);
}

TEST(Intra, IdenticalPatchesGiveZero) {
    const Grid f(2, 3, 4, 1.25);
    TrustedSet t{{0, 4}, Grid(1, 2, 4, 1.25)};
    for (double v : intra_residual_grid(f, t, 2).values.data) EXPECT_EQ(v, 0.0);
}

TEST(Intra, TopKMeanAndEmptyRejected) {
    const auto f = rows_grid({{0}, {2}, {10}});
    TrustedSet t{{0, 1}, rows_grid({{0}, {2}})};
    EXPECT_EQ(intra_residual_grid(f, t, 1, 2).values.data, (std::vector<double>{1, 1, 9}));
    EXPECT_THROW(intra_residual_grid(f, TrustedSet{}, 1), InvalidArgument);
}

TEST(Hybrid, ConcatenatesPositionally) {
    Grid a(1, 2, 2), b(1, 2, 2);
    a.data = {1, 2, 3, 4};
    b.data = {5, 6, 7, 8};
    const auto h = hybrid({a, 1, ResidualKind::inter}, {b, 1, ResidualKind::intra});
    EXPECT_EQ(h.kind, ResidualKind::hybrid);
    EXPECT_EQ(h.values.c, 4);
    EXPECT_EQ(h.values.data, (std::vector<double>{1, 2, 5, 6, 3, 4, 7, 8}));
}

TEST(Hybrid, ZeroAndMismatches) {
    const auto h = hybrid({Grid(2, 2, 3), 1, ResidualKind::inter}, {Grid(2, 2, 3), 1, ResidualKind::intra});
    EXPECT_EQ(h.values.c, 6);
    for (double v : h.values.data) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(hybrid({Grid(2, 2, 3), 1, ResidualKind::inter}, {Grid(2, 3, 3), 1, ResidualKind::intra}),
                 InvalidArgument);
    EXPECT_THROW(hybrid({Grid(2, 2, 3), 1, ResidualKind::intra}, {Grid(2, 2, 3), 1, ResidualKind::inter}),
                 InvalidArgument);
}

// ---- invariants ---------------------------------------------------------------------------------

TEST(NavigatorProperties, QStarDominatesQ) {
    for (int c = 0; c < kPropertyCases; ++c) {
        Gen g("navigator.qstar", c);
        const int d = g.integer(1, 6);
        NavigatorParams p(d);
        for (double& v : p.weight.value) v = g.normal(0.0, 2.0);
        p.bias.value[0] = g.normal(0.0, 2.0);
        const auto wm = waypoint(inter_of(g.grid(g.integer(1, 5), g.integer(1, 5), d, 0.0, 3.0)), p);
        for (std::size_t i = 0; i < wm.q.size(); ++i) {
            ASSERT_GT(wm.q.data[i], 0.0);
            ASSERT_LT(wm.q.data[i], 1.0);
            ASSERT_GE(wm.q_star.data[i], wm.q.data[i]) << "case " << c;
        }
    }
}

TEST(NavigatorProperties, TrustedSetMonotoneInPercent) {
    for (int c = 0; c < kPropertyCases; ++c) {
        Gen g("navigator.monotone", c);
        const int M = g.integer(1, 40);
        std::vector<double> qs;
        for (int i = 0; i < M; ++i) qs.push_back(g.coin(0.3) && i > 0 ? qs[g.integer(0, i - 1)] : g.real(0, 2));
        const auto wm = stars(qs);
        const Grid f(1, M, 1);
        double p1 = g.real(0.5, 99.5), p2 = g.real(0.5, 99.5);
        if (p1 > p2) std::swap(p1, p2);
        const auto a = select_trusted(wm, f, p1), b = select_trusted(wm, f, p2);
        ASSERT_FALSE(a.indices.empty());
        ASSERT_LE(a.indices.size(), b.indices.size()) << "case " << c;
        const double thr = nearest_rank_percentile(qs, p1);
        const bool fallback = std::none_of(qs.begin(), qs.end(), [&](double q) { return q < thr; });
        if (!fallback) {
            for (auto i : a.indices) ASSERT_LT(qs[i], thr);
        }
    }
}

TEST(NavigatorProperties, TrustedPatchesHaveZeroIntraResidual) {
    for (int c = 0; c < kPropertyCases; ++c) {
        Gen g("navigator.selfmatch", c);
        const int h = g.integer(1, 5), w = g.integer(1, 5), d = g.integer(1, 5);
        const Grid f = g.grid(h, w, d);
        const auto wm = waypoint(inter_of(g.grid(h, w, d, 0.0, 1.0)), NavigatorParams(d));
        const auto t = select_trusted(wm, f, g.real(1, 99));
        const auto r = intra_residual_grid(f, t, g.integer(1, 2), 1);
        for (auto i : t.indices)
            for (double v : r.values.cell(i)) ASSERT_EQ(v, 0.0) << "case " << c;
        for (double v : r.values.data) ASSERT_GE(v, 0.0);
    }
}

TEST(NavigatorProperties, HybridIsLossless) {
    for (int c = 0; c < kPropertyCases; ++c) {
        Gen g("navigator.hybrid", c);
        const int h = g.integer(1, 5), w = g.integer(1, 5), d = g.integer(1, 6);
        const Grid a = g.grid(h, w, d, 0.0, 4.0), b = g.grid(h, w, d, 0.0, 4.0);
        const auto hy = hybrid({a, 1, ResidualKind::inter}, {b, 1, ResidualKind::intra});
        for (std::size_t i = 0; i < a.cells(); ++i) {
            const auto cell = hy.values.cell(i);
            ASSERT_TRUE(std::equal(cell.begin(), cell.begin() + d, a.cell(i).begin()));
            ASSERT_TRUE(std::equal(cell.begin() + d, cell.end(), b.cell(i).begin()));
        }
    }
}
