#include <gtest/gtest.h>

#include <cmath>

#include "snarm/decoder.hpp"
#include "snarm/error.hpp"
#include "snarm/model.hpp"
#include "support.hpp"

using namespace snarm;
using snarm::testing::Gen;
using snarm::testing::kFdTolerance;
using snarm::testing::kPropertyCases;
using snarm::testing::weighted_sum;
using snarm::testing::weights_as_grid;
using snarm::testing::worst_fd_error;

namespace {

ViewBranch delta_branch(int dim, int rate) {
    ViewBranch b("b", dim, rate);
    const std::size_t center = 4 * static_cast<std::size_t>(dim) * dim;
    for (int k = 0; k < dim; ++k) b.atrous.weight.value[center + static_cast<std::size_t>(k) * dim + k] = 1.0;
    return b;
}

Map map_of(const std::vector<double>& v, int h, int w) {
    Map m(h, w, 1);
    m.data = v;
    return m;
}

}  // namespace

TEST(Atrous, DeltaKernelIsIdentity) {
    Gen g("atrous.delta", 0);
    const Grid x = g.grid(5, 4, 3);
    EXPECT_EQ(atrous_apply(x, delta_branch(3, 3)).data, x.data);
}

TEST(Atrous, ImpulseReachesTapsAtRate) {
    ViewBranch b("b", 1, 3);
    std::fill(b.atrous.weight.value.begin(), b.atrous.weight.value.end(), 1.0);
    Grid x(7, 7, 1);
    x.at(3, 3, 0) = 1.0;
    const Grid y = atrous_apply(x, b);
    for (int r = 0; r < 7; ++r)
        for (int c = 0; c < 7; ++c) {
            const bool tap = (r == 0 || r == 3 || r == 6) && (c == 0 || c == 3 || c == 6);
            EXPECT_EQ(y.at(r, c, 0), tap ? 1.0 : 0.0) << r << "," << c;
        }
}

TEST(Atrous, ZeroInputZeroBiasAndRateValidation) {
    Rng rng(1);
    ViewBranch b("b", 2, 12);
    b.init(rng);
    std::fill(b.atrous.bias.value.begin(), b.atrous.bias.value.end(), 0.0);
    for (double v : atrous_apply(Grid(4, 4, 2), b).data) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(ViewBranch("b", 2, 5), InvalidArgument);
    EXPECT_EQ(kDilationRates, (std::array<int, 4>{3, 6, 12, 24}));
}

TEST(Head, ZeroFeaturesGiveHalfAndConstantStaysConstant) {
    ViewBranch b("b", 2, 3);
    for (double v : head_apply(Grid(2, 2, 2), b, 5, 7).values.data) EXPECT_EQ(v, 0.5);
    b.head_weight.value = {0.3, -0.2};
    b.head_bias.value = {0.1};
    const auto m = head_apply(Grid(3, 3, 2, 1.5), b, 6, 6).values;
    for (double v : m.data) EXPECT_DOUBLE_EQ(v, m.data[0]);
    EXPECT_THROW(head_apply(Grid(3, 3, 2), b, 2, 6), InvalidArgument);
}

TEST(Head, UpsamplesLogitsBeforeSigmoid) {
    ViewBranch b("b", 1, 3);
    b.head_weight.value = {1.0};
    Grid f(2, 2, 1);
    f.data = {0.0, 4.0, -4.0, 8.0};
    const auto m = head_apply(f, b, 4, 4).values;
    // align-corners-off weights for 2 → 4: source positions -0.25, 0.25, 0.75, 1.25 (clamped to the edges)
    const double w[4][2] = {{1, 0}, {0.75, 0.25}, {0.25, 0.75}, {0, 1}};
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            double logit = 0.0;
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j) logit += w[y][i] * w[x][j] * f.at(i, j, 0);
            EXPECT_NEAR(m.at(y, x, 0), 1.0 / (1.0 + std::exp(-logit)), 1e-15);
        }
    EXPECT_NEAR(m.at(1, 1, 0), 1.0 / (1.0 + std::exp(-(0.5625 * 0 + 0.1875 * 4 + 0.1875 * -4 + 0.0625 * 8))), 1e-15);
}

TEST(Ensemble, MeanOfSixteen) {
    std::vector<Map> maps;
    for (int i = 0; i < 16; ++i) maps.push_back(Map(3, 3, 1, i < 8 ? 0.2 : 0.6));
    for (double v : ensemble(maps).data) EXPECT_DOUBLE_EQ(v, 0.4);
    std::vector<Map> same(16, map_of({0.1, 0.7, 0.3, 0.9}, 2, 2));
    const Map e = ensemble(same);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(e.data[i], same[0].data[i]);
}

TEST(Ensemble, Rejections) {
    EXPECT_THROW(ensemble(std::vector<Map>(15, Map(2, 2, 1))), InvalidArgument);
    std::vector<Map> maps(16, Map(2, 2, 1));
    maps[3] = Map(2, 3, 1);
    EXPECT_THROW(ensemble(maps), InvalidArgument);
}

TEST(ImageScore, TopQMeanAndMax) {
    const Map m = map_of({0.1, 0.9, 0.2, 0.8}, 2, 2);
    EXPECT_DOUBLE_EQ(image_score(m, ScoreReduction::top_q_mean, 0.5), 0.85);
    EXPECT_EQ(image_score(m, ScoreReduction::max, 0.5), 0.9);
    const Map c(4, 4, 1, 0.37);
    EXPECT_EQ(image_score(c, ScoreReduction::max, 0.001), 0.37);
    EXPECT_DOUBLE_EQ(image_score(c, ScoreReduction::top_q_mean, 0.001), 0.37);
    EXPECT_EQ(DecoderConfig{}.score_q, 0.001);
    EXPECT_EQ(DecoderConfig{}.reduction, ScoreReduction::top_q_mean);
}

TEST(Decoder, SixteenIndependentViews) {
    Rng rng(8);
    Decoder dec(3);
    dec.init(rng);
    EXPECT_NE(dec.branches[0][0].head_weight.value, dec.branches[0][1].head_weight.value);
    for (int s = 0; s < 4; ++s)
        for (int d = 0; d < 4; ++d) EXPECT_EQ(dec.branches[s][d].rate, kDilationRates[s]);
    Gen g("decoder.views", 0);
    DirectionalOutputs o;
    for (auto& x : o) x = g.grid(4, 4, 3);
    const auto maps = decoder_forward(o, dec, 8, 8);
    ASSERT_EQ(maps.size(), 16u);
    EXPECT_EQ(maps[2 * 4 + 1].data, branch_forward(o[1], dec.branches[2][1], 8, 8).data);
}

TEST(Decoder, StackGradientMatchesFiniteDifferencesOnFourByFour) {
    Rng rng(13);
    Decoder dec(2);
    dec.init(rng);
    Gen g("decoder.fd", 0);
    DirectionalOutputs o;
    for (auto& x : o) x = g.grid(4, 4, 2);
    std::vector<std::vector<double>> w;
    for (int v = 0; v < 16; ++v) w.push_back(g.vec(8 * 8));
    auto loss = [&] {
        const auto maps = decoder_forward(o, dec, 8, 8);
        double s = 0.0;
        for (int v = 0; v < 16; ++v) s += weighted_sum(maps[v], w[v]);
        return s;
    };
    dec.visit([](Param& p) { p.zero_grad(); });
    DirectionalOutputs go;
    for (auto& x : go) x = Grid(4, 4, 2);
    for (int s = 0; s < 4; ++s)
        for (int d = 0; d < 4; ++d) {
            BranchCache cache;
            const Map prob = branch_forward(o[d], dec.branches[s][d], 8, 8, &cache);
            const Grid gi = branch_backward(cache, weights_as_grid(prob, w[s * 4 + d]), dec.branches[s][d]);
            for (std::size_t i = 0; i < gi.size(); ++i) go[d].data[i] += gi.data[i];
        }
    std::vector<Param*> ps;
    dec.visit([&](Param& p) { ps.push_back(&p); });
    for (Param* p : ps) EXPECT_LT(worst_fd_error(p->value, p->grad, loss), kFdTolerance) << p->name;
    for (int d = 0; d < 4; ++d) EXPECT_LT(worst_fd_error(o[d].data, go[d].data, loss), kFdTolerance) << "input " << d;
}

// ---- invariants ---------------------------------------------------------------------------------

TEST(DecoderProperties, MapsAndEnsembleStayInUnitInterval) {
    for (int c = 0; c < kPropertyCases; ++c) {
        Gen g("decoder.bounds", c);
        const int h = g.integer(1, 5), w = g.integer(1, 5), d = g.integer(1, 3);
        Rng rng(static_cast<std::uint64_t>(c));
        Decoder dec(d);
        dec.init(rng);
        DirectionalOutputs o;
        for (auto& x : o) x = g.grid(h, w, d, -20, 20);
        const auto maps = decoder_forward(o, dec, h * g.integer(1, 3), w * g.integer(1, 3));
        const Map e = ensemble(maps);
        for (std::size_t i = 0; i < e.size(); ++i) {
            double lo = 1.0, hi = 0.0;
            for (const Map& m : maps) {
                ASSERT_GE(m.data[i], 0.0);
                ASSERT_LE(m.data[i], 1.0);
                lo = std::min(lo, m.data[i]);
                hi = std::max(hi, m.data[i]);
            }
            ASSERT_GE(e.data[i], lo - 1e-15);
            ASSERT_LE(e.data[i], hi + 1e-15);
        }
        const double s = image_score(e, ScoreReduction::top_q_mean, g.real(0.001, 1.0));
        ASSERT_GE(s, 0.0);
        ASSERT_LE(s, 1.0);
        ASSERT_LE(s, image_score(e, ScoreReduction::max, 0.0));
    }
}

TEST(DecoderProperties, EnsemblePermutationInvariant) {
    for (int c = 0; c < kPropertyCases; ++c) {
        Gen g("decoder.permute", c);
        const int h = g.integer(1, 6), w = g.integer(1, 6);
        std::vector<Map> maps;
        for (int i = 0; i < 16; ++i) maps.push_back(g.grid(h, w, 1, 0, 1));
        const Map a = ensemble(maps);
        std::shuffle(maps.begin(), maps.end(), g.rng);
        const Map b = ensemble(maps);
        for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a.data[i], b.data[i], 1e-15) << "case " << c;
    }
}

TEST(DecoderProperties, DeltaKernelIdentityForEveryRate) {
    for (int c = 0; c < kPropertyCases; ++c) {
        Gen g("decoder.delta", c);
        const int d = g.integer(1, 4);
        const Grid x = g.grid(g.integer(1, 8), g.integer(1, 8), d);
        const int rate = kDilationRates[static_cast<std::size_t>(g.integer(0, 3))];
        ASSERT_EQ(atrous_apply(x, delta_branch(d, rate)).data, x.data) << "case " << c;
    }
}

TEST(DecoderProperties, BranchGradientsMatchFiniteDifferences) {
    for (int c = 0; c < kPropertyCases; ++c) {
        Gen g("decoder.branch.fd", c);
        const int h = g.integer(1, 6), w = g.integer(1, 6), d = g.integer(1, 3);
        const int th = h * g.integer(1, 2), tw = w * g.integer(1, 2);
        Rng rng(static_cast<std::uint64_t>(c) + 5);
        ViewBranch b("b", d, kDilationRates[static_cast<std::size_t>(g.integer(0, 3))]);
        b.init(rng);
        Grid x = g.grid(h, w, d);
        const auto wt = g.vec(static_cast<std::size_t>(th) * tw);
        auto loss = [&] { return weighted_sum(branch_forward(x, b, th, tw), wt); };
        BranchCache cache;
        const Map prob = branch_forward(x, b, th, tw, &cache);
        b.visit([](Param& p) { p.zero_grad(); });
        const Grid gx = branch_backward(cache, weights_as_grid(prob, wt), b);
        ASSERT_LT(worst_fd_error(x.data, gx.data, loss), kFdTolerance) << "case " << c;
        std::vector<Param*> ps;
        b.visit([&](Param& p) { ps.push_back(&p); });
        for (Param* p : ps) ASSERT_LT(worst_fd_error(p->value, p->grad, loss), kFdTolerance) << "case " << c << " " << p->name;
    }
}

TEST(DecoderProperties, TopQMeanMatchesSortedPrefix) {
    for (int c = 0; c < kPropertyCases; ++c) {
        Gen g("decoder.topq", c);
        const int h = g.integer(1, 8), w = g.integer(1, 8);
        const Map m = g.grid(h, w, 1, 0, 1);
        const double q = g.real(0.001, 1.0);
        std::vector<double> v = m.data;
        std::sort(v.rbegin(), v.rend());
        const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(q * v.size() - 1e-12)));
        const double want = std::accumulate(v.begin(), v.begin() + static_cast<long>(n), 0.0) / n;
        ASSERT_NEAR(image_score(m, ScoreReduction::top_q_mean, q), want, 1e-12) << "case " << c;
    }
}
