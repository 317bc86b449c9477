#include "snarm/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "snarm/error.hpp"

namespace snarm {

ViewBranch::ViewBranch(const std::string& name, int dim, int r)
    : rate(r),
      atrous(name + ".atrous", dim, dim, r, Padding::zero),
      head_weight(name + ".head.weight", static_cast<std::size_t>(dim)),
      head_bias(name + ".head.bias", 1) {
    require(std::find(kDilationRates.begin(), kDilationRates.end(), r) != kDilationRates.end(),
            "ViewBranch: dilation rate must be one of 3, 6, 12, 24");
}

void ViewBranch::init(Rng& rng) {
    atrous.init(rng);
    fill_uniform(head_weight, rng, 1.0 / std::sqrt(static_cast<double>(head_weight.size())));
    head_bias.value[0] = 0.0;
}

Grid atrous_apply(const Grid& features, const ViewBranch& branch) { return branch.atrous.forward(features); }

namespace {

Map head_logits(const Grid& act, const ViewBranch& branch) {
    require(act.c == static_cast<int>(branch.head_weight.size()), "head: channel mismatch");
    Map logits(act.h, act.w, 1);
    for (std::size_t i = 0; i < act.cells(); ++i) {
        auto v = act.cell(i);
        double z = branch.head_bias.value[0];
        for (int k = 0; k < act.c; ++k) z += branch.head_weight.value[k] * v[k];
        logits.data[i] = z;
    }
    return logits;
}

}  // namespace

AnomalyMap head_apply(const Grid& features, const ViewBranch& branch, int target_h, int target_w) {
    require(target_h >= features.h && target_w >= features.w, "head_apply: target smaller than feature grid");
    Map up = resize_bilinear(head_logits(features, branch), target_h, target_w);
    for (double& v : up.data) v = sigmoid(v);
    return AnomalyMap{std::move(up), 0.0};
}

Map branch_forward(const Grid& o, const ViewBranch& branch, int target_h, int target_w, BranchCache* cache) {
    Grid pre = atrous_apply(o, branch);
    Grid act = pre;
    for (double& v : act.data) v = gelu(v);
    Map prob = head_apply(act, branch, target_h, target_w).values;
    if (cache) {
        cache->input = o;
        cache->pre = std::move(pre);
        cache->act = std::move(act);
        cache->prob = prob;
    }
    return prob;
}

Grid branch_backward(const BranchCache& cache, const Map& grad_prob, ViewBranch& branch) {
    const Grid& act = cache.act;
    require(grad_prob.same_shape(cache.prob), "branch_backward: gradient shape mismatch");
    Map gup(grad_prob.h, grad_prob.w, 1);
    for (std::size_t i = 0; i < gup.size(); ++i) {
        const double m = cache.prob.data[i];
        gup.data[i] = grad_prob.data[i] * m * (1.0 - m);
    }
    const Map glogit = Resampler(act.h, act.w, grad_prob.h, grad_prob.w).backward(gup);
    Grid gpre(act.h, act.w, act.c);
    for (std::size_t i = 0; i < act.cells(); ++i) {
        const double gz = glogit.data[i];
        branch.head_bias.grad[0] += gz;
        auto a = act.cell(i);
        auto p = cache.pre.cell(i);
        auto g = gpre.cell(i);
        for (int k = 0; k < act.c; ++k) {
            branch.head_weight.grad[k] += gz * a[k];
            g[k] = gz * branch.head_weight.value[k] * gelu_grad(p[k]);
        }
    }
    return branch.atrous.backward(cache.input, gpre);
}

Decoder::Decoder(int dim) {
    static constexpr const char* kNames[4] = {"right", "left", "down", "up"};
    for (int s = 0; s < 4; ++s) {
        for (int d = 0; d < 4; ++d) {
            branches[s][d] = ViewBranch("decoder.r" + std::to_string(kDilationRates[s]) + "." + kNames[d], dim,
                                        kDilationRates[s]);
        }
    }
}

void Decoder::init(Rng& rng) {
    for (auto& s : branches)
        for (auto& b : s) b.init(rng);
}

std::vector<Map> decoder_forward(const DirectionalOutputs& outputs, const Decoder& decoder, int target_h, int target_w) {
    std::vector<Map> maps;
    maps.reserve(16);
    for (int s = 0; s < 4; ++s) {
        for (int d = 0; d < 4; ++d) maps.push_back(branch_forward(outputs[d], decoder.branches[s][d], target_h, target_w));
    }
    return maps;
}

Map ensemble(std::span<const Map> maps) {
    if (maps.size() != 16) throw InvalidArgument("ensemble: expects exactly 16 maps");
    Map out(maps[0].h, maps[0].w, maps[0].c);
    for (const Map& m : maps) {
        if (!m.same_shape(out)) throw InvalidArgument("ensemble: map shapes differ");
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += m.data[i];
    }
    for (double& v : out.data) v /= 16.0;
    return out;
}

double image_score(const Map& map, ScoreReduction reduction, double q) {
    require(map.size() > 0, "image_score: empty map");
    if (reduction == ScoreReduction::max) return *std::max_element(map.data.begin(), map.data.end());
    require(q > 0.0 && q <= 1.0, "image_score: q must be in (0, 1]");
    std::vector<double> v = map.data;
    auto n = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size()) - 1e-12));
    n = std::clamp<std::size_t>(n, 1, v.size());
    std::nth_element(v.begin(), v.begin() + static_cast<long>(n - 1), v.end(), std::greater<>());
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += v[i];
    return acc / static_cast<double>(n);
}

}  // namespace snarm
