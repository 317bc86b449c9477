#include "snarm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "snarm/error.hpp"

namespace snarm {

namespace {

std::vector<std::size_t> descending_order(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

void check_scores(std::span<const double> scores, std::size_t n_labels) {
    require(scores.size() == n_labels, "metric: scores and labels differ in length");
    for (double s : scores) require(!std::isnan(s), "metric: NaN score");
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    check_scores(scores, labels.size());
    const auto pos = static_cast<double>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
    const double neg = static_cast<double>(labels.size()) - pos;
    if (pos == 0 || neg == 0) throw InvalidArgument("auroc: both classes must be present");
    const auto order = descending_order(scores);
    // Walk from the highest score: each positive beats every negative not yet seen.
    double u = 0.0;
    double neg_seen = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        double gp = 0.0, gn = 0.0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] ? gp : gn) += 1.0;
            ++j;
        }
        u += gp * (neg - neg_seen - gn) + 0.5 * gp * gn;
        neg_seen += gn;
        i = j;
    }
    return u / (pos * neg);
}

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    check_scores(scores, labels.size());
    const auto pos = static_cast<double>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
    if (pos == 0) throw InvalidArgument("average_precision: no positive samples");
    const auto order = descending_order(scores);
    double tp = 0.0, fp = 0.0, prev_recall = 0.0, ap = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] ? tp : fp) += 1.0;
            ++j;
        }
        const double recall = tp / pos;
        ap += (recall - prev_recall) * (tp / (tp + fp));
        prev_recall = recall;
        i = j;
    }
    return ap;
}

std::vector<int> label_components(const Map& mask, int connectivity, int* count) {
    require(connectivity == 4 || connectivity == 8, "label_components: connectivity must be 4 or 8");
    std::vector<int> label(mask.cells(), -1);
    int next = 0;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < mask.cells(); ++start) {
        if (mask.data[start] <= 0.5 || label[start] >= 0) continue;
        label[start] = next;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t cur = stack.back();
            stack.pop_back();
            const int y = static_cast<int>(cur / mask.w);
            const int x = static_cast<int>(cur % mask.w);
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if ((dy == 0 && dx == 0) || (connectivity == 4 && dy != 0 && dx != 0)) continue;
                    const int ny = y + dy, nx = x + dx;
                    if (ny < 0 || ny >= mask.h || nx < 0 || nx >= mask.w) continue;
                    const std::size_t n = static_cast<std::size_t>(ny) * mask.w + nx;
                    if (mask.data[n] > 0.5 && label[n] < 0) {
                        label[n] = next;
                        stack.push_back(n);
                    }
                }
            }
        }
        ++next;
    }
    if (count) *count = next;
    return label;
}

std::vector<CurvePoint> pro_curve(std::span<const Map> scores, std::span<const Map> masks, const ProOptions& opt) {
    require(scores.size() == masks.size() && !scores.empty(), "pro: need one mask per score map");
    std::vector<double> s;
    std::vector<int> comp;  // global component id, -1 = normal pixel
    std::vector<double> comp_size;
    for (std::size_t m = 0; m < scores.size(); ++m) {
        require(scores[m].h == masks[m].h && scores[m].w == masks[m].w, "pro: score/mask shape mismatch");
        int n = 0;
        const auto lab = label_components(masks[m], opt.connectivity, &n);
        const int base = static_cast<int>(comp_size.size());
        comp_size.resize(comp_size.size() + n, 0.0);
        for (std::size_t i = 0; i < lab.size(); ++i) {
            s.push_back(scores[m].data[i]);
            comp.push_back(lab[i] < 0 ? -1 : base + lab[i]);
            if (lab[i] >= 0) comp_size[base + lab[i]] += 1.0;
        }
    }
    if (comp_size.empty()) throw InvalidArgument("pro: ground truth has no anomalous region");
    const double negatives = static_cast<double>(std::count(comp.begin(), comp.end(), -1));
    if (negatives == 0) throw InvalidArgument("pro: ground truth has no normal pixels");
    for (double v : s) require(!std::isnan(v), "pro: NaN score");

    const auto order = descending_order(s);
    std::vector<double> cuts;  // thresholds at which to emit points (approximate mode)
    if (opt.max_thresholds > 0) {
        std::vector<double> uniq;
        for (std::size_t i = 0; i < order.size(); ++i) {
            if (uniq.empty() || s[order[i]] != uniq.back()) uniq.push_back(s[order[i]]);
        }
        if (uniq.size() > opt.max_thresholds) {
            for (std::size_t k = 0; k < opt.max_thresholds; ++k) {
                cuts.push_back(uniq[(k + 1) * (uniq.size() - 1) / opt.max_thresholds]);
            }
        }
    }
    std::size_t next_cut = 0;

    std::vector<CurvePoint> curve{{0.0, 0.0}};
    const double n_comp = static_cast<double>(comp_size.size());
    double fp = 0.0, overlap_sum = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        const double t = s[order[i]];
        std::size_t j = i;
        while (j < order.size() && s[order[j]] == t) {
            const int c = comp[order[j]];
            if (c < 0) {
                fp += 1.0;
            } else {
                overlap_sum += 1.0 / comp_size[c];
            }
            ++j;
        }
        i = j;
        if (!cuts.empty()) {
            if (next_cut >= cuts.size() || t > cuts[next_cut]) continue;
            while (next_cut < cuts.size() && cuts[next_cut] >= t) ++next_cut;
        }
        curve.push_back({fp / negatives, overlap_sum / n_comp});
    }
    return curve;
}

double area_up_to(std::span<const CurvePoint> curve, double limit) {
    double area = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i) {
        const CurvePoint a = curve[i - 1];
        const CurvePoint b = curve[i];
        if (a.fpr >= limit) break;
        if (b.fpr <= limit) {
            area += (b.fpr - a.fpr) * (a.overlap + b.overlap) * 0.5;
        } else {
            const double yl = a.overlap + (b.overlap - a.overlap) * (limit - a.fpr) / (b.fpr - a.fpr);
            area += (limit - a.fpr) * (a.overlap + yl) * 0.5;
            break;
        }
    }
    return area;
}

double pro(std::span<const Map> scores, std::span<const Map> masks, const ProOptions& opt) {
    if (!(opt.fpr_limit > 0.0 && opt.fpr_limit <= 1.0)) throw InvalidArgument("pro: fpr_limit must be in (0, 1]");
    const auto curve = pro_curve(scores, masks, opt);
    return area_up_to(curve, opt.fpr_limit) / opt.fpr_limit;
}

MetricReport evaluate(std::span<const EvalRecord> records, const ProOptions& opt) {
    require(!records.empty(), "evaluate: no records");
    std::vector<double> img_scores;
    std::vector<std::uint8_t> img_labels;
    std::vector<double> px_scores;
    std::vector<std::uint8_t> px_labels;
    std::vector<Map> maps, masks;
    for (const auto& r : records) {
        img_scores.push_back(r.image_score);
        img_labels.push_back(r.gt_label ? 1 : 0);
        if (r.gt_label && !r.gt_mask.size()) continue;  // anomalous without a mask: image-level only
        const Map mask = r.gt_mask.size() ? r.gt_mask : Map(r.pixel_scores.h, r.pixel_scores.w, 1);
        require(mask.cells() == r.pixel_scores.cells(), "evaluate: mask/prediction shape mismatch for " + r.image_id);
        px_scores.insert(px_scores.end(), r.pixel_scores.data.begin(), r.pixel_scores.data.end());
        for (double v : mask.data) px_labels.push_back(v > 0.5 ? 1 : 0);
        maps.push_back(r.pixel_scores);
        masks.push_back(mask);
    }
    MetricReport rep;
    rep.i_auroc = auroc(img_scores, img_labels);
    rep.p_auroc = auroc(px_scores, px_labels);
    rep.p_ap = average_precision(px_scores, px_labels);
    rep.pro = pro(maps, masks, opt);
    return rep;
}

}  // namespace snarm
