#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "snarm/grid.hpp"

namespace snarm {

/// Mann–Whitney U / (n⁺·n⁻); tied pairs count 1/2. Throws unless both classes are present.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Σ (R_k − R_{k−1})·P_k over descending unique score thresholds.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Connected components of a binary mask (value > 0.5). Returns one label per pixel, -1 for
/// background, components numbered 0..count-1 in raster order of first appearance.
std::vector<int> label_components(const Map& mask, int connectivity, int* count = nullptr);

struct ProOptions {
    double fpr_limit = 0.3;
    int connectivity = 8;
    /// 0 = exact sweep over every unique score; otherwise only this many quantile thresholds (approximate).
    std::size_t max_thresholds = 0;
};

struct CurvePoint {
    double fpr;
    double overlap;
};

/// Mean per-region overlap vs global false-positive rate, one point per threshold, starting at (0,0).
std::vector<CurvePoint> pro_curve(std::span<const Map> scores, std::span<const Map> masks, const ProOptions& opt);

/// Trapezoidal area under a monotone curve from 0 to limit, linearly interpolated at the limit.
double area_up_to(std::span<const CurvePoint> curve, double limit);

/// Normalised area under the PRO curve up to opt.fpr_limit.
double pro(std::span<const Map> scores, std::span<const Map> masks, const ProOptions& opt = {});

struct EvalRecord {
    std::string image_id;
    std::string category;
    double image_score = 0.0;
    Map pixel_scores;
    std::uint8_t gt_label = 0;
    Map gt_mask;
};

struct MetricReport {
    double i_auroc = 0.0;
    double p_auroc = 0.0;
    double p_ap = 0.0;
    double pro = 0.0;
};

/// All four metrics; pixel metrics pool every pixel of every record. Anomalous records without a
/// mask only count towards the image-level metric; a normal record without a mask is all-background.
MetricReport evaluate(std::span<const EvalRecord> records, const ProOptions& opt = {});

}  // namespace snarm
