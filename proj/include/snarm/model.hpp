#pragma once

#include <cstdint>
#include <vector>

#include "snarm/bank.hpp"
#include "snarm/decoder.hpp"
#include "snarm/encoder.hpp"
#include "snarm/navigator.hpp"
#include "snarm/snmm.hpp"

namespace snarm {

enum class ResidualMode { hybrid, inter_only };

struct MatchingConfig {
    int theta = 1;
    std::size_t topk = 3;
    bool topk_train = true;
    bool topk_infer = true;
    double trusted_percent = 75.0;
    std::size_t intra_topk = 1;
    ResidualMode mode = ResidualMode::hybrid;
};

struct DecoderConfig {
    ScoreReduction reduction = ScoreReduction::top_q_mean;
    double score_q = 0.001;
};

/// Navigator + SNMM + 16-branch decoder.
struct Model {
    int feature_dim = 0;
    MatchingConfig matching;
    SnmmConfig snmm_config;
    DecoderConfig decoder_config;

    NavigatorParams navigator;
    SNMM snmm;
    Decoder decoder;

    Model() = default;
    Model(int feature_dim, const MatchingConfig& matching, const SnmmConfig& snmm, const DecoderConfig& dec);

    int snmm_input_dim() const { return matching.mode == ResidualMode::hybrid ? 2 * feature_dim : feature_dim; }
    /// Navigator stays zero; SNMM and decoder draw from the "init" substream of the seed.
    void init(std::uint64_t seed);
    void visit(const ParamVisitor& fn);
};

/// Inter residuals, waypoint map, trusted-set intra residuals and the SNMM input for one image.
struct MatchResult {
    ResidualGrid inter;
    WaypointMap waypoint;
    TrustedSet trusted;
    ResidualGrid intra;
    Grid snmm_input;
};

MatchResult match(const Model& model, const PrototypeBank& bank, const PatchFeatureGrid& features, bool training,
                  long exclude_image = -1);

struct Prediction {
    Map anomaly;             // ensemble map at image resolution
    std::vector<Map> views;  // the 16 view maps, scale*4 + direction
    WaypointMap waypoint;
    double image_score = 0.0;
};

/// Deterministic inference: match → SNMM → decoder → ensemble → image score.
Prediction predict(const Model& model, const PrototypeBank& bank, const PatchFeatureGrid& features);

}  // namespace snarm
