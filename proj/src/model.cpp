#include "snarm/model.hpp"

#include "snarm/error.hpp"
#include "snarm/rng.hpp"

namespace snarm {

Model::Model(int dim, const MatchingConfig& m, const SnmmConfig& s, const DecoderConfig& d)
    : feature_dim(dim),
      matching(m),
      snmm_config(s),
      decoder_config(d),
      navigator(dim),
      snmm(m.mode == ResidualMode::hybrid ? 2 * dim : dim, s),
      decoder(s.dim) {
    require(dim > 0, "Model: feature dimension must be positive");
}

void Model::init(std::uint64_t seed) {
    Rng rng = substream(seed, "init");
    snmm.init(rng);
    decoder.init(rng);
}

void Model::visit(const ParamVisitor& fn) {
    navigator.visit(fn);
    snmm.visit(fn);
    decoder.visit(fn);
}

MatchResult match(const Model& model, const PrototypeBank& bank, const PatchFeatureGrid& features, bool training,
                  long exclude_image) {
    const MatchingConfig& mc = model.matching;
    const bool use_topk = training ? mc.topk_train : mc.topk_infer;
    InterMatchOptions opt{mc.theta, use_topk ? mc.topk : 1, exclude_image,
                          exclude_image >= 0 ? features.patches() : 0};
    MatchResult r;
    r.inter = compute_inter_grid(features, bank, opt);
    r.waypoint = waypoint(r.inter, model.navigator);
    if (mc.mode == ResidualMode::hybrid) {
        r.trusted = select_trusted(r.waypoint, features.grid, mc.trusted_percent);
        r.intra = intra_residual_grid(features.grid, r.trusted, mc.theta, std::min(mc.intra_topk, r.trusted.indices.size()));
        r.snmm_input = hybrid(r.inter, r.intra).values;
    } else {
        r.snmm_input = r.inter.values;
    }
    return r;
}

Prediction predict(const Model& model, const PrototypeBank& bank, const PatchFeatureGrid& features) {
    const MatchResult m = match(model, bank, features, false);
    const DirectionalOutputs outs = snmm_forward_raw(m.snmm_input, m.waypoint, model.snmm);
    Prediction p;
    p.views = decoder_forward(outs, model.decoder, features.geometry.image_h, features.geometry.image_w);
    p.anomaly = ensemble(p.views);
    p.waypoint = m.waypoint;
    p.image_score = image_score(p.anomaly, model.decoder_config.reduction, model.decoder_config.score_q);
    return p;
}

}  // namespace snarm
