#include "snarm/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "snarm/error.hpp"

namespace snarm {

void LossConfig::validate() const {
    if (!(alpha_nav > 0 && alpha_nav < 1 && alpha_branch > 0 && alpha_branch < 1)) {
        throw ConfigError("focal alpha must lie in (0,1)");
    }
    if (gamma_nav < 0 || gamma_branch < 0) throw ConfigError("focal gamma must be >= 0");
    if (cycle_length < 1) throw ConfigError("cycle length K must be >= 1");
    if (jitter_lambda < 0) throw ConfigError("jitter lambda must be >= 0");
    if (!(lr > 0)) throw ConfigError("learning rate must be positive");
}

double focal_loss(const Map& pred, const Map& target, double alpha, double gamma) {
    if (pred.cells() != target.cells()) throw InvalidArgument("focal_loss: shape mismatch");
    double loss = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double m = std::clamp(pred.data[i], kProbClamp, 1.0 - kProbClamp);
        const double y = target.data[i];
        if (y != 0.0) loss -= alpha * std::pow(1.0 - m, gamma) * y * std::log(m);
        if (y != 1.0) loss -= (1.0 - alpha) * std::pow(m, gamma) * (1.0 - y) * std::log(1.0 - m);
    }
    return loss;
}

Map focal_loss_grad(const Map& pred, const Map& target, double alpha, double gamma) {
    if (pred.cells() != target.cells()) throw InvalidArgument("focal_loss_grad: shape mismatch");
    Map g(pred.h, pred.w, pred.c);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double raw = pred.data[i];
        if (raw < kProbClamp || raw > 1.0 - kProbClamp) continue;
        const double m = raw;
        const double y = target.data[i];
        double d = 0.0;
        if (y != 0.0) {
            const double pw = gamma == 0.0 ? 1.0 : std::pow(1.0 - m, gamma);
            const double dpw = gamma == 0.0 ? 0.0 : -gamma * std::pow(1.0 - m, gamma - 1.0);
            d -= alpha * y * (dpw * std::log(m) + pw / m);
        }
        if (y != 1.0) {
            const double pw = gamma == 0.0 ? 1.0 : std::pow(m, gamma);
            const double dpw = gamma == 0.0 ? 0.0 : gamma * std::pow(m, gamma - 1.0);
            d -= (1.0 - alpha) * (1.0 - y) * (dpw * std::log(1.0 - m) - pw / (1.0 - m));
        }
        g.data[i] = d;
    }
    return g;
}

double total_loss(const Map& nav_q, std::span<const Map> branch_maps, const Map& target, const LossConfig& cfg,
                  int active_branch) {
    if (active_branch < 0 || active_branch > 3) throw InvalidArgument("total_loss: active branch must be in [0, 3]");
    if (branch_maps.size() != 16) throw InvalidArgument("total_loss: expects all 16 view maps");
    const Map up = resize_bilinear(nav_q, target.h, target.w);
    double loss = focal_loss(up, target, cfg.alpha_nav, cfg.gamma_nav);
    double branch = 0.0;
    for (int j = 0; j < 4; ++j) {
        branch += focal_loss(branch_maps[active_branch * 4 + j], target, cfg.alpha_branch, cfg.gamma_branch);
    }
    return loss + 0.25 * branch;
}

std::pair<std::vector<double>, std::vector<double>> consistent_jitter(std::span<const double> f,
                                                                      std::span<const double> r, double lambda,
                                                                      std::span<const double> noise) {
    require(lambda >= 0.0, "consistent_jitter: lambda must be >= 0");
    require(f.size() == r.size() && f.size() == noise.size() && !f.empty(), "consistent_jitter: size mismatch");
    const double d = static_cast<double>(f.size());
    double nf = 0.0, nr = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        nf += f[i] * f[i];
        nr += r[i] * r[i];
    }
    const double sf = lambda * std::sqrt(nf) / d;
    const double sr = lambda * std::sqrt(nr) / d;
    std::pair<std::vector<double>, std::vector<double>> out{std::vector<double>(f.size()), std::vector<double>(f.size())};
    for (std::size_t i = 0; i < f.size(); ++i) {
        out.first[i] = f[i] + sf * noise[i];
        out.second[i] = r[i] + sr * noise[i];
    }
    return out;
}

Map empty_label(const PatchGeometry& g) { return Map(g.image_h, g.image_w, 1); }

TrainSample synthesize_anomaly(const TrainSample& normal, const PatchFeatureGrid* donor, std::uint64_t seed,
                               const SynthesisOptions& opt) {
    require(std::all_of(normal.label.data.begin(), normal.label.data.end(), [](double v) { return v == 0.0; }),
            "synthesize_anomaly: input sample must be anomaly-free");
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal_dist(0.0, 1.0);
    const Grid& src = normal.features.grid;
    const int gh = src.h, gw = src.w;
    const double M = static_cast<double>(src.cells());
    const auto min_cells = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(opt.min_area * M)));
    const auto max_cells = std::max<std::size_t>(min_cells, static_cast<std::size_t>(std::floor(opt.max_area * M)));

    std::vector<std::uint8_t> region(src.cells(), 0);
    const double area = (opt.min_area + (opt.max_area - opt.min_area) * unit(rng)) * M;
    const double aspect = std::exp(std::log(0.5) + unit(rng) * (std::log(2.0) - std::log(0.5)));
    const bool ellipse = unit(rng) < 0.5;
    const double cy = unit(rng) * gh, cx = unit(rng) * gw;
    double scale = 1.0;
    std::size_t count = 0;
    for (int attempt = 0; attempt < 32; ++attempt, scale *= 0.85) {
        std::fill(region.begin(), region.end(), 0);
        count = 0;
        if (ellipse) {
            const double ry = std::sqrt(area * aspect / M_PI) * scale;
            const double rx = std::sqrt(area / (aspect * M_PI)) * scale;
            for (int y = 0; y < gh; ++y) {
                for (int x = 0; x < gw; ++x) {
                    const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
                    if (dy * dy + dx * dx <= 1.0) {
                        region[static_cast<std::size_t>(y) * gw + x] = 1;
                        ++count;
                    }
                }
            }
        } else {
            const int rh = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect) * scale)), 1, gh);
            const int rw = std::clamp(static_cast<int>(std::lround(std::sqrt(area / aspect) * scale)), 1, gw);
            const int y0 = std::clamp(static_cast<int>(cy) - rh / 2, 0, gh - rh);
            const int x0 = std::clamp(static_cast<int>(cx) - rw / 2, 0, gw - rw);
            for (int y = y0; y < y0 + rh; ++y) {
                for (int x = x0; x < x0 + rw; ++x) {
                    region[static_cast<std::size_t>(y) * gw + x] = 1;
                    ++count;
                }
            }
        }
        if (count <= max_cells) break;
    }
    if (count < min_cells || count > max_cells) {
        // Fall back to a compact block grown around the centre cell.
        std::fill(region.begin(), region.end(), 0);
        const auto want = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(area)), min_cells, max_cells);
        const int y0 = std::min(static_cast<int>(cy), gh - 1), x0 = std::min(static_cast<int>(cx), gw - 1);
        std::vector<std::pair<double, std::size_t>> by_dist;
        for (int y = 0; y < gh; ++y)
            for (int x = 0; x < gw; ++x)
                by_dist.push_back({std::hypot(y - y0, x - x0), static_cast<std::size_t>(y) * gw + x});
        std::sort(by_dist.begin(), by_dist.end());
        for (std::size_t k = 0; k < want; ++k) region[by_dist[k].second] = 1;
        count = want;
    }

    double rms = 0.0;
    for (double v : src.data) rms += v * v;
    rms = std::sqrt(rms / static_cast<double>(std::max<std::size_t>(1, src.size())));
    if (rms == 0.0) rms = 1.0;
    const double sigma = rms * (opt.noise_min + (opt.noise_max - opt.noise_min) * unit(rng));
    const bool use_donor = donor && donor->grid.same_shape(src);
    const int shift_y = static_cast<int>(unit(rng) * gh), shift_x = static_cast<int>(unit(rng) * gw);

    TrainSample out = normal;
    out.is_synthetic = true;
    for (int y = 0; y < gh; ++y) {
        for (int x = 0; x < gw; ++x) {
            if (!region[static_cast<std::size_t>(y) * gw + x]) continue;
            auto dst = out.features.grid.cell(y, x);
            if (use_donor) {
                auto d = donor->grid.cell((y + shift_y) % gh, (x + shift_x) % gw);
                for (int k = 0; k < src.c; ++k) dst[k] = d[k] + sigma * normal_dist(rng);
            } else {
                for (int k = 0; k < src.c; ++k) dst[k] += sigma * normal_dist(rng);
            }
            const PixelRect r = normal.features.geometry.rect(y, x);
            for (int py = r.y0; py < r.y1; ++py)
                for (int px = r.x0; px < r.x1; ++px) out.label.at(py, px, 0) = 1.0;
        }
    }
    return out;
}

Adam::Adam(double lr, double wd, double b1, double b2, double eps) : lr_(lr), wd_(wd), b1_(b1), b2_(b2), eps_(eps) {}

void Adam::step(Param& p) {
    Slot& s = state_[p.name];
    if (s.m.size() != p.size()) {
        s.m.assign(p.size(), 0.0);
        s.v.assign(p.size(), 0.0);
        s.t = 0;
    }
    ++s.t;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(s.t));
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = p.grad[i] + wd_ * p.value[i];
        s.m[i] = b1_ * s.m[i] + (1.0 - b1_) * g;
        s.v[i] = b2_ * s.v[i] + (1.0 - b2_) * g * g;
        p.value[i] -= lr_ * (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + eps_);
    }
}

namespace {

struct TrainingForward {
    Grid residual;  // inter residuals fed to the navigator (possibly jittered)
    WaypointMap wm;
    SnmmCache snmm;
    std::array<BranchCache, 4> branch;
    std::array<Map, 4> maps;
    Map nav_up;
};

TrainingForward run_forward(const Model& model, const PrototypeBank& bank, const TrainSample& sample, int active,
                            double jitter_lambda, Rng* jitter_rng) {
    const MatchingConfig& mc = model.matching;
    const PatchFeatureGrid& pf = sample.features;
    InterMatchOptions opt{mc.theta, mc.topk_train ? mc.topk : 1, sample.source_image,
                          sample.source_image >= 0 ? pf.patches() : 0};
    ResidualGrid inter = compute_inter_grid(pf, bank, opt);
    Grid feats = pf.grid;
    Grid resid = inter.values;
    if (jitter_rng && jitter_lambda > 0.0) {
        std::normal_distribution<double> nd(0.0, 1.0);
        std::vector<double> eps(feats.c);
        for (std::size_t i = 0; i < feats.cells(); ++i) {
            for (double& e : eps) e = nd(*jitter_rng);
            auto [fj, rj] = consistent_jitter(feats.cell(i), resid.cell(i), jitter_lambda, eps);
            std::copy(fj.begin(), fj.end(), feats.cell(i).begin());
            std::copy(rj.begin(), rj.end(), resid.cell(i).begin());
        }
    }
    TrainingForward fw;
    fw.wm = waypoint_raw(resid, model.navigator);
    Grid snmm_in;
    if (mc.mode == ResidualMode::hybrid) {
        const TrustedSet trusted = select_trusted(fw.wm, feats, mc.trusted_percent);
        const ResidualGrid intra =
            intra_residual_grid(feats, trusted, mc.theta, std::min(mc.intra_topk, trusted.indices.size()));
        snmm_in = Grid(resid.h, resid.w, 2 * resid.c);
        for (std::size_t i = 0; i < resid.cells(); ++i) {
            auto dst = snmm_in.cell(i);
            auto a = resid.cell(i);
            auto b = intra.values.cell(i);
            std::copy(a.begin(), a.end(), dst.begin());
            std::copy(b.begin(), b.end(), dst.begin() + resid.c);
        }
    } else {
        snmm_in = resid;
    }
    fw.residual = std::move(resid);
    const DirectionalOutputs outs = snmm_forward_raw(snmm_in, fw.wm, model.snmm, &fw.snmm);
    const int H = sample.label.h, W = sample.label.w;
    for (int d = 0; d < 4; ++d) {
        fw.maps[d] = branch_forward(outs[d], model.decoder.branches[active][d], H, W, &fw.branch[d]);
    }
    fw.nav_up = resize_bilinear(fw.wm.q, H, W);
    return fw;
}

double forward_loss(const TrainingForward& fw, const TrainSample& s, const LossConfig& cfg) {
    double loss = focal_loss(fw.nav_up, s.label, cfg.alpha_nav, cfg.gamma_nav);
    for (const Map& m : fw.maps) loss += 0.25 * focal_loss(m, s.label, cfg.alpha_branch, cfg.gamma_branch);
    return loss;
}

}  // namespace

double sample_loss(const Model& model, const PrototypeBank& bank, const TrainSample& sample, const LossConfig& cfg,
                   int active_branch) {
    require(active_branch >= 0 && active_branch < 4, "sample_loss: active branch must be in [0, 3]");
    const TrainingForward fw = run_forward(model, bank, sample, active_branch, 0.0, nullptr);
    return forward_loss(fw, sample, cfg);
}

double sample_loss_and_grad(Model& model, const PrototypeBank& bank, const TrainSample& sample, const TrainConfig& cfg,
                            int active, Rng* jitter_rng) {
    require(active >= 0 && active < 4, "sample_loss_and_grad: active branch must be in [0, 3]");
    const LossConfig& lc = cfg.loss;
    TrainingForward fw = run_forward(model, bank, sample, active, lc.jitter_lambda, jitter_rng);
    const double loss = forward_loss(fw, sample, lc);

    const Map g_up = focal_loss_grad(fw.nav_up, sample.label, lc.alpha_nav, lc.gamma_nav);
    const Map g_q = Resampler(fw.wm.q.h, fw.wm.q.w, sample.label.h, sample.label.w).backward(g_up);
    waypoint_backward(fw.residual, fw.wm, g_q, model.navigator);

    DirectionalOutputs g_outs;
    for (int d = 0; d < 4; ++d) {
        Map gm = focal_loss_grad(fw.maps[d], sample.label, lc.alpha_branch, lc.gamma_branch);
        for (double& v : gm.data) v *= 0.25;
        g_outs[d] = branch_backward(fw.branch[d], gm, model.decoder.branches[active][d]);
    }
    if (cfg.update_snmm) snmm_backward(fw.snmm, g_outs, model.snmm);
    return loss;
}

std::vector<TrainSample> make_probe_set(std::span<const PatchFeatureGrid> normals, int count, std::uint64_t seed,
                                        const SynthesisOptions& opt) {
    require(!normals.empty(), "make_probe_set: no training grids");
    Rng rng(seed);
    std::vector<TrainSample> probe;
    for (int i = 0; i < count; ++i) {
        const auto idx = static_cast<std::size_t>(rng() % normals.size());
        TrainSample s{normals[idx], empty_label(normals[idx].geometry), false, static_cast<long>(idx)};
        if (i >= count / 2) {
            const PatchFeatureGrid* donor = normals.size() > 1 ? &normals[(idx + 1 + rng() % (normals.size() - 1)) % normals.size()] : nullptr;
            s = synthesize_anomaly(s, donor, rng(), opt);
        }
        probe.push_back(std::move(s));
    }
    return probe;
}

TrainLog cyclic_train(Model& model, const PrototypeBank& bank, std::span<const PatchFeatureGrid> normals,
                      const TrainConfig& cfg, std::uint64_t seed, TrainState* state_out, const StepCallback& on_step) {
    cfg.loss.validate();
    if (cfg.cycles < 0 || cfg.batch < 1) throw ConfigError("train.cycles must be >= 0 and train.batch >= 1");
    require(!normals.empty(), "cyclic_train: no training grids");

    TrainState local{Adam(cfg.loss.lr, cfg.loss.weight_decay), 0, substream(seed, "train.sample"),
                     substream(seed, "synthesis"), substream(seed, "jitter")};
    TrainState& st = state_out ? *state_out : local;
    if (state_out) st = std::move(local);

    const std::vector<TrainSample> probe =
        make_probe_set(normals, cfg.probe_samples, substream_seed(seed, "probe"), cfg.synthesis);
    auto probe_loss = [&](int active) {
        double acc = 0.0;
        for (const auto& s : probe) acc += sample_loss(model, bank, s, cfg.loss, active);
        return probe.empty() ? 0.0 : acc / static_cast<double>(probe.size());
    };

    const int K = cfg.loss.cycle_length;
    const int total = cfg.cycles * 4 * K;
    TrainLog log;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int step = 0; step < total; ++step) {
        const int active = (step / K) % 4;
        if (step % K == 0) log.probe_loss.emplace_back(step, probe_loss(step == 0 ? 0 : ((step - 1) / K) % 4));
        model.visit([](Param& p) { p.zero_grad(); });
        double loss = 0.0;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto idx = static_cast<std::size_t>(st.sample_rng() % normals.size());
            TrainSample s{normals[idx], empty_label(normals[idx].geometry), false, static_cast<long>(idx)};
            if (unit(st.sample_rng) < cfg.anomaly_prob) {
                const PatchFeatureGrid* donor = nullptr;
                if (normals.size() > 1) {
                    donor = &normals[(idx + 1 + st.sample_rng() % (normals.size() - 1)) % normals.size()];
                }
                s = synthesize_anomaly(s, donor, st.synthesis_rng(), cfg.synthesis);
            }
            const bool jitter = unit(st.sample_rng) < cfg.jitter_prob;
            loss += sample_loss_and_grad(model, bank, s, cfg, active, jitter ? &st.jitter_rng : nullptr);
        }
        loss /= cfg.batch;
        if (!std::isfinite(loss)) {
            std::ostringstream os;
            os << "non-finite training loss at step " << step << " (active branch " << active << ")";
            throw NumericError(os.str());
        }
        const double inv = 1.0 / cfg.batch;
        auto apply = [&](Param& p) {
            for (double& g : p.grad) g *= inv;
            st.optimizer.step(p);
        };
        model.navigator.visit(apply);
        if (cfg.update_snmm) model.snmm.visit(apply);
        model.decoder.visit_scale(active, apply);
        log.step_loss.push_back(loss);
        ++st.step;
        if (on_step) on_step(step, loss);
    }
    log.probe_loss.emplace_back(total, probe_loss(total == 0 ? 0 : ((total - 1) / K) % 4));
    return log;
}

}  // namespace snarm
