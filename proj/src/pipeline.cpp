#include "snarm/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "snarm/error.hpp"
#include "snarm/image_io.hpp"
#include "snarm/rng.hpp"

namespace snarm {

namespace fs = std::filesystem;

namespace {

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

std::string read_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw DataError("cannot open " + p.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

FeatureExtractor::FeatureExtractor(const EncoderConfig& cfg, std::optional<fs::path> cache_dir)
    : cfg_(cfg), backend_(BackendRegistry::instance().create(cfg)), cache_(std::move(cache_dir)) {
    if (!cache_) {
        const char* env = std::getenv("SNARM_CACHE");
        if (env && *env) cache_ = fs::path(env);
    }
    if (cache_) fs::create_directories(*cache_);
    std::ostringstream key;
    key << cfg.backend << '|' << cfg.layers << '|' << cfg.channels << '|' << cfg.resize << '|' << cfg.crop << '|'
        << cfg.patch_size << '|' << cfg.pool << '|' << cfg.seed;
    salt_ = fnv1a64(key.str());
}

PatchFeatureGrid FeatureExtractor::from_image(const Image& image) const {
    image.validate();
    const Image pre = preprocess(image, cfg_.resize, cfg_.crop);
    PatchFeatureGrid pf = fuse(extract(pre, *backend_), cfg_.pool);
    quantize_to_float(pf.grid);
    return pf;
}

PatchFeatureGrid FeatureExtractor::operator()(const fs::path& image_path) const {
    if (!cache_) return from_image(read_image(image_path));
    const std::string bytes = read_bytes(image_path);
    const fs::path entry = *cache_ / (hex64(fnv1a64(bytes, salt_)) + ".snf");
    const int p = cfg_.patch_size;
    if (fs::is_regular_file(entry)) {
        std::ifstream is(entry, std::ios::binary);
        try {
            PatchFeatureGrid pf{read_feature_grid(is), {}};
            pf.geometry = PatchGeometry{pf.grid.h * p, pf.grid.w * p, pf.grid.h, pf.grid.w};
            ++hits_;
            return pf;
        } catch (const DataError&) {
            // unreadable entry: fall through and overwrite it
        }
    }
    PatchFeatureGrid pf = from_image(read_image(image_path));
    const fs::path tmp = entry.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw DataError("cannot write feature cache entry " + tmp.string());
        write_feature_grid(os, pf.grid);
    }
    fs::rename(tmp, entry);
    return pf;
}

Map FeatureExtractor::prepare_mask(const Map& mask) const {
    require(mask.c == 1, "prepare_mask: expects a single-channel mask");
    const Map resized = (mask.h == cfg_.resize && mask.w == cfg_.resize) ? mask
                                                                        : resize_bilinear(mask, cfg_.resize, cfg_.resize);
    const int off = (cfg_.resize - cfg_.crop) / 2;
    const int side = (cfg_.crop / cfg_.patch_size) * cfg_.patch_size;
    Map out(side, side, 1);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) out.at(y, x, 0) = resized.at(y + off, x + off, 0) > 0.5 ? 1.0 : 0.0;
    return out;
}

std::vector<CategoryFeatures> extract_dataset(const DatasetManifest& manifest, const FeatureExtractor& fx,
                                              bool with_test) {
    std::vector<CategoryFeatures> out;
    for (const auto& cat : manifest.categories) {
        CategoryFeatures cf;
        cf.name = cat;
        for (const ImageEntry* e : manifest.select(cat, true)) {
            cf.train_ids.push_back(e->id);
            cf.train.push_back(fx(e->path));
        }
        if (with_test) {
            for (const ImageEntry* e : manifest.select(cat, false)) {
                TestItem t{e->id, cat, e->defect, fx(e->path), e->label, {}, e->mask_missing};
                if (e->label && !e->mask_missing) {
                    t.mask = fx.prepare_mask(read_mask(e->mask));
                    if (t.mask.h != t.features.geometry.image_h || t.mask.w != t.features.geometry.image_w) {
                        throw DataError("mask does not match the image size: " + e->mask.string());
                    }
                }
                cf.test.push_back(std::move(t));
            }
        }
        out.push_back(std::move(cf));
    }
    return out;
}

std::vector<PatchFeatureGrid> pool_training(std::span<const CategoryFeatures> cats, int limit) {
    std::vector<PatchFeatureGrid> out;
    for (const auto& c : cats) {
        const std::size_t n = limit > 0 ? std::min<std::size_t>(limit, c.train.size()) : c.train.size();
        out.insert(out.end(), c.train.begin(), c.train.begin() + static_cast<long>(n));
    }
    return out;
}

PrototypeBank build_bank(const RunConfig& cfg, std::span<const CategoryFeatures> cats, int limit) {
    const std::uint64_t seed = substream_seed(cfg.seed, "bank");
    if (!cfg.bank.per_category) {
        const auto grids = pool_training(cats, limit);
        const RawFeaturePool pool = build_raw_pool(grids);
        return coreset_select(pool, std::min(cfg.bank.size, pool.size()), seed);
    }
    PrototypeBank bank;
    bank.seed = seed;
    std::uint32_t offset = 0;
    for (const auto& c : cats) {
        const auto grids = pool_training(std::span(&c, 1), limit);
        const RawFeaturePool pool = build_raw_pool(grids);
        const PrototypeBank part =
            coreset_select(pool, std::min(cfg.bank.size, pool.size()), substream_seed(seed, c.name));
        if (bank.dim == 0) bank.dim = part.dim;
        require(bank.dim == part.dim, "build_bank: categories differ in feature dimension");
        bank.prototypes.insert(bank.prototypes.end(), part.prototypes.begin(), part.prototypes.end());
        for (auto s : part.selected) bank.selected.push_back(s + offset);
        offset += static_cast<std::uint32_t>(pool.size());
    }
    return bank;
}

TrainedModel train_model(const RunConfig& cfg, const PrototypeBank& bank, std::span<const PatchFeatureGrid> normals,
                         const StepCallback& on_step) {
    require(!normals.empty(), "train_model: no training images");
    TrainedModel tm{Model(normals.front().dim(), cfg.matching, cfg.snmm, cfg.decoder), {}, {}};
    tm.model.init(cfg.seed);
    tm.log = cyclic_train(tm.model, bank, normals, cfg.train, cfg.seed, &tm.state, on_step);
    return tm;
}

std::vector<ScoredItem> infer(const Model& model, const PrototypeBank& bank, std::span<const TestItem> items) {
    std::vector<ScoredItem> out;
    out.reserve(items.size());
    for (const auto& it : items) {
        Prediction p = predict(model, bank, it.features);
        if (!p.anomaly.all_finite()) throw NumericError("non-finite anomaly map for " + it.id);
        out.push_back({it.id, it.category, std::move(p.anomaly), p.image_score});
    }
    return out;
}

void write_predictions(const fs::path& dir, std::span<const ScoredItem> items) {
    fs::create_directories(dir / "maps");
    std::ofstream csv(dir / "scores.csv");
    if (!csv) throw DataError("cannot write " + (dir / "scores.csv").string());
    csv << "image_id,image_score\n";
    csv << std::setprecision(17);
    for (const auto& it : items) {
        csv << it.id << ',' << it.score << '\n';
        fs::path out = dir / "maps" / it.id;
        out.replace_extension(".pgm");
        fs::create_directories(out.parent_path());
        write_map16(out, it.anomaly);
    }
}

double defect_iou(const Map& scores, const Map& mask) {
    require(scores.cells() == mask.cells(), "defect_iou: shape mismatch");
    const auto area = static_cast<std::size_t>(std::count_if(mask.data.begin(), mask.data.end(), [](double v) { return v > 0.5; }));
    if (area == 0) return 0.0;
    std::vector<std::size_t> order(scores.cells());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores.data[a] > scores.data[b]; });
    std::size_t inter = 0;
    for (std::size_t i = 0; i < area; ++i) inter += mask.data[order[i]] > 0.5;
    return static_cast<double>(inter) / static_cast<double>(2 * area - inter);
}

CategoryReport evaluate_category(const std::string& name, std::span<const TestItem> items,
                                 std::span<const ScoredItem> scored, const ProOptions& opt) {
    require(items.size() == scored.size(), "evaluate_category: predictions and items differ in count");
    std::vector<EvalRecord> records;
    double iou = 0.0;
    int n_iou = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const TestItem& t = items[i];
        EvalRecord r{t.id, t.category, scored[i].score, scored[i].anomaly, static_cast<std::uint8_t>(t.label ? 1 : 0), t.mask};
        if (!t.label) r.gt_mask = Map(scored[i].anomaly.h, scored[i].anomaly.w, 1);
        if (t.label && t.mask.size()) {
            iou += defect_iou(scored[i].anomaly, t.mask);
            ++n_iou;
        }
        records.push_back(std::move(r));
    }
    CategoryReport rep{name, {}, n_iou ? iou / n_iou : 0.0, items.size()};
    try {
        rep.metrics = evaluate(records, opt);
    } catch (const InvalidArgument& e) {
        throw DataError("category '" + name + "' cannot be evaluated: " + e.what());
    }
    return rep;
}

void validate_regime(const RunConfig& cfg, std::span<const CategoryFeatures> cats) {
    cfg.validate();
    if (cats.empty()) throw DataError("dataset has no categories");
    if (cfg.regime == Regime::cross && cats.size() < 2) {
        throw ConfigError("cross regime needs at least 2 categories, dataset has " + std::to_string(cats.size()));
    }
    int dim = -1;
    std::size_t patches = 0;
    for (const auto& c : cats) {
        if (c.train.empty()) throw DataError("category '" + c.name + "' has no training images");
        if (cfg.regime == Regime::fewshot && static_cast<int>(c.train.size()) < cfg.fewshot_k) {
            throw DataError("category '" + c.name + "' has fewer than fewshot_k=" + std::to_string(cfg.fewshot_k) +
                            " training images");
        }
        const bool has_normal = std::any_of(c.test.begin(), c.test.end(), [](const auto& t) { return t.label == 0; });
        const bool has_anomaly = std::any_of(c.test.begin(), c.test.end(), [](const auto& t) { return t.label && t.mask.size(); });
        if (!has_normal || !has_anomaly) {
            throw DataError("category '" + c.name + "' test split needs normal images and masked anomalies");
        }
        for (const auto& g : c.train) {
            if (dim < 0) {
                dim = g.dim();
                patches = g.patches();
            }
            if (g.dim() != dim || g.patches() != patches) {
                throw DataError("category '" + c.name + "': training grids differ in shape");
            }
        }
    }
}

namespace {

RunSummary run_once(const RunConfig& cfg, const std::string& label, std::span<const CategoryFeatures> train_cats,
                    std::span<const CategoryFeatures> test_cats, int limit, const RunHooks& hooks) {
    auto say = [&](const std::string& m) {
        if (hooks.log) hooks.log(m);
    };
    RunSummary s;
    s.label = label;
    for (const auto& c : train_cats) s.train_categories.push_back(c.name);
    const auto normals = pool_training(train_cats, limit);
    const PrototypeBank bank = build_bank(cfg, train_cats, limit);
    s.pool_size = normals.size() * normals.front().patches();
    s.bank_size = bank.size();
    say("[" + label + "] bank: " + std::to_string(bank.size()) + " prototypes from " + std::to_string(s.pool_size) +
        " patches");
    const int K = cfg.train.loss.cycle_length;
    TrainedModel tm = train_model(cfg, bank, normals, [&](int step, double loss) {
        if ((step + 1) % K == 0) {
            std::ostringstream os;
            os << "[" << label << "] step " << step + 1 << " loss " << std::setprecision(5) << loss;
            say(os.str());
        }
    });
    s.log = tm.log;
    std::vector<ScoredItem> all_scored;
    for (const auto& c : test_cats) {
        const auto scored = infer(tm.model, bank, c.test);
        s.categories.push_back(evaluate_category(c.name, c.test, scored, cfg.metrics));
        all_scored.insert(all_scored.end(), scored.begin(), scored.end());
    }
    if (hooks.on_model) hooks.on_model(s, tm, bank, all_scored);
    return s;
}

}  // namespace

void summarize_overall(RunReport& rep) {
    rep.overall = {};
    rep.overall_iou = 0.0;
    std::size_t n = 0;
    for (const auto& r : rep.runs) {
        for (const auto& c : r.categories) {
            rep.overall.i_auroc += c.metrics.i_auroc;
            rep.overall.p_auroc += c.metrics.p_auroc;
            rep.overall.p_ap += c.metrics.p_ap;
            rep.overall.pro += c.metrics.pro;
            rep.overall_iou += c.mean_iou;
            ++n;
        }
    }
    if (n == 0) return;
    rep.overall.i_auroc /= n;
    rep.overall.p_auroc /= n;
    rep.overall.p_ap /= n;
    rep.overall.pro /= n;
    rep.overall_iou /= n;
}

std::vector<CategoryReport> evaluate_predictions(const DatasetManifest& manifest, const fs::path& pred_dir,
                                                 const ProOptions& opt, const FeatureExtractor* fx) {
    std::ifstream csv(pred_dir / "scores.csv");
    if (!csv) throw DataError("cannot open " + (pred_dir / "scores.csv").string());
    std::string line;
    if (!std::getline(csv, line) || line != "image_id,image_score") {
        throw DataError("scores.csv: expected header image_id,image_score");
    }
    std::map<std::string, double> scores;
    for (int row = 2; std::getline(csv, line); ++row) {
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        if (comma == std::string::npos) throw DataError("scores.csv line " + std::to_string(row) + ": missing comma");
        try {
            std::size_t used = 0;
            const std::string num = line.substr(comma + 1);
            scores[line.substr(0, comma)] = std::stod(num, &used);
            if (used != num.size()) throw std::invalid_argument(num);
        } catch (const std::logic_error&) {
            throw DataError("scores.csv line " + std::to_string(row) + ": bad score");
        }
    }
    std::vector<CategoryReport> out;
    for (const auto& cat : manifest.categories) {
        std::vector<TestItem> items;
        std::vector<ScoredItem> scored;
        for (const ImageEntry* e : manifest.select(cat, false)) {
            const auto it = scores.find(e->id);
            if (it == scores.end()) throw DataError("no prediction for " + e->id);
            fs::path map_path = pred_dir / "maps" / e->id;
            map_path.replace_extension(".pgm");
            ScoredItem s{e->id, cat, read_map16(map_path), it->second};
            TestItem t{e->id, cat, e->defect, {}, e->label, {}, e->mask_missing};
            if (e->label && !e->mask_missing) {
                t.mask = read_mask(e->mask);
                if (fx && (t.mask.h != s.anomaly.h || t.mask.w != s.anomaly.w)) t.mask = fx->prepare_mask(t.mask);
                if (t.mask.h != s.anomaly.h || t.mask.w != s.anomaly.w) {
                    throw DataError("mask does not match the prediction size: " + e->mask.string());
                }
            }
            items.push_back(std::move(t));
            scored.push_back(std::move(s));
        }
        out.push_back(evaluate_category(cat, items, scored, opt));
    }
    return out;
}

RunReport run_regime(const RunConfig& cfg, std::span<const CategoryFeatures> cats, const RunHooks& hooks) {
    validate_regime(cfg, cats);
    const auto t0 = std::chrono::steady_clock::now();
    RunReport rep;
    rep.regime = cfg.regime;
    rep.config_hash = model_config_hash(cfg);
    switch (cfg.regime) {
        case Regime::single:
            for (std::size_t i = 0; i < cats.size(); ++i) {
                rep.runs.push_back(run_once(cfg, "single:" + cats[i].name, cats.subspan(i, 1), cats.subspan(i, 1), 0, hooks));
            }
            break;
        case Regime::multi:
            rep.runs.push_back(run_once(cfg, "multi", cats, cats, 0, hooks));
            break;
        case Regime::cross:
            for (std::size_t i = 0; i < cats.size(); ++i) {
                std::vector<CategoryFeatures> rest;
                for (std::size_t j = 0; j < cats.size(); ++j)
                    if (j != i) rest.push_back(cats[j]);
                rep.runs.push_back(run_once(cfg, "cross:" + cats[i].name, rest, cats.subspan(i, 1), 0, hooks));
            }
            break;
        case Regime::fewshot:
            rep.runs.push_back(run_once(cfg, "fewshot", cats, cats, cfg.fewshot_k, hooks));
            break;
    }
    summarize_overall(rep);
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

namespace {

nlohmann::json metrics_json(const MetricReport& m) {
    return {{"i_auroc", m.i_auroc}, {"p_auroc", m.p_auroc}, {"p_ap", m.p_ap}, {"pro", m.pro}};
}

}  // namespace

std::string report_to_json(const RunReport& report) {
    nlohmann::json j = metrics_json(report.overall);
    j["regime"] = regime_name(report.regime);
    j["config_hash"] = hex64(report.config_hash);
    j["overall"] = metrics_json(report.overall);
    j["overall"]["mean_iou"] = report.overall_iou;
    j["seconds"] = report.seconds;
    j["runs"] = nlohmann::json::array();
    for (const auto& r : report.runs) {
        nlohmann::json jr{{"label", r.label},
                          {"train_categories", r.train_categories},
                          {"bank_size", r.bank_size},
                          {"pool_size", r.pool_size},
                          {"steps", r.log.step_loss.size()}};
        jr["probe_loss"] = nlohmann::json::array();
        for (const auto& [step, loss] : r.log.probe_loss) jr["probe_loss"].push_back({{"step", step}, {"loss", loss}});
        jr["categories"] = nlohmann::json::array();
        for (const auto& c : r.categories) {
            nlohmann::json jc = metrics_json(c.metrics);
            jc["name"] = c.name;
            jc["mean_iou"] = c.mean_iou;
            jc["n_test"] = c.n_test;
            jr["categories"].push_back(std::move(jc));
        }
        j["runs"].push_back(std::move(jr));
    }
    return j.dump(2);
}

}  // namespace snarm
