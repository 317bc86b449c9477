#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>

#include "snarm/bank.hpp"
#include "snarm/checkpoint.hpp"
#include "snarm/config.hpp"
#include "snarm/dataset.hpp"
#include "snarm/error.hpp"
#include "snarm/image_io.hpp"
#include "snarm/metrics.hpp"
#include "snarm/pipeline.hpp"
#include "snarm/train.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace snarm;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const Grid& g, bool squeeze) {
    std::vector<py::ssize_t> shape{g.h, g.w};
    if (!squeeze || g.c != 1) shape.push_back(g.c);
    Array a(shape);
    std::copy(g.data.begin(), g.data.end(), a.mutable_data());
    return a;
}

Grid to_grid(const Array& a) {
    if (a.ndim() != 2 && a.ndim() != 3) throw InvalidArgument("expected a 2-D or 3-D array");
    Grid g(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1);
    std::copy(a.data(), a.data() + a.size(), g.data.begin());
    return g;
}

std::vector<std::vector<double>> to_rows(const Array& a) {
    if (a.ndim() != 2) throw InvalidArgument("expected an (n, d) array");
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(a.shape(0)));
    for (py::ssize_t i = 0; i < a.shape(0); ++i) rows[i].assign(a.data() + i * a.shape(1), a.data() + (i + 1) * a.shape(1));
    return rows;
}

PrototypeBank bank_from_array(const Array& a) {
    PrototypeBank b;
    const auto rows = to_rows(a);
    b.dim = static_cast<int>(a.shape(1));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        b.prototypes.insert(b.prototypes.end(), rows[i].begin(), rows[i].end());
        b.selected.push_back(static_cast<std::uint32_t>(i));
    }
    return b;
}

RawFeaturePool pool_from_array(const Array& a) {
    Grid g(1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), g.data.begin());
    PatchFeatureGrid pf{g, PatchGeometry{1, g.w, 1, g.w}};
    return build_raw_pool(std::vector<PatchFeatureGrid>{pf});
}

std::vector<CategoryFeatures> dataset_features(const RunConfig& cfg, bool with_test) {
    if (cfg.data_root.empty()) throw ConfigError("run.data_root is not set");
    const FeatureExtractor fx(cfg.encoder);
    return extract_dataset(load_manifest(cfg.data_root), fx, with_test);
}

struct Trained {
    RunConfig cfg;
    Model model;
    PrototypeBank bank;
    TrainState state;
    TrainLog log;
};

Trained train(const RunConfig& cfg) {
    const auto cats = dataset_features(cfg, false);
    PrototypeBank bank = build_bank(cfg, cats);
    TrainedModel tm = train_model(cfg, bank, pool_training(cats));
    return {cfg, std::move(tm.model), std::move(bank), std::move(tm.state), std::move(tm.log)};
}

py::list infer_paths(const Trained& t, const std::vector<fs::path>& paths) {
    const FeatureExtractor fx(t.cfg.encoder);
    std::vector<TestItem> items;
    for (const auto& p : paths) items.push_back({p.string(), "", "", fx(p), 0, {}, false});
    py::list out;
    for (const auto& s : infer(t.model, t.bank, items)) out.append(py::make_tuple(to_array(s.anomaly, true), s.score));
    return out;
}

void save(Trained& t, const fs::path& dir) {
    fs::create_directories(dir);
    save_checkpoint(dir / "model.ckpt", make_checkpoint(t.cfg, t.model, t.state, t.log, t.bank));
    save_bank(dir / "bank.bin", t.bank);
}

Trained load(const fs::path& dir) {
    const Checkpoint ck = load_checkpoint(dir / "model.ckpt");
    Trained t{parse_config(ck.config_text), restore_model(ck), load_bank(dir / "bank.bin"), restore_state(ck), {}};
    check_compatible(ck, t.cfg, t.bank);
    t.log.step_loss = ck.step_loss;
    t.log.probe_loss = ck.probe_loss;
    return t;
}

}  // namespace

PYBIND11_MODULE(_snarm, m) {
    m.doc() = "Residual-matching anomaly detection with navigated state-space scanning";

    auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<InvalidArgument>(m, "InvalidArgument", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());

    py::class_<RunConfig>(m, "Config")
        .def(py::init<>())
        .def_static("parse", &parse_config, py::arg("text"))
        .def_static("load", [](const fs::path& p) { return load_config(p); }, py::arg("path"))
        .def("dump", &dump_config)
        .def("validate", &RunConfig::validate)
        .def_property_readonly("model_hash", &model_config_hash)
        .def_readwrite("seed", &RunConfig::seed)
        .def_readwrite("data_root", &RunConfig::data_root)
        .def_readwrite("out_dir", &RunConfig::out_dir)
        .def_readwrite("fewshot_k", &RunConfig::fewshot_k)
        .def_property(
            "regime", [](const RunConfig& c) { return regime_name(c.regime); },
            [](RunConfig& c, const std::string& s) { c.regime = parse_regime(s); })
        .def_property(
            "residual_mode", [](const RunConfig& c) { return c.matching.mode == ResidualMode::hybrid ? "hybrid" : "inter_only"; },
            [](RunConfig& c, const std::string& s) {
                if (s != "hybrid" && s != "inter_only") throw ConfigError("residual_mode must be hybrid or inter_only");
                c.matching.mode = s == "hybrid" ? ResidualMode::hybrid : ResidualMode::inter_only;
            })
        .def_property(
            "bank_size", [](const RunConfig& c) { return c.bank.size; }, [](RunConfig& c, std::size_t v) { c.bank.size = v; })
        .def_property(
            "cycles", [](const RunConfig& c) { return c.train.cycles; }, [](RunConfig& c, int v) { c.train.cycles = v; })
        .def_property(
            "cycle_length", [](const RunConfig& c) { return c.train.loss.cycle_length; },
            [](RunConfig& c, int v) { c.train.loss.cycle_length = v; })
        .def("__repr__", [](const RunConfig& c) { return "<snarm.Config regime=" + regime_name(c.regime) + ">"; });

    m.def(
        "generate_synthetic",
        [](const RunConfig& cfg, const fs::path& root) {
            return generate_synthetic_dataset(cfg.synth, cfg.seed, root).entries.size();
        },
        py::arg("config"), py::arg("root"), "Writes the procedural dataset; returns the number of images.");

    m.def(
        "extract_features",
        [](const RunConfig& cfg, const fs::path& image) { return to_array(FeatureExtractor(cfg.encoder)(image).grid, false); },
        py::arg("config"), py::arg("image"), "Fused patch features of one image as an (h, w, d) array.");

    m.def(
        "nearest",
        [](const Array& bank, const std::vector<double>& query) {
            const Neighbor n = snarm::nearest(query, bank_from_array(bank));
            return py::make_tuple(n.index, n.distance);
        },
        py::arg("bank"), py::arg("query"));
    m.def(
        "topk",
        [](const Array& bank, const std::vector<double>& query, std::size_t k) {
            std::vector<std::size_t> idx;
            std::vector<double> dist;
            for (const auto& n : topk_neighbors(query, bank_from_array(bank), k)) {
                idx.push_back(n.index);
                dist.push_back(n.distance);
            }
            return py::make_tuple(idx, dist);
        },
        py::arg("bank"), py::arg("query"), py::arg("k"));
    m.def(
        "coreset",
        [](const Array& points, std::size_t T, std::uint64_t seed) { return coreset_select(pool_from_array(points), T, seed).selected; },
        py::arg("points"), py::arg("size"), py::arg("seed") = 0, "Greedy k-center selection; returns row indices in pick order.");
    m.def(
        "covering_radius",
        [](const Array& points, const std::vector<std::uint32_t>& sel) { return snarm::covering_radius(pool_from_array(points), sel); },
        py::arg("points"), py::arg("selected"));

    m.def(
        "focal_loss",
        [](const Array& pred, const Array& target, double alpha, double gamma) {
            return snarm::focal_loss(to_grid(pred), to_grid(target), alpha, gamma);
        },
        py::arg("pred"), py::arg("target"), py::arg("alpha") = 0.25, py::arg("gamma") = 4.0);

    m.def(
        "auroc",
        [](const std::vector<double>& s, const std::vector<std::uint8_t>& y) { return snarm::auroc(s, y); },
        py::arg("scores"), py::arg("labels"));
    m.def(
        "average_precision",
        [](const std::vector<double>& s, const std::vector<std::uint8_t>& y) { return snarm::average_precision(s, y); },
        py::arg("scores"), py::arg("labels"));
    m.def(
        "pro",
        [](const std::vector<Array>& scores, const std::vector<Array>& masks, double fpr_limit, int connectivity) {
            std::vector<Map> s, k;
            for (const auto& a : scores) s.push_back(to_grid(a));
            for (const auto& a : masks) k.push_back(to_grid(a));
            return snarm::pro(s, k, ProOptions{fpr_limit, connectivity, 0});
        },
        py::arg("scores"), py::arg("masks"), py::arg("fpr_limit") = 0.3, py::arg("connectivity") = 8);

    py::class_<Trained>(m, "Trained")
        .def_readonly("config", &Trained::cfg)
        .def_property_readonly("bank_size", [](const Trained& t) { return t.bank.size(); })
        .def_property_readonly("step_loss", [](const Trained& t) { return t.log.step_loss; })
        .def_property_readonly("probe_loss", [](const Trained& t) { return t.log.probe_loss; })
        .def("infer", &infer_paths, py::arg("images"), "List of (anomaly map, image score) per image path.")
        .def("save", &save, py::arg("directory"))
        .def_static("load", &load, py::arg("directory"));

    m.def("train", &train, py::arg("config"), py::call_guard<py::gil_scoped_release>(),
          "Bank build and cyclic training on the config's dataset.");
    m.def(
        "run",
        [](const RunConfig& cfg) {
            const auto cats = dataset_features(cfg, true);
            std::string text;
            {
                py::gil_scoped_release release;
                text = report_to_json(run_regime(cfg, cats));
            }
            return py::module_::import("json").attr("loads")(text);
        },
        py::arg("config"), "Runs the configured regime end to end and returns the report as a dict.");
}
