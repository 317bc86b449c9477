#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "snarm/bank.hpp"
#include "snarm/checkpoint.hpp"
#include "snarm/config.hpp"
#include "snarm/dataset.hpp"
#include "snarm/error.hpp"
#include "snarm/image_io.hpp"
#include "snarm/pipeline.hpp"

namespace fs = std::filesystem;
using namespace snarm;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct Common {
    std::string config;
    std::string data;
    long long seed = -1;
};

RunConfig resolve(const Common& c) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
    if (!c.data.empty()) cfg.data_root = c.data;
    if (c.seed >= 0) cfg.seed = static_cast<std::uint64_t>(c.seed);
    cfg.validate();
    return cfg;
}

void require_data(const RunConfig& cfg) {
    if (cfg.data_root.empty()) throw ConfigError("no dataset: set run.data_root or pass --data");
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream os(p);
    if (!os) throw DataError("cannot write " + p.string());
    os << text;
}

std::vector<CategoryFeatures> dataset_features(const RunConfig& cfg, bool with_test) {
    require_data(cfg);
    const DatasetManifest m = load_manifest(cfg.data_root);
    for (const auto& w : m.warnings) log_line("warning: " + w);
    const FeatureExtractor fx(cfg.encoder);
    return extract_dataset(m, fx, with_test);
}

void save_trained(const fs::path& dir, const RunConfig& cfg, TrainedModel& tm, const PrototypeBank& bank) {
    fs::create_directories(dir);
    save_checkpoint(dir / "model.ckpt", make_checkpoint(cfg, tm.model, tm.state, tm.log, bank));
    save_bank(dir / "bank.bin", bank);
    write_text(dir / "config.toml", dump_config(cfg));
}

struct Loaded {
    RunConfig cfg;
    Model model;
    PrototypeBank bank;
};

Loaded load_trained(const fs::path& dir, const std::string& config_override, const std::string& bank_override) {
    const Checkpoint ckpt = load_checkpoint(dir / "model.ckpt");
    Loaded l{parse_config(ckpt.config_text), restore_model(ckpt), load_bank(bank_override.empty() ? dir / "bank.bin" : fs::path(bank_override))};
    const RunConfig check = config_override.empty() ? l.cfg : load_config(config_override);
    check_compatible(ckpt, check, l.bank);
    return l;
}

std::vector<std::pair<std::string, fs::path>> collect_images(const std::vector<std::string>& inputs) {
    std::vector<std::pair<std::string, fs::path>> out;
    for (const auto& in : inputs) {
        const fs::path p(in);
        if (fs::is_directory(p)) {
            std::vector<fs::path> files;
            for (const auto& e : fs::recursive_directory_iterator(p)) {
                const auto ext = e.path().extension();
                if (e.is_regular_file() && (ext == ".ppm" || ext == ".pgm")) files.push_back(e.path());
            }
            std::sort(files.begin(), files.end());
            for (const auto& f : files) out.emplace_back(fs::relative(f, p).generic_string(), f);
        } else if (fs::is_regular_file(p)) {
            out.emplace_back(p.filename().string(), p);
        } else {
            throw DataError("no such image or directory: " + in);
        }
    }
    if (out.empty()) throw DataError("no images to score");
    return out;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"Residual-matching anomaly detection with navigated state-space scanning"};
    app.require_subcommand(1);

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", common.config, "Config file");
        sub->add_option("--data", common.data, "Dataset root (overrides run.data_root)");
        sub->add_option("--seed", common.seed, "Root seed (overrides run.seed)");
    };

    std::string out;
    std::string bank_path;
    std::string ckpt_dir;
    std::string regime;
    std::vector<std::string> images;

    auto* synth = app.add_subcommand("synth", "Generate the procedural dataset");
    add_common(synth);
    synth->add_option("-o,--out", out, "Output root")->required();

    auto* bank = app.add_subcommand("bank", "Prototype bank operations");
    bank->require_subcommand(1);
    auto* bank_build = bank->add_subcommand("build", "Build the coreset bank from the training split");
    add_common(bank_build);
    bank_build->add_option("-o,--out", out, "Bank file")->required();

    auto* train = app.add_subcommand("train", "Train on the full training split (all categories pooled)");
    add_common(train);
    train->add_option("--bank", bank_path, "Existing bank file (built when omitted)");
    train->add_option("-o,--out", out, "Checkpoint directory")->required();

    auto* infer_cmd = app.add_subcommand("infer", "Score images with a trained checkpoint");
    infer_cmd->add_option("--checkpoint", ckpt_dir, "Checkpoint directory")->required();
    infer_cmd->add_option("-c,--config", common.config, "Config that must match the checkpoint");
    infer_cmd->add_option("--bank", bank_path, "Bank file (defaults to the checkpoint's)");
    infer_cmd->add_option("-o,--out", out, "Prediction directory")->required();
    infer_cmd->add_option("images", images, "Image files or directories")->required();

    auto* eval_cmd = app.add_subcommand("evaluate", "Score a dataset's test split and report metrics");
    std::string pred_dir;
    auto* ck_opt = eval_cmd->add_option("--checkpoint", ckpt_dir, "Checkpoint directory");
    auto* pred_opt = eval_cmd->add_option("--pred", pred_dir, "Prediction directory written by infer");
    ck_opt->excludes(pred_opt);
    eval_cmd->add_option("--data,--gt", common.data, "Dataset root (defaults to the checkpoint config's)");
    eval_cmd->add_option("-c,--config", common.config, "Config whose encoder brings masks onto the map size");
    eval_cmd->add_option("-o,--out", out, "Report file (JSON)")->required();

    auto* run = app.add_subcommand("run", "Full bank → train → infer → evaluate for a regime");
    add_common(run);
    run->add_option("--regime", regime, "single | multi | cross | fewshot");
    run->add_option("-o,--out", out, "Output directory (defaults to run.out_dir)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    if (synth->parsed()) {
        const RunConfig cfg = resolve(common);
        const auto m = generate_synthetic_dataset(cfg.synth, cfg.seed, out);
        std::cout << "wrote " << m.entries.size() << " images in " << m.categories.size() << " categories to " << out
                  << '\n';
    } else if (bank_build->parsed()) {
        const RunConfig cfg = resolve(common);
        const auto cats = dataset_features(cfg, false);
        const PrototypeBank b = build_bank(cfg, cats);
        save_bank(out, b);
        std::cout << "bank: " << b.size() << " prototypes, d=" << b.dim << " -> " << out << '\n';
    } else if (train->parsed()) {
        const RunConfig cfg = resolve(common);
        const auto cats = dataset_features(cfg, false);
        const PrototypeBank b = bank_path.empty() ? build_bank(cfg, cats) : load_bank(bank_path);
        const auto normals = pool_training(cats);
        if (b.dim != normals.front().dim()) throw DataError("bank dimension does not match the extracted features");
        const int K = cfg.train.loss.cycle_length;
        TrainedModel tm = train_model(cfg, b, normals, [&](int step, double loss) {
            if ((step + 1) % K == 0) log_line("step " + std::to_string(step + 1) + " loss " + std::to_string(loss));
        });
        save_trained(out, cfg, tm, b);
        std::cout << "checkpoint -> " << out << '\n';
    } else if (infer_cmd->parsed()) {
        const Loaded l = load_trained(ckpt_dir, common.config, bank_path);
        const FeatureExtractor fx(l.cfg.encoder);
        std::vector<TestItem> items;
        for (const auto& [id, path] : collect_images(images)) items.push_back({id, "", "", fx(path), 0, {}, false});
        const auto scored = snarm::infer(l.model, l.bank, items);
        write_predictions(out, scored);
        std::cout << "scored " << scored.size() << " images -> " << out << '\n';
    } else if (eval_cmd->parsed()) {
        RunReport rep;
        RunSummary s;
        s.label = "evaluate";
        if (!pred_dir.empty()) {
            if (common.data.empty()) throw ConfigError("evaluate --pred needs --gt <dataset root>");
            const auto m = load_manifest(common.data);
            std::optional<RunConfig> cfg;
            if (!common.config.empty()) cfg = load_config(common.config);
            std::optional<FeatureExtractor> fx;
            if (cfg) fx.emplace(cfg->encoder);
            const ProOptions opt = cfg ? cfg->metrics : ProOptions{};
            s.categories = evaluate_predictions(m, pred_dir, opt, fx ? &*fx : nullptr);
            if (cfg) rep.config_hash = model_config_hash(*cfg);
        } else {
            if (ckpt_dir.empty()) throw ConfigError("evaluate needs --checkpoint or --pred");
            Loaded l = load_trained(ckpt_dir, "", "");
            if (!common.data.empty()) l.cfg.data_root = common.data;
            const auto cats = dataset_features(l.cfg, true);
            rep.regime = l.cfg.regime;
            rep.config_hash = model_config_hash(l.cfg);
            for (const auto& c : cats) {
                const auto scored = snarm::infer(l.model, l.bank, c.test);
                s.categories.push_back(evaluate_category(c.name, c.test, scored, l.cfg.metrics));
            }
        }
        rep.runs.push_back(std::move(s));
        summarize_overall(rep);
        write_text(out, report_to_json(rep));
        std::cout << report_to_json(rep) << '\n';
    } else if (run->parsed()) {
        RunConfig cfg = resolve(common);
        if (!regime.empty()) cfg.regime = parse_regime(regime);
        const fs::path dir = out.empty() ? fs::path(cfg.out_dir) : fs::path(out);
        const auto cats = dataset_features(cfg, true);
        RunHooks hooks;
        hooks.log = log_line;
        hooks.on_model = [&](const RunSummary& s, const TrainedModel& tm, const PrototypeBank& b,
                             std::span<const ScoredItem> scored) {
            std::string name = s.label;
            std::replace(name.begin(), name.end(), ':', '_');
            TrainedModel copy = tm;
            save_trained(dir / name, cfg, copy, b);
            write_predictions(dir / name / "predictions", scored);
        };
        const RunReport rep = run_regime(cfg, cats, hooks);
        write_text(dir / "report.json", report_to_json(rep));
        std::cout << report_to_json(rep) << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const InvalidArgument& e) {
        std::cerr << "invalid argument: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
