#include "snarm/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "snarm/error.hpp"
#include "snarm/rng.hpp"

namespace snarm {

namespace pt = boost::property_tree;

std::string regime_name(Regime r) {
    switch (r) {
        case Regime::single: return "single";
        case Regime::multi: return "multi";
        case Regime::cross: return "cross";
        case Regime::fewshot: return "fewshot";
    }
    return "?";
}

Regime parse_regime(const std::string& s) {
    if (s == "single") return Regime::single;
    if (s == "multi") return Regime::multi;
    if (s == "cross") return Regime::cross;
    if (s == "fewshot") return Regime::fewshot;
    throw ConfigError("unknown regime '" + s + "' (want single, multi, cross or fewshot)");
}

namespace {

template <class T>
T convert(const std::string& key, const std::string& raw) {
    std::istringstream is(raw);
    T v{};
    if constexpr (std::is_same_v<T, bool>) {
        if (raw == "true" || raw == "1") return true;
        if (raw == "false" || raw == "0") return false;
        throw ConfigError("config key " + key + ": expected true/false, got '" + raw + "'");
    } else if constexpr (std::is_same_v<T, std::string>) {
        return raw;
    } else {
        is >> v;
        if (!is || !(is >> std::ws).eof()) throw ConfigError("config key " + key + ": cannot parse '" + raw + "'");
        return v;
    }
}

template <class T>
std::string show(const T& v) {
    if constexpr (std::is_same_v<T, bool>) {
        return v ? "true" : "false";
    } else if constexpr (std::is_same_v<T, std::string>) {
        return "\"" + v + "\"";
    } else {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    }
}

struct Key {
    std::string section, name;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
};

template <class T>
Key bind_key(std::string section, std::string name, T& ref) {
    const std::string full = section + "." + name;
    return {std::move(section), std::move(name), [&ref, full](const std::string& s) { ref = convert<T>(full, s); },
            [&ref] { return show(ref); }};
}

template <class E>
Key bind_enum(std::string section, std::string name, E& ref, std::vector<std::pair<std::string, E>> names) {
    const std::string full = section + "." + name;
    return {std::move(section), std::move(name),
            [&ref, names, full](const std::string& s) {
                for (const auto& [n, e] : names) {
                    if (n == s) {
                        ref = e;
                        return;
                    }
                }
                throw ConfigError("config key " + full + ": unknown value '" + s + "'");
            },
            [&ref, names] {
                for (const auto& [n, e] : names)
                    if (e == ref) return "\"" + n + "\"";
                return std::string("?");
            }};
}

std::vector<Key> keys(RunConfig& c) {
    return {
        bind_key("encoder", "backend", c.encoder.backend),
        bind_key("encoder", "layers", c.encoder.layers),
        bind_key("encoder", "channels", c.encoder.channels),
        bind_key("encoder", "resize", c.encoder.resize),
        bind_key("encoder", "crop", c.encoder.crop),
        bind_key("encoder", "patch_size", c.encoder.patch_size),
        bind_key("encoder", "pool", c.encoder.pool),
        bind_key("encoder", "seed", c.encoder.seed),
        bind_key("bank", "size", c.bank.size),
        bind_key("bank", "per_category", c.bank.per_category),
        bind_key("matching", "theta", c.matching.theta),
        bind_key("matching", "topk", c.matching.topk),
        bind_key("matching", "topk_train", c.matching.topk_train),
        bind_key("matching", "topk_infer", c.matching.topk_infer),
        bind_key("matching", "trusted_percent", c.matching.trusted_percent),
        bind_key("matching", "intra_topk", c.matching.intra_topk),
        bind_enum("matching", "mode", c.matching.mode,
                  {{"hybrid", ResidualMode::hybrid}, {"inter_only", ResidualMode::inter_only}}),
        bind_key("snmm", "dim", c.snmm.dim),
        bind_key("snmm", "state_dim", c.snmm.state_dim),
        bind_key("snmm", "blocks", c.snmm.blocks),
        bind_key("snmm", "keep_ratio", c.snmm.keep_ratio),
        bind_enum("decoder", "score", c.decoder.reduction,
                  {{"top_q_mean", ScoreReduction::top_q_mean}, {"max", ScoreReduction::max}}),
        bind_key("decoder", "score_q", c.decoder.score_q),
        bind_key("train", "alpha_nav", c.train.loss.alpha_nav),
        bind_key("train", "gamma_nav", c.train.loss.gamma_nav),
        bind_key("train", "alpha_branch", c.train.loss.alpha_branch),
        bind_key("train", "gamma_branch", c.train.loss.gamma_branch),
        bind_key("train", "lr", c.train.loss.lr),
        bind_key("train", "weight_decay", c.train.loss.weight_decay),
        bind_key("train", "cycle_length", c.train.loss.cycle_length),
        bind_key("train", "jitter_lambda", c.train.loss.jitter_lambda),
        bind_key("train", "cycles", c.train.cycles),
        bind_key("train", "batch", c.train.batch),
        bind_key("train", "anomaly_prob", c.train.anomaly_prob),
        bind_key("train", "jitter_prob", c.train.jitter_prob),
        bind_key("train", "update_snmm", c.train.update_snmm),
        bind_key("train", "probe_samples", c.train.probe_samples),
        bind_key("train", "synth_min_area", c.train.synthesis.min_area),
        bind_key("train", "synth_max_area", c.train.synthesis.max_area),
        bind_key("train", "synth_noise_min", c.train.synthesis.noise_min),
        bind_key("train", "synth_noise_max", c.train.synthesis.noise_max),
        bind_key("metrics", "pro_fpr_limit", c.metrics.fpr_limit),
        bind_key("metrics", "connectivity", c.metrics.connectivity),
        bind_key("metrics", "max_thresholds", c.metrics.max_thresholds),
        bind_key("synth", "categories", c.synth.categories),
        bind_key("synth", "train_per_category", c.synth.train_per_category),
        bind_key("synth", "test_per_category", c.synth.test_per_category),
        bind_key("synth", "image_size", c.synth.image_size),
        bind_key("synth", "anomaly_fraction", c.synth.anomaly_fraction),
        bind_key("synth", "defect_min_area", c.synth.defect_min_area),
        bind_key("synth", "defect_max_area", c.synth.defect_max_area),
        bind_enum("run", "regime", c.regime,
                  {{"single", Regime::single}, {"multi", Regime::multi}, {"cross", Regime::cross},
                   {"fewshot", Regime::fewshot}}),
        bind_key("run", "fewshot_k", c.fewshot_k),
        bind_key("run", "seed", c.seed),
        bind_key("run", "data_root", c.data_root),
        bind_key("run", "out_dir", c.out_dir),
    };
}

std::string strip_comments(const std::string& text) {
    std::istringstream in(text);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line)) {
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') quoted = !quoted;
            if (!quoted && (line[i] == '#' || line[i] == ';')) {
                line.resize(i);
                break;
            }
        }
        out << line << '\n';
    }
    return out.str();
}

std::string unquote(std::string s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

}  // namespace

void RunConfig::validate() const {
    if (!BackendRegistry::instance().contains(encoder.backend)) {
        throw ConfigError("encoder.backend: unknown backend '" + encoder.backend + "'");
    }
    if (encoder.layers < 2 || encoder.layers % 2) throw ConfigError("encoder.layers must be an even number >= 2");
    if (encoder.channels < 1 || encoder.patch_size < 1) throw ConfigError("encoder.channels/patch_size must be >= 1");
    if (encoder.crop < encoder.patch_size || encoder.resize < encoder.crop) {
        throw ConfigError("encoder: need patch_size <= crop <= resize");
    }
    if (encoder.pool < 1 || encoder.pool % 2 == 0) throw ConfigError("encoder.pool must be odd and >= 1");
    if (bank.size < 1) throw ConfigError("bank.size must be >= 1");
    if (matching.theta != 1 && matching.theta != 2) throw ConfigError("matching.theta must be 1 or 2");
    if (matching.topk < 1 || matching.intra_topk < 1) throw ConfigError("matching.topk/intra_topk must be >= 1");
    if (!(matching.trusted_percent > 0 && matching.trusted_percent <= 100)) {
        throw ConfigError("matching.trusted_percent must be in (0, 100]");
    }
    if (snmm.blocks != 2) throw ConfigError("snmm.blocks is fixed at 2");
    if (snmm.dim < 1 || snmm.state_dim < 1) throw ConfigError("snmm.dim/state_dim must be >= 1");
    if (!(snmm.keep_ratio > 0 && snmm.keep_ratio <= 1)) throw ConfigError("snmm.keep_ratio must be in (0, 1]");
    if (!(decoder.score_q > 0 && decoder.score_q <= 1)) throw ConfigError("decoder.score_q must be in (0, 1]");
    train.loss.validate();
    if (train.cycles < 0 || train.batch < 1 || train.probe_samples < 0) {
        throw ConfigError("train.cycles >= 0, train.batch >= 1, train.probe_samples >= 0 required");
    }
    if (!(train.synthesis.min_area > 0 && train.synthesis.min_area <= train.synthesis.max_area &&
          train.synthesis.max_area <= 1)) {
        throw ConfigError("train.synth_min_area/synth_max_area must satisfy 0 < min <= max <= 1");
    }
    if (!(metrics.fpr_limit > 0 && metrics.fpr_limit <= 1)) throw ConfigError("metrics.pro_fpr_limit must be in (0, 1]");
    if (metrics.connectivity != 4 && metrics.connectivity != 8) throw ConfigError("metrics.connectivity must be 4 or 8");
    if (synth.categories < 1 || synth.train_per_category < 1 || synth.test_per_category < 0 || synth.image_size < 8) {
        throw ConfigError("synth: need >= 1 category, >= 1 train image and image_size >= 8");
    }
    if (!(synth.defect_min_area > 0 && synth.defect_min_area <= synth.defect_max_area && synth.defect_max_area < 1)) {
        throw ConfigError("synth.defect_min_area/defect_max_area must satisfy 0 < min <= max < 1");
    }
    if (regime == Regime::fewshot && fewshot_k < 1) throw ConfigError("run.fewshot_k must be >= 1");
}

RunConfig parse_config(const std::string& text) {
    pt::ptree tree;
    std::istringstream is(strip_comments(text));
    try {
        pt::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config syntax: ") + e.what());
    }
    RunConfig cfg;
    std::map<std::string, Key> index;
    for (auto& k : keys(cfg)) index.emplace(k.section + "." + k.name, std::move(k));
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw ConfigError("config: key '" + section + "' outside any section");
        for (const auto& [name, value] : body) {
            const auto it = index.find(section + "." + name);
            if (it == index.end()) throw ConfigError("config: unknown key " + section + "." + name);
            it->second.set(unquote(value.get_value<std::string>()));
        }
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

std::string dump_config(const RunConfig& cfg) {
    RunConfig copy = cfg;
    std::ostringstream os;
    std::string section;
    for (const auto& k : keys(copy)) {
        if (k.section != section) {
            if (!section.empty()) os << '\n';
            section = k.section;
            os << '[' << section << "]\n";
        }
        os << k.name << " = " << k.get() << '\n';
    }
    return os.str();
}

std::uint64_t model_config_hash(const RunConfig& cfg) {
    RunConfig copy = cfg;
    std::string canon;
    for (const auto& k : keys(copy)) {
        if (k.section == "encoder" || k.section == "bank" || k.section == "matching" || k.section == "snmm" ||
            k.section == "decoder") {
            canon += k.section + "." + k.name + "=" + k.get() + "\n";
        }
    }
    return fnv1a64(canon);
}

}  // namespace snarm
