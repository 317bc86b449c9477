#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "snarm/encoder.hpp"
#include "snarm/metrics.hpp"
#include "snarm/model.hpp"
#include "snarm/train.hpp"

namespace snarm {

struct BankConfig {
    std::size_t size = 10000;  // T
    bool per_category = false;
};

enum class Regime { single, multi, cross, fewshot };

std::string regime_name(Regime r);
Regime parse_regime(const std::string& s);

struct SynthSpec {
    int categories = 2;
    int train_per_category = 40;
    int test_per_category = 20;
    int image_size = 64;
    double anomaly_fraction = 0.5;
    double defect_min_area = 0.02;
    double defect_max_area = 0.10;
};

struct RunConfig {
    EncoderConfig encoder;
    BankConfig bank;
    MatchingConfig matching;
    SnmmConfig snmm;
    DecoderConfig decoder;
    TrainConfig train;
    ProOptions metrics;
    SynthSpec synth;

    Regime regime = Regime::multi;
    int fewshot_k = 4;
    std::uint64_t seed = 0;
    std::string data_root;
    std::string out_dir = "snarm_out";

    void validate() const;
};

/// `[section]` / `key = value` text; `#` and `;` start comments, string values may be quoted.
/// Unknown keys are rejected.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical text form with every key, in a fixed order.
std::string dump_config(const RunConfig& cfg);

/// FNV-1a over the canonical text of the sections that shape a trained model
/// (encoder, bank, matching, snmm, decoder).
std::uint64_t model_config_hash(const RunConfig& cfg);

}  // namespace snarm
