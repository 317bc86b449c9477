#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "snarm/config.hpp"
#include "snarm/model.hpp"
#include "snarm/train.hpp"

namespace snarm {

/// Everything a trained run leaves behind, minus the bank (stored next to it and pinned by digest).
struct Checkpoint {
    std::uint32_t version = 1;
    std::string config_text;
    std::uint64_t config_hash = 0;
    int feature_dim = 0;
    std::uint64_t bank_digest = 0;
    std::map<std::string, std::vector<double>> params;
    struct Slot {
        std::vector<double> m, v;
        std::uint64_t t = 0;
    };
    std::map<std::string, Slot> optimizer;
    std::uint64_t step = 0;
    std::string rng_sample, rng_synthesis, rng_jitter;  // textual engine state
    std::vector<double> step_loss;
    std::vector<std::pair<int, double>> probe_loss;
};

Checkpoint make_checkpoint(const RunConfig& cfg, Model& model, const TrainState& state, const TrainLog& log,
                           const PrototypeBank& bank);

/// Rebuilds the model described by the checkpoint's config and copies every parameter in.
/// Throws DataError on a missing or mis-sized parameter.
Model restore_model(const Checkpoint& ckpt);
TrainState restore_state(const Checkpoint& ckpt);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rejects a config whose model hash differs from the checkpoint's, or a bank other than the one trained with.
void check_compatible(const Checkpoint& ckpt, const RunConfig& cfg, const PrototypeBank& bank);

}  // namespace snarm
