#include "snarm/checkpoint.hpp"

#include <cereal/archives/portable_binary.hpp>
#include <cereal/types/map.hpp>
#include <cereal/types/string.hpp>
#include <cereal/types/utility.hpp>
#include <cereal/types/vector.hpp>
#include <algorithm>
#include <fstream>
#include <sstream>

#include "snarm/error.hpp"

namespace snarm {

template <class Archive>
void serialize(Archive& ar, Checkpoint::Slot& s) {
    ar(s.m, s.v, s.t);
}

template <class Archive>
void serialize(Archive& ar, Checkpoint& c) {
    ar(c.version, c.config_text, c.config_hash, c.feature_dim, c.bank_digest, c.params, c.optimizer, c.step,
       c.rng_sample, c.rng_synthesis, c.rng_jitter, c.step_loss, c.probe_loss);
}

namespace {

constexpr char kMagic[8] = {'S', 'N', 'R', 'M', 'C', 'K', 'P', 'T'};

std::string engine_text(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

Rng engine_from(const std::string& text) {
    Rng rng;
    if (text.empty()) return rng;
    std::istringstream is(text);
    is >> rng;
    if (!is) throw DataError("checkpoint: corrupt RNG state");
    return rng;
}

}  // namespace

Checkpoint make_checkpoint(const RunConfig& cfg, Model& model, const TrainState& state, const TrainLog& log,
                           const PrototypeBank& bank) {
    Checkpoint c;
    c.config_text = dump_config(cfg);
    c.config_hash = model_config_hash(cfg);
    c.feature_dim = model.feature_dim;
    c.bank_digest = bank.digest();
    model.visit([&](Param& p) { c.params[p.name] = p.value; });
    for (const auto& [name, slot] : state.optimizer.state()) c.optimizer[name] = {slot.m, slot.v, slot.t};
    c.step = state.step;
    c.rng_sample = engine_text(state.sample_rng);
    c.rng_synthesis = engine_text(state.synthesis_rng);
    c.rng_jitter = engine_text(state.jitter_rng);
    c.step_loss = log.step_loss;
    c.probe_loss = log.probe_loss;
    return c;
}

Model restore_model(const Checkpoint& ckpt) {
    const RunConfig cfg = parse_config(ckpt.config_text);
    if (model_config_hash(cfg) != ckpt.config_hash) throw DataError("checkpoint: embedded config does not match its hash");
    Model model(ckpt.feature_dim, cfg.matching, cfg.snmm, cfg.decoder);
    std::size_t seen = 0;
    model.visit([&](Param& p) {
        const auto it = ckpt.params.find(p.name);
        if (it == ckpt.params.end()) throw DataError("checkpoint: missing parameter " + p.name);
        if (it->second.size() != p.size()) throw DataError("checkpoint: parameter " + p.name + " has the wrong size");
        p.value = it->second;
        ++seen;
    });
    if (seen != ckpt.params.size()) throw DataError("checkpoint: holds parameters the model does not know");
    return model;
}

TrainState restore_state(const Checkpoint& ckpt) {
    const RunConfig cfg = parse_config(ckpt.config_text);
    TrainState st{Adam(cfg.train.loss.lr, cfg.train.loss.weight_decay), ckpt.step, engine_from(ckpt.rng_sample),
                  engine_from(ckpt.rng_synthesis), engine_from(ckpt.rng_jitter)};
    for (const auto& [name, slot] : ckpt.optimizer) st.optimizer.state()[name] = {slot.m, slot.v, slot.t};
    return st;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint " + path.string());
    os.write(kMagic, sizeof kMagic);
    cereal::PortableBinaryOutputArchive ar(os);
    ar(ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint " + path.string());
    char magic[sizeof kMagic] = {};
    if (!is.read(magic, sizeof magic) || !std::equal(magic, magic + sizeof magic, kMagic)) {
        throw DataError("not a checkpoint file: " + path.string());
    }
    Checkpoint c;
    try {
        cereal::PortableBinaryInputArchive ar(is);
        ar(c);
    } catch (const cereal::Exception& e) {
        throw DataError("corrupt checkpoint " + path.string() + ": " + e.what());
    }
    if (c.version != 1) throw DataError("unsupported checkpoint version in " + path.string());
    return c;
}

void check_compatible(const Checkpoint& ckpt, const RunConfig& cfg, const PrototypeBank& bank) {
    if (model_config_hash(cfg) != ckpt.config_hash) {
        throw ConfigError("config does not match the checkpoint (model config hash differs)");
    }
    if (bank.dim != ckpt.feature_dim) throw DataError("bank feature dimension differs from the checkpoint's");
    if (bank.digest() != ckpt.bank_digest) throw DataError("bank is not the one this checkpoint was trained with");
}

}  // namespace snarm
