#pragma once

#include <cstdint>
#include <string>

#include "dt/corpus.hpp"
#include "dt/decode.hpp"
#include "dt/model.hpp"

namespace dt {

struct OptimizerConfig {
    double lr_factor = 2.0;
    int warmup_steps = 400;
    double grad_clip = 5.0;
    double beta1 = 0.9, beta2 = 0.98, eps = 1e-9;
};

struct TrainingConfig {
    int epochs = 30;
    int batch_size = 8;
    std::uint64_t seed = 1;
    double alpha = 0.3;            // CTC weight in Eq.-style hybrid loss
    double label_smoothing = 0.1;
    int num_spk = 2;               // diarization output rows
    int diar_epochs = 10;
};

// Flat key = value sections; every field has a default, unknown keys are
// rejected so silent typos cannot change an experiment.
struct ExperimentConfig {
    ModelConfig model;
    OptimizerConfig optim;
    corpus::CorpusConfig corpus;
    TrainingConfig training;
    BeamConfig decode;

    void validate() const;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

// canonical form: every key, fixed order; hash is FNV-1a 64 over these bytes
std::string serialize_config(const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::string config_hash_hex(const ExperimentConfig& cfg);

}  // namespace dt
