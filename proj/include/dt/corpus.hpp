#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dt/labels.hpp"
#include "dt/model.hpp"
#include "dt/rng.hpp"

namespace dt::corpus {

struct CorpusConfig {
    std::uint64_t seed = 1234;
    int num_speakers = 10;
    int d_feat = 40;
    int n_content = 20;  // content vocabulary; model ids first_content_id..first_content_id+n-1
    double frame_shift_s = 0.01;
    int min_tokens = 5, max_tokens = 15;
    int min_dur = 3, max_dur = 8;  // frames per token
    double jitter_sigma = 0.1;
    double rms_db_lo = -33.0, rms_db_hi = -25.0;
    double snr_db_lo = 5.0, snr_db_hi = 15.0;  // scenario 1.0
    int gap_lo = 10, gap_hi = 50;              // scenario 3.0 silence frames
    double noise_rho = 0.7;                    // low-pass pole for scenario 1.0 noise
    int asr_train = 2000, asr_dev = 100, asr_test = 200;
    int mix_train = 300, mix_dev = 50, mix_test = 100;

    int vocab_size() const { return ModelConfig::first_content_id + n_content; }
    void validate() const;
};

struct SpeakerProfile {
    int speaker_id = -1;
    std::vector<double> bias;  // b
    std::vector<double> gain;  // g, entries in [0.7, 1.3]
    std::uint64_t seed = 0;
};

struct UtteranceSpec {
    int speaker_id = -1;
    std::vector<int> tokens;     // model-space content ids
    std::vector<int> durations;  // frames per token
    std::uint64_t jitter_seed = 0;
    double target_rms_db = -29.0;
};

struct Utterance {
    FeatureSequence<float> features;
    std::vector<int> tokens;
    int speaker_id = -1;
};

// token templates m_k, one row per content token
std::vector<std::vector<double>> gen_token_templates(std::uint64_t corpus_seed, int n_content,
                                                     int d_feat);
SpeakerProfile gen_speaker_profile(std::uint64_t corpus_seed, int speaker_id, int d_feat);
UtteranceSpec sample_utterance_spec(const CorpusConfig& cfg, Rng& rng, int speaker_id,
                                    std::uint64_t jitter_seed);
// x_t = g ⊙ (m_{v(t)} + ε_t) + b, globally scaled to the target RMS level
Utterance gen_utterance(const UtteranceSpec& spec, const SpeakerProfile& profile,
                        const std::vector<std::vector<double>>& templates,
                        const CorpusConfig& cfg);

enum class Scenario { noise_single, concat_nosilence, concat_silence, full_overlap };
const char* scenario_name(Scenario s);  // "1.0".."4.0"

struct Mixture {
    FeatureSequence<float> features;
    DiarizationLabels labels;
    std::vector<int> speaker_ids;                          // one per label row
    std::vector<std::vector<int>> transcripts;             // one per label row
    std::vector<std::vector<std::pair<int, int>>> segments;  // inclusive frame ranges per row
};

// sources: 1 utterance for noise_single, 2 otherwise; rng drives SNR/gaps
Mixture mix_mixture(Scenario scenario, const std::vector<Utterance>& sources,
                    const CorpusConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// dataset on disk: manifest.txt + feats/*.dtfs
// ---------------------------------------------------------------------------

struct ManifestRecord {
    std::string id;
    std::string path;  // relative to the dataset directory
    int frames = 0;
    std::vector<int> speaker_ids;
    std::vector<std::vector<int>> transcripts;
    std::vector<std::vector<std::pair<int, int>>> segments;

    DiarizationLabels labels(double frame_shift_s) const;
};

struct DatasetManifest {
    std::uint64_t seed = 0;
    int d_feat = 0;
    double frame_shift_s = 0.01;
    int vocab_size = 0;
    std::vector<ManifestRecord> records;
};

void write_features(const std::string& path, const FeatureSequence<float>& features);
FeatureSequence<float> read_features(const std::string& path);

void write_manifest(const std::string& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::string& path);

struct LoadedDataset {
    DatasetManifest manifest;
    std::vector<FeatureSequence<float>> features;  // aligned with manifest.records
};
LoadedDataset read_dataset(const std::string& dir);

// Writes the full corpus: asr/{train,dev,test} single-speaker sets plus
// mix1.0..mix4.0/{train,dev,test} mixture sets.
void generate_corpus(const CorpusConfig& cfg, const std::string& out_dir);

}  // namespace dt::corpus
