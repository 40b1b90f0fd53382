#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dt/config.hpp"
#include "dt/metrics.hpp"

namespace dt {

struct EpochLog {
    int epoch = 0;
    double l_ctc = 0, l_attn = 0, l_s = 0, total = 0;
    double dev_total = 0;
    double lr = 0;
    int ctc_skipped = 0;  // utterances skipped this epoch for infeasible CTC
};

struct AsrTrainResult {
    std::vector<EpochLog> history;
    int best_epoch = 0;
    double best_dev = 0;
    int ctc_skipped_total = 0;
    std::string best_checkpoint;  // lowest dev loss
    std::string last_checkpoint;  // end of final epoch, resume anchor
};

// Hybrid CTC/attention training on the single-speaker split of data_dir.
// Writes best.dtck, last.dtck, moments.dtck, state.txt, train_log.jsonl and
// report.json into out_dir. resume=true continues from state.txt and
// reproduces the uninterrupted trajectory exactly.
AsrTrainResult train_asr(const ExperimentConfig& cfg, const std::string& data_dir,
                         const std::string& out_dir, bool resume = false,
                         std::ostream* log = nullptr);

struct DiarEpochLog {
    int epoch = 0;
    double pit_loss = 0;
    double lr = 0;
};

struct DiarTrainResult {
    std::vector<DiarEpochLog> history;
    std::map<int, double> train_der;  // epoch → DER, at the report epochs
    std::map<int, double> dev_der;
    std::string checkpoint;  // encoder + diarization head
};

// Loads an ASR checkpoint, freezes everything except the disentangled
// layer(s), and trains a per-frame linear speaker decoder on the topmost
// disentangled layer's speaker track with the permutation-free BCE loss.
// DER is reported on train and dev at epoch 5 and the final epoch.
DiarTrainResult train_diar(const ExperimentConfig& cfg, const std::string& asr_checkpoint,
                           const std::string& mix_dir, const std::string& out_dir,
                           std::ostream* log = nullptr);

struct AsrEvalResult {
    WerBreakdown totals;  // corpus-level counts over the whole split
    int n_utterances = 0;
    std::string json;
};
AsrEvalResult eval_asr(const ExperimentConfig& cfg, const std::string& checkpoint,
                       const std::string& split_dir);

struct DiarEvalResult {
    DerBreakdown totals;  // component seconds summed over the split
    int n_mixtures = 0;
    std::string json;
};
DiarEvalResult eval_diar(const ExperimentConfig& cfg, const std::string& checkpoint,
                         const std::string& split_dir);

struct ProbeEntry {
    int layer = 0, head = 0;
    double smoothness = 0;
    bool has_fisher = false;  // false on single-speaker splits: reported null
    double fisher = 0;
    long n_frames = 0;
};

// Runs the encoder over a single-speaker split and scores every requested
// (layer, head) track. pca_out, when non-empty, additionally writes per-frame
// 2D projections with speaker labels as JSON lines.
std::vector<ProbeEntry> probe_heads(const ExperimentConfig& cfg, const std::string& checkpoint,
                                    const std::string& split_dir, const std::vector<int>& layers,
                                    const std::vector<int>& heads,
                                    const std::string& pca_out = "");
std::string probe_jsonl(const std::vector<ProbeEntry>& entries);

// Command wrappers: exceptions become exit codes (2 usage/config/data,
// 3 numeric failure) with a diagnostic on err.
int cmd_gen_corpus(const ExperimentConfig& cfg, const std::string& out_dir, bool force,
                   std::ostream& err);
int cmd_train_asr(const ExperimentConfig& cfg, const std::string& data_dir,
                  const std::string& out_dir, bool resume, std::ostream& log, std::ostream& err);
int cmd_train_diar(const ExperimentConfig& cfg, const std::string& asr_checkpoint,
                   const std::string& mix_dir, const std::string& out_dir, std::ostream& log,
                   std::ostream& err);
int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint,
             const std::string& split_dir, const std::string& task, std::ostream& out,
             std::ostream& err);
int cmd_probe(const ExperimentConfig& cfg, const std::string& checkpoint,
              const std::string& split_dir, const std::vector<int>& layers,
              const std::vector<int>& heads, const std::string& pca_out, std::ostream& out,
              std::ostream& err);

}  // namespace dt
