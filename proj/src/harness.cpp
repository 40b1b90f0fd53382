#include "dt/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "dt/checkpoint.hpp"
#include "dt/corpus.hpp"
#include "dt/decode.hpp"
#include "dt/objectives.hpp"
#include "dt/ops.hpp"
#include "dt/optim.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace dt {

namespace {

// A CTC alignment exists iff the frame count covers the minimum lattice path:
// one emission per label plus a forced blank between adjacent repeats.
bool ctc_fits(int T, const std::vector<int>& target) {
    int need = static_cast<int>(target.size());
    for (size_t u = 1; u < target.size(); ++u)
        if (target[u] == target[u - 1]) ++need;
    return T >= need;
}

void check_dataset_compat(const corpus::DatasetManifest& m, const ExperimentConfig& cfg,
                          const std::string& where) {
    if (m.d_feat != cfg.model.d_feat)
        throw ConfigError(where + ": dataset d_feat " + std::to_string(m.d_feat) +
                          " != model d_feat " + std::to_string(cfg.model.d_feat));
    if (m.vocab_size != cfg.model.vocab_size)
        throw ConfigError(where + ": dataset vocab " + std::to_string(m.vocab_size) +
                          " != model vocab " + std::to_string(cfg.model.vocab_size));
}

corpus::LoadedDataset load_split(const std::string& dir, const ExperimentConfig& cfg,
                                 const std::string& where, bool allow_empty = false) {
    corpus::LoadedDataset ds = corpus::read_dataset(dir);
    check_dataset_compat(ds.manifest, cfg, where);
    if (!allow_empty && ds.manifest.records.empty())
        throw ContractError(where + ": empty split " + dir);
    return ds;
}

const std::vector<int>& single_speaker_tokens(const corpus::ManifestRecord& r,
                                              const std::string& where) {
    if (r.speaker_ids.size() != 1)
        throw ContractError(where + ": record " + r.id + " has " +
                            std::to_string(r.speaker_ids.size()) +
                            " speakers; expected a single-speaker split");
    return r.transcripts[0];
}

std::vector<std::string> trainable_names(const ParamStore<float>& p) {
    std::vector<std::string> out;
    for (const auto& n : p.names())
        if (p.get(n).requires_grad()) out.push_back(n);
    return out;
}

// ---- trainer sidecar state (epoch counter, Adam moments) -------------------

struct TrainerMeta {
    int epoch = 0;  // last completed epoch
    std::int64_t step = 0;
    int best_epoch = 0;
    double best_dev = std::numeric_limits<double>::infinity();
    int ctc_skipped = 0;
};

void save_meta(const std::string& path, const TrainerMeta& m) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write trainer state " + path);
    char dev[64];
    std::snprintf(dev, sizeof dev, "%.17g", m.best_dev);
    os << "dtstate v1\n"
       << "epoch " << m.epoch << "\n"
       << "step " << m.step << "\n"
       << "best_epoch " << m.best_epoch << "\n"
       << "best_dev " << dev << "\n"
       << "ctc_skipped " << m.ctc_skipped << "\n";
    if (!os.flush()) throw IoError("short write on trainer state " + path);
}

TrainerMeta load_meta(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open trainer state " + path);
    std::string header;
    std::getline(is, header);
    if (header != "dtstate v1") throw FormatError(path + ": not a trainer state file");
    TrainerMeta m;
    std::string key;
    while (is >> key) {
        if (key == "epoch") is >> m.epoch;
        else if (key == "step") is >> m.step;
        else if (key == "best_epoch") is >> m.best_epoch;
        else if (key == "best_dev") is >> m.best_dev;
        else if (key == "ctc_skipped") is >> m.ctc_skipped;
        else throw FormatError(path + ": unknown state key " + key);
        if (!is) throw FormatError(path + ": bad value for " + key);
    }
    return m;
}

void save_moments(const std::string& path, const std::vector<std::string>& names,
                  const AdamState<float>& st) {
    std::vector<std::pair<std::string, Tensor<float>>> out;
    for (size_t i = 0; i < names.size(); ++i) {
        out.emplace_back("m." + names[i],
                         Tensor<float>::from({static_cast<int>(st.m[i].size())}, st.m[i]));
        out.emplace_back("v." + names[i],
                         Tensor<float>::from({static_cast<int>(st.v[i].size())}, st.v[i]));
    }
    save_tensors(path, out);
}

void load_moments(const std::string& path, const std::vector<std::string>& names,
                  AdamState<float>& st) {
    auto pairs = load_tensors(path);
    if (pairs.size() != 2 * names.size())
        throw ConfigError(path + ": moment count does not match the parameter group");
    std::map<std::string, Tensor<float>> by_name;
    for (auto& [n, t] : pairs) by_name.emplace(n, t);
    for (size_t i = 0; i < names.size(); ++i) {
        for (const char* kind : {"m.", "v."}) {
            auto it = by_name.find(kind + names[i]);
            if (it == by_name.end())
                throw ConfigError(path + ": missing moments for " + names[i]);
            auto src = it->second.values();
            auto& dst = (kind[0] == 'm') ? st.m[i] : st.v[i];
            if (src.size() != dst.size())
                throw ConfigError(path + ": moment size mismatch for " + names[i]);
            std::copy(src.begin(), src.end(), dst.begin());
        }
    }
}

// ---- checkpoint application with task detection ----------------------------

// Copies matching tensors into params and returns the ones the model does not
// own (e.g. a diarization head). Missing or misshapen parameters are config
// errors: the checkpoint does not belong to this model.
std::vector<std::pair<std::string, Tensor<float>>> apply_checkpoint(
    const std::string& path, ParamStore<float>& params) {
    auto pairs = load_tensors(path);
    std::set<std::string> seen;
    std::vector<std::pair<std::string, Tensor<float>>> leftover;
    for (auto& [name, t] : pairs) {
        if (!params.has(name)) {
            leftover.emplace_back(name, t);
            continue;
        }
        Tensor<float>& dst = params.get(name);
        if (t.shape() != dst.shape())
            throw ConfigError(path + ": tensor " + name + " has shape " + shape_str(t.shape()) +
                              ", model expects " + shape_str(dst.shape()));
        auto src = t.values();
        std::copy(src.begin(), src.end(), dst.values().begin());
        seen.insert(name);
    }
    for (const auto& n : params.names())
        if (!seen.count(n)) throw ConfigError(path + ": checkpoint is missing parameter " + n);
    return leftover;
}

ParamStore<float> make_diar_head(const ExperimentConfig& cfg) {
    ParamStore<float> head;
    Rng rng(mix64(cfg.training.seed, 0x64696172ull));  // "diar"
    head.add("diar.w", detail::glorot<float>(rng, cfg.training.num_spk, cfg.model.head_dim));
    head.add("diar.b", Tensor<float>::zeros({cfg.training.num_spk}));
    for (size_t i = 0; i < head.size(); ++i) head.at(i).set_requires_grad(true);
    return head;
}

int topmost_disentangled(const ModelConfig& m) {
    if (m.disentangled_layers.empty())
        throw ConfigError("diarization requires at least one disentangled layer");
    return *std::max_element(m.disentangled_layers.begin(), m.disentangled_layers.end());
}

// Per-frame speaker logits from the topmost disentangled layer's track.
template <class Real>
Tensor<Real> diar_logits(const EncoderOutput<Real>& enc, int layer, const ParamStore<Real>& head) {
    const Tensor<Real>& s = enc.speaker_tracks.at(layer);
    Tensor<Real> proj = add_rowwise(matmul_nt(s, head.get("diar.w")), head.get("diar.b"));
    return transpose(proj);  // num_spk×T, the orientation pit_bce_loss expects
}

DiarizationLabels threshold_activity(const Tensor<float>& logits, double frame_shift_s) {
    const int S = logits.dim(0), T = logits.dim(1);
    auto v = logits.values();
    DiarizationLabels out;
    out.frame_shift_s = frame_shift_s;
    out.activity.assign(static_cast<size_t>(S), std::vector<std::uint8_t>(static_cast<size_t>(T), 0));
    for (int i = 0; i < S; ++i)
        for (int t = 0; t < T; ++t)
            out.activity[static_cast<size_t>(i)][static_cast<size_t>(t)] =
                v[static_cast<size_t>(i) * T + t] > 0 ? 1 : 0;  // sigmoid > 0.5
    return out;
}

DerBreakdown split_der(const corpus::LoadedDataset& ds, const ExperimentConfig& cfg,
                       const ParamStore<float>& params, const ParamStore<float>& head, int layer) {
    DerBreakdown acc;
    for (size_t i = 0; i < ds.manifest.records.size(); ++i) {
        EncoderOutput<float> enc = encoder_forward(ds.features[i], cfg.model, params);
        DiarizationLabels hyp =
            threshold_activity(diar_logits(enc, layer, head), ds.features[i].frame_shift_s);
        DiarizationLabels ref = ds.manifest.records[i].labels(ds.features[i].frame_shift_s);
        DerBreakdown b = der(ref, hyp, 0.0, 11);
        acc.missed_s += b.missed_s;
        acc.false_alarm_s += b.false_alarm_s;
        acc.confusion_s += b.confusion_s;
        acc.total_speech_s += b.total_speech_s;
    }
    const double err = acc.missed_s + acc.false_alarm_s + acc.confusion_s;
    acc.der = acc.total_speech_s > 0
                  ? err / acc.total_speech_s
                  : (err > 0 ? std::numeric_limits<double>::infinity() : 0.0);
    return acc;
}

void write_run_report(const std::string& path, const json& body) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write report " + path);
    os << body.dump(2) << "\n";
    if (!os.flush()) throw IoError("short write on report " + path);
}

}  // namespace

// ---------------------------------------------------------------------------
// ASR training
// ---------------------------------------------------------------------------

AsrTrainResult train_asr(const ExperimentConfig& cfg, const std::string& data_dir,
                         const std::string& out_dir, bool resume, std::ostream* log) {
    cfg.validate();
    const auto t_start = std::chrono::steady_clock::now();
    fs::create_directories(out_dir);

    corpus::LoadedDataset train = load_split(data_dir + "/asr/train", cfg, "train-asr");
    corpus::LoadedDataset dev = load_split(data_dir + "/asr/dev", cfg, "train-asr");
    const size_t n_train = train.manifest.records.size();

    ParamStore<float> params = init_model_params<float>(cfg.model, cfg.training.seed);
    std::vector<Tensor<float>> group = params.trainable();
    const std::vector<std::string> names = trainable_names(params);
    AdamConfig<float> acfg{static_cast<float>(cfg.optim.beta1), static_cast<float>(cfg.optim.beta2),
                           static_cast<float>(cfg.optim.eps)};
    AdamState<float> adam;
    adam.init(group);
    NoamSchedule sched{cfg.optim.lr_factor, cfg.model.d_model, cfg.optim.warmup_steps};

    const std::string state_path = out_dir + "/state.txt";
    const std::string moments_path = out_dir + "/moments.dtck";
    const std::string last_path = out_dir + "/last.dtck";
    const std::string best_path = out_dir + "/best.dtck";

    TrainerMeta meta;
    if (resume) {
        if (!fs::exists(state_path))
            throw ConfigError("train-asr: --resume but no trainer state in " + out_dir);
        meta = load_meta(state_path);
        load_checkpoint(last_path, params);
        load_moments(moments_path, names, adam);
        adam.step = meta.step;
    } else {
        std::ofstream cfg_os(out_dir + "/config.ini", std::ios::trunc);
        cfg_os << serialize_config(cfg);
        if (!cfg_os.flush()) throw IoError("cannot write " + out_dir + "/config.ini");
    }

    std::ofstream train_log(out_dir + "/train_log.jsonl",
                            resume ? std::ios::app : std::ios::trunc);
    if (!train_log) throw IoError("cannot open " + out_dir + "/train_log.jsonl");

    AsrTrainResult result;
    result.best_epoch = meta.best_epoch;
    result.best_dev = meta.best_dev;
    result.ctc_skipped_total = meta.ctc_skipped;
    result.best_checkpoint = best_path;
    result.last_checkpoint = last_path;

    // mean composite loss over feasible utterances, no dropout, no tape
    auto eval_split = [&](const corpus::LoadedDataset& ds) {
        double total = 0;
        long n = 0;
        for (size_t i = 0; i < ds.manifest.records.size(); ++i) {
            const auto& toks = single_speaker_tokens(ds.manifest.records[i], "train-asr");
            if (!ctc_fits(ds.features[i].T(), toks)) continue;
            EncoderOutput<float> enc = encoder_forward(ds.features[i], cfg.model, params);
            CtcResult<float> ctc = ctc_loss(ctc_head(enc.states, params), toks);
            std::vector<int> dec_in{ModelConfig::sos_id}, dec_tgt(toks);
            dec_in.insert(dec_in.end(), toks.begin(), toks.end());
            dec_tgt.push_back(ModelConfig::eos_id);
            Tensor<float> attn = attention_ce_loss(
                decoder_forward(dec_in, enc.states, ds.features[i].pad_mask, cfg.model, params),
                dec_tgt, cfg.training.label_smoothing);
            std::vector<Tensor<float>> tracks;
            for (auto& [l, t] : enc.speaker_tracks) tracks.push_back(t);
            Tensor<float> l_s = tracks.empty()
                                    ? Tensor<float>::scalar(0.0f)
                                    : time_invariant_loss(tracks, cfg.model.lambda_s,
                                                          ds.features[i].pad_mask);
            LossBreakdown<float> bd = asr_total_loss(ctc.loss, attn, l_s, cfg.training.alpha);
            if (!std::isfinite(bd.total))
                throw NumericError("train-asr: non-finite dev loss on " +
                                   ds.manifest.records[i].id);
            total += bd.total;
            ++n;
        }
        if (n == 0) throw ContractError("train-asr: no CTC-feasible utterances in split");
        return total / static_cast<double>(n);
    };

    for (int epoch = meta.epoch + 1; epoch <= cfg.training.epochs; ++epoch) {
        std::vector<size_t> order(n_train);
        for (size_t i = 0; i < n_train; ++i) order[i] = i;
        Rng shuffle_rng(mix64(cfg.training.seed, 0x73687566ull, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order.begin(), order.end());

        EpochLog el;
        el.epoch = epoch;
        long contributed = 0;

        for (size_t b0 = 0; b0 < n_train; b0 += static_cast<size_t>(cfg.training.batch_size)) {
            const size_t b1 = std::min(b0 + static_cast<size_t>(cfg.training.batch_size), n_train);
            int feasible = 0;
            for (size_t k = b0; k < b1; ++k) {
                const size_t i = order[k];
                if (ctc_fits(train.features[i].T(),
                             single_speaker_tokens(train.manifest.records[i], "train-asr")))
                    ++feasible;
            }
            if (feasible == 0) {
                el.ctc_skipped += static_cast<int>(b1 - b0);
                continue;
            }
            params.zero_grads();
            const float inv_b = 1.0f / static_cast<float>(feasible);

            for (size_t k = b0; k < b1; ++k) {
                const size_t i = order[k];
                const auto& toks = single_speaker_tokens(train.manifest.records[i], "train-asr");
                if (!ctc_fits(train.features[i].T(), toks)) {
                    ++el.ctc_skipped;
                    continue;
                }
                Tape<float> tape;
                TapeScope<float> scope(tape);
                Rng drop_rng(mix64(mix64(cfg.training.seed, 0x64726f70ull),
                                   static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(i)));
                detail::DropoutCtx drop{&drop_rng, cfg.model.dropout_rate};
                try {
                    EncoderOutput<float> enc =
                        encoder_forward(train.features[i], cfg.model, params, drop);
                    CtcResult<float> ctc = ctc_loss(ctc_head(enc.states, params), toks);
                    if (!ctc.feasible)
                        throw ContractError("train-asr: feasibility precheck disagreed with ctc_loss");
                    std::vector<int> dec_in{ModelConfig::sos_id}, dec_tgt(toks);
                    dec_in.insert(dec_in.end(), toks.begin(), toks.end());
                    dec_tgt.push_back(ModelConfig::eos_id);
                    Tensor<float> attn = attention_ce_loss(
                        decoder_forward(dec_in, enc.states, train.features[i].pad_mask, cfg.model,
                                        params, drop),
                        dec_tgt, cfg.training.label_smoothing);
                    std::vector<Tensor<float>> tracks;
                    for (auto& [l, t] : enc.speaker_tracks) tracks.push_back(t);
                    Tensor<float> l_s = tracks.empty()
                                            ? Tensor<float>::scalar(0.0f)
                                            : time_invariant_loss(tracks, cfg.model.lambda_s,
                                                                  train.features[i].pad_mask);
                    LossBreakdown<float> bd =
                        asr_total_loss(ctc.loss, attn, l_s, cfg.training.alpha);
                    if (!std::isfinite(bd.total))
                        throw NumericError("non-finite loss on " + train.manifest.records[i].id);
                    tape.backward(scale(bd.total_tensor, inv_b));
                    el.l_ctc += bd.l_ctc;
                    el.l_attn += bd.l_attn;
                    el.l_s += bd.l_s;
                    el.total += bd.total;
                    ++contributed;
                } catch (const NumericError& e) {
                    throw NumericError("train-asr: optimizer step " +
                                       std::to_string(adam.step + 1) + ": " + e.what());
                }
            }
            clip_gradients(group, cfg.optim.grad_clip);
            const double lr = sched.lr(adam.step + 1);
            adam_step(group, adam, acfg, lr);
            el.lr = lr;
        }

        if (contributed > 0) {
            el.l_ctc /= static_cast<double>(contributed);
            el.l_attn /= static_cast<double>(contributed);
            el.l_s /= static_cast<double>(contributed);
            el.total /= static_cast<double>(contributed);
        }
        el.dev_total = eval_split(dev);
        result.ctc_skipped_total += el.ctc_skipped;

        if (el.dev_total < result.best_dev) {
            result.best_dev = el.dev_total;
            result.best_epoch = epoch;
            save_checkpoint(best_path, params);
        }
        save_checkpoint(last_path, params);
        save_moments(moments_path, names, adam);
        meta.epoch = epoch;
        meta.step = adam.step;
        meta.best_epoch = result.best_epoch;
        meta.best_dev = result.best_dev;
        meta.ctc_skipped = result.ctc_skipped_total;
        save_meta(state_path, meta);

        json line = {{"epoch", el.epoch},     {"l_ctc", el.l_ctc},
                     {"l_attn", el.l_attn},   {"l_s", el.l_s},
                     {"total", el.total},     {"dev_total", el.dev_total},
                     {"lr", el.lr},           {"ctc_skipped", el.ctc_skipped}};
        train_log << line.dump() << "\n";
        train_log.flush();
        if (log) *log << "epoch " << el.epoch << " total " << el.total << " dev " << el.dev_total
                      << "\n";
        result.history.push_back(el);
    }

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    json report = {{"config_hash", config_hash_hex(cfg)},
                   {"seed", cfg.training.seed},
                   {"epochs_run", static_cast<int>(result.history.size())},
                   {"best_epoch", result.best_epoch},
                   {"best_dev", result.best_dev},
                   {"ctc_skipped", result.ctc_skipped_total},
                   {"wall_clock_s", wall}};
    write_run_report(out_dir + "/report.json", report);
    return result;
}

// ---------------------------------------------------------------------------
// Diarization training on a frozen encoder
// ---------------------------------------------------------------------------

DiarTrainResult train_diar(const ExperimentConfig& cfg, const std::string& asr_checkpoint,
                           const std::string& mix_dir, const std::string& out_dir,
                           std::ostream* log) {
    cfg.validate();
    const auto t_start = std::chrono::steady_clock::now();
    const int top = topmost_disentangled(cfg.model);
    fs::create_directories(out_dir);

    corpus::LoadedDataset train = load_split(mix_dir + "/train", cfg, "train-diar");
    corpus::LoadedDataset dev = load_split(mix_dir + "/dev", cfg, "train-diar");
    for (const auto& r : train.manifest.records)
        if (static_cast<int>(r.speaker_ids.size()) != cfg.training.num_spk)
            throw ContractError("train-diar: record " + r.id + " has " +
                                std::to_string(r.speaker_ids.size()) + " speakers, config says " +
                                std::to_string(cfg.training.num_spk));

    ParamStore<float> params = init_model_params<float>(cfg.model, cfg.training.seed);
    load_checkpoint(asr_checkpoint, params);

    // freeze everything except the disentangled encoder layer(s); the frozen
    // prefix then records no tape nodes and costs no backward work
    for (const auto& name : params.names()) {
        bool unfrozen = false;
        for (int l : cfg.model.disentangled_layers)
            if (name.rfind("enc." + std::to_string(l) + ".", 0) == 0) unfrozen = true;
        params.get(name).set_requires_grad(unfrozen);
    }
    ParamStore<float> head = make_diar_head(cfg);

    std::vector<Tensor<float>> group = params.trainable();
    for (size_t i = 0; i < head.size(); ++i) group.push_back(head.at(i));
    AdamConfig<float> acfg{static_cast<float>(cfg.optim.beta1), static_cast<float>(cfg.optim.beta2),
                           static_cast<float>(cfg.optim.eps)};
    AdamState<float> adam;
    adam.init(group);
    NoamSchedule sched{cfg.optim.lr_factor, cfg.model.d_model, cfg.optim.warmup_steps};

    std::set<int> report_epochs{cfg.training.diar_epochs};
    if (cfg.training.diar_epochs >= 5) report_epochs.insert(5);

    std::ofstream train_log(out_dir + "/train_log.jsonl", std::ios::trunc);
    if (!train_log) throw IoError("cannot open " + out_dir + "/train_log.jsonl");

    DiarTrainResult result;
    const size_t n_train = train.manifest.records.size();
    for (int epoch = 1; epoch <= cfg.training.diar_epochs; ++epoch) {
        std::vector<size_t> order(n_train);
        for (size_t i = 0; i < n_train; ++i) order[i] = i;
        Rng shuffle_rng(mix64(cfg.training.seed, 0x64697368ull, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order.begin(), order.end());

        DiarEpochLog el;
        el.epoch = epoch;
        long contributed = 0;
        for (size_t b0 = 0; b0 < n_train; b0 += static_cast<size_t>(cfg.training.batch_size)) {
            const size_t b1 = std::min(b0 + static_cast<size_t>(cfg.training.batch_size), n_train);
            params.zero_grads();
            head.zero_grads();
            const float inv_b = 1.0f / static_cast<float>(b1 - b0);
            for (size_t k = b0; k < b1; ++k) {
                const size_t i = order[k];
                Tape<float> tape;
                TapeScope<float> scope(tape);
                try {
                    EncoderOutput<float> enc =
                        encoder_forward(train.features[i], cfg.model, params);
                    PitResult<float> pit = pit_bce_loss(
                        diar_logits(enc, top, head),
                        train.manifest.records[i].labels(train.features[i].frame_shift_s));
                    const double loss = static_cast<double>(pit.loss.item());
                    if (!std::isfinite(loss))
                        throw NumericError("non-finite loss on " + train.manifest.records[i].id);
                    tape.backward(scale(pit.loss, inv_b));
                    el.pit_loss += loss;
                    ++contributed;
                } catch (const NumericError& e) {
                    throw NumericError("train-diar: optimizer step " +
                                       std::to_string(adam.step + 1) + ": " + e.what());
                }
            }
            clip_gradients(group, cfg.optim.grad_clip);
            const double lr = sched.lr(adam.step + 1);
            adam_step(group, adam, acfg, lr);
            el.lr = lr;
        }
        if (contributed > 0) el.pit_loss /= static_cast<double>(contributed);

        json line = {{"epoch", el.epoch}, {"pit_loss", el.pit_loss}, {"lr", el.lr}};
        if (report_epochs.count(epoch)) {
            const DerBreakdown on_train = split_der(train, cfg, params, head, top);
            const DerBreakdown on_dev = split_der(dev, cfg, params, head, top);
            result.train_der[epoch] = on_train.der;
            result.dev_der[epoch] = on_dev.der;
            line["train_der"] = on_train.der;
            line["dev_der"] = on_dev.der;
        }
        train_log << line.dump() << "\n";
        train_log.flush();
        if (log) *log << "epoch " << el.epoch << " pit " << el.pit_loss << "\n";
        result.history.push_back(el);
    }

    std::vector<std::pair<std::string, Tensor<float>>> out;
    for (const auto& n : params.names()) out.emplace_back(n, params.get(n));
    for (const auto& n : head.names()) out.emplace_back(n, head.get(n));
    result.checkpoint = out_dir + "/diar.dtck";
    save_tensors(result.checkpoint, out);

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    json train_der_j = json::object(), dev_der_j = json::object();
    for (auto& [e, v] : result.train_der) train_der_j[std::to_string(e)] = v;
    for (auto& [e, v] : result.dev_der) dev_der_j[std::to_string(e)] = v;
    json report = {{"config_hash", config_hash_hex(cfg)},
                   {"seed", cfg.training.seed},
                   {"epochs_run", cfg.training.diar_epochs},
                   {"train_der", train_der_j},
                   {"dev_der", dev_der_j},
                   {"wall_clock_s", wall}};
    write_run_report(out_dir + "/report.json", report);
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

AsrEvalResult eval_asr(const ExperimentConfig& cfg, const std::string& checkpoint,
                       const std::string& split_dir) {
    cfg.validate();
    corpus::LoadedDataset ds = load_split(split_dir, cfg, "eval");
    ParamStore<float> params = init_model_params<float>(cfg.model, cfg.training.seed);
    load_checkpoint(checkpoint, params);

    AsrEvalResult out;
    for (size_t i = 0; i < ds.manifest.records.size(); ++i) {
        const auto& ref = single_speaker_tokens(ds.manifest.records[i], "eval");
        EncoderOutput<float> enc = encoder_forward(ds.features[i], cfg.model, params);
        BeamSearchResult hyp =
            joint_beam_search(enc.states, ds.features[i].pad_mask, cfg.model, params,
                              ctc_head(enc.states, params), cfg.decode);
        WerBreakdown w = wer(ref, hyp.tokens);
        out.totals.substitutions += w.substitutions;
        out.totals.deletions += w.deletions;
        out.totals.insertions += w.insertions;
        out.totals.ref_words += w.ref_words;
        ++out.n_utterances;
    }
    out.totals.wer = static_cast<double>(out.totals.substitutions + out.totals.deletions +
                                         out.totals.insertions) /
                     static_cast<double>(out.totals.ref_words);
    json j = {{"task", "asr"},
              {"n_utterances", out.n_utterances},
              {"substitutions", out.totals.substitutions},
              {"deletions", out.totals.deletions},
              {"insertions", out.totals.insertions},
              {"ref_words", out.totals.ref_words},
              {"wer", out.totals.wer}};
    out.json = j.dump();
    return out;
}

DiarEvalResult eval_diar(const ExperimentConfig& cfg, const std::string& checkpoint,
                         const std::string& split_dir) {
    cfg.validate();
    const int top = topmost_disentangled(cfg.model);
    corpus::LoadedDataset ds = load_split(split_dir, cfg, "eval");
    ParamStore<float> params = init_model_params<float>(cfg.model, cfg.training.seed);
    auto leftover = apply_checkpoint(checkpoint, params);

    ParamStore<float> head = make_diar_head(cfg);
    std::set<std::string> expected{"diar.w", "diar.b"};
    for (auto& [name, t] : leftover) {
        if (!expected.erase(name))
            throw ConfigError(checkpoint + ": unexpected tensor " + name);
        Tensor<float>& dst = head.get(name);
        if (t.shape() != dst.shape())
            throw ConfigError(checkpoint + ": tensor " + name + " has shape " +
                              shape_str(t.shape()) + ", head expects " + shape_str(dst.shape()));
        auto src = t.values();
        std::copy(src.begin(), src.end(), dst.values().begin());
    }
    if (!expected.empty())
        throw ConfigError(checkpoint + ": no diarization head found — is this an ASR checkpoint?");

    DiarEvalResult out;
    out.totals = split_der(ds, cfg, params, head, top);
    out.n_mixtures = static_cast<int>(ds.manifest.records.size());
    json j = {{"task", "diar"},
              {"n_mixtures", out.n_mixtures},
              {"der", out.totals.der},
              {"miss", out.totals.missed_s},
              {"fa", out.totals.false_alarm_s},
              {"conf", out.totals.confusion_s},
              {"spk_err_s", speaker_error_time(out.totals)},
              {"total_speech_s", out.totals.total_speech_s}};
    out.json = j.dump();
    return out;
}

// ---------------------------------------------------------------------------
// Probing
// ---------------------------------------------------------------------------

std::vector<ProbeEntry> probe_heads(const ExperimentConfig& cfg, const std::string& checkpoint,
                                    const std::string& split_dir, const std::vector<int>& layers,
                                    const std::vector<int>& heads, const std::string& pca_out) {
    cfg.validate();
    for (int l : layers)
        if (l < 1 || l > cfg.model.enc_layers)
            throw BoundsError("probe: layer " + std::to_string(l) + " out of range");
    for (int h : heads)
        if (h < 1 || h > cfg.model.num_heads)
            throw BoundsError("probe: head " + std::to_string(h) + " out of range");

    corpus::LoadedDataset ds = load_split(split_dir, cfg, "probe");
    ParamStore<float> params = init_model_params<float>(cfg.model, cfg.training.seed);
    // an attached diarization head is irrelevant here; anything else is not
    // a checkpoint for this model
    for (auto& [name, t] : apply_checkpoint(checkpoint, params))
        if (name != "diar.w" && name != "diar.b")
            throw ConfigError(checkpoint + ": unexpected tensor " + name);

    struct Accum {
        double smooth_sum = 0;  // Σ per-utterance smoothness × transitions
        long transitions = 0;
        std::vector<float> frames;  // concatenated rows
        std::vector<int> labels;    // speaker id per row
    };
    std::map<std::pair<int, int>, Accum> acc;
    for (int l : layers)
        for (int h : heads) acc[{l, h}] = Accum{};

    const int d = cfg.model.head_dim;
    for (size_t i = 0; i < ds.manifest.records.size(); ++i) {
        const auto& rec = ds.manifest.records[i];
        if (rec.speaker_ids.size() != 1)
            throw ContractError("probe: record " + rec.id + " is not single-speaker");
        EncoderOutput<float> enc = encoder_forward(ds.features[i], cfg.model, params);
        for (auto& [key, a] : acc) {
            const Tensor<float>& track = extract_head_embeddings(enc, key.first, key.second);
            const int T = track.dim(0);
            if (T >= 2) {
                a.smooth_sum += temporal_smoothness(track) * (T - 1);
                a.transitions += T - 1;
            }
            auto v = track.values();
            a.frames.insert(a.frames.end(), v.begin(), v.end());
            a.labels.insert(a.labels.end(), static_cast<size_t>(T), rec.speaker_ids[0]);
        }
    }

    std::ofstream pca_os;
    if (!pca_out.empty()) {
        pca_os.open(pca_out, std::ios::trunc);
        if (!pca_os) throw IoError("cannot write projection file " + pca_out);
    }

    std::vector<ProbeEntry> out;
    for (int l : layers)
        for (int h : heads) {
            Accum& a = acc[{l, h}];
            ProbeEntry e;
            e.layer = l;
            e.head = h;
            e.n_frames = static_cast<long>(a.labels.size());
            e.smoothness = a.transitions > 0 ? a.smooth_sum / static_cast<double>(a.transitions) : 0;

            std::map<int, int> class_sizes;
            for (int s : a.labels) ++class_sizes[s];
            bool fisher_ok = class_sizes.size() >= 2;
            for (auto& [s, n] : class_sizes)
                if (n < 2) fisher_ok = false;
            Tensor<float> frames;
            if (e.n_frames > 0)
                frames = Tensor<float>::from({static_cast<int>(e.n_frames), d}, a.frames);
            if (fisher_ok) {
                e.fisher = fisher_separability(frames, a.labels);
                e.has_fisher = true;
            }
            if (pca_os.is_open() && e.n_frames >= 2) {
                PcaResult pca = pca_project(frames, 2);
                for (size_t r = 0; r < pca.coords.size(); ++r) {
                    json line = {{"layer", l},
                                 {"head", h},
                                 {"speaker", a.labels[r]},
                                 {"x", pca.coords[r][0]},
                                 {"y", pca.coords[r][1]}};
                    pca_os << line.dump() << "\n";
                }
            }
            out.push_back(e);
        }
    if (pca_os.is_open() && !pca_os.flush()) throw IoError("short write on " + pca_out);
    return out;
}

std::string probe_jsonl(const std::vector<ProbeEntry>& entries) {
    std::ostringstream os;
    for (const auto& e : entries) {
        json line = {{"layer", e.layer},
                     {"head", e.head},
                     {"smoothness", e.smoothness},
                     {"fisher", e.has_fisher ? json(e.fisher) : json(nullptr)},
                     {"n_frames", e.n_frames}};
        os << line.dump() << "\n";
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Command wrappers
// ---------------------------------------------------------------------------

namespace {

template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
    try {
        return fn();
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace

int cmd_gen_corpus(const ExperimentConfig& cfg, const std::string& out_dir, bool force,
                   std::ostream& err) {
    return guarded(err, [&] {
        if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force) {
            err << "error: " << out_dir << " exists and is not empty (use --force to overwrite)\n";
            return 2;
        }
        corpus::generate_corpus(cfg.corpus, out_dir);
        return 0;
    });
}

int cmd_train_asr(const ExperimentConfig& cfg, const std::string& data_dir,
                  const std::string& out_dir, bool resume, std::ostream& log, std::ostream& err) {
    return guarded(err, [&] {
        train_asr(cfg, data_dir, out_dir, resume, &log);
        return 0;
    });
}

int cmd_train_diar(const ExperimentConfig& cfg, const std::string& asr_checkpoint,
                   const std::string& mix_dir, const std::string& out_dir, std::ostream& log,
                   std::ostream& err) {
    return guarded(err, [&] {
        train_diar(cfg, asr_checkpoint, mix_dir, out_dir, &log);
        return 0;
    });
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint,
             const std::string& split_dir, const std::string& task, std::ostream& out,
             std::ostream& err) {
    return guarded(err, [&] {
        if (task == "asr") {
            out << eval_asr(cfg, checkpoint, split_dir).json << "\n";
        } else if (task == "diar") {
            out << eval_diar(cfg, checkpoint, split_dir).json << "\n";
        } else {
            err << "error: unknown eval task '" << task << "' (expected asr or diar)\n";
            return 2;
        }
        return 0;
    });
}

int cmd_probe(const ExperimentConfig& cfg, const std::string& checkpoint,
              const std::string& split_dir, const std::vector<int>& layers,
              const std::vector<int>& heads, const std::string& pca_out, std::ostream& out,
              std::ostream& err) {
    return guarded(err, [&] {
        out << probe_jsonl(probe_heads(cfg, checkpoint, split_dir, layers, heads, pca_out));
        return 0;
    });
}

}  // namespace dt
