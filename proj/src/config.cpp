#include "dt/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dt {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

long long parse_int(const std::string& key, const std::string& v) {
    size_t pos = 0;
    long long out;
    try {
        out = std::stoll(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
    }
    if (pos != v.size()) throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    size_t pos = 0;
    double out;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + key + ": '" + v + "'");
    }
    if (pos != v.size()) throw ConfigError("config: bad number for " + key + ": '" + v + "'");
    return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    size_t pos = 0;
    std::uint64_t out;
    try {
        out = std::stoull(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config: bad unsigned for " + key + ": '" + v + "'");
    }
    if (pos != v.size()) throw ConfigError("config: bad unsigned for " + key + ": '" + v + "'");
    return out;
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// "top" | "all" | "none" | comma-separated 1-based indices; resolved against
// enc_layers after the whole file is read
std::vector<int> resolve_layers(const std::string& raw, int enc_layers) {
    if (raw == "top") return {enc_layers};
    if (raw == "all") {
        std::vector<int> out;
        for (int l = 1; l <= enc_layers; ++l) out.push_back(l);
        return out;
    }
    if (raw == "none") return {};
    std::vector<int> out;
    std::istringstream ss(raw);
    std::string part;
    while (std::getline(ss, part, ',')) {
        part = trim(part);
        out.push_back(static_cast<int>(parse_int("model.disentangled_layers", part)));
    }
    if (out.empty()) throw ConfigError("config: empty disentangled_layers list");
    return out;
}

}  // namespace

void ExperimentConfig::validate() const {
    model.validate();
    corpus.validate();
    decode.validate();
    if (optim.lr_factor <= 0 || optim.warmup_steps < 1)
        throw ConfigError("config: bad optimizer schedule");
    if (optim.beta1 < 0 || optim.beta1 >= 1 || optim.beta2 < 0 || optim.beta2 >= 1 || optim.eps <= 0)
        throw ConfigError("config: bad Adam constants");
    if (training.epochs < 1 || training.batch_size < 1)
        throw ConfigError("config: epochs and batch_size must be positive");
    if (training.alpha < 0 || training.alpha > 1)
        throw ConfigError("config: alpha must be in [0, 1]");
    if (training.label_smoothing < 0 || training.label_smoothing >= 1)
        throw ConfigError("config: label_smoothing must be in [0, 1)");
    if (training.num_spk < 1 || training.num_spk > 4)
        throw ConfigError("config: num_spk must be in [1, 4]");
    if (training.diar_epochs < 1) throw ConfigError("config: diar_epochs must be positive");
    if (corpus.d_feat != model.d_feat)
        throw ConfigError("config: corpus.d_feat " + std::to_string(corpus.d_feat) +
                          " != model.d_feat " + std::to_string(model.d_feat));
    if (corpus.vocab_size() != model.vocab_size)
        throw ConfigError("config: corpus vocabulary " + std::to_string(corpus.vocab_size()) +
                          " != model.vocab_size " + std::to_string(model.vocab_size));
}

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::string dis_raw;  // deferred, depends on enc_layers

    using Setter = std::function<void(const std::string&, const std::string&)>;
    const std::map<std::string, Setter> keys = {
        {"model.d_feat", [&](const std::string& k, const std::string& v) { cfg.model.d_feat = static_cast<int>(parse_int(k, v)); }},
        {"model.d_model", [&](const std::string& k, const std::string& v) { cfg.model.d_model = static_cast<int>(parse_int(k, v)); }},
        {"model.num_heads", [&](const std::string& k, const std::string& v) { cfg.model.num_heads = static_cast<int>(parse_int(k, v)); }},
        {"model.head_dim", [&](const std::string& k, const std::string& v) { cfg.model.head_dim = static_cast<int>(parse_int(k, v)); }},
        {"model.ff_inner", [&](const std::string& k, const std::string& v) { cfg.model.ff_inner = static_cast<int>(parse_int(k, v)); }},
        {"model.enc_layers", [&](const std::string& k, const std::string& v) { cfg.model.enc_layers = static_cast<int>(parse_int(k, v)); }},
        {"model.dec_layers", [&](const std::string& k, const std::string& v) { cfg.model.dec_layers = static_cast<int>(parse_int(k, v)); }},
        {"model.disentangled_layers", [&](const std::string&, const std::string& v) { dis_raw = v; }},
        {"model.speaker_head", [&](const std::string& k, const std::string& v) { cfg.model.speaker_head = static_cast<int>(parse_int(k, v)); }},
        {"model.vocab_size", [&](const std::string& k, const std::string& v) { cfg.model.vocab_size = static_cast<int>(parse_int(k, v)); }},
        {"model.dropout_rate", [&](const std::string& k, const std::string& v) { cfg.model.dropout_rate = parse_double(k, v); }},
        {"model.lambda_s", [&](const std::string& k, const std::string& v) { cfg.model.lambda_s = parse_double(k, v); }},
        {"model.max_len", [&](const std::string& k, const std::string& v) { cfg.model.max_len = static_cast<int>(parse_int(k, v)); }},
        {"optimizer.lr_factor", [&](const std::string& k, const std::string& v) { cfg.optim.lr_factor = parse_double(k, v); }},
        {"optimizer.warmup_steps", [&](const std::string& k, const std::string& v) { cfg.optim.warmup_steps = static_cast<int>(parse_int(k, v)); }},
        {"optimizer.grad_clip", [&](const std::string& k, const std::string& v) { cfg.optim.grad_clip = parse_double(k, v); }},
        {"optimizer.beta1", [&](const std::string& k, const std::string& v) { cfg.optim.beta1 = parse_double(k, v); }},
        {"optimizer.beta2", [&](const std::string& k, const std::string& v) { cfg.optim.beta2 = parse_double(k, v); }},
        {"optimizer.eps", [&](const std::string& k, const std::string& v) { cfg.optim.eps = parse_double(k, v); }},
        {"corpus.seed", [&](const std::string& k, const std::string& v) { cfg.corpus.seed = parse_u64(k, v); }},
        {"corpus.num_speakers", [&](const std::string& k, const std::string& v) { cfg.corpus.num_speakers = static_cast<int>(parse_int(k, v)); }},
        {"corpus.d_feat", [&](const std::string& k, const std::string& v) { cfg.corpus.d_feat = static_cast<int>(parse_int(k, v)); }},
        {"corpus.n_content", [&](const std::string& k, const std::string& v) { cfg.corpus.n_content = static_cast<int>(parse_int(k, v)); }},
        {"corpus.frame_shift_s", [&](const std::string& k, const std::string& v) { cfg.corpus.frame_shift_s = parse_double(k, v); }},
        {"corpus.min_tokens", [&](const std::string& k, const std::string& v) { cfg.corpus.min_tokens = static_cast<int>(parse_int(k, v)); }},
        {"corpus.max_tokens", [&](const std::string& k, const std::string& v) { cfg.corpus.max_tokens = static_cast<int>(parse_int(k, v)); }},
        {"corpus.min_dur", [&](const std::string& k, const std::string& v) { cfg.corpus.min_dur = static_cast<int>(parse_int(k, v)); }},
        {"corpus.max_dur", [&](const std::string& k, const std::string& v) { cfg.corpus.max_dur = static_cast<int>(parse_int(k, v)); }},
        {"corpus.jitter_sigma", [&](const std::string& k, const std::string& v) { cfg.corpus.jitter_sigma = parse_double(k, v); }},
        {"corpus.rms_db_lo", [&](const std::string& k, const std::string& v) { cfg.corpus.rms_db_lo = parse_double(k, v); }},
        {"corpus.rms_db_hi", [&](const std::string& k, const std::string& v) { cfg.corpus.rms_db_hi = parse_double(k, v); }},
        {"corpus.snr_db_lo", [&](const std::string& k, const std::string& v) { cfg.corpus.snr_db_lo = parse_double(k, v); }},
        {"corpus.snr_db_hi", [&](const std::string& k, const std::string& v) { cfg.corpus.snr_db_hi = parse_double(k, v); }},
        {"corpus.gap_lo", [&](const std::string& k, const std::string& v) { cfg.corpus.gap_lo = static_cast<int>(parse_int(k, v)); }},
        {"corpus.gap_hi", [&](const std::string& k, const std::string& v) { cfg.corpus.gap_hi = static_cast<int>(parse_int(k, v)); }},
        {"corpus.noise_rho", [&](const std::string& k, const std::string& v) { cfg.corpus.noise_rho = parse_double(k, v); }},
        {"corpus.asr_train", [&](const std::string& k, const std::string& v) { cfg.corpus.asr_train = static_cast<int>(parse_int(k, v)); }},
        {"corpus.asr_dev", [&](const std::string& k, const std::string& v) { cfg.corpus.asr_dev = static_cast<int>(parse_int(k, v)); }},
        {"corpus.asr_test", [&](const std::string& k, const std::string& v) { cfg.corpus.asr_test = static_cast<int>(parse_int(k, v)); }},
        {"corpus.mix_train", [&](const std::string& k, const std::string& v) { cfg.corpus.mix_train = static_cast<int>(parse_int(k, v)); }},
        {"corpus.mix_dev", [&](const std::string& k, const std::string& v) { cfg.corpus.mix_dev = static_cast<int>(parse_int(k, v)); }},
        {"corpus.mix_test", [&](const std::string& k, const std::string& v) { cfg.corpus.mix_test = static_cast<int>(parse_int(k, v)); }},
        {"training.epochs", [&](const std::string& k, const std::string& v) { cfg.training.epochs = static_cast<int>(parse_int(k, v)); }},
        {"training.batch_size", [&](const std::string& k, const std::string& v) { cfg.training.batch_size = static_cast<int>(parse_int(k, v)); }},
        {"training.seed", [&](const std::string& k, const std::string& v) { cfg.training.seed = parse_u64(k, v); }},
        {"training.alpha", [&](const std::string& k, const std::string& v) { cfg.training.alpha = parse_double(k, v); }},
        {"training.label_smoothing", [&](const std::string& k, const std::string& v) { cfg.training.label_smoothing = parse_double(k, v); }},
        {"training.num_spk", [&](const std::string& k, const std::string& v) { cfg.training.num_spk = static_cast<int>(parse_int(k, v)); }},
        {"training.diar_epochs", [&](const std::string& k, const std::string& v) { cfg.training.diar_epochs = static_cast<int>(parse_int(k, v)); }},
        {"decode.beam_size", [&](const std::string& k, const std::string& v) { cfg.decode.beam_size = static_cast<int>(parse_int(k, v)); }},
        {"decode.ctc_weight", [&](const std::string& k, const std::string& v) { cfg.decode.ctc_weight = parse_double(k, v); }},
        {"decode.max_output_len", [&](const std::string& k, const std::string& v) { cfg.decode.max_output_len = static_cast<int>(parse_int(k, v)); }},
        {"decode.length_penalty", [&](const std::string& k, const std::string& v) { cfg.decode.length_penalty = parse_double(k, v); }},
    };

    std::istringstream is(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const size_t comment = line.find_first_of("#;");
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(line_no) + ": malformed section");
            section = trim(line.substr(1, line.size() - 2));
            if (section != "model" && section != "optimizer" && section != "corpus" &&
                section != "training" && section != "decode")
                throw ConfigError("config line " + std::to_string(line_no) + ": unknown section [" +
                                  section + "]");
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty())
            throw ConfigError("config line " + std::to_string(line_no) + ": key outside a section");
        const std::string full = section + "." + key;
        auto it = keys.find(full);
        if (it == keys.end())
            throw ConfigError("config line " + std::to_string(line_no) + ": unknown key " + full);
        it->second(full, value);
    }
    if (!dis_raw.empty()) cfg.model.disentangled_layers = resolve_layers(dis_raw, cfg.model.enc_layers);
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << "[model]\n";
    os << "d_feat = " << cfg.model.d_feat << "\n";
    os << "d_model = " << cfg.model.d_model << "\n";
    os << "num_heads = " << cfg.model.num_heads << "\n";
    os << "head_dim = " << cfg.model.head_dim << "\n";
    os << "ff_inner = " << cfg.model.ff_inner << "\n";
    os << "enc_layers = " << cfg.model.enc_layers << "\n";
    os << "dec_layers = " << cfg.model.dec_layers << "\n";
    os << "disentangled_layers = ";
    if (cfg.model.disentangled_layers.empty()) {
        os << "none";
    } else {
        for (size_t i = 0; i < cfg.model.disentangled_layers.size(); ++i)
            os << (i ? "," : "") << cfg.model.disentangled_layers[i];
    }
    os << "\n";
    os << "speaker_head = " << cfg.model.speaker_head << "\n";
    os << "vocab_size = " << cfg.model.vocab_size << "\n";
    os << "dropout_rate = " << fmt_double(cfg.model.dropout_rate) << "\n";
    os << "lambda_s = " << fmt_double(cfg.model.lambda_s) << "\n";
    os << "max_len = " << cfg.model.max_len << "\n";
    os << "[optimizer]\n";
    os << "lr_factor = " << fmt_double(cfg.optim.lr_factor) << "\n";
    os << "warmup_steps = " << cfg.optim.warmup_steps << "\n";
    os << "grad_clip = " << fmt_double(cfg.optim.grad_clip) << "\n";
    os << "beta1 = " << fmt_double(cfg.optim.beta1) << "\n";
    os << "beta2 = " << fmt_double(cfg.optim.beta2) << "\n";
    os << "eps = " << fmt_double(cfg.optim.eps) << "\n";
    os << "[corpus]\n";
    os << "seed = " << cfg.corpus.seed << "\n";
    os << "num_speakers = " << cfg.corpus.num_speakers << "\n";
    os << "d_feat = " << cfg.corpus.d_feat << "\n";
    os << "n_content = " << cfg.corpus.n_content << "\n";
    os << "frame_shift_s = " << fmt_double(cfg.corpus.frame_shift_s) << "\n";
    os << "min_tokens = " << cfg.corpus.min_tokens << "\n";
    os << "max_tokens = " << cfg.corpus.max_tokens << "\n";
    os << "min_dur = " << cfg.corpus.min_dur << "\n";
    os << "max_dur = " << cfg.corpus.max_dur << "\n";
    os << "jitter_sigma = " << fmt_double(cfg.corpus.jitter_sigma) << "\n";
    os << "rms_db_lo = " << fmt_double(cfg.corpus.rms_db_lo) << "\n";
    os << "rms_db_hi = " << fmt_double(cfg.corpus.rms_db_hi) << "\n";
    os << "snr_db_lo = " << fmt_double(cfg.corpus.snr_db_lo) << "\n";
    os << "snr_db_hi = " << fmt_double(cfg.corpus.snr_db_hi) << "\n";
    os << "gap_lo = " << cfg.corpus.gap_lo << "\n";
    os << "gap_hi = " << cfg.corpus.gap_hi << "\n";
    os << "noise_rho = " << fmt_double(cfg.corpus.noise_rho) << "\n";
    os << "asr_train = " << cfg.corpus.asr_train << "\n";
    os << "asr_dev = " << cfg.corpus.asr_dev << "\n";
    os << "asr_test = " << cfg.corpus.asr_test << "\n";
    os << "mix_train = " << cfg.corpus.mix_train << "\n";
    os << "mix_dev = " << cfg.corpus.mix_dev << "\n";
    os << "mix_test = " << cfg.corpus.mix_test << "\n";
    os << "[training]\n";
    os << "epochs = " << cfg.training.epochs << "\n";
    os << "batch_size = " << cfg.training.batch_size << "\n";
    os << "seed = " << cfg.training.seed << "\n";
    os << "alpha = " << fmt_double(cfg.training.alpha) << "\n";
    os << "label_smoothing = " << fmt_double(cfg.training.label_smoothing) << "\n";
    os << "num_spk = " << cfg.training.num_spk << "\n";
    os << "diar_epochs = " << cfg.training.diar_epochs << "\n";
    os << "[decode]\n";
    os << "beam_size = " << cfg.decode.beam_size << "\n";
    os << "ctc_weight = " << fmt_double(cfg.decode.ctc_weight) << "\n";
    os << "max_output_len = " << cfg.decode.max_output_len << "\n";
    os << "length_penalty = " << fmt_double(cfg.decode.length_penalty) << "\n";
    return os.str();
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
    const std::string s = serialize_config(cfg);
    std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a 64
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string config_hash_hex(const ExperimentConfig& cfg) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
    return buf;
}

}  // namespace dt
