#include "dt/corpus.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace dt::corpus {

namespace fs = std::filesystem;

// substream tags for mix64; changing these re-rolls the whole corpus
namespace {
constexpr std::uint64_t TAG_TEMPLATE = 0xA1;
constexpr std::uint64_t TAG_SPK = 0xA2;
constexpr std::uint64_t TAG_UTT = 0xA3;
constexpr std::uint64_t TAG_JIT = 0xA4;
constexpr std::uint64_t TAG_MIX = 0xB0;     // +scenario index
constexpr std::uint64_t TAG_MIXJIT = 0xC0;  // +scenario index
}  // namespace

void CorpusConfig::validate() const {
    if (num_speakers < 2) throw ConfigError("corpus: need at least 2 speakers");
    if (d_feat < 1 || n_content < 1) throw ConfigError("corpus: d_feat and n_content must be positive");
    if (min_tokens < 1 || max_tokens < min_tokens) throw ConfigError("corpus: bad token count range");
    if (min_dur < 1 || max_dur < min_dur) throw ConfigError("corpus: bad duration range");
    if (rms_db_hi < rms_db_lo) throw ConfigError("corpus: bad RMS range");
    if (snr_db_hi < snr_db_lo) throw ConfigError("corpus: bad SNR range");
    if (gap_lo < 1 || gap_hi < gap_lo) throw ConfigError("corpus: bad gap range");
    if (noise_rho < 0 || noise_rho >= 1) throw ConfigError("corpus: noise_rho must be in [0, 1)");
    if (jitter_sigma < 0) throw ConfigError("corpus: jitter_sigma must be >= 0");
    if (asr_train < 1 || asr_dev < 1 || asr_test < 1 || mix_train < 0 || mix_dev < 0 || mix_test < 0)
        throw ConfigError("corpus: bad split sizes");
}

std::vector<std::vector<double>> gen_token_templates(std::uint64_t corpus_seed, int n_content,
                                                     int d_feat) {
    std::vector<std::vector<double>> templates(static_cast<size_t>(n_content));
    for (int k = 0; k < n_content; ++k) {
        Rng rng(mix64(corpus_seed, TAG_TEMPLATE, static_cast<std::uint64_t>(k)));
        templates[static_cast<size_t>(k)].resize(static_cast<size_t>(d_feat));
        for (auto& v : templates[static_cast<size_t>(k)]) v = rng.normal();
    }
    return templates;
}

SpeakerProfile gen_speaker_profile(std::uint64_t corpus_seed, int speaker_id, int d_feat) {
    SpeakerProfile p;
    p.speaker_id = speaker_id;
    p.seed = mix64(corpus_seed, TAG_SPK, static_cast<std::uint64_t>(speaker_id));
    Rng rng(p.seed);
    p.bias.resize(static_cast<size_t>(d_feat));
    for (auto& v : p.bias) v = rng.normal();
    p.gain.resize(static_cast<size_t>(d_feat));
    for (auto& v : p.gain) v = rng.uniform(0.7, 1.3);
    return p;
}

UtteranceSpec sample_utterance_spec(const CorpusConfig& cfg, Rng& rng, int speaker_id,
                                    std::uint64_t jitter_seed) {
    UtteranceSpec spec;
    spec.speaker_id = speaker_id;
    spec.jitter_seed = jitter_seed;
    const int n = rng.uniform_int(cfg.min_tokens, cfg.max_tokens);
    spec.tokens.resize(static_cast<size_t>(n));
    spec.durations.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        spec.tokens[static_cast<size_t>(i)] = ModelConfig::first_content_id + rng.uniform_int(cfg.n_content);
        spec.durations[static_cast<size_t>(i)] = rng.uniform_int(cfg.min_dur, cfg.max_dur);
    }
    spec.target_rms_db = rng.uniform(cfg.rms_db_lo, cfg.rms_db_hi);
    return spec;
}

Utterance gen_utterance(const UtteranceSpec& spec, const SpeakerProfile& profile,
                        const std::vector<std::vector<double>>& templates,
                        const CorpusConfig& cfg) {
    if (spec.tokens.size() != spec.durations.size() || spec.tokens.empty())
        throw ContractError("gen_utterance: tokens/durations mismatch");
    const int d = cfg.d_feat;
    if (static_cast<int>(profile.bias.size()) != d)
        throw ContractError("gen_utterance: profile dimension mismatch");
    int T = 0;
    for (int dur : spec.durations) T += dur;

    Rng jitter(spec.jitter_seed);
    std::vector<double> frames(static_cast<size_t>(T) * d);
    int t = 0;
    for (size_t k = 0; k < spec.tokens.size(); ++k) {
        const int tok = spec.tokens[k] - ModelConfig::first_content_id;
        if (tok < 0 || tok >= static_cast<int>(templates.size()))
            throw BoundsError("gen_utterance: token " + std::to_string(spec.tokens[k]) +
                              " has no template");
        const auto& m = templates[static_cast<size_t>(tok)];
        for (int rep = 0; rep < spec.durations[k]; ++rep, ++t)
            for (int i = 0; i < d; ++i)
                frames[static_cast<size_t>(t) * d + i] =
                    profile.gain[static_cast<size_t>(i)] *
                        (m[static_cast<size_t>(i)] + cfg.jitter_sigma * jitter.normal()) +
                    profile.bias[static_cast<size_t>(i)];
    }

    double sq = 0;
    for (double v : frames) sq += v * v;
    const double rms = std::sqrt(sq / static_cast<double>(frames.size()));
    const double scale = rms > 1e-30 ? std::pow(10.0, spec.target_rms_db / 20.0) / rms : 1.0;

    Utterance u;
    u.speaker_id = spec.speaker_id;
    u.tokens = spec.tokens;
    std::vector<float> out(frames.size());
    for (size_t i = 0; i < frames.size(); ++i) out[i] = static_cast<float>(frames[i] * scale);
    u.features.frames = Tensor<float>::from({T, d}, std::move(out));
    u.features.frame_shift_s = cfg.frame_shift_s;
    u.features.pad_mask.assign(static_cast<size_t>(T), 1);
    return u;
}

const char* scenario_name(Scenario s) {
    switch (s) {
        case Scenario::noise_single: return "1.0";
        case Scenario::concat_nosilence: return "2.0";
        case Scenario::concat_silence: return "3.0";
        case Scenario::full_overlap: return "4.0";
    }
    throw ContractError("scenario_name: bad scenario");
}

namespace {

Mixture assemble(const std::vector<Utterance>& sources, int total_T, const CorpusConfig& cfg,
                 const std::vector<int>& starts) {
    const int d = cfg.d_feat;
    Mixture m;
    std::vector<double> acc(static_cast<size_t>(total_T) * d, 0.0);
    for (size_t s = 0; s < sources.size(); ++s) {
        const auto& f = sources[s].features;
        auto fv = f.frames.values();
        const int T = f.T();
        for (int t = 0; t < T; ++t)
            for (int i = 0; i < d; ++i)
                acc[static_cast<size_t>(starts[s] + t) * d + i] += fv[static_cast<size_t>(t) * d + i];
        m.speaker_ids.push_back(sources[s].speaker_id);
        m.transcripts.push_back(sources[s].tokens);
        m.segments.push_back({{starts[s], starts[s] + T - 1}});
    }
    m.labels.frame_shift_s = cfg.frame_shift_s;
    m.labels.activity.assign(sources.size(), std::vector<std::uint8_t>(static_cast<size_t>(total_T), 0));
    for (size_t s = 0; s < sources.size(); ++s)
        for (auto [a, b] : m.segments[s])
            for (int t = a; t <= b; ++t) m.labels.activity[s][static_cast<size_t>(t)] = 1;
    std::vector<float> out(acc.size());
    for (size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i]);
    m.features.frames = Tensor<float>::from({total_T, d}, std::move(out));
    m.features.frame_shift_s = cfg.frame_shift_s;
    m.features.pad_mask.assign(static_cast<size_t>(total_T), 1);
    return m;
}

}  // namespace

Mixture mix_mixture(Scenario scenario, const std::vector<Utterance>& sources,
                    const CorpusConfig& cfg, Rng& rng) {
    const size_t want = scenario == Scenario::noise_single ? 1 : 2;
    if (sources.size() != want)
        throw ContractError(std::string("mix_mixture: scenario ") + scenario_name(scenario) +
                            " needs " + std::to_string(want) + " sources, got " +
                            std::to_string(sources.size()));
    const int d = cfg.d_feat;
    switch (scenario) {
        case Scenario::noise_single: {
            const int T = sources[0].features.T();
            Mixture m = assemble(sources, T, cfg, {0});
            const double snr_db = rng.uniform(cfg.snr_db_lo, cfg.snr_db_hi);
            auto mv = m.features.frames.values();
            double sig = 0;
            for (float v : mv) sig += static_cast<double>(v) * v;
            sig /= static_cast<double>(mv.size());
            const double noise_scale = std::sqrt(sig / std::pow(10.0, snr_db / 10.0));
            // first-order low-pass colored noise, unit variance per entry
            const double rho = cfg.noise_rho, mix_new = std::sqrt(1.0 - rho * rho);
            std::vector<double> state(static_cast<size_t>(d), 0.0);
            for (int t = 0; t < T; ++t)
                for (int i = 0; i < d; ++i) {
                    const double w = rng.normal();
                    state[static_cast<size_t>(i)] =
                        t == 0 ? w : rho * state[static_cast<size_t>(i)] + mix_new * w;
                    mv[static_cast<size_t>(t) * d + i] +=
                        static_cast<float>(noise_scale * state[static_cast<size_t>(i)]);
                }
            return m;
        }
        case Scenario::concat_nosilence: {
            const int T1 = sources[0].features.T();
            const int total = T1 + sources[1].features.T();
            return assemble(sources, total, cfg, {0, T1});
        }
        case Scenario::concat_silence: {
            const int T1 = sources[0].features.T();
            const int gap = rng.uniform_int(cfg.gap_lo, cfg.gap_hi);
            const int total = T1 + gap + sources[1].features.T();
            return assemble(sources, total, cfg, {0, T1 + gap});
        }
        case Scenario::full_overlap: {
            const int total = std::max(sources[0].features.T(), sources[1].features.T());
            return assemble(sources, total, cfg, {0, 0});
        }
    }
    throw ContractError("mix_mixture: bad scenario");
}

// ---------------------------------------------------------------------------
// binary feature files
// ---------------------------------------------------------------------------

namespace {

constexpr char kFeatMagic[4] = {'D', 'T', 'F', 'S'};
constexpr std::uint32_t kFeatVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

bool get_u32(std::istream& is, std::uint32_t& v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    v = static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
        static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
    return true;
}

}  // namespace

void write_features(const std::string& path, const FeatureSequence<float>& features) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path);
    os.write(kFeatMagic, 4);
    put_u32(os, kFeatVersion);
    put_u32(os, static_cast<std::uint32_t>(features.T()));
    put_u32(os, static_cast<std::uint32_t>(features.frames.dim(1)));
    for (float v : features.frames.values()) put_u32(os, std::bit_cast<std::uint32_t>(v));
    if (!os) throw IoError("write failed for " + path);
}

FeatureSequence<float> read_features(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kFeatMagic, 4) != 0)
        throw FormatError(path + ": bad magic, not a DTFS file");
    std::uint32_t version, T, d;
    if (!get_u32(is, version) || !get_u32(is, T) || !get_u32(is, d))
        throw LengthError(path + ": truncated header");
    if (version != kFeatVersion)
        throw FormatError(path + ": unsupported version " + std::to_string(version));
    if (T == 0 || d == 0 || T > (1u << 24) || d > (1u << 16))
        throw FormatError(path + ": implausible dimensions " + std::to_string(T) + "×" +
                          std::to_string(d));
    std::vector<float> data(static_cast<size_t>(T) * d);
    for (auto& v : data) {
        std::uint32_t bits;
        if (!get_u32(is, bits)) throw LengthError(path + ": truncated payload");
        v = std::bit_cast<float>(bits);
    }
    if (is.peek() != std::char_traits<char>::eof())
        throw FormatError(path + ": trailing bytes after payload");
    FeatureSequence<float> f;
    f.frames = Tensor<float>::from({static_cast<int>(T), static_cast<int>(d)}, std::move(data));
    f.pad_mask.assign(static_cast<size_t>(T), 1);
    return f;
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

DiarizationLabels ManifestRecord::labels(double shift) const {
    DiarizationLabels l;
    l.frame_shift_s = shift;
    l.activity.assign(speaker_ids.size(), std::vector<std::uint8_t>(static_cast<size_t>(frames), 0));
    for (size_t s = 0; s < segments.size(); ++s)
        for (auto [a, b] : segments[s]) {
            if (a < 0 || b >= frames || a > b)
                throw FormatError("record " + id + ": segment " + std::to_string(a) + "-" +
                                  std::to_string(b) + " outside 0-" + std::to_string(frames - 1));
            for (int t = a; t <= b; ++t) l.activity[s][static_cast<size_t>(t)] = 1;
        }
    return l;
}

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + path);
    char shift[64];
    std::snprintf(shift, sizeof shift, "%.17g", manifest.frame_shift_s);
    os << "dtmanifest v1\n";
    os << "seed " << manifest.seed << "\n";
    os << "d_feat " << manifest.d_feat << "\n";
    os << "frame_shift_s " << shift << "\n";
    os << "vocab_size " << manifest.vocab_size << "\n";
    for (const auto& r : manifest.records) {
        os << "record " << r.id << " " << r.path << " " << r.frames << " " << r.speaker_ids.size();
        for (size_t s = 0; s < r.speaker_ids.size(); ++s) {
            os << " " << r.speaker_ids[s] << " " << r.transcripts[s].size();
            for (int tok : r.transcripts[s]) os << " " << tok;
            os << " " << r.segments[s].size();
            for (auto [a, b] : r.segments[s]) os << " " << a << "-" << b;
        }
        os << "\n";
    }
    if (!os) throw IoError("write failed for " + path);
}

DatasetManifest read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line != "dtmanifest v1")
        throw FormatError(path + ": bad manifest header");
    DatasetManifest m;
    bool saw_seed = false, saw_dfeat = false, saw_shift = false, saw_vocab = false;
    int line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string key;
        ss >> key;
        auto fail = [&](const std::string& why) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": " + why);
        };
        if (key == "seed") {
            if (!(ss >> m.seed)) fail("bad seed");
            saw_seed = true;
        } else if (key == "d_feat") {
            if (!(ss >> m.d_feat)) fail("bad d_feat");
            saw_dfeat = true;
        } else if (key == "frame_shift_s") {
            if (!(ss >> m.frame_shift_s)) fail("bad frame_shift_s");
            saw_shift = true;
        } else if (key == "vocab_size") {
            if (!(ss >> m.vocab_size)) fail("bad vocab_size");
            saw_vocab = true;
        } else if (key == "record") {
            ManifestRecord r;
            size_t nspk;
            if (!(ss >> r.id >> r.path >> r.frames >> nspk)) fail("bad record header");
            if (r.frames < 1 || nspk < 1 || nspk > 8) fail("implausible record " + r.id);
            for (size_t s = 0; s < nspk; ++s) {
                int spk;
                size_t ntok, nseg;
                if (!(ss >> spk >> ntok)) fail("bad speaker clause in " + r.id);
                std::vector<int> toks(ntok);
                for (auto& t : toks)
                    if (!(ss >> t)) fail("bad transcript in " + r.id);
                if (!(ss >> nseg)) fail("bad segment count in " + r.id);
                std::vector<std::pair<int, int>> segs(nseg);
                for (auto& [a, b] : segs) {
                    char dash;
                    if (!(ss >> a >> dash >> b) || dash != '-') fail("bad segment in " + r.id);
                }
                r.speaker_ids.push_back(spk);
                r.transcripts.push_back(std::move(toks));
                r.segments.push_back(std::move(segs));
            }
            std::string extra;
            if (ss >> extra) fail("trailing tokens in record " + r.id);
            m.records.push_back(std::move(r));
        } else {
            fail("unknown manifest key '" + key + "'");
        }
    }
    if (!saw_seed || !saw_dfeat || !saw_shift || !saw_vocab)
        throw FormatError(path + ": incomplete manifest header");
    return m;
}

LoadedDataset read_dataset(const std::string& dir) {
    LoadedDataset ds;
    ds.manifest = read_manifest(dir + "/manifest.txt");
    ds.features.reserve(ds.manifest.records.size());
    for (const auto& r : ds.manifest.records) {
        FeatureSequence<float> f = read_features(dir + "/" + r.path);
        if (f.T() != r.frames)
            throw LengthError("record " + r.id + ": manifest declares " + std::to_string(r.frames) +
                              " frames, file has " + std::to_string(f.T()));
        if (f.frames.dim(1) != ds.manifest.d_feat)
            throw LengthError("record " + r.id + ": feature dim " + std::to_string(f.frames.dim(1)) +
                              " != manifest d_feat " + std::to_string(ds.manifest.d_feat));
        f.frame_shift_s = ds.manifest.frame_shift_s;
        ds.features.push_back(std::move(f));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// full corpus generation
// ---------------------------------------------------------------------------

namespace {

struct SplitPlan {
    const char* name;  // trn / dev / tst
    const char* dir;   // train / dev / test
    int count;
    int base;  // global index of the split's first item
};

std::string item_id(const std::string& prefix, const char* split, int global_index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06d", global_index);
    return prefix + "-" + split + "-" + buf;
}

void write_split(const std::string& dir, DatasetManifest manifest,
                 const std::vector<FeatureSequence<float>>& feats) {
    fs::create_directories(dir + "/feats");
    for (size_t i = 0; i < manifest.records.size(); ++i)
        write_features(dir + "/" + manifest.records[i].path, feats[i]);
    write_manifest(dir + "/manifest.txt", manifest);
}

}  // namespace

void generate_corpus(const CorpusConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    const auto templates = gen_token_templates(cfg.seed, cfg.n_content, cfg.d_feat);
    std::vector<SpeakerProfile> profiles;
    for (int s = 0; s < cfg.num_speakers; ++s)
        profiles.push_back(gen_speaker_profile(cfg.seed, s, cfg.d_feat));

    auto base_manifest = [&] {
        DatasetManifest m;
        m.seed = cfg.seed;
        m.d_feat = cfg.d_feat;
        m.frame_shift_s = cfg.frame_shift_s;
        m.vocab_size = cfg.vocab_size();
        return m;
    };

    // single-speaker ASR sets; the global index keeps draws disjoint per split
    {
        const SplitPlan plans[3] = {{"trn", "train", cfg.asr_train, 0},
                                    {"dev", "dev", cfg.asr_dev, cfg.asr_train},
                                    {"tst", "test", cfg.asr_test, cfg.asr_train + cfg.asr_dev}};
        for (const auto& plan : plans) {
            DatasetManifest manifest = base_manifest();
            std::vector<FeatureSequence<float>> feats;
            for (int i = 0; i < plan.count; ++i) {
                const int g = plan.base + i;
                Rng rng(mix64(cfg.seed, TAG_UTT, static_cast<std::uint64_t>(g)));
                const int spk = rng.uniform_int(cfg.num_speakers);
                const UtteranceSpec spec = sample_utterance_spec(
                    cfg, rng, spk, mix64(cfg.seed, TAG_JIT, static_cast<std::uint64_t>(g)));
                Utterance u = gen_utterance(spec, profiles[static_cast<size_t>(spk)], templates, cfg);
                ManifestRecord r;
                r.id = item_id("asr", plan.name, g);
                r.path = "feats/" + r.id + ".dtfs";
                r.frames = u.features.T();
                r.speaker_ids = {spk};
                r.transcripts = {u.tokens};
                r.segments = {{{0, r.frames - 1}}};
                manifest.records.push_back(std::move(r));
                feats.push_back(std::move(u.features));
            }
            write_split(out_dir + "/asr/" + plan.dir, std::move(manifest), feats);
        }
    }

    // mixture sets, one directory tree per scenario
    for (int sc = 0; sc < 4; ++sc) {
        const auto scenario = static_cast<Scenario>(sc);
        const std::string prefix = std::string("mix") + scenario_name(scenario);
        const SplitPlan plans[3] = {{"trn", "train", cfg.mix_train, 0},
                                    {"dev", "dev", cfg.mix_dev, cfg.mix_train},
                                    {"tst", "test", cfg.mix_test, cfg.mix_train + cfg.mix_dev}};
        for (const auto& plan : plans) {
            DatasetManifest manifest = base_manifest();
            std::vector<FeatureSequence<float>> feats;
            for (int i = 0; i < plan.count; ++i) {
                const int g = plan.base + i;
                Rng rng(mix64(cfg.seed, TAG_MIX + static_cast<std::uint64_t>(sc),
                              static_cast<std::uint64_t>(g)));
                const int n_src = scenario == Scenario::noise_single ? 1 : 2;
                std::vector<int> spk(static_cast<size_t>(n_src));
                spk[0] = rng.uniform_int(cfg.num_speakers);
                if (n_src == 2) {
                    spk[1] = rng.uniform_int(cfg.num_speakers - 1);
                    if (spk[1] >= spk[0]) ++spk[1];
                }
                std::vector<Utterance> sources;
                for (int k = 0; k < n_src; ++k) {
                    const UtteranceSpec spec = sample_utterance_spec(
                        cfg, rng, spk[static_cast<size_t>(k)],
                        mix64(cfg.seed, TAG_MIXJIT + static_cast<std::uint64_t>(sc),
                              static_cast<std::uint64_t>(g) * 2 + static_cast<std::uint64_t>(k)));
                    sources.push_back(
                        gen_utterance(spec, profiles[static_cast<size_t>(spk[static_cast<size_t>(k)])],
                                      templates, cfg));
                }
                Mixture mix = mix_mixture(scenario, sources, cfg, rng);
                ManifestRecord r;
                r.id = item_id(prefix, plan.name, g);
                r.path = "feats/" + r.id + ".dtfs";
                r.frames = mix.features.T();
                r.speaker_ids = mix.speaker_ids;
                r.transcripts = mix.transcripts;
                r.segments = mix.segments;
                manifest.records.push_back(std::move(r));
                feats.push_back(std::move(mix.features));
            }
            write_split(out_dir + "/" + prefix + "/" + plan.dir, std::move(manifest), feats);
        }
    }
}

}  // namespace dt::corpus
