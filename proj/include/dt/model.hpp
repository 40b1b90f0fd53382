#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "dt/ops.hpp"

namespace dt {

struct ModelConfig {
    int d_feat = 40;
    int d_model = 64;
    int num_heads = 4;
    int head_dim = 16;
    int ff_inner = 256;
    int enc_layers = 4;
    int dec_layers = 2;
    std::vector<int> disentangled_layers = {4};  // 1-based encoder layer indices
    int speaker_head = 4;                        // 1-based head index
    int vocab_size = 23;                         // blank + sos + eos + content
    double dropout_rate = 0.1;
    double lambda_s = 0.1;
    int max_len = 2048;

    // reserved token ids
    static constexpr int blank_id = 0;
    static constexpr int sos_id = 1;
    static constexpr int eos_id = 2;
    static constexpr int first_content_id = 3;

    void validate() const {
        if (d_model != num_heads * head_dim)
            throw ConfigError("model: d_model " + std::to_string(d_model) + " != num_heads*head_dim " +
                              std::to_string(num_heads * head_dim));
        if (speaker_head < 1 || speaker_head > num_heads)
            throw ConfigError("model: speaker_head " + std::to_string(speaker_head) +
                              " outside [1, " + std::to_string(num_heads) + "]");
        for (int l : disentangled_layers)
            if (l < 1 || l > enc_layers)
                throw ConfigError("model: disentangled layer " + std::to_string(l) +
                                  " outside [1, " + std::to_string(enc_layers) + "]");
        if (lambda_s < 0) throw ConfigError("model: lambda_s must be >= 0");
        if (d_feat < 1 || ff_inner < 1 || enc_layers < 1 || dec_layers < 1 || max_len < 1)
            throw ConfigError("model: dimensions must be positive");
        if (vocab_size <= first_content_id)
            throw ConfigError("model: vocab_size must exceed the reserved ids");
        if (dropout_rate < 0 || dropout_rate >= 1)
            throw ConfigError("model: dropout_rate must be in [0, 1)");
    }

    bool is_disentangled(int layer_1based) const {
        return std::find(disentangled_layers.begin(), disentangled_layers.end(), layer_1based) !=
               disentangled_layers.end();
    }
};

template <class Real>
struct FeatureSequence {
    Tensor<Real> frames;  // T×d_feat
    double frame_shift_s = 0.01;
    std::vector<std::uint8_t> pad_mask;  // nonzero = real frame, zero = padding

    int T() const { return frames.dim(0); }
};

// Named parameter registry with stable iteration order (checkpoint layout,
// optimizer slot order).
template <class Real>
class ParamStore {
public:
    Tensor<Real>& add(const std::string& name, Tensor<Real> t) {
        if (index_.count(name)) throw ContractError("ParamStore: duplicate name " + name);
        index_[name] = order_.size();
        order_.push_back(name);
        tensors_.push_back(std::move(t));
        return tensors_.back();
    }
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    Tensor<Real>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("ParamStore: unknown name " + name);
        return tensors_[it->second];
    }
    const Tensor<Real>& get(const std::string& name) const {
        return const_cast<ParamStore*>(this)->get(name);
    }
    const std::vector<std::string>& names() const { return order_; }
    size_t size() const { return order_.size(); }
    Tensor<Real>& at(size_t i) { return tensors_[i]; }
    const Tensor<Real>& at(size_t i) const { return tensors_[i]; }

    std::vector<Tensor<Real>> trainable() {
        std::vector<Tensor<Real>> out;
        for (auto& t : tensors_)
            if (t.requires_grad()) out.push_back(t);
        return out;
    }
    void zero_grads() {
        for (auto& t : tensors_) t.zero_grad();
    }
    long num_values() const {
        long n = 0;
        for (const auto& t : tensors_) n += t.numel();
        return n;
    }

private:
    std::vector<std::string> order_;
    std::vector<Tensor<Real>> tensors_;
    std::unordered_map<std::string, size_t> index_;
};

template <class Real>
struct EncoderOutput {
    Tensor<Real> states;                             // T×d_model
    std::vector<std::vector<Tensor<Real>>> head_tracks;  // [layer][head] T×d_v
    std::map<int, Tensor<Real>> speaker_tracks;      // 1-based layer → aliased head track
};

// ---------------------------------------------------------------------------
// construction
// ---------------------------------------------------------------------------

namespace detail {

template <class Real>
inline Tensor<Real> glorot(Rng& rng, int out_dim, int in_dim) {
    const double s = std::sqrt(6.0 / (out_dim + in_dim));
    std::vector<Real> v(static_cast<size_t>(out_dim) * in_dim);
    for (auto& x : v) x = static_cast<Real>(rng.uniform(-s, s));
    return Tensor<Real>::from({out_dim, in_dim}, std::move(v));
}

template <class Real>
inline void add_attention_block(ParamStore<Real>& p, Rng& rng, const std::string& prefix,
                                const ModelConfig& cfg) {
    for (int h = 1; h <= cfg.num_heads; ++h) {
        const std::string hp = prefix + ".h." + std::to_string(h);
        p.add(hp + ".q", glorot<Real>(rng, cfg.head_dim, cfg.d_model));
        p.add(hp + ".k", glorot<Real>(rng, cfg.head_dim, cfg.d_model));
        p.add(hp + ".v", glorot<Real>(rng, cfg.head_dim, cfg.d_model));
    }
    p.add(prefix + ".wo", glorot<Real>(rng, cfg.d_model, cfg.num_heads * cfg.head_dim));
}

template <class Real>
inline void add_ln(ParamStore<Real>& p, const std::string& prefix, int d) {
    p.add(prefix + ".g", Tensor<Real>::full({d}, Real(1)));
    p.add(prefix + ".b", Tensor<Real>::zeros({d}));
}

template <class Real>
inline void add_ff(ParamStore<Real>& p, Rng& rng, const std::string& prefix,
                   const ModelConfig& cfg) {
    p.add(prefix + ".w1", glorot<Real>(rng, cfg.ff_inner, cfg.d_model));
    p.add(prefix + ".b1", Tensor<Real>::zeros({cfg.ff_inner}));
    p.add(prefix + ".w2", glorot<Real>(rng, cfg.d_model, cfg.ff_inner));
    p.add(prefix + ".b2", Tensor<Real>::zeros({cfg.d_model}));
}

}  // namespace detail

// Full encoder/decoder parameter set; plain and disentangled layers share one
// layout, so the parameter count never depends on the disentangled set.
template <class Real>
ParamStore<Real> init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamStore<Real> p;
    Rng rng(mix64(seed, 0x9e3779b97f4a7c15ull));
    p.add("frontend.w", detail::glorot<Real>(rng, cfg.d_model, cfg.d_feat));
    p.add("frontend.b", Tensor<Real>::zeros({cfg.d_model}));
    detail::add_ln(p, "frontend.ln", cfg.d_model);
    for (int l = 1; l <= cfg.enc_layers; ++l) {
        const std::string lp = "enc." + std::to_string(l);
        detail::add_ln(p, lp + ".ln1", cfg.d_model);
        detail::add_attention_block(p, rng, lp, cfg);
        detail::add_ln(p, lp + ".ln2", cfg.d_model);
        detail::add_ff(p, rng, lp + ".ff", cfg);
    }
    detail::add_ln(p, "enc.final_ln", cfg.d_model);
    p.add("ctc.w", detail::glorot<Real>(rng, cfg.vocab_size, cfg.d_model));
    p.add("ctc.b", Tensor<Real>::zeros({cfg.vocab_size}));

    p.add("dec.embed", detail::glorot<Real>(rng, cfg.vocab_size, cfg.d_model));
    for (int l = 1; l <= cfg.dec_layers; ++l) {
        const std::string lp = "dec." + std::to_string(l);
        detail::add_ln(p, lp + ".ln1", cfg.d_model);
        detail::add_attention_block(p, rng, lp + ".self", cfg);
        detail::add_ln(p, lp + ".ln2", cfg.d_model);
        detail::add_attention_block(p, rng, lp + ".cross", cfg);
        detail::add_ln(p, lp + ".ln3", cfg.d_model);
        detail::add_ff(p, rng, lp + ".ff", cfg);
    }
    detail::add_ln(p, "dec.final_ln", cfg.d_model);
    p.add("dec.out.w", detail::glorot<Real>(rng, cfg.vocab_size, cfg.d_model));
    p.add("dec.out.b", Tensor<Real>::zeros({cfg.vocab_size}));
    for (size_t i = 0; i < p.size(); ++i) p.at(i).set_requires_grad(true);
    return p;
}

// ---------------------------------------------------------------------------
// forward pieces
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> positional_encoding(int T, int d_model, int max_len) {
    if (T > max_len)
        throw LengthError("positional_encoding: T " + std::to_string(T) + " exceeds max_len " +
                          std::to_string(max_len));
    Tensor<Real> pe = Tensor<Real>::zeros({T, d_model});
    auto v = pe.values();
    for (int t = 0; t < T; ++t)
        for (int i = 0; i * 2 < d_model; ++i) {
            const double freq = std::pow(10000.0, -2.0 * i / d_model);
            v[static_cast<size_t>(t) * d_model + 2 * i] = static_cast<Real>(std::sin(t * freq));
            if (2 * i + 1 < d_model)
                v[static_cast<size_t>(t) * d_model + 2 * i + 1] = static_cast<Real>(std::cos(t * freq));
        }
    return pe;
}

namespace detail {

template <class Real>
inline void check_finite(const Tensor<Real>& t, const std::string& where) {
    for (Real v : t.values())
        if (!std::isfinite(v)) throw NumericError(where + " produced non-finite activations");
}

// mask[i*Tk + j] = query i may attend to key j
template <class Real>
Tensor<Real> attention_head(const Tensor<Real>& x_q, const Tensor<Real>& x_kv,
                            const Tensor<Real>& wq, const Tensor<Real>& wk, const Tensor<Real>& wv,
                            const std::vector<std::uint8_t>& mask) {
    Tensor<Real> q = matmul_nt(x_q, wq);
    Tensor<Real> k = matmul_nt(x_kv, wk);
    Tensor<Real> v = matmul_nt(x_kv, wv);
    const Real inv_sqrt_dk = Real(1) / std::sqrt(static_cast<Real>(wq.dim(0)));
    Tensor<Real> scores = scale(matmul_nt(q, k), inv_sqrt_dk);
    return matmul(masked_softmax(scores, mask), v);
}

struct DropoutCtx {
    Rng* rng = nullptr;
    double rate = 0;
    bool active() const { return rng != nullptr && rate > 0; }
};

template <class Real>
inline Tensor<Real> maybe_dropout(const Tensor<Real>& x, const DropoutCtx& ctx) {
    return ctx.active() ? dropout(x, static_cast<Real>(ctx.rate), *ctx.rng) : x;
}

template <class Real>
Tensor<Real> mhsa(const Tensor<Real>& x_q, const Tensor<Real>& x_kv, const ParamStore<Real>& p,
                  const std::string& prefix, int num_heads, const std::vector<std::uint8_t>& mask,
                  std::vector<Tensor<Real>>* head_outputs = nullptr) {
    std::vector<Tensor<Real>> heads;
    heads.reserve(static_cast<size_t>(num_heads));
    for (int h = 1; h <= num_heads; ++h) {
        const std::string hp = prefix + ".h." + std::to_string(h);
        heads.push_back(attention_head(x_q, x_kv, p.get(hp + ".q"), p.get(hp + ".k"),
                                       p.get(hp + ".v"), mask));
    }
    if (head_outputs) *head_outputs = heads;
    return matmul_nt(concat(heads, 1), p.get(prefix + ".wo"));
}

template <class Real>
Tensor<Real> feed_forward(const Tensor<Real>& x, const ParamStore<Real>& p,
                          const std::string& prefix) {
    Tensor<Real> h = relu(add_rowwise(matmul_nt(x, p.get(prefix + ".w1")), p.get(prefix + ".b1")));
    return add_rowwise(matmul_nt(h, p.get(prefix + ".w2")), p.get(prefix + ".b2"));
}

template <class Real>
inline Tensor<Real> ln(const Tensor<Real>& x, const ParamStore<Real>& p, const std::string& prefix) {
    return layer_norm(x, p.get(prefix + ".g"), p.get(prefix + ".b"));
}

inline std::vector<std::uint8_t> self_mask(const std::vector<std::uint8_t>& valid) {
    const size_t T = valid.size();
    std::vector<std::uint8_t> m(T * T);
    for (size_t i = 0; i < T; ++i)
        for (size_t j = 0; j < T; ++j) m[i * T + j] = valid[j];
    return m;
}

}  // namespace detail

template <class Real>
EncoderOutput<Real> encoder_forward(const FeatureSequence<Real>& features, const ModelConfig& cfg,
                                    const ParamStore<Real>& p,
                                    detail::DropoutCtx drop = {}) {
    const int T = features.T();
    if (T < 1) throw ContractError("encoder_forward: empty feature sequence");
    if (features.frames.dim(1) != cfg.d_feat)
        throw ShapeError("encoder_forward: feature dim " + std::to_string(features.frames.dim(1)) +
                         " != d_feat " + std::to_string(cfg.d_feat));
    std::vector<std::uint8_t> valid = features.pad_mask;
    if (valid.empty()) valid.assign(static_cast<size_t>(T), 1);
    if (static_cast<int>(valid.size()) != T)
        throw ShapeError("encoder_forward: pad_mask length mismatch");
    if (std::find(valid.begin(), valid.end(), std::uint8_t(1)) == valid.end())
        throw ContractError("encoder_forward: all frames padded");

    // frontend: project, normalize per frame, add positional encoding
    Tensor<Real> x = add_rowwise(matmul_nt(features.frames, p.get("frontend.w")), p.get("frontend.b"));
    x = detail::ln(x, p, "frontend.ln");
    x = add(x, positional_encoding<Real>(T, cfg.d_model, cfg.max_len));
    x = detail::maybe_dropout(x, drop);

    const std::vector<std::uint8_t> mask = detail::self_mask(valid);
    EncoderOutput<Real> out;
    for (int l = 1; l <= cfg.enc_layers; ++l) {
        const std::string lp = "enc." + std::to_string(l);
        std::vector<Tensor<Real>> heads;
        Tensor<Real> xn = detail::ln(x, p, lp + ".ln1");
        Tensor<Real> a = detail::mhsa(xn, xn, p, lp, cfg.num_heads, mask, &heads);
        x = add(x, detail::maybe_dropout(a, drop));
        Tensor<Real> f = detail::feed_forward(detail::ln(x, p, lp + ".ln2"), p, lp + ".ff");
        x = add(x, detail::maybe_dropout(f, drop));
        detail::check_finite(x, "encoder layer " + std::to_string(l));
        out.head_tracks.push_back(std::move(heads));
        if (cfg.is_disentangled(l))
            out.speaker_tracks.emplace(l, out.head_tracks.back()[static_cast<size_t>(cfg.speaker_head - 1)]);
    }
    out.states = detail::ln(x, p, "enc.final_ln");
    return out;
}

// Per-position next-token logits for a teacher-forced (or partial) prefix
// starting with sos. Causal over tokens, cross-attention restricted to
// unpadded encoder frames.
template <class Real>
Tensor<Real> decoder_forward(const std::vector<int>& tokens, const Tensor<Real>& encoder_states,
                             const std::vector<std::uint8_t>& enc_valid, const ModelConfig& cfg,
                             const ParamStore<Real>& p, detail::DropoutCtx drop = {}) {
    if (tokens.empty() || tokens[0] != ModelConfig::sos_id)
        throw ContractError("decoder_forward: token prefix must start with sos");
    for (int id : tokens)
        if (id < 0 || id >= cfg.vocab_size)
            throw BoundsError("decoder_forward: token id " + std::to_string(id) +
                              " outside vocab of " + std::to_string(cfg.vocab_size));
    const int L = static_cast<int>(tokens.size());
    const int T = encoder_states.dim(0);
    if (static_cast<int>(enc_valid.size()) != T)
        throw ShapeError("decoder_forward: encoder mask length mismatch");

    Tensor<Real> x = scale(gather_rows(p.get("dec.embed"), tokens),
                           static_cast<Real>(std::sqrt(static_cast<double>(cfg.d_model))));
    x = add(x, positional_encoding<Real>(L, cfg.d_model, cfg.max_len));
    x = detail::maybe_dropout(x, drop);

    std::vector<std::uint8_t> causal(static_cast<size_t>(L) * L, 0);
    for (int i = 0; i < L; ++i)
        for (int j = 0; j <= i; ++j) causal[static_cast<size_t>(i) * L + j] = 1;
    std::vector<std::uint8_t> cross(static_cast<size_t>(L) * T);
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < T; ++j) cross[static_cast<size_t>(i) * T + j] = enc_valid[static_cast<size_t>(j)];

    for (int l = 1; l <= cfg.dec_layers; ++l) {
        const std::string lp = "dec." + std::to_string(l);
        Tensor<Real> xn = detail::ln(x, p, lp + ".ln1");
        Tensor<Real> a = detail::mhsa(xn, xn, p, lp + ".self", cfg.num_heads, causal);
        x = add(x, detail::maybe_dropout(a, drop));
        Tensor<Real> c = detail::mhsa(detail::ln(x, p, lp + ".ln2"), encoder_states, p, lp + ".cross",
                                      cfg.num_heads, cross);
        x = add(x, detail::maybe_dropout(c, drop));
        Tensor<Real> f = detail::feed_forward(detail::ln(x, p, lp + ".ln3"), p, lp + ".ff");
        x = add(x, detail::maybe_dropout(f, drop));
        detail::check_finite(x, "decoder layer " + std::to_string(l));
    }
    x = detail::ln(x, p, "dec.final_ln");
    return add_rowwise(matmul_nt(x, p.get("dec.out.w")), p.get("dec.out.b"));
}

template <class Real>
Tensor<Real> ctc_head(const Tensor<Real>& encoder_states, const ParamStore<Real>& p) {
    return add_rowwise(matmul_nt(encoder_states, p.get("ctc.w")), p.get("ctc.b"));
}

// Pure read of a recorded per-head track; 1-based indices to match config.
template <class Real>
const Tensor<Real>& extract_head_embeddings(const EncoderOutput<Real>& out, int layer, int head) {
    if (layer < 1 || layer > static_cast<int>(out.head_tracks.size()))
        throw BoundsError("extract_head_embeddings: layer " + std::to_string(layer) + " out of range");
    const auto& heads = out.head_tracks[static_cast<size_t>(layer - 1)];
    if (head < 1 || head > static_cast<int>(heads.size()))
        throw BoundsError("extract_head_embeddings: head " + std::to_string(head) + " out of range");
    return heads[static_cast<size_t>(head - 1)];
}

}  // namespace dt
