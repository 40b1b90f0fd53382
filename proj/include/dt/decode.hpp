#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "dt/model.hpp"
#include "dt/objectives.hpp"

namespace dt {

// frame-wise argmax, collapse repeats, drop blanks
template <class Real>
std::vector<int> ctc_greedy_decode(const Tensor<Real>& logits) {
    if (logits.rank() != 2) throw ShapeError("ctc_greedy_decode: logits must be T×vocab");
    const int T = logits.dim(0), V = logits.dim(1);
    auto lv = logits.values();
    std::vector<int> out;
    int prev = -1;
    for (int t = 0; t < T; ++t) {
        int best = 0;
        for (int k = 1; k < V; ++k)
            if (lv[static_cast<size_t>(t) * V + k] > lv[static_cast<size_t>(t) * V + best]) best = k;
        if (best != prev && best != kBlankId) out.push_back(best);
        prev = best;
    }
    return out;
}

// Incremental CTC prefix scoring over a fixed log-probability lattice
// (Graves prefix decomposition with the blank/non-blank split). A state holds,
// per frame t, the log-probability that frames 0..t collapse exactly to the
// prefix with the path ending in the prefix's last symbol (rn) or in blank
// (rb). Extension by one symbol is O(T) and matches full recomputation.
class CtcPrefixScorer {
public:
    struct State {
        std::vector<double> rn, rb;
        int last = -1;  // last symbol of the prefix, -1 for empty
    };

    template <class Real>
    CtcPrefixScorer(const Tensor<Real>& logits, int blank = kBlankId)
        : T_(logits.dim(0)), V_(logits.dim(1)), blank_(blank) {
        if (logits.rank() != 2) throw ShapeError("CtcPrefixScorer: logits must be T×vocab");
        auto lv = logits.values();
        y_.resize(static_cast<size_t>(T_) * V_);
        for (int t = 0; t < T_; ++t) {
            double mx = lv[static_cast<size_t>(t) * V_];
            for (int k = 1; k < V_; ++k)
                mx = std::max(mx, static_cast<double>(lv[static_cast<size_t>(t) * V_ + k]));
            double denom = 0;
            for (int k = 0; k < V_; ++k)
                denom += std::exp(static_cast<double>(lv[static_cast<size_t>(t) * V_ + k]) - mx);
            const double lse = mx + std::log(denom);
            for (int k = 0; k < V_; ++k)
                y_[static_cast<size_t>(t) * V_ + k] =
                    static_cast<double>(lv[static_cast<size_t>(t) * V_ + k]) - lse;
        }
    }

    int frames() const { return T_; }
    int vocab() const { return V_; }

    State initial() const {
        State s;
        s.rn.assign(static_cast<size_t>(T_), kNegInf);
        s.rb.resize(static_cast<size_t>(T_));
        double acc = 0;
        for (int t = 0; t < T_; ++t) {
            acc += y(t, blank_);
            s.rb[static_cast<size_t>(t)] = acc;
        }
        return s;
    }

    // extend the prefix by c; psi receives log P(c-extended prefix)
    State extend(const State& st, int c, double& psi) const {
        if (c < 0 || c >= V_ || c == blank_)
            throw BoundsError("CtcPrefixScorer: invalid extension symbol " + std::to_string(c));
        State out;
        out.last = c;
        out.rn.assign(static_cast<size_t>(T_), kNegInf);
        out.rb.assign(static_cast<size_t>(T_), kNegInf);
        psi = kNegInf;
        double rn_prev = kNegInf, rb_prev = kNegInf;
        for (int t = 0; t < T_; ++t) {
            // phi: prefix complete by t-1 and able to start a fresh c
            const double phi_prev =
                t == 0 ? (st.last == -1 ? 0.0 : kNegInf)
                       : (c == st.last ? st.rb[static_cast<size_t>(t - 1)]
                                       : detail::logsumexp2(st.rb[static_cast<size_t>(t - 1)],
                                                            st.rn[static_cast<size_t>(t - 1)]));
            const double emit = y(t, c) + phi_prev;
            psi = detail::logsumexp2(psi, emit);
            out.rn[static_cast<size_t>(t)] = y(t, c) + detail::logsumexp2(rn_prev, phi_prev);
            out.rb[static_cast<size_t>(t)] = y(t, blank_) + detail::logsumexp2(rb_prev, rn_prev);
            rn_prev = out.rn[static_cast<size_t>(t)];
            rb_prev = out.rb[static_cast<size_t>(t)];
        }
        return out;
    }

    // log P(output == prefix), for eos termination
    double complete_score(const State& st) const {
        return detail::logsumexp2(st.rn[static_cast<size_t>(T_ - 1)], st.rb[static_cast<size_t>(T_ - 1)]);
    }

private:
    double y(int t, int k) const { return y_[static_cast<size_t>(t) * V_ + k]; }
    int T_, V_, blank_;
    std::vector<double> y_;
};

// ---------------------------------------------------------------------------
// joint CTC/attention beam search
// ---------------------------------------------------------------------------

struct BeamConfig {
    int beam_size = 8;
    double ctc_weight = 0.3;
    int max_output_len = 32;
    double length_penalty = 0.0;

    void validate() const {
        if (beam_size < 1) throw ConfigError("beam search: beam_size must be >= 1");
        if (ctc_weight < 0 || ctc_weight > 1)
            throw ConfigError("beam search: ctc_weight must be in [0, 1]");
        if (max_output_len < 1) throw ConfigError("beam search: max_output_len must be >= 1");
    }
};

struct BeamSearchResult {
    std::vector<int> tokens;  // content tokens, no sos/eos
    double score = kNegInf;
    bool truncated = false;
};

namespace detail {

struct BeamHyp {
    std::vector<int> tokens;
    double attn = 0;
    double combined = 0;
    CtcPrefixScorer::State ctc;
    double ctc_psi = 0;
};

// score descending, then lexicographically smaller token sequence
inline bool beam_better(const BeamHyp& a, const BeamHyp& b) {
    if (a.combined != b.combined) return a.combined > b.combined;
    return a.tokens < b.tokens;
}

}  // namespace detail

// One-pass search maximizing λ_ctc·(CTC prefix score) + (1−λ_ctc)·(attention
// log-probability). eos closes a hypothesis with the CTC complete-sequence
// score; with λ_ctc > 0 a prefix the lattice cannot terminate scores −∞ and
// drops out naturally.
template <class Real>
BeamSearchResult joint_beam_search(const Tensor<Real>& encoder_states,
                                   const std::vector<std::uint8_t>& enc_valid,
                                   const ModelConfig& cfg, const ParamStore<Real>& params,
                                   const Tensor<Real>& ctc_logits, const BeamConfig& bc) {
    bc.validate();
    const CtcPrefixScorer scorer(ctc_logits);
    const double lam = bc.ctc_weight;
    auto mix = [lam](double ctc, double attn) {
        double s = 0;
        if (lam > 0) s += lam * ctc;
        if (lam < 1) s += (1 - lam) * attn;
        return s;
    };

    std::vector<detail::BeamHyp> live(1);
    live[0].ctc = scorer.initial();
    live[0].combined = mix(0.0, 0.0);
    std::vector<detail::BeamHyp> finished;

    auto finish = [&](const detail::BeamHyp& h, double eos_logprob) {
        detail::BeamHyp f = h;
        f.attn += eos_logprob;
        const double ctc_final = scorer.complete_score(h.ctc);
        f.combined = mix(ctc_final, f.attn) + bc.length_penalty * static_cast<double>(f.tokens.size());
        // a prefix the lattice cannot terminate is not a real finish
        if (std::isnan(f.combined) || f.combined == kNegInf) return;
        finished.push_back(std::move(f));
    };

    for (int round = 0; round < bc.max_output_len && !live.empty(); ++round) {
        std::vector<detail::BeamHyp> candidates;
        for (const auto& h : live) {
            std::vector<int> prefix(1, ModelConfig::sos_id);
            prefix.insert(prefix.end(), h.tokens.begin(), h.tokens.end());
            Tensor<Real> logits = decoder_forward(prefix, encoder_states, enc_valid, cfg, params);
            // log-softmax of the last row, in double
            const int V = logits.dim(1);
            auto lv = logits.values();
            const size_t off = static_cast<size_t>(logits.dim(0) - 1) * V;
            double mx = lv[off];
            for (int k = 1; k < V; ++k) mx = std::max(mx, static_cast<double>(lv[off + k]));
            double denom = 0;
            for (int k = 0; k < V; ++k) denom += std::exp(static_cast<double>(lv[off + k]) - mx);
            const double lse = mx + std::log(denom);
            for (int c = 0; c < V; ++c) {
                if (c == ModelConfig::sos_id || c == kBlankId) continue;
                const double lp = static_cast<double>(lv[off + c]) - lse;
                if (c == ModelConfig::eos_id) {
                    finish(h, lp);
                    continue;
                }
                detail::BeamHyp n;
                n.tokens = h.tokens;
                n.tokens.push_back(c);
                n.attn = h.attn + lp;
                double psi;
                n.ctc = scorer.extend(h.ctc, c, psi);
                n.ctc_psi = psi;
                n.combined = mix(psi, n.attn);
                if (n.combined == kNegInf) continue;
                candidates.push_back(std::move(n));
            }
        }
        std::sort(candidates.begin(), candidates.end(), detail::beam_better);
        if (static_cast<int>(candidates.size()) > bc.beam_size)
            candidates.resize(static_cast<size_t>(bc.beam_size));
        live = std::move(candidates);
    }
    // hypotheses at the length cap still get their eos chance
    for (const auto& h : live) {
        std::vector<int> prefix(1, ModelConfig::sos_id);
        prefix.insert(prefix.end(), h.tokens.begin(), h.tokens.end());
        Tensor<Real> logits = decoder_forward(prefix, encoder_states, enc_valid, cfg, params);
        const int V = logits.dim(1);
        auto lv = logits.values();
        const size_t off = static_cast<size_t>(logits.dim(0) - 1) * V;
        double mx = lv[off];
        for (int k = 1; k < V; ++k) mx = std::max(mx, static_cast<double>(lv[off + k]));
        double denom = 0;
        for (int k = 0; k < V; ++k) denom += std::exp(static_cast<double>(lv[off + k]) - mx);
        finish(h, static_cast<double>(lv[off + ModelConfig::eos_id]) - (mx + std::log(denom)));
    }

    BeamSearchResult result;
    if (!finished.empty()) {
        auto best = std::min_element(finished.begin(), finished.end(),
                                     [](const auto& a, const auto& b) { return detail::beam_better(a, b); });
        result.tokens = best->tokens;
        result.score = best->combined;
        result.truncated = false;
    } else if (!live.empty()) {
        auto best = std::min_element(live.begin(), live.end(),
                                     [](const auto& a, const auto& b) { return detail::beam_better(a, b); });
        result.tokens = best->tokens;
        result.score = best->combined;
        result.truncated = true;
    } else {
        result.truncated = true;
    }
    return result;
}

}  // namespace dt
