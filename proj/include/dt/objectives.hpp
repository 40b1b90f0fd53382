#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "dt/labels.hpp"
#include "dt/ops.hpp"

namespace dt {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr int kBlankId = 0;

namespace detail {

inline double logsumexp2(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}
inline double logsumexp3(double a, double b, double c) { return logsumexp2(logsumexp2(a, b), c); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Time-invariant regularizer
// ---------------------------------------------------------------------------

// λ_s·(1/L)·Σ_tracks (1/√d_s)·Σ_t (‖s_{t+1}−s_t‖ + ‖s_{t+5}−s_t‖), summed
// over index pairs whose endpoints are both unpadded. With λ_s = 0 the result
// is an untaped constant so the training step is bit-identical to a baseline
// with no regularizer at all.
template <class Real>
Tensor<Real> time_invariant_loss(const std::vector<Tensor<Real>>& tracks, double lambda_s,
                                 const std::vector<std::uint8_t>& pad_mask = {}) {
    if (tracks.empty()) throw ContractError("time_invariant_loss: empty track list");
    if (lambda_s < 0) throw DomainError("time_invariant_loss: lambda_s must be >= 0");
    if (lambda_s == 0) return Tensor<Real>::scalar(Real(0));

    Tensor<Real> acc = Tensor<Real>::scalar(Real(0));
    for (const auto& track : tracks) {
        if (track.rank() != 2 || track.dim(0) < 2)
            throw ContractError("time_invariant_loss: track must be T×d with T >= 2");
        const int T = track.dim(0), d_s = track.dim(1);
        auto valid = [&](int t) {
            return pad_mask.empty() || (t < static_cast<int>(pad_mask.size()) && pad_mask[static_cast<size_t>(t)]);
        };
        Tensor<Real> track_sum = Tensor<Real>::scalar(Real(0));
        for (int lag : {1, 5}) {
            std::vector<int> from, to;
            for (int t = 0; t + lag < T; ++t)
                if (valid(t) && valid(t + lag)) {
                    from.push_back(t);
                    to.push_back(t + lag);
                }
            if (from.empty()) continue;
            Tensor<Real> diff = sub(gather_rows(track, to), gather_rows(track, from));
            track_sum = add(track_sum, sum_all(row_l2norm(diff)));
        }
        acc = add(acc, scale(track_sum, static_cast<Real>(1.0 / std::sqrt(static_cast<double>(d_s)))));
    }
    return scale(acc, static_cast<Real>(lambda_s / static_cast<double>(tracks.size())));
}

// ---------------------------------------------------------------------------
// CTC
// ---------------------------------------------------------------------------

template <class Real>
struct CtcResult {
    Tensor<Real> loss;     // scalar; +inf (untaped) when infeasible
    bool feasible = true;
};

// −log P(target | logits) by the log-space forward recursion over the
// blank-interleaved lattice. Recorded as one fused node; the backward rule is
// softmax − lattice posterior, computed from the alpha/beta pass.
template <class Real>
CtcResult<Real> ctc_loss(const Tensor<Real>& logits, const std::vector<int>& target) {
    if (logits.rank() != 2) throw ShapeError("ctc_loss: logits must be T×vocab");
    const int T = logits.dim(0), V = logits.dim(1);
    for (int id : target) {
        if (id == kBlankId) throw ContractError("ctc_loss: target contains blank");
        if (id < 0 || id >= V)
            throw BoundsError("ctc_loss: target id " + std::to_string(id) + " outside vocab " +
                              std::to_string(V));
    }
    const int U = static_cast<int>(target.size());
    const int S = 2 * U + 1;
    std::vector<int> ext(static_cast<size_t>(S), 0);
    for (int u = 0; u < U; ++u) ext[static_cast<size_t>(2 * u + 1)] = target[static_cast<size_t>(u)];

    // log-softmax in double for the recursion
    std::vector<double> y(static_cast<size_t>(T) * V);
    auto lv = logits.values();
    for (int t = 0; t < T; ++t) {
        double mx = lv[static_cast<size_t>(t) * V];
        for (int k = 1; k < V; ++k) mx = std::max(mx, static_cast<double>(lv[static_cast<size_t>(t) * V + k]));
        double denom = 0;
        for (int k = 0; k < V; ++k) denom += std::exp(static_cast<double>(lv[static_cast<size_t>(t) * V + k]) - mx);
        const double lse = mx + std::log(denom);
        for (int k = 0; k < V; ++k)
            y[static_cast<size_t>(t) * V + k] = static_cast<double>(lv[static_cast<size_t>(t) * V + k]) - lse;
    }
    auto yv = [&](int t, int k) { return y[static_cast<size_t>(t) * V + k]; };

    std::vector<double> alpha(static_cast<size_t>(T) * S, kNegInf);
    alpha[0] = yv(0, ext[0]);
    if (S > 1) alpha[1] = yv(0, ext[1]);
    for (int t = 1; t < T; ++t)
        for (int s = 0; s < S; ++s) {
            double best = alpha[static_cast<size_t>(t - 1) * S + s];
            if (s >= 1) best = detail::logsumexp2(best, alpha[static_cast<size_t>(t - 1) * S + s - 1]);
            if (s >= 2 && ext[static_cast<size_t>(s)] != ext[static_cast<size_t>(s - 2)])
                best = detail::logsumexp2(best, alpha[static_cast<size_t>(t - 1) * S + s - 2]);
            if (best != kNegInf) alpha[static_cast<size_t>(t) * S + s] = best + yv(t, ext[static_cast<size_t>(s)]);
        }
    double log_p = alpha[static_cast<size_t>(T - 1) * S + S - 1];
    if (S > 1) log_p = detail::logsumexp2(log_p, alpha[static_cast<size_t>(T - 1) * S + S - 2]);
    if (log_p == kNegInf)
        return {Tensor<Real>::scalar(std::numeric_limits<Real>::infinity()), false};

    Tensor<Real> out = Tensor<Real>::scalar(static_cast<Real>(-log_p));
    if (detail::should_record<Real>({&logits})) {
        // beta pass (emission-inclusive) for the posterior
        std::vector<double> beta(static_cast<size_t>(T) * S, kNegInf);
        beta[static_cast<size_t>(T - 1) * S + S - 1] = yv(T - 1, ext[static_cast<size_t>(S - 1)]);
        if (S > 1) beta[static_cast<size_t>(T - 1) * S + S - 2] = yv(T - 1, ext[static_cast<size_t>(S - 2)]);
        for (int t = T - 2; t >= 0; --t)
            for (int s = 0; s < S; ++s) {
                double best = beta[static_cast<size_t>(t + 1) * S + s];
                if (s + 1 < S) best = detail::logsumexp2(best, beta[static_cast<size_t>(t + 1) * S + s + 1]);
                if (s + 2 < S && ext[static_cast<size_t>(s)] != ext[static_cast<size_t>(s + 2)])
                    best = detail::logsumexp2(best, beta[static_cast<size_t>(t + 1) * S + s + 2]);
                if (best != kNegInf) beta[static_cast<size_t>(t) * S + s] = best + yv(t, ext[static_cast<size_t>(s)]);
            }
        std::vector<Real> grad(static_cast<size_t>(T) * V);
        for (int t = 0; t < T; ++t) {
            std::vector<double> post(static_cast<size_t>(V), kNegInf);
            for (int s = 0; s < S; ++s) {
                const double a = alpha[static_cast<size_t>(t) * S + s], b = beta[static_cast<size_t>(t) * S + s];
                if (a == kNegInf || b == kNegInf) continue;
                const int k = ext[static_cast<size_t>(s)];
                post[static_cast<size_t>(k)] =
                    detail::logsumexp2(post[static_cast<size_t>(k)], a + b - yv(t, k));
            }
            for (int k = 0; k < V; ++k) {
                const double p = std::exp(yv(t, k));
                const double q = post[static_cast<size_t>(k)] == kNegInf
                                     ? 0.0
                                     : std::exp(post[static_cast<size_t>(k)] - log_p);
                grad[static_cast<size_t>(t) * V + k] = static_cast<Real>(p - q);
            }
        }
        auto li = logits.impl(), oi = out.impl();
        detail::record<Real>("ctc_loss", {&logits}, out, [li, oi, grad = std::move(grad)] {
            li->ensure_grad();
            const Real g = oi->grad[0];
            for (size_t i = 0; i < grad.size(); ++i) li->grad[i] += g * grad[i];
        });
    }
    return {out, true};
}

// ---------------------------------------------------------------------------
// Attention cross-entropy
// ---------------------------------------------------------------------------

// Mean over positions of label-smoothed cross-entropy; smoothing mass is
// uniform over the whole vocabulary.
template <class Real>
Tensor<Real> attention_ce_loss(const Tensor<Real>& logits, const std::vector<int>& targets,
                               double smoothing = 0.1) {
    if (logits.rank() != 2) throw ShapeError("attention_ce_loss: logits must be L×vocab");
    const int L = logits.dim(0), V = logits.dim(1);
    if (static_cast<int>(targets.size()) != L)
        throw ShapeError("attention_ce_loss: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(L) + " positions");
    if (smoothing < 0 || smoothing >= 1)
        throw DomainError("attention_ce_loss: smoothing must be in [0, 1)");
    for (int id : targets)
        if (id < 0 || id >= V)
            throw BoundsError("attention_ce_loss: target id " + std::to_string(id) +
                              " outside vocab " + std::to_string(V));

    auto lv = logits.values();
    std::vector<double> y(static_cast<size_t>(L) * V);
    double total = 0;
    for (int i = 0; i < L; ++i) {
        double mx = lv[static_cast<size_t>(i) * V];
        for (int k = 1; k < V; ++k) mx = std::max(mx, static_cast<double>(lv[static_cast<size_t>(i) * V + k]));
        double denom = 0;
        for (int k = 0; k < V; ++k) denom += std::exp(static_cast<double>(lv[static_cast<size_t>(i) * V + k]) - mx);
        const double lse = mx + std::log(denom);
        double pos_loss = 0;
        for (int k = 0; k < V; ++k) {
            const double yk = static_cast<double>(lv[static_cast<size_t>(i) * V + k]) - lse;
            y[static_cast<size_t>(i) * V + k] = yk;
            const double q = smoothing / V + (k == targets[static_cast<size_t>(i)] ? 1.0 - smoothing : 0.0);
            pos_loss -= q * yk;
        }
        total += pos_loss;
    }
    Tensor<Real> out = Tensor<Real>::scalar(static_cast<Real>(total / L));
    if (detail::should_record<Real>({&logits})) {
        std::vector<Real> grad(static_cast<size_t>(L) * V);
        for (int i = 0; i < L; ++i)
            for (int k = 0; k < V; ++k) {
                const double q = smoothing / V + (k == targets[static_cast<size_t>(i)] ? 1.0 - smoothing : 0.0);
                grad[static_cast<size_t>(i) * V + k] =
                    static_cast<Real>((std::exp(y[static_cast<size_t>(i) * V + k]) - q) / L);
            }
        auto li = logits.impl(), oi = out.impl();
        detail::record<Real>("attention_ce_loss", {&logits}, out, [li, oi, grad = std::move(grad)] {
            li->ensure_grad();
            const Real g = oi->grad[0];
            for (size_t i = 0; i < grad.size(); ++i) li->grad[i] += g * grad[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loss assembly
// ---------------------------------------------------------------------------

template <class Real>
struct LossBreakdown {
    double l_ctc = 0, l_attn = 0, l_s = 0, total = 0;
    Tensor<Real> total_tensor;  // taped combination for the backward pass
};

// total = α·l_ctc + (1−α)·l_attn + l_s
template <class Real>
LossBreakdown<Real> asr_total_loss(const Tensor<Real>& l_ctc, const Tensor<Real>& l_attn,
                                   const Tensor<Real>& l_s, double alpha) {
    if (alpha < 0 || alpha > 1) throw DomainError("asr_total_loss: alpha must be in [0, 1]");
    LossBreakdown<Real> out;
    out.l_ctc = static_cast<double>(l_ctc.item());
    out.l_attn = static_cast<double>(l_attn.item());
    out.l_s = static_cast<double>(l_s.item());
    out.total = alpha * out.l_ctc + (1.0 - alpha) * out.l_attn + out.l_s;
    out.total_tensor = add(add(scale(l_ctc, static_cast<Real>(alpha)),
                               scale(l_attn, static_cast<Real>(1.0 - alpha))),
                           l_s);
    return out;
}

// ---------------------------------------------------------------------------
// Permutation-free diarization loss
// ---------------------------------------------------------------------------

template <class Real>
struct PitResult {
    Tensor<Real> loss;
    std::vector<int> permutation;  // prediction row i scores label row permutation[i]
};

namespace detail {

// numerically stable BCE-with-logits, loss and dLoss/dz
inline void bce_logit(double z, double label, double& loss, double& dz) {
    const double s = 1.0 / (1.0 + std::exp(-std::abs(z)));
    loss = std::max(z, 0.0) - z * label + std::log1p(std::exp(-std::abs(z)));
    const double sig = z >= 0 ? s : 1.0 - s;
    dz = sig - label;
}

}  // namespace detail

// Min over label-row permutations of the mean frame-wise BCE between the
// activity logits and the labels; exhaustive search, lexicographically
// smallest argmin on ties.
template <class Real>
PitResult<Real> pit_bce_loss(const Tensor<Real>& logits, const DiarizationLabels& labels) {
    if (logits.rank() != 2) throw ContractError("pit_bce_loss: logits must be num_spk×T");
    const int S = logits.dim(0), T = logits.dim(1);
    labels.check_rectangular();
    if (labels.num_spk() != S || labels.frames() != T)
        throw ContractError("pit_bce_loss: logits " + shape_str(logits.shape()) + " vs labels " +
                            std::to_string(labels.num_spk()) + "×" + std::to_string(labels.frames()));
    if (S < 1 || S > 4) throw ContractError("pit_bce_loss: num_spk must be in [1, 4]");

    auto lv = logits.values();
    // pairwise mean BCE costs, prediction row × label row, in double
    std::vector<double> cost(static_cast<size_t>(S) * S, 0.0);
    for (int i = 0; i < S; ++i)
        for (int j = 0; j < S; ++j) {
            double c = 0;
            for (int t = 0; t < T; ++t) {
                double l, dz;
                detail::bce_logit(static_cast<double>(lv[static_cast<size_t>(i) * T + t]),
                                  labels.activity[static_cast<size_t>(j)][static_cast<size_t>(t)] ? 1.0 : 0.0,
                                  l, dz);
                c += l;
            }
            cost[static_cast<size_t>(i) * S + j] = c / T;
        }

    std::vector<int> perm(static_cast<size_t>(S));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best = perm;
    double best_cost = std::numeric_limits<double>::infinity();
    do {
        double c = 0;
        for (int i = 0; i < S; ++i) c += cost[static_cast<size_t>(i) * S + perm[static_cast<size_t>(i)]];
        if (c < best_cost) {  // strict: keeps the lexicographically smallest argmin
            best_cost = c;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));

    Tensor<Real> out = Tensor<Real>::scalar(static_cast<Real>(best_cost / S));
    if (detail::should_record<Real>({&logits})) {
        std::vector<Real> grad(static_cast<size_t>(S) * T);
        for (int i = 0; i < S; ++i)
            for (int t = 0; t < T; ++t) {
                double l, dz;
                detail::bce_logit(
                    static_cast<double>(lv[static_cast<size_t>(i) * T + t]),
                    labels.activity[static_cast<size_t>(best[static_cast<size_t>(i)])][static_cast<size_t>(t)] ? 1.0 : 0.0,
                    l, dz);
                grad[static_cast<size_t>(i) * T + t] = static_cast<Real>(dz / (static_cast<double>(S) * T));
            }
        auto li = logits.impl(), oi = out.impl();
        detail::record<Real>("pit_bce_loss", {&logits}, out, [li, oi, grad = std::move(grad)] {
            li->ensure_grad();
            const Real g = oi->grad[0];
            for (size_t i = 0; i < grad.size(); ++i) li->grad[i] += g * grad[i];
        });
    }
    return {out, best};
}

}  // namespace dt
