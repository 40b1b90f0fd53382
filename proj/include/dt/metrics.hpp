#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "dt/labels.hpp"
#include "dt/rng.hpp"
#include "dt/tensor.hpp"

namespace dt {

// ---------------------------------------------------------------------------
// WER
// ---------------------------------------------------------------------------

struct WerBreakdown {
    int substitutions = 0, deletions = 0, insertions = 0, ref_words = 0;
    double wer = 0;
};

// Minimal-edit alignment with unit costs. On ties the backtrace prefers
// substitution/match, then deletion, then insertion.
template <class Tok>
WerBreakdown wer(const std::vector<Tok>& ref, const std::vector<Tok>& hyp) {
    if (ref.empty()) throw DomainError("wer: empty reference");
    const size_t n = ref.size(), m = hyp.size();
    std::vector<int> cost((n + 1) * (m + 1));
    auto at = [m](size_t i, size_t j) { return i * (m + 1) + j; };
    for (size_t i = 0; i <= n; ++i) cost[at(i, 0)] = static_cast<int>(i);
    for (size_t j = 0; j <= m; ++j) cost[at(0, j)] = static_cast<int>(j);
    for (size_t i = 1; i <= n; ++i)
        for (size_t j = 1; j <= m; ++j) {
            const int diag = cost[at(i - 1, j - 1)] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            const int del = cost[at(i - 1, j)] + 1;
            const int ins = cost[at(i, j - 1)] + 1;
            cost[at(i, j)] = std::min(diag, std::min(del, ins));
        }
    WerBreakdown out;
    out.ref_words = static_cast<int>(n);
    size_t i = n, j = m;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 &&
            cost[at(i, j)] == cost[at(i - 1, j - 1)] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
            if (!(ref[i - 1] == hyp[j - 1])) ++out.substitutions;
            --i, --j;
        } else if (i > 0 && cost[at(i, j)] == cost[at(i - 1, j)] + 1) {
            ++out.deletions;
            --i;
        } else {
            ++out.insertions;
            --j;
        }
    }
    out.wer = static_cast<double>(out.substitutions + out.deletions + out.insertions) /
              static_cast<double>(out.ref_words);
    return out;
}

// ---------------------------------------------------------------------------
// DER
// ---------------------------------------------------------------------------

struct DerBreakdown {
    double missed_s = 0, false_alarm_s = 0, confusion_s = 0, total_speech_s = 0;
    double der = 0;
};

// per-frame binary median with symmetric window shrink at the edges
std::vector<std::uint8_t> median_filter(const std::vector<std::uint8_t>& track, int window = 11);

// permutation π minimizing frame disagreement when hyp row i is read as ref
// row π[i]; exhaustive, lexicographically smallest argmin
std::vector<int> best_permutation_mapping(const DiarizationLabels& ref,
                                          const DiarizationLabels& hyp);

DerBreakdown der(const DiarizationLabels& ref, const DiarizationLabels& hyp, double collar_s = 0.0,
                 int median_window = 11);

inline double speaker_error_time(const DerBreakdown& b) { return b.confusion_s; }

// ---------------------------------------------------------------------------
// representation probing
// ---------------------------------------------------------------------------

// mean over t of ‖e_{t+1} − e_t‖₂ / √d
template <class Real>
double temporal_smoothness(const Tensor<Real>& track) {
    if (track.rank() != 2 || track.dim(0) < 2)
        throw ContractError("temporal_smoothness: track must be T×d with T >= 2");
    const int T = track.dim(0), d = track.dim(1);
    auto v = track.values();
    double acc = 0;
    for (int t = 0; t + 1 < T; ++t) {
        double sq = 0;
        for (int i = 0; i < d; ++i) {
            const double diff = static_cast<double>(v[static_cast<size_t>(t + 1) * d + i]) -
                                static_cast<double>(v[static_cast<size_t>(t) * d + i]);
            sq += diff * diff;
        }
        acc += std::sqrt(sq);
    }
    return acc / ((T - 1) * std::sqrt(static_cast<double>(d)));
}

// trace(between-class scatter) / max(trace(within-class scatter), 1e-12),
// both normalized by the total frame count
template <class Real>
double fisher_separability(const Tensor<Real>& frames, const std::vector<int>& labels) {
    if (frames.rank() != 2) throw ContractError("fisher_separability: frames must be N×d");
    const int N = frames.dim(0), d = frames.dim(1);
    if (static_cast<int>(labels.size()) != N)
        throw ContractError("fisher_separability: label count mismatch");
    std::vector<int> classes;
    for (int l : labels)
        if (std::find(classes.begin(), classes.end(), l) == classes.end()) classes.push_back(l);
    if (classes.size() < 2) throw ContractError("fisher_separability: need at least 2 classes");
    auto v = frames.values();
    std::vector<double> mean(static_cast<size_t>(d), 0.0);
    std::vector<std::vector<double>> cmean(classes.size(), std::vector<double>(static_cast<size_t>(d), 0.0));
    std::vector<int> count(classes.size(), 0);
    auto class_of = [&](int l) {
        return static_cast<size_t>(std::find(classes.begin(), classes.end(), l) - classes.begin());
    };
    for (int i = 0; i < N; ++i) {
        const size_t c = class_of(labels[static_cast<size_t>(i)]);
        ++count[c];
        for (int k = 0; k < d; ++k) {
            const double x = static_cast<double>(v[static_cast<size_t>(i) * d + k]);
            mean[static_cast<size_t>(k)] += x;
            cmean[c][static_cast<size_t>(k)] += x;
        }
    }
    for (size_t c = 0; c < classes.size(); ++c) {
        if (count[c] < 2) throw ContractError("fisher_separability: class with fewer than 2 frames");
        for (int k = 0; k < d; ++k) cmean[c][static_cast<size_t>(k)] /= count[c];
    }
    for (int k = 0; k < d; ++k) mean[static_cast<size_t>(k)] /= N;
    double sw = 0, sb = 0;
    for (int i = 0; i < N; ++i) {
        const size_t c = class_of(labels[static_cast<size_t>(i)]);
        for (int k = 0; k < d; ++k) {
            const double diff = static_cast<double>(v[static_cast<size_t>(i) * d + k]) -
                                cmean[c][static_cast<size_t>(k)];
            sw += diff * diff;
        }
    }
    for (size_t c = 0; c < classes.size(); ++c)
        for (int k = 0; k < d; ++k) {
            const double diff = cmean[c][static_cast<size_t>(k)] - mean[static_cast<size_t>(k)];
            sb += count[c] * diff * diff;
        }
    sw /= N;
    sb /= N;
    return sb / std::max(sw, 1e-12);
}

struct PcaResult {
    std::vector<std::vector<double>> coords;   // N×out_dim
    std::vector<double> explained;             // variance fraction per component
};

// centered projection onto the top principal directions via power iteration
// with deflation; fixed internal seed, fully deterministic
template <class Real>
PcaResult pca_project(const Tensor<Real>& frames, int out_dim = 2) {
    if (frames.rank() != 2 || frames.dim(0) < 2)
        throw ContractError("pca_project: need an N×d matrix with N >= 2");
    const int N = frames.dim(0), d = frames.dim(1);
    out_dim = std::min(out_dim, d);
    auto v = frames.values();
    std::vector<double> mean(static_cast<size_t>(d), 0.0);
    for (int i = 0; i < N; ++i)
        for (int k = 0; k < d; ++k) mean[static_cast<size_t>(k)] += static_cast<double>(v[static_cast<size_t>(i) * d + k]);
    for (auto& m : mean) m /= N;
    std::vector<double> x(static_cast<size_t>(N) * d);
    for (int i = 0; i < N; ++i)
        for (int k = 0; k < d; ++k)
            x[static_cast<size_t>(i) * d + k] =
                static_cast<double>(v[static_cast<size_t>(i) * d + k]) - mean[static_cast<size_t>(k)];
    // covariance, d×d
    std::vector<double> cov(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < N; ++i)
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b)
                cov[static_cast<size_t>(a) * d + b] +=
                    x[static_cast<size_t>(i) * d + a] * x[static_cast<size_t>(i) * d + b];
    for (auto& c : cov) c /= N;
    double total_var = 0;
    for (int a = 0; a < d; ++a) total_var += cov[static_cast<size_t>(a) * d + a];

    PcaResult out;
    out.coords.assign(static_cast<size_t>(N), std::vector<double>(static_cast<size_t>(out_dim), 0.0));
    Rng rng(0x9c0afe11u);
    std::vector<std::vector<double>> dirs;
    for (int comp = 0; comp < out_dim; ++comp) {
        std::vector<double> w(static_cast<size_t>(d));
        for (auto& e : w) e = rng.normal();
        double lambda = 0;
        for (int it = 0; it < 500; ++it) {
            // project out previous directions, multiply by cov, normalize
            for (const auto& prev : dirs) {
                double dot = std::inner_product(w.begin(), w.end(), prev.begin(), 0.0);
                for (int k = 0; k < d; ++k) w[static_cast<size_t>(k)] -= dot * prev[static_cast<size_t>(k)];
            }
            std::vector<double> nw(static_cast<size_t>(d), 0.0);
            for (int a = 0; a < d; ++a)
                for (int b = 0; b < d; ++b)
                    nw[static_cast<size_t>(a)] += cov[static_cast<size_t>(a) * d + b] * w[static_cast<size_t>(b)];
            const double norm = std::sqrt(std::inner_product(nw.begin(), nw.end(), nw.begin(), 0.0));
            if (norm < 1e-300) break;  // no variance left in the residual space
            const double new_lambda = norm;
            for (int k = 0; k < d; ++k) w[static_cast<size_t>(k)] = nw[static_cast<size_t>(k)] / norm;
            if (it > 3 && std::abs(new_lambda - lambda) <= 1e-12 * std::max(1.0, new_lambda)) {
                lambda = new_lambda;
                break;
            }
            lambda = new_lambda;
        }
        dirs.push_back(w);
        out.explained.push_back(total_var > 0 ? lambda / total_var : 0.0);
        for (int i = 0; i < N; ++i) {
            double proj = 0;
            for (int k = 0; k < d; ++k)
                proj += x[static_cast<size_t>(i) * d + k] * w[static_cast<size_t>(k)];
            out.coords[static_cast<size_t>(i)][static_cast<size_t>(comp)] = proj;
        }
    }
    return out;
}

}  // namespace dt
