#include "dt/metrics.hpp"

#include <algorithm>
#include <limits>

namespace dt {

std::vector<std::uint8_t> median_filter(const std::vector<std::uint8_t>& track, int window) {
    if (window % 2 == 0 || window < 1)
        throw ConfigError("median_filter: window must be odd and positive, got " +
                          std::to_string(window));
    const int T = static_cast<int>(track.size());
    std::vector<std::uint8_t> out(track.size());
    for (int t = 0; t < T; ++t) {
        const int half = std::min({window / 2, t, T - 1 - t});
        int ones = 0;
        for (int k = t - half; k <= t + half; ++k) ones += track[static_cast<size_t>(k)] ? 1 : 0;
        out[static_cast<size_t>(t)] = ones > half ? 1 : 0;  // majority of 2·half+1
    }
    return out;
}

std::vector<int> best_permutation_mapping(const DiarizationLabels& ref,
                                          const DiarizationLabels& hyp) {
    ref.check_rectangular();
    hyp.check_rectangular();
    if (ref.num_spk() != hyp.num_spk())
        throw ContractError("best_permutation_mapping: speaker count mismatch " +
                            std::to_string(ref.num_spk()) + " vs " + std::to_string(hyp.num_spk()));
    if (ref.frames() != hyp.frames())
        throw ContractError("best_permutation_mapping: frame count mismatch " +
                            std::to_string(ref.frames()) + " vs " + std::to_string(hyp.frames()));
    const int S = ref.num_spk();
    if (S < 1 || S > 4) throw ContractError("best_permutation_mapping: num_spk must be in [1, 4]");
    const int T = ref.frames();

    // pairwise disagreements: hyp row i read as ref row j
    std::vector<long> cost(static_cast<size_t>(S) * S, 0);
    for (int i = 0; i < S; ++i)
        for (int j = 0; j < S; ++j) {
            long c = 0;
            for (int t = 0; t < T; ++t)
                c += (hyp.activity[static_cast<size_t>(i)][static_cast<size_t>(t)] != 0) !=
                     (ref.activity[static_cast<size_t>(j)][static_cast<size_t>(t)] != 0);
            cost[static_cast<size_t>(i) * S + j] = c;
        }
    std::vector<int> perm(static_cast<size_t>(S));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best = perm;
    long best_cost = std::numeric_limits<long>::max();
    do {
        long c = 0;
        for (int i = 0; i < S; ++i) c += cost[static_cast<size_t>(i) * S + perm[static_cast<size_t>(i)]];
        if (c < best_cost) {  // strict keeps the lexicographically smallest argmin
            best_cost = c;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

// Frame-level decomposition: per frame, with R/H the active reference and
// mapped-hypothesis speaker sets, miss = max(0,|R|−|H|), false alarm =
// max(0,|H|−|R|), confusion = min(|R|,|H|) − |R∩H|; total speech = Σ|R|.
// A collar > 0 excludes frames within collar seconds of any reference
// activity boundary; 0.0 excludes nothing.
DerBreakdown der(const DiarizationLabels& ref, const DiarizationLabels& hyp, double collar_s,
                 int median_window) {
    ref.check_rectangular();
    hyp.check_rectangular();
    if (ref.frames() != hyp.frames())
        throw ContractError("der: frame count mismatch " + std::to_string(ref.frames()) + " vs " +
                            std::to_string(hyp.frames()));
    const int S = ref.num_spk(), T = ref.frames();

    DiarizationLabels filtered = hyp;
    for (auto& row : filtered.activity) row = median_filter(row, median_window);
    const std::vector<int> perm = best_permutation_mapping(ref, filtered);
    // mapped[j] = filtered hyp row assigned to ref row j
    std::vector<const std::vector<std::uint8_t>*> mapped(static_cast<size_t>(S));
    for (int i = 0; i < S; ++i)
        mapped[static_cast<size_t>(perm[static_cast<size_t>(i)])] = &filtered.activity[static_cast<size_t>(i)];

    std::vector<std::uint8_t> excluded(static_cast<size_t>(T), 0);
    if (collar_s > 0) {
        const int c = static_cast<int>(std::floor(collar_s / ref.frame_shift_s + 0.5));
        auto exclude = [&](int lo, int hi) {
            for (int t = std::max(0, lo); t <= std::min(T - 1, hi); ++t)
                excluded[static_cast<size_t>(t)] = 1;
        };
        for (int s = 0; s < S; ++s) {
            const auto& row = ref.activity[static_cast<size_t>(s)];
            int t = 0;
            while (t < T) {
                if (!row[static_cast<size_t>(t)]) {
                    ++t;
                    continue;
                }
                int end = t;
                while (end + 1 < T && row[static_cast<size_t>(end + 1)]) ++end;
                exclude(t - c, t + c - 1);          // around the segment start boundary
                exclude(end + 1 - c, end + c);      // around the segment end boundary
                t = end + 1;
            }
        }
    }

    long miss = 0, fa = 0, conf = 0, total = 0;
    for (int t = 0; t < T; ++t) {
        if (excluded[static_cast<size_t>(t)]) continue;
        int nr = 0, nh = 0, both = 0;
        for (int s = 0; s < S; ++s) {
            const bool r = ref.activity[static_cast<size_t>(s)][static_cast<size_t>(t)] != 0;
            const bool h = (*mapped[static_cast<size_t>(s)])[static_cast<size_t>(t)] != 0;
            nr += r;
            nh += h;
            both += r && h;
        }
        miss += std::max(0, nr - nh);
        fa += std::max(0, nh - nr);
        conf += std::min(nr, nh) - both;
        total += nr;
    }

    DerBreakdown out;
    const double shift = ref.frame_shift_s;
    out.missed_s = miss * shift;
    out.false_alarm_s = fa * shift;
    out.confusion_s = conf * shift;
    out.total_speech_s = total * shift;
    const double err = out.missed_s + out.false_alarm_s + out.confusion_s;
    out.der = total > 0 ? err / out.total_speech_s
                        : (err > 0 ? std::numeric_limits<double>::infinity() : 0.0);
    return out;
}

}  // namespace dt
