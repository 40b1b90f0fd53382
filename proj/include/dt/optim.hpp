#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dt/error.hpp"
#include "dt/tensor.hpp"

namespace dt {

// lr = factor · d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)
struct NoamSchedule {
    double factor = 1.0;
    int d_model = 64;
    int warmup_steps = 400;

    double lr(std::int64_t step) const {
        if (step <= 0) throw DomainError("NoamSchedule: step must be >= 1");
        const double s = static_cast<double>(step);
        return factor / std::sqrt(static_cast<double>(d_model)) *
               std::min(1.0 / std::sqrt(s), s / std::pow(static_cast<double>(warmup_steps), 1.5));
    }
};

template <class Real>
struct AdamConfig {
    Real beta1 = Real(0.9);
    Real beta2 = Real(0.98);
    Real eps = Real(1e-9);
};

// First/second moment buffers for one parameter group, in parameter order.
template <class Real>
struct AdamState {
    std::int64_t step = 0;
    std::vector<std::vector<Real>> m, v;

    void init(const std::vector<Tensor<Real>>& params) {
        step = 0;
        m.clear();
        v.clear();
        for (const auto& p : params) {
            m.emplace_back(p.values().size(), Real(0));
            v.emplace_back(p.values().size(), Real(0));
        }
    }
};

// Global-norm clipping across one parameter group; returns the pre-clip norm.
template <class Real>
double clip_gradients(std::vector<Tensor<Real>>& params, double max_norm) {
    double sq = 0;
    for (auto& p : params) {
        if (!p.has_grad()) continue;
        for (Real g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const Real s = static_cast<Real>(max_norm / norm);
        for (auto& p : params) {
            if (!p.has_grad()) continue;
            for (Real& g : p.grad()) g *= s;
        }
    }
    return norm;
}

// One bias-corrected Adam update (eps added outside the square root). Params
// without an accumulated gradient this step keep their moments decayed so the
// trajectory stays deterministic.
template <class Real>
void adam_step(std::vector<Tensor<Real>>& params, AdamState<Real>& state,
               const AdamConfig<Real>& cfg, double lr) {
    if (state.m.size() != params.size())
        throw ContractError("adam_step: state initialized for a different parameter group");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        auto vals = params[i].values();
        if (state.m[i].size() != vals.size())
            throw ContractError("adam_step: parameter " + std::to_string(i) + " changed size");
        const bool has_g = params[i].has_grad();
        auto grads = has_g ? params[i].grad() : std::span<Real>();
        for (size_t j = 0; j < vals.size(); ++j) {
            const Real g = has_g ? grads[j] : Real(0);
            Real& mj = state.m[i][j];
            Real& vj = state.v[i][j];
            mj = cfg.beta1 * mj + (Real(1) - cfg.beta1) * g;
            vj = cfg.beta2 * vj + (Real(1) - cfg.beta2) * g * g;
            const double mhat = static_cast<double>(mj) / bc1;
            const double vhat = static_cast<double>(vj) / bc2;
            vals[j] -= static_cast<Real>(lr * mhat / (std::sqrt(vhat) + static_cast<double>(cfg.eps)));
        }
    }
}

}  // namespace dt
