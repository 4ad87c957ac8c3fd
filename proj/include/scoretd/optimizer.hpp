#pragma once

#include "error.hpp"

#include <Eigen/Core>

#include <cmath>
#include <numbers>

namespace scoretd {

/// Adam with a cosine learning-rate decay from base_lr (step 0) to final_lr
/// (step total_steps).
struct OptimizerState {
    long step = 0;
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    double base_lr = 1e-3;
    double final_lr = 1e-5;
    long total_steps = 20000;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static OptimizerState make(Eigen::Index n_params, double base_lr, double final_lr, long total_steps)
    {
        detail::require_arg(base_lr > 0.0 && final_lr > 0.0 && final_lr <= base_lr, "optimizer: need 0 < final_lr <= base_lr");
        detail::require_arg(total_steps >= 1, "optimizer: total_steps must be >= 1");
        OptimizerState s;
        s.m.setZero(n_params);
        s.v.setZero(n_params);
        s.base_lr = base_lr;
        s.final_lr = final_lr;
        s.total_steps = total_steps;
        return s;
    }
};

inline double learning_rate(const OptimizerState& s, long step)
{
    if (step >= s.total_steps) {
        return s.final_lr;
    }
    if (step <= 0) {
        return s.base_lr;
    }
    const double progress = static_cast<double>(step) / static_cast<double>(s.total_steps);
    return s.final_lr + 0.5 * (s.base_lr - s.final_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

/// One Adam update at the scheduled learning rate. A non-finite gradient
/// throws before anything is modified.
inline void opt_step(OptimizerState& s, Eigen::VectorXd& params, const Eigen::VectorXd& grads)
{
    detail::require_arg(params.size() == grads.size() && s.m.size() == params.size(), "opt_step: shape mismatch");
    detail::require_arg(s.step < s.total_steps, "opt_step: schedule exhausted");
    if (!grads.allFinite()) {
        throw Error(ErrorKind::numeric, "opt_step: non-finite gradient at step " + std::to_string(s.step));
    }
    const double lr = learning_rate(s, s.step);
    s.step += 1;
    s.m = s.beta1 * s.m + (1.0 - s.beta1) * grads;
    s.v = s.beta2 * s.v + (1.0 - s.beta2) * grads.cwiseAbs2();
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    params.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
}

}  // namespace scoretd
