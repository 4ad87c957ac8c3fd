#pragma once

// Variance-preserving perturbation kernel, denoising score matching target
// and loss weighting.

#include "error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

namespace scoretd {

struct KernelStats {
    double alpha;  ///< mean coefficient
    double sigma;  ///< marginal std of the added noise
};

/// Diffusion schedule. Two modes:
///  - vp: beta(t) linear from beta_min to beta_max, variance floored at sigma_min_sq;
///  - single_scale: no time dependence, alpha = 1 and sigma fixed.
struct VPSchedule {
    enum class Kind { vp, single_scale };

    Kind kind = Kind::vp;
    double beta_min = 0.1;
    double beta_max = 20.0;
    double sigma_min_sq = 0.01;
    double single_sigma = 0.1;

    static VPSchedule vp(double beta_min = 0.1, double beta_max = 20.0, double sigma_min_sq = 0.01)
    {
        detail::require_arg(beta_min > 0.0 && beta_max >= beta_min, "VPSchedule: need 0 < beta_min <= beta_max");
        detail::require_arg(sigma_min_sq >= 0.0, "VPSchedule: sigma_min_sq must be >= 0");
        return VPSchedule{Kind::vp, beta_min, beta_max, sigma_min_sq, 0.0};
    }

    static VPSchedule single_scale(double sigma)
    {
        detail::require_arg(sigma > 0.0 && std::isfinite(sigma), "VPSchedule: single-scale sigma must be > 0");
        return VPSchedule{Kind::single_scale, 0.0, 0.0, sigma * sigma, sigma};
    }

    [[nodiscard]] bool time_dependent() const noexcept { return kind == Kind::vp; }

    [[nodiscard]] std::string id() const { return kind == Kind::vp ? "vp" : "single"; }
};

namespace diffusion {

inline void check_time(double t)
{
    detail::require_arg(t >= 0.0 && t <= 1.0 && std::isfinite(t), "diffusion: t must lie in [0, 1]");
}

/// Integral of beta over [0, t].
inline double integrated_beta(const VPSchedule& s, double t) { return s.beta_min * t + 0.5 * (s.beta_max - s.beta_min) * t * t; }

inline KernelStats kernel_stats(const VPSchedule& s, double t)
{
    check_time(t);
    if (s.kind == VPSchedule::Kind::single_scale) {
        return {1.0, s.single_sigma};
    }
    const double alpha = std::exp(-0.5 * integrated_beta(s, t));
    // 1 - alpha^2 via expm1 keeps precision for small t.
    const double var = std::max(-std::expm1(-integrated_beta(s, t)), s.sigma_min_sq);
    return {alpha, std::sqrt(var)};
}

inline Eigen::VectorXd perturb(const VPSchedule& s, const Eigen::VectorXd& x0, double t, const Eigen::VectorXd& noise)
{
    detail::require_arg(x0.size() == noise.size(), "perturb: shape mismatch");
    const auto k = kernel_stats(s, t);
    return k.alpha * x0 + k.sigma * noise;
}

/// Score of the perturbation kernel: -(x_t - alpha x0) / sigma^2.
inline Eigen::VectorXd dsm_target(const VPSchedule& s, const Eigen::VectorXd& x0, const Eigen::VectorXd& xt, double t)
{
    detail::require_arg(x0.size() == xt.size(), "dsm_target: shape mismatch");
    const auto k = kernel_stats(s, t);
    detail::require(k.sigma > 0.0, ErrorKind::numeric, "dsm_target: sigma_t = 0");
    return -(xt - k.alpha * x0) / (k.sigma * k.sigma);
}

/// lambda(t) = sigma_t^2.
inline double weight(const VPSchedule& s, double t)
{
    const auto k = kernel_stats(s, t);
    return k.sigma * k.sigma;
}

/// Noise-free diffusion: alpha_t * x0.
inline Eigen::VectorXd decay(const VPSchedule& s, const Eigen::VectorXd& x0, double t) { return kernel_stats(s, t).alpha * x0; }

}  // namespace diffusion

}  // namespace scoretd
