#pragma once

// Topological dimension from an adversarial probe of a DE-regularized score.
//
// At the regularized fixed point the learned normal variance is
// sigma^2 + (n / n_perp) gamma, so the measured slope delta along a normal
// probe gives n_M = n - n gamma / (1/delta - sigma^2).

#include "attack.hpp"
#include "diffusion.hpp"
#include "error.hpp"
#include "score_model.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace scoretd {

struct TDFlags {
    bool division_guard = false;
    bool negative_normal_var = false;
    bool attack_fallback = false;

    [[nodiscard]] std::string str() const
    {
        std::string s;
        auto add = [&s](const char* f) { s += s.empty() ? f : std::string("|") + f; };
        if (division_guard) add("division_guard");
        if (negative_normal_var) add("negative_normal_var");
        if (attack_fallback) add("attack_fallback");
        return s;
    }
};

struct TDEstimate {
    Eigen::VectorXd x;
    Eigen::VectorXd x_adv;
    double delta = 0.0;
    double n_hat = 0.0;
    double n_hat_clamped = 0.0;
    double t = 0.0;  // time at which the estimate was taken (0 for single-scale maps)
    TDFlags flags;
};

inline constexpr double kDenominatorGuard = 1e-9;

/// Inverts the slope relation for a measured delta. Exposed separately so the
/// arithmetic can be checked without a score model.
inline TDEstimate td_from_slope(double delta, Eigen::Index n, double gamma, double sigma)
{
    detail::require_arg(delta > 0.0 && std::isfinite(delta), "td_from_slope: delta must be positive and finite");
    TDEstimate e;
    e.delta = delta;
    const double nd = static_cast<double>(n);
    const double denom = 1.0 / delta - sigma * sigma;
    if (std::abs(denom) < kDenominatorGuard) {
        e.flags.division_guard = true;
        e.n_hat = nd;
    } else {
        e.n_hat = nd - nd * gamma / denom;
        if (denom < 0.0) {
            e.flags.negative_normal_var = true;
        }
    }
    e.n_hat_clamped = e.flags.negative_normal_var ? nd : std::clamp(e.n_hat, 0.0, nd);
    return e;
}

/// Probe x with an L2 attack of budget sigma, measure the score slope and
/// convert it to a dimension estimate. Only iters/step ratio of `attack` are
/// used; the budget is always sigma.
template <ScoreMap Map>
TDEstimate estimate_td(const Map& score, const Eigen::VectorXd& x, std::optional<double> t, double gamma, double sigma,
                       const AttackConfig& attack)
{
    detail::require_arg(gamma >= 0.0, "estimate_td: gamma must be >= 0");
    detail::require_arg(sigma > 0.0, "estimate_td: sigma must be > 0");
    const auto adv = pgd_l2(score, x, t, attack.with_epsilon(sigma));
    const double dist = (adv.x_adv - x).norm();
    if (dist == 0.0) {
        throw Error(ErrorKind::numeric, "estimate_td: null probe");
    }
    const double delta = (score.eval(adv.x_adv, t) - score.eval(x, t)).norm() / dist;
    TDEstimate e = td_from_slope(delta, x.size(), gamma, sigma);
    e.x = x;
    e.x_adv = adv.x_adv;
    e.t = t.value_or(0.0);
    e.flags.attack_fallback = adv.fallback;
    return e;
}

/// Estimates along the noise-free decay path: for each t, x_t = alpha_t x and
/// the probe budget / variance correction use sigma_t of the schedule.
template <ScoreMap Map>
std::vector<TDEstimate> estimate_td_over_time(const Map& score, const Eigen::VectorXd& x, const std::vector<double>& times, double gamma,
                                              const VPSchedule& sched, const AttackConfig& attack)
{
    detail::require_arg(std::is_sorted(times.begin(), times.end()), "estimate_td_over_time: times must be ascending");
    std::vector<TDEstimate> out;
    out.reserve(times.size());
    for (double t : times) {
        const auto k = diffusion::kernel_stats(sched, t);
        out.push_back(estimate_td(score, diffusion::decay(sched, x, t), t, gamma, k.sigma, attack));
    }
    return out;
}

/// Mean of (n_hat_clamped - truth)^2.
inline double evaluate_mse(const std::vector<TDEstimate>& est, const std::vector<int>& truth)
{
    detail::require_arg(!est.empty(), "evaluate_mse: empty input");
    detail::require_arg(est.size() == truth.size(), "evaluate_mse: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) {
        const double d = est[i].n_hat_clamped - truth[i];
        acc += d * d;
    }
    return acc / static_cast<double>(est.size());
}

/// Same, after rounding each clamped estimate to the nearest integer.
inline double evaluate_mse_rounded(const std::vector<TDEstimate>& est, const std::vector<int>& truth)
{
    detail::require_arg(!est.empty() && est.size() == truth.size(), "evaluate_mse_rounded: bad input");
    double acc = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) {
        const double d = std::round(est[i].n_hat_clamped) - truth[i];
        acc += d * d;
    }
    return acc / static_cast<double>(est.size());
}

/// Results CSV: index, t, x*, adv*, delta, n_hat, n_hat_clamped, n_hat_rounded,
/// flags (+ true_td and config hash when given). `indices` names the dataset
/// row of each estimate; defaults to 0, 1, ...
inline std::string td_results_csv(const std::vector<TDEstimate>& est, const std::vector<int>* truth = nullptr,
                                  const std::string& config_hash = "", const std::vector<Eigen::Index>* indices = nullptr)
{
    detail::require_arg(truth == nullptr || truth->size() == est.size(), "td_results_csv: label count mismatch");
    detail::require_arg(indices == nullptr || indices->size() == est.size(), "td_results_csv: index count mismatch");
    std::ostringstream os;
    os.precision(12);
    const Eigen::Index n = est.empty() ? 0 : est.front().x.size();
    os << "index,t";
    for (Eigen::Index j = 0; j < n; ++j) os << ",x" << j;
    for (Eigen::Index j = 0; j < n; ++j) os << ",adv" << j;
    os << ",delta,n_hat,n_hat_clamped,n_hat_rounded,flags";
    if (truth != nullptr) os << ",true_td";
    if (!config_hash.empty()) os << ",config_hash";
    os << '\n';
    for (std::size_t i = 0; i < est.size(); ++i) {
        const auto& e = est[i];
        os << (indices ? (*indices)[i] : static_cast<Eigen::Index>(i)) << ',' << e.t;
        for (Eigen::Index j = 0; j < n; ++j) os << ',' << e.x[j];
        for (Eigen::Index j = 0; j < n; ++j) os << ',' << e.x_adv[j];
        os << ',' << e.delta << ',' << e.n_hat << ',' << e.n_hat_clamped << ',' << std::round(e.n_hat_clamped) << ',' << e.flags.str();
        if (truth != nullptr) os << ',' << (*truth)[i];
        if (!config_hash.empty()) os << ',' << config_hash;
        os << '\n';
    }
    return os.str();
}

}  // namespace scoretd
