#pragma once

#include "error.hpp"
#include "rng.hpp"
#include "score_model.hpp"

#include <Eigen/Core>

#include <cmath>
#include <optional>

namespace scoretd {

/// L2-ball projected ascent along -s(x).
struct AttackConfig {
    double epsilon = 0.1;
    int iters = 10;
    double step_size = 0.02;
    std::uint64_t seed = 0;  // only used for the zero-score fallback direction

    /// PGD(iters, epsilon) with the default step 2*epsilon/iters.
    static AttackConfig pgd(int iters, double epsilon, std::uint64_t seed = 0)
    {
        return {epsilon, iters, 2.0 * epsilon / iters, seed};
    }

    [[nodiscard]] AttackConfig with_epsilon(double eps) const
    {
        AttackConfig c = *this;
        c.step_size *= eps / epsilon;
        c.epsilon = eps;
        return c;
    }

    void validate() const
    {
        detail::require_arg(epsilon > 0.0 && std::isfinite(epsilon), "attack: epsilon must be > 0");
        detail::require_arg(iters >= 1, "attack: iters must be >= 1");
        detail::require_arg(step_size > 0.0, "attack: step_size must be > 0");
        detail::require_arg(step_size * iters >= epsilon * (1.0 - 1e-12), "attack: step_size * iters must reach epsilon");
    }
};

struct AttackResult {
    Eigen::VectorXd x_adv;
    bool fallback = false;  // a zero score forced the random direction on some step
};

template <ScoreMap Map>
AttackResult pgd_l2(const Map& score, const Eigen::VectorXd& x, std::optional<double> t, const AttackConfig& cfg)
{
    cfg.validate();
    AttackResult res;
    res.x_adv = x;
    std::optional<Eigen::VectorXd> fallback_dir;
    for (int it = 0; it < cfg.iters; ++it) {
        Eigen::VectorXd dir = -score.eval(res.x_adv, t);
        const double norm = dir.norm();
        if (!std::isfinite(norm)) {
            throw Error(ErrorKind::numeric, "pgd_l2: non-finite score");
        }
        if (norm == 0.0) {
            if (!fallback_dir) {
                Rng rng = Rng(cfg.seed).split("pgd/fallback");
                fallback_dir = rng.unit_vector(x.size());
            }
            dir = *fallback_dir;
            res.fallback = true;
        } else {
            dir /= norm;
        }
        res.x_adv += cfg.step_size * dir;
        const Eigen::VectorXd d = res.x_adv - x;
        const double dn = d.norm();
        if (dn > cfg.epsilon) {
            res.x_adv = x + d * (cfg.epsilon / dn);
        }
    }
    return res;
}

/// x + epsilon * u with u uniform on the unit sphere.
inline Eigen::VectorXd random_l2(const Eigen::VectorXd& x, double epsilon, std::uint64_t seed)
{
    detail::require_arg(epsilon > 0.0, "random_l2: epsilon must be > 0");
    Rng rng = Rng(seed).split("random_l2");
    return x + epsilon * rng.unit_vector(x.size());
}

}  // namespace scoretd
