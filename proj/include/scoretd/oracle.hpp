#pragma once

// Closed-form Gaussian machinery used as ground truth: exact scores, entropy,
// isotropic KL, the regularized fixed point of a linear score, and linear
// score maps with a known tangent/normal split.

#include "error.hpp"
#include "rng.hpp"
#include "score_model.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/QR>

#include <cmath>
#include <numbers>
#include <optional>

namespace scoretd::oracle {

struct GaussianDensity {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;

    static GaussianDensity isotropic(const Eigen::VectorXd& mean, double variance)
    {
        detail::require_arg(variance > 0.0, "GaussianDensity: variance must be > 0");
        return {mean, variance * Eigen::MatrixXd::Identity(mean.size(), mean.size())};
    }

    [[nodiscard]] Eigen::LLT<Eigen::MatrixXd> factor() const
    {
        detail::require_arg(covariance.rows() == mean.size() && covariance.cols() == mean.size(),
                            "GaussianDensity: covariance shape mismatch");
        detail::require_arg(covariance.isApprox(covariance.transpose(), 1e-12), "GaussianDensity: covariance not symmetric");
        Eigen::LLT<Eigen::MatrixXd> llt(covariance);
        if (llt.info() != Eigen::Success) {
            throw Error(ErrorKind::numeric, "GaussianDensity: singular or indefinite covariance");
        }
        const auto d = llt.matrixL().toDenseMatrix().diagonal();
        if (!(d.minCoeff() > 0.0)) {
            throw Error(ErrorKind::numeric, "GaussianDensity: singular covariance");
        }
        return llt;
    }
};

/// grad_x log p(x) = -Sigma^{-1} (x - mu).
inline Eigen::VectorXd gaussian_score(const GaussianDensity& g, const Eigen::VectorXd& x)
{
    detail::require_arg(x.size() == g.mean.size(), "gaussian_score: shape mismatch");
    return -g.factor().solve(x - g.mean);
}

/// Differential entropy in nats: (k/2) log(2 pi e) + (1/2) log det Sigma.
inline double gaussian_entropy(const GaussianDensity& g)
{
    const auto llt = g.factor();
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double k = static_cast<double>(g.mean.size());
    return 0.5 * k * std::log(2.0 * std::numbers::pi * std::numbers::e) + 0.5 * logdet;
}

/// KL( N(0, s1 I) || N(0, s2 I) ) in k dimensions.
inline double kl_isotropic(double sigma1_sq, double sigma2_sq, int k)
{
    detail::require_arg(sigma1_sq > 0.0 && sigma2_sq > 0.0, "kl_isotropic: variances must be > 0");
    detail::require_arg(k >= 1, "kl_isotropic: k must be >= 1");
    const double r = sigma1_sq / sigma2_sq;
    // r - 1 - log r, written to stay accurate near r = 1.
    return 0.5 * k * ((r - 1.0) - std::log1p(r - 1.0));
}

/// Local tangent/normal split around a manifold point.
struct LocalSplit {
    int n = 1;
    int n_perp = 1;
    double sigma_sq = 0.01;
    double gamma = 0.0;

    void validate() const
    {
        detail::require_arg(n >= 1 && n_perp >= 1 && n_perp <= n, "LocalSplit: need 0 < n_perp <= n");
        detail::require_arg(sigma_sq > 0.0, "LocalSplit: sigma_sq must be > 0");
        detail::require_arg(gamma >= 0.0, "LocalSplit: gamma must be >= 0");
    }

    /// (n / n_perp) * gamma, the per-direction regularization weight.
    [[nodiscard]] double effective_gamma() const { return static_cast<double>(n) / n_perp * gamma; }
};

/// Predicted normal-direction slope at the regularized fixed point.
inline double fixed_point_slope(const LocalSplit& s)
{
    s.validate();
    return 1.0 / (s.sigma_sq + s.effective_gamma());
}

struct LinearFixedPoint {
    Eigen::MatrixXd A;
    Eigen::VectorXd b;
    long iterations = 0;
    double objective = 0.0;
};

/// Value of E_{x ~ N(0, sigma^2 I)} ||b + (A + I/sigma^2) x||^2 + c ||A||_F^2, c = (n/n_perp) gamma.
inline double linear_fixed_point_objective(const LocalSplit& s, const Eigen::MatrixXd& A, const Eigen::VectorXd& b)
{
    const Eigen::MatrixXd shifted = A + Eigen::MatrixXd::Identity(A.rows(), A.cols()) / s.sigma_sq;
    return b.squaredNorm() + s.sigma_sq * shifted.squaredNorm() + s.effective_gamma() * A.squaredNorm();
}

/// Minimizes the regularized quadratic criterion of a local linear score
/// s(x_perp) = A x_perp + b by deterministic gradient descent. The expectation
/// is evaluated exactly: E||b + (A + S^{-1})x||^2 = ||b||^2 + sigma^2 ||A + S^{-1}||_F^2.
///
/// Stops once the gradient bounds the distance to the optimum by 0.05 * tol.
inline LinearFixedPoint solve_linear_fixed_point(const LocalSplit& s, double tol, std::uint64_t seed = 0, long max_iters = 1'000'000)
{
    s.validate();
    detail::require_arg(tol > 0.0, "solve_linear_fixed_point: tol must be > 0");
    const int k = s.n_perp;
    const double c = s.effective_gamma();
    const double curvature_a = s.sigma_sq + c;  // half the Hessian eigenvalue in A
    const double step = 0.45 / std::max(1.0, curvature_a);

    Rng rng = Rng(seed).split("fixed_point/start");
    Eigen::MatrixXd perturb(k, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        for (Eigen::Index i = 0; i < k; ++i) {
            perturb(i, j) = rng.normal();
        }
    }
    LinearFixedPoint fp;
    // Start from the unregularized optimum with an SPD perturbation.
    fp.A = -Eigen::MatrixXd::Identity(k, k) / s.sigma_sq + (perturb * perturb.transpose()) / s.sigma_sq / k;
    fp.b = rng.normal_vector(k) / s.sigma_sq;

    const Eigen::MatrixXd inv_sigma = Eigen::MatrixXd::Identity(k, k) / s.sigma_sq;
    for (long it = 0; it < max_iters; ++it) {
        const Eigen::MatrixXd grad_a = 2.0 * s.sigma_sq * (fp.A + inv_sigma) + 2.0 * c * fp.A;
        const Eigen::VectorXd grad_b = 2.0 * fp.b;
        const double dist_a = grad_a.norm() / (2.0 * curvature_a);
        const double dist_b = grad_b.norm() / 2.0;
        if (dist_a <= 0.05 * tol && dist_b <= 0.05 * tol) {
            fp.iterations = it;
            fp.objective = linear_fixed_point_objective(s, fp.A, fp.b);
            return fp;
        }
        fp.A -= step * grad_a;
        fp.b -= step * grad_b;
    }
    const Eigen::MatrixXd grad_a = 2.0 * s.sigma_sq * (fp.A + inv_sigma) + 2.0 * c * fp.A;
    throw Error(ErrorKind::numeric,
                "solve_linear_fixed_point: no convergence after " + std::to_string(max_iters) + " iterations, residual " +
                    std::to_string(grad_a.norm() + 2.0 * fp.b.norm()));
}

/// Affine score s(x) = -M (x - mu). Exact VJP is -M^T v.
struct LinearScore {
    Eigen::MatrixXd M;
    Eigen::VectorXd mu;

    [[nodiscard]] Eigen::Index dim() const { return M.rows(); }

    [[nodiscard]] Eigen::VectorXd eval(const Eigen::VectorXd& x, std::optional<double> = std::nullopt) const
    {
        detail::require_arg(x.size() == mu.size(), "LinearScore: shape mismatch");
        return -M * (x - mu);
    }

    [[nodiscard]] Eigen::VectorXd vjp(const Eigen::VectorXd&, std::optional<double>, const Eigen::VectorXd& v) const
    {
        return -M.transpose() * v;
    }

    static LinearScore gaussian(const GaussianDensity& g)
    {
        return {g.factor().solve(Eigen::MatrixXd::Identity(g.mean.size(), g.mean.size())), g.mean};
    }
};

static_assert(ScoreMap<LinearScore>);

/// Random orthogonal matrix (QR of a Gaussian matrix with sign fix).
inline Eigen::MatrixXd random_rotation(int n, std::uint64_t seed)
{
    Rng rng = Rng(seed).split("rotation");
    Eigen::MatrixXd g(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) {
            g(i, j) = rng.normal();
        }
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::VectorXd d = qr.matrixQR().diagonal();
    for (Eigen::Index j = 0; j < n; ++j) {
        if (d[j] < 0.0) {
            q.col(j) = -q.col(j);
        }
    }
    return q;
}

/// Linear score of the regularized fixed point: slope fixed_point_slope(split)
/// on the first n_perp coordinates of `basis` (the normal subspace) and
/// `tangent_scale` on the remaining ones. Identity basis when none is given.
inline LinearScore build_anisotropic_oracle_score(const LocalSplit& split, double tangent_scale,
                                                  const Eigen::VectorXd& center = Eigen::VectorXd(),
                                                  const Eigen::MatrixXd& basis = Eigen::MatrixXd())
{
    split.validate();
    const double normal_slope = fixed_point_slope(split);
    detail::require_arg(tangent_scale >= 0.0, "oracle score: tangent_scale must be >= 0");
    detail::require_arg(tangent_scale < normal_slope, "oracle score: tangent_scale must be strictly below the normal slope");
    const int n = split.n;
    Eigen::VectorXd diag(n);
    diag.head(split.n_perp).setConstant(normal_slope);
    diag.tail(n - split.n_perp).setConstant(tangent_scale);
    const Eigen::MatrixXd Q = basis.size() == 0 ? Eigen::MatrixXd::Identity(n, n) : basis;
    detail::require_arg(Q.rows() == n && Q.cols() == n, "oracle score: basis shape mismatch");
    LinearScore s;
    s.M = Q * diag.asDiagonal() * Q.transpose();
    s.mu = center.size() == 0 ? Eigen::VectorXd::Zero(n) : center;
    return s;
}

}  // namespace scoretd::oracle
