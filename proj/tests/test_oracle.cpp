#include "test_util.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace scoretd;
using namespace scoretd::oracle;

TEST(GaussianScore, Examples)
{
    Eigen::VectorXd x(3);
    x << 0.5, -1.0, 2.0;
    EXPECT_LT((gaussian_score(GaussianDensity::isotropic(Eigen::VectorXd::Zero(3), 1.0), x) + x).norm(), 1e-15);

    Eigen::VectorXd y(2);
    y << 2.0, 0.0;
    const Eigen::VectorXd s = gaussian_score(GaussianDensity::isotropic(Eigen::VectorXd::Zero(2), 4.0), y);
    EXPECT_NEAR(s[0], -0.5, 1e-15);
    EXPECT_NEAR(s[1], 0.0, 1e-15);
}

TEST(GaussianScore, SingularCovariance)
{
    GaussianDensity g{Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Zero(2, 2)};
    g.covariance(0, 0) = 1.0;
    EXPECT_THROW((void)gaussian_score(g, Eigen::VectorXd::Zero(2)), Error);
    EXPECT_THROW((void)gaussian_entropy(g), Error);
}

TEST(GaussianEntropy, Examples)
{
    const auto g1 = GaussianDensity::isotropic(Eigen::VectorXd::Zero(1), 1.0);
    EXPECT_NEAR(gaussian_entropy(g1), 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e), 1e-12);
    EXPECT_NEAR(gaussian_entropy(g1), 1.41894, 1e-5);
    const auto g2 = GaussianDensity::isotropic(Eigen::VectorXd::Zero(1), 4.0);
    EXPECT_NEAR(gaussian_entropy(g2) - gaussian_entropy(g1), std::log(2.0), 1e-12);
}

TEST(GaussianEntropy, DirichletEnergyDuality)
{
    // ||ds||^2 = 1 / lambda_min^2; raising lambda_min lowers the energy and raises the entropy.
    const Eigen::MatrixXd Q = random_rotation(4, 3);
    Eigen::VectorXd eig(4);
    eig << 0.2, 0.5, 1.0, 3.0;
    double prev_entropy = -1e300, prev_energy = 1e300;
    for (double lmin : {0.1, 0.15, 0.2, 0.3, 0.45}) {
        eig[0] = lmin;
        GaussianDensity g{Eigen::VectorXd::Zero(4), Q * eig.asDiagonal() * Q.transpose()};
        g.covariance = 0.5 * (g.covariance + g.covariance.transpose()).eval();
        const auto ls = LinearScore::gaussian(g);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(ls.M);
        const double energy = svd.singularValues()[0] * svd.singularValues()[0];
        EXPECT_NEAR(energy, 1.0 / (lmin * lmin), 1e-9 / (lmin * lmin));
        const double h = gaussian_entropy(g);
        EXPECT_LT(energy, prev_energy);
        EXPECT_GT(h, prev_entropy);
        prev_energy = energy;
        prev_entropy = h;
    }
}

TEST(KL, Examples)
{
    EXPECT_EQ(kl_isotropic(0.7, 0.7, 5), 0.0);
    EXPECT_NEAR(kl_isotropic(1.0, 2.0, 1), 0.5 * (0.5 - 1.0 + std::log(2.0)), 1e-15);
    EXPECT_NEAR(kl_isotropic(1.0, 2.0, 1), 0.09657, 1e-5);
    EXPECT_THROW((void)kl_isotropic(0.0, 1.0, 1), Error);
    EXPECT_THROW((void)kl_isotropic(1.0, -1.0, 1), Error);
}

TEST(KL, NonnegativeZeroIffEqual)
{
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        const double a = std::exp(rng.uniform(-5, 5));
        const double b = std::exp(rng.uniform(-5, 5));
        const int k = 1 + static_cast<int>(rng.below(16));
        const double kl = kl_isotropic(a, b, k);
        EXPECT_GE(kl, 0.0);
        EXPECT_EQ(kl_isotropic(a, a, k), 0.0);
        if (std::abs(a / b - 1.0) > 1e-3) EXPECT_GT(kl, 1e-12);
    }
}

TEST(KL, UniqueMinimizerAtEqualVariance)
{
    for (double s1 : {0.3, 1.0, 2.5}) {
        const double best = kl_best_variance(s1, 8, 1e-3, 1e3);
        EXPECT_NEAR(best, s1, 1e-6 * s1);
        // convexity in log s2 on a grid
        double prev = 1e300;
        for (int i = -20; i <= 0; ++i) {
            const double v = kl_isotropic(s1, s1 * std::exp(i / 10.0), 8);
            EXPECT_LE(v, prev + 1e-15);
            prev = v;
        }
    }
}

TEST(FixedPointSlope, Examples)
{
    EXPECT_NEAR(fixed_point_slope({4, 2, 0.04, 0.0}), 25.0, 1e-12);
    EXPECT_NEAR(fixed_point_slope({16, 16, 0.01, 0.01}), 50.0, 1e-12);
    EXPECT_NEAR(fixed_point_slope({2, 1, 0.01, 0.01}), 1.0 / 0.03, 1e-10);
    EXPECT_THROW((void)fixed_point_slope({2, 3, 0.01, 0.0}), Error);
    EXPECT_THROW((void)fixed_point_slope({2, 0, 0.01, 0.0}), Error);
    EXPECT_THROW((void)fixed_point_slope({2, 1, 0.0, 0.0}), Error);
}

TEST(SolveFixedPoint, ConvergesToSlope)
{
    const double tol = 1e-6;
    for (const LocalSplit s : {LocalSplit{4, 2, 0.01, 0.01}, LocalSplit{8, 3, 0.04, 0.1}, LocalSplit{2, 2, 0.01, 1e-3}}) {
        const auto fp = solve_linear_fixed_point(s, tol, 7);
        const Eigen::MatrixXd target = -Eigen::MatrixXd::Identity(s.n_perp, s.n_perp) * fixed_point_slope(s);
        EXPECT_LE((fp.A - target).norm(), tol * s.n_perp);
        EXPECT_LE(fp.b.norm(), tol);
    }
}

TEST(SolveFixedPoint, GammaZeroIsUnregularizedOptimum)
{
    const LocalSplit s{3, 3, 0.04, 0.0};
    const auto fp = solve_linear_fixed_point(s, 1e-10, 1);
    EXPECT_LE((fp.A + Eigen::MatrixXd::Identity(3, 3) / 0.04).norm(), 1e-9);
}

TEST(SolveFixedPoint, ObjectiveMinimal)
{
    const LocalSplit s{6, 2, 0.02, 0.05};
    const auto fp = solve_linear_fixed_point(s, 1e-8, 4);
    Rng rng(8);
    for (int i = 0; i < 20; ++i) {
        Eigen::MatrixXd A = fp.A;
        Eigen::VectorXd b = fp.b;
        A(rng.below(2), rng.below(2)) += rng.uniform(-1, 1);
        b[static_cast<Eigen::Index>(rng.below(2))] += rng.uniform(-1, 1);
        EXPECT_GT(linear_fixed_point_objective(s, A, b), fp.objective);
    }
}

TEST(SolveFixedPoint, CrossValidationGrid)
{
    for (int n : {2, 4, 8, 16}) {
        for (int np = 1; np <= n; ++np) {
            for (double g : {0.0, 1e-3, 1e-2, 1e-1}) {
                for (double s2 : {0.01, 0.04}) {
                    const LocalSplit s{n, np, s2, g};
                    const auto fp = solve_linear_fixed_point(s, 1e-6, static_cast<std::uint64_t>(n * 100 + np));
                    const double slope = -fp.A.trace() / np;
                    EXPECT_NEAR(slope, fixed_point_slope(s), 1e-6) << n << ' ' << np << ' ' << g << ' ' << s2;
                }
            }
        }
    }
}

TEST(SolveFixedPoint, NonConvergenceReportsResidual)
{
    try {
        (void)solve_linear_fixed_point({4, 2, 0.01, 0.01}, 1e-12, 0, 3);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::numeric);
        EXPECT_NE(std::string(e.what()).find("residual"), std::string::npos);
    }
    EXPECT_THROW((void)solve_linear_fixed_point({4, 2, 0.01, 0.01}, 0.0), Error);
}

TEST(OracleScore, Structure)
{
    const LocalSplit s{5, 2, 0.01, 0.01};
    const Eigen::MatrixXd Q = random_rotation(5, 11);
    EXPECT_LE((Q.transpose() * Q - Eigen::MatrixXd::Identity(5, 5)).norm(), 1e-12);
    Eigen::VectorXd c = Eigen::VectorXd::LinSpaced(5, -1, 1);
    const auto ls = build_anisotropic_oracle_score(s, 0.5, c, Q);
    EXPECT_LE(ls.eval(c).norm(), 1e-15);
    const Eigen::VectorXd normal = Q.col(1);
    EXPECT_LE((ls.eval(c + 0.1 * normal) + 0.1 * fixed_point_slope(s) * normal).norm(), 1e-10);
    const Eigen::VectorXd tangent = Q.col(4);
    EXPECT_LE((ls.eval(c + 0.1 * tangent) + 0.05 * tangent).norm(), 1e-12);
    // VJP is the exact transpose.
    Rng rng(1);
    const Eigen::VectorXd v = rng.normal_vector(5);
    EXPECT_LE((ls.vjp(c, std::nullopt, v) + ls.M.transpose() * v).norm(), 1e-15);
}

TEST(OracleScore, TangentScaleMustBeBelowNormalSlope)
{
    const LocalSplit s{4, 2, 0.01, 0.01};
    EXPECT_THROW((void)build_anisotropic_oracle_score(s, fixed_point_slope(s)), Error);
    EXPECT_THROW((void)build_anisotropic_oracle_score(s, -0.1), Error);
    EXPECT_NO_THROW((void)build_anisotropic_oracle_score(s, 0.0));
}
