#include "gradient_checks.hpp"

#include <gtest/gtest.h>

using namespace scoretd;

namespace {

ScoreModel linear_model(const Eigen::MatrixXd& A, const Eigen::VectorXd& b)
{
    ModelSpec spec;
    spec.dim = static_cast<int>(A.rows());
    spec.hidden = {};
    spec.scale_output = false;
    auto m = make_score_model(spec, 0);
    m.weight(0) = A;
    m.bias(0) = b;
    return m;
}

}  // namespace

TEST(Forward, ZeroFinalLayerGivesZero)
{
    ModelSpec spec;
    spec.dim = 3;
    spec.hidden = {16, 16};
    const auto m = make_score_model(spec, 4);
    Rng rng(1);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(forward(m, rng.normal_vector(3)), Eigen::VectorXd::Zero(3));
}

TEST(Forward, LinearModelExact)
{
    Eigen::MatrixXd A(2, 2);
    A << 1.0, 2.0, -0.5, 3.0;
    Eigen::VectorXd b(2);
    b << 0.1, -0.2;
    const auto m = linear_model(A, b);
    Eigen::VectorXd x(2);
    x << 0.3, -0.7;
    EXPECT_LT((forward(m, x) - (A * x + b)).norm(), 1e-15);
}

TEST(Forward, LipschitzBoundedByLayerNorms)
{
    const auto m = testutil::random_mlp(4, {16, 16}, 3);
    double bound = 1.0;
    for (int l = 0; l < m.num_layers(); ++l) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(m.weight(l));
        bound *= svd.singularValues()[0];
    }
    bound *= 1.1;  // silu' <= 1.1
    Rng rng(6);
    double worst = 0.0;
    for (int i = 0; i < 500; ++i) {
        const Eigen::VectorXd x = rng.uniform(-1, 1) * rng.unit_vector(4);
        const Eigen::VectorXd d = 1e-3 * rng.unit_vector(4);
        worst = std::max(worst, (forward(m, x + d) - forward(m, x)).norm() / d.norm());
    }
    EXPECT_LE(worst, bound);
}

TEST(Forward, Errors)
{
    const auto m = testutil::random_mlp(3, {4}, 1);
    EXPECT_THROW((void)forward(m, Eigen::VectorXd::Zero(2)), Error);
    EXPECT_THROW((void)forward(m, Eigen::VectorXd::Zero(3), 0.5), Error);
    Eigen::VectorXd bad = Eigen::VectorXd::Zero(3);
    bad[1] = std::nan("");
    EXPECT_THROW((void)forward(m, bad), Error);
    const auto tm = testutil::random_mlp(3, {4}, 1, true);
    EXPECT_THROW((void)forward(tm, Eigen::VectorXd::Zero(3)), Error);
    EXPECT_NO_THROW((void)forward(tm, Eigen::VectorXd::Zero(3), 0.5));
}

TEST(Forward, Deterministic)
{
    const auto m = testutil::random_mlp(5, {8, 8}, 2, true);
    const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(5, -1, 1);
    EXPECT_EQ(forward(m, x, 0.3), forward(m, x, 0.3));
    EXPECT_EQ(make_score_model(ModelSpec{}, 9).params, make_score_model(ModelSpec{}, 9).params);
}

TEST(Vjp, LinearModelIsTranspose)
{
    Eigen::MatrixXd A(3, 3);
    A << 1, 2, 3, 4, 5, 6, 7, 8, 10;
    const auto m = linear_model(A, Eigen::VectorXd::Ones(3));
    Rng rng(2);
    const Eigen::VectorXd v = rng.normal_vector(3);
    EXPECT_LT((vjp_input(m, rng.normal_vector(3), std::nullopt, v) - A.transpose() * v).norm(), 1e-13);
    EXPECT_EQ(vjp_input(m, Eigen::VectorXd::Ones(3), std::nullopt, Eigen::VectorXd::Zero(3)), Eigen::VectorXd::Zero(3));
}

TEST(Vjp, MatchesFiniteDifferenceJacobian)
{
    const auto r = gradcheck::vjp_vs_fd_jacobian(100, 17);
    EXPECT_EQ(r.probes, 100);
    EXPECT_LE(r.worst, 1e-5);
}

TEST(Vjp, AdjointToFiniteDifferenceJvp)
{
    const auto r = gradcheck::vjp_jvp_adjointness(100, 18);
    EXPECT_LE(r.worst, 1e-3);
}

TEST(Vjp, NonFiniteIntermediateReportsLayer)
{
    auto m = testutil::random_mlp(2, {4, 4}, 5);
    m.weight(1)(0, 0) = 1e308;
    m.weight(0).setConstant(1e3);
    try {
        (void)vjp_input(m, Eigen::VectorXd::Ones(2), std::nullopt, Eigen::VectorXd::Ones(2));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::numeric);
        EXPECT_NE(std::string(e.what()).find("layer"), std::string::npos);
    }
}

TEST(GradParams, DirectionalDerivative)
{
    const auto r = gradcheck::param_gradient(100, 19);
    EXPECT_LE(r.worst, 1e-4);
}

TEST(GradParams, ZeroLastLayerGivesZeroLastWeightGradient)
{
    ModelSpec spec;
    spec.dim = 3;
    spec.hidden = {8, 8};
    const auto m = make_score_model(spec, 2);
    Rng rng(1);
    const Eigen::MatrixXd x = Eigen::MatrixXd::NullaryExpr(3, 5, [&] { return rng.normal(); });
    auto loss = [](const Eigen::MatrixXd& out, Eigen::MatrixXd& g) {
        g = 2.0 * out;
        return out.squaredNorm();
    };
    const Eigen::VectorXd g = grad_params(m, x, {}, loss);
    EXPECT_TRUE(g.isZero(0.0));
}

TEST(GradParams, DuplicatedBatchRowsMeanInvariant)
{
    const auto m = testutil::random_mlp(3, {8}, 7);
    Rng rng(4);
    const Eigen::MatrixXd x = Eigen::MatrixXd::NullaryExpr(3, 4, [&] { return rng.normal(); });
    Eigen::MatrixXd xx(3, 8);
    xx << x, x;
    auto mean_loss = [](const Eigen::MatrixXd& out, Eigen::MatrixXd& g) {
        const double B = static_cast<double>(out.cols());
        g = 2.0 * out / B;
        return out.squaredNorm() / B;
    };
    const Eigen::VectorXd g1 = grad_params(m, x, {}, mean_loss);
    const Eigen::VectorXd g2 = grad_params(m, xx, {}, mean_loss);
    EXPECT_LE((g1 - g2).norm(), 1e-13 * g1.norm());
}

TEST(GradParams, NonFiniteLoss)
{
    const auto m = testutil::random_mlp(2, {4}, 1);
    auto loss = [](const Eigen::MatrixXd&, Eigen::MatrixXd& g) {
        g.setZero();
        return std::numeric_limits<double>::infinity();
    };
    EXPECT_THROW((void)grad_params(m, Eigen::MatrixXd::Ones(2, 1), {}, loss), Error);
}

TEST(Optimizer, ZeroGradientLeavesParams)
{
    auto s = OptimizerState::make(3, 1e-3, 1e-5, 10);
    s.m.setConstant(1.0);
    s.v.setConstant(1.0);
    Eigen::VectorXd p = Eigen::VectorXd::LinSpaced(3, 0, 1);
    const Eigen::VectorXd before = p;
    opt_step(s, p, Eigen::VectorXd::Zero(3));
    EXPECT_EQ(s.step, 1);
    EXPECT_TRUE((s.m.array() < 1.0).all());
    EXPECT_TRUE((s.v.array() < 1.0).all());
    // moment decay alone still moves params; a fresh state must not
    auto fresh = OptimizerState::make(3, 1e-3, 1e-5, 10);
    Eigen::VectorXd q = before;
    opt_step(fresh, q, Eigen::VectorXd::Zero(3));
    EXPECT_EQ(q, before);
}

TEST(Optimizer, ScalarQuadraticConverges)
{
    auto s = OptimizerState::make(1, 1e-2, 1e-5, 2000);
    Eigen::VectorXd th = Eigen::VectorXd::Zero(1);
    for (int i = 0; i < 2000; ++i) opt_step(s, th, Eigen::VectorXd::Constant(1, 2.0 * (th[0] - 3.0)));
    EXPECT_LE(std::abs(th[0] - 3.0), 1e-3);
}

TEST(Optimizer, CosineSchedule)
{
    const auto s = OptimizerState::make(1, 1e-3, 1e-5, 1000);
    EXPECT_EQ(learning_rate(s, 0), 1e-3);
    EXPECT_EQ(learning_rate(s, 1000), 1e-5);
    double prev = 1.0;
    for (long k = 0; k <= 1000; ++k) {
        const double lr = learning_rate(s, k);
        EXPECT_LE(lr, prev);
        prev = lr;
    }
}

TEST(Optimizer, NonFiniteGradientNoPartialUpdate)
{
    auto s = OptimizerState::make(2, 1e-3, 1e-5, 10);
    Eigen::VectorXd p = Eigen::VectorXd::Ones(2);
    Eigen::VectorXd g(2);
    g << 1.0, std::nan("");
    EXPECT_THROW(opt_step(s, p, g), Error);
    EXPECT_EQ(s.step, 0);
    EXPECT_EQ(p, Eigen::VectorXd::Ones(2));
    EXPECT_TRUE(s.m.isZero(0.0));
}

TEST(Optimizer, ExhaustedSchedule)
{
    auto s = OptimizerState::make(1, 1e-3, 1e-5, 1);
    Eigen::VectorXd p = Eigen::VectorXd::Zero(1);
    opt_step(s, p, Eigen::VectorXd::Ones(1));
    EXPECT_THROW(opt_step(s, p, Eigen::VectorXd::Ones(1)), Error);
}

TEST(Checkpoint, RoundTripBitExact)
{
    auto m = testutil::random_mlp(3, {8, 8}, 21, true, Activation::tanh);
    m.gamma = 0.0123;
    auto opt = OptimizerState::make(m.param_count(), 1e-3, 1e-5, 77);
    opt.step = 5;
    opt.m.setConstant(0.1 / 3.0);
    opt.v.setConstant(1e-7 / 3.0);
    const auto back = deserialize_checkpoint(serialize_checkpoint(m, &opt));
    EXPECT_EQ(back.model.layer_sizes, m.layer_sizes);
    EXPECT_EQ(back.model.params, m.params);
    EXPECT_EQ(back.model.time_conditioned, true);
    EXPECT_EQ(back.model.activation, Activation::tanh);
    EXPECT_EQ(back.model.gamma, m.gamma);
    EXPECT_EQ(back.model.schedule.id(), "vp");
    EXPECT_EQ(back.model.schedule.beta_max, m.schedule.beta_max);
    ASSERT_TRUE(back.optimizer.has_value());
    EXPECT_EQ(back.optimizer->step, 5);
    EXPECT_EQ(back.optimizer->m, opt.m);
    EXPECT_EQ(back.optimizer->v, opt.v);
    EXPECT_EQ(back.optimizer->total_steps, 77);

    const auto no_opt = deserialize_checkpoint(serialize_checkpoint(m));
    EXPECT_FALSE(no_opt.optimizer.has_value());
}

TEST(Checkpoint, Malformed)
{
    const auto m = testutil::random_mlp(2, {4}, 1);
    const std::string text = serialize_checkpoint(m);
    EXPECT_THROW((void)deserialize_checkpoint(text.substr(0, text.size() - 20)), Error);
    EXPECT_THROW((void)deserialize_checkpoint("garbage"), Error);
    try {
        (void)load_checkpoint("/nonexistent/model.ckpt");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::io);
    }
}
