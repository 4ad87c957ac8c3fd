#pragma once

// Dirichlet-energy regularized denoising score matching.
//
// The squared spectral norm of the score Jacobian is estimated by power
// iteration that alternates reverse-mode VJPs (output side) with central
// finite-difference JVPs (input side). The last input direction u is reused as
// the regularization probe: the penalty is n*gamma*||(s(x+uh/2) - s(x-uh/2))/h||^2
// and gradients flow only through that final output perturbation.

#include "diffusion.hpp"
#include "error.hpp"
#include "optimizer.hpp"
#include "rng.hpp"
#include "score_model.hpp"

#include <Eigen/Core>

#include <chrono>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace scoretd {

struct TrainConfig {
    double gamma = 0.01;
    VPSchedule schedule = VPSchedule::single_scale(0.1);
    long iterations = 20000;
    int batch_size = 64;
    int power_iters = 5;
    double fd_step = 1e-3;
    double base_lr = 1e-3;
    double final_lr = 1e-5;
    std::uint64_t seed = 0;
    std::vector<int> hidden = {64, 64, 64};
    Activation activation = Activation::silu;
    long log_every = 100;
    double divergence_threshold = 1e6;

    void validate() const
    {
        detail::require_arg(gamma >= 0.0 && std::isfinite(gamma), "TrainConfig: gamma must be >= 0");
        detail::require_arg(power_iters >= 1, "TrainConfig: power_iters must be >= 1");
        detail::require_arg(fd_step > 0.0, "TrainConfig: fd_step must be > 0");
        detail::require_arg(iterations >= 1 && batch_size >= 1, "TrainConfig: iterations and batch_size must be >= 1");
        detail::require_arg(log_every >= 1, "TrainConfig: log_every must be >= 1");
    }

    [[nodiscard]] ModelSpec model_spec(int dim) const
    {
        ModelSpec s;
        s.dim = dim;
        s.hidden = hidden;
        s.time_conditioned = schedule.time_dependent();
        s.activation = activation;
        s.scale_output = true;
        s.schedule = schedule;
        return s;
    }
};

struct PowerIterationResult {
    double sq_spectral_norm = 0.0;
    Eigen::VectorXd direction;  // unit input-side vector u
    bool degenerate = false;    // a zero vector showed up while rescaling
};

/// Estimates sigma_max(ds)^2 at x with b rounds of VJP / finite-difference JVP.
template <ScoreMap Map>
PowerIterationResult jacobian_power_iteration(const Map& score, const Eigen::VectorXd& x, std::optional<double> t, int b,
                                              double h, Rng& rng)
{
    detail::require_arg(b >= 1, "jacobian_power_iteration: b must be >= 1");
    detail::require_arg(h > 0.0, "jacobian_power_iteration: h must be > 0");
    const Eigen::Index n = x.size();
    Eigen::VectorXd v = rng.normal_vector(score.dim());
    Eigen::VectorXd u;
    for (int it = 0; it < b; ++it) {
        const double vn = v.norm();
        if (vn == 0.0) {
            return {0.0, rng.unit_vector(n), true};
        }
        v /= vn;
        u = score.vjp(x, t, v);
        const double un = u.norm();
        if (un == 0.0) {
            return {0.0, rng.unit_vector(n), true};
        }
        u /= un;
        v = (score.eval(x + 0.5 * h * u, t) - score.eval(x - 0.5 * h * u, t)) / h;
    }
    return {v.squaredNorm(), u, false};
}

/// n * gamma * ||J u||^2 along the power-iteration direction, J u by central differences.
template <ScoreMap Map>
double de_penalty(const Map& score, const Eigen::VectorXd& x, std::optional<double> t, const TrainConfig& cfg, Rng& rng)
{
    cfg.validate();
    if (cfg.gamma == 0.0) {
        return 0.0;
    }
    const auto pi = jacobian_power_iteration(score, x, t, cfg.power_iters, cfg.fd_step, rng);
    return static_cast<double>(x.size()) * cfg.gamma * pi.sq_spectral_norm;
}

/// Batched power iteration for the MLP; reuses one forward tape at x for every VJP.
/// Returns per-column squared norms and the matrix of unit directions.
struct BatchPowerIteration {
    Eigen::VectorXd sq_spectral_norm;
    Eigen::MatrixXd direction;
    std::vector<bool> degenerate;
};

inline BatchPowerIteration batch_power_iteration(const ScoreModel& m, const Tape& tape, const Eigen::MatrixXd& x,
                                                 std::span<const double> t, int b, double h, Rng& rng)
{
    const Eigen::Index n = m.dim();
    const Eigen::Index B = x.cols();
    BatchPowerIteration res;
    res.degenerate.assign(static_cast<std::size_t>(B), false);
    Eigen::MatrixXd v(n, B);
    for (Eigen::Index j = 0; j < B; ++j) {
        v.col(j) = rng.normal_vector(n);
    }
    Eigen::MatrixXd u(n, B);
    for (int it = 0; it < b; ++it) {
        for (Eigen::Index j = 0; j < B; ++j) {
            const double vn = v.col(j).norm();
            if (vn == 0.0) {
                res.degenerate[static_cast<std::size_t>(j)] = true;
                v.col(j) = rng.unit_vector(n);
            } else {
                v.col(j) /= vn;
            }
        }
        u = vjp_input_batch(m, tape, v);
        for (Eigen::Index j = 0; j < B; ++j) {
            const double un = u.col(j).norm();
            if (un == 0.0) {
                res.degenerate[static_cast<std::size_t>(j)] = true;
                u.col(j) = rng.unit_vector(n);
            } else {
                u.col(j) /= un;
            }
        }
        v = (forward_batch(m, x + 0.5 * h * u, t) - forward_batch(m, x - 0.5 * h * u, t)) / h;
    }
    res.sq_spectral_norm = v.colwise().squaredNorm().transpose();
    for (Eigen::Index j = 0; j < B; ++j) {
        if (res.degenerate[static_cast<std::size_t>(j)]) {
            res.sq_spectral_norm[j] = 0.0;
        }
    }
    res.direction = std::move(u);
    return res;
}

/// Mean estimated sigma_max^2 of the model Jacobian over a set of points (rows).
inline double mean_sq_spectral_norm(const ScoreModel& m, const Eigen::MatrixXd& points, std::optional<double> t, int b, double h,
                                    std::uint64_t seed)
{
    const Eigen::MatrixXd x = points.transpose();
    const std::vector<double> tv = t ? std::vector<double>(static_cast<std::size_t>(x.cols()), *t) : std::vector<double>{};
    const Tape tape = forward_tape(m, x, tv);
    Rng rng = Rng(seed).split("spectral");
    return batch_power_iteration(m, tape, x, tv, b, h, rng).sq_spectral_norm.mean();
}

struct LossTerms {
    double dsm = 0.0;  // mean of lambda(t) * ||s - target||^2
    double de = 0.0;   // mean of lambda(t) * n * gamma * ||J u||^2
    [[nodiscard]] double total() const { return dsm + de; }
};

struct LossAndGrad {
    LossTerms terms;
    Eigen::VectorXd grad;
};

namespace detail {

struct PerturbedBatch {
    Eigen::MatrixXd xt;
    Eigen::MatrixXd target;
    std::vector<double> t;  // empty in single-scale mode
    Eigen::VectorXd lambda;
};

/// Draws t and noise for a batch of clean points (columns). Uses only the
/// "t" and "noise" child streams of `rng`.
inline PerturbedBatch perturb_batch(const VPSchedule& sched, const Eigen::MatrixXd& x0, const Rng& rng)
{
    Rng trng = rng.split("t");
    Rng nrng = rng.split("noise");
    const Eigen::Index n = x0.rows();
    const Eigen::Index B = x0.cols();
    PerturbedBatch pb;
    pb.xt.resize(n, B);
    pb.target.resize(n, B);
    pb.lambda.resize(B);
    if (sched.time_dependent()) {
        pb.t.resize(static_cast<std::size_t>(B));
    }
    for (Eigen::Index j = 0; j < B; ++j) {
        const double t = sched.time_dependent() ? trng.uniform() : 0.0;
        if (sched.time_dependent()) {
            pb.t[static_cast<std::size_t>(j)] = t;
        }
        const auto k = diffusion::kernel_stats(sched, t);
        const Eigen::VectorXd z = nrng.normal_vector(n);
        pb.xt.col(j) = k.alpha * x0.col(j) + k.sigma * z;
        pb.target.col(j) = -z / k.sigma;
        pb.lambda[j] = k.sigma * k.sigma;
    }
    return pb;
}

inline void check_loss(const LossTerms& terms, const PerturbedBatch& pb, const Eigen::VectorXd& penalty)
{
    if (std::isfinite(terms.total())) {
        return;
    }
    std::ostringstream os;
    os << "non-finite loss (dsm " << terms.dsm << ", de " << terms.de << ")";
    for (Eigen::Index j = 0; j < pb.xt.cols(); ++j) {
        const double pen = penalty.size() ? penalty[j] : 0.0;
        if (!std::isfinite(pb.xt.col(j).norm()) || !std::isfinite(pen)) {
            os << "; first bad sample " << j << ": t=" << (pb.t.empty() ? 0.0 : pb.t[static_cast<std::size_t>(j)])
               << " |x_t|=" << pb.xt.col(j).norm() << " penalty=" << pen;
            break;
        }
    }
    throw Error(ErrorKind::numeric, os.str());
}

}  // namespace detail

/// Weighted denoising score matching only: mean_j lambda(t_j) ||s(x_t) - target||^2.
inline LossAndGrad weighted_dsm_loss(const ScoreModel& m, const Eigen::MatrixXd& x0, const VPSchedule& sched, const Rng& rng,
                                     bool want_grad = true)
{
    detail::require_arg(x0.cols() >= 1, "weighted_dsm_loss: empty batch");
    const auto pb = detail::perturb_batch(sched, x0, rng);
    const double B = static_cast<double>(x0.cols());
    const Tape tape = forward_tape(m, pb.xt, pb.t);
    const Eigen::MatrixXd r = tape.output - pb.target;
    LossAndGrad out;
    out.terms.dsm = (r.colwise().squaredNorm().transpose().array() * pb.lambda.array()).sum() / B;
    detail::check_loss(out.terms, pb, Eigen::VectorXd());
    if (want_grad) {
        const Eigen::MatrixXd g = (r.array().rowwise() * (2.0 * pb.lambda.transpose().array() / B)).matrix();
        out.grad = Eigen::VectorXd::Zero(m.param_count());
        accumulate_param_grad(m, tape, g, out.grad);
    }
    return out;
}

/// Full objective: mean_j lambda(t_j) * ( ||s(x_t) - target||^2 + n gamma ||J u_j||^2 ).
/// The probe u_j comes from a fresh Gaussian-seeded power iteration per sample
/// and is held constant for the gradient.
inline LossAndGrad regularized_dsm_loss(const ScoreModel& m, const Eigen::MatrixXd& x0, const TrainConfig& cfg, const Rng& rng,
                                        bool want_grad = true)
{
    if (cfg.gamma == 0.0) {
        return weighted_dsm_loss(m, x0, cfg.schedule, rng, want_grad);
    }
    detail::require_arg(x0.cols() >= 1, "regularized_dsm_loss: empty batch");
    const auto pb = detail::perturb_batch(cfg.schedule, x0, rng);
    const Eigen::Index n = x0.rows();
    const double B = static_cast<double>(x0.cols());
    const Tape tape = forward_tape(m, pb.xt, pb.t);
    const Eigen::MatrixXd r = tape.output - pb.target;

    Rng prng = rng.split("probe");
    const auto pi = batch_power_iteration(m, tape, pb.xt, pb.t, cfg.power_iters, cfg.fd_step, prng);
    const double h = cfg.fd_step;
    const Tape plus = forward_tape(m, pb.xt + 0.5 * h * pi.direction, pb.t);
    const Tape minus = forward_tape(m, pb.xt - 0.5 * h * pi.direction, pb.t);
    const Eigen::MatrixXd d = (plus.output - minus.output) / h;
    const double ng = static_cast<double>(n) * cfg.gamma;
    const Eigen::VectorXd penalty = ng * d.colwise().squaredNorm().transpose();

    LossAndGrad out;
    out.terms.dsm = (r.colwise().squaredNorm().transpose().array() * pb.lambda.array()).sum() / B;
    out.terms.de = (penalty.array() * pb.lambda.array()).sum() / B;
    detail::check_loss(out.terms, pb, penalty);
    if (want_grad) {
        out.grad = Eigen::VectorXd::Zero(m.param_count());
        const Eigen::MatrixXd g = (r.array().rowwise() * (2.0 * pb.lambda.transpose().array() / B)).matrix();
        accumulate_param_grad(m, tape, g, out.grad);
        const Eigen::MatrixXd gd = (d.array().rowwise() * (2.0 * ng / (h * B) * pb.lambda.transpose().array())).matrix();
        accumulate_param_grad(m, plus, gd, out.grad);
        accumulate_param_grad(m, minus, -gd, out.grad);
    }
    return out;
}

struct TrainLogRow {
    long iteration = 0;
    double lr = 0.0;
    double dsm_loss = 0.0;
    double de_penalty = 0.0;
    double wallclock = 0.0;
};

inline std::string training_log_csv(const std::vector<TrainLogRow>& rows)
{
    std::ostringstream os;
    os.precision(10);
    os << "iteration,lr,dsm_loss,de_penalty,wallclock\n";
    for (const auto& r : rows) {
        os << r.iteration << ',' << r.lr << ',' << r.dsm_loss << ',' << r.de_penalty << ',' << r.wallclock << '\n';
    }
    return os.str();
}

struct TrainState {
    ScoreModel model;
    OptimizerState optimizer;
    std::vector<TrainLogRow> log;
};

class TrainingDiverged : public Error {
public:
    TrainingDiverged(const std::string& what, TrainState last_good)
        : Error(ErrorKind::numeric, what), last_good_(std::move(last_good))
    {
    }

    [[nodiscard]] const TrainState& last_good() const noexcept { return last_good_; }

private:
    TrainState last_good_;
};

/// Fresh model and optimizer for `cfg` on data of dimension `dim`.
inline TrainState init_training(int dim, const TrainConfig& cfg)
{
    cfg.validate();
    TrainState st;
    st.model = make_score_model(cfg.model_spec(dim), cfg.seed);
    st.model.gamma = cfg.gamma;
    st.optimizer = OptimizerState::make(st.model.param_count(), cfg.base_lr, cfg.final_lr, cfg.iterations);
    return st;
}

/// Runs optimizer steps until `stop_at` (or cfg.iterations). All randomness of
/// step k derives from (cfg.seed, k), so a run resumed from a saved state
/// reproduces the uninterrupted run exactly.
inline void train_steps(TrainState& st, const Eigen::MatrixXd& data, const TrainConfig& cfg, std::optional<long> stop_at = std::nullopt)
{
    cfg.validate();
    detail::require_arg(data.rows() >= 1, "train: empty dataset");
    detail::require_arg(data.cols() == st.model.dim(), "train: dataset dimension does not match the model");
    const long end = std::min(stop_at.value_or(cfg.iterations), st.optimizer.total_steps);
    const Eigen::Index n = data.cols();
    const auto count = static_cast<std::uint64_t>(data.rows());
    const Rng base = Rng(cfg.seed).split("train");
    const auto t0 = std::chrono::steady_clock::now();

    TrainState last_good = st;
    double acc_dsm = 0.0, acc_de = 0.0;
    long acc_n = 0;
    Eigen::MatrixXd batch(n, cfg.batch_size);
    while (st.optimizer.step < end) {
        const long k = st.optimizer.step;
        const Rng step_rng = base.split(static_cast<std::uint64_t>(k));
        Rng pick = step_rng.split("batch");
        for (int j = 0; j < cfg.batch_size; ++j) {
            batch.col(j) = data.row(static_cast<Eigen::Index>(pick.below(count))).transpose();
        }
        LossAndGrad lg;
        try {
            lg = regularized_dsm_loss(st.model, batch, cfg, step_rng.split("loss"));
        } catch (const Error& e) {
            throw TrainingDiverged("training diverged at iteration " + std::to_string(k) + ": " + e.what(), last_good);
        }
        if (!(lg.terms.total() <= cfg.divergence_threshold)) {
            throw TrainingDiverged("training diverged at iteration " + std::to_string(k) + ": loss " + std::to_string(lg.terms.total()),
                                   last_good);
        }
        const double lr = learning_rate(st.optimizer, k);
        opt_step(st.optimizer, st.model.params, lg.grad);
        acc_dsm += lg.terms.dsm;
        acc_de += lg.terms.de;
        ++acc_n;
        if (st.optimizer.step % cfg.log_every == 0 || st.optimizer.step == end) {
            const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            st.log.push_back({st.optimizer.step, lr, acc_dsm / acc_n, acc_de / acc_n, wall});
            acc_dsm = acc_de = 0.0;
            acc_n = 0;
            last_good = st;
        }
    }
}

/// Trains a fresh model on the rows of `data`.
inline TrainState train(const Eigen::MatrixXd& data, const TrainConfig& cfg)
{
    TrainState st = init_training(static_cast<int>(data.cols()), cfg);
    train_steps(st, data, cfg);
    return st;
}

}  // namespace scoretd
