#pragma once

// End-to-end pipelines: dataset construction from a config, score-map TD
// estimation over a whole sample, kNN baselines, the benchmark
// grid, TD over diffusion time and learned-variance probes.

#include "attack.hpp"
#include "baselines.hpp"
#include "de_regularizer.hpp"
#include "diffusion.hpp"
#include "error.hpp"
#include "manifolds.hpp"
#include "oracle.hpp"
#include "run_config.hpp"
#include "score_model.hpp"
#include "td_estimator.hpp"

#include <Eigen/Core>

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace scoretd {

/// Runs fn(i) for i in [0, count) on up to `workers` threads. Results must be
/// written by index; the first exception (lowest index) is rethrown.
template <class F>
void parallel_for(std::size_t count, int workers, F&& fn)
{
    if (workers <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::exception_ptr err;
    std::size_t err_index = count;
    auto work = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (i < err_index) {
                    err_index = i;
                    err = std::current_exception();
                }
            }
        }
    };
    std::vector<std::jthread> pool;
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(workers), count);
    for (std::size_t w = 0; w < n; ++w) pool.emplace_back(work);
    pool.clear();
    if (err) std::rethrow_exception(err);
}

inline constexpr double kDefaultSwirlNoise = 0.01;

/// Builds (and optionally normalizes) the dataset named in `spec`.
inline ManifoldSample make_dataset(const DatasetSpec& spec, std::uint64_t seed)
{
    ManifoldSample s;
    if (spec.name == "swirl") {
        s = manifolds::gen_swirl(spec.count, spec.noise, seed);
    } else if (spec.name == "swirl_noisy") {
        s = manifolds::gen_swirl(spec.count, spec.noise > 0.0 ? spec.noise : kDefaultSwirlNoise, seed);
    } else if (spec.name == "line_disk_ball") {
        s = manifolds::gen_line_disk_ball(spec.count, seed);
    } else if (spec.name == "hyper_twin_peaks") {
        s = manifolds::gen_hyper_twin_peaks(spec.dim, spec.count, seed);
    } else if (spec.name == "gaussian") {
        s = manifolds::gen_isotropic_gaussian(spec.dim, spec.variance, spec.count, seed);
    } else if (spec.name == "isolated_point") {
        s = manifolds::gen_isolated_point(spec.dim, spec.count);
        return s;  // constant coordinates cannot be z-scored
    } else {
        throw Error(ErrorKind::invalid_argument, "unknown dataset '" + spec.name + "'");
    }
    if (spec.normalize) {
        s = manifolds::normalize(s).first;
    }
    return s;
}

/// Time argument for a model: t for time-conditioned models, none otherwise.
inline std::optional<double> model_time(const ScoreModel& m, double t)
{
    return m.time_conditioned ? std::optional<double>(t) : std::nullopt;
}

/// TD estimate at every listed point of `sample` (all points when `indices` is empty).
inline std::vector<TDEstimate> estimate_sample(const ScoreModel& m, const Eigen::MatrixXd& points, double gamma, const AttackConfig& attack,
                                               int workers = 1, const std::vector<Eigen::Index>& indices = {})
{
    detail::require_arg(points.cols() == m.dim(), "estimate: dataset dimension " + std::to_string(points.cols()) +
                                                      " does not match model dimension " + std::to_string(m.dim()));
    std::vector<Eigen::Index> idx = indices;
    if (idx.empty()) {
        idx.resize(static_cast<std::size_t>(points.rows()));
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
    }
    const double sigma = diffusion::kernel_stats(m.schedule, 0.0).sigma;
    std::vector<TDEstimate> out(idx.size());
    parallel_for(idx.size(), workers, [&](std::size_t i) {
        detail::require_arg(idx[i] >= 0 && idx[i] < points.rows(), "estimate: point index out of range");
        out[i] = estimate_td(m, points.row(idx[i]).transpose(), model_time(m, 0.0), gamma, sigma, attack);
    });
    return out;
}

/// Per-time estimates for each listed point; result[p][k] is point p at times[k].
inline std::vector<std::vector<TDEstimate>> estimate_over_time(const ScoreModel& m, const Eigen::MatrixXd& points,
                                                               const std::vector<Eigen::Index>& indices, const std::vector<double>& times,
                                                               double gamma, const AttackConfig& attack, int workers = 1)
{
    detail::require_arg(m.time_conditioned, "estimate over time: model has no time conditioning");
    std::vector<std::vector<TDEstimate>> out(indices.size());
    parallel_for(indices.size(), workers, [&](std::size_t p) {
        detail::require_arg(indices[p] >= 0 && indices[p] < points.rows(), "estimate over time: point index out of range");
        out[p] = estimate_td_over_time(m, points.row(indices[p]).transpose(), times, gamma, m.schedule, attack);
    });
    return out;
}

/// Index of the sample point closest to each swirl curve position phi, in the
/// coordinates of `sample` (pass the normalization used, if any).
inline std::vector<Eigen::Index> nearest_swirl_points(const ManifoldSample& sample, const std::vector<double>& phis,
                                                      const std::optional<NormalizationStats>& stats)
{
    std::vector<Eigen::Index> out;
    for (double phi : phis) {
        Eigen::MatrixXd c = manifolds::swirl_curve(phi).transpose();
        if (stats) c = stats->apply(c);
        Eigen::Index best = 0;
        (sample.points.rowwise() - c.row(0)).rowwise().squaredNorm().minCoeff(&best);
        out.push_back(best);
    }
    return out;
}

/// Learned variance around `center`: inverse of the mean finite-difference
/// score slope over `directions` random unit directions of half-width eps.
template <ScoreMap Map>
double learned_variance(const Map& score, std::optional<double> t, const Eigen::VectorXd& center, double eps, int directions,
                        std::uint64_t seed)
{
    detail::require_arg(eps > 0.0 && directions >= 1, "learned_variance: need eps > 0 and directions >= 1");
    Rng rng = Rng(seed).split("learned_variance");
    double acc = 0.0;
    for (int k = 0; k < directions; ++k) {
        const Eigen::VectorXd u = rng.unit_vector(center.size());
        acc += (score.eval(center + eps * u, t) - score.eval(center - eps * u, t)).norm() / (2.0 * eps);
    }
    detail::require(acc > 0.0, ErrorKind::numeric, "learned_variance: flat score");
    return directions / acc;
}

/// argmin over s2 of KL(N(0, measured I) || N(0, s2 I)) by golden-section
/// search on [lo, hi] in log space.
inline double kl_best_variance(double measured, int k, double lo, double hi, double tol = 1e-10)
{
    detail::require_arg(0.0 < lo && lo < hi, "kl_best_variance: need 0 < lo < hi");
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = std::log(lo), b = std::log(hi);
    auto f = [&](double x) { return oracle::kl_isotropic(measured, std::exp(x), k); };
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > tol) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    return std::exp(0.5 * (a + b));
}

struct BaselineResult {
    std::string label;
    std::vector<double> estimates;  // per point (MiND repeats its global value)
    double mse = 0.0;
    int mind_dimension = 0;  // MiND only
};

inline BaselineResult run_baseline(const EstimatorSpec& e, const ManifoldSample& s)
{
    BaselineResult r;
    r.label = e.label();
    if (e.kind == EstimatorSpec::Kind::mle) {
        const auto est = mle_levina_bickel(s, e.k);
        r.estimates = est.estimate;
        r.mse = est.mse(s.true_td);
    } else if (e.kind == EstimatorSpec::Kind::mind) {
        const auto m = mind_ml(s, e.k);
        r.mind_dimension = m.dimension;
        r.estimates.assign(static_cast<std::size_t>(s.count()), static_cast<double>(m.dimension));
        r.mse = global_estimate_mse(m.dimension, s.true_td);
    } else {
        throw Error(ErrorKind::invalid_argument, "run_baseline: sm is not a baseline");
    }
    return r;
}

struct SMResult {
    TrainState state;
    std::vector<TDEstimate> estimates;
    double mse = 0.0;
};

/// Trains a score map on `s` with `cfg` and estimates TD at every point.
inline SMResult run_sm(const ManifoldSample& s, const TrainConfig& cfg, int attack_iters, int workers = 1)
{
    SMResult r;
    r.state = train(s.points, cfg);
    const double sigma = diffusion::kernel_stats(cfg.schedule, 0.0).sigma;
    r.estimates = estimate_sample(r.state.model, s.points, cfg.gamma, AttackConfig::pgd(attack_iters, sigma), workers);
    r.mse = evaluate_mse(r.estimates, s.true_td);
    return r;
}

struct BenchmarkSpec {
    std::string label;
    DatasetSpec dataset;
};

/// The four benchmark datasets at `count` points each.
inline std::vector<BenchmarkSpec> table3_benchmarks(long count)
{
    DatasetSpec swirl{"swirl", count, 10, 0.0, 1.0, true};
    DatasetSpec noisy{"swirl_noisy", count, 10, kDefaultSwirlNoise, 1.0, true};
    DatasetSpec ldb{"line_disk_ball", count, 10, 0.0, 1.0, true};
    DatasetSpec htp{"hyper_twin_peaks", count, 10, 0.0, 1.0, true};
    return {{"swirl", swirl}, {"swirl_noisy", noisy}, {"line_disk_ball", ldb}, {"hyper_twin_peaks_10", htp}};
}

struct CellResult {
    std::string benchmark;
    std::string estimator;
    std::vector<std::uint64_t> seeds;
    std::vector<double> trial_mse;

    [[nodiscard]] double mean() const
    {
        double s = 0.0;
        for (double v : trial_mse) s += v;
        return trial_mse.empty() ? 0.0 : s / static_cast<double>(trial_mse.size());
    }
};

struct Table3Result {
    std::vector<CellResult> cells;

    [[nodiscard]] const CellResult& cell(const std::string& benchmark, const std::string& estimator) const
    {
        for (const auto& c : cells) {
            if (c.benchmark == benchmark && c.estimator == estimator) return c;
        }
        throw Error(ErrorKind::invalid_argument, "no cell " + benchmark + "/" + estimator);
    }
};

/// Benchmark x estimator MSE grid, `cfg.trials` trials per cell with seeds
/// cfg.seed + trial. Trials run on `workers` threads.
inline Table3Result run_table3(const RunConfig& cfg, const std::vector<BenchmarkSpec>& benchmarks, int workers = 1)
{
    cfg.validate();
    struct Job {
        std::size_t bench;
        int trial;
    };
    std::vector<Job> jobs;
    for (std::size_t b = 0; b < benchmarks.size(); ++b) {
        for (int t = 0; t < cfg.trials; ++t) jobs.push_back({b, t});
    }
    // mse[job][estimator]
    std::vector<std::vector<double>> mse(jobs.size(), std::vector<double>(cfg.estimators.size()));
    parallel_for(jobs.size(), workers, [&](std::size_t j) {
        const auto& job = jobs[j];
        const std::uint64_t seed = cfg.trial_seed(job.trial);
        const ManifoldSample s = make_dataset(benchmarks[job.bench].dataset, seed);
        for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
            const auto& est = cfg.estimators[e];
            if (est.kind == EstimatorSpec::Kind::sm) {
                TrainConfig tc = cfg.train;
                tc.seed = seed;
                mse[j][e] = run_sm(s, tc, cfg.attack_iters).mse;
            } else {
                mse[j][e] = run_baseline(est, s).mse;
            }
        }
    });
    Table3Result out;
    for (std::size_t b = 0; b < benchmarks.size(); ++b) {
        for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
            CellResult c{benchmarks[b].label, cfg.estimators[e].label(), {}, {}};
            for (std::size_t j = 0; j < jobs.size(); ++j) {
                if (jobs[j].bench != b) continue;
                c.seeds.push_back(cfg.trial_seed(jobs[j].trial));
                c.trial_mse.push_back(mse[j][e]);
            }
            out.cells.push_back(std::move(c));
        }
    }
    return out;
}

}  // namespace scoretd
