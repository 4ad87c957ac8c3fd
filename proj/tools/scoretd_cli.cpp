// scoretd: dataset generation, training, TD estimation, kNN baselines and the
// benchmark x estimator MSE grid.
//
// Every RunConfig key is also a flag (--batch-size for batch_size, ...).
// Values are applied in order: defaults, --config file, flags.
// Exit codes: 0 ok, 1 usage / invalid argument, 2 numeric failure, 3 I/O.

#include "scoretd/scoretd.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace scoretd;

namespace {

struct ConfigFlags {
    std::string config_path;
    std::map<std::string, std::string> values;  // key -> raw value, only for flags given

    void attach(CLI::App& app)
    {
        app.add_option("--config", config_path, "key = value run configuration file");
        for (const auto& key : config_io::known_keys()) {
            std::string flag = "--" + key;
            for (auto& c : flag) {
                if (c == '_') c = '-';
            }
            app.add_option(flag, values[key], "config key '" + key + "'");
        }
    }

    /// Keys set by the file or the command line.
    [[nodiscard]] std::map<std::string, std::string> explicit_keys(const CLI::App& app) const
    {
        std::map<std::string, std::string> out;
        if (!config_path.empty()) {
            for (const auto& [k, v] : config_io::parse_pairs(text_io::read_file(config_path), config_path)) out[k] = v;
        }
        for (const auto& key : config_io::known_keys()) {
            std::string flag = "--" + key;
            for (auto& c : flag) {
                if (c == '_') c = '-';
            }
            if (app.count(flag) > 0) out[key] = values.at(key);
        }
        return out;
    }

    [[nodiscard]] RunConfig build(const CLI::App& app) const
    {
        RunConfig cfg;
        std::vector<std::pair<std::string, std::string>> kv;
        if (!config_path.empty()) kv = config_io::parse_pairs(text_io::read_file(config_path), config_path);
        for (const auto& key : config_io::known_keys()) {
            std::string flag = "--" + key;
            for (auto& c : flag) {
                if (c == '_') c = '-';
            }
            if (app.count(flag) > 0) kv.emplace_back(key, values.at(key));
        }
        config_io::apply(cfg, kv);
        return cfg;
    }
};

void refuse_overwrite(const std::string& path, bool force)
{
    if (!force && fs::exists(path)) {
        throw Error(ErrorKind::io, "'" + path + "' exists; pass --force to overwrite");
    }
}

std::string with_hash_column(const std::string& csv, const std::string& hash)
{
    std::istringstream in(csv);
    std::ostringstream out;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        out << line << ',' << (header ? "config_hash" : hash) << '\n';
        header = false;
    }
    return out.str();
}

void print_summary(const ManifoldSample& s)
{
    std::map<int, long> labels;
    for (int td : s.true_td) ++labels[td];
    std::printf("%s: %lld points in R^%lld, seed %llu\n", s.name.c_str(), static_cast<long long>(s.count()),
                static_cast<long long>(s.ambient_dim()), static_cast<unsigned long long>(s.seed));
    for (Eigen::Index j = 0; j < s.ambient_dim(); ++j) {
        const Eigen::VectorXd c = s.points.col(j);
        const double mean = c.mean();
        const double sd = std::sqrt((c.array() - mean).square().mean());
        std::printf("  x%lld: mean %.6g  std %.6g  range [%.6g, %.6g]\n", static_cast<long long>(j), mean, sd, c.minCoeff(), c.maxCoeff());
    }
    for (const auto& [td, n] : labels) std::printf("  true_td %d: %ld points\n", td, n);
}

std::string g(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

double floor_sigma(const VPSchedule& s)
{
    return s.kind == VPSchedule::Kind::single_scale ? s.single_sigma : std::sqrt(s.sigma_min_sq);
}

/// Checkpoint metadata must agree with any explicitly configured gamma / schedule.
void check_model_against_config(const ScoreModel& m, const RunConfig& cfg, const std::map<std::string, std::string>& keys)
{
    auto differs = [](double a, double b) { return std::abs(a - b) > 1e-12 * std::max(1.0, std::abs(b)); };
    if (keys.count("gamma") && differs(cfg.train.gamma, m.gamma)) {
        throw Error(ErrorKind::invalid_argument, "gamma mismatch: config " + g(cfg.train.gamma) + ", checkpoint " +
                                                     g(m.gamma));
    }
    const bool sched_given = keys.count("schedule") || keys.count("sigma") || keys.count("beta_min") || keys.count("beta_max") ||
                             keys.count("sigma_min_sq");
    if (sched_given) {
        const auto& a = cfg.train.schedule;
        const auto& b = m.schedule;
        const bool same = a.kind == b.kind &&
                          (a.kind == VPSchedule::Kind::single_scale
                               ? !differs(a.single_sigma, b.single_sigma)
                               : !differs(a.beta_min, b.beta_min) && !differs(a.beta_max, b.beta_max) && !differs(a.sigma_min_sq, b.sigma_min_sq));
        if (!same) {
            throw Error(ErrorKind::invalid_argument, "schedule mismatch between config (" + a.id() + ", sigma " +
                                                         g(floor_sigma(a)) +
                                                         ") and checkpoint (" + b.id() + ", sigma " + g(floor_sigma(b)) + ")");
        }
    }
}

/// Config that describes a loaded checkpoint: explicit keys win, the rest comes from the model.
void adopt_model_settings(RunConfig& cfg, const ScoreModel& m, const std::map<std::string, std::string>& keys)
{
    check_model_against_config(m, cfg, keys);
    cfg.train.gamma = m.gamma;
    cfg.train.schedule = m.schedule;
    cfg.train.activation = m.activation;
    cfg.train.hidden.assign(m.layer_sizes.begin() + 1, m.layer_sizes.end() - 1);
}

std::vector<Eigen::Index> parse_indices(const std::string& s)
{
    std::vector<Eigen::Index> out;
    for (const auto& tok : config_io::split_list(s)) out.push_back(static_cast<Eigen::Index>(config_io::integer(tok)));
    return out;
}

int cmd_generate(const CLI::App& app, const ConfigFlags& flags, const std::string& out, const std::string& csv, bool force)
{
    const RunConfig cfg = flags.build(app);
    cfg.validate();
    refuse_overwrite(out, force);
    const ManifoldSample s = make_dataset(cfg.dataset, cfg.seed);
    manifolds::save_sample(s, out);
    if (!csv.empty()) {
        refuse_overwrite(csv, force);
        text_io::write_file(csv, with_hash_column(manifolds::to_csv(s), config_io::hash(cfg)));
    }
    print_summary(s);
    return 0;
}

int cmd_train(const CLI::App& app, const ConfigFlags& flags, const std::string& data_path, const std::string& out, std::string log_path,
              const std::string& resume, long stop_at)
{
    RunConfig cfg = flags.build(app);
    cfg.validate();
    const ManifoldSample data = manifolds::load_sample(data_path);
    const std::string hash = config_io::hash(cfg);

    TrainState st;
    if (!resume.empty()) {
        Checkpoint ck = load_checkpoint(resume);
        if (!ck.optimizer) throw Error(ErrorKind::io, resume + ": checkpoint has no optimizer state to resume from");
        check_model_against_config(ck.model, cfg, flags.explicit_keys(app));
        if (ck.model.gamma != cfg.train.gamma) {
            throw Error(ErrorKind::invalid_argument, "gamma mismatch: config " + g(cfg.train.gamma) + ", checkpoint " +
                                                         g(ck.model.gamma));
        }
        const ScoreModel fresh = make_score_model(cfg.train.model_spec(static_cast<int>(data.ambient_dim())), 0);
        detail::require_arg(fresh.layer_sizes == ck.model.layer_sizes, "resume: checkpoint architecture does not match the config");
        detail::require_arg(ck.optimizer->total_steps == cfg.train.iterations, "resume: checkpoint was made for a different iteration count");
        st.model = std::move(ck.model);
        st.optimizer = std::move(*ck.optimizer);
    } else {
        st = init_training(static_cast<int>(data.ambient_dim()), cfg.train);
    }

    if (log_path.empty()) log_path = out + ".log.csv";
    int code = 0;
    try {
        train_steps(st, data.points, cfg.train, stop_at > 0 ? std::optional<long>(stop_at) : std::nullopt);
    } catch (const TrainingDiverged& e) {
        std::cerr << "error: " << e.what() << "\n";
        st = e.last_good();
        code = 2;
    }
    save_checkpoint(out, st.model, &st.optimizer);
    text_io::write_file(log_path, with_hash_column(training_log_csv(st.log), hash));
    if (!st.log.empty()) {
        const auto& first = st.log.front();
        const auto& last = st.log.back();
        std::printf("trained %ld/%ld iterations; dsm %.6g -> %.6g, de %.6g -> %.6g\n", st.optimizer.step, st.optimizer.total_steps,
                    first.dsm_loss, last.dsm_loss, first.de_penalty, last.de_penalty);
    }
    std::printf("config_hash %s\n", hash.c_str());
    return code;
}

int cmd_estimate(const CLI::App& app, const ConfigFlags& flags, const std::string& data_path, const std::string& model_path,
                 const std::string& out, const std::string& points, const std::string& plot_data)
{
    RunConfig cfg = flags.build(app);
    const auto keys = flags.explicit_keys(app);
    const ManifoldSample data = manifolds::load_sample(data_path);
    const Checkpoint ck = load_checkpoint(model_path);
    const ScoreModel& m = ck.model;
    detail::require_arg(data.ambient_dim() == m.dim(), "dataset dimension " + std::to_string(data.ambient_dim()) +
                                                           " does not match checkpoint dimension " + std::to_string(m.dim()));
    adopt_model_settings(cfg, m, keys);
    cfg.validate();
    const std::string hash = config_io::hash(cfg);
    const int workers = worker_count_from_env();
    const auto idx = parse_indices(points);

    std::ostringstream os;
    if (cfg.times.empty()) {
        const auto est = estimate_sample(m, data.points, cfg.train.gamma, cfg.attack(), workers, idx);
        std::vector<Eigen::Index> rows = idx;
        if (rows.empty()) {
            for (Eigen::Index i = 0; i < data.count(); ++i) rows.push_back(i);
        }
        std::vector<int> truth;
        for (auto r : rows) truth.push_back(data.true_td[static_cast<std::size_t>(r)]);
        text_io::write_file(out, td_results_csv(est, &truth, hash, &rows));
        if (!plot_data.empty()) {
            std::ostringstream pd;
            pd.precision(10);
            pd << "index,kind";
            for (Eigen::Index j = 0; j < m.dim(); ++j) pd << ",x" << j;
            pd << ",n_hat_clamped,config_hash\n";
            for (std::size_t i = 0; i < est.size(); ++i) {
                for (int kind = 0; kind < 2; ++kind) {
                    const Eigen::VectorXd& p = kind == 0 ? est[i].x : est[i].x_adv;
                    pd << rows[i] << ',' << (kind == 0 ? "original" : "adversarial");
                    for (Eigen::Index j = 0; j < p.size(); ++j) pd << ',' << p[j];
                    pd << ',' << est[i].n_hat_clamped << ',' << hash << '\n';
                }
            }
            text_io::write_file(plot_data, pd.str());
        }
        std::printf("points %zu  mse %.6g  mse_rounded %.6g  config_hash %s\n", est.size(), evaluate_mse(est, truth),
                    evaluate_mse_rounded(est, truth), hash.c_str());
        return 0;
    }

    std::vector<Eigen::Index> rows = idx;
    if (rows.empty()) {
        for (Eigen::Index i = 0; i < data.count(); ++i) rows.push_back(i);
    }
    const auto series = estimate_over_time(m, data.points, rows, cfg.times, cfg.train.gamma, cfg.attack(), workers);
    os.precision(12);
    os << "index,t,sigma_t,delta,n_hat,n_hat_clamped,flags,true_td,config_hash\n";
    for (std::size_t p = 0; p < rows.size(); ++p) {
        for (const auto& e : series[p]) {
            os << rows[p] << ',' << e.t << ',' << diffusion::kernel_stats(m.schedule, e.t).sigma << ',' << e.delta << ',' << e.n_hat << ','
               << e.n_hat_clamped << ',' << e.flags.str() << ',' << data.true_td[static_cast<std::size_t>(rows[p])] << ',' << hash << '\n';
        }
    }
    text_io::write_file(out, os.str());
    std::printf("points %zu  times %zu  config_hash %s\n", rows.size(), cfg.times.size(), hash.c_str());
    return 0;
}

int cmd_baseline(const CLI::App& app, const ConfigFlags& flags, const std::string& data_path, const std::string& out)
{
    const RunConfig cfg = flags.build(app);
    cfg.validate();
    const ManifoldSample data = manifolds::load_sample(data_path);
    const std::string hash = config_io::hash(cfg);
    std::string csv = "method,k,index,estimate,true_td,config_hash\n";
    for (const auto& e : cfg.estimators) {
        if (e.kind == EstimatorSpec::Kind::sm) continue;
        detail::require_arg(e.k < data.count(), e.label() + ": k must be smaller than the number of points");
        const auto r = run_baseline(e, data);
        csv += baseline_csv(e.kind == EstimatorSpec::Kind::mle ? "mle" : "mind", e.k, r.estimates, data.true_td, hash);
        if (e.kind == EstimatorSpec::Kind::mind) {
            std::printf("%-8s d_hat %d  mse %.6g\n", r.label.c_str(), r.mind_dimension, r.mse);
        } else {
            std::printf("%-8s mse %.6g\n", r.label.c_str(), r.mse);
        }
    }
    text_io::write_file(out, csv);
    std::printf("config_hash %s\n", hash.c_str());
    return 0;
}

int cmd_table3(const CLI::App& app, const ConfigFlags& flags)
{
    const RunConfig cfg = flags.build(app);
    cfg.validate();
    const std::string hash = config_io::hash(cfg);
    const auto result = run_table3(cfg, table3_benchmarks(cfg.dataset.count), worker_count_from_env());

    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    if (ec) throw Error(ErrorKind::io, "cannot create '" + cfg.output_dir + "': " + ec.message());

    nlohmann::json j;
    j["config_hash"] = hash;
    j["trials"] = cfg.trials;
    j["config"] = config_io::canonical(cfg);
    std::ostringstream csv;
    csv.precision(12);
    csv << "benchmark,estimator,trial,seed,mse,config_hash\n";
    for (const auto& c : result.cells) {
        j["mse"][c.benchmark][c.estimator]["mean"] = c.mean();
        j["mse"][c.benchmark][c.estimator]["trials"] = c.trial_mse;
        j["mse"][c.benchmark][c.estimator]["seeds"] = c.seeds;
        for (std::size_t t = 0; t < c.trial_mse.size(); ++t) {
            csv << c.benchmark << ',' << c.estimator << ',' << t << ',' << c.seeds[t] << ',' << c.trial_mse[t] << ',' << hash << '\n';
        }
    }
    text_io::write_file((fs::path(cfg.output_dir) / "table3.json").string(), j.dump(2) + "\n");
    text_io::write_file((fs::path(cfg.output_dir) / "table3.csv").string(), csv.str());

    std::printf("%-22s", "benchmark");
    for (const auto& e : cfg.estimators) std::printf("%10s", e.label().c_str());
    std::printf("\n");
    for (const auto& b : table3_benchmarks(cfg.dataset.count)) {
        std::printf("%-22s", b.label.c_str());
        for (const auto& e : cfg.estimators) std::printf("%10.4f", result.cell(b.label, e.label()).mean());
        std::printf("\n");
    }
    std::printf("config_hash %s\n", hash.c_str());
    return 0;
}

int exit_code(ErrorKind k)
{
    switch (k) {
    case ErrorKind::invalid_argument:
        return 1;
    case ErrorKind::numeric:
        return 2;
    case ErrorKind::io:
        return 3;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Topological dimension estimation with Dirichlet-energy regularized score maps"};
    app.require_subcommand(1);

    ConfigFlags gen_flags, train_flags, est_flags, base_flags, t3_flags;

    auto* gen = app.add_subcommand("generate", "write a synthetic manifold dataset");
    gen_flags.attach(*gen);
    std::string gen_out, gen_csv;
    bool force = false;
    gen->add_option("-o,--out", gen_out, "dataset file")->required();
    gen->add_option("--csv", gen_csv, "also write a decimal CSV copy");
    gen->add_flag("--force", force, "overwrite existing files");

    auto* tr = app.add_subcommand("train", "train a (DE-regularized) score model");
    train_flags.attach(*tr);
    std::string tr_data, tr_out, tr_log, tr_resume;
    long stop_at = 0;
    tr->add_option("--data", tr_data, "dataset file")->required();
    tr->add_option("-o,--out", tr_out, "checkpoint file")->required();
    tr->add_option("--log", tr_log, "training log CSV (default <out>.log.csv)");
    tr->add_option("--resume", tr_resume, "continue from a checkpoint with optimizer state");
    tr->add_option("--stop-at", stop_at, "stop after this many total iterations (checkpoint stays resumable)");

    auto* est = app.add_subcommand("estimate", "adversarial TD estimates from a trained model");
    est_flags.attach(*est);
    std::string est_data, est_model, est_out, est_points, est_plot;
    est->add_option("--data", est_data, "dataset file")->required();
    est->add_option("--model", est_model, "checkpoint file")->required();
    est->add_option("-o,--out", est_out, "results CSV")->required();
    est->add_option("--points", est_points, "comma separated dataset rows (default all)");
    est->add_option("--plot-data", est_plot, "original/adversarial coordinates for plotting");

    auto* bl = app.add_subcommand("baseline", "kNN MLE / MiND estimates");
    base_flags.attach(*bl);
    std::string bl_data, bl_out;
    bl->add_option("--data", bl_data, "dataset file")->required();
    bl->add_option("-o,--out", bl_out, "results CSV")->required();

    auto* t3 = app.add_subcommand("table3", "benchmark x estimator MSE grid over independent trials");
    t3_flags.attach(*t3);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_generate(*gen, gen_flags, gen_out, gen_csv, force);
        if (tr->parsed()) return cmd_train(*tr, train_flags, tr_data, tr_out, tr_log, tr_resume, stop_at);
        if (est->parsed()) return cmd_estimate(*est, est_flags, est_data, est_model, est_out, est_points, est_plot);
        if (bl->parsed()) return cmd_baseline(*bl, base_flags, bl_data, bl_out);
        if (t3->parsed()) return cmd_table3(*t3, t3_flags);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
