#pragma once

// Run configuration shared by the command-line tool and the experiment
// pipelines, its key-value file format and the config hash.
//
// File format: one `key = value` per line; '#' starts a comment; blank lines
// are ignored; unknown keys are an error. Lists are comma separated.
//
//   dataset        swirl | swirl_noisy | line_disk_ball | hyper_twin_peaks | gaussian | isolated_point
//   count          number of points                              (1000)
//   dim            intrinsic dim (hyper_twin_peaks) or ambient dim (gaussian, isolated_point)   (10)
//   noise          swirl noise scale (0, swirl_noisy defaults to 0.01)
//   variance       gaussian variance                              (1)
//   normalize      z-score the generated points                   (true)
//   seed           base seed; trial i uses seed + i               (0)
//   gamma          DE strength                                    (0.01)
//   schedule       single | vp                                    (single)
//   sigma          single-scale sigma                             (0.1)
//   beta_min beta_max sigma_min_sq   vp schedule                  (0.1, 20, 0.01)
//   iterations batch_size power_iters fd_step lr final_lr        (20000, 64, 5, 1e-3, 1e-3, 1e-5)
//   hidden         hidden widths                                  (64,64,64)
//   activation     silu | tanh | identity                         (silu)
//   attack_iters   PGD iterations                                 (10)
//   estimators     any of sm, mleK, mindK                         (sm,mle10,mle20,mind10,mind20)
//   trials         independent trials                             (1)
//   times          diffusion times for over-time estimates        (empty)
//   output_dir     where table3 writes                            (out)

#include "attack.hpp"
#include "de_regularizer.hpp"
#include "diffusion.hpp"
#include "error.hpp"
#include "rng.hpp"
#include "score_model.hpp"
#include "text_io.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace scoretd {

struct DatasetSpec {
    std::string name = "swirl";
    long count = 1000;
    int dim = 10;
    double noise = 0.0;
    double variance = 1.0;
    bool normalize = true;
};

/// One estimator column: "sm", or a kNN baseline with its k.
struct EstimatorSpec {
    enum class Kind { sm, mle, mind };
    Kind kind = Kind::sm;
    int k = 0;

    [[nodiscard]] std::string label() const
    {
        switch (kind) {
        case Kind::sm:
            return "sm";
        case Kind::mle:
            return "mle" + std::to_string(k);
        case Kind::mind:
            return "mind" + std::to_string(k);
        }
        return "?";
    }

    static EstimatorSpec parse(const std::string& s)
    {
        auto with_k = [&](std::size_t prefix, Kind kind) {
            const std::string digits = s.substr(prefix);
            long long k = 0;
            try {
                k = text_io::parse_int(digits);
            } catch (const Error&) {
                throw Error(ErrorKind::invalid_argument, "estimator '" + s + "' needs a neighbour count, e.g. mle10");
            }
            detail::require_arg(k >= 2 && k < 100000, "estimator '" + s + "': k out of range");
            return EstimatorSpec{kind, static_cast<int>(k)};
        };
        if (s == "sm") return {Kind::sm, 0};
        if (s.rfind("mle", 0) == 0) return with_k(3, Kind::mle);
        if (s.rfind("mind", 0) == 0) return with_k(4, Kind::mind);
        throw Error(ErrorKind::invalid_argument, "unknown estimator '" + s + "'");
    }
};

struct RunConfig {
    DatasetSpec dataset;
    std::uint64_t seed = 0;
    TrainConfig train;
    int attack_iters = 10;
    std::vector<EstimatorSpec> estimators = {EstimatorSpec::parse("sm"), EstimatorSpec::parse("mle10"), EstimatorSpec::parse("mle20"),
                                             EstimatorSpec::parse("mind10"), EstimatorSpec::parse("mind20")};
    int trials = 1;
    std::vector<double> times;
    std::string output_dir = "out";

    [[nodiscard]] std::uint64_t trial_seed(int trial) const { return seed + static_cast<std::uint64_t>(trial); }

    [[nodiscard]] AttackConfig attack() const { return AttackConfig::pgd(attack_iters, sigma0()); }

    /// Noise scale at t = 0.
    [[nodiscard]] double sigma0() const { return diffusion::kernel_stats(train.schedule, 0.0).sigma; }

    void validate() const
    {
        train.validate();
        detail::require_arg(dataset.count >= 1, "config: count must be >= 1");
        detail::require_arg(dataset.dim >= 1, "config: dim must be >= 1");
        detail::require_arg(dataset.noise >= 0.0, "config: noise must be >= 0");
        detail::require_arg(attack_iters >= 1, "config: attack_iters must be >= 1");
        detail::require_arg(trials >= 1, "config: trials must be >= 1");
        for (double t : times) {
            diffusion::check_time(t);
        }
        detail::require_arg(std::is_sorted(times.begin(), times.end()), "config: times must be ascending");
        detail::require_arg(times.empty() || train.schedule.time_dependent(), "config: times need the vp schedule");
    }
};

namespace config_io {

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline bool parse_bool(const std::string& v)
{
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw Error(ErrorKind::invalid_argument, "expected a boolean, got '" + v + "'");
}

inline double num(const std::string& v)
{
    try {
        return text_io::parse_double(v);
    } catch (const Error&) {
        throw Error(ErrorKind::invalid_argument, "expected a number, got '" + v + "'");
    }
}

inline long long integer(const std::string& v)
{
    try {
        return text_io::parse_int(v);
    } catch (const Error&) {
        throw Error(ErrorKind::invalid_argument, "expected an integer, got '" + v + "'");
    }
}

inline std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <class T>
std::string join(const std::vector<T>& xs)
{
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        if constexpr (std::is_floating_point_v<T>) {
            out += fmt(xs[i]);
        } else {
            out += std::to_string(xs[i]);
        }
    }
    return out;
}

inline const std::vector<std::string>& known_keys()
{
    static const std::vector<std::string> keys = {
        "dataset", "count", "dim", "noise", "variance", "normalize", "seed", "gamma", "schedule", "sigma", "beta_min", "beta_max",
        "sigma_min_sq", "iterations", "batch_size", "power_iters", "fd_step", "lr", "final_lr", "hidden", "activation", "attack_iters",
        "estimators", "trials", "times", "output_dir"};
    return keys;
}

inline bool is_known_key(const std::string& key)
{
    const auto& k = known_keys();
    return std::find(k.begin(), k.end(), key) != k.end();
}

/// Applies one key to `cfg`. Schedule-related keys are resolved by the caller
/// through `finish_schedule`, so their order in a file does not matter.
inline void set_key(RunConfig& cfg, std::map<std::string, std::string>& sched, const std::string& key, const std::string& v)
{
    auto& d = cfg.dataset;
    auto& t = cfg.train;
    if (key == "dataset") {
        d.name = v;
    } else if (key == "count") {
        d.count = static_cast<long>(integer(v));
    } else if (key == "dim") {
        d.dim = static_cast<int>(integer(v));
    } else if (key == "noise") {
        d.noise = num(v);
    } else if (key == "variance") {
        d.variance = num(v);
    } else if (key == "normalize") {
        d.normalize = parse_bool(v);
    } else if (key == "seed") {
        const long long s = integer(v);
        detail::require_arg(s >= 0, "config: seed must be >= 0");
        cfg.seed = static_cast<std::uint64_t>(s);
    } else if (key == "gamma") {
        t.gamma = num(v);
    } else if (key == "schedule" || key == "sigma" || key == "beta_min" || key == "beta_max" || key == "sigma_min_sq") {
        sched[key] = v;
    } else if (key == "iterations") {
        t.iterations = static_cast<long>(integer(v));
    } else if (key == "batch_size") {
        t.batch_size = static_cast<int>(integer(v));
    } else if (key == "power_iters") {
        t.power_iters = static_cast<int>(integer(v));
    } else if (key == "fd_step") {
        t.fd_step = num(v);
    } else if (key == "lr") {
        t.base_lr = num(v);
    } else if (key == "final_lr") {
        t.final_lr = num(v);
    } else if (key == "hidden") {
        t.hidden.clear();
        for (const auto& h : split_list(v)) t.hidden.push_back(static_cast<int>(integer(h)));
        detail::require_arg(!t.hidden.empty(), "config: hidden needs at least one width");
    } else if (key == "activation") {
        t.activation = parse_activation(v);
    } else if (key == "attack_iters") {
        cfg.attack_iters = static_cast<int>(integer(v));
    } else if (key == "estimators") {
        cfg.estimators.clear();
        for (const auto& e : split_list(v)) cfg.estimators.push_back(EstimatorSpec::parse(e));
    } else if (key == "trials") {
        cfg.trials = static_cast<int>(integer(v));
    } else if (key == "times") {
        cfg.times.clear();
        for (const auto& x : split_list(v)) cfg.times.push_back(num(x));
    } else if (key == "output_dir") {
        cfg.output_dir = v;
    } else {
        throw Error(ErrorKind::invalid_argument, "unknown config key '" + key + "'");
    }
}

/// Rebuilds cfg.train.schedule from collected schedule keys, keeping the
/// current values for keys that were not given.
inline void finish_schedule(RunConfig& cfg, const std::map<std::string, std::string>& sched)
{
    if (sched.empty()) return;
    const VPSchedule& cur = cfg.train.schedule;
    std::string kind = cur.id();
    double sigma = cur.kind == VPSchedule::Kind::single_scale ? cur.single_sigma : 0.1;
    double bmin = cur.kind == VPSchedule::Kind::vp ? cur.beta_min : 0.1;
    double bmax = cur.kind == VPSchedule::Kind::vp ? cur.beta_max : 20.0;
    double floor_sq = cur.kind == VPSchedule::Kind::vp ? cur.sigma_min_sq : 0.01;
    for (const auto& [k, v] : sched) {
        if (k == "schedule") kind = v;
        if (k == "sigma") sigma = num(v);
        if (k == "beta_min") bmin = num(v);
        if (k == "beta_max") bmax = num(v);
        if (k == "sigma_min_sq") floor_sq = num(v);
    }
    if (kind == "single") {
        cfg.train.schedule = VPSchedule::single_scale(sigma);
    } else if (kind == "vp") {
        cfg.train.schedule = VPSchedule::vp(bmin, bmax, floor_sq);
    } else {
        throw Error(ErrorKind::invalid_argument, "unknown schedule '" + kind + "' (expected single or vp)");
    }
}

/// Applies a list of key/value overrides in order.
inline void apply(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& kv)
{
    std::map<std::string, std::string> sched;
    for (const auto& [k, v] : kv) {
        set_key(cfg, sched, k, v);
    }
    finish_schedule(cfg, sched);
}

inline std::vector<std::pair<std::string, std::string>> parse_pairs(const std::string& text, const std::string& source)
{
    std::vector<std::pair<std::string, std::string>> kv;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = source + ":" + std::to_string(lineno);
        if (eq == std::string::npos) {
            throw Error(ErrorKind::invalid_argument, where + ": expected 'key = value'");
        }
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (!is_known_key(key)) {
            throw Error(ErrorKind::invalid_argument, where + ": unknown config key '" + key + "'");
        }
        kv.emplace_back(std::move(key), std::move(val));
    }
    return kv;
}

inline RunConfig parse(const std::string& text, const std::string& source = "<config>")
{
    RunConfig cfg;
    config_io::apply(cfg, parse_pairs(text, source));
    return cfg;
}

inline RunConfig load(const std::string& path)
{
    return parse(text_io::read_file(path), path);
}

/// Canonical text of every result-affecting field (output_dir excluded).
inline std::string canonical(const RunConfig& c)
{
    const auto& d = c.dataset;
    const auto& t = c.train;
    const auto& s = t.schedule;
    std::ostringstream os;
    os << "dataset = " << d.name << '\n'
       << "count = " << d.count << '\n'
       << "dim = " << d.dim << '\n'
       << "noise = " << fmt(d.noise) << '\n'
       << "variance = " << fmt(d.variance) << '\n'
       << "normalize = " << (d.normalize ? "true" : "false") << '\n'
       << "seed = " << c.seed << '\n'
       << "gamma = " << fmt(t.gamma) << '\n'
       << "schedule = " << s.id() << '\n';
    if (s.time_dependent()) {
        os << "beta_min = " << fmt(s.beta_min) << '\n' << "beta_max = " << fmt(s.beta_max) << '\n' << "sigma_min_sq = " << fmt(s.sigma_min_sq) << '\n';
    } else {
        os << "sigma = " << fmt(s.single_sigma) << '\n';
    }
    os << "iterations = " << t.iterations << '\n'
       << "batch_size = " << t.batch_size << '\n'
       << "power_iters = " << t.power_iters << '\n'
       << "fd_step = " << fmt(t.fd_step) << '\n'
       << "lr = " << fmt(t.base_lr) << '\n'
       << "final_lr = " << fmt(t.final_lr) << '\n'
       << "hidden = " << join(t.hidden) << '\n'
       << "activation = " << activation_name(t.activation) << '\n'
       << "attack_iters = " << c.attack_iters << '\n';
    os << "estimators = ";
    for (std::size_t i = 0; i < c.estimators.size(); ++i) os << (i ? "," : "") << c.estimators[i].label();
    os << '\n' << "trials = " << c.trials << '\n' << "times = " << join(c.times) << '\n';
    return os.str();
}

/// Loadable dump, canonical fields plus output_dir.
inline std::string to_text(const RunConfig& c) { return canonical(c) + "output_dir = " + c.output_dir + '\n'; }

/// 16 hex digits of FNV-1a over the canonical text.
inline std::string hash(const RunConfig& c)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canonical(c))));
    return buf;
}

}  // namespace config_io

/// Worker count from SCORETD_WORKERS (default 1; non-numeric or < 1 is an error).
inline int worker_count_from_env()
{
    const char* v = std::getenv("SCORETD_WORKERS");
    if (v == nullptr || *v == '\0') return 1;
    long long n = 0;
    try {
        n = text_io::parse_int(v);
    } catch (const Error&) {
        throw Error(ErrorKind::invalid_argument, std::string("SCORETD_WORKERS must be a positive integer, got '") + v + "'");
    }
    detail::require_arg(n >= 1 && n <= 1024, "SCORETD_WORKERS must lie in [1, 1024]");
    return static_cast<int>(n);
}

}  // namespace scoretd
