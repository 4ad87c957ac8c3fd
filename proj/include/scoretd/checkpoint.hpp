#pragma once

// Model checkpoint text format (all reals as hex floats, bit exact):
//
//   scoretd-checkpoint 1
//   layer_sizes <count> <sizes...>
//   time_conditioned <0|1>
//   activation <name>
//   scale_output <0|1>
//   schedule <vp|single> <beta_min> <beta_max> <sigma_min_sq> <single_sigma>
//   sigma <single-scale sigma, or sqrt(sigma_min_sq) for vp>
//   gamma <value>
//   params <count>
//   <one value per line>
//   [optimizer <step> <total_steps> <base_lr> <final_lr> <beta1> <beta2> <eps>
//    m then v, one value per line each]

#include "de_regularizer.hpp"
#include "error.hpp"
#include "optimizer.hpp"
#include "score_model.hpp"
#include "text_io.hpp"

#include <cmath>
#include <optional>
#include <sstream>
#include <string>

namespace scoretd {

struct Checkpoint {
    ScoreModel model;
    std::optional<OptimizerState> optimizer;
};

/// Noise scale recorded in the header: single-scale sigma, or the t = 0 floor for vp.
inline double checkpoint_sigma(const ScoreModel& m)
{
    return m.schedule.kind == VPSchedule::Kind::single_scale ? m.schedule.single_sigma : std::sqrt(m.schedule.sigma_min_sq);
}

inline std::string serialize_checkpoint(const ScoreModel& m, const OptimizerState* opt = nullptr)
{
    using text_io::hex;
    std::ostringstream os;
    os << "scoretd-checkpoint 1\n";
    os << "layer_sizes " << m.layer_sizes.size();
    for (int s : m.layer_sizes) os << ' ' << s;
    os << "\ntime_conditioned " << (m.time_conditioned ? 1 : 0) << '\n';
    os << "activation " << activation_name(m.activation) << '\n';
    os << "scale_output " << (m.scale_output ? 1 : 0) << '\n';
    const auto& s = m.schedule;
    os << "schedule " << s.id() << ' ' << hex(s.beta_min) << ' ' << hex(s.beta_max) << ' ' << hex(s.sigma_min_sq) << ' '
       << hex(s.single_sigma) << '\n';
    os << "sigma " << hex(checkpoint_sigma(m)) << '\n';
    os << "gamma " << hex(m.gamma) << '\n';
    os << "params " << m.params.size() << '\n';
    for (Eigen::Index i = 0; i < m.params.size(); ++i) os << hex(m.params[i]) << '\n';
    if (opt != nullptr) {
        os << "optimizer " << opt->step << ' ' << opt->total_steps << ' ' << hex(opt->base_lr) << ' ' << hex(opt->final_lr) << ' '
           << hex(opt->beta1) << ' ' << hex(opt->beta2) << ' ' << hex(opt->eps) << '\n';
        for (Eigen::Index i = 0; i < opt->m.size(); ++i) os << hex(opt->m[i]) << '\n';
        for (Eigen::Index i = 0; i < opt->v.size(); ++i) os << hex(opt->v[i]) << '\n';
    }
    os << "end\n";  // a truncated file fails on this line
    return os.str();
}

inline Checkpoint deserialize_checkpoint(const std::string& text, const std::string& source = "<memory>")
{
    text_io::LineReader rd(text, source);
    auto fields = [&](std::string_view key, std::size_t min_count) {
        auto tok = text_io::split_ws(rd.expect_line(key));
        if (tok.empty() || tok[0] != key || tok.size() < min_count + 1) {
            rd.fail("expected '" + std::string(key) + "' line");
        }
        tok.erase(tok.begin());
        return tok;
    };
    auto read_vector = [&](Eigen::Index n, std::string_view what) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto tok = text_io::split_ws(rd.expect_line(what));
            if (tok.size() != 1) rd.fail("expected one value per line in " + std::string(what));
            v[i] = text_io::parse_double(tok[0]);
            if (!std::isfinite(v[i])) rd.fail("non-finite value in " + std::string(what));
        }
        return v;
    };

    const auto magic = text_io::split_ws(rd.expect_line("magic"));
    if (magic.size() != 2 || magic[0] != "scoretd-checkpoint" || magic[1] != "1") {
        rd.fail("not a scoretd checkpoint (version 1)");
    }
    Checkpoint ck;
    ScoreModel& m = ck.model;
    try {
        const auto ls = fields("layer_sizes", 1);
        const auto count = text_io::parse_int(ls[0]);
        if (count < 2 || static_cast<long long>(ls.size()) != count + 1) rd.fail("layer_sizes count mismatch");
        for (long long i = 1; i <= count; ++i) {
            const auto v = text_io::parse_int(ls[static_cast<std::size_t>(i)]);
            if (v < 1) rd.fail("layer sizes must be positive");
            m.layer_sizes.push_back(static_cast<int>(v));
        }
        m.time_conditioned = text_io::parse_int(fields("time_conditioned", 1)[0]) != 0;
        m.activation = parse_activation(fields("activation", 1)[0]);
        m.scale_output = text_io::parse_int(fields("scale_output", 1)[0]) != 0;
        const auto sch = fields("schedule", 5);
        if (sch[0] == "vp") {
            m.schedule = VPSchedule::vp(text_io::parse_double(sch[1]), text_io::parse_double(sch[2]), text_io::parse_double(sch[3]));
        } else if (sch[0] == "single") {
            m.schedule = VPSchedule::single_scale(text_io::parse_double(sch[4]));
        } else {
            rd.fail("unknown schedule '" + sch[0] + "'");
        }
        fields("sigma", 1);
        m.gamma = text_io::parse_double(fields("gamma", 1)[0]);
        const auto np = text_io::parse_int(fields("params", 1)[0]);
        const Eigen::Index out_dim = m.layer_sizes.back();
        const Eigen::Index in_dim = m.layer_sizes.front() - (m.time_conditioned ? 1 : 0);
        if (out_dim != in_dim) rd.fail("output width must equal the input dimension");
        if (np != m.param_count()) rd.fail("params count does not match layer_sizes");
        m.params = read_vector(np, "params");

        auto tok = text_io::split_ws(rd.expect_line("end"));
        if (!tok.empty() && tok[0] == "optimizer") {
            if (tok.size() != 8) rd.fail("malformed optimizer line");
            OptimizerState opt;
            opt.step = static_cast<long>(text_io::parse_int(tok[1]));
            opt.total_steps = static_cast<long>(text_io::parse_int(tok[2]));
            opt.base_lr = text_io::parse_double(tok[3]);
            opt.final_lr = text_io::parse_double(tok[4]);
            opt.beta1 = text_io::parse_double(tok[5]);
            opt.beta2 = text_io::parse_double(tok[6]);
            opt.eps = text_io::parse_double(tok[7]);
            opt.m = read_vector(np, "optimizer first moments");
            opt.v = read_vector(np, "optimizer second moments");
            ck.optimizer = std::move(opt);
            tok = text_io::split_ws(rd.expect_line("end"));
        }
        if (tok.size() != 1 || tok[0] != "end") rd.fail("expected 'end' line");
        std::string rest;
        while (rd.next(rest)) {
            if (!text_io::split_ws(rest).empty()) rd.fail("unexpected content after 'end'");
        }
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::io) throw;
        throw Error(ErrorKind::io, source + ": " + e.what());
    }
    return ck;
}

inline void save_checkpoint(const std::string& path, const ScoreModel& m, const OptimizerState* opt = nullptr)
{
    text_io::write_file(path, serialize_checkpoint(m, opt));
}

inline Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(text_io::read_file(path), path); }

}  // namespace scoretd
