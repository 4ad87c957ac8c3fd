#pragma once

// Fully connected score network s_theta(x, t) with hand-written reverse mode:
// batched forward tapes, input vector-Jacobian products and parameter
// gradients. Columns of every batch matrix are samples.

#include "diffusion.hpp"
#include "error.hpp"
#include "rng.hpp"

#include <Eigen/Core>

#include <cmath>
#include <concepts>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scoretd {

enum class Activation { silu, tanh, identity };

inline std::string activation_name(Activation a)
{
    switch (a) {
    case Activation::silu:
        return "silu";
    case Activation::tanh:
        return "tanh";
    case Activation::identity:
        return "identity";
    }
    return "?";
}

inline Activation parse_activation(const std::string& s)
{
    if (s == "silu") return Activation::silu;
    if (s == "tanh") return Activation::tanh;
    if (s == "identity") return Activation::identity;
    throw Error(ErrorKind::invalid_argument, "unknown activation '" + s + "'");
}

/// Anything that evaluates a score and its input-side vector-Jacobian product.
template <class M>
concept ScoreMap = requires(const M& m, const Eigen::VectorXd& x, std::optional<double> t) {
    { m.dim() } -> std::convertible_to<Eigen::Index>;
    { m.eval(x, t) } -> std::convertible_to<Eigen::VectorXd>;
    { m.vjp(x, t, x) } -> std::convertible_to<Eigen::VectorXd>;
};

/// MLP score model. Parameters live in one flat vector; layer l occupies
/// W_l (out x in, column major) followed by b_l.
///
/// When `scale_output` is set the network output is divided by sigma_t of
/// `schedule`, so the raw network works at unit scale for every t.
struct ScoreModel {
    std::vector<int> layer_sizes;
    bool time_conditioned = false;
    Activation activation = Activation::silu;
    bool scale_output = false;
    VPSchedule schedule = VPSchedule::single_scale(0.1);
    double gamma = 0.0;  // DE strength the model was trained with (metadata)
    Eigen::VectorXd params;

    [[nodiscard]] int num_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }
    [[nodiscard]] Eigen::Index dim() const { return layer_sizes.back(); }
    [[nodiscard]] int input_width() const { return layer_sizes.front(); }

    [[nodiscard]] Eigen::Index weight_offset(int layer) const
    {
        Eigen::Index off = 0;
        for (int l = 0; l < layer; ++l) {
            off += static_cast<Eigen::Index>(layer_sizes[l + 1]) * (layer_sizes[l] + 1);
        }
        return off;
    }

    [[nodiscard]] Eigen::Index param_count() const { return weight_offset(num_layers()); }

    [[nodiscard]] Eigen::Map<const Eigen::MatrixXd> weight(int l) const
    {
        return {params.data() + weight_offset(l), layer_sizes[l + 1], layer_sizes[l]};
    }
    [[nodiscard]] Eigen::Map<Eigen::MatrixXd> weight(int l)
    {
        return {params.data() + weight_offset(l), layer_sizes[l + 1], layer_sizes[l]};
    }
    [[nodiscard]] Eigen::Map<const Eigen::VectorXd> bias(int l) const
    {
        return {params.data() + weight_offset(l) + static_cast<Eigen::Index>(layer_sizes[l + 1]) * layer_sizes[l],
                layer_sizes[l + 1]};
    }
    [[nodiscard]] Eigen::Map<Eigen::VectorXd> bias(int l)
    {
        return {params.data() + weight_offset(l) + static_cast<Eigen::Index>(layer_sizes[l + 1]) * layer_sizes[l],
                layer_sizes[l + 1]};
    }

    /// Multiplier applied to the network output at time t.
    [[nodiscard]] double output_scale(std::optional<double> t) const
    {
        if (!scale_output) {
            return 1.0;
        }
        return 1.0 / diffusion::kernel_stats(schedule, t.value_or(0.0)).sigma;
    }

    [[nodiscard]] Eigen::VectorXd eval(const Eigen::VectorXd& x, std::optional<double> t) const;
    [[nodiscard]] Eigen::VectorXd vjp(const Eigen::VectorXd& x, std::optional<double> t, const Eigen::VectorXd& v) const;
};

struct ModelSpec {
    int dim = 2;
    std::vector<int> hidden = {64, 64, 64};
    bool time_conditioned = false;
    Activation activation = Activation::silu;
    bool scale_output = true;
    VPSchedule schedule = VPSchedule::single_scale(0.1);
};

/// Variance-scaled N(0, 1/fan_in) weights, zero biases, zero final layer.
inline ScoreModel make_score_model(const ModelSpec& spec, std::uint64_t seed)
{
    detail::require_arg(spec.dim >= 1, "make_score_model: dim must be >= 1");
    ScoreModel m;
    m.layer_sizes.push_back(spec.dim + (spec.time_conditioned ? 1 : 0));
    for (int h : spec.hidden) {
        detail::require_arg(h >= 1, "make_score_model: hidden widths must be positive");
        m.layer_sizes.push_back(h);
    }
    m.layer_sizes.push_back(spec.dim);
    m.time_conditioned = spec.time_conditioned;
    m.activation = spec.activation;
    m.scale_output = spec.scale_output;
    m.schedule = spec.schedule;
    m.params.setZero(m.param_count());

    Rng rng = Rng(seed).split("init");
    for (int l = 0; l + 1 < m.num_layers(); ++l) {
        auto w = m.weight(l);
        const double sd = 1.0 / std::sqrt(static_cast<double>(m.layer_sizes[l]));
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            for (Eigen::Index i = 0; i < w.rows(); ++i) {
                w(i, j) = sd * rng.normal();
            }
        }
    }
    return m;
}

/// Forward pass record for one batch; enough to run any number of backward passes.
struct Tape {
    std::vector<Eigen::MatrixXd> inputs;  // input to layer l (row n holds sigma_t when time conditioned)
    std::vector<Eigen::MatrixXd> dact;    // activation derivative after hidden layer l
    Eigen::RowVectorXd scale;             // per-column output multiplier
    Eigen::MatrixXd output;

    [[nodiscard]] Eigen::Index batch() const { return output.cols(); }
};

namespace detail {

inline void apply_activation(Activation a, Eigen::MatrixXd& z, Eigen::MatrixXd* deriv)
{
    switch (a) {
    case Activation::silu: {
        const Eigen::ArrayXXd sig = 1.0 / (1.0 + (-z.array()).exp());
        if (deriv != nullptr) {
            *deriv = (sig * (1.0 + z.array() * (1.0 - sig))).matrix();
        }
        z.array() *= sig;
        break;
    }
    case Activation::tanh: {
        z.array() = z.array().tanh();
        if (deriv != nullptr) {
            *deriv = (1.0 - z.array().square()).matrix();
        }
        break;
    }
    case Activation::identity:
        if (deriv != nullptr) {
            deriv->setOnes(z.rows(), z.cols());
        }
        break;
    }
}

inline Eigen::MatrixXd model_input(const ScoreModel& m, const Eigen::MatrixXd& x, std::span<const double> t)
{
    const Eigen::Index n = m.dim();
    require_arg(x.rows() == n, "score model: input has " + std::to_string(x.rows()) + " rows, model dim is " + std::to_string(n));
    if (!x.allFinite()) {
        throw Error(ErrorKind::numeric, "score model: non-finite input");
    }
    if (!m.time_conditioned) {
        require_arg(t.empty(), "score model: time supplied to a model without time conditioning");
        return x;
    }
    require_arg(static_cast<Eigen::Index>(t.size()) == x.cols(), "score model: time-conditioned model needs one t per column");
    // Time enters as the noise level sigma_t, which is flat under the variance floor.
    Eigen::MatrixXd in(n + 1, x.cols());
    in.topRows(n) = x;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        in(n, j) = diffusion::kernel_stats(m.schedule, t[static_cast<std::size_t>(j)]).sigma;
    }
    return in;
}

inline Eigen::RowVectorXd output_scales(const ScoreModel& m, Eigen::Index batch, std::span<const double> t)
{
    Eigen::RowVectorXd s(batch);
    for (Eigen::Index j = 0; j < batch; ++j) {
        s[j] = m.output_scale(t.empty() ? std::nullopt : std::optional<double>(t[static_cast<std::size_t>(j)]));
    }
    return s;
}

}  // namespace detail

/// Batched forward pass that keeps what the backward passes need.
inline Tape forward_tape(const ScoreModel& m, const Eigen::MatrixXd& x, std::span<const double> t = {})
{
    Tape tape;
    const int L = m.num_layers();
    tape.inputs.reserve(static_cast<std::size_t>(L));
    tape.dact.resize(static_cast<std::size_t>(L - 1));
    tape.inputs.push_back(detail::model_input(m, x, t));
    for (int l = 0; l < L; ++l) {
        Eigen::MatrixXd z(m.layer_sizes[l + 1], x.cols());
        z.noalias() = m.weight(l) * tape.inputs.back();
        z.colwise() += m.bias(l);
        if (l + 1 < L) {
            detail::apply_activation(m.activation, z, &tape.dact[static_cast<std::size_t>(l)]);
            tape.inputs.push_back(std::move(z));
        } else {
            tape.output = std::move(z);
        }
    }
    tape.scale = detail::output_scales(m, x.cols(), t);
    tape.output.array().rowwise() *= tape.scale.array();
    return tape;
}

/// Batched forward pass without a tape.
inline Eigen::MatrixXd forward_batch(const ScoreModel& m, const Eigen::MatrixXd& x, std::span<const double> t = {})
{
    const int L = m.num_layers();
    Eigen::MatrixXd a = detail::model_input(m, x, t);
    for (int l = 0; l < L; ++l) {
        Eigen::MatrixXd z(m.layer_sizes[l + 1], x.cols());
        z.noalias() = m.weight(l) * a;
        z.colwise() += m.bias(l);
        if (l + 1 < L) {
            detail::apply_activation(m.activation, z, nullptr);
        }
        a = std::move(z);
    }
    a.array().rowwise() *= detail::output_scales(m, x.cols(), t).array();
    return a;
}

/// Columnwise J(x_j)^T v_j for every sample of the tape.
inline Eigen::MatrixXd vjp_input_batch(const ScoreModel& m, const Tape& tape, const Eigen::MatrixXd& v)
{
    detail::require_arg(v.rows() == m.dim() && v.cols() == tape.batch(), "vjp_input: cotangent shape mismatch");
    Eigen::MatrixXd g = v.array().rowwise() * tape.scale.array();
    for (int l = m.num_layers() - 1; l >= 0; --l) {
        Eigen::MatrixXd next(m.layer_sizes[l], g.cols());
        next.noalias() = m.weight(l).transpose() * g;
        if (l > 0) {
            next.array() *= tape.dact[static_cast<std::size_t>(l - 1)].array();
        }
        if (!next.allFinite()) {
            throw Error(ErrorKind::numeric, "vjp_input: non-finite intermediate at layer " + std::to_string(l));
        }
        g = std::move(next);
    }
    return g.topRows(m.dim());
}

/// Adds sum_j d(g_j . s(x_j)) / d(theta) into `grad` (length param_count()).
inline void accumulate_param_grad(const ScoreModel& m, const Tape& tape, const Eigen::MatrixXd& g_out, Eigen::VectorXd& grad)
{
    detail::require_arg(g_out.rows() == m.dim() && g_out.cols() == tape.batch(), "grad_params: cotangent shape mismatch");
    detail::require_arg(grad.size() == m.param_count(), "grad_params: gradient buffer has wrong length");
    Eigen::MatrixXd dz = g_out.array().rowwise() * tape.scale.array();
    for (int l = m.num_layers() - 1; l >= 0; --l) {
        const Eigen::Index off = m.weight_offset(l);
        const int rows = m.layer_sizes[l + 1];
        const int cols = m.layer_sizes[l];
        Eigen::Map<Eigen::MatrixXd> gw(grad.data() + off, rows, cols);
        Eigen::Map<Eigen::VectorXd> gb(grad.data() + off + static_cast<Eigen::Index>(rows) * cols, rows);
        gw.noalias() += dz * tape.inputs[static_cast<std::size_t>(l)].transpose();
        gb += dz.rowwise().sum();
        if (l > 0) {
            Eigen::MatrixXd next(cols, dz.cols());
            next.noalias() = m.weight(l).transpose() * dz;
            next.array() *= tape.dact[static_cast<std::size_t>(l - 1)].array();
            dz = std::move(next);
        }
    }
}

inline std::vector<double> time_vector(std::optional<double> t)
{
    return t ? std::vector<double>{*t} : std::vector<double>{};
}

/// s_theta(x, t) for a single point. `t` must be given iff the model is time conditioned.
inline Eigen::VectorXd forward(const ScoreModel& m, const Eigen::VectorXd& x, std::optional<double> t = std::nullopt)
{
    detail::require_arg(t.has_value() == m.time_conditioned,
                        m.time_conditioned ? "forward: model is time conditioned, t required" : "forward: model takes no t");
    const auto tv = time_vector(t);
    return forward_batch(m, x, tv).col(0);
}

/// grad_x (v . s_theta(x, t)) = J^T v.
inline Eigen::VectorXd vjp_input(const ScoreModel& m, const Eigen::VectorXd& x, std::optional<double> t, const Eigen::VectorXd& v)
{
    detail::require_arg(t.has_value() == m.time_conditioned,
                        m.time_conditioned ? "vjp_input: model is time conditioned, t required" : "vjp_input: model takes no t");
    const auto tv = time_vector(t);
    const Tape tape = forward_tape(m, x, tv);
    return vjp_input_batch(m, tape, v).col(0);
}

inline Eigen::VectorXd ScoreModel::eval(const Eigen::VectorXd& x, std::optional<double> t) const { return forward(*this, x, t); }

inline Eigen::VectorXd ScoreModel::vjp(const Eigen::VectorXd& x, std::optional<double> t, const Eigen::VectorXd& v) const
{
    return vjp_input(*this, x, t, v);
}

/// Loss over a batch expressed through the network outputs: returns the scalar
/// loss and fills dL/d(output) for every column.
template <class F>
concept OutputLoss = requires(F f, const Eigen::MatrixXd& out, Eigen::MatrixXd& g) {
    { f(out, g) } -> std::convertible_to<double>;
};

/// Gradient of a scalar batch loss with respect to the flat parameter vector.
template <OutputLoss F>
Eigen::VectorXd grad_params(const ScoreModel& m, const Eigen::MatrixXd& x, std::span<const double> t, F&& loss, double* loss_value = nullptr)
{
    const Tape tape = forward_tape(m, x, t);
    Eigen::MatrixXd g(tape.output.rows(), tape.output.cols());
    const double value = loss(tape.output, g);
    if (!std::isfinite(value)) {
        throw Error(ErrorKind::numeric, "grad_params: non-finite loss");
    }
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(m.param_count());
    accumulate_param_grad(m, tape, g, grad);
    if (loss_value != nullptr) {
        *loss_value = value;
    }
    return grad;
}

static_assert(ScoreMap<ScoreModel>);

}  // namespace scoretd
