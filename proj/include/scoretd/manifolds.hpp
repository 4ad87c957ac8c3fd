#pragma once

// Synthetic manifold datasets with per-point ground-truth topological dimension,
// z-score normalization, and the exact text file format.

#include "error.hpp"
#include "rng.hpp"
#include "text_io.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace scoretd {

/// Point cloud, one point per row, with per-point topological dimension labels.
struct ManifoldSample {
    std::string name;
    Eigen::MatrixXd points;  // count x ambient_dim
    std::vector<int> true_td;
    std::uint64_t seed = 0;

    [[nodiscard]] Eigen::Index count() const noexcept { return points.rows(); }
    [[nodiscard]] Eigen::Index ambient_dim() const noexcept { return points.cols(); }

    /// Throws if any invariant is broken (finite entries, labels within [0, n]).
    void validate() const
    {
        detail::require_arg(points.cols() >= 1, "sample '" + name + "' has ambient_dim 0");
        detail::require_arg(static_cast<Eigen::Index>(true_td.size()) == points.rows(),
                            "sample '" + name + "': label count does not match point count");
        detail::require(points.allFinite(), ErrorKind::numeric, "sample '" + name + "' contains non-finite values");
        for (int td : true_td) {
            detail::require_arg(td >= 0 && td <= points.cols(), "sample '" + name + "': true_td out of [0, n]");
        }
    }
};

struct NormalizationStats {
    Eigen::VectorXd mean;
    Eigen::VectorXd std;

    [[nodiscard]] Eigen::MatrixXd apply(const Eigen::MatrixXd& pts) const
    {
        return (pts.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array();
    }

    [[nodiscard]] Eigen::MatrixXd invert(const Eigen::MatrixXd& pts) const
    {
        return (pts.array().rowwise() * std.transpose().array()).matrix().rowwise() + mean.transpose();
    }
};

namespace manifolds {

inline constexpr double kSwirlScale = 0.3;  // raw swirl has roughly unit coordinate std
inline constexpr double kSwirlPhiMin = std::numbers::pi / 2.0;
inline constexpr double kSwirlPhiMax = 3.0 * std::numbers::pi;
inline constexpr int kSwirlSamplingPower = 2;

/// Noiseless swirl point for a given angle.
inline Eigen::Vector2d swirl_curve(double phi)
{
    return {kSwirlScale * phi * std::cos(phi), kSwirlScale * phi * std::sin(phi)};
}

/// Archimedean spiral r = a*phi with phi = phi_min + (phi_max - phi_min) * u^2,
/// so points crowd toward the inner end. Isotropic Gaussian noise of scale
/// noise_scale is added afterwards.
inline ManifoldSample gen_swirl(Eigen::Index count, double noise_scale, std::uint64_t seed)
{
    detail::require_arg(count >= 1, "gen_swirl: count must be >= 1");
    detail::require_arg(noise_scale >= 0.0 && std::isfinite(noise_scale), "gen_swirl: noise_scale must be >= 0");
    const Rng root(seed);
    Rng angle = root.split("swirl/angle");
    Rng noise = root.split("swirl/noise");

    ManifoldSample s;
    s.name = noise_scale > 0.0 ? "swirl_noisy" : "swirl";
    s.seed = seed;
    s.points.resize(count, 2);
    s.true_td.assign(static_cast<std::size_t>(count), 1);
    for (Eigen::Index i = 0; i < count; ++i) {
        const double u = angle.uniform();
        const double phi = kSwirlPhiMin + (kSwirlPhiMax - kSwirlPhiMin) * std::pow(u, kSwirlSamplingPower);
        s.points.row(i) = swirl_curve(phi).transpose();
    }
    if (noise_scale > 0.0) {
        for (Eigen::Index i = 0; i < count; ++i) {
            s.points(i, 0) += noise_scale * noise.normal();
            s.points(i, 1) += noise_scale * noise.normal();
        }
    }
    return s;
}

// LineDiskBall layout: segment of half-length 1 along e1 centred at (-3,0,0),
// unit disk in the e1-e2 plane at the origin, unit ball centred at (+3,0,0).
inline const Eigen::Vector3d kSegmentCenter{-3.0, 0.0, 0.0};
inline const Eigen::Vector3d kDiskCenter{0.0, 0.0, 0.0};
inline const Eigen::Vector3d kBallCenter{3.0, 0.0, 0.0};

inline ManifoldSample gen_line_disk_ball(Eigen::Index count, std::uint64_t seed)
{
    detail::require_arg(count >= 3, "insufficient points for three components");
    const Rng root(seed);
    Rng line = root.split("ldb/line");
    Rng disk = root.split("ldb/disk");
    Rng ball = root.split("ldb/ball");

    ManifoldSample s;
    s.name = "line_disk_ball";
    s.seed = seed;
    s.points.setZero(count, 3);
    s.true_td.resize(static_cast<std::size_t>(count));

    const Eigen::Index base = count / 3;
    const Eigen::Index extra = count % 3;
    const Eigen::Index sizes[3] = {base + (extra > 0 ? 1 : 0), base + (extra > 1 ? 1 : 0), base};

    Eigen::Index row = 0;
    for (Eigen::Index i = 0; i < sizes[0]; ++i, ++row) {
        s.points.row(row) = (kSegmentCenter + Eigen::Vector3d(line.uniform(-1.0, 1.0), 0.0, 0.0)).transpose();
        s.true_td[static_cast<std::size_t>(row)] = 1;
    }
    for (Eigen::Index i = 0; i < sizes[1]; ++i, ++row) {
        // Uniform on the disk by inverse-CDF radius.
        const double r = std::sqrt(disk.uniform());
        const double theta = disk.uniform(0.0, 2.0 * std::numbers::pi);
        s.points.row(row) = (kDiskCenter + Eigen::Vector3d(r * std::cos(theta), r * std::sin(theta), 0.0)).transpose();
        s.true_td[static_cast<std::size_t>(row)] = 2;
    }
    for (Eigen::Index i = 0; i < sizes[2]; ++i, ++row) {
        const Eigen::VectorXd dir = ball.unit_vector(3);
        const double r = std::cbrt(ball.uniform());
        s.points.row(row) = (kBallCenter + r * dir).transpose();
        s.true_td[static_cast<std::size_t>(row)] = 3;
    }
    return s;
}

/// Height of the twin-peaks surface: sum_i sin(pi u_i) cos(pi u_{i+1 mod d}).
inline double twin_peaks_height(const Eigen::Ref<const Eigen::VectorXd>& u)
{
    const Eigen::Index d = u.size();
    double f = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
        f += std::sin(std::numbers::pi * u[i]) * std::cos(std::numbers::pi * u[(i + 1) % d]);
    }
    return f;
}

inline ManifoldSample gen_hyper_twin_peaks(int intrinsic_dim, Eigen::Index count, std::uint64_t seed)
{
    detail::require_arg(intrinsic_dim >= 1, "gen_hyper_twin_peaks: intrinsic_dim must be >= 1");
    detail::require_arg(count >= 1, "gen_hyper_twin_peaks: count must be >= 1");
    Rng rng = Rng(seed).split("htp/u");

    ManifoldSample s;
    s.name = "hyper_twin_peaks_" + std::to_string(intrinsic_dim);
    s.seed = seed;
    s.points.resize(count, intrinsic_dim + 1);
    s.true_td.assign(static_cast<std::size_t>(count), intrinsic_dim);
    Eigen::VectorXd u(intrinsic_dim);
    for (Eigen::Index i = 0; i < count; ++i) {
        for (int j = 0; j < intrinsic_dim; ++j) {
            u[j] = rng.uniform(-1.0, 1.0);
        }
        s.points.row(i).head(intrinsic_dim) = u.transpose();
        s.points(i, intrinsic_dim) = twin_peaks_height(u);
    }
    return s;
}

inline ManifoldSample gen_isotropic_gaussian(int dim, double variance, Eigen::Index count, std::uint64_t seed)
{
    detail::require_arg(dim >= 1, "gen_isotropic_gaussian: dim must be >= 1");
    detail::require_arg(variance > 0.0 && std::isfinite(variance), "gen_isotropic_gaussian: variance must be > 0");
    detail::require_arg(count >= 1, "gen_isotropic_gaussian: count must be >= 1");
    Rng rng = Rng(seed).split("gaussian");
    const double sd = std::sqrt(variance);

    ManifoldSample s;
    s.name = "gaussian_" + std::to_string(dim);
    s.seed = seed;
    s.points.resize(count, dim);
    for (Eigen::Index i = 0; i < count; ++i) {
        for (int j = 0; j < dim; ++j) {
            s.points(i, j) = sd * rng.normal();
        }
    }
    s.true_td.assign(static_cast<std::size_t>(count), dim);
    return s;
}

inline ManifoldSample gen_isolated_point(int dim, Eigen::Index count)
{
    detail::require_arg(dim >= 1, "gen_isolated_point: dim must be >= 1");
    detail::require_arg(count >= 1, "gen_isolated_point: count must be >= 1");
    ManifoldSample s;
    s.name = "isolated_point_" + std::to_string(dim);
    s.points.setZero(count, dim);
    s.true_td.assign(static_cast<std::size_t>(count), 0);
    return s;
}

/// Per-coordinate z-scoring with population (1/N) statistics.
inline std::pair<ManifoldSample, NormalizationStats> normalize(const ManifoldSample& sample)
{
    detail::require_arg(sample.count() >= 2, "normalize: need at least 2 points");
    NormalizationStats stats;
    stats.mean = sample.points.colwise().mean().transpose();
    const Eigen::MatrixXd centered = sample.points.rowwise() - stats.mean.transpose();
    stats.std = (centered.colwise().squaredNorm() / static_cast<double>(sample.count())).cwiseSqrt().transpose();
    for (Eigen::Index j = 0; j < stats.std.size(); ++j) {
        const double scale = std::max(1.0, std::abs(stats.mean[j]));
        if (!(stats.std[j] > 1e-12 * scale)) {
            throw Error(ErrorKind::numeric, "degenerate coordinate " + std::to_string(j) + " in '" + sample.name + "'");
        }
    }
    ManifoldSample out = sample;
    out.points = stats.apply(sample.points);
    return {std::move(out), std::move(stats)};
}

// ---------------------------------------------------------------------------
// File format
//
//   line 1: name ambient_dim count seed
//   line 2: true_td, space separated
//   then:   one point per line, coordinates as hex floats (bit exact)

inline std::string serialize(const ManifoldSample& s)
{
    s.validate();
    std::ostringstream os;
    os << s.name << ' ' << s.ambient_dim() << ' ' << s.count() << ' ' << s.seed << '\n';
    for (std::size_t i = 0; i < s.true_td.size(); ++i) {
        os << (i ? " " : "") << s.true_td[i];
    }
    os << '\n';
    for (Eigen::Index i = 0; i < s.count(); ++i) {
        for (Eigen::Index j = 0; j < s.ambient_dim(); ++j) {
            os << (j ? " " : "") << text_io::hex(s.points(i, j));
        }
        os << '\n';
    }
    return os.str();
}

inline ManifoldSample deserialize(const std::string& text, const std::string& source = "<memory>")
{
    text_io::LineReader rd(text, source);
    const auto header = text_io::split_ws(rd.expect_line("header"));
    if (header.size() != 4) {
        rd.fail("malformed header, expected 'name ambient_dim count seed'");
    }
    ManifoldSample s;
    s.name = header[0];
    long long dim = 0, count = 0;
    try {
        dim = text_io::parse_int(header[1]);
        count = text_io::parse_int(header[2]);
        s.seed = static_cast<std::uint64_t>(std::stoull(header[3]));
    } catch (const std::exception&) {
        rd.fail("malformed header, expected 'name ambient_dim count seed'");
    }
    if (dim < 1 || count < 0) {
        rd.fail("malformed header: ambient_dim must be >= 1 and count >= 0");
    }

    const auto labels = text_io::split_ws(rd.expect_line("true_td line"));
    if (static_cast<long long>(labels.size()) != count) {
        rd.fail("expected " + std::to_string(count) + " labels, found " + std::to_string(labels.size()));
    }
    s.true_td.reserve(labels.size());
    for (const auto& tok : labels) {
        const long long td = text_io::parse_int(tok);
        if (td < 0 || td > dim) {
            rd.fail("true_td " + tok + " outside [0, " + std::to_string(dim) + "]");
        }
        s.true_td.push_back(static_cast<int>(td));
    }

    s.points.resize(count, dim);
    for (long long i = 0; i < count; ++i) {
        const auto row = text_io::split_ws(rd.expect_line("point row"));
        if (static_cast<long long>(row.size()) != dim) {
            rd.fail("row has " + std::to_string(row.size()) + " values, header ambient_dim is " + std::to_string(dim));
        }
        for (long long j = 0; j < dim; ++j) {
            const double v = text_io::parse_double(row[static_cast<std::size_t>(j)]);
            if (!std::isfinite(v)) {
                rd.fail("non-finite coordinate");
            }
            s.points(i, j) = v;
        }
    }
    std::string extra;
    while (rd.next(extra)) {
        if (!text_io::split_ws(extra).empty()) {
            rd.fail("trailing data after " + std::to_string(count) + " rows");
        }
    }
    return s;
}

inline void save_sample(const ManifoldSample& s, const std::string& path) { text_io::write_file(path, serialize(s)); }

inline ManifoldSample load_sample(const std::string& path) { return deserialize(text_io::read_file(path), path); }

/// Decimal CSV for plotting: x0..x{n-1},true_td. Lossy.
inline std::string to_csv(const ManifoldSample& s)
{
    std::ostringstream os;
    os.precision(10);
    for (Eigen::Index j = 0; j < s.ambient_dim(); ++j) {
        os << 'x' << j << ',';
    }
    os << "true_td\n";
    for (Eigen::Index i = 0; i < s.count(); ++i) {
        for (Eigen::Index j = 0; j < s.ambient_dim(); ++j) {
            os << s.points(i, j) << ',';
        }
        os << s.true_td[static_cast<std::size_t>(i)] << '\n';
    }
    return os.str();
}

}  // namespace manifolds

}  // namespace scoretd
