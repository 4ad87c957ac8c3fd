#pragma once

// kNN local intrinsic dimension estimators: Levina-Bickel MLE and MiND_MLk.

#include "error.hpp"
#include "manifolds.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace scoretd {

/// Exact Euclidean kNN by brute force with a partial sort. Ties go to the
/// lower index.
class KNNIndex {
public:
    explicit KNNIndex(Eigen::MatrixXd points) : points_(std::move(points)) {}

    [[nodiscard]] Eigen::Index size() const { return points_.rows(); }
    [[nodiscard]] const Eigen::MatrixXd& points() const { return points_; }

    struct Neighbor {
        Eigen::Index index;
        double distance;
    };

    /// k nearest dataset points to `query`, excluding index `exclude` (pass -1 for none).
    [[nodiscard]] std::vector<Neighbor> query(const Eigen::VectorXd& q, Eigen::Index k, Eigen::Index exclude = -1) const
    {
        const Eigen::Index avail = size() - (exclude >= 0 ? 1 : 0);
        detail::require_arg(k >= 1 && k <= avail, "KNNIndex: k must lie in [1, available points]");
        std::vector<Neighbor> cand;
        cand.reserve(static_cast<std::size_t>(size()));
        for (Eigen::Index i = 0; i < size(); ++i) {
            if (i == exclude) {
                continue;
            }
            cand.push_back({i, (points_.row(i).transpose() - q).squaredNorm()});
        }
        auto less = [](const Neighbor& a, const Neighbor& b) { return a.distance < b.distance || (a.distance == b.distance && a.index < b.index); };
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end(), less);
        cand.resize(static_cast<std::size_t>(k));
        for (auto& c : cand) {
            c.distance = std::sqrt(c.distance);
        }
        return cand;
    }

private:
    Eigen::MatrixXd points_;
};

/// Ascending distances T_1..T_k from dataset point i to its k nearest other points.
inline std::vector<double> knn_distances(const KNNIndex& index, Eigen::Index i, Eigen::Index k)
{
    detail::require_arg(i >= 0 && i < index.size(), "knn_distances: index out of range");
    detail::require_arg(k < index.size(), "knn_distances: k must be smaller than the number of points");
    const auto nb = index.query(index.points().row(i).transpose(), k, i);
    std::vector<double> d;
    d.reserve(nb.size());
    for (const auto& x : nb) {
        d.push_back(x.distance);
    }
    return d;
}

enum class MleVariant {
    k_minus_1,  ///< [ (1/(k-1)) sum_{j<k} ln(T_k/T_j) ]^{-1}
    k_minus_2,  ///< same sum, (k-2) normalization
};

struct LocalEstimates {
    std::vector<double> estimate;  // NaN where the point was flagged
    std::vector<bool> flagged;

    [[nodiscard]] double mean() const
    {
        double s = 0.0;
        std::size_t c = 0;
        for (std::size_t i = 0; i < estimate.size(); ++i) {
            if (!flagged[i]) {
                s += estimate[i];
                ++c;
            }
        }
        return c ? s / static_cast<double>(c) : std::numeric_limits<double>::quiet_NaN();
    }

    /// MSE against labels over unflagged points.
    [[nodiscard]] double mse(const std::vector<int>& truth) const
    {
        detail::require_arg(truth.size() == estimate.size(), "LocalEstimates::mse: length mismatch");
        double s = 0.0;
        std::size_t c = 0;
        for (std::size_t i = 0; i < estimate.size(); ++i) {
            if (!flagged[i]) {
                const double d = estimate[i] - truth[i];
                s += d * d;
                ++c;
            }
        }
        detail::require(c > 0, ErrorKind::numeric, "LocalEstimates::mse: every point flagged");
        return s / static_cast<double>(c);
    }
};

/// Per-point Levina-Bickel MLE of the local dimension.
inline LocalEstimates mle_levina_bickel(const Eigen::MatrixXd& points, int k, MleVariant variant = MleVariant::k_minus_1)
{
    detail::require_arg(k >= 3, "mle_levina_bickel: k must be >= 3");
    detail::require_arg(k < points.rows(), "mle_levina_bickel: k must be smaller than the number of points");
    const KNNIndex index(points);
    LocalEstimates out;
    out.estimate.assign(static_cast<std::size_t>(points.rows()), std::numeric_limits<double>::quiet_NaN());
    out.flagged.assign(static_cast<std::size_t>(points.rows()), false);
    const double norm = variant == MleVariant::k_minus_1 ? k - 1.0 : k - 2.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const auto T = knn_distances(index, i, k);
        if (T.front() <= 0.0) {
            out.flagged[static_cast<std::size_t>(i)] = true;
            continue;
        }
        double s = 0.0;
        for (int j = 0; j + 1 < k; ++j) {
            s += std::log(T[static_cast<std::size_t>(k - 1)] / T[static_cast<std::size_t>(j)]);
        }
        if (s <= 0.0) {
            out.flagged[static_cast<std::size_t>(i)] = true;
            continue;
        }
        out.estimate[static_cast<std::size_t>(i)] = norm / s;
    }
    return out;
}

inline LocalEstimates mle_levina_bickel(const ManifoldSample& s, int k, MleVariant variant = MleVariant::k_minus_1)
{
    return mle_levina_bickel(s.points, k, variant);
}

struct MindResult {
    int dimension = 0;
    std::vector<double> log_likelihood;  // index d-1
    std::size_t used_points = 0;
};

/// MiND_MLk: integer d in [1, D] maximizing
///   sum_i ln(k d) + (d-1) ln rho_i + (k-1) ln(1 - rho_i^d),
/// with rho_i = T_1 / T_{k+1} (nearest over the (k+1)-th neighbour distance,
/// so the k inner neighbours follow the modelled law).
inline MindResult mind_ml(const Eigen::MatrixXd& points, int k)
{
    detail::require_arg(k >= 2, "mind_ml: k must be >= 2");
    detail::require_arg(k + 1 < points.rows(), "mind_ml: k + 1 must be smaller than the number of points");
    const int D = static_cast<int>(points.cols());
    const KNNIndex index(points);
    std::vector<double> log_rho;
    log_rho.reserve(static_cast<std::size_t>(points.rows()));
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const auto T = knn_distances(index, i, k + 1);
        if (T.front() <= 0.0 || T.front() >= T.back()) {
            continue;
        }
        log_rho.push_back(std::log(T.front() / T.back()));
    }
    detail::require(!log_rho.empty(), ErrorKind::numeric, "mind_ml: every point excluded (duplicate neighbours)");

    MindResult r;
    r.used_points = log_rho.size();
    r.log_likelihood.resize(static_cast<std::size_t>(D));
    double best = -std::numeric_limits<double>::infinity();
    for (int d = 1; d <= D; ++d) {
        double l = 0.0;
        for (double lr : log_rho) {
            // ln(1 - rho^d) with rho^d = exp(d ln rho); log1p(-x) for accuracy.
            const double rd = std::exp(d * lr);
            l += std::log(static_cast<double>(k) * d) + (d - 1) * lr + (k - 1) * std::log1p(-rd);
        }
        r.log_likelihood[static_cast<std::size_t>(d - 1)] = l;
        if (l > best) {
            best = l;
            r.dimension = d;
        }
    }
    return r;
}

inline MindResult mind_ml(const ManifoldSample& s, int k) { return mind_ml(s.points, k); }

/// MSE of one global integer estimate against per-point labels.
inline double global_estimate_mse(int d_hat, const std::vector<int>& truth)
{
    detail::require_arg(!truth.empty(), "global_estimate_mse: empty labels");
    double s = 0.0;
    for (int t : truth) {
        s += static_cast<double>(d_hat - t) * (d_hat - t);
    }
    return s / static_cast<double>(truth.size());
}

/// Baseline CSV rows: method, k, index, estimate, true_td.
inline std::string baseline_csv(const std::string& method, int k, const std::vector<double>& estimates, const std::vector<int>& truth,
                                const std::string& config_hash = "")
{
    std::ostringstream os;
    os.precision(12);
    for (std::size_t i = 0; i < estimates.size(); ++i) {
        os << method << ',' << k << ',' << i << ',' << estimates[i] << ',' << truth[i];
        if (!config_hash.empty()) os << ',' << config_hash;
        os << '\n';
    }
    return os.str();
}

}  // namespace scoretd
