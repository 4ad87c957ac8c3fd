#include "test_util.hpp"

#include <gtest/gtest.h>

#include <map>

using namespace scoretd;

TEST(Swirl, ThousandPointsAllTdOne)
{
    const auto s = manifolds::gen_swirl(1000, 0.0, 7);
    EXPECT_EQ(s.count(), 1000);
    EXPECT_EQ(s.ambient_dim(), 2);
    for (int td : s.true_td) EXPECT_EQ(td, 1);
    EXPECT_NO_THROW(s.validate());
}

TEST(Swirl, SinglePointIsFinite)
{
    const auto s = manifolds::gen_swirl(1, 0.0, 3);
    ASSERT_EQ(s.count(), 1);
    EXPECT_TRUE(s.points.allFinite());
}

TEST(Swirl, NoiseScaling)
{
    const double ns = 0.01;
    const auto clean = manifolds::gen_swirl(1000, 0.0, 11);
    const auto noisy = manifolds::gen_swirl(1000, ns, 11);
    const double msd = (noisy.points - clean.points).rowwise().squaredNorm().mean();
    EXPECT_NEAR(msd / (2.0 * ns * ns), 1.0, 0.1);
}

TEST(Swirl, PointsLieOnSpiral)
{
    const auto s = manifolds::gen_swirl(200, 0.0, 5);
    for (Eigen::Index i = 0; i < s.count(); ++i) {
        const double r = s.points.row(i).norm();
        const double phi = r / manifolds::kSwirlScale;
        EXPECT_GE(phi, manifolds::kSwirlPhiMin - 1e-9);
        EXPECT_LE(phi, manifolds::kSwirlPhiMax + 1e-9);
        EXPECT_LT((manifolds::swirl_curve(phi).transpose() - s.points.row(i)).norm(), 1e-9);
    }
}

TEST(Generators, Deterministic)
{
    EXPECT_EQ(manifolds::gen_swirl(300, 0.01, 9).points, manifolds::gen_swirl(300, 0.01, 9).points);
    EXPECT_EQ(manifolds::gen_line_disk_ball(300, 9).points, manifolds::gen_line_disk_ball(300, 9).points);
    EXPECT_EQ(manifolds::gen_hyper_twin_peaks(4, 300, 9).points, manifolds::gen_hyper_twin_peaks(4, 300, 9).points);
    EXPECT_EQ(manifolds::gen_isotropic_gaussian(3, 2.0, 300, 9).points, manifolds::gen_isotropic_gaussian(3, 2.0, 300, 9).points);
    EXPECT_NE(manifolds::gen_swirl(300, 0.0, 9).points, manifolds::gen_swirl(300, 0.0, 10).points);
}

TEST(LineDiskBall, EqualSplit999)
{
    const auto s = manifolds::gen_line_disk_ball(999, 1);
    std::map<int, int> c;
    for (int td : s.true_td) ++c[td];
    EXPECT_EQ(c[1], 333);
    EXPECT_EQ(c[2], 333);
    EXPECT_EQ(c[3], 333);
}

TEST(LineDiskBall, CountsDifferByAtMostOne)
{
    const auto s = manifolds::gen_line_disk_ball(1000, 1);
    std::map<int, int> c;
    for (int td : s.true_td) ++c[td];
    const auto [lo, hi] = std::minmax({c[1], c[2], c[3]});
    EXPECT_LE(hi - lo, 1);
    EXPECT_EQ(c[1] + c[2] + c[3], 1000);
}

TEST(LineDiskBall, GeometricMembershipAgreesWithLabels)
{
    const auto s = manifolds::gen_line_disk_ball(1000, 4);
    for (Eigen::Index i = 0; i < s.count(); ++i) {
        const Eigen::Vector3d p = s.points.row(i).transpose();
        int region = 0;
        if ((p - manifolds::kBallCenter).norm() <= 1.0 + 1e-12) {
            region = 3;
        } else if (std::abs(p.z()) < 1e-15 && (p - manifolds::kDiskCenter).norm() <= 1.0 + 1e-12) {
            region = 2;
        } else if (std::abs(p.y()) < 1e-15 && std::abs(p.z()) < 1e-15 && std::abs(p.x() - manifolds::kSegmentCenter.x()) <= 1.0) {
            region = 1;
        }
        EXPECT_EQ(region, s.true_td[static_cast<std::size_t>(i)]) << "row " << i;
    }
}

TEST(LineDiskBall, TooFewPoints)
{
    try {
        (void)manifolds::gen_line_disk_ball(2, 0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::invalid_argument);
        EXPECT_NE(std::string(e.what()).find("insufficient points for three components"), std::string::npos);
    }
}

TEST(HyperTwinPeaks, Shapes)
{
    const auto a = manifolds::gen_hyper_twin_peaks(10, 1000, 2);
    EXPECT_EQ(a.ambient_dim(), 11);
    EXPECT_EQ(a.true_td.front(), 10);
    const auto b = manifolds::gen_hyper_twin_peaks(30, 1000, 2);
    EXPECT_EQ(b.ambient_dim(), 31);
    EXPECT_EQ(b.true_td.back(), 30);
    const auto c = manifolds::gen_hyper_twin_peaks(1, 100, 2);
    EXPECT_EQ(c.ambient_dim(), 2);
    EXPECT_EQ(c.true_td.front(), 1);
    for (Eigen::Index i = 0; i < a.count(); ++i) {
        EXPECT_NEAR(a.points(i, 10), manifolds::twin_peaks_height(a.points.row(i).head(10).transpose()), 1e-12);
    }
}

TEST(Gaussian, Moments)
{
    const auto s = manifolds::gen_isotropic_gaussian(8, 1.0, 4096, 3);
    const Eigen::RowVectorXd mean = s.points.colwise().mean();
    EXPECT_LE(mean.norm(), 0.1);
    for (Eigen::Index j = 0; j < 8; ++j) {
        const double var = (s.points.col(j).array() - mean[j]).square().mean();
        EXPECT_NEAR(var, 1.0, 0.1);
    }
    const auto small = manifolds::gen_isotropic_gaussian(16, 0.01, 1000, 3);
    const double v = small.points.array().square().mean();
    EXPECT_NEAR(v, 0.01, 0.001);
    EXPECT_THROW((void)manifolds::gen_isotropic_gaussian(2, 0.0, 10, 0), Error);
    EXPECT_THROW((void)manifolds::gen_isotropic_gaussian(2, -1.0, 10, 0), Error);
}

TEST(IsolatedPoint, ZeroRows)
{
    const auto s = manifolds::gen_isolated_point(16, 64);
    EXPECT_EQ(s.count(), 64);
    EXPECT_TRUE(s.points.isZero(0.0));
    for (int td : s.true_td) EXPECT_EQ(td, 0);
    const auto one = manifolds::gen_isolated_point(2, 1);
    EXPECT_EQ(one.count(), 1);
    EXPECT_EQ(one.ambient_dim(), 2);
    // No tangent space: every direction is normal.
    oracle::LocalSplit split{16, 16, 0.01, 0.0};
    EXPECT_NO_THROW(split.validate());
}

TEST(Normalize, ZeroMeanUnitVariance)
{
    const auto [n, stats] = manifolds::normalize(manifolds::gen_line_disk_ball(999, 6));
    for (Eigen::Index j = 0; j < n.ambient_dim(); ++j) {
        const Eigen::VectorXd c = n.points.col(j);
        EXPECT_LE(std::abs(c.mean()), 1e-9);
        EXPECT_LE(std::abs((c.array() - c.mean()).square().mean() - 1.0), 1e-9);
    }
    EXPECT_TRUE((stats.std.array() > 0).all());
}

TEST(Normalize, InvertRoundTrip)
{
    const auto s = manifolds::gen_hyper_twin_peaks(3, 500, 8);
    const auto [n, stats] = manifolds::normalize(s);
    const Eigen::MatrixXd back = stats.invert(n.points);
    EXPECT_LE((back - s.points).cwiseAbs().maxCoeff() / s.points.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Normalize, AffineInvariantAndIdempotent)
{
    const auto s = manifolds::gen_swirl(400, 0.01, 2);
    auto t = s;
    t.points = (5.0 * s.points).array() + 3.0;
    const auto a = manifolds::normalize(s).first;
    const auto b = manifolds::normalize(t).first;
    EXPECT_LE((a.points - b.points).cwiseAbs().maxCoeff(), 1e-9);

    const auto [again, st2] = manifolds::normalize(a);
    EXPECT_LE((again.points - a.points).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE(st2.mean.cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((st2.std.array() - 1.0).abs().maxCoeff(), 1e-9);
}

TEST(Normalize, DegenerateCoordinate)
{
    try {
        (void)manifolds::normalize(manifolds::gen_isolated_point(16, 64));
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("degenerate coordinate"), std::string::npos);
    }
}

TEST(SampleIO, RoundTripBitExact)
{
    for (const auto& s : {manifolds::gen_swirl(100, 0.01, 1), manifolds::gen_line_disk_ball(30, 2), manifolds::gen_hyper_twin_peaks(5, 20, 3),
                          manifolds::normalize(manifolds::gen_isotropic_gaussian(4, 0.3, 50, 4)).first}) {
        const auto back = manifolds::deserialize(manifolds::serialize(s));
        EXPECT_EQ(back.name, s.name);
        EXPECT_EQ(back.seed, s.seed);
        EXPECT_EQ(back.true_td, s.true_td);
        ASSERT_EQ(back.points.rows(), s.points.rows());
        EXPECT_EQ(std::memcmp(back.points.data(), s.points.data(), sizeof(double) * static_cast<std::size_t>(s.points.size())), 0);
    }
    const auto dir = testutil::temp_dir("sample_io");
    const auto s = manifolds::gen_swirl(50, 0.0, 12);
    manifolds::save_sample(s, dir + "/s.txt");
    EXPECT_EQ(manifolds::load_sample(dir + "/s.txt").points, s.points);
}

TEST(SampleIO, TruncatedAndMalformed)
{
    const std::string text = manifolds::serialize(manifolds::gen_swirl(10, 0.0, 1));
    EXPECT_THROW((void)manifolds::deserialize(text.substr(0, text.size() / 2)), Error);
    EXPECT_THROW((void)manifolds::deserialize(""), Error);

    // Header claims 3 columns, rows carry 2.
    std::string bad = text;
    bad.replace(bad.find(" 2 "), 3, " 3 ");
    EXPECT_THROW((void)manifolds::deserialize(bad), Error);

    try {
        (void)manifolds::load_sample("/nonexistent/dir/file.txt");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::io);
    }
}

TEST(SampleIO, CsvHasHeaderAndRows)
{
    const auto s = manifolds::gen_line_disk_ball(9, 1);
    const std::string csv = manifolds::to_csv(s);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 10);
}
