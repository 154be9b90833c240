#include <doctest.h>

#include <Eigen/SVD>
#include <random>

#include "lpcalib/errors.hpp"
#include "lpcalib/kdtree.hpp"
#include "lpcalib/plane_features.hpp"
#include "test_support.hpp"

using namespace lpcalib;
using lpcalib::testing::kDeg;

namespace {

/// Smallest-singular-value direction of the centered points and the share of
/// the smallest eigenvalue, computed by SVD instead of an eigen solver.
std::pair<Eigen::Vector3d, double> svd_normal(const std::vector<Eigen::Vector3d>& pts) {
    Eigen::MatrixXd a(pts.size(), 3);
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) a.row(static_cast<Eigen::Index>(i)) = (pts[i] - mean).transpose();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinV);
    const Eigen::Vector3d s2 = svd.singularValues().cwiseAbs2();
    return {svd.matrixV().col(2), s2[2] / s2.sum()};
}

double angle_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
    return std::acos(std::clamp(std::abs(a.normalized().dot(b.normalized())), 0.0, 1.0)) / kDeg;
}

}  // namespace

TEST_CASE("fit_plane on a unit square") {
    const std::vector<Eigen::Vector3d> pts = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}};
    const auto fit = fit_plane(pts);
    CHECK((fit.centroid - Eigen::Vector3d(0.5, 0.5, 0)).norm() < 1e-12);
    CHECK(std::abs(std::abs(fit.normal.z()) - 1.0) < 1e-12);
    const std::vector<Eigen::Vector3d> line = {{0, 0, 0}, {1, 1, 1}, {2, 2, 2}};
    CHECK_THROWS_AS(fit_plane(line), DegenerateSet);
    CHECK_THROWS_AS(fit_plane(std::vector<Eigen::Vector3d>(2)), DegenerateSet);
}

TEST_CASE("noisy plane x + y + z = 1 agrees with an SVD oracle") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-3, 3);
    std::normal_distribution<double> noise(0, 0.01);
    const Eigen::Vector3d n = Eigen::Vector3d(1, 1, 1).normalized();
    const Eigen::Vector3d e1 = Eigen::Vector3d(1, -1, 0).normalized();
    const Eigen::Vector3d e2 = n.cross(e1);
    std::vector<Eigen::Vector3d> pts;
    for (int i = 0; i < 1000; ++i) pts.push_back(n / std::sqrt(3.0) + u(rng) * e1 + u(rng) * e2 + noise(rng) * n);
    const auto fit = fit_plane(pts);
    CHECK(angle_deg(fit.normal, n) < 0.5);
    CHECK(angle_deg(fit.normal, svd_normal(pts).first) < 1e-6);
    CHECK(fit.eigenvalues[0] >= fit.eigenvalues[1]);
    CHECK(fit.eigenvalues[1] >= fit.eigenvalues[2]);
}

TEST_CASE("curvature: zero on a plane, sentinel when sparse, positive on a sphere") {
    std::vector<Eigen::Vector3d> grid;
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 20; ++j) grid.push_back({0.1 * i, 0.1 * j, 0.0});
    const auto flat = compute_curvature(grid, {});
    for (double c : flat) CHECK(c < 1e-12);

    std::vector<Eigen::Vector3d> sparse = {{0, 0, 0}, {10, 0, 0}, {0, 10, 0}};
    for (int i = 0; i < 30; ++i) sparse.push_back({100.0 + 0.01 * i, 0, 0.001 * (i % 3)});
    const auto c = compute_curvature(sparse, {});
    CHECK(c[0] == kCurvatureSentinel);

    std::mt19937_64 rng(8);
    std::vector<Eigen::Vector3d> sphere;
    while (sphere.size() < 2000) {
        const Eigen::Vector3d d = testing::random_unit(rng);
        if (d.z() > 0.5) sphere.push_back(d);
    }
    CurvatureParams params;
    const auto curv = compute_curvature(sphere, params);
    const KdTree tree(sphere);
    for (std::size_t i = 0; i < sphere.size(); i += 97) {
        const auto nn = tree.knn(sphere[i], params.k + 1, params.search_radius * params.search_radius);
        REQUIRE(nn.size() == params.k + 1);
        std::vector<Eigen::Vector3d> hood;
        for (const auto& n : nn) hood.push_back(sphere[n.index]);
        const double oracle = svd_normal(hood).second;
        CHECK(curv[i] > 0.0);
        CHECK(curv[i] == doctest::Approx(oracle).epsilon(1e-6));
    }
}

TEST_CASE("adaptive voxelization") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.05, 1.95);
    AdaptiveVoxelParams params;

    std::vector<Eigen::Vector3d> floor;
    for (int i = 0; i < 100; ++i) floor.push_back({u(rng), u(rng), 0.5});
    const auto one = extract_planes_adaptive(floor, params, Eigen::Vector3d(1, 1, 5));
    REQUIRE(one.size() == 1);
    CHECK(one[0].normal.z() == doctest::Approx(1.0));
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& p : floor) mean += p;
    CHECK((one[0].centroid - mean / 100.0).norm() < 1e-12);
    CHECK(one[0].member_indices.size() == 100);

    std::vector<Eigen::Vector3d> corner;
    for (int i = 0; i < 400; ++i) corner.push_back({u(rng), u(rng), 0.02});
    for (int i = 0; i < 400; ++i) corner.push_back({0.02, u(rng), u(rng)});
    const auto patches = extract_planes_adaptive(corner, params, Eigen::Vector3d(1, 1, 1));
    REQUIRE(patches.size() >= 2);
    bool found_perpendicular = false;
    for (const auto& a : patches)
        for (const auto& b : patches) found_perpendicular |= std::abs(angle_deg(a.normal, b.normal) - 90.0) < 2.0;
    CHECK(found_perpendicular);

    std::vector<Eigen::Vector3d> few(floor.begin(), floor.begin() + 5);
    CHECK(extract_planes_adaptive(few, params).empty());
}

TEST_CASE("normal orientation") {
    CHECK(orient_normal({0, 0, 1}, {0, 0, 0}, {0, 0, -5}).z() == -1.0);
    CHECK(orient_normal({0, 0, -1}, {0, 0, 0}, {0, 0, 5}).z() == 1.0);
    CHECK(orient_normal({0, -1, 0}, {0, 0, 0}, {1, 0, 0}).y() == 1.0);
}

TEST_CASE("planar selection skips line-like neighborhoods") {
    std::vector<Eigen::Vector3d> ring;
    for (int i = 0; i < 200; ++i) ring.push_back({0.01 * i, 0.0, 0.0});
    const auto cloud = select_planar_points(ring, {});
    CHECK(cloud.planar_indices.empty());
}
