#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>
#include <random>

#include "lpcalib/errors.hpp"
#include "lpcalib/geometry.hpp"
#include "test_support.hpp"

using namespace lpcalib;
using lpcalib::testing::kDeg;

namespace {

Eigen::Matrix3d rz(double a) { return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitZ()).toRotationMatrix(); }

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

bool near(const RigidTransform& a, const RigidTransform& b, double tol) {
    return max_abs(a.rotation - b.rotation) <= tol && max_abs(a.translation - b.translation) <= tol;
}

}  // namespace

TEST_CASE("compose applies the right operand first") {
    const RigidTransform a{rz(90 * kDeg), {1, 0, 0}};
    const RigidTransform b{Eigen::Matrix3d::Identity(), {1, 0, 0}};
    const RigidTransform c = compose(a, b);
    CHECK(max_abs(c.rotation - rz(90 * kDeg)) < 1e-12);
    CHECK(max_abs(c.translation - Eigen::Vector3d(1, 1, 0)) < 1e-12);

    std::mt19937_64 rng(7);
    const RigidTransform t = testing::random_transform(rng);
    CHECK(near(compose(RigidTransform::Identity(), t), t, 1e-15));
    CHECK(near(compose(t, invert(t)), RigidTransform::Identity(), 1e-12));
}

TEST_CASE("compose matches 4x4 matrix products and is associative") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 1000; ++i) {
        const auto a = testing::random_transform(rng);
        const auto b = testing::random_transform(rng);
        const auto c = testing::random_transform(rng);
        const Eigen::Matrix4d ab = a.matrix() * b.matrix();
        CHECK(max_abs(compose(a, b).matrix() - ab) < 1e-12);
        CHECK(near(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-9));
        CHECK(orthonormality_error(compose(a, b).rotation) < 1e-9);
    }
}

TEST_CASE("invert") {
    CHECK(invert(RigidTransform::Identity()) == RigidTransform::Identity());
    const auto t = invert(RigidTransform::FromTranslation({0, 0, 2}));
    CHECK(max_abs(t.translation - Eigen::Vector3d(0, 0, -2)) == 0.0);
    CHECK(max_abs(t.rotation - Eigen::Matrix3d::Identity()) == 0.0);

    std::mt19937_64 rng(3);
    for (int i = 0; i < 1000; ++i) {
        const auto x = testing::random_transform(rng);
        CHECK(near(compose(invert(x), x), RigidTransform::Identity(), 1e-9));
        CHECK(max_abs(invert(x).matrix() - x.matrix().inverse()) < 1e-9);
    }
}

TEST_CASE("Euler ZYX follows Rz * Ry * Rx") {
    CHECK(max_abs(euler_zyx_to_rotation({0, 0, 0}) - Eigen::Matrix3d::Identity()) == 0.0);
    const Eigen::Matrix3d r = euler_zyx_to_rotation({0, 0, std::numbers::pi / 2});
    CHECK(max_abs(r * Eigen::Vector3d::UnitX() - Eigen::Vector3d::UnitY()) < 1e-15);

    const EulerZYX e{0.1, 0.2, 0.3};
    const Eigen::Matrix3d oracle = (Eigen::AngleAxisd(e.yaw, Eigen::Vector3d::UnitZ()) *
                                    Eigen::AngleAxisd(e.pitch, Eigen::Vector3d::UnitY()) *
                                    Eigen::AngleAxisd(e.roll, Eigen::Vector3d::UnitX()))
                                       .toRotationMatrix();
    CHECK(max_abs(euler_zyx_to_rotation(e) - oracle) < 1e-15);
    const auto back = rotation_to_euler_zyx(oracle);
    CHECK_FALSE(back.gimbal_lock);
    CHECK(back.angles.roll == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(back.angles.pitch == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(back.angles.yaw == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("gimbal lock sets roll to zero and keeps the rotation") {
    const Eigen::Matrix3d r = euler_zyx_to_rotation({0.4, std::numbers::pi / 2, 0.1});
    const auto d = rotation_to_euler_zyx(r);
    CHECK(d.gimbal_lock);
    CHECK(d.angles.roll == 0.0);
    CHECK(max_abs(euler_zyx_to_rotation(d.angles) - r) < 1e-9);
}

TEST_CASE("so3 exp matches angle-axis and survives tiny angles") {
    CHECK(max_abs(so3_exp(Eigen::Vector3d::Zero()) - Eigen::Matrix3d::Identity()) == 0.0);
    const Eigen::Matrix3d tiny = so3_exp({0, 0, 1e-12});
    CHECK(tiny.allFinite());
    CHECK(max_abs(tiny - Eigen::Matrix3d::Identity()) < 1e-11);
    const auto t = exp(TangentVector{});
    CHECK(near(t, RigidTransform::Identity(), 0.0));

    std::mt19937_64 rng(5);
    for (int i = 0; i < 200; ++i) {
        const Eigen::Vector3d w = testing::random_unit(rng) * std::uniform_real_distribution<double>(0, 3)(rng);
        const Eigen::Matrix3d oracle = Eigen::AngleAxisd(w.norm(), w.normalized()).toRotationMatrix();
        CHECK(max_abs(so3_exp(w) - oracle) < 1e-12);
    }
}

TEST_CASE("se3 log near pi is rejected") {
    const RigidTransform t{so3_exp({0, 0, std::numbers::pi - 1e-8}), {1, 2, 3}};
    CHECK_THROWS_AS(log(t), NearPiRotation);
}

TEST_CASE("exp and log round trip for rotation norms below 3") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int i = 0; i < 1000; ++i) {
        TangentVector v;
        v.rotation = testing::random_unit(rng) * std::uniform_real_distribution<double>(0, 3)(rng);
        v.translation = {u(rng), u(rng), u(rng)};
        const auto back = log(exp(v));
        CHECK(max_abs(back.stacked() - v.stacked()) < 1e-9);
    }
}

TEST_CASE("trajectory interpolation") {
    const Trajectory lin({{0.0, RigidTransform::Identity()}, {1.0, RigidTransform::FromTranslation({2, 0, 0})}});
    CHECK(max_abs(lin.interpolate(0.5).translation - Eigen::Vector3d(1, 0, 0)) < 1e-15);
    CHECK(lin.interpolate(1.0) == RigidTransform::FromTranslation({2, 0, 0}));
    CHECK_THROWS_AS(lin.interpolate(1.5), OutOfRange);
    CHECK_THROWS_AS(lin.interpolate(-0.1), OutOfRange);

    const Trajectory yaw({{0.0, RigidTransform::Identity()}, {2.0, RigidTransform{rz(90 * kDeg), {0, 0, 0}}}});
    CHECK(testing::rotation_distance_deg(yaw.interpolate(1.0).rotation, rz(45 * kDeg)) < 1e-9);

    CHECK_THROWS_AS(Trajectory({{1.0, {}}, {1.0, {}}}), NonMonotonicTimestamps);
}

TEST_CASE("interpolation returns stored samples exactly and is continuous") {
    std::mt19937_64 rng(21);
    std::vector<TrajectorySample> samples;
    for (int i = 0; i < 50; ++i) samples.push_back({0.01 * i + 100.0, testing::random_transform(rng, 0.5, 3.0)});
    // Keep neighboring samples close so the geodesic is well defined.
    for (std::size_t i = 1; i < samples.size(); ++i) {
        samples[i].pose.rotation = samples[i - 1].pose.rotation * testing::random_rotation(rng, 0.05);
    }
    const Trajectory traj(samples);
    for (const auto& s : samples) CHECK(traj.interpolate(s.timestamp) == s.pose);
    for (std::size_t i = 1; i + 1 < samples.size(); ++i) {
        const double t = samples[i].timestamp;
        const auto a = traj.interpolate(t - 1e-9);
        const auto b = traj.interpolate(t + 1e-9);
        CHECK(max_abs(a.matrix() - b.matrix()) < 1e-6);
    }
}

TEST_CASE("orthonormalize projects onto SO(3)") {
    std::mt19937_64 rng(13);
    for (int i = 0; i < 100; ++i) {
        const Eigen::Matrix3d r = testing::random_rotation(rng);
        const Eigen::Matrix3d noisy = r + 1e-6 * Eigen::Matrix3d::Random();
        CHECK(orthonormality_error(orthonormalize(noisy)) < 1e-12);
        CHECK(max_abs(orthonormalize(noisy) - r) < 1e-5);
    }
}
