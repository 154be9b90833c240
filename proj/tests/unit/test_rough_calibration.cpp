#include <doctest.h>

#include <fstream>
#include <random>

#include "lpcalib/errors.hpp"
#include "lpcalib/rough_calibration.hpp"
#include "lpcalib/synthetic_world.hpp"
#include "test_support.hpp"
#include "window_fixture.hpp"

using namespace lpcalib;
using lpcalib::testing::kDeg;

namespace {

RigidTransform truth_extrinsic() { return SimSpec::default_extrinsic(); }

double translation_error(const RigidTransform& a, const RigidTransform& b) {
    return (a.translation - b.translation).head<2>().cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("projection to the anchor frame") {
    std::mt19937_64 rng(1);
    const auto t = testing::random_transform(rng);
    const auto same = testing::random_transform(rng);
    const Eigen::Vector3d x(1, 2, 3);
    CHECK((project_to_anchor(x, same, same, RigidTransform::Identity()) - x).norm() < 1e-12);
    CHECK((project_to_anchor(Eigen::Vector3d::Zero(), RigidTransform::Identity(), RigidTransform::FromTranslation({1, 0, 0}),
                             RigidTransform::Identity()) -
           Eigen::Vector3d(1, 0, 0))
              .norm() == 0.0);
    for (int i = 0; i < 100; ++i) {
        const auto a = testing::random_transform(rng);
        const auto b = testing::random_transform(rng);
        const Eigen::Vector4d h = a.matrix().inverse() * b.matrix() * t.matrix() * x.homogeneous();
        CHECK((project_to_anchor(x, a, b, t) - h.head<3>()).norm() < 1e-9);
    }
}

TEST_CASE("association: on-plane points match with zero residual, distant ones are dropped") {
    const auto fx = testing::make_window_fixture(1, truth_extrinsic(), 0.0);
    auto params = testing::fixture_params();
    const auto corr = associate(fx.problem, fx.truth, 0.3, params);
    CHECK(corr.size() >= fx.problem.point_count() * 9 / 10);
    for (const auto& c : corr) CHECK(std::abs(point_to_plane_residual(fx.problem, c, fx.truth)) < 1e-9);

    PlanePatch patch;
    patch.centroid = {0, 0, 0};
    patch.normal = {0, 0, 1};
    FeatureFrame frame;
    frame.points = {{0.2, 0.1, 0.0}, {0.0, 0.0, 5.0}};
    frame.normals = {{0, 0, 1}, {0, 0, 1}};
    const WindowProblem tiny(RigidTransform::Identity(), {patch}, {frame});
    params.min_correspondences = 1;
    params.max_centroid_distance = 10.0;
    const auto m = associate(tiny, RigidTransform::Identity(), 1.0, params);
    REQUIRE(m.size() == 1);
    CHECK(m[0].point.z() == 0.0);
    params.min_correspondences = 2;
    CHECK_THROWS_AS(associate(tiny, RigidTransform::Identity(), 1.0, params), InsufficientCorrespondences);
}

TEST_CASE("solver stays put at the exact solution") {
    const auto fx = testing::make_window_fixture(2, truth_extrinsic(), 0.0);
    const auto [est, report] = solve_window(fx.problem, fx.truth, 0.3, testing::fixture_params());
    CHECK(report.iterations == 1);
    CHECK(report.converged);
    CHECK(est == fx.truth);
}

TEST_CASE("solver recovers a perturbed extrinsic exactly without noise") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 3; ++trial) {
        const auto fx = testing::make_window_fixture(20 + trial, truth_extrinsic(), 0.0, 8);
        const RigidTransform start{fx.truth.rotation * so3_exp(testing::random_unit(rng) * 3.0 * kDeg),
                                   fx.truth.translation + 0.1 * testing::random_unit(rng)};
        const auto [est, report] = solve_window(fx.problem, start, 1.0, testing::fixture_params(), fx.truth.translation.z());
        CHECK(report.converged);
        CHECK(testing::rotation_distance_deg(est.rotation, fx.truth.rotation) < 1e-6);
        CHECK(translation_error(est, fx.truth) < 1e-6);
    }
}

TEST_CASE("solver recovers a perturbed extrinsic on a noisy window") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        const auto fx = testing::make_window_fixture(10 + trial, truth_extrinsic(), 0.02, 8);
        const RigidTransform start{fx.truth.rotation * so3_exp(testing::random_unit(rng) * 3.0 * kDeg),
                                   fx.truth.translation + 0.1 * testing::random_unit(rng)};
        const auto [est, report] = solve_window(fx.problem, start, 1.0, testing::fixture_params(), fx.truth.translation.z());
        CHECK(report.converged);
        CHECK(testing::rotation_distance_deg(est.rotation, fx.truth.rotation) < 0.2);
        CHECK(translation_error(est, fx.truth) < 0.03);
        for (std::size_t i = 1; i < report.cost_trace.size(); ++i) CHECK(report.cost_trace[i] <= report.cost_trace[i - 1]);
    }
}

TEST_CASE("a ground-only scene is rank deficient") {
    const auto fx = testing::make_window_fixture(4, truth_extrinsic(), 0.0, 6, true);
    CHECK_THROWS_AS(solve_window(fx.problem, fx.truth, 0.3, testing::fixture_params()), SingularHessian);
}

TEST_CASE("without motion every window is singular and the stage fails") {
    const auto fx = testing::make_window_fixture(5, truth_extrinsic(), 0.01, 6, false, true);
    CHECK_THROWS_AS(solve_window(fx.problem, fx.truth, 0.3, testing::fixture_params()), SingularHessian);

    const auto scene = default_scene();
    SimSpec spec;
    const RigidTransform parked = RigidTransform::FromTranslation({0, 0, spec.trajectory.height});
    const Trajectory traj({{0.0, parked}, {100.0, parked}});
    std::vector<LidarFrame> frames;
    for (int i = 0; i < 12; ++i) frames.push_back(simulate_scan(scene, traj, spec.extrinsic, 1.0 + 0.1 * i, spec.lidar, 0.01, i).frame);
    const auto seq = associate_frames_with_poses(frames, traj);
    RoughParams params;
    params.window_size = 6;
    params.stride = 3;
    RoughReport report;
    try {
        run_rough(seq, &traj, spec.extrinsic, params, &report);
        FAIL("expected a stage failure");
    } catch (const StageFailure& e) {
        CHECK(e.stage() == "rough");
    }
}

TEST_CASE("simulated window: matched points lie on the plane of their patch") {
    const auto spec = testing::short_drive_spec();
    const auto ds = simulate_dataset(default_scene(), spec);
    const auto seq = testing::sequence_slice(ds, 60, 40);
    RoughParams params;
    std::vector<FeatureFrame> features;
    for (std::size_t i = 0; i < seq.size(); ++i) features.push_back(make_feature_frame(seq.frames[i], seq.poses[i], params));
    const auto problem = make_window(features.front(), seq.frames.front(), features, params);
    const auto corr = associate(problem, spec.extrinsic, params.gate_converged, params);

    // Each point and each patch centroid is labeled with the nearest scene plane.
    const auto nearest_plane = [&](const Eigen::Vector3d& w) {
        std::uint32_t best = 0;
        double best_d = 1e9;
        for (const auto& pl : ds.scene.planes) {
            const Eigen::Vector3d rel = w - pl.corner;
            const double a = rel.dot(pl.edge_u) / pl.edge_u.squaredNorm();
            const double b = rel.dot(pl.edge_v) / pl.edge_v.squaredNorm();
            if (a < -0.05 || a > 1.05 || b < -0.05 || b > 1.05) continue;
            const double d = std::abs(pl.normal().dot(rel));
            if (d < best_d) {
                best_d = d;
                best = pl.id;
            }
        }
        return best;
    };
    const RigidTransform anchor_lidar = compose(problem.anchor_pose(), spec.extrinsic);
    std::size_t agree = 0;
    for (const auto& c : corr) {
        const Eigen::Vector3d w = compose(problem.frames()[c.frame].pose, spec.extrinsic) * c.point;
        agree += nearest_plane(w) == nearest_plane(anchor_lidar * problem.patches()[c.patch].centroid);
    }
    CHECK(static_cast<double>(agree) >= 0.95 * static_cast<double>(corr.size()));
    CHECK(static_cast<double>(corr.size()) >= 0.5 * static_cast<double>(problem.point_count()));
}

TEST_CASE("starting at the truth, every window stays at the truth") {
    const auto spec = testing::short_drive_spec();
    const auto ds = simulate_dataset(default_scene(), spec);
    const auto seq = testing::sequence_slice(ds, 0, 80);
    RoughReport report;
    const auto result = run_rough(seq, &ds.trajectory, spec.extrinsic, RoughParams{}, &report);
    CHECK(report.windows.size() == 3);
    for (const auto& w : report.windows) {
        REQUIRE(w.solved);
        CHECK(testing::rotation_distance_deg(w.estimate.rotation, spec.extrinsic.rotation) < 0.1);
        CHECK(translation_error(w.estimate, spec.extrinsic) < 0.02);
    }
    CHECK(result.stage == Stage::Rough);
    CHECK(result.diagnostics.extra["windows"] == 3);

    testing::TempDir dir("rough");
    write_convergence_trace_csv(report, spec.extrinsic, dir / "trace.csv");
    std::ifstream in(dir / "trace.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header.find("dyaw_deg") != std::string::npos);
    int rows = 0;
    for (std::string line; std::getline(in, line);) rows += !line.empty();
    CHECK(rows == 3);
}

TEST_CASE("configuration errors") {
    FrameSequence empty;
    RoughParams params;
    CHECK_THROWS_AS(run_rough(empty, nullptr, RigidTransform::Identity(), params), ConfigError);
    params.deskew = false;
    CHECK_THROWS_AS(run_rough(empty, nullptr, RigidTransform::Identity(), params), StageFailure);
    params.window_size = 1;
    CHECK_THROWS_AS(run_rough(empty, nullptr, RigidTransform::Identity(), params), ConfigError);
}
