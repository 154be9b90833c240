#include <doctest.h>

#include "lpcalib/evaluation.hpp"
#include "lpcalib/occupancy_refinement.hpp"
#include "lpcalib/rough_calibration.hpp"
#include "lpcalib/synthetic_world.hpp"
#include "test_support.hpp"

using namespace lpcalib;
using lpcalib::testing::kDeg;

TEST_CASE("rough stage from identity on a full drive") {
    SimSpec spec;
    spec.seed = 21;
    spec.extrinsic = {euler_zyx_to_rotation({0.0, 0.0, 10.0 * kDeg}), {0.5, 0.3, 0.2}};
    const auto ds = simulate_dataset(default_scene(), spec);
    const auto seq = associate_frames_with_poses(ds.frames, ds.trajectory);
    RigidTransform start = RigidTransform::Identity();
    start.translation.z() = spec.extrinsic.translation.z();
    const auto rough = run_rough(seq, &ds.trajectory, start, RoughParams{});
    const auto err = extrinsic_error(spec.extrinsic, rough.extrinsic);
    INFO("angle " << err.angle_deg() << " tx " << err.tx << " ty " << err.ty);
    CHECK(err.angle_deg() <= 0.2);
    CHECK(std::abs(err.tx) <= 0.03);
    CHECK(std::abs(err.ty) <= 0.03);
}

TEST_CASE("refinement removes a small yaw error") {
    const SimSpec spec = lpcalib::testing::short_drive_spec(22);
    const auto ds = simulate_dataset(default_scene(), spec);
    const auto seq = associate_frames_with_poses(ds.frames, ds.trajectory);
    CalibrationResult rough;
    rough.stage = Stage::Rough;
    rough.extrinsic = {spec.extrinsic.rotation * euler_zyx_to_rotation({0.0, 0.0, 0.15 * kDeg}),
                       spec.extrinsic.translation};
    RefineParams params;
    params.max_points = 600'000;
    RefineReport report;
    const auto refined = refine(seq, ds.trajectory, rough, params, &report);
    const auto err = extrinsic_error(spec.extrinsic, refined.extrinsic);
    INFO("yaw " << err.yaw << " cost " << report.rough_cost << " -> " << report.refined_cost);
    CHECK(report.refined_cost <= report.rough_cost);
    CHECK(std::abs(err.yaw) <= 0.05);
}
