#include <doctest.h>

#include <algorithm>
#include <random>

#include "lpcalib/errors.hpp"
#include "lpcalib/z_correction.hpp"

using namespace lpcalib;

namespace {

/// Regular ground grid at height z over [-5, 5]^2 with 0.1 m spacing.
GlobalMap ground_map(double z) {
    GlobalMap map;
    for (int i = -50; i <= 50; ++i) {
        for (int j = -50; j <= 50; ++j) map.points.emplace_back(0.1 * i, 0.1 * j, z);
    }
    map.source_frame.assign(map.points.size(), 0);
    return map;
}

std::vector<FiducialPoint> fiducials_at(double z) {
    return {{{0.0, 0.0, z}}, {{2.0, 1.0, z}}, {{-3.0, 2.0, z}}, {{1.0, -4.0, z}}, {{-2.0, -2.0, z}}};
}

}  // namespace

TEST_CASE("map above the fiducials is pulled down by the offset") {
    const auto fix = correct_z(ground_map(0.05), fiducials_at(0.0));
    CHECK(fix.z_fix == doctest::Approx(-0.05).epsilon(1e-12));
    CHECK(fix.unmatched.empty());
    CHECK(fix.fiducial_count == 5);
    CHECK(fix.rms_before == doctest::Approx(0.05));
    CHECK(fix.rms_after < 1e-12);
    for (const auto& m : fix.matches) CHECK(m.distance < 1e-12);
}

TEST_CASE("matching map needs no shift") {
    const auto fix = correct_z(ground_map(0.0), fiducials_at(0.0));
    CHECK(std::abs(fix.z_fix) < 1e-6);
}

TEST_CASE("constant fiducial offset shifts the correction by the same amount") {
    const auto map = ground_map(0.02);
    const double base = correct_z(map, fiducials_at(0.0)).z_fix;
    const double lifted = correct_z(map, fiducials_at(0.07)).z_fix;
    CHECK(lifted - base == doctest::Approx(0.07).epsilon(1e-9));
}

TEST_CASE("second pass on the corrected map is idempotent") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 0.01);
    GlobalMap map = ground_map(0.1);
    for (auto& p : map.points) p.z() += n(rng);
    const auto fids = fiducials_at(0.0);
    const auto first = correct_z(map, fids);
    for (auto& p : map.points) p.z() += first.z_fix;
    const auto second = correct_z(map, fids);
    CHECK(std::abs(second.z_fix) < 1e-4);
    CHECK(first.rms_after <= first.rms_before);
}

TEST_CASE("fiducial order does not change the result") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0.0, 0.01);
    GlobalMap map = ground_map(-0.03);
    for (auto& p : map.points) p.z() += n(rng);
    auto fids = fiducials_at(0.0);
    const double forward = correct_z(map, fids).z_fix;
    std::reverse(fids.begin(), fids.end());
    CHECK(correct_z(map, fids).z_fix == doctest::Approx(forward).epsilon(1e-12));
}

TEST_CASE("unmatched fiducials are listed and excluded") {
    auto fids = fiducials_at(0.0);
    fids.push_back({{40.0, 40.0, 0.0}});
    const auto fix = correct_z(ground_map(0.05), fids);
    REQUIRE(fix.unmatched == std::vector<std::size_t>{5});
    CHECK_FALSE(fix.matches[5].matched);
    CHECK(fix.z_fix == doctest::Approx(-0.05));
}

TEST_CASE("z gate rejects points far above the fiducial") {
    GlobalMap map = ground_map(0.0);
    // A roof directly above a fiducial must not be matched.
    map.points.emplace_back(0.0, 0.0, 3.0);
    const auto fix = correct_z(map, fiducials_at(0.0));
    CHECK(std::abs(fix.z_fix) < 1e-12);
}

TEST_CASE("error conditions") {
    CHECK_THROWS_AS(correct_z(ground_map(0.0), {{{0, 0, 0}}, {{1, 0, 0}}}), TooFewFiducials);
    CHECK_THROWS_AS(correct_z(GlobalMap{}, fiducials_at(0.0)), StageFailure);
    std::vector<FiducialPoint> far = {{{50, 50, 0}}, {{60, 50, 0}}, {{50, 60, 0}}};
    CHECK_THROWS_AS(correct_z(ground_map(0.0), far), StageFailure);
    ZFixParams bad;
    bad.horizontal_radius = 0.0;
    CHECK_THROWS_AS(correct_z(ground_map(0.0), fiducials_at(0.0), bad), ConfigError);
}

TEST_CASE("apply_z_fix touches only t_z") {
    const RigidTransform t{euler_zyx_to_rotation({0.1, -0.2, 0.3}), {1, 2, 3}};
    const auto fixed = apply_z_fix(t, -0.25);
    CHECK(fixed.rotation == t.rotation);
    CHECK(fixed.translation == Eigen::Vector3d(1, 2, 2.75));
}

TEST_CASE("run_z_correction chains the parent and the report") {
    FrameSequence seq;
    LidarFrame f;
    for (int i = -20; i <= 20; ++i) {
        for (int j = -20; j <= 20; ++j) f.points.push_back({Eigen::Vector3f(0.25f * i, 0.25f * j, -0.5f), 1, 0});
    }
    seq.frames.push_back(f);
    seq.poses.push_back(RigidTransform::FromTranslation({0, 0, 0.6}));
    CalibrationResult input;
    input.stage = Stage::Refined;
    input.extrinsic = RigidTransform::FromTranslation({0, 0, 0.0});

    ZFixResult report;
    const auto out = run_z_correction(seq, input, fiducials_at(0.0), {}, {false, 1, 1}, nullptr, &report);
    CHECK(out.stage == Stage::ZCorrected);
    REQUIRE(out.parent);
    CHECK(out.parent->stage == Stage::Refined);
    CHECK(report.z_fix == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK(out.extrinsic.translation.z() == doctest::Approx(-0.1).epsilon(1e-6));

    const auto j = to_json(report);
    for (const char* key : {"z_fix_m", "rms_before_m", "rms_after_m", "fiducial_count", "iterations", "unmatched",
                            "matches"}) {
        CHECK(j.contains(key));
    }
}
