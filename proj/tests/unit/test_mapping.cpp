#include <doctest.h>

#include <fstream>

#include "lpcalib/errors.hpp"
#include "lpcalib/mapping.hpp"
#include "lpcalib/synthetic_world.hpp"
#include "test_support.hpp"

using namespace lpcalib;
using lpcalib::testing::TempDir;

namespace {

FrameSequence single(const std::vector<Eigen::Vector3f>& pts, const RigidTransform& pose) {
    FrameSequence seq;
    LidarFrame f;
    for (const auto& p : pts) f.points.push_back({p, 1, 0});
    seq.frames.push_back(f);
    seq.poses.push_back(pose);
    return seq;
}

std::size_t count_lines(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) n += !line.empty();
    return n;
}

}  // namespace

TEST_CASE("identity inputs reproduce the frame") {
    const std::vector<Eigen::Vector3f> pts = {{1, 2, 3}, {-4, 5, 6}, {0.5f, 0.25f, -1}};
    const auto map = build_map(single(pts, RigidTransform::Identity()), RigidTransform::Identity());
    REQUIRE(map.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(map.points[i] == pts[i].cast<double>());
    CHECK(map.source_frame == std::vector<std::uint32_t>{0, 0, 0});
}

TEST_CASE("pose then extrinsic") {
    const auto map = build_map(single({{1, 0, 0}}, RigidTransform::FromTranslation({0, 0, 5})), RigidTransform::Identity());
    CHECK((map.points[0] - Eigen::Vector3d(1, 0, 5)).norm() == 0.0);

    const RigidTransform pose{euler_zyx_to_rotation({0, 0, std::numbers::pi / 2}), {10, 0, 0}};
    const RigidTransform ext = RigidTransform::FromTranslation({1, 0, 0});
    const auto rotated = build_map(single({{1, 0, 0}}, pose), ext);
    CHECK((rotated.points[0] - Eigen::Vector3d(10, 2, 0)).norm() < 1e-12);
    CHECK_THROWS_AS(build_map(single({{1, 0, 0}}, pose), ext, {true, 1, 1}, nullptr), ConfigError);
}

TEST_CASE("subsampling keeps every stride-th point of the concatenation") {
    FrameSequence seq = single({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}, RigidTransform::Identity());
    seq.frames.push_back(seq.frames[0]);
    seq.poses.push_back(RigidTransform::FromTranslation({0, 10, 0}));
    const auto map = build_map(seq, RigidTransform::Identity(), {false, 2, 1});
    REQUIRE(map.size() == 3);
    CHECK(map.points[1].x() == 2.0);
    CHECK(map.points[2] == Eigen::Vector3d(1, 10, 0));
    CHECK(map.source_point_count == 6);
}

TEST_CASE("export and re-import") {
    TempDir dir("map");
    const std::vector<Eigen::Vector3f> pts = {{1.123456f, 2, 3}, {4, 5, 6}, {7, 8, -9.000001f}};
    const auto map = build_map(single(pts, RigidTransform::Identity()), RigidTransform::Identity());
    export_map(map, dir / "a.xyz");
    CHECK(count_lines(dir / "a.xyz") == 3);
    const auto back = read_xyz(dir / "a.xyz");
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK((back[i] - map.points[i]).cwiseAbs().maxCoeff() <= 1e-6);

    const auto pair = build_map(single({{0.01f, 0.01f, 0.01f}, {0.05f, 0.05f, 0.05f}}, RigidTransform::Identity()),
                                RigidTransform::Identity());
    export_map(pair, dir / "b.xyz", 0.1);
    const auto centroid = read_xyz(dir / "b.xyz");
    REQUIRE(centroid.size() == 1);
    CHECK(centroid[0].x() == doctest::Approx(0.03).epsilon(1e-6));
}

TEST_CASE("de-skewed map under the true extrinsic hugs the generating planes") {
    const auto spec = testing::short_drive_spec();
    const auto ds = simulate_dataset(default_scene(), spec);
    const auto seq = associate_frames_with_poses(ds.frames, ds.trajectory);
    REQUIRE(seq.dropped == 0);
    const auto map = build_map(seq, spec.extrinsic, {true, 7, 1}, &ds.trajectory);
    std::vector<std::uint32_t> labels;
    for (const auto& l : ds.labels) labels.insert(labels.end(), l.begin(), l.end());
    REQUIRE(map.source_point_count == labels.size());
    std::size_t inside = 0;
    for (std::size_t i = 0; i < map.size(); ++i) {
        const auto& plane = ds.scene.plane(labels[i * map.subsample_stride]);
        const double d = std::abs(plane.normal().dot(map.points[i] - plane.corner));
        inside += d <= 3.0 * spec.noise.range_sigma;
    }
    CHECK(static_cast<double>(inside) >= 0.99 * static_cast<double>(map.size()));
}
