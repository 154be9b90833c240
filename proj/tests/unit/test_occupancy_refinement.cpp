#include <doctest.h>

#include <random>
#include <set>
#include <tuple>
#include <unordered_set>

#include "lpcalib/errors.hpp"
#include "lpcalib/occupancy_refinement.hpp"
#include "lpcalib/synthetic_world.hpp"
#include "test_support.hpp"

using namespace lpcalib;
using lpcalib::testing::kDeg;

namespace {

std::size_t brute_count(const std::vector<Eigen::Vector3d>& pts, double leaf) {
    std::set<std::tuple<long long, long long, long long>> cells;
    const double inv = 1.0 / leaf;
    for (const auto& p : pts) {
        cells.emplace(static_cast<long long>(std::floor(p.x() * inv)), static_cast<long long>(std::floor(p.y() * inv)),
                      static_cast<long long>(std::floor(p.z() * inv)));
    }
    return cells.size();
}

}  // namespace

TEST_CASE("cube corners and overlaid clouds") {
    std::vector<Eigen::Vector3d> corners;
    for (int i = 0; i < 8; ++i) corners.push_back({0.25 + (i & 1), 0.25 + ((i >> 1) & 1), 0.25 + ((i >> 2) & 1)});
    CHECK(count_occupied(corners, 0.5) == 8);
    auto doubled = corners;
    doubled.insert(doubled.end(), corners.begin(), corners.end());
    CHECK(count_occupied(doubled, 0.5) == 8);
    CHECK(count_occupied(std::vector<Eigen::Vector3d>{}, 0.5) == 0);
    CHECK_THROWS_AS(count_occupied(corners, 0.0), ConfigError);
}

TEST_CASE("random clouds match an ordered-set count") {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(-20, 20);
    std::vector<Eigen::Vector3d> pts(10000);
    for (auto& p : pts) p = {u(rng), u(rng), u(rng) * 0.1};
    CHECK(count_occupied(pts, 0.2) == brute_count(pts, 0.2));
    // Negative coordinates straddling zero exercise the floor.
    std::vector<Eigen::Vector3d> near_zero = {{-1e-12, 0, 0}, {0, 0, 0}, {-0.2, 0, 0}, {-0.2000001, 0, 0}};
    CHECK(count_occupied(near_zero, 0.2) == brute_count(near_zero, 0.2));
}

TEST_CASE("CellCounter grows past its initial capacity") {
    CellCounter c;
    c.reset(1);
    std::size_t fresh = 0;
    for (int i = 0; i < 5000; ++i) fresh += c.insert(i, -i, i % 7);
    for (int i = 0; i < 5000; ++i) fresh += c.insert(i, -i, i % 7);
    CHECK(fresh == 5000);
    CHECK(c.size() == 5000);
}

TEST_CASE("octree occupancy") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 8);
    std::vector<Eigen::Vector3d> pts(2000);
    for (auto& p : pts) p = {u(rng), u(rng), u(rng)};
    const OccupancyOctree tree(pts, Eigen::Vector3d::Zero(), 8.0, 4);
    CHECK(tree.leaf_size() == 0.5);
    CHECK(tree.occupied_count() == count_occupied(pts, 0.5));
    CHECK(tree.occupied_count_at_depth(0) == 1);
    CHECK(tree.occupied_count_at_depth(1) == count_occupied(pts, 4.0));
    CHECK(tree.occupied(pts[0]));
}

TEST_CASE("occupancy cost") {
    CHECK(occupancy_cost({}, {}, RigidTransform::Identity(), 0.1) == 0);

    std::mt19937_64 rng(2);
    std::uniform_real_distribution<float> u(-10, 10);
    DeskewedFrame f;
    for (int i = 0; i < 3000; ++i) f.points.push_back({u(rng), u(rng), u(rng)});
    const std::vector<DeskewedFrame> frames = {f};
    const RigidTransform ext{euler_zyx_to_rotation({0.1, 0.2, 0.3}), {1, 2, 3}};
    // One frame: the map lives in its own pose frame, so the pose cannot matter.
    const std::size_t a = occupancy_cost(frames, std::vector<RigidTransform>{RigidTransform::Identity()}, ext, 0.3);
    const std::size_t b = occupancy_cost(frames, std::vector<RigidTransform>{testing::random_transform(rng)}, ext, 0.3);
    CHECK(a == b);
}

TEST_CASE("true extrinsic gives a crisper map than a 0.5 degree yaw error") {
    const auto spec = testing::short_drive_spec();
    const auto ds = simulate_dataset(default_scene(), spec);
    const auto seq = testing::sequence_slice(ds, 0, 150);
    std::vector<DeskewedFrame> frames;
    for (const auto& fr : seq.frames) frames.push_back(deskew(fr, ds.trajectory, spec.extrinsic));
    const auto truth = occupancy_cost(frames, seq.poses, spec.extrinsic, 0.1);
    const auto off = occupancy_cost(frames, seq.poses, perturb_axis(spec.extrinsic, 2, 0.5 * kDeg), 0.1);
    CHECK(truth < off);
}

TEST_CASE("search specification") {
    const auto spec = SearchSpec::Default();
    REQUIRE(spec.levels.size() == 3);
    CHECK(spec.levels[0].leaf_size == 0.4);
    CHECK(spec.levels[2].leaf_size == 0.1);
    CHECK(spec.levels[1].translation_step == doctest::Approx(0.0025));
    SearchSpec bad = spec;
    bad.levels[0].rotation_step = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("perturb_axis") {
    const RigidTransform t{euler_zyx_to_rotation({0.1, 0.2, 0.3}), {1, 2, 3}};
    const auto r = perturb_axis(t, 2, 0.01);
    CHECK(testing::rotation_distance_deg(r.rotation, t.rotation * so3_exp({0, 0, 0.01})) < 1e-9);
    CHECK(r.translation == t.translation);
    const auto s = perturb_axis(t, 4, 0.05);
    CHECK(s.rotation == t.rotation);
    CHECK(s.translation.y() == doctest::Approx(2.05));
}

TEST_CASE("refinement with zero-width ranges returns the rough estimate") {
    const auto spec = testing::short_drive_spec();
    const auto ds = simulate_dataset(default_scene(), spec);
    const auto seq = testing::sequence_slice(ds, 0, 40);
    CalibrationResult rough;
    rough.extrinsic = perturb_axis(spec.extrinsic, 2, 0.2 * kDeg);
    RefineParams params;
    params.max_points = 100000;
    for (auto& l : params.search.levels) l.rotation_range = l.translation_range = 0.0;
    RefineReport report;
    const auto out = refine(seq, ds.trajectory, rough, params, &report);
    CHECK(out.extrinsic == rough.extrinsic);
    CHECK_FALSE(report.improved);
    CHECK(out.stage == Stage::Refined);
    REQUIRE(out.parent);
}

TEST_CASE("refinement never ends above the rough cost and moves toward the truth") {
    const auto spec = testing::short_drive_spec();
    const auto ds = simulate_dataset(default_scene(), spec);
    const auto seq = testing::sequence_slice(ds, 0, 120);
    CalibrationResult rough;
    rough.extrinsic = perturb_axis(perturb_axis(spec.extrinsic, 2, 0.3 * kDeg), 3, 0.02);
    RefineParams params;
    params.max_points = 300000;
    RefineReport report;
    const auto out = refine(seq, ds.trajectory, rough, params, &report);
    CHECK(report.refined_cost <= report.rough_cost);
    const double before = testing::rotation_distance_deg(rough.extrinsic.rotation, spec.extrinsic.rotation);
    const double after = testing::rotation_distance_deg(out.extrinsic.rotation, spec.extrinsic.rotation);
    CHECK(after < before);
    CHECK(std::abs(out.extrinsic.translation.x() - spec.extrinsic.translation.x()) < 0.02);
    bool any_accepted = false;
    for (const auto& c : report.candidates) any_accepted |= c.accepted;
    CHECK(any_accepted);
}
