#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lpcalib/data_io.hpp"
#include "lpcalib/geometry.hpp"
#include "lpcalib/motion_compensation.hpp"

namespace lpcalib {

/// Exact set of occupied leaf cells of an octree over a cubic root box. Cells
/// are stored as sorted integer keys at the deepest level.
class OccupancyOctree {
public:
    OccupancyOctree(std::span<const Eigen::Vector3d> points, const Eigen::Vector3d& root_min, double root_size,
                    int max_depth);
    /// Root cube chosen as the bounding cube of the points.
    static OccupancyOctree FromPoints(std::span<const Eigen::Vector3d> points, int max_depth);

    double leaf_size() const { return root_size_ / static_cast<double>(1u << max_depth_); }
    double root_size() const { return root_size_; }
    const Eigen::Vector3d& root_min() const { return root_min_; }
    int max_depth() const { return max_depth_; }

    std::size_t occupied_count() const { return keys_.size(); }
    /// Occupied cells when the tree is cut at `depth` (0 = root only).
    std::size_t occupied_count_at_depth(int depth) const;
    bool occupied(const Eigen::Vector3d& p) const;
    std::span<const std::uint64_t> occupied_keys() const { return keys_; }

private:
    std::uint64_t key_of(const Eigen::Vector3d& p) const;

    Eigen::Vector3d root_min_;
    double root_size_;
    int max_depth_;
    std::vector<std::uint64_t> keys_;
};

/// Counts distinct cells floor((p - origin) * (1 / leaf_size)) without storing a
/// tree. The reciprocal is computed once, as in every occupancy cost.
/// Reuses its table between calls.
class CellCounter {
public:
    std::size_t count(std::span<const Eigen::Vector3d> points, double leaf_size,
                      const Eigen::Vector3d& origin = Eigen::Vector3d::Zero());

    /// Empties the table, sized for about `expected_cells` cells; it grows as needed.
    void reset(std::size_t expected_cells);
    /// Inserts an integer cell; returns true when it was not present.
    bool insert(std::int64_t x, std::int64_t y, std::int64_t z);
    std::size_t size() const { return size_; }

private:
    void grow();

    std::vector<std::uint64_t> table_;
    std::size_t mask_ = 0;
    std::size_t size_ = 0;
};

/// Number of distinct leaf cells containing at least one point.
std::size_t count_occupied(std::span<const Eigen::Vector3d> points, double leaf_size,
                           const Eigen::Vector3d& origin = Eigen::Vector3d::Zero());

/// Occupancy of the map assembled in the frame of the first pose:
/// pose_0^-1 * pose_i * extrinsic * p over all de-skewed points.
std::size_t occupancy_cost(std::span<const DeskewedFrame> frames, std::span<const RigidTransform> poses,
                           const RigidTransform& extrinsic, double leaf_size);

struct SearchLevel {
    double leaf_size = 0.1;
    double rotation_range = 0.0;     // rad, per axis, +-
    double rotation_step = 0.0;      // rad
    double translation_range = 0.0;  // m, per axis, +-
    double translation_step = 0.0;   // m
    int sweeps = 2;
};

struct SearchSpec {
    std::vector<SearchLevel> levels;

    /// Leaf 0.4 -> 0.2 -> 0.1 m; rotation +-0.5 deg in 0.05 deg steps and
    /// translation +-0.05 m in 5 mm steps at the first level, ranges and steps
    /// halved at each following level; two sweeps per level.
    static SearchSpec Default();
    /// Throws ConfigError on non-positive steps, ranges below their step (other
    /// than zero ranges) or non-positive leaf sizes.
    void validate() const;
};

struct RefineParams {
    SearchSpec search = SearchSpec::Default();
    std::size_t max_points = 2'000'000;
    std::uint64_t seed = 0;
    double deskew_rotation_threshold = 0.1 * 3.14159265358979323846 / 180.0;
    double deskew_translation_threshold = 0.01;
    int threads = 1;
};

struct CandidateRecord {
    int level = 0;
    int sweep = 0;
    int axis = 0;  // rx, ry, rz, tx, ty, tz
    double offset = 0.0;
    std::size_t cost = 0;
    bool accepted = false;
};

struct RefineReport {
    std::vector<CandidateRecord> candidates;
    std::size_t rough_cost = 0;
    std::size_t refined_cost = 0;
    std::size_t evaluations = 0;
    std::size_t deskew_updates = 0;
    std::size_t map_points = 0;
    std::size_t subsample_stride = 1;
    /// False when no candidate beat the rough estimate.
    bool improved = false;
};

/// Applies a single-axis perturbation: axes 0-2 rotate about the LiDAR axes,
/// axes 3-5 translate in the pose-sensor frame.
RigidTransform perturb_axis(const RigidTransform& t, int axis, double offset);

/// Coordinate-descent grid search around the rough extrinsic minimizing the
/// occupancy of the de-skewed map. Never returns an extrinsic with higher cost
/// than the rough one; ties keep the incumbent.
CalibrationResult refine(const FrameSequence& seq, const Trajectory& traj, const CalibrationResult& rough,
                         const RefineParams& params, RefineReport* report = nullptr);

void write_candidates_csv(const RefineReport& report, const std::filesystem::path& path);

}  // namespace lpcalib
