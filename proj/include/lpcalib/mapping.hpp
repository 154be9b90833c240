#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <vector>

#include "lpcalib/data_io.hpp"
#include "lpcalib/geometry.hpp"

namespace lpcalib {

/// World-frame point cloud assembled from posed frames.
struct GlobalMap {
    std::vector<Eigen::Vector3d> points;
    std::vector<std::uint32_t> source_frame;
    Eigen::Vector3d bounds_min = Eigen::Vector3d::Zero();
    Eigen::Vector3d bounds_max = Eigen::Vector3d::Zero();
    /// Every stride-th point of the concatenated frames was kept.
    std::size_t subsample_stride = 1;
    std::size_t source_point_count = 0;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

struct MapOptions {
    bool deskew = false;
    std::size_t subsample_stride = 1;
    int threads = 1;
};

/// LiDAR pose of a frame: the pose-sensor pose followed by the body-frame mount.
inline RigidTransform lidar_pose(const RigidTransform& pose_sensor, const RigidTransform& extrinsic) {
    return compose(pose_sensor, extrinsic);
}

/// Maps every point p of frame i to pose_i * extrinsic * p. With deskew set, the
/// trajectory is used to remove motion distortion first (required then).
GlobalMap build_map(const FrameSequence& seq, const RigidTransform& extrinsic, const MapOptions& options = {},
                    const Trajectory* trajectory = nullptr);

/// Centroid of the points in each occupied voxel, in first-seen voxel order.
std::vector<Eigen::Vector3d> voxel_downsample(std::span<const Eigen::Vector3d> points, double voxel_size);

/// ASCII XYZ, one point per line; voxel_size > 0 downsamples first. With
/// with_frame_column each line carries the source frame index as a fourth column
/// (only without downsampling).
void export_map(const GlobalMap& map, const std::filesystem::path& path, double voxel_size = 0.0,
                bool with_frame_column = false);
std::vector<Eigen::Vector3d> read_xyz(const std::filesystem::path& path);

}  // namespace lpcalib
