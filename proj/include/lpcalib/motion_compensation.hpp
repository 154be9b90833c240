#pragma once

#include <Eigen/Core>
#include <vector>

#include "lpcalib/data_io.hpp"
#include "lpcalib/geometry.hpp"

namespace lpcalib {

/// Frame points expressed in the LiDAR frame at the frame timestamp.
struct DeskewedFrame {
    double reference_timestamp = 0.0;
    std::vector<Eigen::Vector3f> points;
    bool deskewed = true;
};

/// Maps every point p fired at frame_timestamp + tau to
/// L(t0)^-1 * L(t0 + tau) * p, with L(t) = traj(t) * extrinsic. Throws
/// OutOfRange unless the trajectory spans the whole scan. Points fired at a
/// time whose pose equals the frame-start pose are copied unchanged.
DeskewedFrame deskew(const LidarFrame& frame, const Trajectory& traj, const RigidTransform& extrinsic);

}  // namespace lpcalib
