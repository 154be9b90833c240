#include "lpcalib/motion_compensation.hpp"

#include "lpcalib/errors.hpp"

namespace lpcalib {

DeskewedFrame deskew(const LidarFrame& frame, const Trajectory& traj, const RigidTransform& extrinsic) {
    const double t0 = frame.frame_timestamp;
    const double t1 = t0 + frame.max_relative_time();
    if (!traj.covers(t0) || !traj.covers(t1)) {
        throw OutOfRange("trajectory does not span scan [" + std::to_string(t0) + ", " + std::to_string(t1) + "]");
    }
    const RigidTransform ref_pose = traj.interpolate(t0);
    const RigidTransform ref_inv = invert(compose(ref_pose, extrinsic));

    DeskewedFrame out;
    out.reference_timestamp = t0;
    out.points.reserve(frame.points.size());

    // Points come in firing order, so consecutive points usually share a firing time.
    float cached_time = -1.0f;
    bool identity = true;
    Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
    Eigen::Vector3d trans = Eigen::Vector3d::Zero();
    for (const auto& p : frame.points) {
        if (p.relative_time != cached_time) {
            cached_time = p.relative_time;
            const RigidTransform pose = traj.interpolate(t0 + static_cast<double>(p.relative_time));
            identity = pose == ref_pose;
            if (!identity) {
                const RigidTransform rel = compose(ref_inv, compose(pose, extrinsic));
                rot = rel.rotation;
                trans = rel.translation;
            }
        }
        if (identity) {
            out.points.push_back(p.position);
        } else {
            out.points.push_back((rot * p.position.cast<double>() + trans).cast<float>());
        }
    }
    return out;
}

}  // namespace lpcalib
