#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <span>
#include <vector>

namespace lpcalib {

/// Rigid body transform {R, t}. Applying it to a point computes R * p + t.
struct RigidTransform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    RigidTransform() = default;
    RigidTransform(const Eigen::Matrix3d& r, const Eigen::Vector3d& t) : rotation(r), translation(t) {}

    static RigidTransform Identity() { return {}; }
    static RigidTransform FromTranslation(const Eigen::Vector3d& t) {
        return {Eigen::Matrix3d::Identity(), t};
    }
    /// Row-major 4x4 homogeneous matrix; the rotation block is re-orthonormalized.
    static RigidTransform FromMatrix(const Eigen::Matrix4d& m);
    static RigidTransform FromQuaternion(const Eigen::Quaterniond& q, const Eigen::Vector3d& t);

    Eigen::Matrix4d matrix() const;
    Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(rotation); }

    Eigen::Vector3d operator*(const Eigen::Vector3d& p) const { return rotation * p + translation; }
    bool operator==(const RigidTransform& o) const {
        return rotation == o.rotation && translation == o.translation;
    }
};

/// Result applies b first, then a.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& t);

inline RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) { return compose(a, b); }

/// Largest deviation of R^T R from identity and of det(R) from 1.
double orthonormality_error(const Eigen::Matrix3d& r);
/// Nearest rotation matrix (polar decomposition).
Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& r);

struct EulerZYX {
    double roll = 0.0;
    double pitch = 0.0;
    double yaw = 0.0;
};

struct EulerDecomposition {
    EulerZYX angles;
    bool gimbal_lock = false;
};

/// R = Rz(yaw) * Ry(pitch) * Rx(roll).
Eigen::Matrix3d euler_zyx_to_rotation(const EulerZYX& e);
/// Inverse of euler_zyx_to_rotation. Within 1e-6 of |pitch| = pi/2 the roll
/// is fixed to zero and the yaw absorbs the free angle.
EulerDecomposition rotation_to_euler_zyx(const Eigen::Matrix3d& r);

/// Element of se(3): axis-angle rotation and translation part.
struct TangentVector {
    Eigen::Vector3d rotation = Eigen::Vector3d::Zero();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    Eigen::Matrix<double, 6, 1> stacked() const;
    static TangentVector FromStacked(const Eigen::Matrix<double, 6, 1>& v);
};

Eigen::Matrix3d skew(const Eigen::Vector3d& v);
Eigen::Matrix3d so3_exp(const Eigen::Vector3d& w);
/// Throws NearPiRotation when the angle is within 1e-6 of pi.
Eigen::Vector3d so3_log(const Eigen::Matrix3d& r);

RigidTransform exp(const TangentVector& v);
TangentVector log(const RigidTransform& t);

/// Rotation angle of R in radians, in [0, pi].
double rotation_angle(const Eigen::Matrix3d& r);

struct TrajectorySample {
    double timestamp = 0.0;
    RigidTransform pose;
};

/// Timestamped sensor-in-world poses with strictly increasing timestamps.
class Trajectory {
public:
    Trajectory() = default;
    /// Throws NonMonotonicTimestamps unless timestamps strictly increase.
    explicit Trajectory(std::vector<TrajectorySample> samples);

    std::span<const TrajectorySample> samples() const { return samples_; }
    std::size_t size() const { return samples_.size(); }
    bool empty() const { return samples_.empty(); }
    double start_time() const { return samples_.front().timestamp; }
    double end_time() const { return samples_.back().timestamp; }
    bool covers(double t) const { return samples_.size() >= 2 && t >= start_time() && t <= end_time(); }

    /// Linear translation and geodesic rotation between the bracketing
    /// samples. Sample timestamps return the stored pose unchanged.
    /// Throws OutOfRange outside [start_time, end_time].
    RigidTransform interpolate(double t) const;

private:
    std::vector<TrajectorySample> samples_;
};

inline RigidTransform interpolate_pose(const Trajectory& traj, double query) { return traj.interpolate(query); }

}  // namespace lpcalib
