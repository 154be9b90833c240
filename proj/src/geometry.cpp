#include "lpcalib/geometry.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "lpcalib/errors.hpp"

namespace lpcalib {

namespace {

constexpr double kOrthonormalTolerance = 1e-9;
constexpr double kSmallAngle = 1e-8;
constexpr double kSeriesAngle = 1e-3;
constexpr double kNearPi = 1e-6;

Eigen::Vector3d vee(const Eigen::Matrix3d& m) { return {m(2, 1), m(0, 2), m(1, 0)}; }

}  // namespace

RigidTransform RigidTransform::FromMatrix(const Eigen::Matrix4d& m) {
    return {orthonormalize(m.topLeftCorner<3, 3>()), m.topRightCorner<3, 1>()};
}

RigidTransform RigidTransform::FromQuaternion(const Eigen::Quaterniond& q, const Eigen::Vector3d& t) {
    return {q.normalized().toRotationMatrix(), t};
}

Eigen::Matrix4d RigidTransform::matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
}

double orthonormality_error(const Eigen::Matrix3d& r) {
    const double gram = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    return std::max(gram, std::abs(r.determinant() - 1.0));
}

Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& r) {
    if (orthonormality_error(r) <= kOrthonormalTolerance) return r;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d u = svd.matrixU();
    if ((u * svd.matrixV().transpose()).determinant() < 0) u.col(2) *= -1.0;
    return u * svd.matrixV().transpose();
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
    RigidTransform out(a.rotation * b.rotation, a.rotation * b.translation + a.translation);
    out.rotation = orthonormalize(out.rotation);
    return out;
}

RigidTransform invert(const RigidTransform& t) {
    const Eigen::Matrix3d rt = t.rotation.transpose();
    return {rt, -(rt * t.translation)};
}

Eigen::Matrix3d euler_zyx_to_rotation(const EulerZYX& e) {
    return (Eigen::AngleAxisd(e.yaw, Eigen::Vector3d::UnitZ()) *
            Eigen::AngleAxisd(e.pitch, Eigen::Vector3d::UnitY()) *
            Eigen::AngleAxisd(e.roll, Eigen::Vector3d::UnitX()))
        .toRotationMatrix();
}

EulerDecomposition rotation_to_euler_zyx(const Eigen::Matrix3d& r) {
    EulerDecomposition out;
    const double cos_pitch = std::hypot(r(0, 0), r(1, 0));
    out.angles.pitch = std::atan2(-r(2, 0), cos_pitch);
    if (cos_pitch < std::sin(kNearPi)) {
        out.gimbal_lock = true;
        out.angles.roll = 0.0;
        out.angles.yaw = std::atan2(-r(0, 1), r(1, 1));
        return out;
    }
    out.angles.roll = std::atan2(r(2, 1), r(2, 2));
    out.angles.yaw = std::atan2(r(1, 0), r(0, 0));
    return out;
}

Eigen::Matrix<double, 6, 1> TangentVector::stacked() const {
    Eigen::Matrix<double, 6, 1> v;
    v << rotation, translation;
    return v;
}

TangentVector TangentVector::FromStacked(const Eigen::Matrix<double, 6, 1>& v) {
    return {v.head<3>(), v.tail<3>()};
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
    Eigen::Matrix3d m;
    m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return m;
}

Eigen::Matrix3d so3_exp(const Eigen::Vector3d& w) {
    const double theta = w.norm();
    const Eigen::Matrix3d k = skew(w);
    if (theta < kSmallAngle) return Eigen::Matrix3d::Identity() + k + 0.5 * k * k;
    const double half = std::sin(0.5 * theta);
    return Eigen::Matrix3d::Identity() + (std::sin(theta) / theta) * k +
           (2.0 * half * half / (theta * theta)) * k * k;
}

double rotation_angle(const Eigen::Matrix3d& r) {
    const double s = 0.5 * vee(r - r.transpose()).norm();
    const double c = 0.5 * (r.trace() - 1.0);
    return std::atan2(s, c);
}

Eigen::Vector3d so3_log(const Eigen::Matrix3d& r) {
    const Eigen::Vector3d v = vee(r - r.transpose());
    const double s = 0.5 * v.norm();
    const double c = 0.5 * (r.trace() - 1.0);
    const double theta = std::atan2(s, c);
    if (theta >= std::numbers::pi - kNearPi) {
        throw NearPiRotation("rotation angle " + std::to_string(theta) + " too close to pi for log");
    }
    if (theta < kSmallAngle) return 0.5 * v;
    return theta * v.normalized();
}

RigidTransform exp(const TangentVector& v) {
    const double theta = v.rotation.norm();
    const Eigen::Matrix3d k = skew(v.rotation);
    Eigen::Matrix3d left;
    if (theta < kSeriesAngle) {
        const double t2 = theta * theta;
        left = Eigen::Matrix3d::Identity() + (0.5 - t2 / 24.0) * k + (1.0 / 6.0 - t2 / 120.0) * k * k;
    } else {
        const double half = std::sin(0.5 * theta);
        left = Eigen::Matrix3d::Identity() + (2.0 * half * half / (theta * theta)) * k +
               ((theta - std::sin(theta)) / (theta * theta * theta)) * k * k;
    }
    return {so3_exp(v.rotation), left * v.translation};
}

TangentVector log(const RigidTransform& t) {
    TangentVector out;
    out.rotation = so3_log(t.rotation);
    const double theta = out.rotation.norm();
    const Eigen::Matrix3d k = skew(out.rotation);
    double coeff;
    if (theta < kSeriesAngle) {
        coeff = 1.0 / 12.0 + theta * theta / 720.0;
    } else {
        coeff = (1.0 - theta * std::sin(theta) / (2.0 * (1.0 - std::cos(theta)))) / (theta * theta);
    }
    const Eigen::Matrix3d left_inv = Eigen::Matrix3d::Identity() - 0.5 * k + coeff * k * k;
    out.translation = left_inv * t.translation;
    return out;
}

Trajectory::Trajectory(std::vector<TrajectorySample> samples) : samples_(std::move(samples)) {
    for (std::size_t i = 1; i < samples_.size(); ++i) {
        if (!(samples_[i].timestamp > samples_[i - 1].timestamp)) {
            throw NonMonotonicTimestamps("trajectory timestamps not strictly increasing at sample " +
                                         std::to_string(i));
        }
    }
}

RigidTransform Trajectory::interpolate(double t) const {
    if (!covers(t)) {
        throw OutOfRange("query time " + std::to_string(t) + " outside trajectory span");
    }
    auto upper = std::upper_bound(samples_.begin(), samples_.end(), t,
                                  [](double q, const TrajectorySample& s) { return q < s.timestamp; });
    // upper_bound lands one past an exact match.
    const auto& prev = *(upper - 1);
    if (prev.timestamp == t || upper == samples_.end()) return prev.pose;
    const auto& next = *upper;
    const double s = (t - prev.timestamp) / (next.timestamp - prev.timestamp);

    RigidTransform out;
    out.translation = prev.pose.translation + s * (next.pose.translation - prev.pose.translation);
    if (prev.pose.rotation == next.pose.rotation) {
        out.rotation = prev.pose.rotation;
    } else {
        const Eigen::Vector3d delta = so3_log(prev.pose.rotation.transpose() * next.pose.rotation);
        out.rotation = orthonormalize(prev.pose.rotation * so3_exp(s * delta));
    }
    return out;
}

}  // namespace lpcalib
