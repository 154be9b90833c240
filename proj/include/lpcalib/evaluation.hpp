#pragma once

#include <array>
#include <vector>

#include <nlohmann/json.hpp>

#include "lpcalib/geometry.hpp"

namespace lpcalib {

/// Components of dT = T_ref^-1 * T_est: translation in meters, Euler ZYX in degrees.
struct ExtrinsicError {
    double tx = 0.0;
    double ty = 0.0;
    double tz = 0.0;
    double roll = 0.0;
    double pitch = 0.0;
    double yaw = 0.0;

    /// Order: tx, ty, tz, roll, pitch, yaw.
    std::array<double, 6> values() const { return {tx, ty, tz, roll, pitch, yaw}; }
    double angle_deg() const;
};

/// Signed components of the error transform.
ExtrinsicError extrinsic_error(const RigidTransform& reference, const RigidTransform& estimate);

/// Absolute errors of several estimates against one reference, with per-axis
/// mean (MAE) and variance.
struct ErrorReport {
    std::vector<ExtrinsicError> per_dataset;  // absolute values
    ExtrinsicError mean;
    ExtrinsicError variance;
    /// Largest rotation angle of dT over the datasets, degrees.
    double max_angle_deg = 0.0;
};

ErrorReport make_error_report(const RigidTransform& reference, const std::vector<RigidTransform>& estimates);
ErrorReport make_error_report(const std::vector<RigidTransform>& references,
                              const std::vector<RigidTransform>& estimates);
nlohmann::json to_json(const ErrorReport& report);

}  // namespace lpcalib
