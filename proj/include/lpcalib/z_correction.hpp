#pragma once

#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "lpcalib/data_io.hpp"
#include "lpcalib/mapping.hpp"

namespace lpcalib {

struct ZFixParams {
    /// Map points farther than this horizontally from a fiducial are not candidates.
    double horizontal_radius = 0.5;
    /// Candidates must satisfy |z_map - (z_fiducial - z_fix)| < z_gate.
    double z_gate = 0.5;
    std::size_t max_iterations = 5;
    double tolerance = 1e-4;
    int threads = 1;
};

struct FiducialMatch {
    std::size_t fiducial = 0;
    bool matched = false;
    Eigen::Vector3d map_point = Eigen::Vector3d::Zero();
    /// 3D distance between the fiducial and its match after the shift.
    double distance = 0.0;
};

struct ZFixResult {
    /// Shift added to the extrinsic's t_z: mean of z_fiducial - z_map.
    double z_fix = 0.0;
    double rms_before = 0.0;
    double rms_after = 0.0;
    std::size_t fiducial_count = 0;
    std::size_t iterations = 0;
    std::vector<FiducialMatch> matches;
    std::vector<std::size_t> unmatched;
};

/// Estimates the vertical offset between surveyed fiducials and the map. Map
/// points are taken as given; the shift applies to the whole map, so it adds
/// directly to the extrinsic's t_z for a level vehicle. Unmatched fiducials are
/// excluded; throws StageFailure("zfix") when none match and TooFewFiducials
/// below three.
ZFixResult correct_z(const GlobalMap& map, const std::vector<FiducialPoint>& fiducials, const ZFixParams& params = {});

/// Extrinsic with t_z shifted by z_fix, in the body frame.
RigidTransform apply_z_fix(const RigidTransform& extrinsic, double z_fix);

/// Map-building wrapper returning a ZCorrected result whose parent is `input`.
CalibrationResult run_z_correction(const FrameSequence& seq, const CalibrationResult& input,
                                   const std::vector<FiducialPoint>& fiducials, const ZFixParams& params,
                                   const MapOptions& map_options, const Trajectory* trajectory,
                                   ZFixResult* report = nullptr);

nlohmann::json to_json(const ZFixResult& result);

}  // namespace lpcalib
