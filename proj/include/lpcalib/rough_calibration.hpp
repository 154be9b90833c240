#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lpcalib/data_io.hpp"
#include "lpcalib/geometry.hpp"
#include "lpcalib/kdtree.hpp"
#include "lpcalib/plane_features.hpp"

namespace lpcalib {

struct RoughParams {
    std::size_t window_size = 40;
    std::size_t stride = 20;
    /// Point-to-plane gate until the first window converges, then the tighter one.
    double gate_initial = 1.0;
    double gate_converged = 0.3;
    double huber_delta = 0.1;
    /// Weak prior holding t_z at the stage's initial value.
    double tz_prior_weight = 1e-2;
    std::size_t max_iterations = 50;
    double step_tolerance = 1e-6;
    std::size_t min_correspondences = 100;
    double max_normal_angle_deg = 30.0;
    /// Patches whose centroid is farther than this from the point are not considered.
    double max_centroid_distance = 2.0;
    std::size_t candidate_patches = 5;
    /// Frames are voxel-downsampled before curvature estimation.
    double frame_voxel_size = 0.2;
    /// Planar points kept per frame, by even index stride; 0 keeps all.
    std::size_t max_points_per_frame = 500;
    /// Patches whose second eigenvalue is below this (m^2) are line-like, e.g. a
    /// single scan ring, and are dropped.
    double min_patch_lambda2 = 0.004;
    double max_condition_number = 1e12;
    /// De-skew frames with the window's starting estimate. Frames are
    /// re-de-skewed once the estimate moves past either threshold.
    bool deskew = true;
    double deskew_rotation_threshold_deg = 0.1;
    double deskew_translation_threshold = 0.01;
    FeatureParams features;
    AdaptiveVoxelParams patches;
    int threads = 1;
};

/// x_I1 = T_I1^-1 * T_In * T * x_Ln: a point of LiDAR frame n expressed in the
/// pose-sensor frame of the window's first frame.
Eigen::Vector3d project_to_anchor(const Eigen::Vector3d& x_ln, const RigidTransform& t_i1, const RigidTransform& t_in,
                                  const RigidTransform& extrinsic);

/// Planar points of one frame in its LiDAR frame, with local normals.
struct FeatureFrame {
    RigidTransform pose;
    std::vector<Eigen::Vector3d> points;
    std::vector<Eigen::Vector3d> normals;
};

FeatureFrame make_feature_frame(const LidarFrame& frame, const RigidTransform& pose, const RoughParams& params);

struct Correspondence {
    Eigen::Vector3d point = Eigen::Vector3d::Zero();  // x_Ln, LiDAR frame n
    std::size_t frame = 0;                            // index into WindowProblem::frames
    std::size_t patch = 0;                            // index into WindowProblem::patches
};

/// One sliding window: anchor pose T_I1, the later frames and the plane patches
/// of the anchor scan. Patches are stored in the anchor LiDAR frame; in the
/// anchor pose-sensor frame they are T * patch for the current extrinsic T.
class WindowProblem {
public:
    WindowProblem(RigidTransform anchor_pose, std::vector<PlanePatch> patches, std::vector<FeatureFrame> frames);

    const RigidTransform& anchor_pose() const { return anchor_pose_; }
    const std::vector<PlanePatch>& patches() const { return patches_; }
    const std::vector<FeatureFrame>& frames() const { return frames_; }
    /// T_I1^-1 * T_In for frame n.
    const RigidTransform& relative_pose(std::size_t n) const { return relative_[n]; }
    const KdTree& patch_index() const { return index_; }
    std::size_t point_count() const;

private:
    RigidTransform anchor_pose_;
    std::vector<PlanePatch> patches_;
    std::vector<FeatureFrame> frames_;
    std::vector<RigidTransform> relative_;
    KdTree index_;
};

WindowProblem make_window(const FeatureFrame& anchor_features, const LidarFrame& anchor_scan,
                          std::vector<FeatureFrame> frames, const RoughParams& params);

/// Matches every planar point to the nearest patch centroid whose normal agrees
/// within max_normal_angle_deg and whose plane lies within gate. Throws
/// InsufficientCorrespondences below min_correspondences.
std::vector<Correspondence> associate(const WindowProblem& problem, const RigidTransform& extrinsic, double gate,
                                      const RoughParams& params);

/// Signed distance N^T (x_I1(T) - X) with N, X the patch mapped by T.
double point_to_plane_residual(const WindowProblem& problem, const Correspondence& c, const RigidTransform& extrinsic);
/// Derivative of the residual with respect to xi for T * exp(xi), xi = (rotation, translation).
Eigen::Matrix<double, 1, 6> point_to_plane_jacobian(const WindowProblem& problem, const Correspondence& c,
                                                    const RigidTransform& extrinsic);

struct SolveReport {
    std::size_t iterations = 0;
    double initial_cost = 0.0;
    double final_cost = 0.0;
    bool converged = false;
    std::size_t correspondences = 0;
    double condition_number = 0.0;
    std::vector<RigidTransform> trace;
    std::vector<double> cost_trace;
};

/// Robust cost as a function of the extrinsic alone: Huber loss of matched
/// residuals, the loss at the gate for unmatched points, plus the t_z prior.
double window_cost(const WindowProblem& problem, const RigidTransform& extrinsic, double gate, double tz_center,
                   const RoughParams& params, std::vector<Correspondence>* matches = nullptr);

/// Levenberg-Marquardt on right perturbations of the extrinsic with
/// re-association at every outer iteration. Only cost-decreasing steps are
/// accepted. Throws SingularHessian for unobservable geometry.
/// The t_z prior is centered on tz_center, or on the initial t_z when it is NaN.
std::pair<RigidTransform, SolveReport> solve_window(const WindowProblem& problem, const RigidTransform& initial,
                                                    double gate, const RoughParams& params,
                                                    double tz_center = std::numeric_limits<double>::quiet_NaN());

struct WindowRecord {
    std::size_t window = 0;
    std::size_t first_frame = 0;
    double timestamp = 0.0;
    RigidTransform estimate;
    bool solved = false;
    std::string error;
    SolveReport report;
};

struct RoughReport {
    std::vector<WindowRecord> windows;
    std::size_t failed_windows = 0;
    std::size_t deskew_updates = 0;
};

/// Slides the window over the sequence with warm starts; the last solved
/// window's estimate is the result. Throws StageFailure if every window fails.
/// The trajectory is required when params.deskew is set.
CalibrationResult run_rough(const FrameSequence& seq, const Trajectory* trajectory, const RigidTransform& initial,
                            const RoughParams& params, RoughReport* report = nullptr);

/// One row per window: the estimate, or its error against `reference` when given
/// (Euler ZYX in degrees, translation in meters).
void write_convergence_trace_csv(const RoughReport& report, const std::optional<RigidTransform>& reference,
                                 const std::filesystem::path& path);

}  // namespace lpcalib
