#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace lpcalib {

/// Curvature assigned to points whose neighborhood is too sparse to judge.
inline constexpr double kCurvatureSentinel = 1.0 / 3.0;

struct CurvatureParams {
    std::size_t k = 20;
    /// Neighbors farther than this do not count toward k.
    double search_radius = 1.5;
};

struct PointFeature {
    /// Surface variation lambda3 / (lambda1 + lambda2 + lambda3) of the k-NN scatter.
    double curvature = kCurvatureSentinel;
    /// Smallest-eigenvalue direction, oriented toward the sensor origin.
    Eigen::Vector3d normal = Eigen::Vector3d::Zero();
    /// lambda2 / lambda1; near zero when the neighborhood is a line.
    double spread = 0.0;
};

/// Features of every query_stride-th point; the others keep the sentinel.
/// Neighborhoods always come from the full cloud.
std::vector<PointFeature> compute_point_features(std::span<const Eigen::Vector3d> points,
                                                 const CurvatureParams& params, int threads = 1,
                                                 std::size_t query_stride = 1);
std::vector<double> compute_curvature(std::span<const Eigen::Vector3d> points, const CurvatureParams& params,
                                      int threads = 1);

struct FeatureParams {
    CurvatureParams curvature;
    double curvature_threshold = 0.01;
    /// Neighborhoods flatter than this in their second direction have no usable normal.
    double min_spread = 0.05;
    /// Only every query_stride-th point is evaluated.
    std::size_t query_stride = 1;
};

/// Low-curvature points of one frame.
struct FeatureCloud {
    std::vector<std::uint32_t> planar_indices;
    std::vector<double> curvature;
    std::vector<Eigen::Vector3d> normals;
};

FeatureCloud select_planar_points(std::span<const Eigen::Vector3d> points, const FeatureParams& params,
                                  int threads = 1);

struct PlaneFit {
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
    /// lambda1 >= lambda2 >= lambda3 of the covariance, in m^2.
    Eigen::Vector3d eigenvalues = Eigen::Vector3d::Zero();
};

/// PCA plane through the points. Throws DegenerateSet when fewer than three
/// points are given or the set is collinear (lambda2 < 1e-12).
PlaneFit fit_plane(std::span<const Eigen::Vector3d> points);
PlaneFit fit_plane(std::span<const Eigen::Vector3d> points, std::span<const std::uint32_t> indices);

struct PlanePatch {
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
    Eigen::Vector3d eigenvalues = Eigen::Vector3d::Zero();
    std::vector<std::uint32_t> member_indices;
    int source_frame = -1;
};

struct AdaptiveVoxelParams {
    double root_size = 2.0;
    int max_depth = 3;
    double plane_var_max = 0.0025;
    double plane_ratio_max = 0.12;
    std::size_t min_points = 10;
};

/// Recursive octree subdivision of root voxels until the contained points pass
/// the planarity test; each passing voxel yields one patch. Normals point toward
/// sensor_origin.
std::vector<PlanePatch> extract_planes_adaptive(std::span<const Eigen::Vector3d> points,
                                                const AdaptiveVoxelParams& params,
                                                const Eigen::Vector3d& sensor_origin = Eigen::Vector3d::Zero(),
                                                int source_frame = -1);

/// Debug dump: one row per patch with centroid, normal, eigenvalues and size.
void write_patches_csv(std::span<const PlanePatch> patches, const std::filesystem::path& path);

/// Flips n so that it points toward `toward` from `from`; if perpendicular, makes
/// the largest-magnitude component positive.
Eigen::Vector3d orient_normal(const Eigen::Vector3d& n, const Eigen::Vector3d& from, const Eigen::Vector3d& toward);

}  // namespace lpcalib
