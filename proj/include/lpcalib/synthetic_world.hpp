#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lpcalib/data_io.hpp"
#include "lpcalib/geometry.hpp"

namespace lpcalib {

/// Bounded parallelogram corner + a*edge_u + b*edge_v, a, b in [0, 1].
struct Rectangle {
    std::uint32_t id = 0;
    Eigen::Vector3d corner = Eigen::Vector3d::Zero();
    Eigen::Vector3d edge_u = Eigen::Vector3d::UnitX();
    Eigen::Vector3d edge_v = Eigen::Vector3d::UnitY();

    Eigen::Vector3d normal() const { return edge_u.cross(edge_v).normalized(); }
};

struct SceneModel {
    std::vector<Rectangle> planes;
    std::uint32_t ground_id = 0;
    std::vector<FiducialPoint> fiducials;

    /// Throws ConfigError for degenerate rectangles, duplicate ids or a
    /// non-horizontal ground.
    void validate() const;
    const Rectangle& plane(std::uint32_t id) const;
};

/// 80 x 80 m ground, four axis-aligned and two oblique 10 m facades around a
/// figure-8 drive, five ground fiducials.
SceneModel default_scene();

struct LidarModel {
    std::size_t beams = 16;
    double min_elevation_deg = -15.0;
    double max_elevation_deg = 15.0;
    std::size_t azimuth_steps = 900;
    double spin_rate_hz = 10.0;
    double min_range = 0.5;
    double max_range = 60.0;
    float intensity = 100.0f;

    Eigen::Vector3d ray_direction(std::size_t beam, std::size_t azimuth) const;
};

struct TrajectorySpec {
    /// Lemniscate of Bernoulli x = a cos s / (1 + sin^2 s), y = a sin s cos s / (1 + sin^2 s).
    double half_width = 15.0;
    std::size_t loop_count = 3;
    double speed = 2.4;
    double pose_rate_hz = 100.0;
    double start_time = 1000.0;
    /// Height of the pose sensor above the ground.
    double height = 0.5;
};

struct NoiseSpec {
    double range_sigma = 0.02;
    double pose_translation_sigma = 0.0;
    double pose_rotation_sigma = 0.0;
    double fiducial_sigma = 0.0;
};

struct SimSpec {
    RigidTransform extrinsic = default_extrinsic();
    LidarModel lidar;
    TrajectorySpec trajectory;
    NoiseSpec noise;
    std::uint64_t seed = 1;

    static RigidTransform default_extrinsic();
    /// Throws ConfigError for non-positive rates, zero loops and similar.
    void validate() const;
};

/// Strict parsing: unknown keys throw ConfigError. Missing keys keep defaults.
SimSpec sim_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SimSpec& spec);

/// Vehicle poses along the figure-8 at constant speed, starting and ending at the
/// center crossing. Noise, when enabled, is added per sample.
Trajectory generate_trajectory(const TrajectorySpec& spec, const NoiseSpec& noise = {}, std::uint64_t seed = 0);

/// Arc length of one lemniscate loop.
double lemniscate_length(double half_width);

struct SimulatedScan {
    LidarFrame frame;
    std::vector<std::uint32_t> labels;
};

/// Casts every beam from the LiDAR pose at its firing time, vehicle_traj(t) *
/// extrinsic. Points are in the sensor frame at firing time.
SimulatedScan simulate_scan(const SceneModel& scene, const Trajectory& vehicle_traj, const RigidTransform& extrinsic,
                            double frame_timestamp, const LidarModel& lidar, double range_sigma, std::uint64_t seed);

struct SimulatedDataset {
    SimSpec spec;
    SceneModel scene;
    Trajectory true_trajectory;
    /// The trajectory handed to calibration (true trajectory plus pose noise).
    Trajectory trajectory;
    std::vector<LidarFrame> frames;
    std::vector<std::vector<std::uint32_t>> labels;
    std::vector<FiducialPoint> fiducials;
};

/// Pure function of (scene, spec). Frames are simulated in parallel with
/// per-frame random streams.
SimulatedDataset simulate_dataset(const SceneModel& scene, const SimSpec& spec, int threads = 1);

/// Layout: frames/*.lpcf, labels/*.labels, trajectory.csv, fiducials.csv,
/// ground_truth.json; manifest.json is written last.
void write_dataset(const SimulatedDataset& dataset, const std::filesystem::path& dir);
void generate_dataset(const SceneModel& scene, const SimSpec& spec, const std::filesystem::path& dir, int threads = 1);

/// Deterministic 64-bit stream seed for item `index` of a run seeded with `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace lpcalib
