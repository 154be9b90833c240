#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "lpcalib/geometry.hpp"

namespace lpcalib {

/// One LiDAR return in the sensor frame. relative_time is the offset from the
/// frame timestamp to the firing time of this return.
struct LidarPoint {
    Eigen::Vector3f position = Eigen::Vector3f::Zero();
    float intensity = 0.0f;
    float relative_time = 0.0f;

    bool operator==(const LidarPoint&) const = default;
};

/// Upper bound on relative_time: one scan period.
inline constexpr double kMaxRelativeTime = 0.2;

struct LidarFrame {
    double frame_timestamp = 0.0;
    std::vector<LidarPoint> points;

    bool operator==(const LidarFrame&) const = default;
    /// Largest relative_time among the points (0 for an empty frame).
    double max_relative_time() const;
    std::vector<Eigen::Vector3d> positions() const;
};

struct FiducialPoint {
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
};

enum class FrameFormat { Binary, Ascii };

/// Binary frames start with "LPCF", a u16 version, the f64 timestamp and a u32
/// point count, followed by five little-endian f32 per point. ASCII frames carry
/// a "# LPCF-ASCII v1 timestamp=<f64>" header and one "x y z intensity time" row
/// per point. The reader detects the format from the first bytes.
LidarFrame read_frame(const std::filesystem::path& path);
void write_frame(const LidarFrame& frame, const std::filesystem::path& path,
                 FrameFormat format = FrameFormat::Binary);

/// Frame files (*.lpcf, *.txt) of a directory in lexicographic order.
std::vector<std::filesystem::path> list_frame_files(const std::filesystem::path& dir);
std::vector<LidarFrame> read_frames(const std::filesystem::path& dir);

/// CSV with header timestamp,tx,ty,tz,qx,qy,qz,qw. Quaternions are normalized on
/// ingest; a norm outside [0.99, 1.01] throws InvalidQuaternion.
Trajectory read_trajectory(const std::filesystem::path& path);
void write_trajectory(const Trajectory& traj, const std::filesystem::path& path);

/// CSV with header x,y,z and at least three rows.
std::vector<FiducialPoint> read_fiducials(const std::filesystem::path& path);
void write_fiducials(const std::vector<FiducialPoint>& fiducials, const std::filesystem::path& path);

/// Per-point u32 plane ids, little-endian, no header.
void write_labels(const std::vector<std::uint32_t>& labels, const std::filesystem::path& path);
std::vector<std::uint32_t> read_labels(const std::filesystem::path& path);

/// Frames paired with the pose-sensor pose at their timestamps.
struct FrameSequence {
    std::vector<LidarFrame> frames;
    std::vector<RigidTransform> poses;
    std::size_t dropped = 0;

    std::size_t size() const { return frames.size(); }
};

/// Pairs every frame whose timestamp lies inside the trajectory span with the
/// interpolated pose; frames outside the span are dropped and counted. Empty
/// frames are dropped as well. Throws EmptyOverlap when nothing remains.
FrameSequence associate_frames_with_poses(std::vector<LidarFrame> frames, const Trajectory& traj);

enum class Stage { Rough, Refined, ZCorrected };

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& name);

struct StageDiagnostics {
    std::size_t iterations = 0;
    double initial_cost = 0.0;
    double final_cost = 0.0;
    double runtime_seconds = 0.0;
    bool converged = false;
    nlohmann::json extra = nlohmann::json::object();
};

struct CalibrationResult {
    RigidTransform extrinsic;
    Stage stage = Stage::Rough;
    StageDiagnostics diagnostics;
    /// The result this one was refined from; set for every stage after rough.
    std::shared_ptr<const CalibrationResult> parent;
};

/// Serializes to {"extrinsic": 16 row-major numbers, "euler_zyx_deg", "translation_m",
/// "stage", "diagnostics", "parent"}. Wall-clock runtimes are left out so that
/// identical inputs give identical bytes.
nlohmann::json to_json(const CalibrationResult& result);
CalibrationResult calibration_result_from_json(const nlohmann::json& j);

nlohmann::json extrinsic_to_json(const RigidTransform& t);
/// Reads the "extrinsic" member (16 numbers, row-major) of a JSON document.
/// Rotation blocks within 1e-12 of orthonormal are kept bit-exact, others are
/// re-orthonormalized; beyond 1e-6 it throws SchemaError.
RigidTransform extrinsic_from_json(const nlohmann::json& j);
/// Extrinsic from {"extrinsic": [16]} or {"euler_zyx_deg": [3], "translation_m": [3]}.
RigidTransform extrinsic_from_any_json(const nlohmann::json& j);

nlohmann::json read_json(const std::filesystem::path& path);
/// Writes to a temporary sibling and renames it into place.
void write_text_atomic(const std::filesystem::path& path, const std::string& contents);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
std::string read_file_bytes(const std::filesystem::path& path);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

/// Writes dir/manifest.json: `header` plus {"files": [{path, sha256}],
/// "content_sha256"} over the listed files, which are relative to dir. The
/// content hash covers "path:digest" lines in the given order.
void write_manifest(const std::filesystem::path& dir, const std::vector<std::string>& files,
                    nlohmann::json header = nlohmann::json::object());

}  // namespace lpcalib
