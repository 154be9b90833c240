#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lpcalib/data_io.hpp"
#include "lpcalib/evaluation.hpp"
#include "lpcalib/mapping.hpp"
#include "lpcalib/occupancy_refinement.hpp"
#include "lpcalib/rough_calibration.hpp"
#include "lpcalib/synthetic_world.hpp"
#include "lpcalib/z_correction.hpp"

namespace lpcalib {

enum class PipelineStage { Rough, Refine, ZFix };

std::string to_string(PipelineStage stage);
/// Accepts "rough", "refine", "zfix". The selection must be a prefix of
/// rough, refine, zfix; otherwise ConfigError.
std::vector<PipelineStage> parse_stages(const std::string& comma_separated);
std::vector<PipelineStage> parse_stages(const std::vector<std::string>& names);

struct PipelinePaths {
    std::filesystem::path frames;
    std::filesystem::path trajectory;
    std::filesystem::path fiducials;
    std::filesystem::path output;
};

struct MapExportParams {
    bool deskew = true;
    std::size_t subsample_stride = 1;
    /// Voxel size of the exported cloud; 0 exports every point.
    double voxel_size = 0.0;
    /// Leaf size of the occupancy figure reported with the export.
    double occupancy_leaf = 0.1;
};

struct PipelineConfig {
    PipelinePaths paths;
    std::vector<PipelineStage> stages{PipelineStage::Rough, PipelineStage::Refine, PipelineStage::ZFix};
    RigidTransform initial_extrinsic;
    std::optional<RigidTransform> reference;
    RoughParams rough;
    RefineParams refine;
    ZFixParams zfix;
    /// Map used to match fiducials.
    MapOptions zfix_map{true, 1, 1};
    MapExportParams map;
    SimSpec simulator;
    int threads = 1;

    /// Copies `threads` into every stage's parameters.
    void propagate_threads();
};

/// Strict parsing: unknown keys and wrong types throw ConfigError. Relative
/// paths resolve against base_dir. A "dataset" key fills frames, trajectory and
/// fiducials with the simulator layout under that directory.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j,
                                         const std::filesystem::path& base_dir = std::filesystem::path());
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
/// Every parameter, including defaults. Paths are written as given.
nlohmann::json to_json(const PipelineConfig& config);

struct CalibrateOptions {
    /// Reuse result_<stage>.json files already in the output directory.
    bool resume = false;
};

struct CalibrationRun {
    CalibrationResult result;
    std::vector<CalibrationResult> stage_results;
    std::vector<PipelineStage> resumed;
    std::optional<RoughReport> rough_report;
    std::optional<RefineReport> refine_report;
    std::optional<ZFixResult> zfix_report;
    nlohmann::json timing = nlohmann::json::object();
};

/// Runs the selected stages in order, each from the previous stage's
/// extrinsic, and writes result.json, result_<stage>.json, trace_rough.csv,
/// refine_candidates.csv, zfix_report.json, evaluation.json (with a
/// reference), timing.json and manifest.json (last) to the output directory.
/// A lockfile guards the directory for the duration of the run.
CalibrationRun cmd_calibrate(const PipelineConfig& config, const CalibrateOptions& options = {});

/// Writes a dataset under out_dir; the manifest is the completion marker.
void cmd_simulate(const PipelineConfig& config, const std::filesystem::path& out_dir);

struct EvaluationSummary {
    /// Final stage of each result.
    ErrorReport final_report;
    /// Keyed by stage name, over the results that contain that stage.
    std::vector<std::pair<std::string, ErrorReport>> per_stage;
    std::vector<std::filesystem::path> sources;
};

/// Result files matching a glob pattern, sorted.
std::vector<std::filesystem::path> expand_glob(const std::string& pattern);
EvaluationSummary cmd_evaluate(const std::vector<std::filesystem::path>& results, const RigidTransform& reference);
nlohmann::json to_json(const EvaluationSummary& summary);

struct MapSummary {
    std::filesystem::path path;
    std::size_t points = 0;
    std::size_t exported_points = 0;
    std::size_t occupied_cells = 0;
    double occupancy_leaf = 0.0;
};

/// Builds the map with the given extrinsic and exports it as XYZ to
/// <output>/map.xyz, with map_report.json and a manifest.
MapSummary cmd_map(const PipelineConfig& config, const RigidTransform& extrinsic, bool deskew);

/// Process exit code for an exception escaping a command: 2 configuration,
/// 3 data, 4 stage failure, 1 anything else.
int exit_code_for(const std::exception& e);

}  // namespace lpcalib
