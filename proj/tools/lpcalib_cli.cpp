#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "lpcalib/errors.hpp"
#include "lpcalib/pipeline.hpp"

namespace fs = std::filesystem;
using namespace lpcalib;

namespace {

PipelineConfig config_or_default(const std::string& path) {
    if (path.empty()) return PipelineConfig{};
    return load_pipeline_config(path);
}

RigidTransform read_extrinsic_file(const std::string& path) {
    try {
        return extrinsic_from_any_json(read_json(path));
    } catch (const SchemaError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void print_extrinsic(const char* label, const RigidTransform& t) {
    const auto e = rotation_to_euler_zyx(t.rotation).angles;
    constexpr double deg = 180.0 / 3.14159265358979323846;
    fmt::print("{:<10} rpy_deg [{:.4f}, {:.4f}, {:.4f}]  t_m [{:.4f}, {:.4f}, {:.4f}]\n", label, e.roll * deg,
               e.pitch * deg, e.yaw * deg, t.translation.x(), t.translation.y(), t.translation.z());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Targetless LiDAR to pose-sensor extrinsic calibration"};
    app.require_subcommand(1);

    std::string config_path;
    std::string stages;
    std::string reference_path;
    std::string out_dir;
    std::string results_glob;
    std::string extrinsic_path;
    int threads = 0;
    long long seed = -1;
    bool resume = false;
    bool deskew = false;

    auto* calibrate = app.add_subcommand("calibrate", "Run rough, refine and zfix stages");
    calibrate->add_option("--config", config_path, "Pipeline config JSON")->required()->check(CLI::ExistingFile);
    calibrate->add_option("--stages", stages, "Prefix of rough,refine,zfix");
    calibrate->add_option("--reference", reference_path, "Reference extrinsic JSON for evaluation");
    calibrate->add_option("--out", out_dir, "Output directory (overrides paths.output)");
    calibrate->add_option("--threads", threads, "Worker threads (overrides config)")->check(CLI::PositiveNumber);
    calibrate->add_flag("--resume", resume, "Reuse stage results already in the output directory");

    auto* simulate = app.add_subcommand("simulate", "Write a synthetic dataset");
    simulate->add_option("--config", config_path, "Config JSON whose \"simulator\" block is used");
    simulate->add_option("--out", out_dir, "Dataset directory")->required();
    simulate->add_option("--seed", seed, "Overrides simulator.seed")->check(CLI::NonNegativeNumber);
    simulate->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

    auto* evaluate = app.add_subcommand("evaluate", "Error of result files against a reference extrinsic");
    evaluate->add_option("--results", results_glob, "Glob of result JSON files")->required();
    evaluate->add_option("--reference", reference_path, "Reference extrinsic JSON")->required();
    evaluate->add_option("--out", out_dir, "Write the report JSON to this file");

    auto* map = app.add_subcommand("map", "Build and export the map for one extrinsic");
    map->add_option("--config", config_path, "Pipeline config JSON")->required()->check(CLI::ExistingFile);
    map->add_option("--extrinsic", extrinsic_path, "Extrinsic JSON (result or euler/translation)")->required();
    map->add_flag("--deskew", deskew, "Remove motion distortion with the trajectory");
    map->add_option("--out", out_dir, "Output directory (overrides paths.output)");
    map->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (calibrate->parsed()) {
            PipelineConfig config = load_pipeline_config(config_path);
            if (!stages.empty()) config.stages = parse_stages(stages);
            if (!reference_path.empty()) config.reference = read_extrinsic_file(reference_path);
            if (!out_dir.empty()) config.paths.output = out_dir;
            if (threads > 0) config.threads = threads;
            const auto run = cmd_calibrate(config, {resume});
            for (const auto& r : run.stage_results) print_extrinsic(to_string(r.stage).c_str(), r.extrinsic);
            if (config.reference) {
                const auto err = extrinsic_error(*config.reference, run.result.extrinsic);
                fmt::print("error      angle {:.4f} deg  dt [{:.4f}, {:.4f}, {:.4f}] m\n", err.angle_deg(), err.tx,
                           err.ty, err.tz);
            }
            fmt::print("wrote {}\n", (config.paths.output / "result.json").string());
        } else if (simulate->parsed()) {
            PipelineConfig config = config_or_default(config_path);
            if (seed >= 0) config.simulator.seed = static_cast<std::uint64_t>(seed);
            if (threads > 0) config.threads = threads;
            cmd_simulate(config, out_dir);
            fmt::print("wrote {}\n", (fs::path(out_dir) / "manifest.json").string());
        } else if (evaluate->parsed()) {
            const auto summary = cmd_evaluate(expand_glob(results_glob), read_extrinsic_file(reference_path));
            const auto j = to_json(summary);
            if (!out_dir.empty()) write_json(out_dir, j);
            fmt::print("{}\n", j.dump(2));
        } else if (map->parsed()) {
            PipelineConfig config = load_pipeline_config(config_path);
            if (!out_dir.empty()) config.paths.output = out_dir;
            if (threads > 0) config.threads = threads;
            const auto s = cmd_map(config, read_extrinsic_file(extrinsic_path), deskew);
            fmt::print("wrote {} ({} points, {} occupied cells at {} m)\n", s.path.string(), s.exported_points,
                       s.occupied_cells, s.occupancy_leaf);
        }
    } catch (const std::exception& e) {
        const int code = exit_code_for(e);
        std::fprintf(stderr, "lpcalib: %s\n", e.what());
        return code;
    }
    return 0;
}
