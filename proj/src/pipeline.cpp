#include "lpcalib/pipeline.hpp"

#include <glob.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numbers>
#include <set>

#include <fmt/format.h>

#include "lpcalib/errors.hpp"

namespace lpcalib {

namespace fs = std::filesystem;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::string type_name(const nlohmann::json& j) { return j.type_name(); }

/// Reads fields of one JSON object and rejects keys nobody asked for.
class JsonReader {
public:
    JsonReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected an object, got " + type_name(j_));
    }

    template <typename T>
    void operator()(const char* key, T& out) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        out = convert<T>(*it, path(key));
    }

    void degrees(const char* key, double& radians) {
        double deg = radians / kDeg;
        (*this)(key, deg);
        if (j_.contains(key)) radians = deg * kDeg;
    }

    template <typename F>
    void object(const char* key, F&& fill) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        JsonReader sub(*it, path(key));
        fill(sub);
        sub.finish();
    }

    template <typename T, typename F>
    void array(const char* key, std::vector<T>& out, F&& fill) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        if (!it->is_array()) throw ConfigError(path(key) + ": expected an array");
        out.clear();
        for (std::size_t i = 0; i < it->size(); ++i) {
            JsonReader sub((*it)[i], fmt::format("{}[{}]", path(key), i));
            T item;
            fill(sub, item);
            sub.finish();
            out.push_back(item);
        }
    }

    const nlohmann::json* take(const char* key) {
        seen_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.contains(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
        }
    }

    std::string path(const char* key) const { return where_.empty() ? key : where_ + "." + key; }

private:
    template <typename T>
    static T convert(const nlohmann::json& v, const std::string& where) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean, got " + type_name(v));
            return v.get<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer, got " + type_name(v));
            if (std::is_unsigned_v<T> && v.get<std::int64_t>() < 0 && !v.is_number_unsigned()) {
                throw ConfigError(where + ": must be >= 0");
            }
            return v.get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError(where + ": expected a number, got " + type_name(v));
            return v.get<T>();
        } else {
            if (!v.is_string()) throw ConfigError(where + ": expected a string, got " + type_name(v));
            return v.get<T>();
        }
    }

    const nlohmann::json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

class JsonWriter {
public:
    template <typename T>
    void operator()(const char* key, const T& value) {
        j[key] = value;
    }
    void degrees(const char* key, double radians) { j[key] = radians / kDeg; }

    template <typename F>
    void object(const char* key, F&& fill) {
        JsonWriter sub;
        fill(sub);
        j[key] = std::move(sub.j);
    }

    template <typename T, typename F>
    void array(const char* key, std::vector<T>& items, F&& fill) {
        auto arr = nlohmann::json::array();
        for (auto& item : items) {
            JsonWriter sub;
            fill(sub, item);
            arr.push_back(std::move(sub.j));
        }
        j[key] = std::move(arr);
    }

    nlohmann::json j = nlohmann::json::object();
};

// One field list per parameter block serves both reading and writing.

template <typename V>
void visit_features(V& v, FeatureParams& p) {
    v("k", p.curvature.k);
    v("search_radius", p.curvature.search_radius);
    v("curvature_threshold", p.curvature_threshold);
    v("min_spread", p.min_spread);
    v("query_stride", p.query_stride);
}

template <typename V>
void visit_patches(V& v, AdaptiveVoxelParams& p) {
    v("root_size", p.root_size);
    v("max_depth", p.max_depth);
    v("plane_var_max", p.plane_var_max);
    v("plane_ratio_max", p.plane_ratio_max);
    v("min_points", p.min_points);
}

template <typename V>
void visit_rough(V& v, RoughParams& p) {
    v("window_size", p.window_size);
    v("stride", p.stride);
    v("gate_initial", p.gate_initial);
    v("gate_converged", p.gate_converged);
    v("huber_delta", p.huber_delta);
    v("tz_prior_weight", p.tz_prior_weight);
    v("max_iterations", p.max_iterations);
    v("step_tolerance", p.step_tolerance);
    v("min_correspondences", p.min_correspondences);
    v("max_normal_angle_deg", p.max_normal_angle_deg);
    v("max_centroid_distance", p.max_centroid_distance);
    v("candidate_patches", p.candidate_patches);
    v("frame_voxel_size", p.frame_voxel_size);
    v("max_points_per_frame", p.max_points_per_frame);
    v("min_patch_lambda2", p.min_patch_lambda2);
    v("max_condition_number", p.max_condition_number);
    v("deskew", p.deskew);
    v("deskew_rotation_threshold_deg", p.deskew_rotation_threshold_deg);
    v("deskew_translation_threshold", p.deskew_translation_threshold);
    v.object("features", [&](auto& sub) { visit_features(sub, p.features); });
    v.object("patches", [&](auto& sub) { visit_patches(sub, p.patches); });
}

template <typename V>
void visit_level(V& v, SearchLevel& l) {
    v("leaf_size", l.leaf_size);
    v.degrees("rotation_range_deg", l.rotation_range);
    v.degrees("rotation_step_deg", l.rotation_step);
    v("translation_range", l.translation_range);
    v("translation_step", l.translation_step);
    v("sweeps", l.sweeps);
}

template <typename V>
void visit_refine(V& v, RefineParams& p) {
    v("max_points", p.max_points);
    v("seed", p.seed);
    v.degrees("deskew_rotation_threshold_deg", p.deskew_rotation_threshold);
    v("deskew_translation_threshold", p.deskew_translation_threshold);
    v.array("levels", p.search.levels, [](auto& sub, SearchLevel& l) { visit_level(sub, l); });
}

template <typename V>
void visit_zfix(V& v, ZFixParams& p, MapOptions& m) {
    v("horizontal_radius", p.horizontal_radius);
    v("z_gate", p.z_gate);
    v("max_iterations", p.max_iterations);
    v("tolerance", p.tolerance);
    v("deskew", m.deskew);
    v("subsample_stride", m.subsample_stride);
}

template <typename V>
void visit_map(V& v, MapExportParams& p) {
    v("deskew", p.deskew);
    v("subsample_stride", p.subsample_stride);
    v("voxel_size", p.voxel_size);
    v("occupancy_leaf", p.occupancy_leaf);
}

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

RigidTransform extrinsic_from_value(const nlohmann::json& v, const fs::path& base, const std::string& where) {
    try {
        if (v.is_string()) return extrinsic_from_any_json(read_json(resolve(base, v.get<std::string>())));
        return extrinsic_from_any_json(v);
    } catch (const SchemaError& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

std::string stage_file(PipelineStage s) { return "result_" + to_string(s) + ".json"; }

/// Report written next to each stage's result.
std::string stage_companion(PipelineStage s) {
    switch (s) {
        case PipelineStage::Rough: return "trace_rough.csv";
        case PipelineStage::Refine: return "refine_candidates.csv";
        case PipelineStage::ZFix: return "zfix_report.json";
    }
    return {};
}

/// Exclusive marker file; removed when the run ends, also on failure.
class DirectoryLock {
public:
    explicit DirectoryLock(const fs::path& dir) : path_(dir / ".lpcalib.lock") {
        std::FILE* f = std::fopen(path_.c_str(), "wx");
        if (!f) {
            if (fs::exists(path_)) {
                throw ConfigError("output directory " + dir.string() + " is in use by another run (remove " +
                                  path_.string() + " if it is stale)");
            }
            throw IoError("cannot create " + path_.string());
        }
        std::fprintf(f, "%ld\n", static_cast<long>(::getpid()));
        std::fclose(f);
    }
    ~DirectoryLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
    fs::path path_;
};

/// Everything a stage result depends on; resumed results must come from an
/// identical fingerprint.
nlohmann::json run_fingerprint(const PipelineConfig& config) {
    nlohmann::json j = to_json(config);
    j.erase("stages");
    j.erase("threads");
    j.erase("reference");
    j.erase("simulator");
    j.erase("map");
    j["paths"].erase("output");
    return j;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

nlohmann::json error_json(const ExtrinsicError& e) {
    return {{"tx_m", e.tx},           {"ty_m", e.ty},       {"tz_m", e.tz},
            {"roll_deg", e.roll},     {"pitch_deg", e.pitch}, {"yaw_deg", e.yaw},
            {"angle_deg", e.angle_deg()}};
}

}  // namespace

std::string to_string(PipelineStage stage) {
    switch (stage) {
        case PipelineStage::Rough: return "rough";
        case PipelineStage::Refine: return "refine";
        case PipelineStage::ZFix: return "zfix";
    }
    return "unknown";
}

std::vector<PipelineStage> parse_stages(const std::vector<std::string>& names) {
    static const std::vector<std::string> order = {"rough", "refine", "zfix"};
    if (names.empty()) throw ConfigError("no stages selected");
    if (names.size() > order.size()) throw ConfigError("too many stages");
    std::vector<PipelineStage> out;
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (std::find(order.begin(), order.end(), names[i]) == order.end()) {
            throw ConfigError("unknown stage '" + names[i] + "' (expected rough, refine, zfix)");
        }
        if (names[i] != order[i]) {
            throw ConfigError("stages must be a prefix of rough,refine,zfix; got '" + names[i] + "' at position " +
                              std::to_string(i + 1));
        }
        out.push_back(static_cast<PipelineStage>(i));
    }
    return out;
}

std::vector<PipelineStage> parse_stages(const std::string& comma_separated) {
    std::vector<std::string> names;
    std::size_t start = 0;
    while (start <= comma_separated.size()) {
        const auto end = std::min(comma_separated.find(',', start), comma_separated.size());
        std::string name = comma_separated.substr(start, end - start);
        name.erase(0, name.find_first_not_of(" \t"));
        name.erase(name.find_last_not_of(" \t") + 1);
        if (!name.empty()) names.push_back(name);
        start = end + 1;
    }
    return parse_stages(names);
}

void PipelineConfig::propagate_threads() {
    threads = std::max(threads, 1);
    rough.threads = threads;
    refine.threads = threads;
    zfix.threads = threads;
    zfix_map.threads = threads;
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
    PipelineConfig c;
    c.refine.search = SearchSpec::Default();
    JsonReader top(j, "");
    if (const auto* dataset = top.take("dataset")) {
        if (!dataset->is_string()) throw ConfigError("dataset: expected a string");
        const fs::path dir = resolve(base_dir, dataset->get<std::string>());
        c.paths.frames = dir / "frames";
        c.paths.trajectory = dir / "trajectory.csv";
        c.paths.fiducials = dir / "fiducials.csv";
    }
    top.object("paths", [&](JsonReader& r) {
        std::string frames, trajectory, fiducials, output;
        r("frames", frames);
        r("trajectory", trajectory);
        r("fiducials", fiducials);
        r("output", output);
        if (!frames.empty()) c.paths.frames = resolve(base_dir, frames);
        if (!trajectory.empty()) c.paths.trajectory = resolve(base_dir, trajectory);
        if (!fiducials.empty()) c.paths.fiducials = resolve(base_dir, fiducials);
        if (!output.empty()) c.paths.output = resolve(base_dir, output);
    });
    if (const auto* stages = top.take("stages")) {
        if (stages->is_string()) {
            c.stages = parse_stages(stages->get<std::string>());
        } else if (stages->is_array() &&
                   std::all_of(stages->begin(), stages->end(), [](const auto& s) { return s.is_string(); })) {
            c.stages = parse_stages(stages->get<std::vector<std::string>>());
        } else {
            throw ConfigError("stages: expected a string or an array of strings");
        }
    }
    if (const auto* v = top.take("initial_extrinsic")) c.initial_extrinsic = extrinsic_from_value(*v, base_dir, "initial_extrinsic");
    if (const auto* v = top.take("reference")) {
        if (!v->is_null()) c.reference = extrinsic_from_value(*v, base_dir, "reference");
    }
    top.object("rough", [&](JsonReader& r) { visit_rough(r, c.rough); });
    top.object("refine", [&](JsonReader& r) { visit_refine(r, c.refine); });
    top.object("zfix", [&](JsonReader& r) { visit_zfix(r, c.zfix, c.zfix_map); });
    top.object("map", [&](JsonReader& r) { visit_map(r, c.map); });
    if (const auto* v = top.take("simulator")) c.simulator = sim_spec_from_json(*v);
    top("threads", c.threads);
    top.finish();
    if (c.threads < 1) throw ConfigError("threads must be >= 1");
    c.refine.search.validate();
    c.propagate_threads();
    return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
    nlohmann::json j;
    try {
        j = read_json(path);
    } catch (const ParseError& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    }
    return pipeline_config_from_json(j, path.parent_path());
}

nlohmann::json to_json(const PipelineConfig& config) {
    PipelineConfig c = config;
    nlohmann::json j;
    j["paths"] = {{"frames", c.paths.frames.string()},
                  {"trajectory", c.paths.trajectory.string()},
                  {"fiducials", c.paths.fiducials.string()},
                  {"output", c.paths.output.string()}};
    auto stages = nlohmann::json::array();
    for (auto s : c.stages) stages.push_back(to_string(s));
    j["stages"] = stages;
    j["initial_extrinsic"] = extrinsic_to_json(c.initial_extrinsic);
    j["reference"] = c.reference ? extrinsic_to_json(*c.reference) : nlohmann::json(nullptr);
    JsonWriter rough, refine, zfix, map;
    visit_rough(rough, c.rough);
    visit_refine(refine, c.refine);
    visit_zfix(zfix, c.zfix, c.zfix_map);
    visit_map(map, c.map);
    j["rough"] = rough.j;
    j["refine"] = refine.j;
    j["zfix"] = zfix.j;
    j["map"] = map.j;
    j["simulator"] = to_json(c.simulator);
    j["threads"] = c.threads;
    return j;
}

CalibrationRun cmd_calibrate(const PipelineConfig& input_config, const CalibrateOptions& options) {
    using Clock = std::chrono::steady_clock;
    const auto t_total = Clock::now();
    PipelineConfig config = input_config;
    config.propagate_threads();
    if (config.stages.empty()) throw ConfigError("no stages selected");
    if (config.paths.frames.empty()) throw ConfigError("paths.frames is required");
    if (config.paths.trajectory.empty()) throw ConfigError("paths.trajectory is required");
    if (config.paths.output.empty()) throw ConfigError("paths.output is required");
    const bool want_zfix = std::find(config.stages.begin(), config.stages.end(), PipelineStage::ZFix) != config.stages.end();
    if (want_zfix && config.paths.fiducials.empty()) throw ConfigError("the zfix stage needs paths.fiducials");
    config.refine.search.validate();

    const fs::path out = config.paths.output;
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
    DirectoryLock lock(out);

    CalibrationRun run;
    const auto t_load = Clock::now();
    const Trajectory trajectory = read_trajectory(config.paths.trajectory);
    const FrameSequence seq = associate_frames_with_poses(read_frames(config.paths.frames), trajectory);
    std::vector<FiducialPoint> fiducials;
    if (want_zfix) fiducials = read_fiducials(config.paths.fiducials);
    run.timing["load_seconds"] = seconds_since(t_load);
    run.timing["frames"] = seq.size();
    run.timing["dropped_frames"] = seq.dropped;

    const nlohmann::json fingerprint = run_fingerprint(config);
    const fs::path fingerprint_path = out / "run_config.json";
    if (options.resume && fs::exists(fingerprint_path) && read_json(fingerprint_path) != fingerprint) {
        throw ConfigError("cannot resume: " + fingerprint_path.string() + " was written with different inputs");
    }
    write_json(fingerprint_path, fingerprint);

    std::vector<std::string> written = {"run_config.json"};
    const auto emit = [&](const std::string& name, auto&& writer) {
        writer(out / name);
        written.push_back(name);
    };

    run.stage_results.reserve(config.stages.size());
    const CalibrationResult* previous = nullptr;
    auto stage_times = nlohmann::json::object();
    for (const auto stage : config.stages) {
        const auto t_stage = Clock::now();
        const std::string file = stage_file(stage);
        std::optional<CalibrationResult> result;
        if (options.resume && fs::exists(out / file)) {
            CalibrationResult loaded = calibration_result_from_json(read_json(out / file));
            const bool chained = previous ? (loaded.parent && loaded.parent->extrinsic == previous->extrinsic)
                                          : !loaded.parent;
            if (chained) {
                result = std::move(loaded);
                run.resumed.push_back(stage);
                const std::string companion = stage_companion(stage);
                if (fs::exists(out / companion)) written.push_back(companion);
            }
        }
        if (!result) {
            switch (stage) {
                case PipelineStage::Rough: {
                    RoughReport report;
                    result = run_rough(seq, &trajectory, config.initial_extrinsic, config.rough, &report);
                    emit(stage_companion(stage),
                         [&](const fs::path& p) { write_convergence_trace_csv(report, config.reference, p); });
                    run.rough_report = std::move(report);
                    break;
                }
                case PipelineStage::Refine: {
                    RefineReport report;
                    result = refine(seq, trajectory, *previous, config.refine, &report);
                    emit(stage_companion(stage), [&](const fs::path& p) { write_candidates_csv(report, p); });
                    run.refine_report = std::move(report);
                    break;
                }
                case PipelineStage::ZFix: {
                    ZFixResult report;
                    result = run_z_correction(seq, *previous, fiducials, config.zfix, config.zfix_map, &trajectory,
                                              &report);
                    emit(stage_companion(stage), [&](const fs::path& p) { write_json(p, to_json(report)); });
                    run.zfix_report = std::move(report);
                    break;
                }
            }
        }
        emit(file, [&](const fs::path& p) { write_json(p, to_json(*result)); });
        stage_times[to_string(stage)] = seconds_since(t_stage);
        run.stage_results.push_back(std::move(*result));
        previous = &run.stage_results.back();
    }
    run.result = run.stage_results.back();
    emit("result.json", [&](const fs::path& p) { write_json(p, to_json(run.result)); });

    if (config.reference) {
        nlohmann::json eval = nlohmann::json::object();
        for (std::size_t i = 0; i < config.stages.size(); ++i) {
            eval[to_string(config.stages[i])] =
                error_json(extrinsic_error(*config.reference, run.stage_results[i].extrinsic));
        }
        emit("evaluation.json", [&](const fs::path& p) { write_json(p, eval); });
    }

    run.timing["stage_seconds"] = stage_times;
    auto resumed = nlohmann::json::array();
    for (auto s : run.resumed) resumed.push_back(to_string(s));
    run.timing["resumed"] = resumed;
    run.timing["threads"] = config.threads;
    run.timing["total_seconds"] = seconds_since(t_total);
    emit("timing.json", [&](const fs::path& p) { write_json(p, run.timing); });

    write_manifest(out, written, {{"generator", "lpcalib calibrate"}, {"result", "result.json"}});
    return run;
}

void cmd_simulate(const PipelineConfig& config, const fs::path& out_dir) {
    if (out_dir.empty()) throw ConfigError("simulate needs an output directory");
    config.simulator.validate();
    generate_dataset(default_scene(), config.simulator, out_dir, std::max(config.threads, 1));
}

std::vector<fs::path> expand_glob(const std::string& pattern) {
    glob_t g{};
    const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
    std::vector<fs::path> out;
    if (rc == 0) {
        for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
    }
    ::globfree(&g);
    if (rc != 0 && rc != GLOB_NOMATCH) throw IoError("cannot expand '" + pattern + "'");
    if (out.empty()) throw IoError("no result files match '" + pattern + "'");
    std::sort(out.begin(), out.end());
    return out;
}

EvaluationSummary cmd_evaluate(const std::vector<fs::path>& results, const RigidTransform& reference) {
    if (results.empty()) throw IoError("no result files to evaluate");
    EvaluationSummary summary;
    summary.sources = results;
    std::vector<RigidTransform> finals;
    const std::vector<Stage> order = {Stage::Rough, Stage::Refined, Stage::ZCorrected};
    std::vector<std::vector<RigidTransform>> by_stage(order.size());
    for (const auto& path : results) {
        const CalibrationResult r = calibration_result_from_json(read_json(path));
        finals.push_back(r.extrinsic);
        for (const CalibrationResult* node = &r; node; node = node->parent.get()) {
            by_stage[static_cast<std::size_t>(node->stage)].push_back(node->extrinsic);
        }
    }
    summary.final_report = make_error_report(reference, finals);
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (!by_stage[i].empty()) summary.per_stage.emplace_back(to_string(order[i]), make_error_report(reference, by_stage[i]));
    }
    return summary;
}

nlohmann::json to_json(const EvaluationSummary& summary) {
    nlohmann::json j;
    auto sources = nlohmann::json::array();
    for (const auto& s : summary.sources) sources.push_back(s.string());
    j["sources"] = sources;
    j["final"] = to_json(summary.final_report);
    auto stages = nlohmann::json::object();
    for (const auto& [name, report] : summary.per_stage) stages[name] = to_json(report);
    j["stages"] = stages;
    return j;
}

MapSummary cmd_map(const PipelineConfig& input_config, const RigidTransform& extrinsic, bool deskew) {
    PipelineConfig config = input_config;
    config.propagate_threads();
    if (config.paths.frames.empty() || config.paths.trajectory.empty()) {
        throw ConfigError("map needs paths.frames and paths.trajectory");
    }
    if (config.paths.output.empty()) throw ConfigError("paths.output is required");
    if (!(config.map.occupancy_leaf > 0.0)) throw ConfigError("map.occupancy_leaf must be positive");
    if (config.map.voxel_size < 0.0) throw ConfigError("map.voxel_size must be >= 0");
    const fs::path out = config.paths.output;
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
    DirectoryLock lock(out);

    const Trajectory trajectory = read_trajectory(config.paths.trajectory);
    const FrameSequence seq = associate_frames_with_poses(read_frames(config.paths.frames), trajectory);
    GlobalMap map = build_map(seq, extrinsic, {deskew, config.map.subsample_stride, config.threads}, &trajectory);

    MapSummary s;
    s.path = out / "map.xyz";
    s.points = map.size();
    s.occupancy_leaf = config.map.occupancy_leaf;
    s.occupied_cells = count_occupied(map.points, config.map.occupancy_leaf);
    bool with_frames = true;
    if (config.map.voxel_size > 0.0) {
        map.points = voxel_downsample(map.points, config.map.voxel_size);
        map.source_frame.clear();
        with_frames = false;
    }
    s.exported_points = map.size();
    export_map(map, s.path, 0.0, with_frames);

    nlohmann::json report = extrinsic_to_json(extrinsic);
    report["deskew"] = deskew;
    report["points"] = s.points;
    report["exported_points"] = s.exported_points;
    report["voxel_size"] = config.map.voxel_size;
    report["subsample_stride"] = config.map.subsample_stride;
    report["occupancy_leaf"] = s.occupancy_leaf;
    report["occupied_cells"] = s.occupied_cells;
    write_json(out / "map_report.json", report);
    write_manifest(out, {"map.xyz", "map_report.json"}, {{"generator", "lpcalib map"}});
    return s;
}

int exit_code_for(const std::exception& e) {
    if (const auto* err = dynamic_cast<const Error*>(&e)) {
        switch (err->category()) {
            case ErrorCategory::Config: return 2;
            case ErrorCategory::Data: return 3;
            case ErrorCategory::Stage: return 4;
        }
    }
    if (dynamic_cast<const nlohmann::json::exception*>(&e)) return 2;
    if (dynamic_cast<const fs::filesystem_error*>(&e)) return 3;
    return 1;
}

}  // namespace lpcalib
