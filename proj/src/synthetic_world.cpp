#include "lpcalib/synthetic_world.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include <fmt/format.h>

#include "lpcalib/errors.hpp"
#include "lpcalib/parallel.hpp"

namespace lpcalib {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr std::size_t kTableSamplesPerLoop = 20000;

Rectangle facade(std::uint32_t id, const Eigen::Vector2d& start, const Eigen::Vector2d& end, double height) {
    Rectangle r;
    r.id = id;
    r.corner = {start.x(), start.y(), 0.0};
    r.edge_u = {end.x() - start.x(), end.y() - start.y(), 0.0};
    r.edge_v = {0.0, 0.0, height};
    return r;
}

Eigen::Vector2d lemniscate_point(double a, double s) {
    const double sn = std::sin(s);
    const double cs = std::cos(s);
    const double d = 1.0 + sn * sn;
    return {a * cs / d, a * sn * cs / d};
}

Eigen::Vector2d lemniscate_tangent(double a, double s) {
    const double sn = std::sin(s);
    const double cs = std::cos(s);
    const double d = 1.0 + sn * sn;
    return {-a * sn * (d + 2.0 * cs * cs) / (d * d), a * ((cs * cs - sn * sn) * d - 2.0 * sn * sn * cs * cs) / (d * d)};
}

/// Cumulative arc length over one loop starting at parameter pi/2 (the center crossing).
struct ArcTable {
    std::vector<double> param;
    std::vector<double> length;
};

ArcTable arc_table(double a) {
    ArcTable t;
    const std::size_t n = kTableSamplesPerLoop;
    t.param.resize(n + 1);
    t.length.resize(n + 1);
    const double h = 2.0 * std::numbers::pi / static_cast<double>(n);
    t.param[0] = std::numbers::pi / 2.0;
    t.length[0] = 0.0;
    for (std::size_t i = 1; i <= n; ++i) {
        t.param[i] = std::numbers::pi / 2.0 + h * static_cast<double>(i);
        // Simpson's rule on each sub-interval.
        const double s0 = t.param[i - 1];
        const double f0 = lemniscate_tangent(a, s0).norm();
        const double f1 = lemniscate_tangent(a, s0 + 0.5 * h).norm();
        const double f2 = lemniscate_tangent(a, s0 + h).norm();
        t.length[i] = t.length[i - 1] + h / 6.0 * (f0 + 4.0 * f1 + f2);
    }
    return t;
}

double param_at_length(const ArcTable& t, double s) {
    const auto it = std::upper_bound(t.length.begin(), t.length.end(), s);
    if (it == t.length.begin()) return t.param.front();
    if (it == t.length.end()) return t.param.back();
    const std::size_t i = static_cast<std::size_t>(it - t.length.begin());
    const double w = (s - t.length[i - 1]) / (t.length[i] - t.length[i - 1]);
    return t.param[i - 1] + w * (t.param[i] - t.param[i - 1]);
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(fmt::format("simulator key '{}': {}", key, e.what()));
    }
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [k, v] : j.items()) {
        if (std::none_of(keys.begin(), keys.end(), [&](const char* x) { return k == x; })) {
            throw ConfigError(fmt::format("unknown key '{}' in {}", k, where));
        }
    }
}

struct RayHit {
    double range = std::numeric_limits<double>::infinity();
    std::uint32_t id = 0;
};

/// Precomputed per-rectangle data for ray intersection.
struct RectGeometry {
    std::uint32_t id;
    Eigen::Vector3d corner;
    Eigen::Vector3d normal;
    Eigen::Vector3d u;
    Eigen::Vector3d v;
    Eigen::Matrix2d gram_inv;
};

std::vector<RectGeometry> prepare(const SceneModel& scene) {
    std::vector<RectGeometry> out;
    for (const auto& r : scene.planes) {
        Eigen::Matrix2d g;
        g << r.edge_u.dot(r.edge_u), r.edge_u.dot(r.edge_v), r.edge_v.dot(r.edge_u), r.edge_v.dot(r.edge_v);
        out.push_back({r.id, r.corner, r.normal(), r.edge_u, r.edge_v, g.inverse()});
    }
    return out;
}

RayHit cast(const std::vector<RectGeometry>& rects, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
            double min_range, double max_range) {
    RayHit best;
    for (const auto& r : rects) {
        const double denom = r.normal.dot(dir);
        if (std::abs(denom) < 1e-12) continue;
        const double t = r.normal.dot(r.corner - origin) / denom;
        if (t < min_range || t > max_range || t >= best.range) continue;
        const Eigen::Vector3d w = origin + t * dir - r.corner;
        const Eigen::Vector2d ab = r.gram_inv * Eigen::Vector2d(w.dot(r.u), w.dot(r.v));
        if (ab.x() < 0.0 || ab.x() > 1.0 || ab.y() < 0.0 || ab.y() > 1.0) continue;
        best.range = t;
        best.id = r.id;
    }
    return best;
}

}  // namespace

void SceneModel::validate() const {
    if (planes.empty()) throw ConfigError("scene has no planes");
    std::set<std::uint32_t> ids;
    bool ground_found = false;
    for (const auto& p : planes) {
        if (!ids.insert(p.id).second) throw ConfigError(fmt::format("duplicate plane id {}", p.id));
        if (p.edge_u.cross(p.edge_v).norm() < 1e-9 * p.edge_u.norm() * p.edge_v.norm() ||
            p.edge_u.norm() == 0.0 || p.edge_v.norm() == 0.0) {
            throw ConfigError(fmt::format("plane {} has dependent edges", p.id));
        }
        if (p.id == ground_id) {
            ground_found = true;
            if (std::abs(std::abs(p.normal().z()) - 1.0) > 1e-12) throw ConfigError("ground plane is not horizontal");
        }
    }
    if (!ground_found) throw ConfigError("ground plane id not in scene");
}

const Rectangle& SceneModel::plane(std::uint32_t id) const {
    for (const auto& p : planes) {
        if (p.id == id) return p;
    }
    throw OutOfRange(fmt::format("no plane with id {}", id));
}

SceneModel default_scene() {
    SceneModel s;
    Rectangle ground;
    ground.id = 0;
    ground.corner = {-40.0, -40.0, 0.0};
    ground.edge_u = {80.0, 0.0, 0.0};
    ground.edge_v = {0.0, 80.0, 0.0};
    s.planes.push_back(ground);
    s.ground_id = 0;
    const double h = 10.0;
    s.planes.push_back(facade(1, {28.0, -12.0}, {28.0, 12.0}, h));
    s.planes.push_back(facade(2, {-28.0, 12.0}, {-28.0, -12.0}, h));
    s.planes.push_back(facade(3, {-18.0, 18.0}, {18.0, 18.0}, h));
    s.planes.push_back(facade(4, {18.0, -18.0}, {-18.0, -18.0}, h));
    // Oblique facades across two corners, at 30 and 60 degrees to the x axis.
    const Eigen::Vector2d d30(std::cos(30.0 * kDeg), std::sin(30.0 * kDeg));
    const Eigen::Vector2d d60(std::cos(60.0 * kDeg), std::sin(60.0 * kDeg));
    const Eigen::Vector2d c5(-23.0, 15.0);
    const Eigen::Vector2d c6(23.0, -15.0);
    s.planes.push_back(facade(5, c5 - 4.0 * d30, c5 + 4.0 * d30, h));
    s.planes.push_back(facade(6, c6 - 4.0 * d60, c6 + 4.0 * d60, h));
    for (const auto& f : {Eigen::Vector3d(9.0, 8.0, 0.0), Eigen::Vector3d(-9.0, 8.0, 0.0), Eigen::Vector3d(9.0, -8.0, 0.0),
                          Eigen::Vector3d(-9.0, -8.0, 0.0), Eigen::Vector3d(0.0, 11.0, 0.0)}) {
        s.fiducials.push_back({f});
    }
    return s;
}

Eigen::Vector3d LidarModel::ray_direction(std::size_t beam, std::size_t azimuth) const {
    const double el = beams == 1 ? min_elevation_deg * kDeg
                                 : (min_elevation_deg + (max_elevation_deg - min_elevation_deg) *
                                                            static_cast<double>(beam) /
                                                            static_cast<double>(beams - 1)) *
                                       kDeg;
    const double az = 2.0 * std::numbers::pi * static_cast<double>(azimuth) / static_cast<double>(azimuth_steps);
    return {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
}

RigidTransform SimSpec::default_extrinsic() {
    RigidTransform t;
    t.rotation = euler_zyx_to_rotation({2.0 * kDeg, -1.5 * kDeg, 10.0 * kDeg});
    t.translation = {0.5, 0.3, 1.5};
    return t;
}

void SimSpec::validate() const {
    if (!(lidar.spin_rate_hz > 0.0)) throw ConfigError("spin_rate_hz must be positive");
    if (lidar.beams == 0 || lidar.azimuth_steps == 0) throw ConfigError("lidar needs at least one beam and azimuth step");
    if (!(lidar.max_range > lidar.min_range) || lidar.min_range < 0.0) throw ConfigError("invalid lidar range limits");
    if (lidar.max_elevation_deg < lidar.min_elevation_deg) throw ConfigError("invalid lidar elevation limits");
    if (1.0 / lidar.spin_rate_hz > kMaxRelativeTime) throw ConfigError("spin period exceeds the relative-time limit");
    if (trajectory.loop_count < 1) throw ConfigError("loop_count must be at least 1");
    if (!(trajectory.half_width > 0.0)) throw ConfigError("half_width must be positive");
    if (!(trajectory.speed > 0.0)) throw ConfigError("speed must be positive");
    if (!(trajectory.pose_rate_hz > 0.0)) throw ConfigError("pose_rate_hz must be positive");
    if (noise.range_sigma < 0.0 || noise.pose_translation_sigma < 0.0 || noise.pose_rotation_sigma < 0.0 ||
        noise.fiducial_sigma < 0.0) {
        throw ConfigError("noise levels must be non-negative");
    }
}

SimSpec sim_spec_from_json(const nlohmann::json& j) {
    SimSpec s;
    // euler_zyx_deg and translation_m accompany "extrinsic" in written specs.
    reject_unknown(j, {"extrinsic", "euler_zyx_deg", "translation_m", "lidar", "trajectory", "noise", "seed"},
                   "simulator");
    if (j.contains("extrinsic") || j.contains("euler_zyx_deg") || j.contains("translation_m")) {
        try {
            s.extrinsic = extrinsic_from_any_json(j);
        } catch (const DataError& e) {
            throw ConfigError(std::string("simulator extrinsic: ") + e.what());
        }
    }
    read_field(j, "seed", s.seed);
    if (j.contains("lidar")) {
        const auto& l = j.at("lidar");
        reject_unknown(l,
                       {"beams", "min_elevation_deg", "max_elevation_deg", "azimuth_steps", "spin_rate_hz",
                        "min_range", "max_range", "intensity"},
                       "simulator.lidar");
        read_field(l, "beams", s.lidar.beams);
        read_field(l, "min_elevation_deg", s.lidar.min_elevation_deg);
        read_field(l, "max_elevation_deg", s.lidar.max_elevation_deg);
        read_field(l, "azimuth_steps", s.lidar.azimuth_steps);
        read_field(l, "spin_rate_hz", s.lidar.spin_rate_hz);
        read_field(l, "min_range", s.lidar.min_range);
        read_field(l, "max_range", s.lidar.max_range);
        read_field(l, "intensity", s.lidar.intensity);
    }
    if (j.contains("trajectory")) {
        const auto& t = j.at("trajectory");
        reject_unknown(t, {"half_width", "loop_count", "speed", "pose_rate_hz", "start_time", "height"},
                       "simulator.trajectory");
        if (t.contains("loop_count") && t.at("loop_count").is_number_integer() && t.at("loop_count").get<long long>() < 0) {
            throw ConfigError("loop_count must be at least 1");
        }
        read_field(t, "half_width", s.trajectory.half_width);
        read_field(t, "loop_count", s.trajectory.loop_count);
        read_field(t, "speed", s.trajectory.speed);
        read_field(t, "pose_rate_hz", s.trajectory.pose_rate_hz);
        read_field(t, "start_time", s.trajectory.start_time);
        read_field(t, "height", s.trajectory.height);
    }
    if (j.contains("noise")) {
        const auto& n = j.at("noise");
        reject_unknown(n, {"range_sigma", "pose_translation_sigma", "pose_rotation_sigma", "fiducial_sigma"},
                       "simulator.noise");
        read_field(n, "range_sigma", s.noise.range_sigma);
        read_field(n, "pose_translation_sigma", s.noise.pose_translation_sigma);
        read_field(n, "pose_rotation_sigma", s.noise.pose_rotation_sigma);
        read_field(n, "fiducial_sigma", s.noise.fiducial_sigma);
    }
    s.validate();
    return s;
}

nlohmann::json to_json(const SimSpec& s) {
    nlohmann::json j = extrinsic_to_json(s.extrinsic);
    j["seed"] = s.seed;
    j["lidar"] = {{"beams", s.lidar.beams},
                  {"min_elevation_deg", s.lidar.min_elevation_deg},
                  {"max_elevation_deg", s.lidar.max_elevation_deg},
                  {"azimuth_steps", s.lidar.azimuth_steps},
                  {"spin_rate_hz", s.lidar.spin_rate_hz},
                  {"min_range", s.lidar.min_range},
                  {"max_range", s.lidar.max_range},
                  {"intensity", s.lidar.intensity}};
    j["trajectory"] = {{"half_width", s.trajectory.half_width},     {"loop_count", s.trajectory.loop_count},
                       {"speed", s.trajectory.speed},               {"pose_rate_hz", s.trajectory.pose_rate_hz},
                       {"start_time", s.trajectory.start_time},     {"height", s.trajectory.height}};
    j["noise"] = {{"range_sigma", s.noise.range_sigma},
                  {"pose_translation_sigma", s.noise.pose_translation_sigma},
                  {"pose_rotation_sigma", s.noise.pose_rotation_sigma},
                  {"fiducial_sigma", s.noise.fiducial_sigma}};
    return j;
}

double lemniscate_length(double half_width) { return arc_table(half_width).length.back(); }

Trajectory generate_trajectory(const TrajectorySpec& spec, const NoiseSpec& noise, std::uint64_t seed) {
    if (spec.loop_count < 1) throw ConfigError("loop_count must be at least 1");
    const ArcTable table = arc_table(spec.half_width);
    const double loop_length = table.length.back();
    const double duration = static_cast<double>(spec.loop_count) * loop_length / spec.speed;
    const auto samples = static_cast<std::size_t>(std::floor(duration * spec.pose_rate_hz + 1e-9)) + 1;

    std::mt19937_64 rng(derive_seed(seed, 0xfffffffful));
    std::normal_distribution<double> gauss(0.0, 1.0);
    const bool noisy = noise.pose_translation_sigma > 0.0 || noise.pose_rotation_sigma > 0.0;

    std::vector<TrajectorySample> out;
    out.reserve(samples);
    for (std::size_t k = 0; k < samples; ++k) {
        const double dt = static_cast<double>(k) / spec.pose_rate_hz;
        const double s = std::min(spec.speed * dt, static_cast<double>(spec.loop_count) * loop_length);
        const double loops = std::floor(s / loop_length);
        const double within = s - loops * loop_length;
        const double param = param_at_length(table, within);
        const Eigen::Vector2d p = lemniscate_point(spec.half_width, param);
        const Eigen::Vector2d d = lemniscate_tangent(spec.half_width, param);
        RigidTransform pose;
        pose.rotation = euler_zyx_to_rotation({0.0, 0.0, std::atan2(d.y(), d.x())});
        pose.translation = {p.x(), p.y(), spec.height};
        if (noisy) {
            const Eigen::Vector3d dt_noise(gauss(rng), gauss(rng), gauss(rng));
            const Eigen::Vector3d dr_noise(gauss(rng), gauss(rng), gauss(rng));
            pose.translation += noise.pose_translation_sigma * dt_noise;
            pose.rotation = pose.rotation * so3_exp(noise.pose_rotation_sigma * dr_noise);
        }
        out.push_back({spec.start_time + dt, pose});
    }
    return Trajectory(std::move(out));
}

SimulatedScan simulate_scan(const SceneModel& scene, const Trajectory& vehicle_traj, const RigidTransform& extrinsic,
                            double frame_timestamp, const LidarModel& lidar, double range_sigma, std::uint64_t seed) {
    if (scene.planes.empty()) throw ConfigError("scene has no planes");
    const auto rects = prepare(scene);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    SimulatedScan scan;
    scan.frame.frame_timestamp = frame_timestamp;
    const double step = 1.0 / (static_cast<double>(lidar.azimuth_steps) * lidar.spin_rate_hz);
    std::vector<Eigen::Vector3d> dirs(lidar.beams);
    for (std::size_t a = 0; a < lidar.azimuth_steps; ++a) {
        const double tau = static_cast<double>(a) * step;
        const RigidTransform sensor = compose(vehicle_traj.interpolate(frame_timestamp + tau), extrinsic);
        for (std::size_t b = 0; b < lidar.beams; ++b) {
            const Eigen::Vector3d d = lidar.ray_direction(b, a);
            const RayHit hit = cast(rects, sensor.translation, sensor.rotation * d, lidar.min_range, lidar.max_range);
            // One draw per ray keeps the stream aligned whether or not the ray hits.
            const double noise = range_sigma * gauss(rng);
            if (!std::isfinite(hit.range)) continue;
            const double r = hit.range + noise;
            if (r <= lidar.min_range) continue;
            const Eigen::Vector3d p = r * d;
            scan.frame.points.push_back({p.cast<float>(), lidar.intensity, static_cast<float>(tau)});
            scan.labels.push_back(hit.id);
        }
    }
    return scan;
}

SimulatedDataset simulate_dataset(const SceneModel& scene, const SimSpec& spec, int threads) {
    scene.validate();
    spec.validate();
    SimulatedDataset ds;
    ds.spec = spec;
    ds.scene = scene;
    ds.true_trajectory = generate_trajectory(spec.trajectory, {}, spec.seed);
    ds.trajectory = generate_trajectory(spec.trajectory, spec.noise, spec.seed);

    const double period = 1.0 / spec.lidar.spin_rate_hz;
    const double t0 = ds.true_trajectory.start_time();
    const double t1 = ds.true_trajectory.end_time();
    const auto count = static_cast<std::size_t>(std::floor((t1 - t0 - period) / period + 1e-9)) + 1;
    ds.frames.resize(count);
    ds.labels.resize(count);
    parallel_for(count, threads, [&](std::size_t i) {
        const double stamp = t0 + static_cast<double>(i) * period;
        auto scan = simulate_scan(scene, ds.true_trajectory, spec.extrinsic, stamp, spec.lidar, spec.noise.range_sigma,
                                  derive_seed(spec.seed, i));
        ds.frames[i] = std::move(scan.frame);
        ds.labels[i] = std::move(scan.labels);
    });

    std::mt19937_64 rng(derive_seed(spec.seed, 0xfffffffeul));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (const auto& f : scene.fiducials) {
        FiducialPoint p = f;
        if (spec.noise.fiducial_sigma > 0.0) {
            const double dx = gauss(rng);
            const double dy = gauss(rng);
            const double dz = gauss(rng);
            p.position += spec.noise.fiducial_sigma * Eigen::Vector3d(dx, dy, dz);
        }
        ds.fiducials.push_back(p);
    }
    return ds;
}

void write_dataset(const SimulatedDataset& ds, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir / "frames", ec);
    fs::create_directories(dir / "labels", ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    fs::remove(dir / "manifest.json", ec);

    std::vector<std::string> files;
    for (std::size_t i = 0; i < ds.frames.size(); ++i) {
        const std::string frame = fmt::format("frames/frame_{:06d}.lpcf", i);
        const std::string labels = fmt::format("labels/frame_{:06d}.labels", i);
        write_frame(ds.frames[i], dir / frame, FrameFormat::Binary);
        write_labels(ds.labels[i], dir / labels);
        files.push_back(frame);
        files.push_back(labels);
    }
    write_trajectory(ds.trajectory, dir / "trajectory.csv");
    write_fiducials(ds.fiducials, dir / "fiducials.csv");
    nlohmann::json truth = extrinsic_to_json(ds.spec.extrinsic);
    truth["seed"] = ds.spec.seed;
    truth["spec"] = to_json(ds.spec);
    write_json(dir / "ground_truth.json", truth);
    files.insert(files.end(), {"trajectory.csv", "fiducials.csv", "ground_truth.json"});

    write_manifest(dir, files,
                   {{"generator", "lpcalib synthetic_world"},
                    {"note", "synthetic scene and sensor mounting; dimensions are illustrative defaults"},
                    {"seed", ds.spec.seed},
                    {"spec", to_json(ds.spec)},
                    {"frame_count", ds.frames.size()}});
}

void generate_dataset(const SceneModel& scene, const SimSpec& spec, const std::filesystem::path& dir, int threads) {
    write_dataset(simulate_dataset(scene, spec, threads), dir);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    // SplitMix64 finalizer over the combined state.
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace lpcalib
