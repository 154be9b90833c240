#include "lpcalib/mapping.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>

#include "lpcalib/errors.hpp"
#include "lpcalib/motion_compensation.hpp"
#include "lpcalib/parallel.hpp"

namespace lpcalib {

namespace {

struct CellHash {
    std::size_t operator()(const Eigen::Vector3i& c) const {
        std::uint64_t h = static_cast<std::uint32_t>(c.x());
        h = h * 0x9E3779B97F4A7C15ull ^ static_cast<std::uint32_t>(c.y());
        h = h * 0x9E3779B97F4A7C15ull ^ static_cast<std::uint32_t>(c.z());
        return static_cast<std::size_t>(h ^ (h >> 29));
    }
};

struct CellEq {
    bool operator()(const Eigen::Vector3i& a, const Eigen::Vector3i& b) const { return a == b; }
};

}  // namespace

GlobalMap build_map(const FrameSequence& seq, const RigidTransform& extrinsic, const MapOptions& options,
                    const Trajectory* trajectory) {
    if (options.deskew && trajectory == nullptr) throw ConfigError("de-skewed map requires the trajectory");
    GlobalMap map;
    map.subsample_stride = std::max<std::size_t>(options.subsample_stride, 1);

    std::vector<std::size_t> offsets(seq.size() + 1, 0);
    for (std::size_t i = 0; i < seq.size(); ++i) offsets[i + 1] = offsets[i] + seq.frames[i].points.size();
    map.source_point_count = offsets.back();

    // Frame-major order; the stride runs over the concatenated point list.
    std::vector<std::vector<Eigen::Vector3d>> per_frame(seq.size());
    parallel_for(seq.size(), options.threads, [&](std::size_t i) {
        const auto& frame = seq.frames[i];
        const RigidTransform lidar = lidar_pose(seq.poses[i], extrinsic);
        std::vector<Eigen::Vector3f> sensor_points;
        if (options.deskew) {
            sensor_points = deskew(frame, *trajectory, extrinsic).points;
        } else {
            sensor_points.reserve(frame.points.size());
            for (const auto& p : frame.points) sensor_points.push_back(p.position);
        }
        auto& out = per_frame[i];
        for (std::size_t j = 0; j < sensor_points.size(); ++j) {
            if ((offsets[i] + j) % map.subsample_stride != 0) continue;
            out.push_back(lidar * sensor_points[j].cast<double>());
        }
    });

    for (std::size_t i = 0; i < per_frame.size(); ++i) {
        for (const auto& p : per_frame[i]) {
            map.points.push_back(p);
            map.source_frame.push_back(static_cast<std::uint32_t>(i));
        }
    }
    if (!map.points.empty()) {
        map.bounds_min = map.bounds_max = map.points.front();
        for (const auto& p : map.points) {
            map.bounds_min = map.bounds_min.cwiseMin(p);
            map.bounds_max = map.bounds_max.cwiseMax(p);
        }
    }
    return map;
}

std::vector<Eigen::Vector3d> voxel_downsample(std::span<const Eigen::Vector3d> points, double voxel_size) {
    std::unordered_map<Eigen::Vector3i, std::size_t, CellHash, CellEq> cells;
    std::vector<Eigen::Vector3d> sums;
    std::vector<std::size_t> counts;
    for (const auto& p : points) {
        const Eigen::Vector3i c = (p / voxel_size).array().floor().cast<int>();
        auto [it, inserted] = cells.try_emplace(c, sums.size());
        if (inserted) {
            sums.push_back(Eigen::Vector3d::Zero());
            counts.push_back(0);
        }
        sums[it->second] += p;
        ++counts[it->second];
    }
    for (std::size_t i = 0; i < sums.size(); ++i) sums[i] /= static_cast<double>(counts[i]);
    return sums;
}

void export_map(const GlobalMap& map, const std::filesystem::path& path, double voxel_size, bool with_frame_column) {
    if (map.empty()) throw DataError("cannot export an empty map");
    std::string out;
    if (voxel_size > 0.0) {
        for (const auto& p : voxel_downsample(map.points, voxel_size)) {
            out += fmt::format("{:.9f} {:.9f} {:.9f}\n", p.x(), p.y(), p.z());
        }
    } else {
        for (std::size_t i = 0; i < map.points.size(); ++i) {
            const auto& p = map.points[i];
            if (with_frame_column) {
                out += fmt::format("{:.9f} {:.9f} {:.9f} {}\n", p.x(), p.y(), p.z(), map.source_frame[i]);
            } else {
                out += fmt::format("{:.9f} {:.9f} {:.9f}\n", p.x(), p.y(), p.z());
            }
        }
    }
    try {
        write_text_atomic(path, out);
    } catch (const std::filesystem::filesystem_error& e) {
        throw IoError(e.what());
    }
}

std::vector<Eigen::Vector3d> read_xyz(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<Eigen::Vector3d> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ss(line);
        Eigen::Vector3d p;
        if (!(ss >> p.x() >> p.y() >> p.z())) throw ParseError(path.string(), line_no, "expected x y z");
        out.push_back(p);
    }
    return out;
}

}  // namespace lpcalib
