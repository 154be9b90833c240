#include "lpcalib/z_correction.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <string>

#include "lpcalib/errors.hpp"
#include "lpcalib/parallel.hpp"

namespace lpcalib {

namespace {

/// Map indices within the horizontal radius of one fiducial.
std::vector<std::size_t> horizontal_candidates(const GlobalMap& map, const Eigen::Vector3d& f, double radius) {
    const double r2 = radius * radius;
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < map.points.size(); ++i) {
        const Eigen::Vector3d& p = map.points[i];
        const double dx = p.x() - f.x();
        const double dy = p.y() - f.y();
        if (dx * dx + dy * dy <= r2) out.push_back(i);
    }
    return out;
}

}  // namespace

ZFixResult correct_z(const GlobalMap& map, const std::vector<FiducialPoint>& fiducials, const ZFixParams& params) {
    if (fiducials.size() < 3) throw TooFewFiducials("need at least 3 fiducials, got " + std::to_string(fiducials.size()));
    if (map.empty()) throw StageFailure("zfix", "map is empty");
    if (!(params.horizontal_radius > 0.0) || !(params.z_gate > 0.0)) {
        throw ConfigError("zfix radius and z gate must be positive");
    }

    std::vector<std::vector<std::size_t>> candidates(fiducials.size());
    parallel_for(fiducials.size(), params.threads, [&](std::size_t i) {
        candidates[i] = horizontal_candidates(map, fiducials[i].position, params.horizontal_radius);
    });

    ZFixResult result;
    result.fiducial_count = fiducials.size();
    std::vector<FiducialMatch> matches(fiducials.size());

    // Matching is done against the map shifted by the current z_fix.
    const auto associate = [&](double z_fix) {
        for (std::size_t i = 0; i < fiducials.size(); ++i) {
            const Eigen::Vector3d& f = fiducials[i].position;
            FiducialMatch m;
            m.fiducial = i;
            double best = std::numeric_limits<double>::infinity();
            for (auto idx : candidates[i]) {
                Eigen::Vector3d p = map.points[idx];
                p.z() += z_fix;
                if (std::abs(p.z() - f.z()) >= params.z_gate) continue;
                const double d2 = (p - f).squaredNorm();
                if (d2 < best) {
                    best = d2;
                    m.matched = true;
                    m.map_point = map.points[idx];
                }
            }
            matches[i] = m;
        }
    };
    const auto mean_offset = [&]() {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < matches.size(); ++i) {
            if (!matches[i].matched) continue;
            sum += fiducials[i].position.z() - matches[i].map_point.z();
            ++n;
        }
        if (n == 0) throw StageFailure("zfix", "no fiducial has a map point within the search radius");
        return sum / static_cast<double>(n);
    };

    double z_fix = 0.0;
    for (std::size_t it = 0; it < params.max_iterations; ++it) {
        associate(z_fix);
        const double next = mean_offset();
        result.iterations = it + 1;
        const double change = std::abs(next - z_fix);
        z_fix = next;
        if (change < params.tolerance) break;
    }
    associate(z_fix);
    z_fix = mean_offset();

    // Both residuals use the final association, so after <= before holds exactly.
    double before = 0.0;
    double after = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < matches.size(); ++i) {
        auto& m = matches[i];
        if (!m.matched) {
            result.unmatched.push_back(i);
            continue;
        }
        const double dz = fiducials[i].position.z() - m.map_point.z();
        before += dz * dz;
        after += (dz - z_fix) * (dz - z_fix);
        Eigen::Vector3d shifted = m.map_point;
        shifted.z() += z_fix;
        m.distance = (shifted - fiducials[i].position).norm();
        ++n;
    }
    result.z_fix = z_fix;
    result.rms_before = std::sqrt(before / static_cast<double>(n));
    result.rms_after = std::min(result.rms_before, std::sqrt(after / static_cast<double>(n)));
    result.matches = std::move(matches);
    return result;
}

RigidTransform apply_z_fix(const RigidTransform& extrinsic, double z_fix) {
    RigidTransform out = extrinsic;
    out.translation.z() += z_fix;
    return out;
}

CalibrationResult run_z_correction(const FrameSequence& seq, const CalibrationResult& input,
                                   const std::vector<FiducialPoint>& fiducials, const ZFixParams& params,
                                   const MapOptions& map_options, const Trajectory* trajectory, ZFixResult* report) {
    const auto start = std::chrono::steady_clock::now();
    const GlobalMap map = build_map(seq, input.extrinsic, map_options, trajectory);
    ZFixResult fix = correct_z(map, fiducials, params);

    CalibrationResult result;
    result.extrinsic = apply_z_fix(input.extrinsic, fix.z_fix);
    result.stage = Stage::ZCorrected;
    result.parent = std::make_shared<const CalibrationResult>(input);
    auto& d = result.diagnostics;
    d.iterations = fix.iterations;
    d.initial_cost = fix.rms_before;
    d.final_cost = fix.rms_after;
    d.converged = true;
    d.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    d.extra = {{"z_fix", fix.z_fix},
               {"matched_fiducials", fix.fiducial_count - fix.unmatched.size()},
               {"unmatched_fiducials", fix.unmatched}};
    if (report) *report = std::move(fix);
    return result;
}

nlohmann::json to_json(const ZFixResult& result) {
    nlohmann::json matches = nlohmann::json::array();
    for (const auto& m : result.matches) {
        nlohmann::json j = {{"fiducial", m.fiducial}, {"matched", m.matched}};
        if (m.matched) {
            j["map_point"] = {m.map_point.x(), m.map_point.y(), m.map_point.z()};
            j["distance_m"] = m.distance;
        }
        matches.push_back(j);
    }
    return {{"z_fix_m", result.z_fix},       {"rms_before_m", result.rms_before},
            {"rms_after_m", result.rms_after}, {"fiducial_count", result.fiducial_count},
            {"iterations", result.iterations}, {"unmatched", result.unmatched},
            {"matches", matches}};
}

}  // namespace lpcalib
