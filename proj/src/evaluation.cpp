#include "lpcalib/evaluation.hpp"

#include <cmath>
#include <numbers>

#include "lpcalib/errors.hpp"

namespace lpcalib {

namespace {

constexpr double kDeg = 180.0 / std::numbers::pi;

ExtrinsicError from_values(const std::array<double, 6>& v) { return {v[0], v[1], v[2], v[3], v[4], v[5]}; }

nlohmann::json error_json(const ExtrinsicError& e) {
    return {{"dtx_m", e.tx}, {"dty_m", e.ty}, {"dtz_m", e.tz}, {"droll_deg", e.roll}, {"dpitch_deg", e.pitch},
            {"dyaw_deg", e.yaw}};
}

}  // namespace

double ExtrinsicError::angle_deg() const {
    return rotation_angle(euler_zyx_to_rotation({roll / kDeg, pitch / kDeg, yaw / kDeg})) * kDeg;
}

ExtrinsicError extrinsic_error(const RigidTransform& reference, const RigidTransform& estimate) {
    const RigidTransform delta = compose(invert(reference), estimate);
    const auto e = rotation_to_euler_zyx(delta.rotation).angles;
    return {delta.translation.x(), delta.translation.y(), delta.translation.z(),
            e.roll * kDeg,         e.pitch * kDeg,        e.yaw * kDeg};
}

ErrorReport make_error_report(const RigidTransform& reference, const std::vector<RigidTransform>& estimates) {
    return make_error_report(std::vector<RigidTransform>(estimates.size(), reference), estimates);
}

ErrorReport make_error_report(const std::vector<RigidTransform>& references,
                              const std::vector<RigidTransform>& estimates) {
    if (references.size() != estimates.size()) throw ConfigError("reference and estimate counts differ");
    ErrorReport report;
    if (estimates.empty()) return report;
    std::array<double, 6> sum{};
    for (std::size_t i = 0; i < estimates.size(); ++i) {
        const auto err = extrinsic_error(references[i], estimates[i]);
        report.max_angle_deg = std::max(report.max_angle_deg,
                                        rotation_angle(references[i].rotation.transpose() * estimates[i].rotation) * kDeg);
        auto v = err.values();
        for (auto& x : v) x = std::abs(x);
        for (int a = 0; a < 6; ++a) sum[a] += v[a];
        report.per_dataset.push_back(from_values(v));
    }
    const double n = static_cast<double>(estimates.size());
    std::array<double, 6> mean{};
    for (int a = 0; a < 6; ++a) mean[a] = sum[a] / n;
    std::array<double, 6> var{};
    for (const auto& e : report.per_dataset) {
        const auto v = e.values();
        for (int a = 0; a < 6; ++a) var[a] += (v[a] - mean[a]) * (v[a] - mean[a]) / n;
    }
    report.mean = from_values(mean);
    report.variance = from_values(var);
    return report;
}

nlohmann::json to_json(const ErrorReport& report) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& e : report.per_dataset) per.push_back(error_json(e));
    return {{"per_dataset", per},
            {"mae", error_json(report.mean)},
            {"variance", error_json(report.variance)},
            {"max_angle_deg", report.max_angle_deg},
            {"count", report.per_dataset.size()}};
}

}  // namespace lpcalib
