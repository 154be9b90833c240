#include "lpcalib/data_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string_view>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "lpcalib/errors.hpp"

namespace lpcalib {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 4> kMagic = {'L', 'P', 'C', 'F'};
constexpr std::uint16_t kBinaryVersion = 1;
constexpr std::string_view kAsciiHeader = "# LPCF-ASCII v1 timestamp=";
constexpr std::size_t kBinaryHeaderSize = 4 + 2 + 8 + 4;
constexpr std::size_t kBinaryPointSize = 5 * 4;

template <typename T>
void put_le(std::string& out, T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
    const U bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

template <typename T>
T get_le(const char* p) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        bits |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
    }
    return std::bit_cast<T>(bits);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    if (sep == ' ') {
        std::size_t i = 0;
        while (i < s.size()) {
            while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
            std::size_t j = i;
            while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
            if (j > i) out.push_back(s.substr(i, j - i));
            i = j;
        }
        return out;
    }
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.push_back(trim(s.substr(start, i - start)));
            start = i + 1;
        }
    }
    return out;
}

double parse_double(std::string_view token, const std::string& source, std::size_t line) {
    double value = 0.0;
    const auto* first = token.data();
    const auto* last = token.data() + token.size();
    if (!token.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) {
        throw ParseError(source, line, "not a number: '" + std::string(token) + "'");
    }
    if (!std::isfinite(value)) throw ParseError(source, line, "non-finite value");
    return value;
}

/// Iterates non-empty lines with 1-based line numbers.
template <typename F>
void for_each_line(std::string_view text, F&& f) {
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        ++line_no;
        std::string_view line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (!trim(line).empty()) f(line, line_no);
        if (end == text.size()) break;
        start = end + 1;
    }
}

void validate_point(const LidarPoint& p, const std::string& source, std::size_t where) {
    if (!p.position.allFinite()) throw ParseError(source, where, "non-finite point position");
    if (!(p.relative_time >= 0.0f && p.relative_time < kMaxRelativeTime)) {
        throw ParseError(source, where, "relative_time outside [0, 0.2) s");
    }
}

LidarFrame parse_binary_frame(const std::string& data, const std::string& source) {
    if (data.size() < kBinaryHeaderSize) throw ParseError(source, 0, "truncated header");
    const auto version = get_le<std::uint16_t>(data.data() + 4);
    if (version != kBinaryVersion) {
        throw SchemaError(source + ": unsupported frame format version " + std::to_string(version));
    }
    LidarFrame frame;
    frame.frame_timestamp = get_le<double>(data.data() + 6);
    const auto count = get_le<std::uint32_t>(data.data() + 14);
    if (count == 0) throw ParseError(source, 0, "empty frame");
    if (data.size() != kBinaryHeaderSize + std::size_t{count} * kBinaryPointSize) {
        throw ParseError(source, kBinaryHeaderSize, "payload size does not match point count " +
                                                        std::to_string(count));
    }
    frame.points.resize(count);
    const char* p = data.data() + kBinaryHeaderSize;
    for (std::uint32_t i = 0; i < count; ++i, p += kBinaryPointSize) {
        auto& pt = frame.points[i];
        pt.position = {get_le<float>(p), get_le<float>(p + 4), get_le<float>(p + 8)};
        pt.intensity = get_le<float>(p + 12);
        pt.relative_time = get_le<float>(p + 16);
        validate_point(pt, source, kBinaryHeaderSize + i * kBinaryPointSize);
    }
    return frame;
}

LidarFrame parse_ascii_frame(const std::string& data, const std::string& source) {
    LidarFrame frame;
    bool have_header = false;
    for_each_line(data, [&](std::string_view line, std::size_t line_no) {
        if (!have_header) {
            if (!line.starts_with(kAsciiHeader)) throw ParseError(source, line_no, "missing LPCF-ASCII header");
            frame.frame_timestamp = parse_double(trim(line.substr(kAsciiHeader.size())), source, line_no);
            have_header = true;
            return;
        }
        if (line.starts_with('#')) return;
        const auto fields = split(line, ' ');
        if (fields.size() < 5) {
            throw SchemaError(source + ":" + std::to_string(line_no) + ": expected 5 columns, got " +
                              std::to_string(fields.size()));
        }
        if (fields.size() > 5) throw ParseError(source, line_no, "trailing columns");
        LidarPoint pt;
        pt.position = {static_cast<float>(parse_double(fields[0], source, line_no)),
                       static_cast<float>(parse_double(fields[1], source, line_no)),
                       static_cast<float>(parse_double(fields[2], source, line_no))};
        pt.intensity = static_cast<float>(parse_double(fields[3], source, line_no));
        pt.relative_time = static_cast<float>(parse_double(fields[4], source, line_no));
        validate_point(pt, source, line_no);
        frame.points.push_back(pt);
    });
    if (!have_header) throw ParseError(source, 1, "missing LPCF-ASCII header");
    if (frame.points.empty()) throw ParseError(source, 1, "empty frame");
    return frame;
}

/// Checks the header row of a CSV file and returns the data rows with line numbers.
std::vector<std::pair<std::vector<std::string_view>, std::size_t>> csv_rows(
    const std::string& text, const std::string& source, const std::vector<std::string_view>& header) {
    std::vector<std::pair<std::vector<std::string_view>, std::size_t>> rows;
    bool have_header = false;
    for_each_line(text, [&](std::string_view line, std::size_t line_no) {
        auto fields = split(line, ',');
        if (!have_header) {
            if (fields != header) {
                std::string expected;
                for (auto h : header) expected += (expected.empty() ? "" : ",") + std::string(h);
                throw SchemaError(source + ": expected header '" + expected + "'");
            }
            have_header = true;
            return;
        }
        if (fields.size() != header.size()) {
            throw SchemaError(source + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(header.size()) + " columns, got " +
                              std::to_string(fields.size()));
        }
        rows.emplace_back(std::move(fields), line_no);
    });
    if (!have_header) throw SchemaError(source + ": missing CSV header");
    return rows;
}

}  // namespace

double LidarFrame::max_relative_time() const {
    float m = 0.0f;
    for (const auto& p : points) m = std::max(m, p.relative_time);
    return m;
}

std::vector<Eigen::Vector3d> LidarFrame::positions() const {
    std::vector<Eigen::Vector3d> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(p.position.cast<double>());
    return out;
}

LidarFrame read_frame(const fs::path& path) {
    const std::string data = read_file(path);
    const std::string source = path.string();
    if (data.size() >= 4 && std::equal(kMagic.begin(), kMagic.end(), data.begin())) {
        return parse_binary_frame(data, source);
    }
    return parse_ascii_frame(data, source);
}

void write_frame(const LidarFrame& frame, const fs::path& path, FrameFormat format) {
    std::string out;
    if (format == FrameFormat::Binary) {
        out.reserve(kBinaryHeaderSize + frame.points.size() * kBinaryPointSize);
        out.append(kMagic.data(), kMagic.size());
        put_le(out, kBinaryVersion);
        put_le(out, frame.frame_timestamp);
        put_le(out, static_cast<std::uint32_t>(frame.points.size()));
        for (const auto& p : frame.points) {
            put_le(out, p.position.x());
            put_le(out, p.position.y());
            put_le(out, p.position.z());
            put_le(out, p.intensity);
            put_le(out, p.relative_time);
        }
    } else {
        out = fmt::format("{}{:.17g}\n", kAsciiHeader, frame.frame_timestamp);
        for (const auto& p : frame.points) {
            out += fmt::format("{:.9g} {:.9g} {:.9g} {:.9g} {:.9g}\n", p.position.x(), p.position.y(),
                               p.position.z(), p.intensity, p.relative_time);
        }
    }
    write_text_atomic(path, out);
}

std::vector<fs::path> list_frame_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("frames directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto ext = entry.path().extension();
        if (entry.is_regular_file() && (ext == ".lpcf" || ext == ".txt")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

std::vector<LidarFrame> read_frames(const fs::path& dir) {
    std::vector<LidarFrame> frames;
    for (const auto& f : list_frame_files(dir)) frames.push_back(read_frame(f));
    return frames;
}

Trajectory read_trajectory(const fs::path& path) {
    const std::string text = read_file(path);
    const std::string source = path.string();
    const auto rows = csv_rows(text, source, {"timestamp", "tx", "ty", "tz", "qx", "qy", "qz", "qw"});
    std::vector<TrajectorySample> samples;
    samples.reserve(rows.size());
    for (const auto& [f, line_no] : rows) {
        double v[8];
        for (int i = 0; i < 8; ++i) v[i] = parse_double(f[i], source, line_no);
        Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
        const double norm = q.norm();
        if (norm < 0.99 || norm > 1.01) {
            throw InvalidQuaternion(source + ":" + std::to_string(line_no) + ": quaternion norm " +
                                    std::to_string(norm));
        }
        if (!samples.empty() && !(v[0] > samples.back().timestamp)) {
            throw NonMonotonicTimestamps(source + ":" + std::to_string(line_no) +
                                         ": timestamp not strictly increasing");
        }
        samples.push_back({v[0], RigidTransform::FromQuaternion(q, {v[1], v[2], v[3]})});
    }
    return Trajectory(std::move(samples));
}

void write_trajectory(const Trajectory& traj, const fs::path& path) {
    std::string out = "timestamp,tx,ty,tz,qx,qy,qz,qw\n";
    for (const auto& s : traj.samples()) {
        const Eigen::Quaterniond q = s.pose.quaternion();
        const auto& t = s.pose.translation;
        out += fmt::format("{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", s.timestamp,
                           t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w());
    }
    write_text_atomic(path, out);
}

std::vector<FiducialPoint> read_fiducials(const fs::path& path) {
    const std::string text = read_file(path);
    const std::string source = path.string();
    const auto rows = csv_rows(text, source, {"x", "y", "z"});
    std::vector<FiducialPoint> out;
    for (const auto& [f, line_no] : rows) {
        out.push_back({{parse_double(f[0], source, line_no), parse_double(f[1], source, line_no),
                        parse_double(f[2], source, line_no)}});
    }
    if (out.size() < 3) {
        throw TooFewFiducials(source + ": " + std::to_string(out.size()) + " fiducials, at least 3 required");
    }
    return out;
}

void write_fiducials(const std::vector<FiducialPoint>& fiducials, const fs::path& path) {
    std::string out = "x,y,z\n";
    for (const auto& f : fiducials) {
        out += fmt::format("{:.17g},{:.17g},{:.17g}\n", f.position.x(), f.position.y(), f.position.z());
    }
    write_text_atomic(path, out);
}

void write_labels(const std::vector<std::uint32_t>& labels, const fs::path& path) {
    std::string out;
    out.reserve(labels.size() * 4);
    for (auto l : labels) put_le(out, l);
    write_text_atomic(path, out);
}

std::vector<std::uint32_t> read_labels(const fs::path& path) {
    const std::string data = read_file(path);
    if (data.size() % 4 != 0) throw ParseError(path.string(), 0, "label file size not a multiple of 4");
    std::vector<std::uint32_t> out(data.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = get_le<std::uint32_t>(data.data() + 4 * i);
    return out;
}

FrameSequence associate_frames_with_poses(std::vector<LidarFrame> frames, const Trajectory& traj) {
    FrameSequence seq;
    double last = -std::numeric_limits<double>::infinity();
    for (auto& frame : frames) {
        if (frame.points.empty() || !traj.covers(frame.frame_timestamp)) {
            ++seq.dropped;
            continue;
        }
        if (!(frame.frame_timestamp > last)) {
            throw NonMonotonicTimestamps("frame timestamps not strictly increasing at t=" +
                                         fmt::format("{:.9f}", frame.frame_timestamp));
        }
        last = frame.frame_timestamp;
        seq.poses.push_back(traj.interpolate(frame.frame_timestamp));
        seq.frames.push_back(std::move(frame));
    }
    if (seq.frames.empty()) throw EmptyOverlap("no LiDAR frame falls inside the trajectory span");
    return seq;
}

std::string to_string(Stage stage) {
    switch (stage) {
        case Stage::Rough: return "rough";
        case Stage::Refined: return "refined";
        case Stage::ZCorrected: return "z_corrected";
    }
    return "unknown";
}

Stage stage_from_string(const std::string& name) {
    if (name == "rough") return Stage::Rough;
    if (name == "refined") return Stage::Refined;
    if (name == "z_corrected") return Stage::ZCorrected;
    throw SchemaError("unknown stage '" + name + "'");
}

nlohmann::json extrinsic_to_json(const RigidTransform& t) {
    nlohmann::json j;
    const Eigen::Matrix4d m = t.matrix();
    auto& arr = j["extrinsic"] = nlohmann::json::array();
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) arr.push_back(m(r, c));
    const auto euler = rotation_to_euler_zyx(t.rotation).angles;
    constexpr double deg = 180.0 / std::numbers::pi;
    j["euler_zyx_deg"] = {euler.roll * deg, euler.pitch * deg, euler.yaw * deg};
    j["translation_m"] = {t.translation.x(), t.translation.y(), t.translation.z()};
    return j;
}

RigidTransform extrinsic_from_json(const nlohmann::json& j) {
    if (!j.contains("extrinsic") || !j["extrinsic"].is_array() || j["extrinsic"].size() != 16) {
        throw SchemaError("expected \"extrinsic\" with 16 row-major numbers");
    }
    Eigen::Matrix4d m;
    for (int i = 0; i < 16; ++i) {
        const auto& v = j["extrinsic"][i];
        if (!v.is_number()) throw SchemaError("extrinsic entry " + std::to_string(i) + " is not a number");
        m(i / 4, i % 4) = v.get<double>();
    }
    const Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
    const double err = orthonormality_error(r);
    if (err > 1e-6) throw SchemaError("extrinsic rotation block is not a rotation");
    // Written results round-trip exactly, so resumed stages see identical bits.
    if (err <= 1e-12) return {r, m.topRightCorner<3, 1>()};
    return RigidTransform::FromMatrix(m);
}

nlohmann::json to_json(const CalibrationResult& result) {
    nlohmann::json j = extrinsic_to_json(result.extrinsic);
    j["stage"] = to_string(result.stage);
    const auto& d = result.diagnostics;
    j["diagnostics"] = {{"iterations", d.iterations},
                        {"initial_cost", d.initial_cost},
                        {"final_cost", d.final_cost},
                        {"converged", d.converged},
                        {"details", d.extra}};
    j["parent"] = result.parent ? to_json(*result.parent) : nlohmann::json(nullptr);
    return j;
}

CalibrationResult calibration_result_from_json(const nlohmann::json& j) {
    CalibrationResult r;
    r.extrinsic = extrinsic_from_json(j);
    if (!j.contains("stage") || !j["stage"].is_string()) throw SchemaError("result JSON missing \"stage\"");
    r.stage = stage_from_string(j["stage"].get<std::string>());
    if (j.contains("diagnostics")) {
        const auto& d = j["diagnostics"];
        r.diagnostics.iterations = d.value("iterations", std::size_t{0});
        r.diagnostics.initial_cost = d.value("initial_cost", 0.0);
        r.diagnostics.final_cost = d.value("final_cost", 0.0);
        r.diagnostics.converged = d.value("converged", false);
        if (d.contains("details")) r.diagnostics.extra = d["details"];
    }
    if (j.contains("parent") && !j["parent"].is_null()) {
        r.parent = std::make_shared<CalibrationResult>(calibration_result_from_json(j["parent"]));
    }
    const auto rank = [](Stage s) { return static_cast<int>(s); };
    if (r.parent && rank(r.parent->stage) != rank(r.stage) - 1) {
        throw SchemaError("result stage '" + to_string(r.stage) + "' has parent stage '" +
                          to_string(r.parent->stage) + "'");
    }
    if (!r.parent && r.stage != Stage::Rough) {
        throw SchemaError("result stage '" + to_string(r.stage) + "' has no parent result");
    }
    return r;
}

RigidTransform extrinsic_from_any_json(const nlohmann::json& j) {
    if (!j.is_object()) throw SchemaError("extrinsic must be a JSON object");
    if (j.contains("extrinsic")) return extrinsic_from_json(j);
    if (!j.contains("euler_zyx_deg") || !j.contains("translation_m")) {
        throw SchemaError("expected \"extrinsic\" or \"euler_zyx_deg\" with \"translation_m\"");
    }
    const auto& e = j["euler_zyx_deg"];
    const auto& t = j["translation_m"];
    const auto numbers3 = [](const nlohmann::json& a) {
        return a.is_array() && a.size() == 3 && std::all_of(a.begin(), a.end(), [](const auto& x) { return x.is_number(); });
    };
    if (!numbers3(e) || !numbers3(t)) throw SchemaError("euler_zyx_deg and translation_m need 3 numbers each");
    const EulerZYX angles{e[0].get<double>() * (std::numbers::pi / 180.0), e[1].get<double>() * (std::numbers::pi / 180.0), e[2].get<double>() * (std::numbers::pi / 180.0)};
    return {euler_zyx_to_rotation(angles), {t[0].get<double>(), t[1].get<double>(), t[2].get<double>()}};
}

nlohmann::json read_json(const fs::path& path) {
    const std::string text = read_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string(), 0, e.what());
    }
}

void write_text_atomic(const fs::path& path, const std::string& contents) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

std::string read_file_bytes(const fs::path& path) { return read_file(path); }

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw IoError("SHA-256 computation failed");
    }
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", digest[i]);
    return out;
}

void write_manifest(const fs::path& dir, const std::vector<std::string>& files, nlohmann::json header) {
    nlohmann::json listing = nlohmann::json::array();
    std::string all;
    for (const auto& f : files) {
        const std::string digest = sha256_hex(read_file(dir / f));
        listing.push_back({{"path", f}, {"sha256", digest}});
        all += f + ":" + digest + "\n";
    }
    header["files"] = std::move(listing);
    header["content_sha256"] = sha256_hex(all);
    write_json(dir / "manifest.json", header);
}

}  // namespace lpcalib
