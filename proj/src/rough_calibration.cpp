#include "lpcalib/rough_calibration.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <chrono>
#include <cmath>
#include <map>
#include <numbers>

#include <fmt/format.h>

#include "lpcalib/errors.hpp"
#include "lpcalib/evaluation.hpp"
#include "lpcalib/mapping.hpp"
#include "lpcalib/motion_compensation.hpp"
#include "lpcalib/parallel.hpp"

namespace lpcalib {

namespace {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

constexpr std::size_t kBlock = 2048;

double huber(double r, double delta) {
    const double a = std::abs(r);
    return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

double huber_weight(double r, double delta) {
    const double a = std::abs(r);
    return a <= delta ? 1.0 : delta / a;
}

/// Flattened (frame, point) list of the window.
struct PointRef {
    std::size_t frame;
    std::size_t index;
};

std::vector<PointRef> point_refs(const WindowProblem& problem) {
    std::vector<PointRef> refs;
    refs.reserve(problem.point_count());
    for (std::size_t f = 0; f < problem.frames().size(); ++f) {
        for (std::size_t i = 0; i < problem.frames()[f].points.size(); ++i) refs.push_back({f, i});
    }
    return refs;
}

struct MatchResult {
    bool matched = false;
    std::size_t patch = 0;
    double residual = 0.0;
};

/// Residual computation in the anchor LiDAR frame: with B = T^-1 * A * T the
/// point-to-plane distance n . (B p - c) equals N^T (x_I1 - X).
class WindowEvaluator {
public:
    WindowEvaluator(const WindowProblem& problem, const RigidTransform& extrinsic) : problem_(problem) {
        const RigidTransform inv = invert(extrinsic);
        for (std::size_t f = 0; f < problem.frames().size(); ++f) {
            conj_.push_back(compose(compose(inv, problem.relative_pose(f)), extrinsic));
        }
    }

    const RigidTransform& conjugated(std::size_t frame) const { return conj_[frame]; }

    MatchResult match(const PointRef& ref, double gate, double cos_max_angle, double max_centroid_sq,
                      std::size_t candidates, std::vector<Neighbor>& scratch) const {
        const auto& frame = problem_.frames()[ref.frame];
        const RigidTransform& b = conj_[ref.frame];
        const Eigen::Vector3d q = b * frame.points[ref.index];
        const Eigen::Vector3d n = b.rotation * frame.normals[ref.index];
        problem_.patch_index().knn(q, candidates, max_centroid_sq, scratch);
        for (const auto& nb : scratch) {
            const auto& patch = problem_.patches()[nb.index];
            if (std::abs(patch.normal.dot(n)) < cos_max_angle) continue;
            const double r = patch.normal.dot(q - patch.centroid);
            if (std::abs(r) > gate) continue;
            return {true, nb.index, r};
        }
        return {};
    }

private:
    const WindowProblem& problem_;
    std::vector<RigidTransform> conj_;
};

/// Copy of the frame with de-skewed positions; frames whose scan is not covered
/// by the trajectory are returned unchanged.
LidarFrame deskewed_copy(const LidarFrame& frame, const Trajectory& traj, const RigidTransform& extrinsic) {
    if (!traj.covers(frame.frame_timestamp) || !traj.covers(frame.frame_timestamp + frame.max_relative_time())) {
        return frame;
    }
    const DeskewedFrame d = deskew(frame, traj, extrinsic);
    LidarFrame out = frame;
    for (std::size_t i = 0; i < out.points.size(); ++i) out.points[i].position = d.points[i];
    return out;
}

bool moved_beyond(const RigidTransform& a, const RigidTransform& b, double rotation_deg, double translation) {
    return rotation_angle(a.rotation.transpose() * b.rotation) * 180.0 / std::numbers::pi > rotation_deg ||
           (a.translation - b.translation).norm() > translation;
}

double tz_prior_cost(const RigidTransform& t, double center, double weight) {
    const double d = t.translation.z() - center;
    return 0.5 * weight * d * d;
}

}  // namespace

Eigen::Vector3d project_to_anchor(const Eigen::Vector3d& x_ln, const RigidTransform& t_i1, const RigidTransform& t_in,
                                  const RigidTransform& extrinsic) {
    return invert(t_i1) * (t_in * (extrinsic * x_ln));
}

FeatureFrame make_feature_frame(const LidarFrame& frame, const RigidTransform& pose, const RoughParams& params) {
    std::vector<Eigen::Vector3d> pts = frame.positions();
    if (params.frame_voxel_size > 0.0) pts = voxel_downsample(pts, params.frame_voxel_size);
    FeatureParams feature_params = params.features;
    // Evaluating about three candidates per kept point is enough to fill the cap.
    if (params.max_points_per_frame > 0) {
        feature_params.query_stride =
            std::max(feature_params.query_stride, pts.size() / (3 * params.max_points_per_frame));
    }
    const FeatureCloud cloud = select_planar_points(pts, feature_params, params.threads);
    FeatureFrame out;
    out.pose = pose;
    const std::size_t count = cloud.planar_indices.size();
    const std::size_t keep = params.max_points_per_frame > 0 ? std::min(count, params.max_points_per_frame) : count;
    out.points.reserve(keep);
    out.normals.reserve(keep);
    for (std::size_t k = 0; k < keep; ++k) {
        const auto i = cloud.planar_indices[k * count / keep];
        out.points.push_back(pts[i]);
        out.normals.push_back(cloud.normals[i]);
    }
    return out;
}

WindowProblem::WindowProblem(RigidTransform anchor_pose, std::vector<PlanePatch> patches,
                             std::vector<FeatureFrame> frames)
    : anchor_pose_(std::move(anchor_pose)), patches_(std::move(patches)), frames_(std::move(frames)) {
    const RigidTransform anchor_inv = invert(anchor_pose_);
    for (const auto& f : frames_) relative_.push_back(compose(anchor_inv, f.pose));
    std::vector<Eigen::Vector3d> centroids;
    centroids.reserve(patches_.size());
    for (const auto& p : patches_) centroids.push_back(p.centroid);
    index_ = KdTree(centroids);
}

std::size_t WindowProblem::point_count() const {
    std::size_t n = 0;
    for (const auto& f : frames_) n += f.points.size();
    return n;
}

WindowProblem make_window(const FeatureFrame& anchor_features, const LidarFrame& anchor_scan,
                          std::vector<FeatureFrame> frames, const RoughParams& params) {
    auto patches = extract_planes_adaptive(anchor_scan.positions(), params.patches, Eigen::Vector3d::Zero(), 0);
    std::erase_if(patches, [&](const PlanePatch& p) { return p.eigenvalues[1] < params.min_patch_lambda2; });
    return WindowProblem(anchor_features.pose, std::move(patches), std::move(frames));
}

std::vector<Correspondence> associate(const WindowProblem& problem, const RigidTransform& extrinsic, double gate,
                                      const RoughParams& params) {
    std::vector<Correspondence> out;
    window_cost(problem, extrinsic, gate, extrinsic.translation.z(), params, &out);
    if (out.size() < params.min_correspondences) {
        throw InsufficientCorrespondences(out.size(), params.min_correspondences);
    }
    return out;
}

double point_to_plane_residual(const WindowProblem& problem, const Correspondence& c, const RigidTransform& extrinsic) {
    const PlanePatch& patch = problem.patches()[c.patch];
    const Eigen::Vector3d x_i1 =
        project_to_anchor(c.point, problem.anchor_pose(), problem.frames()[c.frame].pose, extrinsic);
    const Eigen::Vector3d big_x = extrinsic * patch.centroid;
    const Eigen::Vector3d big_n = extrinsic.rotation * patch.normal;
    return big_n.dot(x_i1 - big_x);
}

Eigen::Matrix<double, 1, 6> point_to_plane_jacobian(const WindowProblem& problem, const Correspondence& c,
                                                    const RigidTransform& extrinsic) {
    const RigidTransform b =
        compose(compose(invert(extrinsic), problem.relative_pose(c.frame)), extrinsic);
    const Eigen::Vector3d& n = problem.patches()[c.patch].normal;
    const Eigen::Vector3d q = b * c.point;
    Eigen::Matrix<double, 1, 6> j;
    j.head<3>() = n.transpose() * (skew(q) - b.rotation * skew(c.point));
    j.tail<3>() = n.transpose() * (b.rotation - Eigen::Matrix3d::Identity());
    return j;
}

double window_cost(const WindowProblem& problem, const RigidTransform& extrinsic, double gate, double tz_center,
                   const RoughParams& params, std::vector<Correspondence>* matches) {
    const WindowEvaluator eval(problem, extrinsic);
    const auto refs = point_refs(problem);
    const double cos_max = std::cos(params.max_normal_angle_deg * std::numbers::pi / 180.0);
    const double max_sq = params.max_centroid_distance * params.max_centroid_distance;
    const double unmatched = huber(gate, params.huber_delta);

    std::vector<MatchResult> results(refs.size());
    const std::size_t blocks = (refs.size() + kBlock - 1) / kBlock;
    std::vector<double> partial(blocks, 0.0);
    parallel_blocks(refs.size(), kBlock, params.threads, [&](std::size_t begin, std::size_t end) {
        std::vector<Neighbor> scratch;
        double sum = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            results[i] = eval.match(refs[i], gate, cos_max, max_sq, params.candidate_patches, scratch);
            sum += results[i].matched ? huber(results[i].residual, params.huber_delta) : unmatched;
        }
        partial[begin / kBlock] = sum;
    });
    double cost = 0.0;
    for (double p : partial) cost += p;
    cost += tz_prior_cost(extrinsic, tz_center, params.tz_prior_weight);

    if (matches) {
        matches->clear();
        for (std::size_t i = 0; i < refs.size(); ++i) {
            if (!results[i].matched) continue;
            matches->push_back({problem.frames()[refs[i].frame].points[refs[i].index], refs[i].frame, results[i].patch});
        }
    }
    return cost;
}

std::pair<RigidTransform, SolveReport> solve_window(const WindowProblem& problem, const RigidTransform& initial,
                                                    double gate, const RoughParams& params, double tz_center) {
    SolveReport report;
    if (std::isnan(tz_center)) tz_center = initial.translation.z();
    const double prior_sqrt = std::sqrt(params.tz_prior_weight);

    RigidTransform estimate = initial;
    std::vector<Correspondence> corr;
    double cost = window_cost(problem, estimate, gate, tz_center, params, &corr);
    report.initial_cost = cost;
    report.trace.push_back(estimate);
    report.cost_trace.push_back(cost);

    double lambda = 1e-4;
    for (std::size_t it = 0; it < params.max_iterations; ++it) {
        report.iterations = it + 1;
        report.correspondences = corr.size();
        if (corr.size() < params.min_correspondences) {
            throw InsufficientCorrespondences(corr.size(), params.min_correspondences);
        }

        // Normal equations from fixed-size blocks summed in block order.
        const std::size_t blocks = (corr.size() + kBlock - 1) / kBlock;
        std::vector<Matrix6d> h_parts(blocks, Matrix6d::Zero());
        std::vector<Vector6d> g_parts(blocks, Vector6d::Zero());
        parallel_blocks(corr.size(), kBlock, params.threads, [&](std::size_t begin, std::size_t end) {
            Matrix6d h = Matrix6d::Zero();
            Vector6d g = Vector6d::Zero();
            for (std::size_t i = begin; i < end; ++i) {
                const double r = point_to_plane_residual(problem, corr[i], estimate);
                const Eigen::Matrix<double, 1, 6> j = point_to_plane_jacobian(problem, corr[i], estimate);
                const double w = huber_weight(r, params.huber_delta);
                h.noalias() += w * j.transpose() * j;
                g.noalias() += w * r * j.transpose();
            }
            h_parts[begin / kBlock] = h;
            g_parts[begin / kBlock] = g;
        });
        Matrix6d h = Matrix6d::Zero();
        Vector6d g = Vector6d::Zero();
        for (std::size_t b = 0; b < blocks; ++b) {
            h += h_parts[b];
            g += g_parts[b];
        }
        // t_z of T * exp(xi) moves by row 2 of R times the translation part.
        Eigen::Matrix<double, 1, 6> jp = Eigen::Matrix<double, 1, 6>::Zero();
        jp.tail<3>() = prior_sqrt * estimate.rotation.row(2);
        const double rp = prior_sqrt * (estimate.translation.z() - tz_center);
        h += jp.transpose() * jp;
        g += rp * jp.transpose();

        const Eigen::SelfAdjointEigenSolver<Matrix6d> es(h, Eigen::EigenvaluesOnly);
        const double ev_min = es.eigenvalues()[0];
        const double ev_max = es.eigenvalues()[5];
        report.condition_number = ev_min > 0.0 ? ev_max / ev_min : std::numeric_limits<double>::infinity();
        if (!(report.condition_number <= params.max_condition_number)) {
            throw SingularHessian(report.condition_number);
        }

        bool accepted = false;
        bool small_step = false;
        for (int attempt = 0; attempt < 12; ++attempt) {
            Matrix6d damped = h;
            damped.diagonal() += lambda * h.diagonal();
            const Vector6d delta = damped.ldlt().solve(-g);
            if (delta.norm() < params.step_tolerance) {
                small_step = true;
                break;
            }
            const RigidTransform candidate = compose(estimate, exp(TangentVector::FromStacked(delta)));
            std::vector<Correspondence> candidate_corr;
            const double candidate_cost = window_cost(problem, candidate, gate, tz_center, params, &candidate_corr);
            if (candidate_cost <= cost) {
                estimate = candidate;
                cost = candidate_cost;
                corr = std::move(candidate_corr);
                lambda = std::max(lambda / 3.0, 1e-9);
                accepted = true;
                break;
            }
            lambda *= 4.0;
        }
        if (accepted) {
            report.trace.push_back(estimate);
            report.cost_trace.push_back(cost);
        }
        if (small_step || !accepted) {
            report.converged = true;
            break;
        }
    }
    report.final_cost = cost;
    report.correspondences = corr.size();
    return {estimate, report};
}

CalibrationResult run_rough(const FrameSequence& seq, const Trajectory* trajectory, const RigidTransform& initial,
                            const RoughParams& params, RoughReport* report) {
    const auto start = std::chrono::steady_clock::now();
    if (params.window_size < 2) throw ConfigError("rough window size must be at least 2");
    if (params.stride < 1) throw ConfigError("rough window stride must be at least 1");
    if (params.deskew && trajectory == nullptr) throw ConfigError("rough de-skew needs the trajectory");
    if (seq.size() < params.window_size) {
        throw StageFailure("rough", "need at least " + std::to_string(params.window_size) + " posed frames, got " +
                                        std::to_string(seq.size()));
    }
    RoughReport local;
    RoughReport& rep = report ? *report : local;
    rep = RoughReport{};

    // Frames shared by overlapping windows are prepared once per de-skew reference.
    struct Prepared {
        LidarFrame scan;
        FeatureFrame features;
    };
    std::map<std::size_t, Prepared> cache;
    RigidTransform deskew_reference = initial;
    const auto prepared = [&](std::size_t i) -> const Prepared& {
        auto it = cache.find(i);
        if (it == cache.end()) {
            Prepared p;
            p.scan = params.deskew ? deskewed_copy(seq.frames[i], *trajectory, deskew_reference) : seq.frames[i];
            p.features = make_feature_frame(p.scan, seq.poses[i], params);
            it = cache.emplace(i, std::move(p)).first;
        }
        return it->second;
    };

    RigidTransform estimate = initial;
    bool any_converged = false;
    std::size_t solved = 0;
    std::size_t total_iterations = 0;
    double first_cost = 0.0;
    double last_cost = 0.0;
    std::string first_error;

    for (std::size_t first = 0, w = 0; first + params.window_size <= seq.size(); first += params.stride, ++w) {
        cache.erase(cache.begin(), cache.lower_bound(first));
        if (params.deskew && moved_beyond(estimate, deskew_reference, params.deskew_rotation_threshold_deg,
                                          params.deskew_translation_threshold)) {
            deskew_reference = estimate;
            cache.clear();
            ++rep.deskew_updates;
        }
        std::vector<FeatureFrame> frames;
        for (std::size_t i = first + 1; i < first + params.window_size; ++i) frames.push_back(prepared(i).features);
        const Prepared& anchor = prepared(first);
        const WindowProblem problem = make_window(anchor.features, anchor.scan, std::move(frames), params);

        WindowRecord record;
        record.window = w;
        record.first_frame = first;
        record.timestamp = seq.frames[first].frame_timestamp;
        const double gate = any_converged ? params.gate_converged : params.gate_initial;
        try {
            auto [solution, solve_report] = solve_window(problem, estimate, gate, params, initial.translation.z());
            if (solved == 0) first_cost = solve_report.initial_cost;
            last_cost = solve_report.final_cost;
            total_iterations += solve_report.iterations;
            estimate = solution;
            any_converged = any_converged || solve_report.converged;
            record.solved = true;
            record.report = std::move(solve_report);
            ++solved;
        } catch (const StageFailure& e) {
            record.error = e.what();
            if (first_error.empty()) first_error = e.what();
            ++rep.failed_windows;
        }
        record.estimate = estimate;
        rep.windows.push_back(std::move(record));
    }

    if (solved == 0) {
        throw StageFailure("rough", "all " + std::to_string(rep.windows.size()) + " windows failed; first: " +
                                        first_error);
    }

    CalibrationResult result;
    result.extrinsic = estimate;
    result.stage = Stage::Rough;
    auto& d = result.diagnostics;
    d.iterations = total_iterations;
    d.initial_cost = first_cost;
    d.final_cost = last_cost;
    d.converged = rep.windows.back().solved && rep.windows.back().report.converged;
    d.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    d.extra = {{"windows", rep.windows.size()},
               {"failed_windows", rep.failed_windows},
               {"deskew", params.deskew},
               {"deskew_updates", rep.deskew_updates}};
    return result;
}

void write_convergence_trace_csv(const RoughReport& report, const std::optional<RigidTransform>& reference,
                                 const std::filesystem::path& path) {
    std::string out = reference ? "window,first_frame,timestamp,solved,droll_deg,dpitch_deg,dyaw_deg,dx_m,dy_m,dz_m\n"
                                : "window,first_frame,timestamp,solved,roll_deg,pitch_deg,yaw_deg,x_m,y_m,z_m\n";
    constexpr double deg = 180.0 / std::numbers::pi;
    for (const auto& w : report.windows) {
        std::array<double, 6> v;
        if (reference) {
            const auto e = extrinsic_error(*reference, w.estimate);
            v = {e.roll, e.pitch, e.yaw, e.tx, e.ty, e.tz};
        } else {
            const auto e = rotation_to_euler_zyx(w.estimate.rotation).angles;
            const auto& t = w.estimate.translation;
            v = {e.roll * deg, e.pitch * deg, e.yaw * deg, t.x(), t.y(), t.z()};
        }
        out += fmt::format("{},{},{:.6f},{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g}\n", w.window, w.first_frame,
                           w.timestamp, w.solved ? 1 : 0, v[0], v[1], v[2], v[3], v[4], v[5]);
    }
    write_text_atomic(path, out);
}

}  // namespace lpcalib
