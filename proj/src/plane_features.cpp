#include "lpcalib/plane_features.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include <fmt/format.h>

#include "lpcalib/data_io.hpp"
#include "lpcalib/errors.hpp"
#include "lpcalib/kdtree.hpp"
#include "lpcalib/parallel.hpp"

namespace lpcalib {

namespace {

constexpr double kDegenerateLambda2 = 1e-12;

struct Scatter {
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();
};

template <typename Range, typename Get>
Scatter scatter_of(const Range& range, Get&& get) {
    Scatter s;
    std::size_t n = 0;
    for (const auto& item : range) {
        s.mean += get(item);
        ++n;
    }
    s.mean /= static_cast<double>(n);
    for (const auto& item : range) {
        const Eigen::Vector3d d = get(item) - s.mean;
        s.covariance.noalias() += d * d.transpose();
    }
    s.covariance /= static_cast<double>(n);
    return s;
}

/// Eigen solver returns ascending eigenvalues; reorder to lambda1 >= lambda2 >= lambda3.
PlaneFit fit_from_scatter(const Scatter& s) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(s.covariance);
    PlaneFit fit;
    fit.centroid = s.mean;
    const Eigen::Vector3d ev = es.eigenvalues().cwiseMax(0.0);
    fit.eigenvalues = {ev[2], ev[1], ev[0]};
    fit.normal = es.eigenvectors().col(0).normalized();
    return fit;
}

std::optional<PlaneFit> try_fit(std::span<const Eigen::Vector3d> points, std::span<const std::uint32_t> idx) {
    if (idx.size() < 3) return std::nullopt;
    const auto fit = fit_from_scatter(scatter_of(idx, [&](std::uint32_t i) { return points[i]; }));
    if (fit.eigenvalues[1] < kDegenerateLambda2) return std::nullopt;
    return fit;
}

struct VoxelBox {
    Eigen::Vector3d lo;
    double size;
};

class AdaptiveVoxelizer {
public:
    AdaptiveVoxelizer(std::span<const Eigen::Vector3d> points, const AdaptiveVoxelParams& params,
                      const Eigen::Vector3d& origin, int source_frame)
        : points_(points), params_(params), origin_(origin), source_frame_(source_frame) {}

    void process(std::vector<std::uint32_t> idx, const VoxelBox& box, int depth) {
        if (idx.size() < params_.min_points) return;
        if (auto patch = planar_patch(idx)) {
            patches.push_back(std::move(*patch));
            return;
        }
        if (depth >= params_.max_depth) return;
        const double half = 0.5 * box.size;
        const Eigen::Vector3d mid = box.lo + Eigen::Vector3d::Constant(half);
        std::vector<std::uint32_t> children[8];
        for (auto i : idx) {
            const auto& p = points_[i];
            const int c = (p.x() >= mid.x() ? 1 : 0) | (p.y() >= mid.y() ? 2 : 0) | (p.z() >= mid.z() ? 4 : 0);
            children[c].push_back(i);
        }
        for (int c = 0; c < 8; ++c) {
            VoxelBox child{box.lo, half};
            if (c & 1) child.lo.x() += half;
            if (c & 2) child.lo.y() += half;
            if (c & 4) child.lo.z() += half;
            process(std::move(children[c]), child, depth + 1);
        }
    }

    std::vector<PlanePatch> patches;

private:
    bool passes(const PlaneFit& fit, std::size_t count) const {
        const auto& ev = fit.eigenvalues;
        return count >= params_.min_points && ev[2] < params_.plane_var_max &&
               ev[2] < params_.plane_ratio_max * ev[1];
    }

    /// Fits, tests planarity, then trims members beyond 3 sigma of the plane
    /// until every member is within 3 sqrt(lambda3) of the final fit.
    std::optional<PlanePatch> planar_patch(std::vector<std::uint32_t> idx) const {
        auto fit = try_fit(points_, idx);
        if (!fit || !passes(*fit, idx.size())) return std::nullopt;
        while (true) {
            const double bound = 3.0 * std::sqrt(fit->eigenvalues[2]) + 1e-6;
            std::vector<std::uint32_t> kept;
            kept.reserve(idx.size());
            for (auto i : idx) {
                if (std::abs(fit->normal.dot(points_[i] - fit->centroid)) <= bound) kept.push_back(i);
            }
            if (kept.size() == idx.size()) break;
            idx = std::move(kept);
            fit = try_fit(points_, idx);
            if (!fit || !passes(*fit, idx.size())) return std::nullopt;
        }
        PlanePatch patch;
        patch.centroid = fit->centroid;
        patch.normal = orient_normal(fit->normal, fit->centroid, origin_);
        patch.eigenvalues = fit->eigenvalues;
        patch.member_indices = std::move(idx);
        patch.source_frame = source_frame_;
        return patch;
    }

    std::span<const Eigen::Vector3d> points_;
    const AdaptiveVoxelParams& params_;
    Eigen::Vector3d origin_;
    int source_frame_;
};

}  // namespace

Eigen::Vector3d orient_normal(const Eigen::Vector3d& n, const Eigen::Vector3d& from, const Eigen::Vector3d& toward) {
    const double d = n.dot(toward - from);
    if (d < -1e-12) return -n;
    if (d > 1e-12) return n;
    Eigen::Index i = 0;
    n.cwiseAbs().maxCoeff(&i);
    return n[i] < 0 ? Eigen::Vector3d(-n) : n;
}

std::vector<PointFeature> compute_point_features(std::span<const Eigen::Vector3d> points,
                                                 const CurvatureParams& params, int threads,
                                                 std::size_t query_stride) {
    std::vector<PointFeature> out(points.size());
    if (points.size() < params.k + 1) return out;
    const KdTree tree(points);
    const double r2 = params.search_radius * params.search_radius;
    const std::size_t stride = std::max<std::size_t>(query_stride, 1);
    const std::size_t queries = (points.size() + stride - 1) / stride;
    // The query point is its own nearest neighbor, hence k + 1.
    parallel_blocks(queries, 1024, threads, [&](std::size_t begin, std::size_t end) {
        std::vector<Neighbor> nn;
        for (std::size_t q = begin; q < end; ++q) {
            const std::size_t i = q * stride;
            tree.knn(points[i], params.k + 1, r2, nn);
            if (nn.size() < params.k + 1) continue;
            const Scatter s = scatter_of(nn, [&](const Neighbor& n) { return points[n.index]; });
            Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es;
            es.computeDirect(s.covariance);
            const Eigen::Vector3d ev = es.eigenvalues().cwiseMax(0.0);
            const double sum = ev.sum();
            auto& f = out[i];
            f.curvature = sum > 0.0 ? ev[0] / sum : 0.0;
            f.spread = ev[2] > 0.0 ? ev[1] / ev[2] : 0.0;
            f.normal = orient_normal(es.eigenvectors().col(0).normalized(), points[i], Eigen::Vector3d::Zero());
        }
    });
    return out;
}

std::vector<double> compute_curvature(std::span<const Eigen::Vector3d> points, const CurvatureParams& params,
                                      int threads) {
    const auto features = compute_point_features(points, params, threads);
    std::vector<double> out(features.size());
    std::transform(features.begin(), features.end(), out.begin(), [](const PointFeature& f) { return f.curvature; });
    return out;
}

FeatureCloud select_planar_points(std::span<const Eigen::Vector3d> points, const FeatureParams& params,
                                  int threads) {
    const auto features = compute_point_features(points, params.curvature, threads, params.query_stride);
    FeatureCloud cloud;
    cloud.curvature.reserve(features.size());
    cloud.normals.reserve(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
        const auto& f = features[i];
        cloud.curvature.push_back(f.curvature);
        cloud.normals.push_back(f.normal);
        if (f.curvature <= params.curvature_threshold && f.spread >= params.min_spread) {
            cloud.planar_indices.push_back(static_cast<std::uint32_t>(i));
        }
    }
    return cloud;
}

PlaneFit fit_plane(std::span<const Eigen::Vector3d> points) {
    if (points.size() < 3) throw DegenerateSet("plane fit needs at least 3 points");
    const auto fit = fit_from_scatter(scatter_of(points, [](const Eigen::Vector3d& p) { return p; }));
    if (fit.eigenvalues[1] < kDegenerateLambda2) throw DegenerateSet("points are collinear or coincident");
    return fit;
}

PlaneFit fit_plane(std::span<const Eigen::Vector3d> points, std::span<const std::uint32_t> indices) {
    if (indices.size() < 3) throw DegenerateSet("plane fit needs at least 3 points");
    auto fit = try_fit(points, indices);
    if (!fit) throw DegenerateSet("points are collinear or coincident");
    return *fit;
}

std::vector<PlanePatch> extract_planes_adaptive(std::span<const Eigen::Vector3d> points,
                                                const AdaptiveVoxelParams& params,
                                                const Eigen::Vector3d& sensor_origin, int source_frame) {
    using Key = std::tuple<std::int64_t, std::int64_t, std::int64_t>;
    std::map<Key, std::vector<std::uint32_t>> roots;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        roots[{static_cast<std::int64_t>(std::floor(p.x() / params.root_size)),
               static_cast<std::int64_t>(std::floor(p.y() / params.root_size)),
               static_cast<std::int64_t>(std::floor(p.z() / params.root_size))}]
            .push_back(static_cast<std::uint32_t>(i));
    }
    AdaptiveVoxelizer voxelizer(points, params, sensor_origin, source_frame);
    for (auto& [key, idx] : roots) {
        const VoxelBox box{Eigen::Vector3d(static_cast<double>(std::get<0>(key)), static_cast<double>(std::get<1>(key)),
                                           static_cast<double>(std::get<2>(key))) *
                               params.root_size,
                           params.root_size};
        voxelizer.process(std::move(idx), box, 0);
    }
    return std::move(voxelizer.patches);
}

void write_patches_csv(std::span<const PlanePatch> patches, const std::filesystem::path& path) {
    std::string out = "cx,cy,cz,nx,ny,nz,lambda1,lambda2,lambda3,members,frame\n";
    for (const auto& p : patches) {
        out += fmt::format("{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{},{}\n", p.centroid.x(),
                           p.centroid.y(), p.centroid.z(), p.normal.x(), p.normal.y(), p.normal.z(),
                           p.eigenvalues[0], p.eigenvalues[1], p.eigenvalues[2], p.member_indices.size(),
                           p.source_frame);
    }
    write_text_atomic(path, out);
}

}  // namespace lpcalib
