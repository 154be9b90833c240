#include "lpcalib/occupancy_refinement.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <chrono>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "lpcalib/errors.hpp"
#include "lpcalib/parallel.hpp"

namespace lpcalib {

namespace {

constexpr std::int64_t kKeyBias = std::int64_t{1} << 20;
constexpr std::uint64_t kKeyMask = (std::uint64_t{1} << 21) - 1;
constexpr std::uint64_t kEmpty = ~std::uint64_t{0};

std::uint64_t pack_key(std::int64_t x, std::int64_t y, std::int64_t z) {
    const auto in_range = [](std::int64_t v) { return v >= -kKeyBias && v < kKeyBias; };
    if (!in_range(x) || !in_range(y) || !in_range(z)) {
        throw DataError("point cloud extent exceeds the occupancy key range; increase the leaf size");
    }
    return (static_cast<std::uint64_t>(x + kKeyBias) << 42) | (static_cast<std::uint64_t>(y + kKeyBias) << 21) |
           static_cast<std::uint64_t>(z + kKeyBias);
}

std::int64_t cell_index(double v, double inv_leaf) {
    const double x = v * inv_leaf;
    const auto i = static_cast<std::int64_t>(x);
    return i - static_cast<std::int64_t>(x < static_cast<double>(i));
}

std::size_t hash_key(std::uint64_t k) {
    k ^= k >> 33;
    k *= 0xff51afd7ed558ccdull;
    k ^= k >> 33;
    k *= 0xc4ceb9fe1a85ec53ull;
    k ^= k >> 33;
    return static_cast<std::size_t>(k);
}

/// Frames reduced to the refinement point budget, with their de-skewed copies
/// and poses relative to the first frame.
class OccupancyObjective {
public:
    OccupancyObjective(const FrameSequence& seq, const Trajectory& traj, const RefineParams& params)
        : traj_(traj), threads_(std::max(params.threads, 1)) {
        std::size_t total = 0;
        for (const auto& f : seq.frames) total += f.points.size();
        stride_ = (params.max_points > 0 && total > params.max_points)
                      ? (total + params.max_points - 1) / params.max_points
                      : 1;
        const std::size_t offset = static_cast<std::size_t>(params.seed % stride_);
        std::size_t global = 0;
        const RigidTransform anchor_inv = invert(seq.poses.front());
        for (std::size_t i = 0; i < seq.size(); ++i) {
            LidarFrame reduced;
            reduced.frame_timestamp = seq.frames[i].frame_timestamp;
            for (const auto& p : seq.frames[i].points) {
                if (global++ % stride_ == offset) reduced.points.push_back(p);
            }
            if (reduced.points.empty()) continue;
            point_count_ += reduced.points.size();
            frames_.push_back(std::move(reduced));
            relative_poses_.push_back(compose(anchor_inv, seq.poses[i]));
        }
        deskewed_.resize(frames_.size());
        counters_.resize(static_cast<std::size_t>(threads_));
    }

    void deskew_with(const RigidTransform& extrinsic) {
        parallel_for(frames_.size(), threads_,
                     [&](std::size_t i) { deskewed_[i] = deskew(frames_[i], traj_, extrinsic); });
        deskew_extrinsic_ = extrinsic;
    }

    const RigidTransform& deskew_extrinsic() const { return deskew_extrinsic_; }
    std::size_t point_count() const { return point_count_; }
    std::size_t stride() const { return stride_; }

    std::size_t cost(const RigidTransform& extrinsic, double leaf) { return cost_with(counters_[0], extrinsic, leaf); }

    /// Costs of several candidates, evaluated in parallel with one table per worker.
    std::vector<std::size_t> costs(std::span<const RigidTransform> candidates, double leaf) {
        std::vector<std::size_t> out(candidates.size());
        const std::size_t per_block = (candidates.size() + threads_ - 1) / static_cast<std::size_t>(threads_);
        parallel_blocks(candidates.size(), per_block, threads_, [&](std::size_t begin, std::size_t end) {
            auto& counter = counters_[begin / std::max<std::size_t>(per_block, 1)];
            for (std::size_t c = begin; c < end; ++c) out[c] = cost_with(counter, candidates[c], leaf);
        });
        return out;
    }

private:
    std::size_t cost_with(CellCounter& counter, const RigidTransform& extrinsic, double leaf) const {
        // Neighboring candidates occupy about as many cells as the last one.
        counter.reset(counter.size());
        const double inv = 1.0 / leaf;
        for (std::size_t i = 0; i < deskewed_.size(); ++i) {
            const RigidTransform m = compose(relative_poses_[i], extrinsic);
            const Eigen::Matrix3d r = m.rotation;
            const Eigen::Vector3d t = m.translation;
            for (const auto& p : deskewed_[i].points) {
                const Eigen::Vector3d q = r * p.cast<double>() + t;
                counter.insert(cell_index(q.x(), inv), cell_index(q.y(), inv), cell_index(q.z(), inv));
            }
        }
        return counter.size();
    }

    const Trajectory& traj_;
    int threads_;
    std::size_t stride_ = 1;
    std::size_t point_count_ = 0;
    std::vector<LidarFrame> frames_;
    std::vector<RigidTransform> relative_poses_;
    std::vector<DeskewedFrame> deskewed_;
    std::vector<CellCounter> counters_;
    RigidTransform deskew_extrinsic_;
};

bool drifted(const RigidTransform& a, const RigidTransform& b, const RefineParams& params) {
    return rotation_angle(a.rotation.transpose() * b.rotation) > params.deskew_rotation_threshold ||
           (a.translation - b.translation).norm() > params.deskew_translation_threshold;
}

}  // namespace

OccupancyOctree::OccupancyOctree(std::span<const Eigen::Vector3d> points, const Eigen::Vector3d& root_min,
                                 double root_size, int max_depth)
    : root_min_(root_min), root_size_(root_size), max_depth_(max_depth) {
    if (!(root_size > 0.0) || max_depth < 0 || max_depth > 20) {
        throw ConfigError("octree needs a positive root size and depth in [0, 20]");
    }
    keys_.reserve(points.size());
    for (const auto& p : points) keys_.push_back(key_of(p));
    std::sort(keys_.begin(), keys_.end());
    keys_.erase(std::unique(keys_.begin(), keys_.end()), keys_.end());
}

OccupancyOctree OccupancyOctree::FromPoints(std::span<const Eigen::Vector3d> points, int max_depth) {
    if (points.empty()) return OccupancyOctree(points, Eigen::Vector3d::Zero(), 1.0, max_depth);
    Eigen::Vector3d lo = points.front();
    Eigen::Vector3d hi = points.front();
    for (const auto& p : points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    // Slightly larger than the extent so the far boundary stays inside the root.
    const double size = std::max((hi - lo).maxCoeff(), 1e-6) * (1.0 + 1e-9) + 1e-9;
    return OccupancyOctree(points, lo, size, max_depth);
}

std::uint64_t OccupancyOctree::key_of(const Eigen::Vector3d& p) const {
    const double inv = 1.0 / leaf_size();
    const Eigen::Vector3d rel = p - root_min_;
    return pack_key(cell_index(rel.x(), inv), cell_index(rel.y(), inv), cell_index(rel.z(), inv));
}

std::size_t OccupancyOctree::occupied_count_at_depth(int depth) const {
    depth = std::clamp(depth, 0, max_depth_);
    const int shift = max_depth_ - depth;
    std::vector<std::uint64_t> coarse;
    coarse.reserve(keys_.size());
    for (auto k : keys_) {
        const auto x = static_cast<std::int64_t>((k >> 42) & kKeyMask) - kKeyBias;
        const auto y = static_cast<std::int64_t>((k >> 21) & kKeyMask) - kKeyBias;
        const auto z = static_cast<std::int64_t>(k & kKeyMask) - kKeyBias;
        coarse.push_back(pack_key(x >> shift, y >> shift, z >> shift));
    }
    std::sort(coarse.begin(), coarse.end());
    return static_cast<std::size_t>(std::unique(coarse.begin(), coarse.end()) - coarse.begin());
}

bool OccupancyOctree::occupied(const Eigen::Vector3d& p) const {
    return std::binary_search(keys_.begin(), keys_.end(), key_of(p));
}

void CellCounter::reset(std::size_t expected_cells) {
    std::size_t capacity = 1024;
    while (capacity < 2 * expected_cells) capacity <<= 1;
    if (table_.size() != capacity) {
        table_.assign(capacity, kEmpty);
    } else if (size_ > 0) {
        std::fill(table_.begin(), table_.end(), kEmpty);
    }
    mask_ = capacity - 1;
    size_ = 0;
}

void CellCounter::grow() {
    std::vector<std::uint64_t> old(std::max<std::size_t>(1024, table_.size() * 2), kEmpty);
    old.swap(table_);
    mask_ = table_.size() - 1;
    for (const auto key : old) {
        if (key == kEmpty) continue;
        std::size_t slot = hash_key(key) & mask_;
        while (table_[slot] != kEmpty) slot = (slot + 1) & mask_;
        table_[slot] = key;
    }
}

bool CellCounter::insert(std::int64_t x, std::int64_t y, std::int64_t z) {
    if (2 * (size_ + 1) > table_.size()) grow();
    const std::uint64_t key = pack_key(x, y, z);
    std::size_t slot = hash_key(key) & mask_;
    while (true) {
        const std::uint64_t cur = table_[slot];
        if (cur == key) return false;
        if (cur == kEmpty) {
            table_[slot] = key;
            ++size_;
            return true;
        }
        slot = (slot + 1) & mask_;
    }
}

std::size_t CellCounter::count(std::span<const Eigen::Vector3d> points, double leaf_size,
                               const Eigen::Vector3d& origin) {
    if (!(leaf_size > 0.0)) throw ConfigError("leaf size must be positive");
    reset(points.size());
    const double inv = 1.0 / leaf_size;
    for (const auto& p : points) {
        const Eigen::Vector3d rel = p - origin;
        insert(cell_index(rel.x(), inv), cell_index(rel.y(), inv), cell_index(rel.z(), inv));
    }
    return size_;
}

std::size_t count_occupied(std::span<const Eigen::Vector3d> points, double leaf_size, const Eigen::Vector3d& origin) {
    CellCounter counter;
    return counter.count(points, leaf_size, origin);
}

std::size_t occupancy_cost(std::span<const DeskewedFrame> frames, std::span<const RigidTransform> poses,
                           const RigidTransform& extrinsic, double leaf_size) {
    if (frames.empty()) return 0;
    if (frames.size() != poses.size()) throw ConfigError("occupancy_cost: frame and pose counts differ");
    if (!(leaf_size > 0.0)) throw ConfigError("leaf size must be positive");
    std::size_t total = 0;
    for (const auto& f : frames) total += f.points.size();
    CellCounter counter;
    counter.reset(total);
    const double inv = 1.0 / leaf_size;
    const RigidTransform anchor_inv = invert(poses.front());
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const RigidTransform m = compose(compose(anchor_inv, poses[i]), extrinsic);
        for (const auto& p : frames[i].points) {
            const Eigen::Vector3d q = m * p.cast<double>();
            counter.insert(cell_index(q.x(), inv), cell_index(q.y(), inv), cell_index(q.z(), inv));
        }
    }
    return counter.size();
}

SearchSpec SearchSpec::Default() {
    constexpr double deg = std::numbers::pi / 180.0;
    SearchSpec spec;
    double scale = 1.0;
    for (double leaf : {0.4, 0.2, 0.1}) {
        spec.levels.push_back({leaf, 0.5 * deg * scale, 0.05 * deg * scale, 0.05 * scale, 0.005 * scale, 2});
        scale *= 0.5;
    }
    return spec;
}

void SearchSpec::validate() const {
    for (std::size_t i = 0; i < levels.size(); ++i) {
        const auto& l = levels[i];
        const auto where = "search level " + std::to_string(i) + ": ";
        if (!(l.leaf_size > 0.0)) throw ConfigError(where + "leaf size must be positive");
        if (!(l.rotation_step > 0.0) || !(l.translation_step > 0.0)) throw ConfigError(where + "steps must be positive");
        if (l.rotation_range < 0.0 || l.translation_range < 0.0) throw ConfigError(where + "ranges must be >= 0");
        if ((l.rotation_range > 0.0 && l.rotation_range < l.rotation_step) ||
            (l.translation_range > 0.0 && l.translation_range < l.translation_step)) {
            throw ConfigError(where + "non-zero ranges must be at least one step");
        }
        if (l.sweeps < 1) throw ConfigError(where + "sweeps must be >= 1");
    }
}

RigidTransform perturb_axis(const RigidTransform& t, int axis, double offset) {
    RigidTransform out = t;
    if (axis < 3) {
        Eigen::Vector3d w = Eigen::Vector3d::Zero();
        w[axis] = offset;
        out.rotation = orthonormalize(t.rotation * so3_exp(w));
    } else {
        out.translation[axis - 3] += offset;
    }
    return out;
}

CalibrationResult refine(const FrameSequence& seq, const Trajectory& traj, const CalibrationResult& rough,
                         const RefineParams& params, RefineReport* report) {
    const auto start = std::chrono::steady_clock::now();
    params.search.validate();
    if (seq.size() == 0) throw StageFailure("refine", "no frames");

    RefineReport local;
    RefineReport& rep = report ? *report : local;
    rep = RefineReport{};

    OccupancyObjective objective(seq, traj, params);
    rep.map_points = objective.point_count();
    rep.subsample_stride = objective.stride();
    objective.deskew_with(rough.extrinsic);

    RigidTransform incumbent = rough.extrinsic;
    for (std::size_t li = 0; li < params.search.levels.size(); ++li) {
        const auto& level = params.search.levels[li];
        std::size_t incumbent_cost = objective.cost(incumbent, level.leaf_size);
        ++rep.evaluations;
        // A scan repeated with no change to incumbent or de-skew since would
        // reproduce the same costs and reject every candidate again.
        std::size_t changes = 0;
        std::array<std::size_t, 6> scanned_at;
        scanned_at.fill(std::numeric_limits<std::size_t>::max());
        for (int sweep = 0; sweep < level.sweeps; ++sweep) {
            for (int axis = 0; axis < 6; ++axis) {
                const double range = axis < 3 ? level.rotation_range : level.translation_range;
                const double step = axis < 3 ? level.rotation_step : level.translation_step;
                const auto k_max = static_cast<int>(std::floor(range / step + 1e-9));
                if (k_max <= 0) continue;
                if (scanned_at[axis] == changes) continue;
                scanned_at[axis] = changes;
                // Ordered by |k| then sign so that the first strict minimum wins ties.
                std::vector<int> ks;
                for (int k = 1; k <= k_max; ++k) {
                    ks.push_back(-k);
                    ks.push_back(k);
                }
                std::vector<RigidTransform> candidates;
                for (int k : ks) candidates.push_back(perturb_axis(incumbent, axis, k * step));
                const auto costs = objective.costs(candidates, level.leaf_size);
                rep.evaluations += costs.size();

                std::size_t best = candidates.size();
                std::size_t best_cost = incumbent_cost;
                for (std::size_t c = 0; c < costs.size(); ++c) {
                    if (costs[c] < best_cost) {
                        best_cost = costs[c];
                        best = c;
                    }
                }
                for (std::size_t c = 0; c < costs.size(); ++c) {
                    rep.candidates.push_back({static_cast<int>(li), sweep, axis, ks[c] * step, costs[c], c == best});
                }
                if (best == candidates.size()) continue;
                incumbent = candidates[best];
                incumbent_cost = best_cost;
                ++changes;
                if (drifted(objective.deskew_extrinsic(), incumbent, params)) {
                    objective.deskew_with(incumbent);
                    ++rep.deskew_updates;
                    incumbent_cost = objective.cost(incumbent, level.leaf_size);
                    ++rep.evaluations;
                }
            }
        }
    }

    // Both ends compared under the same de-skew at the finest leaf size.
    const double final_leaf = params.search.levels.empty() ? 0.1 : params.search.levels.back().leaf_size;
    rep.rough_cost = objective.cost(rough.extrinsic, final_leaf);
    rep.refined_cost = objective.cost(incumbent, final_leaf);
    rep.evaluations += 2;
    rep.improved = rep.refined_cost < rep.rough_cost;
    if (!rep.improved) {
        incumbent = rough.extrinsic;
        rep.refined_cost = rep.rough_cost;
    }

    CalibrationResult result;
    result.extrinsic = incumbent;
    result.stage = Stage::Refined;
    result.parent = std::make_shared<CalibrationResult>(rough);
    auto& d = result.diagnostics;
    d.iterations = rep.evaluations;
    d.initial_cost = static_cast<double>(rep.rough_cost);
    d.final_cost = static_cast<double>(rep.refined_cost);
    d.converged = true;
    d.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    d.extra = {{"no_improvement", !rep.improved},
               {"map_points", rep.map_points},
               {"subsample_stride", rep.subsample_stride},
               {"deskew_updates", rep.deskew_updates}};
    return result;
}

void write_candidates_csv(const RefineReport& report, const std::filesystem::path& path) {
    std::string out = "level,sweep,axis,offset,cost,accepted\n";
    static constexpr const char* kAxes[] = {"rx", "ry", "rz", "tx", "ty", "tz"};
    for (const auto& c : report.candidates) {
        out += fmt::format("{},{},{},{:.9g},{},{}\n", c.level, c.sweep, kAxes[c.axis], c.offset, c.cost,
                           c.accepted ? 1 : 0);
    }
    write_text_atomic(path, out);
}

}  // namespace lpcalib
