#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <vector>

namespace lpcalib {

struct Neighbor {
    std::uint32_t index = 0;
    double squared_distance = 0.0;
};

/// Static 3D kd-tree with exact k-nearest-neighbor and radius queries. Results
/// are sorted by distance, ties broken by index, so queries are deterministic.
class KdTree {
public:
    KdTree() = default;
    explicit KdTree(std::span<const Eigen::Vector3d> points);

    std::size_t size() const { return points_.size(); }
    const Eigen::Vector3d& point(std::size_t i) const { return points_[i]; }

    /// Up to k neighbors with squared distance <= max_squared_distance.
    std::vector<Neighbor> knn(const Eigen::Vector3d& query, std::size_t k,
                              double max_squared_distance = std::numeric_limits<double>::infinity()) const;
    void knn(const Eigen::Vector3d& query, std::size_t k, double max_squared_distance,
             std::vector<Neighbor>& out) const;

    std::vector<Neighbor> radius(const Eigen::Vector3d& query, double r) const;

private:
    struct Node {
        std::uint32_t begin = 0;
        std::uint32_t end = 0;
        std::int32_t left = -1;
        std::int32_t right = -1;
        std::uint8_t axis = 0;
        double split = 0.0;
        Eigen::Vector3d lo;
        Eigen::Vector3d hi;
    };

    std::int32_t build(std::uint32_t begin, std::uint32_t end);

    std::vector<Eigen::Vector3d> points_;
    std::vector<std::uint32_t> order_;
    /// points_[order_[i]], laid out in leaf order for locality during queries.
    std::vector<Eigen::Vector3d> ordered_;
    std::vector<Node> nodes_;
};

}  // namespace lpcalib
