#include "lpcalib/kdtree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace lpcalib {

namespace {

constexpr std::uint32_t kLeafSize = 12;

bool closer(const Neighbor& a, const Neighbor& b) {
    return a.squared_distance < b.squared_distance ||
           (a.squared_distance == b.squared_distance && a.index < b.index);
}

double box_squared_distance(const Eigen::Vector3d& q, const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
    double d = 0.0;
    for (int a = 0; a < 3; ++a) {
        const double e = q[a] < lo[a] ? lo[a] - q[a] : (q[a] > hi[a] ? q[a] - hi[a] : 0.0);
        d += e * e;
    }
    return d;
}

}  // namespace

KdTree::KdTree(std::span<const Eigen::Vector3d> points) : points_(points.begin(), points.end()) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0u);
    if (!points_.empty()) {
        nodes_.reserve(2 * points_.size() / kLeafSize + 2);
        build(0, static_cast<std::uint32_t>(points_.size()));
    }
    ordered_.reserve(points_.size());
    for (auto idx : order_) ordered_.push_back(points_[idx]);
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
    Node node;
    node.begin = begin;
    node.end = end;
    node.lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
    node.hi = -node.lo;
    for (std::uint32_t i = begin; i < end; ++i) {
        node.lo = node.lo.cwiseMin(points_[order_[i]]);
        node.hi = node.hi.cwiseMax(points_[order_[i]]);
    }
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(node);
    if (end - begin <= kLeafSize) return id;

    Eigen::Index axis = 0;
    (node.hi - node.lo).maxCoeff(&axis);
    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                         const double pa = points_[a][axis];
                         const double pb = points_[b][axis];
                         return pa < pb || (pa == pb && a < b);
                     });
    const std::int32_t left = build(begin, mid);
    const std::int32_t right = build(mid, end);
    nodes_[id].axis = static_cast<std::uint8_t>(axis);
    nodes_[id].split = points_[order_[mid]][axis];
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

std::vector<Neighbor> KdTree::knn(const Eigen::Vector3d& query, std::size_t k, double max_squared_distance) const {
    std::vector<Neighbor> out;
    knn(query, k, max_squared_distance, out);
    return out;
}

void KdTree::knn(const Eigen::Vector3d& query, std::size_t k, double max_squared_distance,
                 std::vector<Neighbor>& out) const {
    out.clear();
    if (nodes_.empty() || k == 0) return;
    out.reserve(k + 1);
    const auto bound = [&] { return out.size() < k ? max_squared_distance : out.back().squared_distance; };

    // Explicit stack; nearer child is visited first.
    std::int32_t stack[128];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
        const Node& node = nodes_[stack[--top]];
        if (box_squared_distance(query, node.lo, node.hi) > bound()) continue;
        if (node.left < 0) {
            for (std::uint32_t i = node.begin; i < node.end; ++i) {
                const double d = (ordered_[i] - query).squaredNorm();
                if (d > max_squared_distance) continue;
                const Neighbor cand{order_[i], d};
                if (out.size() == k && !closer(cand, out.back())) continue;
                out.insert(std::upper_bound(out.begin(), out.end(), cand, closer), cand);
                if (out.size() > k) out.pop_back();
            }
            continue;
        }
        const bool go_left_first = query[node.axis] < node.split;
        stack[top++] = go_left_first ? node.right : node.left;
        stack[top++] = go_left_first ? node.left : node.right;
    }
}

std::vector<Neighbor> KdTree::radius(const Eigen::Vector3d& query, double r) const {
    std::vector<Neighbor> out;
    if (nodes_.empty()) return out;
    const double r2 = r * r;
    std::vector<std::int32_t> stack{0};
    while (!stack.empty()) {
        const Node& node = nodes_[stack.back()];
        stack.pop_back();
        if (box_squared_distance(query, node.lo, node.hi) > r2) continue;
        if (node.left < 0) {
            for (std::uint32_t i = node.begin; i < node.end; ++i) {
                const double d = (ordered_[i] - query).squaredNorm();
                if (d <= r2) out.push_back({order_[i], d});
            }
            continue;
        }
        stack.push_back(node.left);
        stack.push_back(node.right);
    }
    std::sort(out.begin(), out.end(), closer);
    return out;
}

}  // namespace lpcalib
