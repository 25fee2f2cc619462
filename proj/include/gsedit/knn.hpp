#pragma once

#include "gsedit/math.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace gsedit {

/// Static 3D kd-tree for exact k-nearest-neighbour queries.
/// Results are ordered by (squared distance, index), so ties resolve to the
/// lower index exactly as a brute-force sort would.
class KdTree {
public:
    explicit KdTree(std::span<const Vec3> points);

    std::size_t size() const { return points_.size(); }
    std::vector<std::size_t> nearest(const Vec3& query, std::size_t k) const;

private:
    struct Node {
        std::size_t begin, end;  // range in order_
        int axis;                // -1 for leaves
        double split;
        int left, right;
    };
    int build(std::size_t begin, std::size_t end, int depth);

    std::vector<Vec3> points_;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
};

/// Union of the k nearest `points` to each of `queries`, sorted ascending.
std::vector<std::size_t> knn_union(std::span<const Vec3> points, std::span<const Vec3> queries, std::size_t k);

}  // namespace gsedit
