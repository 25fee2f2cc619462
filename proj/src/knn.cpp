#include "gsedit/knn.hpp"

#include "gsedit/parallel.hpp"

#include <algorithm>
#include <queue>

namespace gsedit {

namespace {

constexpr std::size_t kLeafSize = 8;

struct Candidate {
    double d2;
    std::size_t index;
    bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && index < o.index); }
};

}  // namespace

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()), order_(points.size()) {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    if (!points_.empty()) build(0, points_.size(), 0);
}

int KdTree::build(std::size_t begin, std::size_t end, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({begin, end, -1, 0.0, -1, -1});
    if (end - begin <= kLeafSize) return id;

    Vec3 lo = points_[order_[begin]], hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
        lo = lo.cwiseMin(points_[order_[i]]);
        hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    if (hi[axis] == lo[axis]) return id;  // all points coincide
    (void)depth;

    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::size_t a, std::size_t b) { return points_[a][axis] < points_[b][axis]; });
    const double split = points_[order_[mid]][axis];
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    // Left holds coordinates <= split, right >= split.
    const int left = build(begin, mid, depth + 1);
    const int right = build(mid, end, depth + 1);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

std::vector<std::size_t> KdTree::nearest(const Vec3& query, std::size_t k) const {
    k = std::min(k, points_.size());
    if (k == 0) return {};
    std::priority_queue<Candidate> best;  // worst candidate on top
    auto visit = [&](auto&& self, int id) -> void {
        const Node& n = nodes_[id];
        if (n.axis < 0) {
            for (std::size_t i = n.begin; i < n.end; ++i) {
                const std::size_t p = order_[i];
                const Candidate c{(points_[p] - query).squaredNorm(), p};
                if (best.size() < k) {
                    best.push(c);
                } else if (c < best.top()) {
                    best.pop();
                    best.push(c);
                }
            }
            return;
        }
        const double diff = query[n.axis] - n.split;
        const int near = diff <= 0.0 ? n.left : n.right;
        const int far = diff <= 0.0 ? n.right : n.left;
        self(self, near);
        // Points across the split are at least |diff| away along the axis. Equal
        // distances must still be visited for the index tie-break.
        if (best.size() < k || diff * diff <= best.top().d2) self(self, far);
    };
    visit(visit, 0);
    std::vector<std::size_t> out(best.size());
    for (std::size_t i = out.size(); i-- > 0;) {
        out[i] = best.top().index;
        best.pop();
    }
    return out;
}

std::vector<std::size_t> knn_union(std::span<const Vec3> points, std::span<const Vec3> queries, std::size_t k) {
    if (k == 0 || points.empty()) return {};
    const KdTree tree(points);
    std::vector<std::vector<std::size_t>> per_query(queries.size());
    parallel_for(queries.size(), [&](std::size_t q) { per_query[q] = tree.nearest(queries[q], k); });
    std::vector<std::uint8_t> hit(points.size(), 0);
    for (const auto& list : per_query)
        for (std::size_t i : list) hit[i] = 1;
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < hit.size(); ++i)
        if (hit[i]) out.push_back(i);
    return out;
}

}  // namespace gsedit
