#include "springid/topology.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>
#include <unordered_map>

#include "springid/errors.hpp"
#include "springid/parallel.hpp"

namespace springid {

namespace {

struct DisjointSets {
    std::vector<std::size_t> parent;

    explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }

    std::size_t find(std::size_t a) {
        while (parent[a] != a) {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        return a;
    }
    bool unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        if (b < a) std::swap(a, b);
        parent[b] = a;
        return true;
    }
};

// Candidates of point i sorted by (squared distance, index), truncated to k.
std::vector<std::size_t> select_nearest(std::vector<std::pair<double, std::size_t>>& cand, int k) {
    const auto keep = std::min<std::size_t>(cand.size(), static_cast<std::size_t>(std::max(k, 0)));
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end());
    std::vector<std::size_t> out(keep);
    for (std::size_t n = 0; n < keep; ++n) out[n] = cand[n].second;
    return out;
}

SpringTopology union_of_proposals(const Points& points, const std::vector<std::vector<std::size_t>>& proposals) {
    std::vector<Edge> pairs;
    for (std::size_t i = 0; i < proposals.size(); ++i)
        for (std::size_t j : proposals[i]) pairs.push_back({std::min(i, j), std::max(i, j)});
    return SpringTopology::from_pairs(std::move(pairs), points);
}

// Uniform grid over the points with cubic cells of side `cell`.
class PointGrid {
public:
    PointGrid(const Points& points, double cell) : points_(points), cell_(cell) {
        lo_ = points.front();
        for (const auto& p : points)
            for (int a = 0; a < 3; ++a) lo_[a] = std::min(lo_[a], p[a]);
        for (std::size_t i = 0; i < points.size(); ++i) buckets_[key(coord(points[i]))].push_back(i);
    }

    template <class Fn>
    void for_each_near(const Vec3& p, Fn&& fn) const {
        const auto c = coord(p);
        for (long dx = -1; dx <= 1; ++dx)
            for (long dy = -1; dy <= 1; ++dy)
                for (long dz = -1; dz <= 1; ++dz) {
                    const auto it = buckets_.find(key({c[0] + dx, c[1] + dy, c[2] + dz}));
                    if (it == buckets_.end()) continue;
                    for (std::size_t j : it->second) fn(j);
                }
    }

private:
    std::array<long, 3> coord(const Vec3& p) const {
        return {static_cast<long>(std::floor((p.x - lo_.x) / cell_)), static_cast<long>(std::floor((p.y - lo_.y) / cell_)),
                static_cast<long>(std::floor((p.z - lo_.z) / cell_))};
    }
    static std::uint64_t key(const std::array<long, 3>& c) {
        const auto u = [](long v) { return static_cast<std::uint64_t>(v + (1L << 20)) & 0x1FFFFFu; };
        return (u(c[0]) << 42) | (u(c[1]) << 21) | u(c[2]);
    }

    const Points& points_;
    double cell_;
    Vec3 lo_;
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets_;
};

}  // namespace

void ClusterTopologyConfig::validate(std::size_t point_count) const {
    if (labels.size() != point_count) throw ConfigError("cluster config: one label per point required");
    if (per_cluster.empty()) throw ConfigError("cluster config: no clusters");
    for (std::size_t l : labels)
        if (l >= per_cluster.size()) throw ConfigError("cluster config: label out of range");
    for (const auto& h : per_cluster) {
        if (h.max_neighbors < 1) throw ConfigError("cluster config: max_neighbors must be at least 1");
        if (!(h.radius > 0.0) || !std::isfinite(h.radius)) throw ConfigError("cluster config: radius must be positive");
    }
}

std::vector<std::size_t> cluster_points(const Points& points, std::size_t n_clusters) {
    if (n_clusters < 1) throw ConfigError("cluster_points: n_clusters must be at least 1");
    const std::size_t n = points.size();
    if (n_clusters > n) throw ConfigError("cluster_points: more clusters than points");

    // Ward merge cost n_a n_b / (n_a + n_b) * |c_a - c_b|^2, updated by Lance-Williams.
    std::vector<double> cost(n * n, 0.0);
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b) cost[a * n + b] = cost[b * n + a] = 0.5 * squared_distance(points[a], points[b]);
    std::vector<double> size(n, 1.0);
    std::vector<char> active(n, 1);
    std::vector<std::size_t> owner(n);
    std::iota(owner.begin(), owner.end(), 0);

    std::vector<double> row_best(n);
    std::vector<std::size_t> row_arg(n);
    for (std::size_t remaining = n; remaining > n_clusters; --remaining) {
        const auto sn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 16) if (sn >= kParallelPointThreshold / 4)
        for (std::ptrdiff_t a = 0; a < sn; ++a) {
            row_best[a] = std::numeric_limits<double>::infinity();
            if (!active[a]) continue;
            for (std::size_t b = static_cast<std::size_t>(a) + 1; b < n; ++b) {
                if (active[b] && cost[a * n + b] < row_best[a]) {
                    row_best[a] = cost[a * n + b];
                    row_arg[a] = b;
                }
            }
        }
        std::size_t ma = n;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < n; ++a)
            if (row_best[a] < best) {
                best = row_best[a];
                ma = a;
            }
        const std::size_t mb = row_arg[ma];
        const double na = size[ma], nb = size[mb], dab = cost[ma * n + mb];
        for (std::size_t k = 0; k < n; ++k) {
            if (!active[k] || k == ma || k == mb) continue;
            const double nk = size[k];
            const double updated =
                ((na + nk) * cost[k * n + ma] + (nb + nk) * cost[k * n + mb] - nk * dab) / (na + nb + nk);
            cost[k * n + ma] = cost[ma * n + k] = updated;
        }
        size[ma] = na + nb;
        active[mb] = 0;
        for (auto& o : owner)
            if (o == mb) o = ma;
    }

    std::vector<std::size_t> labels(n);
    std::unordered_map<std::size_t, std::size_t> relabel;
    for (std::size_t i = 0; i < n; ++i) {
        const auto [it, inserted] = relabel.emplace(owner[i], relabel.size());
        labels[i] = it->second;
    }
    return labels;
}

SpringTopology build_piecewise_knn(const Points& points, const ClusterTopologyConfig& config) {
    config.validate(points.size());
    if (points.size() < 2) return {};
    double max_radius = 0.0;
    for (const auto& h : config.per_cluster) max_radius = std::max(max_radius, h.radius);
    const PointGrid grid(points, max_radius);

    const auto n = static_cast<std::ptrdiff_t>(points.size());
    std::vector<std::vector<std::size_t>> proposals(points.size());
#pragma omp parallel for schedule(dynamic, 64) if (n >= kParallelPointThreshold)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto& h = config.per_cluster[config.labels[i]];
        const double r2 = h.radius * h.radius;
        std::vector<std::pair<double, std::size_t>> cand;
        grid.for_each_near(points[i], [&](std::size_t j) {
            if (j == static_cast<std::size_t>(i)) return;
            const double d2 = squared_distance(points[i], points[j]);
            if (d2 <= r2) cand.emplace_back(d2, j);
        });
        proposals[i] = select_nearest(cand, h.max_neighbors);
    }
    return union_of_proposals(points, proposals);
}

std::size_t component_count(std::size_t point_count, const SpringTopology& topology) {
    DisjointSets sets(point_count);
    std::size_t count = point_count;
    for (const auto& e : topology.edges)
        if (sets.unite(e.i, e.j)) --count;
    return count;
}

SpringTopology connect_components(const Points& points, const SpringTopology& topology) {
    const std::size_t n = points.size();
    DisjointSets sets(n);
    std::size_t components = n;
    for (const auto& e : topology.edges)
        if (sets.unite(e.i, e.j)) --components;
    if (components <= 1) return topology;

    // Kruskal over inter-component pairs: each accepted pair is the globally
    // shortest edge between two current components.
    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (sets.find(i) != sets.find(j)) pairs.emplace_back(squared_distance(points[i], points[j]), i, j);
    std::sort(pairs.begin(), pairs.end());

    std::vector<Edge> edges = topology.edges;
    for (const auto& [d2, i, j] : pairs) {
        if (components == 1) break;
        if (sets.unite(i, j)) {
            edges.push_back({i, j});
            --components;
        }
    }
    return SpringTopology::from_pairs(std::move(edges), points);
}

double median_nearest_spacing(const Points& points) {
    if (points.size() < 2) throw ConfigError("median_nearest_spacing: need at least two points");
    std::vector<double> nearest(points.size(), std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < points.size(); ++i)
        for (std::size_t j = 0; j < points.size(); ++j)
            if (i != j) nearest[i] = std::min(nearest[i], squared_distance(points[i], points[j]));
    const auto mid = nearest.begin() + static_cast<std::ptrdiff_t>(nearest.size() / 2);
    std::nth_element(nearest.begin(), mid, nearest.end());
    return std::sqrt(*mid);
}

namespace reference {

SpringTopology build_piecewise_knn(const Points& points, const ClusterTopologyConfig& config) {
    config.validate(points.size());
    std::vector<std::vector<std::size_t>> proposals(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& h = config.per_cluster[config.labels[i]];
        std::vector<std::pair<double, std::size_t>> cand;
        for (std::size_t j = 0; j < points.size(); ++j) {
            if (j == i) continue;
            const double d2 = squared_distance(points[i], points[j]);
            if (d2 <= h.radius * h.radius) cand.emplace_back(d2, j);
        }
        std::sort(cand.begin(), cand.end());
        const auto keep = std::min<std::size_t>(cand.size(), static_cast<std::size_t>(h.max_neighbors));
        for (std::size_t n = 0; n < keep; ++n) proposals[i].push_back(cand[n].second);
    }
    return union_of_proposals(points, proposals);
}

}  // namespace reference

}  // namespace springid
