#pragma once

// Piecewise spring-topology construction: Ward agglomerative clustering of the
// canonical mass points, per-cluster KNN proposals, and component bridging.

#include <cstddef>
#include <vector>

#include "springid/sim.hpp"
#include "springid/vec3.hpp"

namespace springid {

struct KnnHyperparams {
    int max_neighbors = 1;
    double radius = 0.0;  // m

    friend bool operator==(const KnnHyperparams&, const KnnHyperparams&) = default;
};

struct ClusterTopologyConfig {
    std::vector<std::size_t> labels;         // one per mass point
    std::vector<KnnHyperparams> per_cluster;

    std::size_t cluster_count() const { return per_cluster.size(); }
    void validate(std::size_t point_count) const;
};

/// Bottom-up Ward clustering cut at n_clusters. Labels are numbered in order of
/// each cluster's lowest point index; merge ties go to the lowest index pair.
std::vector<std::size_t> cluster_points(const Points& points, std::size_t n_clusters);

/// Every point proposes edges to its max_neighbors nearest points within its
/// cluster's radius (ties by lower index); proposals are unioned.
SpringTopology build_piecewise_knn(const Points& points, const ClusterTopologyConfig& config);

/// Adds the globally shortest inter-component edge until the graph is connected.
SpringTopology connect_components(const Points& points, const SpringTopology& topology);

/// Number of connected components of the spring graph.
std::size_t component_count(std::size_t point_count, const SpringTopology& topology);

/// Median over points of the distance to the nearest other point.
double median_nearest_spacing(const Points& points);

namespace reference {

/// Exhaustive per-point distance sort.
SpringTopology build_piecewise_knn(const Points& points, const ClusterTopologyConfig& config);

}  // namespace reference

}  // namespace springid
