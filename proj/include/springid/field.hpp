#pragma once

// Canonical tri-plane spring field: three N x N x C feature planes sampled at a
// spring's canonical midpoint, summed, concatenated with a Fourier encoding of
// the midpoint and mapped by a 3-layer perceptron to (dlog k, dlog gamma)
// residuals over the homogeneous stage-one parameters.

#include <Eigen/Dense>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "springid/sim.hpp"
#include "springid/stage_one.hpp"
#include "springid/vec3.hpp"

namespace springid {

struct BoundingBox {
    Vec3 lo;
    Vec3 hi;

    /// Axis-aligned box of the points, each axis grown by `expand` of its extent on both sides.
    static BoundingBox around(const Points& points, double expand = 0.05);
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct DenseLayer {
    RowMatrix weight;  // out x in
    Eigen::VectorXd bias;

    std::size_t inputs() const { return static_cast<std::size_t>(weight.cols()); }
    std::size_t outputs() const { return static_cast<std::size_t>(weight.rows()); }
};

/// Plane order is xy, yz, xz. Plane p stores node (u, v) channel c at
/// ((v * N) + u) * C + c, where (u, v) index the plane's first and second axes
/// (x,y for xy; y,z for yz; x,z for xz).
enum PlaneAxis : int { kPlaneXY = 0, kPlaneYZ = 1, kPlaneXZ = 2 };

struct TriPlaneField {
    int resolution = 4;  // N
    int channels = 32;   // C
    int fourier_bands = 6;
    BoundingBox bbox;
    double residual_scale = 1.0;
    std::uint64_t seed = 0;
    std::array<std::vector<double>, 3> planes;
    std::array<DenseLayer, 3> mlp;

    std::size_t input_dim() const { return static_cast<std::size_t>(channels + 6 * fourier_bands); }
    std::size_t plane_size() const {
        return static_cast<std::size_t>(resolution) * static_cast<std::size_t>(resolution) *
               static_cast<std::size_t>(channels);
    }
    /// Total learnable scalars (planes then layers: weight row-major, bias).
    std::size_t parameter_count() const;
    void validate() const;
};

/// Flattened learnables in the order documented on TriPlaneField::parameter_count.
struct ParameterVector {
    std::vector<double> values;

    static ParameterVector flatten(const TriPlaneField& field);
    /// Writes the values back into a field of the same shape.
    void unflatten(TriPlaneField& field) const;
    std::size_t size() const { return values.size(); }
};

/// Names the learnable block holding a flat parameter index, e.g. "plane_yz" or "layer1.weight".
std::string parameter_block_name(const TriPlaneField& field, std::size_t index);

struct FieldInit {
    int channels = 32;
    double resolution_coefficient = 0.85;
    int hidden = 128;
    int fourier_bands = 6;
    double hidden_weight_scale = 1e-2;
    double residual_scale = 1.0;
    std::uint64_t seed = 0;
};

/// max(4, round(coefficient * sqrt(edge_count)))
int adaptive_resolution(std::size_t edge_count, double coefficient);

/// Zero planes, small random hidden layers, zero output layer: evaluates to 0 everywhere.
TriPlaneField init_field(std::size_t edge_count, const BoundingBox& bbox, const FieldInit& init = {});

Vec3 midpoint(const Edge& edge, const Points& canonical);
Vec3 normalize_coord(const Vec3& p, const BoundingBox& bbox);

/// Bilinear sample of one plane at normalized plane coordinates (u, v); cell-centered nodes, edge-clamped.
struct PlaneSample {
    std::array<std::size_t, 4> node{};  // flat node offsets (times C) of the 4 corners
    std::array<double, 4> weight{};
};
PlaneSample plane_sample(int resolution, double u, double v);
/// Plane coordinates (u, v) of a normalized point for plane `axis`.
std::array<double, 2> plane_coords(const Vec3& p, int axis);

/// Sum of the three bilinear plane samples; length C.
std::vector<double> triplane_query(const TriPlaneField& field, const Vec3& p_normalized);

/// Per band l: sin(2^l pi p) for x, y, z then cos(2^l pi p) for x, y, z.
std::vector<double> fourier_encode(const Vec3& p_normalized, int bands);

/// MLP input for one normalized point: tri-plane features then Fourier encoding.
void field_input(const TriPlaneField& field, const Vec3& p_normalized, std::span<double> out);

struct Residual {
    double log_stiffness = 0.0;
    double log_dashpot = 0.0;
    friend bool operator==(const Residual&, const Residual&) = default;
};

/// Residual for one edge from its canonical midpoint.
Residual field_eval(const TriPlaneField& field, const Edge& edge, const Points& canonical);

/// Residuals for all edges; parallel input assembly, batched dense layers.
std::vector<Residual> field_eval_batch(const TriPlaneField& field, const SpringTopology& topology,
                                       const Points& canonical);

/// Identity near zero, tanh-saturating so that base + result stays within [lo, hi].
/// Margins of `margin` (log units) or half the available room, whichever is smaller.
double saturate_residual(double residual, double base, double lo, double hi, double margin = 1.0);
double saturate_residual_derivative(double residual, double base, double lo, double hi, double margin = 1.0);

struct MaterializationBounds {
    double stiffness_min = 1.0;
    double stiffness_max = 1e5;
    double dashpot_min = 1e-3;
    double dashpot_max = 100.0;
    /// Keep one dashpot value for every spring (the stage-one value); the field then only sets stiffness.
    bool tie_dashpot = false;

    static MaterializationBounds from(const ParameterBounds& b, bool tie_dashpot = false) {
        return {b.stiffness_min, b.stiffness_max, b.dashpot_min, b.dashpot_max, tie_dashpot};
    }
};

/// stiffness = exp(log k0 + sat(dlog k)), dashpot = exp(log gamma0 + sat(dlog gamma)).
SpringParams materialize_spring_params(const std::vector<Residual>& residuals, const HomogeneousInit& base,
                                       const MaterializationBounds& bounds = {});
SpringParams materialize_spring_params(const TriPlaneField& field, const HomogeneousInit& base,
                                       const SpringTopology& topology, const Points& canonical,
                                       const MaterializationBounds& bounds = {});

namespace reference {

/// Per-edge field_eval loop, serial.
std::vector<Residual> field_eval_batch(const TriPlaneField& field, const SpringTopology& topology,
                                       const Points& canonical);

}  // namespace reference

}  // namespace springid
