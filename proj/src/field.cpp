#include "springid/field.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "springid/errors.hpp"
#include "springid/parallel.hpp"

namespace springid {

namespace {

void relu_inplace(RowMatrix& m) { m = m.cwiseMax(0.0); }

}  // namespace

BoundingBox BoundingBox::around(const Points& points, double expand) {
    if (points.empty()) throw ConfigError("bounding box of an empty point set");
    BoundingBox b{points.front(), points.front()};
    for (const auto& p : points)
        for (int a = 0; a < 3; ++a) {
            b.lo[a] = std::min(b.lo[a], p[a]);
            b.hi[a] = std::max(b.hi[a], p[a]);
        }
    for (int a = 0; a < 3; ++a) {
        const double grow = (b.hi[a] - b.lo[a]) * expand;
        b.lo[a] -= grow;
        b.hi[a] += grow;
    }
    return b;
}

std::size_t TriPlaneField::parameter_count() const {
    std::size_t n = 3 * plane_size();
    for (const auto& layer : mlp) n += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
    return n;
}

void TriPlaneField::validate() const {
    if (resolution < 4) throw ConfigError("field: resolution must be at least 4");
    if (channels < 1 || fourier_bands < 0) throw ConfigError("field: invalid channel or band count");
    for (const auto& p : planes)
        if (p.size() != plane_size()) throw ConfigError("field: plane size does not match N*N*C");
    if (mlp[0].inputs() != input_dim()) throw ConfigError("field: first layer width does not match the input");
    if (mlp[1].inputs() != mlp[0].outputs() || mlp[2].inputs() != mlp[1].outputs())
        throw ConfigError("field: layer widths do not chain");
    if (mlp[2].outputs() != 2) throw ConfigError("field: output dimension must be 2");
    for (const auto& layer : mlp)
        if (static_cast<std::size_t>(layer.bias.size()) != layer.outputs()) throw ConfigError("field: bias size mismatch");
    for (int a = 0; a < 3; ++a)
        if (!(bbox.lo[a] <= bbox.hi[a])) throw ConfigError("field: bounding box min exceeds max");
}

ParameterVector ParameterVector::flatten(const TriPlaneField& field) {
    ParameterVector p;
    p.values.reserve(field.parameter_count());
    for (const auto& plane : field.planes) p.values.insert(p.values.end(), plane.begin(), plane.end());
    for (const auto& layer : field.mlp) {
        p.values.insert(p.values.end(), layer.weight.data(), layer.weight.data() + layer.weight.size());
        p.values.insert(p.values.end(), layer.bias.data(), layer.bias.data() + layer.bias.size());
    }
    return p;
}

void ParameterVector::unflatten(TriPlaneField& field) const {
    if (values.size() != field.parameter_count()) throw ConfigError("parameter vector does not match the field shape");
    auto it = values.begin();
    for (auto& plane : field.planes) {
        std::copy(it, it + static_cast<std::ptrdiff_t>(plane.size()), plane.begin());
        it += static_cast<std::ptrdiff_t>(plane.size());
    }
    for (auto& layer : field.mlp) {
        std::copy(it, it + layer.weight.size(), layer.weight.data());
        it += layer.weight.size();
        std::copy(it, it + layer.bias.size(), layer.bias.data());
        it += layer.bias.size();
    }
}

std::string parameter_block_name(const TriPlaneField& field, std::size_t index) {
    static constexpr const char* kPlaneNames[3] = {"plane_xy", "plane_yz", "plane_xz"};
    for (int p = 0; p < 3; ++p) {
        if (index < field.plane_size()) return kPlaneNames[p];
        index -= field.plane_size();
    }
    for (int l = 0; l < 3; ++l) {
        const auto w = static_cast<std::size_t>(field.mlp[l].weight.size());
        if (index < w) return "layer" + std::to_string(l) + ".weight";
        index -= w;
        const auto b = static_cast<std::size_t>(field.mlp[l].bias.size());
        if (index < b) return "layer" + std::to_string(l) + ".bias";
        index -= b;
    }
    return "out-of-range";
}

int adaptive_resolution(std::size_t edge_count, double coefficient) {
    const double n = std::round(coefficient * std::sqrt(static_cast<double>(edge_count)));
    return std::max(4, static_cast<int>(n));
}

TriPlaneField init_field(std::size_t edge_count, const BoundingBox& bbox, const FieldInit& init) {
    if (edge_count < 1) throw ConfigError("init_field: need at least one edge");
    if (init.channels < 1 || init.hidden < 1 || init.fourier_bands < 0) throw ConfigError("init_field: invalid widths");
    TriPlaneField f;
    f.resolution = adaptive_resolution(edge_count, init.resolution_coefficient);
    f.channels = init.channels;
    f.fourier_bands = init.fourier_bands;
    f.bbox = bbox;
    f.residual_scale = init.residual_scale;
    f.seed = init.seed;
    for (auto& plane : f.planes) plane.assign(f.plane_size(), 0.0);

    std::mt19937_64 rng(init.seed);
    std::normal_distribution<double> gauss(0.0, init.hidden_weight_scale);
    const std::array<std::size_t, 4> widths{f.input_dim(), static_cast<std::size_t>(init.hidden),
                                            static_cast<std::size_t>(init.hidden), 2};
    for (int l = 0; l < 3; ++l) {
        auto& layer = f.mlp[l];
        layer.weight = RowMatrix::Zero(static_cast<Eigen::Index>(widths[l + 1]), static_cast<Eigen::Index>(widths[l]));
        layer.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(widths[l + 1]));
        if (l < 2)
            for (Eigen::Index k = 0; k < layer.weight.size(); ++k) layer.weight.data()[k] = gauss(rng);
    }
    f.validate();
    return f;
}

Vec3 midpoint(const Edge& edge, const Points& canonical) {
    return (canonical.at(edge.i) + canonical.at(edge.j)) * 0.5;
}

Vec3 normalize_coord(const Vec3& p, const BoundingBox& bbox) {
    Vec3 out;
    for (int a = 0; a < 3; ++a) {
        const double extent = bbox.hi[a] - bbox.lo[a];
        if (!(extent > 0.0)) {
            out[a] = 0.0;
            continue;
        }
        out[a] = std::clamp(2.0 * (p[a] - bbox.lo[a]) / extent - 1.0, -1.0, 1.0);
    }
    return out;
}

std::array<double, 2> plane_coords(const Vec3& p, int axis) {
    switch (axis) {
        case kPlaneXY: return {p.x, p.y};
        case kPlaneYZ: return {p.y, p.z};
        default: return {p.x, p.z};
    }
}

PlaneSample plane_sample(int resolution, double u, double v) {
    const double half_n = 0.5 * resolution;
    const auto locate = [&](double coord, std::size_t& i0, double& frac) {
        double t = std::clamp((coord + 1.0) * half_n - 0.5, 0.0, static_cast<double>(resolution - 1));
        auto i = static_cast<std::size_t>(std::floor(t));
        i = std::min<std::size_t>(i, static_cast<std::size_t>(resolution - 2));
        i0 = i;
        frac = t - static_cast<double>(i);
    };
    std::size_t iu, iv;
    double fu, fv;
    locate(u, iu, fu);
    locate(v, iv, fv);
    const auto n = static_cast<std::size_t>(resolution);
    PlaneSample s;
    s.node = {iv * n + iu, iv * n + iu + 1, (iv + 1) * n + iu, (iv + 1) * n + iu + 1};
    s.weight = {(1.0 - fu) * (1.0 - fv), fu * (1.0 - fv), (1.0 - fu) * fv, fu * fv};
    return s;
}

std::vector<double> triplane_query(const TriPlaneField& field, const Vec3& p_normalized) {
    std::vector<double> out(static_cast<std::size_t>(field.channels), 0.0);
    const auto c_count = static_cast<std::size_t>(field.channels);
    for (int axis = 0; axis < 3; ++axis) {
        const auto [u, v] = plane_coords(p_normalized, axis);
        const PlaneSample s = plane_sample(field.resolution, u, v);
        const auto& plane = field.planes[axis];
        for (std::size_t c = 0; c < c_count; ++c) {
            double value = 0.0;
            for (int k = 0; k < 4; ++k) value += s.weight[k] * plane[s.node[k] * c_count + c];
            out[c] += value;
        }
    }
    return out;
}

std::vector<double> fourier_encode(const Vec3& p, int bands) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(6 * std::max(bands, 0)));
    double freq = std::numbers::pi;
    for (int l = 0; l < bands; ++l, freq *= 2.0) {
        for (int a = 0; a < 3; ++a) out.push_back(std::sin(freq * p[a]));
        for (int a = 0; a < 3; ++a) out.push_back(std::cos(freq * p[a]));
    }
    return out;
}

void field_input(const TriPlaneField& field, const Vec3& p_normalized, std::span<double> out) {
    const auto features = triplane_query(field, p_normalized);
    const auto encoding = fourier_encode(p_normalized, field.fourier_bands);
    std::copy(features.begin(), features.end(), out.begin());
    std::copy(encoding.begin(), encoding.end(), out.begin() + static_cast<std::ptrdiff_t>(features.size()));
}

Residual field_eval(const TriPlaneField& field, const Edge& edge, const Points& canonical) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(field.input_dim()));
    field_input(field, normalize_coord(midpoint(edge, canonical), field.bbox), {x.data(), field.input_dim()});
    Eigen::VectorXd h1 = (field.mlp[0].weight * x + field.mlp[0].bias).cwiseMax(0.0);
    Eigen::VectorXd h2 = (field.mlp[1].weight * h1 + field.mlp[1].bias).cwiseMax(0.0);
    Eigen::VectorXd out = field.mlp[2].weight * h2 + field.mlp[2].bias;
    const Residual r{field.residual_scale * out[0], field.residual_scale * out[1]};
    if (!std::isfinite(r.log_stiffness) || !std::isfinite(r.log_dashpot))
        throw NumericalError("field_eval: non-finite output for edge (" + std::to_string(edge.i) + ", " +
                             std::to_string(edge.j) + ")");
    return r;
}

std::vector<Residual> field_eval_batch(const TriPlaneField& field, const SpringTopology& topology,
                                       const Points& canonical) {
    const auto e_count = static_cast<std::ptrdiff_t>(topology.size());
    const std::size_t in = field.input_dim();
    RowMatrix x(e_count, static_cast<Eigen::Index>(in));
#pragma omp parallel for schedule(static) if (e_count >= kParallelEdgeThreshold)
    for (std::ptrdiff_t e = 0; e < e_count; ++e)
        field_input(field, normalize_coord(midpoint(topology.edges[e], canonical), field.bbox),
                    {x.row(e).data(), in});

    RowMatrix h1 = (x * field.mlp[0].weight.transpose()).rowwise() + field.mlp[0].bias.transpose();
    relu_inplace(h1);
    RowMatrix h2 = (h1 * field.mlp[1].weight.transpose()).rowwise() + field.mlp[1].bias.transpose();
    relu_inplace(h2);
    const RowMatrix out = (h2 * field.mlp[2].weight.transpose()).rowwise() + field.mlp[2].bias.transpose();

    std::vector<Residual> r(topology.size());
    for (std::ptrdiff_t e = 0; e < e_count; ++e) {
        r[e] = {field.residual_scale * out(e, 0), field.residual_scale * out(e, 1)};
        if (!std::isfinite(r[e].log_stiffness) || !std::isfinite(r[e].log_dashpot))
            throw NumericalError("field_eval: non-finite output for edge " + std::to_string(e));
    }
    return r;
}

namespace {

struct SaturationKnees {
    double up_knee, up_margin, down_knee, down_margin;
};

SaturationKnees knees(double base, double lo, double hi, double margin) {
    const double up = std::max(0.0, hi - base);
    const double down = std::max(0.0, base - lo);
    const double mu = std::min(margin, 0.5 * up);
    const double md = std::min(margin, 0.5 * down);
    return {up - mu, mu, down - md, md};
}

}  // namespace

double saturate_residual(double r, double base, double lo, double hi, double margin) {
    const auto k = knees(base, lo, hi, margin);
    if (r > k.up_knee) return k.up_margin > 0.0 ? k.up_knee + k.up_margin * std::tanh((r - k.up_knee) / k.up_margin) : 0.0;
    if (r < -k.down_knee)
        return k.down_margin > 0.0 ? -k.down_knee + k.down_margin * std::tanh((r + k.down_knee) / k.down_margin) : 0.0;
    return r;
}

double saturate_residual_derivative(double r, double base, double lo, double hi, double margin) {
    const auto k = knees(base, lo, hi, margin);
    const auto sech2 = [](double t) {
        const double c = std::cosh(t);
        return std::isfinite(c) ? 1.0 / (c * c) : 0.0;
    };
    if (r > k.up_knee) return k.up_margin > 0.0 ? sech2((r - k.up_knee) / k.up_margin) : 0.0;
    if (r < -k.down_knee) return k.down_margin > 0.0 ? sech2((r + k.down_knee) / k.down_margin) : 0.0;
    return 1.0;
}

SpringParams materialize_spring_params(const std::vector<Residual>& residuals, const HomogeneousInit& base,
                                       const MaterializationBounds& b) {
    const double k_lo = std::log(b.stiffness_min), k_hi = std::log(b.stiffness_max);
    const double g_lo = std::log(b.dashpot_min), g_hi = std::log(b.dashpot_max);
    SpringParams p;
    p.stiffness.resize(residuals.size());
    p.dashpot.resize(residuals.size());
    for (std::size_t e = 0; e < residuals.size(); ++e) {
        p.stiffness[e] = std::exp(base.log_stiffness + saturate_residual(residuals[e].log_stiffness, base.log_stiffness, k_lo, k_hi));
        p.dashpot[e] = b.tie_dashpot ? std::exp(base.log_dashpot)
                                     : std::exp(base.log_dashpot +
                                                saturate_residual(residuals[e].log_dashpot, base.log_dashpot, g_lo, g_hi));
    }
    return p;
}

SpringParams materialize_spring_params(const TriPlaneField& field, const HomogeneousInit& base,
                                       const SpringTopology& topology, const Points& canonical,
                                       const MaterializationBounds& bounds) {
    return materialize_spring_params(field_eval_batch(field, topology, canonical), base, bounds);
}

namespace reference {

std::vector<Residual> field_eval_batch(const TriPlaneField& field, const SpringTopology& topology,
                                       const Points& canonical) {
    std::vector<Residual> r;
    r.reserve(topology.size());
    for (const auto& e : topology.edges) r.push_back(field_eval(field, e, canonical));
    return r;
}

}  // namespace reference

}  // namespace springid
