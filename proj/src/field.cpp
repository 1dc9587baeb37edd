#include "flowplan/field.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "flowplan/errors.hpp"

namespace flowplan {

double risk_value_at(const Vec2& p, std::span<const Agent> agents, const RiskFieldParams& params) {
    const double inv_2s2 = 1.0 / (2.0 * params.sigma * params.sigma);
    double sum = 0.0;
    for (const auto& a : agents) sum += params.eta * std::exp(-(p - a.position).squared_norm() * inv_2s2);
    return sum;
}

Vec2 risk_gradient_at(const Vec2& p, std::span<const Agent> agents, const RiskFieldParams& params) {
    const double inv_s2 = 1.0 / (params.sigma * params.sigma);
    Vec2 g;
    for (const auto& a : agents) {
        const Vec2 diff = p - a.position;
        const double e = params.eta * std::exp(-diff.squared_norm() * 0.5 * inv_s2);
        g -= diff * (inv_s2 * e);
    }
    return g;
}

LanePointEval lane_eval_at(const Vec2& p, std::span<const LaneCenterline> lanes,
                           const LaneFieldParams& params) {
    if (lanes.empty()) throw DataError("lane_eval_at: no lanes");
    LanePointEval best;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < lanes.size(); ++i) {
        const Projection proj = project_to_centerline(p, lanes[i]);
        if (proj.d < best_d) {  // strict: ties keep the lowest lane index
            best_d = proj.d;
            best.lane = static_cast<int>(i);
            best.proj = proj;
        }
    }
    const auto& lane = lanes[best.lane];
    const auto& proj = best.proj;
    best.value = 0.5 * params.k_lat * proj.d * proj.d + params.k_lon * (lane.total_length() - proj.s);

    // grad(0.5*k_lat*d^2) = k_lat * (p - proj) in both the interior and the
    // vertex-wedge regimes; grad(-k_lon*s) is -k_lon * tangent in the segment
    // interior and 0 where the projection is pinned to a vertex or endpoint.
    best.grad = params.k_lat * (p - proj.point);
    if (!proj.clamped) {
        const auto& pts = lane.polyline();
        const Vec2 tangent = (pts[proj.segment + 1] - pts[proj.segment]).normalized();
        best.grad -= params.k_lon * tangent;
    }
    return best;
}

namespace {

template <typename ValueFn, typename GradFn>
EnergyField build_field(const GridSpec& grid, ValueFn value_at, GradFn grad_at) {
    EnergyField f;
    f.grid = grid;
    f.value = Grid<double>(grid.height_cells, grid.width_cells);
    f.grad_u = Grid<double>(grid.height_cells, grid.width_cells);
    f.grad_v = Grid<double>(grid.height_cells, grid.width_cells);
    for (int r = 0; r < grid.height_cells; ++r) {
        for (int c = 0; c < grid.width_cells; ++c) {
            const Vec2 p = cell_to_world({r, c}, grid);
            f.value.at(r, c) = value_at(p);
            const Vec2 g = grad_at(p);
            f.grad_u.at(r, c) = g.x;
            f.grad_v.at(r, c) = g.y;
        }
    }
    return f;
}

}  // namespace

EnergyField risk_field(const Scene& scene, const RiskFieldParams& params) {
    std::span<const Agent> agents(scene.agents);
    return build_field(
        scene.grid, [&](const Vec2& p) { return risk_value_at(p, agents, params); },
        [&](const Vec2& p) { return risk_gradient_at(p, agents, params); });
}

EnergyField lane_field(const Scene& scene, const LaneFieldParams& params) {
    if (scene.lanes.empty()) throw DataError("lane_field: scene has no lanes");
    std::span<const LaneCenterline> lanes(scene.lanes);
    return build_field(
        scene.grid, [&](const Vec2& p) { return lane_eval_at(p, lanes, params).value; },
        [&](const Vec2& p) { return lane_eval_at(p, lanes, params).grad; });
}

EnergyField zero_field(const GridSpec& grid) {
    EnergyField f;
    f.grid = grid;
    f.value = Grid<double>(grid.height_cells, grid.width_cells, 0.0);
    f.grad_u = Grid<double>(grid.height_cells, grid.width_cells, 0.0);
    f.grad_v = Grid<double>(grid.height_cells, grid.width_cells, 0.0);
    return f;
}

EnergyField combined_field(const EnergyField& risk, const EnergyField& lane, double w_risk,
                           double w_lane) {
    if (!(risk.grid == lane.grid)) throw DataError("combined_field: grid mismatch");
    EnergyField f = zero_field(risk.grid);
    const std::size_t n = f.value.data().size();
    for (std::size_t i = 0; i < n; ++i) {
        f.value.data()[i] = w_risk * risk.value.data()[i] + w_lane * lane.value.data()[i];
        f.grad_u.data()[i] = w_risk * risk.grad_u.data()[i] + w_lane * lane.grad_u.data()[i];
        f.grad_v.data()[i] = w_risk * risk.grad_v.data()[i] + w_lane * lane.grad_v.data()[i];
    }
    return f;
}

namespace {

FieldSample bilinear(const EnergyField& field, const Vec2& p) {
    const auto& g = field.grid;
    // Continuous cell coordinates; cell centers sit at integers.
    double gx = (p.x - g.origin.x) / g.resolution;
    double gy = (p.y - g.origin.y) / g.resolution;
    gx = std::clamp(gx, 0.0, static_cast<double>(g.width_cells - 1));
    gy = std::clamp(gy, 0.0, static_cast<double>(g.height_cells - 1));
    const int c0 = std::min(static_cast<int>(gx), g.width_cells - 2 >= 0 ? g.width_cells - 2 : 0);
    const int r0 = std::min(static_cast<int>(gy), g.height_cells - 2 >= 0 ? g.height_cells - 2 : 0);
    const int c1 = std::min(c0 + 1, g.width_cells - 1);
    const int r1 = std::min(r0 + 1, g.height_cells - 1);
    const double fx = gx - c0;
    const double fy = gy - r0;

    const auto lerp2 = [&](const Grid<double>& ch) {
        const double top = ch.at(r0, c0) * (1.0 - fx) + ch.at(r0, c1) * fx;
        const double bot = ch.at(r1, c0) * (1.0 - fx) + ch.at(r1, c1) * fx;
        return top * (1.0 - fy) + bot * fy;
    };
    return {lerp2(field.value), {lerp2(field.grad_u), lerp2(field.grad_v)}};
}

}  // namespace

FieldSample sample_field(const EnergyField& field, const Vec2& p) {
    if (!field.grid.in_extent(p)) {
        throw std::out_of_range("sample_field: point (" + std::to_string(p.x) + ", " +
                                std::to_string(p.y) + ") outside grid extent");
    }
    return bilinear(field, p);
}

FieldSample sample_field_clamped(const EnergyField& field, const Vec2& p) {
    const auto& g = field.grid;
    return bilinear(field, {std::clamp(p.x, g.min_x(), g.max_x()), std::clamp(p.y, g.min_y(), g.max_y())});
}

namespace {

constexpr std::uint32_t kFieldMagic = 0x444c4646u;  // "FFLD"
constexpr std::uint32_t kFieldVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_channel(std::ofstream& out, const Grid<double>& ch) {
    for (const double v : ch.data()) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        write_u32(out, bits);
    }
}

void read_channel(std::ifstream& in, Grid<double>& ch) {
    for (double& v : ch.data()) {
        const std::uint32_t bits = read_u32(in);
        float f;
        std::memcpy(&f, &bits, 4);
        v = static_cast<double>(f);
    }
}

}  // namespace

void write_field_dump(const std::filesystem::path& path, const EnergyField& field) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    write_u32(out, kFieldMagic);
    write_u32(out, kFieldVersion);
    write_u32(out, static_cast<std::uint32_t>(field.grid.height_cells));
    write_u32(out, static_cast<std::uint32_t>(field.grid.width_cells));
    write_u32(out, 3);
    write_channel(out, field.value);
    write_channel(out, field.grad_u);
    write_channel(out, field.grad_v);
}

EnergyField read_field_dump(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open field dump: " + path.string());
    if (read_u32(in) != kFieldMagic) throw DataError("field dump: bad magic");
    if (read_u32(in) != kFieldVersion) throw DataError("field dump: unsupported version");
    const int h = static_cast<int>(read_u32(in));
    const int w = static_cast<int>(read_u32(in));
    if (read_u32(in) != 3) throw DataError("field dump: unexpected channel count");
    if (h <= 0 || w <= 0) throw DataError("field dump: bad dimensions");
    EnergyField f;
    f.grid.height_cells = h;
    f.grid.width_cells = w;
    f.value = Grid<double>(h, w);
    f.grad_u = Grid<double>(h, w);
    f.grad_v = Grid<double>(h, w);
    read_channel(in, f.value);
    read_channel(in, f.grad_u);
    read_channel(in, f.grad_v);
    if (!in) throw DataError("field dump: truncated payload");
    return f;
}

}  // namespace flowplan
