#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "flowplan/grid.hpp"
#include "flowplan/scene.hpp"

namespace flowplan {

struct RiskFieldParams {
    double eta = 1.0;     // risk weight
    double sigma = 10.0;  // spatial spread, meters
};

struct LaneFieldParams {
    double k_lat = 1.0;   // quadratic lateral coefficient
    double k_lon = 10.0;  // linear longitudinal coefficient
};

// Relative scaling used wherever the two fields are combined or pooled. The
// defaults bring both fields to a comparable dynamic range on default scenes.
struct FieldWeights {
    double w_risk = 1.0;
    double w_lane = 0.01;
};

// Dense scalar energy with its spatial gradient, both stored per cell. The
// gradient channels hold the analytic derivative evaluated at cell centers,
// not a finite difference of the value grid.
struct EnergyField {
    GridSpec grid;
    Grid<double> value;
    Grid<double> grad_u;  // dU/dx
    Grid<double> grad_v;  // dU/dy
};

// Pointwise closed forms. The ego is not an agent; risk sums over agents only.
double risk_value_at(const Vec2& p, std::span<const Agent> agents, const RiskFieldParams& params);
Vec2 risk_gradient_at(const Vec2& p, std::span<const Agent> agents, const RiskFieldParams& params);

struct LanePointEval {
    double value = 0.0;
    Vec2 grad;
    int lane = 0;     // selected lane (minimum d, ties to lowest index)
    Projection proj;  // projection onto the selected lane
};
LanePointEval lane_eval_at(const Vec2& p, std::span<const LaneCenterline> lanes,
                           const LaneFieldParams& params);

EnergyField risk_field(const Scene& scene, const RiskFieldParams& params);
EnergyField lane_field(const Scene& scene, const LaneFieldParams& params);  // DataError if no lanes
EnergyField zero_field(const GridSpec& grid);

// values = w_risk * risk + w_lane * lane, gradients likewise.
EnergyField combined_field(const EnergyField& risk, const EnergyField& lane, double w_risk,
                           double w_lane);

struct FieldSample {
    double value = 0.0;
    Vec2 grad;
};

// Bilinear interpolation of value and gradient channels at p.
// Throws std::out_of_range (with the offending coordinate) outside the extent.
FieldSample sample_field(const EnergyField& field, const Vec2& p);
// Same, but clamps p into the grid extent first. Total.
FieldSample sample_field_clamped(const EnergyField& field, const Vec2& p);

// Flat binary dump for the renderer: little-endian f32, header
// {magic, format_version, H_f, W_f, channels}, channels value, grad_u, grad_v.
void write_field_dump(const std::filesystem::path& path, const EnergyField& field);
EnergyField read_field_dump(const std::filesystem::path& path);

}  // namespace flowplan
