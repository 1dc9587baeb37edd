#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "flowplan/geometry.hpp"
#include "flowplan/grid.hpp"

namespace flowplan {

struct Agent {
    Vec2 position;
    double radius = 1.0;
    Vec2 velocity;
};

// Polyline centerline with cached cumulative arc lengths.
class LaneCenterline {
public:
    LaneCenterline() = default;
    LaneCenterline(std::vector<Vec2> polyline, double half_width);

    const std::vector<Vec2>& polyline() const { return points_; }
    double half_width() const { return half_width_; }
    double total_length() const { return cum_.empty() ? 0.0 : cum_.back(); }
    double arclength_at(int vertex) const { return cum_[vertex]; }

    Vec2 point_at(double s) const;     // clamped to [0, L]
    Vec2 tangent_at(double s) const;   // unit tangent of the containing segment
    double heading_at(double s) const;

private:
    std::vector<Vec2> points_;
    std::vector<double> cum_;
    double half_width_ = 2.0;
};

// Result of projecting a point onto a centerline.
struct Projection {
    double d = 0.0;        // unsigned lateral distance
    double s = 0.0;        // arc length from start, clamped to [0, L]
    Vec2 point;            // nearest point on the polyline
    int segment = 0;       // index of the winning segment
    double t = 0.0;        // clamped segment parameter in [0, 1]
    bool clamped = false;  // true if t hit 0 or 1 (vertex/endpoint region)
};

Projection project_to_centerline(const Vec2& p, const LaneCenterline& lane);

struct EgoState {
    Vec2 position;
    double heading = 0.0;  // radians in [-pi, pi)
    double speed = 0.0;    // m/s
};

struct Trajectory {
    std::vector<Pose> poses;  // exactly t_f entries; pose k is at time (k+1)*dt
    double dt = 0.5;
};

enum class LightState { red, green };

struct StopLine {
    Vec2 a;
    Vec2 b;
    LightState state = LightState::green;
};

struct Scene {
    int id = 0;
    GridSpec grid;
    std::vector<Agent> agents;
    std::vector<LaneCenterline> lanes;
    EgoState ego;
    BoolGrid drivable;
    std::optional<StopLine> stop_line;
    Trajectory gt;
};

struct ScenarioConfig {
    GridSpec grid;
    int t_f = 8;
    double dt = 0.5;

    int lane_count_min = 2;
    int lane_count_max = 3;
    double lane_half_width = 2.0;
    double lane_offset = 4.0;       // lateral spacing between centerlines
    double curvature_max = 0.008;   // 1/m
    double straight_prob = 0.4;
    double lane_back = 14.0;        // centerline extends this far behind ego
    double lane_sample_step = 1.0;  // polyline vertex spacing (arc length)

    int agents_min = 1;
    int agents_max = 5;
    double block_prob = 0.55;       // per-lane probability of a blocking agent
    double agent_radius_min = 0.9;
    double agent_radius_max = 1.4;
    double blocker_moving_prob = 0.4;
    double blocker_speed_max = 2.0;
    double background_speed_max = 2.0;

    double ego_radius = 1.0;
    double ego_speed_min = 4.0;
    double ego_speed_max = 11.0;
    double gt_clearance = 1.0;      // extra margin beyond radii sums

    double stopline_prob = 0.25;

    int max_retries = 100;
};

// Deterministic in (seed, config). Throws DataError when agent placement
// cannot satisfy the ground-truth clearance within the retry budget.
Scene generate_scene(std::uint64_t seed, const ScenarioConfig& cfg);

// Structural invariants: grid/mask agreement, lane validity, GT length,
// in-bounds, in-mask, and rollout clearance against every agent.
void validate_scene(const Scene& scene, double ego_radius, double min_clearance = 0.0);

// Minimum over the horizon of (center distance - radii sum) between the
// trajectory disc and one agent under constant-velocity rollout, scanned at
// `substeps` per trajectory interval with linear interpolation.
double min_agent_clearance(const Trajectory& traj, const Vec2& ego_start, const Agent& agent,
                           double ego_radius, int substeps = 10);

}  // namespace flowplan
