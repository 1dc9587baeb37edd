#include "flowplan/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "flowplan/errors.hpp"
#include "flowplan/rng.hpp"

namespace flowplan {

LaneCenterline::LaneCenterline(std::vector<Vec2> polyline, double half_width)
    : points_(std::move(polyline)), half_width_(half_width) {
    if (points_.size() < 2) throw DataError("lane centerline needs at least 2 points");
    if (half_width_ <= 0.0) throw DataError("lane half width must be positive");
    cum_.resize(points_.size());
    cum_[0] = 0.0;
    for (std::size_t i = 1; i < points_.size(); ++i) {
        const double len = (points_[i] - points_[i - 1]).norm();
        if (len <= 0.0) throw DataError("lane centerline has duplicate consecutive points");
        cum_[i] = cum_[i - 1] + len;
    }
}

Vec2 LaneCenterline::point_at(double s) const {
    if (s <= 0.0) return points_.front();
    if (s >= total_length()) return points_.back();
    const auto it = std::upper_bound(cum_.begin(), cum_.end(), s);
    const std::size_t i = static_cast<std::size_t>(it - cum_.begin());  // cum_[i-1] <= s < cum_[i]
    const double t = (s - cum_[i - 1]) / (cum_[i] - cum_[i - 1]);
    return points_[i - 1] + t * (points_[i] - points_[i - 1]);
}

Vec2 LaneCenterline::tangent_at(double s) const {
    std::size_t i;
    if (s <= 0.0) {
        i = 1;
    } else if (s >= total_length()) {
        i = points_.size() - 1;
    } else {
        i = static_cast<std::size_t>(std::upper_bound(cum_.begin(), cum_.end(), s) - cum_.begin());
    }
    return (points_[i] - points_[i - 1]).normalized();
}

double LaneCenterline::heading_at(double s) const {
    const Vec2 t = tangent_at(s);
    return std::atan2(t.y, t.x);
}

Projection project_to_centerline(const Vec2& p, const LaneCenterline& lane) {
    const auto& pts = lane.polyline();
    Projection best;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const Vec2 a = pts[i];
        const Vec2 ab = pts[i + 1] - a;
        const double len2 = ab.squared_norm();
        double t = (p - a).dot(ab) / len2;
        const bool clamped = t <= 0.0 || t >= 1.0;
        t = std::clamp(t, 0.0, 1.0);
        const Vec2 q = a + t * ab;
        const double d2 = (p - q).squared_norm();
        if (d2 < best_d2) {  // strict: ties keep the lowest segment index
            best_d2 = d2;
            best.point = q;
            best.segment = static_cast<int>(i);
            best.t = t;
            best.clamped = clamped;
            best.s = lane.arclength_at(static_cast<int>(i)) + t * std::sqrt(len2);
        }
    }
    best.d = std::sqrt(best_d2);
    best.s = std::clamp(best.s, 0.0, lane.total_length());
    return best;
}

double min_agent_clearance(const Trajectory& traj, const Vec2& ego_start, const Agent& agent,
                           double ego_radius, int substeps) {
    const double r_sum = agent.radius + ego_radius;
    double min_clear = std::numeric_limits<double>::infinity();
    Vec2 prev = ego_start;
    double prev_t = 0.0;
    for (std::size_t k = 0; k < traj.poses.size(); ++k) {
        const Vec2 next = traj.poses[k].position();
        const double next_t = (static_cast<double>(k) + 1.0) * traj.dt;
        for (int i = 1; i <= substeps; ++i) {
            const double f = static_cast<double>(i) / substeps;
            const Vec2 ego_pos = prev + f * (next - prev);
            const double t = prev_t + f * (next_t - prev_t);
            const Vec2 agent_pos = agent.position + t * agent.velocity;
            min_clear = std::min(min_clear, (ego_pos - agent_pos).norm() - r_sum);
        }
        prev = next;
        prev_t = next_t;
    }
    return min_clear;
}

namespace {

// Constant-curvature base curve through the origin, tangent +x at s = 0.
Vec2 base_point(double s, double curvature) {
    if (std::abs(curvature) < 1e-12) return {s, 0.0};
    return {std::sin(curvature * s) / curvature, (1.0 - std::cos(curvature * s)) / curvature};
}

Vec2 base_normal(double s, double curvature) {
    const double a = curvature * s;
    return {-std::sin(a), std::cos(a)};  // left normal of the tangent
}

LaneCenterline build_lane(double offset, double curvature, const ScenarioConfig& cfg) {
    std::vector<Vec2> pts;
    const double margin = 0.5;
    for (double s = -cfg.lane_back;; s += cfg.lane_sample_step) {
        const Vec2 p = base_point(s, curvature) + offset * base_normal(s, curvature);
        if (p.x < cfg.grid.min_x() + margin || p.x > cfg.grid.max_x() - margin ||
            p.y < cfg.grid.min_y() + margin || p.y > cfg.grid.max_y() - margin) {
            if (s <= -cfg.lane_back) continue;  // entry edge: skip until inside
            break;
        }
        pts.push_back(p);
        if (s > 400.0) break;  // safety cap
    }
    if (pts.size() < 2) throw DataError("generated lane left the grid immediately");
    return LaneCenterline(std::move(pts), cfg.lane_half_width);
}

BoolGrid build_drivable_mask(const std::vector<LaneCenterline>& lanes, const GridSpec& grid) {
    BoolGrid mask(grid.height_cells, grid.width_cells, 0);
    for (int r = 0; r < grid.height_cells; ++r) {
        for (int c = 0; c < grid.width_cells; ++c) {
            const Vec2 center = cell_to_world({r, c}, grid);
            for (const auto& lane : lanes) {
                if (project_to_centerline(center, lane).d <= lane.half_width()) {
                    mask.at(r, c) = 1;
                    break;
                }
            }
        }
    }
    return mask;
}

bool clear_of_gt(const Trajectory& gt, const Vec2& ego_pos, const Agent& a,
                 double ego_radius, double margin) {
    return min_agent_clearance(gt, ego_pos, a, ego_radius) > margin;
}

Scene try_generate(Rng& rng, std::uint64_t seed, const ScenarioConfig& cfg) {
    Scene scene;
    scene.grid = cfg.grid;
    scene.id = static_cast<int>(seed & 0x7fffffff);

    // Lane family: parallel offsets of one base curve. The home lane
    // (offset 0) passes through the ego position.
    const double curvature =
        rng.uniform() < cfg.straight_prob ? 0.0 : rng.uniform(-cfg.curvature_max, cfg.curvature_max);
    const int lane_count =
        cfg.lane_count_min + static_cast<int>(rng.uniform_int(cfg.lane_count_max - cfg.lane_count_min + 1));
    std::vector<double> offsets;
    offsets.push_back(0.0);
    if (lane_count == 2) {
        offsets.push_back(rng.uniform() < 0.5 ? cfg.lane_offset : -cfg.lane_offset);
    } else {
        for (int i = 1; offsets.size() < static_cast<std::size_t>(lane_count); ++i) {
            offsets.push_back(i * cfg.lane_offset);
            if (offsets.size() < static_cast<std::size_t>(lane_count)) offsets.push_back(-i * cfg.lane_offset);
        }
    }
    std::sort(offsets.begin(), offsets.end());
    for (const double o : offsets) scene.lanes.push_back(build_lane(o, curvature, cfg));

    scene.drivable = build_drivable_mask(scene.lanes, scene.grid);

    // Ego-centric frame at t = 0.
    scene.ego.position = {0.0, 0.0};
    scene.ego.heading = 0.0;
    scene.ego.speed = rng.uniform(cfg.ego_speed_min, cfg.ego_speed_max);

    // Per-lane blockers; at least one lane stays clear.
    std::vector<bool> blocked(scene.lanes.size(), false);
    for (std::size_t i = 0; i < scene.lanes.size(); ++i) blocked[i] = rng.uniform() < cfg.block_prob;
    if (std::all_of(blocked.begin(), blocked.end(), [](bool b) { return b; }))
        blocked[rng.uniform_int(blocked.size())] = false;

    std::vector<Agent> blockers;
    std::vector<int> blocker_lane;
    for (std::size_t i = 0; i < scene.lanes.size(); ++i) {
        if (!blocked[i]) continue;
        const auto& lane = scene.lanes[i];
        const double s_ego = project_to_centerline(scene.ego.position, lane).s;
        Agent a;
        const double s_b = std::min(s_ego + rng.uniform(10.0, 26.0), lane.total_length() - 2.0);
        const Vec2 n = lane.tangent_at(s_b).perp();
        a.position = lane.point_at(s_b) + rng.uniform(-0.4, 0.4) * n;
        a.radius = rng.uniform(cfg.agent_radius_min, cfg.agent_radius_max);
        if (rng.uniform() < cfg.blocker_moving_prob)
            a.velocity = rng.uniform(0.5, cfg.blocker_speed_max) * lane.tangent_at(s_b);
        blockers.push_back(a);
        blocker_lane.push_back(static_cast<int>(i));
    }

    // Ground truth: constant speed along a clear lane. When the home lane is
    // blocked this encodes the scene's correct mode (shift left/right).
    std::vector<int> clear_lanes;
    for (std::size_t i = 0; i < scene.lanes.size(); ++i)
        if (!blocked[i]) clear_lanes.push_back(static_cast<int>(i));
    const int gt_lane_idx = clear_lanes[rng.uniform_int(clear_lanes.size())];
    const auto& gt_lane = scene.lanes[gt_lane_idx];

    const double s0 = project_to_centerline(scene.ego.position, gt_lane).s;
    const double horizon = cfg.t_f * cfg.dt;
    double speed = scene.ego.speed;
    const double max_speed = (gt_lane.total_length() - 1.0 - s0) / horizon;
    if (speed > max_speed) {
        speed = max_speed;
        scene.ego.speed = speed;
    }
    if (speed <= 0.5) throw DataError("lane too short for a forward ground truth");

    scene.gt.dt = cfg.dt;
    scene.gt.poses.clear();
    for (int k = 1; k <= cfg.t_f; ++k) {
        const double s = s0 + speed * k * cfg.dt;
        const Vec2 p = gt_lane.point_at(s);
        scene.gt.poses.push_back({p.x, p.y, gt_lane.heading_at(s)});
    }

    for (std::size_t b = 0; b < blockers.size(); ++b) {
        // Parallel lanes keep blockers off the GT corridor; reject the rare
        // jitter/radius draw that still gets too close.
        if (!clear_of_gt(scene.gt, scene.ego.position, blockers[b], cfg.ego_radius, cfg.gt_clearance))
            throw DataError("blocker violates ground-truth clearance");
        scene.agents.push_back(blockers[b]);
    }

    // Background agents anywhere in the grid that keep clear of the GT rollout.
    const int target_agents =
        cfg.agents_min + static_cast<int>(rng.uniform_int(cfg.agents_max - cfg.agents_min + 1));
    const int n_background = std::max(0, target_agents - static_cast<int>(scene.agents.size()));
    for (int i = 0; i < n_background; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
            Agent a;
            a.position = {rng.uniform(scene.grid.min_x() + 2.0, scene.grid.max_x() - 2.0),
                          rng.uniform(scene.grid.min_y() + 2.0, scene.grid.max_y() - 2.0)};
            a.radius = rng.uniform(cfg.agent_radius_min, cfg.agent_radius_max);
            const double sp = rng.uniform(0.0, cfg.background_speed_max);
            const double ang = rng.uniform(-M_PI, M_PI);
            a.velocity = {sp * std::cos(ang), sp * std::sin(ang)};

            if ((a.position - scene.ego.position).norm() < a.radius + cfg.ego_radius + 1.0) continue;
            if (!clear_of_gt(scene.gt, scene.ego.position, a, cfg.ego_radius, cfg.gt_clearance)) continue;
            bool overlaps = false;
            for (const auto& other : scene.agents)
                if ((a.position - other.position).norm() < a.radius + other.radius + 0.2) overlaps = true;
            if (overlaps) continue;

            scene.agents.push_back(a);
            placed = true;
            break;
        }
        if (!placed) throw DataError("agent placement failed: density too high for clearance constraints");
    }

    // Optional stop line across the home lane. Red lines are placed beyond the
    // GT's final progress so the ground truth never crosses them.
    if (rng.uniform() < cfg.stopline_prob) {
        const auto& home = scene.lanes[std::find(offsets.begin(), offsets.end(), 0.0) - offsets.begin()];
        const bool red = rng.uniform() < 0.5;
        double s_line;
        if (red) {
            const double gt_end_s = project_to_centerline(scene.gt.poses.back().position(), home).s;
            s_line = gt_end_s + rng.uniform(3.0, 8.0);
        } else {
            s_line = project_to_centerline(scene.ego.position, home).s + rng.uniform(8.0, 30.0);
        }
        if (s_line < home.total_length() - 1.0) {
            const Vec2 c = home.point_at(s_line);
            const Vec2 n = home.tangent_at(s_line).perp();
            const double w = home.half_width() + 0.5;
            scene.stop_line = StopLine{c - w * n, c + w * n, red ? LightState::red : LightState::green};
        }
    }

    validate_scene(scene, cfg.ego_radius, cfg.gt_clearance);
    return scene;
}

}  // namespace

Scene generate_scene(std::uint64_t seed, const ScenarioConfig& cfg) {
    if (!cfg.grid.valid()) throw DataError("invalid grid spec");
    if (cfg.t_f < 1 || cfg.dt <= 0.0) throw DataError("invalid horizon");
    if (cfg.agents_min > cfg.agents_max || cfg.lane_count_min > cfg.lane_count_max ||
        cfg.lane_count_min < 1)
        throw DataError("invalid scenario ranges");

    Rng rng(seed);
    std::string last_error;
    for (int attempt = 0; attempt < 8; ++attempt) {
        try {
            return try_generate(rng, seed, cfg);
        } catch (const DataError& e) {
            last_error = e.what();
        }
    }
    throw DataError("generate_scene exhausted retries: " + last_error);
}

void validate_scene(const Scene& scene, double ego_radius, double min_clearance) {
    if (!scene.grid.valid()) throw DataError("scene: invalid grid");
    if (scene.drivable.height() != scene.grid.height_cells ||
        scene.drivable.width() != scene.grid.width_cells)
        throw DataError("scene: drivable mask does not match grid");
    if (scene.lanes.empty()) throw DataError("scene: no lanes");
    for (const auto& a : scene.agents)
        if (a.radius <= 0.0) throw DataError("scene: agent with non-positive radius");
    if (scene.ego.heading < -M_PI || scene.ego.heading >= M_PI)
        throw DataError("scene: ego heading out of range");
    if (scene.ego.speed < 0.0) throw DataError("scene: negative ego speed");
    if (scene.gt.poses.empty() || scene.gt.dt <= 0.0) throw DataError("scene: empty ground truth");
    for (const auto& pose : scene.gt.poses) {
        if (!std::isfinite(pose.x) || !std::isfinite(pose.y) || !std::isfinite(pose.heading))
            throw DataError("scene: non-finite ground-truth pose");
        const auto cell = world_to_cell(pose.position(), scene.grid);
        if (!cell) throw DataError("scene: ground truth leaves the grid");
        if (!scene.drivable.at(cell->row, cell->col))
            throw DataError("scene: ground truth leaves the drivable mask");
    }
    for (const auto& a : scene.agents) {
        if (min_agent_clearance(scene.gt, scene.ego.position, a, ego_radius) <= min_clearance)
            throw DataError("scene: ground truth too close to an agent");
    }
}

}  // namespace flowplan
