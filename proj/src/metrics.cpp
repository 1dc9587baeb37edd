#include "flowplan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "flowplan/errors.hpp"

namespace flowplan {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double pose_time(std::size_t k, double dt) { return (static_cast<double>(k) + 1.0) * dt; }

bool segments_intersect(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
    const auto orient = [](const Vec2& p, const Vec2& q, const Vec2& r) {
        const double v = (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x);
        return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0);
    };
    const int o1 = orient(a, b, c), o2 = orient(a, b, d);
    const int o3 = orient(c, d, a), o4 = orient(c, d, b);
    if (o1 != o2 && o3 != o4) return true;
    const auto on_segment = [](const Vec2& p, const Vec2& q, const Vec2& r) {
        return std::min(p.x, q.x) <= r.x && r.x <= std::max(p.x, q.x) &&
               std::min(p.y, q.y) <= r.y && r.y <= std::max(p.y, q.y);
    };
    if (o1 == 0 && on_segment(a, b, c)) return true;
    if (o2 == 0 && on_segment(a, b, d)) return true;
    if (o3 == 0 && on_segment(c, d, a)) return true;
    if (o4 == 0 && on_segment(c, d, b)) return true;
    return false;
}

// Max second/third finite-difference magnitudes of a position sequence.
void comfort_diffs(const std::vector<Vec2>& p, double dt, double& max_accel, double& max_jerk) {
    max_accel = 0.0;
    max_jerk = 0.0;
    const double inv2 = 1.0 / (dt * dt);
    const double inv3 = 1.0 / (dt * dt * dt);
    for (std::size_t k = 1; k + 1 < p.size(); ++k) {
        const Vec2 a = (p[k + 1] - 2.0 * p[k] + p[k - 1]) * inv2;
        max_accel = std::max(max_accel, a.norm());
    }
    for (std::size_t k = 1; k + 2 < p.size(); ++k) {
        const Vec2 j = (p[k + 2] - 3.0 * p[k + 1] + 3.0 * p[k] - p[k - 1]) * inv3;
        max_jerk = std::max(max_jerk, j.norm());
    }
}

}  // namespace

double time_to_collision(const Vec2& p_rel, const Vec2& v_rel, double radius_sum, double horizon) {
    const double c = p_rel.squared_norm() - radius_sum * radius_sum;
    if (c <= 0.0) return 0.0;  // already overlapping
    const double a = v_rel.squared_norm();
    const double b = 2.0 * p_rel.dot(v_rel);
    if (a < 1e-12 || b >= 0.0) return kInf;  // static or separating
    const double disc = b * b - 4.0 * a * c;
    if (disc < 0.0) return kInf;
    const double tau = (-b - std::sqrt(disc)) / (2.0 * a);
    return tau <= horizon ? tau : kInf;
}

int matched_lane(const Trajectory& traj, const Scene& scene) {
    int best = 0;
    double best_mean = kInf;
    for (std::size_t i = 0; i < scene.lanes.size(); ++i) {
        double sum = 0.0;
        for (const auto& pose : traj.poses)
            sum += project_to_centerline(pose.position(), scene.lanes[i]).d;
        const double mean = sum / static_cast<double>(traj.poses.size());
        if (mean < best_mean) {
            best_mean = mean;
            best = static_cast<int>(i);
        }
    }
    return best;
}

SceneScores evaluate(const CandidateSet& candidates, const Scene& scene, const MetricParams& params,
                     const SoftWeights& weights, const CandidateSet* previous) {
    if (candidates.trajectories.empty()) throw DataError("evaluate: empty candidate set");
    const Trajectory& traj = candidates.trajectories[candidates.selected];
    if (traj.poses.empty()) throw DataError("evaluate: selected trajectory is empty");
    if (std::abs(traj.dt - scene.gt.dt) > 1e-12)
        throw DataError("evaluate: trajectory dt does not match scene dt");
    if (traj.poses.size() != scene.gt.poses.size())
        throw DataError("evaluate: trajectory horizon does not match scene t_f");

    SceneScores s;
    s.scene_id = scene.id;
    const std::size_t n = traj.poses.size();

    // NC: disc overlap test at every matched timestep.
    s.nc = 1.0;
    for (std::size_t k = 0; k < n && s.nc > 0.0; ++k) {
        const double t = pose_time(k, traj.dt);
        for (const auto& a : scene.agents) {
            const Vec2 ap = a.position + t * a.velocity;
            if ((traj.poses[k].position() - ap).norm() <= params.ego_radius + a.radius) {
                s.nc = 0.0;
                break;
            }
        }
    }

    // DAC: pose cells inside the drivable mask.
    int on_drivable = 0;
    for (const auto& pose : traj.poses) {
        const auto cell = world_to_cell(pose.position(), scene.grid);
        if (cell && scene.drivable.at(cell->row, cell->col)) ++on_drivable;
    }
    s.dac = static_cast<double>(on_drivable) / static_cast<double>(n);

    // Lane-relative metrics on the matched lane.
    const int lane_idx = matched_lane(traj, scene);
    const auto& lane = scene.lanes[lane_idx];
    std::vector<double> arcs(n);
    int in_corridor = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const Projection proj = project_to_centerline(traj.poses[k].position(), lane);
        arcs[k] = proj.s;
        if (proj.d < lane.half_width()) ++in_corridor;
    }
    s.lk = static_cast<double>(in_corridor) / static_cast<double>(n);
    s.ddc = 1.0;
    for (std::size_t k = 0; k + 1 < n; ++k)
        if (arcs[k + 1] < arcs[k] - 1e-9) s.ddc = 0.0;

    // EP: arc-length progress relative to the ground truth on its own lane.
    const int gt_lane_idx = matched_lane(scene.gt, scene);
    const auto& gt_lane = scene.lanes[gt_lane_idx];
    const double gt_progress =
        project_to_centerline(scene.gt.poses.back().position(), gt_lane).s -
        project_to_centerline(scene.gt.poses.front().position(), gt_lane).s;
    if (gt_progress < 1e-9) {
        s.ep = 1.0;
    } else {
        s.ep = std::clamp((arcs.back() - arcs.front()) / gt_progress, 0.0, 1.0);
    }

    // TLC: no red stop line crossed; the first leg starts at the ego position.
    s.tlc = 1.0;
    if (scene.stop_line && scene.stop_line->state == LightState::red) {
        Vec2 prev = scene.ego.position;
        for (const auto& pose : traj.poses) {
            if (segments_intersect(prev, pose.position(), scene.stop_line->a, scene.stop_line->b)) {
                s.tlc = 0.0;
                break;
            }
            prev = pose.position();
        }
    }

    // TTC: constant-velocity closed form from every trajectory state.
    s.min_ttc = kInf;
    Vec2 prev_pos = scene.ego.position;
    for (std::size_t k = 0; k < n; ++k) {
        const Vec2 pos = traj.poses[k].position();
        const Vec2 vel = (pos - prev_pos) / traj.dt;
        const double t = pose_time(k, traj.dt);
        for (const auto& a : scene.agents) {
            const Vec2 ap = a.position + t * a.velocity;
            const double tau =
                time_to_collision(pos - ap, vel - a.velocity, params.ego_radius + a.radius,
                                  params.ttc_horizon);
            s.min_ttc = std::min(s.min_ttc, tau);
        }
        prev_pos = pos;
    }
    s.ttc = s.min_ttc > params.ttc_threshold ? 1.0 : 0.0;

    // HC: comfort bounds on the trajectory itself.
    std::vector<Vec2> positions;
    positions.reserve(n);
    for (const auto& pose : traj.poses) positions.push_back(pose.position());
    double max_accel = 0.0, max_jerk = 0.0;
    comfort_diffs(positions, traj.dt, max_accel, max_jerk);
    s.hc = (max_accel <= params.accel_max && max_jerk <= params.jerk_max) ? 1.0 : 0.0;

    // EC: comfort bounds on the difference between consecutive replans.
    s.ec = 1.0;
    if (previous) {
        const Trajectory& prev_traj = previous->trajectories[previous->selected];
        if (prev_traj.poses.size() != n)
            throw DataError("evaluate: replan horizons differ for the comfort term");
        std::vector<Vec2> delta(n);
        for (std::size_t k = 0; k < n; ++k)
            delta[k] = traj.poses[k].position() - prev_traj.poses[k].position();
        comfort_diffs(delta, traj.dt, max_accel, max_jerk);
        s.ec = (max_accel <= params.accel_max && max_jerk <= params.jerk_max) ? 1.0 : 0.0;
    }

    s.composite = composite_score(s, weights);
    return s;
}

double composite_score(const SceneScores& s, const SoftWeights& w) {
    const double sum = w.ep + w.lk + w.hc + w.ec + w.ddc;
    if (w.ep < 0.0 || w.lk < 0.0 || w.hc < 0.0 || w.ec < 0.0 || w.ddc < 0.0 ||
        std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("composite_score: soft weights must be non-negative and sum to 1");
    const double hard = s.nc * s.dac * s.tlc * s.ttc;
    const double soft = w.ep * s.ep + w.lk * s.lk + w.hc * s.hc + w.ec * s.ec + w.ddc * s.ddc;
    return hard * soft;
}

MetricReport aggregate_report(std::vector<SceneScores> rows) {
    MetricReport report;
    report.rows = std::move(rows);
    SceneScores& agg = report.aggregate;
    agg = SceneScores{};
    agg.scene_id = -1;
    if (report.rows.empty()) return report;
    agg.nc = agg.dac = agg.ddc = agg.tlc = agg.ep = agg.ttc = agg.lk = agg.hc = agg.ec =
        agg.composite = 0.0;
    double min_ttc = kInf;
    for (const auto& r : report.rows) {
        agg.nc += r.nc;
        agg.dac += r.dac;
        agg.ddc += r.ddc;
        agg.tlc += r.tlc;
        agg.ep += r.ep;
        agg.ttc += r.ttc;
        agg.lk += r.lk;
        agg.hc += r.hc;
        agg.ec += r.ec;
        agg.composite += r.composite;
        min_ttc = std::min(min_ttc, r.min_ttc);
    }
    const double inv = 1.0 / static_cast<double>(report.rows.size());
    agg.nc *= inv;
    agg.dac *= inv;
    agg.ddc *= inv;
    agg.tlc *= inv;
    agg.ep *= inv;
    agg.ttc *= inv;
    agg.lk *= inv;
    agg.hc *= inv;
    agg.ec *= inv;
    agg.composite *= inv;
    agg.min_ttc = min_ttc;
    return report;
}

namespace {

nlohmann::json scores_to_json(const SceneScores& s) {
    return {{"scene_id", s.scene_id},
            {"NC", s.nc},
            {"DAC", s.dac},
            {"DDC", s.ddc},
            {"TLC", s.tlc},
            {"EP", s.ep},
            {"TTC", s.ttc},
            {"LK", s.lk},
            {"HC", s.hc},
            {"EC", s.ec},
            {"mini_epdms", s.composite},
            {"min_ttc", std::isfinite(s.min_ttc) ? nlohmann::json(s.min_ttc) : nlohmann::json(nullptr)}};
}

}  // namespace

nlohmann::json report_to_json(const MetricReport& report, const nlohmann::json& config_echo) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows) rows.push_back(scores_to_json(r));
    return {{"format_version", 1},
            {"config", config_echo},
            {"scenes", rows},
            {"aggregate", scores_to_json(report.aggregate)}};
}

void write_report_json(const std::filesystem::path& path, const MetricReport& report,
                       const nlohmann::json& config_echo) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << report_to_json(report, config_echo).dump(1) << "\n";
}

void write_report_csv(const std::filesystem::path& path, const MetricReport& report) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << "scene_id,NC,DAC,DDC,TLC,EP,TTC,LK,HC,EC,mini_epdms\n";
    char line[512];
    const auto write_row = [&](const SceneScores& s, const char* id) {
        std::snprintf(line, sizeof(line),
                      "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", id, s.nc,
                      s.dac, s.ddc, s.tlc, s.ep, s.ttc, s.lk, s.hc, s.ec, s.composite);
        out << line;
    };
    for (const auto& r : report.rows) write_row(r, std::to_string(r.scene_id).c_str());
    write_row(report.aggregate, "aggregate");
}

}  // namespace flowplan
