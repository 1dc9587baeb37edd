#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "flowplan/diffusion.hpp"
#include "flowplan/scene.hpp"

namespace flowplan {

struct MetricParams {
    double ego_radius = 1.0;
    double ttc_threshold = 1.0;  // seconds
    double ttc_horizon = 10.0;   // scan limit for time-to-collision
    double accel_max = 3.0;      // m/s^2
    double jerk_max = 5.0;       // m/s^3
};

// Weights of the soft terms {EP, LK, HC, EC, DDC}; must sum to 1.
struct SoftWeights {
    double ep = 0.2;
    double lk = 0.2;
    double hc = 0.2;
    double ec = 0.2;
    double ddc = 0.2;
};

struct SceneScores {
    int scene_id = 0;
    double nc = 1.0;   // no collision at matched timesteps (hard)
    double dac = 1.0;  // fraction of poses on drivable cells
    double ddc = 1.0;  // non-decreasing progress along the matched lane
    double tlc = 1.0;  // no red stop line crossed (hard)
    double ep = 1.0;   // progress relative to ground truth, clamped to [0, 1]
    double ttc = 1.0;  // min time-to-collision above threshold (hard)
    double lk = 1.0;   // fraction of poses inside the matched lane corridor
    double hc = 1.0;   // acceleration/jerk within comfort bounds
    double ec = 1.0;   // same bounds on the difference between replans
    double composite = 1.0;
    double min_ttc = 0.0;  // diagnostic, +inf when no collision course
};

// Sub-metrics of the selected trajectory against a constant-velocity rollout
// of the scene's agents. `previous` enables the extended-comfort term.
// Throws DataError when the trajectory timing does not match the scene.
SceneScores evaluate(const CandidateSet& candidates, const Scene& scene, const MetricParams& params,
                     const SoftWeights& weights, const CandidateSet* previous = nullptr);

// hard product (NC, DAC, TLC, TTC) x weighted mean of soft terms.
double composite_score(const SceneScores& s, const SoftWeights& weights);

// Earliest time >= 0 at which the two discs meet under constant velocities,
// +inf if never within `horizon`.
double time_to_collision(const Vec2& p_rel, const Vec2& v_rel, double radius_sum, double horizon);

// Lane whose mean lateral distance over the poses is minimal (ties -> lowest
// index). Shared by DDC / EP / LK.
int matched_lane(const Trajectory& traj, const Scene& scene);

struct MetricReport {
    std::vector<SceneScores> rows;
    SceneScores aggregate;  // per-field mean over rows
};

MetricReport aggregate_report(std::vector<SceneScores> rows);

nlohmann::json report_to_json(const MetricReport& report, const nlohmann::json& config_echo);
void write_report_json(const std::filesystem::path& path, const MetricReport& report,
                       const nlohmann::json& config_echo);
void write_report_csv(const std::filesystem::path& path, const MetricReport& report);

}  // namespace flowplan
