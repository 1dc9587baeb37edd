#pragma once

#include <Eigen/Dense>
#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "flowplan/anchor.hpp"
#include "flowplan/field.hpp"
#include "flowplan/nnkit.hpp"
#include "flowplan/scene.hpp"

namespace flowplan {

// alpha[t] and alpha_bar[t] are indexed 1..T; alpha_bar[0] == 1 by convention.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
};

enum class ScheduleKind { linear, cosine };

// linear: betas spaced evenly over [beta_start, beta_end].
// cosine: squared-cosine cumulative shape with the usual small offset;
// per-step alphas are clamped away from {0, 1} and alpha_bar is rebuilt as
// their running product so the stored table is exactly the cumulative product.
NoiseSchedule make_schedule(int T, ScheduleKind kind, double beta_start = 1e-3,
                            double beta_end = 0.2, double cosine_offset = 0.008);

// a_t = sqrt(alpha_bar_t) * a0 + sqrt(1 - alpha_bar_t) * eps
Eigen::MatrixXd forward_noise(const Eigen::MatrixXd& a0, int t, const Eigen::MatrixXd& eps,
                              const NoiseSchedule& sched);

// Deterministic reverse step from t to t_prev (t_prev < t) given the
// denoiser's estimate of the clean sample.
Eigen::MatrixXd ddim_step(const Eigen::MatrixXd& a_t, const Eigen::MatrixXd& a0_hat, int t,
                          int t_prev, const NoiseSchedule& sched);

struct DenoiserConfig {
    int trunk_width = 96;
    int head_hidden = 48;
    int time_embed_dim = 8;
    double pos_scale = 0.05;
    double speed_scale = 0.1;
    bool decoupled = true;  // false: gating bypassed, both heads read the trunk directly
};

// Shared trunk over per-anchor rows, two learnable feature gates, and
// task-specific heads for mode scores and denoised waypoints.
struct Denoiser {
    DenoiserConfig cfg;
    int n_anchors = 0;
    int t_f = 0;
    FeedForwardNet trunk;
    GateVector g1;  // mode routing
    GateVector g2;  // trajectory routing
    FeedForwardNet mode_head;  // width -> hidden -> 1
    FeedForwardNet traj_head;  // width -> hidden -> 2*t_f, final layer zero-init

    static Denoiser create(int n_anchors, int t_f, const DenoiserConfig& cfg, Rng& rng);
    static int input_dim(int t_f, const DenoiserConfig& cfg);

    std::size_t param_count() const;
    void write_params(double* out) const;
    const double* read_params(const double* in);
};

struct Conditioning {
    Eigen::RowVectorXd global;  // pooled fields | ego | timestep embedding
    Eigen::MatrixXd local;      // N x 6*t_f field samples at the conditioning anchors
};

Eigen::RowVectorXd timestep_embedding(int t, int dim);
Eigen::MatrixXd local_field_features(const AnchorSet& anchors, const EnergyField& risk,
                                     const EnergyField& lane, const FieldWeights& weights);
Conditioning build_conditioning(const Eigen::RowVectorXd& pooled, const Eigen::RowVectorXd& ego_vec,
                                const Eigen::MatrixXd& local, int t, const DenoiserConfig& cfg);

struct DenoiserForward {
    Eigen::MatrixXd trunk_in;
    FeedForwardNet::Tape trunk_tape;
    Eigen::MatrixXd h;        // trunk features
    Eigen::MatrixXd h_mode;   // gated (or pass-through) features per head
    Eigen::MatrixXd h_traj;
    FeedForwardNet::Tape mode_tape;
    FeedForwardNet::Tape traj_tape;
    Eigen::VectorXd logits;   // N
    Eigen::MatrixXd a0_hat;   // N x 2*t_f, base anchors + head output
};

DenoiserForward denoiser_forward(const Denoiser& den, const Eigen::MatrixXd& noisy,
                                 const AnchorSet& base, const Conditioning& cond);

// Accumulates gradients for d(loss)/d(a0_hat) and d(loss)/d(logits).
void denoiser_backward(const Denoiser& den, const DenoiserForward& fwd,
                       const Eigen::MatrixXd& d_a0_hat, const Eigen::VectorXd& d_logits,
                       Denoiser& grads);

struct CandidateSet {
    std::vector<Trajectory> trajectories;
    Eigen::VectorXd scores;  // in (0, 1)
    int selected = 0;        // argmax score
};

nlohmann::json candidates_to_json(const CandidateSet& c);
CandidateSet candidates_from_json(const nlohmann::json& j);

struct PlannerConfig {
    int n_anchors = 20;
    int t_f = 8;
    int T = 50;
    ScheduleKind schedule = ScheduleKind::linear;
    double beta_start = 1e-3;
    double beta_end = 0.2;
    int ddim_steps = 2;
    double lambda_traj = 1.0;
    double lambda_mode = 0.5;
    double lambda_anchor = 0.5;
    double lr = 2e-3;
    int epochs = 100;
    std::uint64_t seed = 1;
    bool use_flow = true;    // false: zero fields everywhere (ablation "no-flow")
    bool use_refine = true;  // false: skip anchor refinement (ablation "no-adapt")
    DenoiserConfig denoiser;
    RefineNetConfig refine;
    FieldWeights weights;
};

struct Planner {
    PlannerConfig cfg;
    Denoiser denoiser;
    RefinementNet refine;
    AnchorSet anchors;  // k-means base
    NoiseSchedule sched;
};

Planner make_planner(const PlannerConfig& cfg, const AnchorSet& kmeans);

std::size_t planner_param_count(const Planner& p);
Eigen::VectorXd planner_params(const Planner& p);
void set_planner_params(Planner& p, const Eigen::VectorXd& params);

// Fields a planner consumes for one scene (zero fields under "no-flow").
struct SceneFields {
    EnergyField risk;
    EnergyField lane;
};
SceneFields compute_scene_fields(const Scene& scene, const RiskFieldParams& risk,
                                 const LaneFieldParams& lane, bool use_flow);

// Anchors the planner conditions on for this scene (refined unless disabled).
AnchorSet conditioning_anchors(const Planner& p, const Scene& scene, const SceneFields& fields);

struct StepLosses {
    double l_plan = 0.0;
    double l_anchor = 0.0;
    double total = 0.0;
};

// Composite loss for one (scene, t, eps) sample and, optionally, the analytic
// gradient w.r.t. the flat planner parameters [denoiser | refinement].
// The refinement path is supervised by the anchor term only.
StepLosses planner_loss_and_grad(const Planner& p, const Scene& scene, const SceneFields& fields,
                                 int t, const Eigen::MatrixXd& eps, Eigen::VectorXd* grad);

struct PlannerTrainState {
    Eigen::VectorXd params;
    Eigen::VectorXd m, v;
    std::uint64_t adam_steps = 0;
    std::array<std::uint64_t, 4> rng_state{};
    int epoch = 0;
};

PlannerTrainState init_train_state(const Planner& p, std::uint64_t seed);

struct TrainCurves {
    std::vector<double> l_plan;
    std::vector<double> l_anchor;
    std::vector<double> l_total;
};

// Runs `epochs` additional epochs (one optimizer step per scene per epoch),
// mutating planner parameters and the train state. Deterministic in the
// state's RNG. Throws DivergenceError when the loss leaves the finite range.
TrainCurves train_planner(Planner& p, std::span<const Scene> scenes,
                          std::span<const SceneFields> fields, PlannerTrainState& state,
                          int epochs);

// DDIM sampling around the conditioning anchors; deterministic given seed.
CandidateSet plan(const Planner& p, const Scene& scene, const SceneFields& fields, int ddim_steps,
                  std::uint64_t seed);

// Checkpoint = weights file (f32, includes anchors) + JSON manifest.
void save_planner(const std::filesystem::path& weights_path,
                  const std::filesystem::path& manifest_path, const Planner& p);
Planner load_planner(const std::filesystem::path& weights_path,
                     const std::filesystem::path& manifest_path);

nlohmann::json planner_config_to_json(const PlannerConfig& cfg);
PlannerConfig planner_config_from_json(const nlohmann::json& j);

// Full-precision resume state (params + optimizer moments + RNG position).
void save_train_state(const std::filesystem::path& path, const PlannerTrainState& s);
PlannerTrainState load_train_state(const std::filesystem::path& path);

}  // namespace flowplan
