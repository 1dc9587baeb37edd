#include "flowplan/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "flowplan/errors.hpp"

namespace flowplan {

NoiseSchedule make_schedule(int T, ScheduleKind kind, double beta_start, double beta_end,
                            double cosine_offset) {
    if (T < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
    NoiseSchedule s;
    s.T = T;
    s.alpha.assign(T + 1, 1.0);
    s.alpha_bar.assign(T + 1, 1.0);

    if (kind == ScheduleKind::linear) {
        if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end))
            throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1");
        for (int t = 1; t <= T; ++t) {
            const double f = T == 1 ? 0.0 : static_cast<double>(t - 1) / (T - 1);
            s.alpha[t] = 1.0 - (beta_start + f * (beta_end - beta_start));
        }
    } else {
        if (!(cosine_offset > 0.0)) throw std::invalid_argument("make_schedule: bad cosine offset");
        const auto shape = [&](double t) {
            const double v = std::cos((t / T + cosine_offset) / (1.0 + cosine_offset) * M_PI / 2.0);
            return v * v;
        };
        const double f0 = shape(0.0);
        double prev = 1.0;
        for (int t = 1; t <= T; ++t) {
            const double cur = shape(static_cast<double>(t)) / f0;
            s.alpha[t] = std::clamp(cur / prev, 1e-8, 1.0 - 1e-8);
            prev = cur;
        }
    }
    for (int t = 1; t <= T; ++t) s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    return s;
}

Eigen::MatrixXd forward_noise(const Eigen::MatrixXd& a0, int t, const Eigen::MatrixXd& eps,
                              const NoiseSchedule& sched) {
    if (t < 0 || t > sched.T) throw std::invalid_argument("forward_noise: t out of range");
    if (eps.rows() != a0.rows() || eps.cols() != a0.cols())
        throw std::invalid_argument("forward_noise: eps shape mismatch");
    const double ab = sched.alpha_bar[t];
    return std::sqrt(ab) * a0 + std::sqrt(1.0 - ab) * eps;
}

Eigen::MatrixXd ddim_step(const Eigen::MatrixXd& a_t, const Eigen::MatrixXd& a0_hat, int t,
                          int t_prev, const NoiseSchedule& sched) {
    if (!(0 <= t_prev && t_prev < t && t <= sched.T))
        throw std::invalid_argument("ddim_step: need 0 <= t_prev < t <= T");
    if (a_t.rows() != a0_hat.rows() || a_t.cols() != a0_hat.cols())
        throw std::invalid_argument("ddim_step: shape mismatch");
    const double ab_t = sched.alpha_bar[t];
    const double ab_p = sched.alpha_bar[t_prev];
    const Eigen::MatrixXd eps_hat = (a_t - std::sqrt(ab_t) * a0_hat) / std::sqrt(1.0 - ab_t);
    return std::sqrt(ab_p) * a0_hat + std::sqrt(1.0 - ab_p) * eps_hat;
}

int Denoiser::input_dim(int t_f, const DenoiserConfig& cfg) {
    // noisy anchor | base anchor | local field samples | pooled(6) ego(5) t-embed
    return 2 * t_f + 2 * t_f + 6 * t_f + 6 + 5 + cfg.time_embed_dim;
}

Denoiser Denoiser::create(int n_anchors, int t_f, const DenoiserConfig& cfg, Rng& rng) {
    Denoiser d;
    d.cfg = cfg;
    d.n_anchors = n_anchors;
    d.t_f = t_f;
    const int in = input_dim(t_f, cfg);
    const int w = cfg.trunk_width;
    d.trunk = FeedForwardNet::create({in, w, w}, {Act::tanh, Act::tanh}, rng);
    d.g1 = GateVector::zeros(w);
    d.g2 = GateVector::zeros(w);
    d.mode_head = FeedForwardNet::create({w, cfg.head_hidden, 1}, {Act::tanh, Act::identity}, rng);
    d.traj_head =
        FeedForwardNet::create({w, cfg.head_hidden, 2 * t_f}, {Act::tanh, Act::identity}, rng);
    d.traj_head.zero_final_layer();
    return d;
}

std::size_t Denoiser::param_count() const {
    return trunk.param_count() + g1.logits.size() + g2.logits.size() + mode_head.param_count() +
           traj_head.param_count();
}

void Denoiser::write_params(double* out) const {
    trunk.write_params(out);
    out += trunk.param_count();
    std::memcpy(out, g1.logits.data(), sizeof(double) * g1.logits.size());
    out += g1.logits.size();
    std::memcpy(out, g2.logits.data(), sizeof(double) * g2.logits.size());
    out += g2.logits.size();
    mode_head.write_params(out);
    out += mode_head.param_count();
    traj_head.write_params(out);
}

const double* Denoiser::read_params(const double* in) {
    in = trunk.read_params(in);
    std::memcpy(g1.logits.data(), in, sizeof(double) * g1.logits.size());
    in += g1.logits.size();
    std::memcpy(g2.logits.data(), in, sizeof(double) * g2.logits.size());
    in += g2.logits.size();
    in = mode_head.read_params(in);
    return traj_head.read_params(in);
}

Eigen::RowVectorXd timestep_embedding(int t, int dim) {
    Eigen::RowVectorXd e(dim);
    for (int j = 0; j < dim / 2; ++j) {
        const double freq = std::pow(10000.0, -2.0 * j / dim);
        e(2 * j) = std::sin(t * freq);
        e(2 * j + 1) = std::cos(t * freq);
    }
    if (dim % 2) e(dim - 1) = 0.0;
    return e;
}

Eigen::MatrixXd local_field_features(const AnchorSet& anchors, const EnergyField& risk,
                                     const EnergyField& lane, const FieldWeights& weights) {
    Eigen::MatrixXd local(anchors.count(), 6 * anchors.t_f);
    for (int k = 0; k < anchors.count(); ++k) {
        for (int j = 0; j < anchors.t_f; ++j) {
            const Vec2 w = anchors.waypoint(k, j);
            const FieldSample r = sample_field_clamped(risk, w);
            const FieldSample l = sample_field_clamped(lane, w);
            local(k, 6 * j + 0) = weights.w_risk * r.value;
            local(k, 6 * j + 1) = weights.w_risk * r.grad.x;
            local(k, 6 * j + 2) = weights.w_risk * r.grad.y;
            local(k, 6 * j + 3) = weights.w_lane * l.value;
            local(k, 6 * j + 4) = weights.w_lane * l.grad.x;
            local(k, 6 * j + 5) = weights.w_lane * l.grad.y;
        }
    }
    return local;
}

Conditioning build_conditioning(const Eigen::RowVectorXd& pooled, const Eigen::RowVectorXd& ego_vec,
                                const Eigen::MatrixXd& local, int t, const DenoiserConfig& cfg) {
    Conditioning c;
    c.global.resize(pooled.size() + ego_vec.size() + cfg.time_embed_dim);
    c.global << pooled, ego_vec, timestep_embedding(t, cfg.time_embed_dim);
    c.local = local;
    return c;
}

DenoiserForward denoiser_forward(const Denoiser& den, const Eigen::MatrixXd& noisy,
                                 const AnchorSet& base, const Conditioning& cond) {
    const int n = den.n_anchors;
    if (noisy.rows() != n || base.count() != n || noisy.cols() != 2 * den.t_f)
        throw std::invalid_argument("denoiser_forward: shape mismatch");

    DenoiserForward fwd;
    fwd.trunk_in.resize(n, Denoiser::input_dim(den.t_f, den.cfg));
    for (int k = 0; k < n; ++k) {
        Eigen::Index col = 0;
        fwd.trunk_in.block(k, col, 1, noisy.cols()) = den.cfg.pos_scale * noisy.row(k);
        col += noisy.cols();
        fwd.trunk_in.block(k, col, 1, noisy.cols()) = den.cfg.pos_scale * base.coords.row(k);
        col += noisy.cols();
        fwd.trunk_in.block(k, col, 1, cond.local.cols()) = cond.local.row(k);
        col += cond.local.cols();
        fwd.trunk_in.block(k, col, 1, cond.global.size()) = cond.global;
    }
    fwd.h = den.trunk.forward(fwd.trunk_in, fwd.trunk_tape);
    fwd.h_mode = den.cfg.decoupled ? apply_gate(den.g1, fwd.h) : fwd.h;
    fwd.h_traj = den.cfg.decoupled ? apply_gate(den.g2, fwd.h) : fwd.h;
    fwd.logits = den.mode_head.forward(fwd.h_mode, fwd.mode_tape).col(0);
    fwd.a0_hat = base.coords + den.traj_head.forward(fwd.h_traj, fwd.traj_tape);
    return fwd;
}

void denoiser_backward(const Denoiser& den, const DenoiserForward& fwd,
                       const Eigen::MatrixXd& d_a0_hat, const Eigen::VectorXd& d_logits,
                       Denoiser& grads) {
    const Eigen::MatrixXd d_h_traj = den.traj_head.backward(fwd.traj_tape, d_a0_hat, grads.traj_head);
    const Eigen::MatrixXd d_h_mode =
        den.mode_head.backward(fwd.mode_tape, d_logits, grads.mode_head);
    Eigen::MatrixXd dh;
    if (den.cfg.decoupled) {
        dh = gate_backward(den.g2, fwd.h, d_h_traj, grads.g2.logits);
        dh += gate_backward(den.g1, fwd.h, d_h_mode, grads.g1.logits);
    } else {
        dh = d_h_traj + d_h_mode;
    }
    den.trunk.backward(fwd.trunk_tape, dh, grads.trunk);
}

nlohmann::json candidates_to_json(const CandidateSet& c) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["selected"] = c.selected;
    j["scores"] = std::vector<double>(c.scores.data(), c.scores.data() + c.scores.size());
    nlohmann::json trajs = nlohmann::json::array();
    for (const auto& t : c.trajectories) {
        nlohmann::json poses = nlohmann::json::array();
        for (const auto& p : t.poses) poses.push_back({p.x, p.y, p.heading});
        trajs.push_back({{"dt", t.dt}, {"poses", poses}});
    }
    j["trajectories"] = trajs;
    return j;
}

CandidateSet candidates_from_json(const nlohmann::json& j) {
    try {
        CandidateSet c;
        c.selected = j.at("selected").get<int>();
        const auto scores = j.at("scores").get<std::vector<double>>();
        c.scores = Eigen::Map<const Eigen::VectorXd>(scores.data(), scores.size());
        for (const auto& tj : j.at("trajectories")) {
            Trajectory t;
            t.dt = tj.at("dt").get<double>();
            for (const auto& p : tj.at("poses"))
                t.poses.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
            c.trajectories.push_back(std::move(t));
        }
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("candidates json: ") + e.what());
    }
}

Planner make_planner(const PlannerConfig& cfg, const AnchorSet& kmeans) {
    if (kmeans.count() != cfg.n_anchors || kmeans.t_f != cfg.t_f)
        throw DataError("make_planner: anchor set does not match config");
    Planner p;
    p.cfg = cfg;
    Rng rng(cfg.seed);
    p.denoiser = Denoiser::create(cfg.n_anchors, cfg.t_f, cfg.denoiser, rng);
    p.refine = RefinementNet::create(cfg.n_anchors, cfg.t_f, cfg.refine, rng);
    p.anchors = kmeans;
    p.sched = make_schedule(cfg.T, cfg.schedule, cfg.beta_start, cfg.beta_end);
    return p;
}

std::size_t planner_param_count(const Planner& p) {
    return p.denoiser.param_count() + p.refine.param_count();
}

Eigen::VectorXd planner_params(const Planner& p) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(planner_param_count(p)));
    p.denoiser.write_params(v.data());
    p.refine.write_params(v.data() + p.denoiser.param_count());
    return v;
}

void set_planner_params(Planner& p, const Eigen::VectorXd& params) {
    p.refine.read_params(p.denoiser.read_params(params.data()));
}

SceneFields compute_scene_fields(const Scene& scene, const RiskFieldParams& risk,
                                 const LaneFieldParams& lane, bool use_flow) {
    if (!use_flow) return {zero_field(scene.grid), zero_field(scene.grid)};
    return {risk_field(scene, risk), lane_field(scene, lane)};
}

AnchorSet conditioning_anchors(const Planner& p, const Scene& scene, const SceneFields& fields) {
    if (!p.cfg.use_refine) return p.anchors;
    return refine_anchors(p.anchors, fields.risk, fields.lane, scene.ego, p.refine, p.cfg.weights);
}

namespace {

double bce_with_logit(double z, double y) {
    // softplus(z) - y z, numerically stable
    const double sp = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
    return sp - y * z;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-std::clamp(z, -30.0, 30.0))); }

Eigen::RowVectorXd sign_row(const Eigen::RowVectorXd& v) {
    Eigen::RowVectorXd s(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) s(i) = v(i) > 0.0 ? 1.0 : (v(i) < 0.0 ? -1.0 : 0.0);
    return s;
}

}  // namespace

StepLosses planner_loss_and_grad(const Planner& p, const Scene& scene, const SceneFields& fields,
                                 int t, const Eigen::MatrixXd& eps, Eigen::VectorXd* grad) {
    const auto& cfg = p.cfg;
    const Eigen::RowVectorXd pooled = pool_fields(fields.risk, fields.lane, cfg.weights);
    const Eigen::RowVectorXd ego_vec = ego_features(scene.ego, cfg.refine);

    RefineForward rfwd;
    const AnchorSet* conditioned = &p.anchors;
    if (cfg.use_refine) {
        rfwd = refine_anchors_fwd(p.anchors, pooled, ego_vec, p.refine);
        conditioned = &rfwd.refined;
    }

    const Eigen::MatrixXd noisy = forward_noise(conditioned->coords, t, eps, p.sched);
    const Eigen::MatrixXd local =
        local_field_features(*conditioned, fields.risk, fields.lane, cfg.weights);
    const Conditioning cond = build_conditioning(pooled, ego_vec, local, t, cfg.denoiser);
    const DenoiserForward dfwd = denoiser_forward(p.denoiser, noisy, *conditioned, cond);

    const Eigen::RowVectorXd gt_row = trajectory_xy_row(scene.gt);
    const int n = cfg.n_anchors;
    const double inv_dim = 1.0 / static_cast<double>(2 * cfg.t_f);

    // Planning loss: L1 on the closest candidate plus averaged BCE over scores.
    const int sel_plan = closest_index(dfwd.a0_hat, scene.gt);
    StepLosses losses;
    const Eigen::RowVectorXd diff_plan = dfwd.a0_hat.row(sel_plan) - gt_row;
    losses.l_plan = cfg.lambda_traj * diff_plan.cwiseAbs().mean();
    for (int k = 0; k < n; ++k)
        losses.l_plan +=
            cfg.lambda_mode / n * bce_with_logit(dfwd.logits(k), k == sel_plan ? 1.0 : 0.0);

    // Anchor loss on the conditioning anchors closest to GT.
    const int sel_anchor = closest_index(conditioned->coords, scene.gt);
    const Eigen::RowVectorXd diff_anchor = conditioned->coords.row(sel_anchor) - gt_row;
    losses.l_anchor = cfg.lambda_anchor / n * diff_anchor.cwiseAbs().mean();
    losses.total = losses.l_plan + losses.l_anchor;

    if (grad) {
        Eigen::VectorXd flat(static_cast<Eigen::Index>(planner_param_count(p)));
        Denoiser dgrads = p.denoiser;
        dgrads.trunk = p.denoiser.trunk.zeros_like();
        dgrads.g1.logits.setZero();
        dgrads.g2.logits.setZero();
        dgrads.mode_head = p.denoiser.mode_head.zeros_like();
        dgrads.traj_head = p.denoiser.traj_head.zeros_like();

        Eigen::MatrixXd d_a0 = Eigen::MatrixXd::Zero(n, 2 * cfg.t_f);
        d_a0.row(sel_plan) = (cfg.lambda_traj * inv_dim) * sign_row(diff_plan);
        Eigen::VectorXd d_logits(n);
        for (int k = 0; k < n; ++k)
            d_logits(k) = cfg.lambda_mode / n * (sigmoid(dfwd.logits(k)) - (k == sel_plan ? 1.0 : 0.0));
        denoiser_backward(p.denoiser, dfwd, d_a0, d_logits, dgrads);
        dgrads.write_params(flat.data());

        if (cfg.use_refine) {
            RefinementNet rgrads = p.refine;
            rgrads.ego_encoder = p.refine.ego_encoder.zeros_like();
            rgrads.residual_head = p.refine.residual_head.zeros_like();
            Eigen::MatrixXd d_refined = Eigen::MatrixXd::Zero(n, 2 * cfg.t_f);
            d_refined.row(sel_anchor) = (cfg.lambda_anchor / n * inv_dim) * sign_row(diff_anchor);
            refine_anchors_bwd(rfwd, p.refine, d_refined, rgrads);
            rgrads.write_params(flat.data() + p.denoiser.param_count());
        } else {
            std::fill(flat.data() + p.denoiser.param_count(), flat.data() + flat.size(), 0.0);
        }
        *grad = flat;
    }
    return losses;
}

PlannerTrainState init_train_state(const Planner& p, std::uint64_t seed) {
    PlannerTrainState s;
    s.params = planner_params(p);
    s.m = Eigen::VectorXd::Zero(s.params.size());
    s.v = Eigen::VectorXd::Zero(s.params.size());
    s.adam_steps = 0;
    s.rng_state = Rng(seed).state();
    s.epoch = 0;
    return s;
}

TrainCurves train_planner(Planner& p, std::span<const Scene> scenes,
                          std::span<const SceneFields> fields, PlannerTrainState& state,
                          int epochs) {
    if (scenes.empty()) throw DataError("train_planner: empty dataset");
    if (fields.size() != scenes.size()) throw DataError("train_planner: fields/scenes mismatch");

    Rng rng(0);
    rng.set_state(state.rng_state);
    set_planner_params(p, state.params);
    AdamState adam{{p.cfg.lr, 0.9, 0.999, 1e-8}, state.m, state.v, state.adam_steps};

    TrainCurves curves;
    std::vector<std::size_t> order(scenes.size());
    double last_finite = 0.0;
    Eigen::VectorXd grad;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_int(i)]);

        double sum_plan = 0.0, sum_anchor = 0.0, sum_total = 0.0;
        for (const std::size_t idx : order) {
            const int t = 1 + static_cast<int>(rng.uniform_int(p.sched.T));
            Eigen::MatrixXd eps(p.cfg.n_anchors, 2 * p.cfg.t_f);
            for (Eigen::Index r = 0; r < eps.rows(); ++r)
                for (Eigen::Index c = 0; c < eps.cols(); ++c) eps(r, c) = rng.normal();

            const StepLosses losses =
                planner_loss_and_grad(p, scenes[idx], fields[idx], t, eps, &grad);
            if (!std::isfinite(losses.total))
                throw DivergenceError("planner training diverged", last_finite);
            last_finite = losses.total;
            adam_step(adam, state.params, grad);
            set_planner_params(p, state.params);

            sum_plan += losses.l_plan;
            sum_anchor += losses.l_anchor;
            sum_total += losses.total;
        }
        const double inv = 1.0 / static_cast<double>(order.size());
        curves.l_plan.push_back(sum_plan * inv);
        curves.l_anchor.push_back(sum_anchor * inv);
        curves.l_total.push_back(sum_total * inv);
        state.epoch += 1;
    }
    state.m = adam.m;
    state.v = adam.v;
    state.adam_steps = adam.step;
    state.rng_state = rng.state();
    return curves;
}

namespace {

std::vector<int> ddim_timesteps(int T, int steps) {
    std::vector<int> ts;
    for (int i = 0; i <= steps; ++i) {
        const int t = static_cast<int>(std::llround(static_cast<double>(T) * (steps - i) / steps));
        if (ts.empty() || t < ts.back()) ts.push_back(t);
    }
    if (ts.back() != 0) ts.push_back(0);
    return ts;
}

Trajectory row_to_trajectory(const Eigen::RowVectorXd& xy, int t_f, double dt, const EgoState& ego) {
    Trajectory traj;
    traj.dt = dt;
    traj.poses.resize(t_f);
    for (int j = 0; j < t_f; ++j) {
        traj.poses[j].x = xy(2 * j);
        traj.poses[j].y = xy(2 * j + 1);
    }
    // Headings from consecutive waypoint differences; the first leg starts at
    // the ego position, degenerate legs carry the previous heading forward.
    double prev = ego.heading;
    for (int j = 0; j < t_f; ++j) {
        const Vec2 from = j == 0 ? ego.position : traj.poses[j - 1].position();
        const Vec2 to = traj.poses[j].position();
        const Vec2 d = to - from;
        if (d.norm() > 1e-9) prev = std::atan2(d.y, d.x);
        traj.poses[j].heading = prev;
    }
    return traj;
}

}  // namespace

CandidateSet plan(const Planner& p, const Scene& scene, const SceneFields& fields, int ddim_steps,
                  std::uint64_t seed) {
    if (ddim_steps < 1) throw std::invalid_argument("plan: ddim_steps must be >= 1");
    const auto& cfg = p.cfg;
    const AnchorSet conditioned = conditioning_anchors(p, scene, fields);
    const Eigen::RowVectorXd pooled = pool_fields(fields.risk, fields.lane, cfg.weights);
    const Eigen::RowVectorXd ego_vec = ego_features(scene.ego, cfg.refine);
    const Eigen::MatrixXd local =
        local_field_features(conditioned, fields.risk, fields.lane, cfg.weights);

    Rng rng(seed);
    Eigen::MatrixXd eps(cfg.n_anchors, 2 * cfg.t_f);
    for (Eigen::Index r = 0; r < eps.rows(); ++r)
        for (Eigen::Index c = 0; c < eps.cols(); ++c) eps(r, c) = rng.normal();

    Eigen::MatrixXd a_t = forward_noise(conditioned.coords, p.sched.T, eps, p.sched);
    const std::vector<int> ts = ddim_timesteps(p.sched.T, ddim_steps);

    Eigen::MatrixXd a0_hat;
    Eigen::VectorXd logits;
    for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
        const int t = ts[i];
        const int t_prev = ts[i + 1];
        const Conditioning cond = build_conditioning(pooled, ego_vec, local, t, cfg.denoiser);
        const DenoiserForward dfwd = denoiser_forward(p.denoiser, a_t, conditioned, cond);
        a0_hat = dfwd.a0_hat;
        logits = dfwd.logits;
        a_t = ddim_step(a_t, a0_hat, t, t_prev, p.sched);
    }

    CandidateSet out;
    out.scores.resize(cfg.n_anchors);
    for (int k = 0; k < cfg.n_anchors; ++k) {
        out.trajectories.push_back(row_to_trajectory(a_t.row(k), cfg.t_f, scene.gt.dt, scene.ego));
        out.scores(k) = sigmoid(logits(k));
    }
    out.selected = 0;
    for (int k = 1; k < cfg.n_anchors; ++k)
        if (out.scores(k) > out.scores(out.selected)) out.selected = k;
    return out;
}

// ---- checkpoint io ------------------------------------------------------

nlohmann::json planner_config_to_json(const PlannerConfig& cfg) {
    return {{"n_anchors", cfg.n_anchors},
            {"t_f", cfg.t_f},
            {"T", cfg.T},
            {"schedule", cfg.schedule == ScheduleKind::linear ? "linear" : "cosine"},
            {"beta_start", cfg.beta_start},
            {"beta_end", cfg.beta_end},
            {"ddim_steps", cfg.ddim_steps},
            {"lambda_traj", cfg.lambda_traj},
            {"lambda_mode", cfg.lambda_mode},
            {"lambda_anchor", cfg.lambda_anchor},
            {"lr", cfg.lr},
            {"epochs", cfg.epochs},
            {"seed", cfg.seed},
            {"use_flow", cfg.use_flow},
            {"use_refine", cfg.use_refine},
            {"denoiser",
             {{"trunk_width", cfg.denoiser.trunk_width},
              {"head_hidden", cfg.denoiser.head_hidden},
              {"time_embed_dim", cfg.denoiser.time_embed_dim},
              {"pos_scale", cfg.denoiser.pos_scale},
              {"speed_scale", cfg.denoiser.speed_scale},
              {"decoupled", cfg.denoiser.decoupled}}},
            {"refine",
             {{"ego_hidden", cfg.refine.ego_hidden},
              {"head_hidden", cfg.refine.head_hidden},
              {"pos_scale", cfg.refine.pos_scale},
              {"speed_scale", cfg.refine.speed_scale}}},
            {"weights", {{"w_risk", cfg.weights.w_risk}, {"w_lane", cfg.weights.w_lane}}}};
}

PlannerConfig planner_config_from_json(const nlohmann::json& j) {
    try {
        PlannerConfig cfg;
        cfg.n_anchors = j.at("n_anchors").get<int>();
        cfg.t_f = j.at("t_f").get<int>();
        cfg.T = j.at("T").get<int>();
        cfg.schedule =
            j.at("schedule").get<std::string>() == "cosine" ? ScheduleKind::cosine : ScheduleKind::linear;
        cfg.beta_start = j.at("beta_start").get<double>();
        cfg.beta_end = j.at("beta_end").get<double>();
        cfg.ddim_steps = j.at("ddim_steps").get<int>();
        cfg.lambda_traj = j.at("lambda_traj").get<double>();
        cfg.lambda_mode = j.at("lambda_mode").get<double>();
        cfg.lambda_anchor = j.at("lambda_anchor").get<double>();
        cfg.lr = j.at("lr").get<double>();
        cfg.epochs = j.at("epochs").get<int>();
        cfg.seed = j.at("seed").get<std::uint64_t>();
        cfg.use_flow = j.at("use_flow").get<bool>();
        cfg.use_refine = j.at("use_refine").get<bool>();
        const auto& d = j.at("denoiser");
        cfg.denoiser.trunk_width = d.at("trunk_width").get<int>();
        cfg.denoiser.head_hidden = d.at("head_hidden").get<int>();
        cfg.denoiser.time_embed_dim = d.at("time_embed_dim").get<int>();
        cfg.denoiser.pos_scale = d.at("pos_scale").get<double>();
        cfg.denoiser.speed_scale = d.at("speed_scale").get<double>();
        cfg.denoiser.decoupled = d.at("decoupled").get<bool>();
        const auto& r = j.at("refine");
        cfg.refine.ego_hidden = r.at("ego_hidden").get<int>();
        cfg.refine.head_hidden = r.at("head_hidden").get<int>();
        cfg.refine.pos_scale = r.at("pos_scale").get<double>();
        cfg.refine.speed_scale = r.at("speed_scale").get<double>();
        cfg.weights.w_risk = j.at("weights").at("w_risk").get<double>();
        cfg.weights.w_lane = j.at("weights").at("w_lane").get<double>();
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("planner manifest: ") + e.what());
    }
}

void save_planner(const std::filesystem::path& weights_path,
                  const std::filesystem::path& manifest_path, const Planner& p) {
    std::vector<NamedTensor> tensors;
    for (auto& t : net_tensors("trunk", p.denoiser.trunk)) tensors.push_back(std::move(t));
    tensors.push_back(row_tensor("g1", p.denoiser.g1.logits));
    tensors.push_back(row_tensor("g2", p.denoiser.g2.logits));
    for (auto& t : net_tensors("mode_head", p.denoiser.mode_head)) tensors.push_back(std::move(t));
    for (auto& t : net_tensors("traj_head", p.denoiser.traj_head)) tensors.push_back(std::move(t));
    for (auto& t : net_tensors("refine_ego", p.refine.ego_encoder)) tensors.push_back(std::move(t));
    for (auto& t : net_tensors("refine_head", p.refine.residual_head)) tensors.push_back(std::move(t));
    tensors.push_back(matrix_tensor("anchors", p.anchors.coords));
    save_weights(weights_path, tensors);

    nlohmann::json manifest = planner_config_to_json(p.cfg);
    manifest["format_version"] = 1;
    std::ofstream out(manifest_path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + manifest_path.string());
    out << manifest.dump(1) << "\n";
}

Planner load_planner(const std::filesystem::path& weights_path,
                     const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path, std::ios::binary);
    if (!in) throw DataError("cannot open planner manifest: " + manifest_path.string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("planner manifest " + manifest_path.string() + ": " + e.what());
    }
    const PlannerConfig cfg = planner_config_from_json(manifest);

    const auto tensors = load_weights(weights_path);
    AnchorSet anchors;
    anchors.coords = tensor_matrix(find_tensor(tensors, "anchors"));
    anchors.t_f = cfg.t_f;
    anchors.provenance = AnchorProvenance::kmeans;
    if (anchors.count() != cfg.n_anchors || anchors.coords.cols() != 2 * cfg.t_f)
        throw DataError("planner checkpoint: anchor tensor shape mismatch");

    Planner p = make_planner(cfg, anchors);
    load_net_tensors("trunk", tensors, p.denoiser.trunk);
    p.denoiser.g1.logits = tensor_row(find_tensor(tensors, "g1"));
    p.denoiser.g2.logits = tensor_row(find_tensor(tensors, "g2"));
    load_net_tensors("mode_head", tensors, p.denoiser.mode_head);
    load_net_tensors("traj_head", tensors, p.denoiser.traj_head);
    load_net_tensors("refine_ego", tensors, p.refine.ego_encoder);
    load_net_tensors("refine_head", tensors, p.refine.residual_head);
    return p;
}

// ---- resume state ---------------------------------------------------------

namespace {

constexpr std::uint32_t kStateMagic = 0x53545046u;  // "FPTS"

void write_u64(std::ofstream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::ifstream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_vec(std::ofstream& out, const Eigen::VectorXd& v) {
    write_u64(out, static_cast<std::uint64_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        std::uint64_t bits;
        const double d = v(i);
        std::memcpy(&bits, &d, 8);
        write_u64(out, bits);
    }
}

Eigen::VectorXd read_vec(std::ifstream& in) {
    const std::uint64_t n = read_u64(in);
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    for (std::uint64_t i = 0; i < n; ++i) {
        const std::uint64_t bits = read_u64(in);
        double d;
        std::memcpy(&d, &bits, 8);
        v(static_cast<Eigen::Index>(i)) = d;
    }
    return v;
}

}  // namespace

void save_train_state(const std::filesystem::path& path, const PlannerTrainState& s) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    write_u64(out, kStateMagic);
    write_u64(out, 1);  // version
    write_vec(out, s.params);
    write_vec(out, s.m);
    write_vec(out, s.v);
    write_u64(out, s.adam_steps);
    for (const auto w : s.rng_state) write_u64(out, w);
    write_u64(out, static_cast<std::uint64_t>(s.epoch));
}

PlannerTrainState load_train_state(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open train state: " + path.string());
    if (read_u64(in) != kStateMagic) throw DataError("train state: bad magic");
    if (read_u64(in) != 1) throw DataError("train state: unsupported version");
    PlannerTrainState s;
    s.params = read_vec(in);
    s.m = read_vec(in);
    s.v = read_vec(in);
    s.adam_steps = read_u64(in);
    for (auto& w : s.rng_state) w = read_u64(in);
    s.epoch = static_cast<int>(read_u64(in));
    if (!in) throw DataError("train state: truncated file");
    return s;
}

}  // namespace flowplan
