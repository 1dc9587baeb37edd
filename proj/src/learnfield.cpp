#include "flowplan/learnfield.hpp"

#include <cmath>

#include "flowplan/errors.hpp"

namespace flowplan {

FeatureGrid featurize(const Scene& scene, int radius) {
    if (radius < 0) throw std::invalid_argument("featurize: negative radius");
    const auto& grid = scene.grid;
    const int window = 2 * radius + 1;
    const int dim = feature_dim(radius);

    // Occupancy: cell center inside any agent disc.
    BoolGrid occ(grid.height_cells, grid.width_cells, 0);
    for (int r = 0; r < grid.height_cells; ++r) {
        for (int c = 0; c < grid.width_cells; ++c) {
            const Vec2 center = cell_to_world({r, c}, grid);
            for (const auto& a : scene.agents) {
                if ((center - a.position).norm() <= a.radius) {
                    occ.at(r, c) = 1;
                    break;
                }
            }
        }
    }

    const double dist_cap = std::hypot(grid.width_cells * grid.resolution,
                                       grid.height_cells * grid.resolution);
    std::span<const LaneCenterline> lanes(scene.lanes);

    FeatureGrid out;
    out.grid = grid;
    out.radius = radius;
    out.x = Eigen::MatrixXd(grid.cell_count(), dim);
    for (int r = 0; r < grid.height_cells; ++r) {
        for (int c = 0; c < grid.width_cells; ++c) {
            const int row = r * grid.width_cells + c;
            const Vec2 center = cell_to_world({r, c}, grid);
            int k = 0;
            for (int dr = -radius; dr <= radius; ++dr) {
                for (int dc = -radius; dc <= radius; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    const bool inside =
                        rr >= 0 && rr < grid.height_cells && cc >= 0 && cc < grid.width_cells;
                    out.x(row, k++) = inside && occ.at(rr, cc) ? 1.0 : 0.0;
                }
            }
            double dist = dist_cap;
            for (const auto& a : scene.agents) dist = std::min(dist, (center - a.position).norm());
            out.x(row, window * window + 0) = dist;
            const LanePointEval lane = lane_eval_at(center, lanes, LaneFieldParams{1.0, 1.0});
            out.x(row, window * window + 1) = lane.proj.d;
            out.x(row, window * window + 2) =
                lane.proj.s / std::max(scene.lanes[lane.lane].total_length(), 1e-9);
            out.x(row, window * window + 3) = scene.drivable.at(r, c) ? 1.0 : 0.0;
        }
    }
    return out;
}

Eigen::MatrixXd FieldRegressor::predict(const Eigen::MatrixXd& feats) const {
    if (feats.cols() != net.input_dim())
        throw std::invalid_argument("FieldRegressor::predict: feature dim mismatch");
    const Eigen::MatrixXd z =
        ((feats.rowwise() - in_mu).array().rowwise() / in_sigma.array()).matrix();
    const Eigen::MatrixXd y = net.forward(z);
    return ((y.array().rowwise() * out_sigma.array()).rowwise() + out_mu.array()).matrix();
}

std::size_t regressor_param_count(const FieldRegressor& reg) { return reg.net.param_count(); }

Eigen::VectorXd regressor_params(const FieldRegressor& reg) {
    Eigen::VectorXd p(static_cast<Eigen::Index>(reg.net.param_count()));
    reg.net.write_params(p.data());
    return p;
}

void set_regressor_params(FieldRegressor& reg, const Eigen::VectorXd& p) {
    reg.net.read_params(p.data());
}

double field_loss_and_grad(const FieldRegressor& reg, const Eigen::MatrixXd& feats,
                           const Eigen::MatrixXd& targets, double lambda, Eigen::VectorXd* grad) {
    const Eigen::Index n = feats.rows();
    const Eigen::MatrixXd z =
        ((feats.rowwise() - reg.in_mu).array().rowwise() / reg.in_sigma.array()).matrix();
    FeedForwardNet::Tape tape;
    const Eigen::MatrixXd y = reg.net.forward(z, tape);
    const Eigen::MatrixXd pred =
        ((y.array().rowwise() * reg.out_sigma.array()).rowwise() + reg.out_mu.array()).matrix();
    const Eigen::MatrixXd diff = pred - targets;
    // MSE per output channel, summed over channels.
    const double loss = lambda * diff.array().square().colwise().mean().sum();
    if (grad) {
        Eigen::MatrixXd dpred = (2.0 * lambda / static_cast<double>(n)) * diff;
        const Eigen::MatrixXd dy = (dpred.array().rowwise() * reg.out_sigma.array()).matrix();
        FeedForwardNet g = reg.net.zeros_like();
        reg.net.backward(tape, dy, g);
        grad->resize(static_cast<Eigen::Index>(reg.net.param_count()));
        g.write_params(grad->data());
    }
    return loss;
}

namespace {

Eigen::MatrixXd stack_features(std::span<const Scene> scenes, int radius, int stride,
                               Eigen::MatrixXd* targets,
                               std::span<const EnergyField> risk_targets,
                               std::span<const EnergyField> lane_targets) {
    Eigen::Index total = 0;
    for (const auto& scene : scenes) {
        total += ((scene.grid.height_cells + stride - 1) / stride) *
                 static_cast<Eigen::Index>((scene.grid.width_cells + stride - 1) / stride);
    }
    Eigen::MatrixXd x(total, feature_dim(radius));
    if (targets) targets->resize(total, 2);
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const FeatureGrid fg = featurize(scenes[i], radius);
        const auto& grid = scenes[i].grid;
        for (int r = 0; r < grid.height_cells; r += stride) {
            for (int c = 0; c < grid.width_cells; c += stride) {
                x.row(row) = fg.x.row(r * grid.width_cells + c);
                if (targets) {
                    (*targets)(row, 0) = risk_targets[i].value.at(r, c);
                    (*targets)(row, 1) = lane_targets[i].value.at(r, c);
                }
                ++row;
            }
        }
    }
    return x;
}

}  // namespace

FieldTrainResult train_field_regressor(std::span<const Scene> scenes,
                                       std::span<const EnergyField> risk_targets,
                                       std::span<const EnergyField> lane_targets,
                                       const FieldTrainConfig& cfg) {
    if (scenes.empty()) throw DataError("train_field_regressor: empty dataset");
    if (risk_targets.size() != scenes.size() || lane_targets.size() != scenes.size())
        throw DataError("train_field_regressor: targets do not match scenes");
    if (cfg.cell_stride < 1) throw std::invalid_argument("cell_stride must be >= 1");

    Eigen::MatrixXd targets;
    const Eigen::MatrixXd feats =
        stack_features(scenes, cfg.radius, cfg.cell_stride, &targets, risk_targets, lane_targets);

    FieldTrainResult result;
    FieldRegressor& reg = result.regressor;
    reg.radius = cfg.radius;
    reg.in_mu = feats.colwise().mean();
    reg.in_sigma =
        ((feats.rowwise() - reg.in_mu).array().square().colwise().mean().sqrt() + 1e-8).matrix();
    reg.out_mu = targets.colwise().mean();
    reg.out_sigma =
        ((targets.rowwise() - reg.out_mu).array().square().colwise().mean().sqrt() + 1e-8).matrix();

    Rng rng(cfg.seed);
    std::vector<int> widths{feature_dim(cfg.radius)};
    std::vector<Act> acts;
    for (const int h : cfg.hidden) {
        widths.push_back(h);
        acts.push_back(Act::tanh);
    }
    widths.push_back(2);
    acts.push_back(Act::identity);
    reg.net = FeedForwardNet::create(widths, acts, rng);

    Eigen::VectorXd params = regressor_params(reg);
    AdamState adam = AdamState::init(params.size(), {cfg.lr, 0.9, 0.999, 1e-8});

    Eigen::VectorXd grad;
    double loss = field_loss_and_grad(reg, feats, targets, cfg.lambda, nullptr);
    result.loss.push_back(loss);
    double last_finite = loss;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        loss = field_loss_and_grad(reg, feats, targets, cfg.lambda, &grad);
        if (!std::isfinite(loss)) throw DivergenceError("field regressor diverged", last_finite);
        last_finite = loss;
        if (cfg.opt == FieldOpt::adam) {
            adam_step(adam, params, grad);
        } else {
            if (!grad.allFinite()) throw DivergenceError("field regressor diverged", last_finite);
            params -= cfg.gd_step * grad;
        }
        set_regressor_params(reg, params);
        result.loss.push_back(field_loss_and_grad(reg, feats, targets, cfg.lambda, nullptr));
    }
    return result;
}

std::pair<EnergyField, EnergyField> predict_fields(const FieldRegressor& reg,
                                                   const FeatureGrid& feats) {
    if (feats.x.cols() != reg.net.input_dim())
        throw std::invalid_argument("predict_fields: feature dim mismatch");
    const Eigen::MatrixXd pred = reg.predict(feats.x);
    const auto& grid = feats.grid;

    EnergyField risk = zero_field(grid);
    EnergyField lane = zero_field(grid);
    for (int r = 0; r < grid.height_cells; ++r)
        for (int c = 0; c < grid.width_cells; ++c) {
            risk.value.at(r, c) = pred(r * grid.width_cells + c, 0);
            lane.value.at(r, c) = pred(r * grid.width_cells + c, 1);
        }

    // Central differences in the interior, one-sided at the borders.
    const auto fill_grad = [&](EnergyField& f) {
        const double inv2 = 1.0 / (2.0 * grid.resolution);
        const double inv1 = 1.0 / grid.resolution;
        for (int r = 0; r < grid.height_cells; ++r)
            for (int c = 0; c < grid.width_cells; ++c) {
                const auto& v = f.value;
                if (c > 0 && c < grid.width_cells - 1)
                    f.grad_u.at(r, c) = (v.at(r, c + 1) - v.at(r, c - 1)) * inv2;
                else if (c == 0)
                    f.grad_u.at(r, c) = (v.at(r, c + 1) - v.at(r, c)) * inv1;
                else
                    f.grad_u.at(r, c) = (v.at(r, c) - v.at(r, c - 1)) * inv1;
                if (r > 0 && r < grid.height_cells - 1)
                    f.grad_v.at(r, c) = (v.at(r + 1, c) - v.at(r - 1, c)) * inv2;
                else if (r == 0)
                    f.grad_v.at(r, c) = (v.at(r + 1, c) - v.at(r, c)) * inv1;
                else
                    f.grad_v.at(r, c) = (v.at(r, c) - v.at(r - 1, c)) * inv1;
            }
    };
    fill_grad(risk);
    fill_grad(lane);
    return {std::move(risk), std::move(lane)};
}

void save_field_regressor(const std::filesystem::path& weights_path, const FieldRegressor& reg) {
    std::vector<NamedTensor> tensors = net_tensors("net", reg.net);
    tensors.push_back(row_tensor("in_mu", reg.in_mu));
    tensors.push_back(row_tensor("in_sigma", reg.in_sigma));
    tensors.push_back(row_tensor("out_mu", reg.out_mu));
    tensors.push_back(row_tensor("out_sigma", reg.out_sigma));
    save_weights(weights_path, tensors);
}

FieldRegressor load_field_regressor(const std::filesystem::path& weights_path,
                                    const FieldTrainConfig& cfg) {
    FieldRegressor reg;
    reg.radius = cfg.radius;
    Rng rng(0);
    std::vector<int> widths{feature_dim(cfg.radius)};
    std::vector<Act> acts;
    for (const int h : cfg.hidden) {
        widths.push_back(h);
        acts.push_back(Act::tanh);
    }
    widths.push_back(2);
    acts.push_back(Act::identity);
    reg.net = FeedForwardNet::create(widths, acts, rng);

    const auto tensors = load_weights(weights_path);
    load_net_tensors("net", tensors, reg.net);
    reg.in_mu = tensor_row(find_tensor(tensors, "in_mu"));
    reg.in_sigma = tensor_row(find_tensor(tensors, "in_sigma"));
    reg.out_mu = tensor_row(find_tensor(tensors, "out_mu"));
    reg.out_sigma = tensor_row(find_tensor(tensors, "out_sigma"));
    return reg;
}

}  // namespace flowplan
