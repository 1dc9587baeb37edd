#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <span>
#include <vector>

#include "flowplan/field.hpp"
#include "flowplan/nnkit.hpp"
#include "flowplan/scene.hpp"

namespace flowplan {

// Per-cell feature layout (row of the feature matrix):
//   [0, (2r+1)^2)            occupancy window, row-major, out-of-grid = 0
//   (2r+1)^2 + 0             distance to nearest agent center (capped)
//   (2r+1)^2 + 1             lateral distance d to the nearest lane
//   (2r+1)^2 + 2             normalized arc length s / L on that lane
//   (2r+1)^2 + 3             drivable flag
constexpr int feature_dim(int radius) { return (2 * radius + 1) * (2 * radius + 1) + 4; }

struct FeatureGrid {
    GridSpec grid;
    int radius = 2;
    Eigen::MatrixXd x;  // cell_count x feature_dim, cells row-major
};

FeatureGrid featurize(const Scene& scene, int radius);

// Small feed-forward map from cell features to (risk, lane) energies.
// Inputs are standardized and outputs de-standardized with constants fixed
// at training time; both transforms are part of the model.
struct FieldRegressor {
    int radius = 2;
    FeedForwardNet net;
    Eigen::RowVectorXd in_mu, in_sigma;    // feature standardization
    Eigen::RowVectorXd out_mu, out_sigma;  // target de-standardization

    // rows of feats -> rows of (risk, lane) in field units
    Eigen::MatrixXd predict(const Eigen::MatrixXd& feats) const;
};

enum class FieldOpt { adam, gd };

struct FieldTrainConfig {
    int radius = 2;
    std::vector<int> hidden{32, 32};
    int epochs = 200;
    double lambda = 1.0;  // flow-loss coefficient
    FieldOpt opt = FieldOpt::adam;
    double lr = 0.05;        // adam
    double gd_step = 1e-3;   // plain gradient descent
    int cell_stride = 1;     // train on every stride-th cell per row/col
    std::uint64_t seed = 1;
};

struct FieldTrainResult {
    FieldRegressor regressor;
    std::vector<double> loss;  // loss[0] = before training, then one entry per epoch
};

// Full-batch training against the analytic fields. Loss per epoch is
// lambda * (MSE(risk_hat, risk) + MSE(lane_hat, lane)) in raw field units.
// Throws DivergenceError if the loss leaves the finite range.
FieldTrainResult train_field_regressor(std::span<const Scene> scenes,
                                       std::span<const EnergyField> risk_targets,
                                       std::span<const EnergyField> lane_targets,
                                       const FieldTrainConfig& cfg);

// Loss + analytic parameter gradient at the regressor's current parameters
// (used by training and by the gradient-check suite).
double field_loss_and_grad(const FieldRegressor& reg, const Eigen::MatrixXd& feats,
                           const Eigen::MatrixXd& targets, double lambda, Eigen::VectorXd* grad);

std::size_t regressor_param_count(const FieldRegressor& reg);
Eigen::VectorXd regressor_params(const FieldRegressor& reg);
void set_regressor_params(FieldRegressor& reg, const Eigen::VectorXd& p);

// Per-cell application. Gradient channels are central differences of the
// predicted grid; the learned map has no closed-form derivative.
std::pair<EnergyField, EnergyField> predict_fields(const FieldRegressor& reg,
                                                   const FeatureGrid& feats);

void save_field_regressor(const std::filesystem::path& weights_path, const FieldRegressor& reg);
FieldRegressor load_field_regressor(const std::filesystem::path& weights_path,
                                    const FieldTrainConfig& cfg);

}  // namespace flowplan
