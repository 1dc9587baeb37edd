#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "flowplan/rng.hpp"

namespace flowplan {

enum class Act { identity, tanh, sigmoid };

struct Layer {
    Eigen::MatrixXd w;     // (in, out)
    Eigen::RowVectorXd b;  // (out)
    Act act = Act::identity;
};

// Dense feed-forward network over row-major batches: rows are samples.
struct FeedForwardNet {
    std::vector<Layer> layers;

    // widths = {in, h1, ..., out}; one activation per layer.
    // Weights are fan-in uniform, biases zero.
    static FeedForwardNet create(const std::vector<int>& widths, const std::vector<Act>& acts,
                                 Rng& rng);

    int input_dim() const { return static_cast<int>(layers.front().w.rows()); }
    int output_dim() const { return static_cast<int>(layers.back().w.cols()); }

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;

    struct Tape {
        std::vector<Eigen::MatrixXd> inputs;  // input to each layer
        std::vector<Eigen::MatrixXd> post;    // activated output of each layer
    };
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Tape& tape) const;

    // Accumulates parameter gradients into `grad` (same shapes, caller-zeroed)
    // and returns the gradient w.r.t. the input batch.
    Eigen::MatrixXd backward(const Tape& tape, const Eigen::MatrixXd& dy, FeedForwardNet& grad) const;

    FeedForwardNet zeros_like() const;
    void zero_final_layer();

    std::size_t param_count() const;
    void write_params(double* out) const;       // layer order: w (col-major), then b
    const double* read_params(const double* in);  // returns advanced pointer
};

// Per-feature learnable gates: effective gate = sigmoid(clamp(logits, +-30)).
struct GateVector {
    Eigen::RowVectorXd logits;

    static GateVector zeros(int dim) { return {Eigen::RowVectorXd::Zero(dim)}; }
    Eigen::RowVectorXd gates() const;
};

Eigen::MatrixXd apply_gate(const GateVector& gate, const Eigen::MatrixXd& features);
// d(loss)/d(features) and accumulated d(loss)/d(logits) for y = gate(features).
Eigen::MatrixXd gate_backward(const GateVector& gate, const Eigen::MatrixXd& features,
                              const Eigen::MatrixXd& dy, Eigen::RowVectorXd& dlogits);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig cfg;
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    std::uint64_t step = 0;

    static AdamState init(std::size_t n, const AdamConfig& cfg) {
        return {cfg, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n)),
                Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n)), 0};
    }
};

// Bias-corrected adaptive-moment update in place.
// Throws DivergenceError on non-finite gradients.
void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grads);

struct GradCheckResult {
    double max_rel_err = 0.0;
    int checked = 0;
    int worst_coord = -1;
};

// Central finite differences on `n_coords` random coordinates.
// rel = |a - n| / max(|a|, |n|, 1e-3).
GradCheckResult check_gradients(const std::function<double(const Eigen::VectorXd&)>& loss_at,
                                const Eigen::VectorXd& params, const Eigen::VectorXd& analytic,
                                int n_coords, double h, Rng& rng);

// ---- weights files ----------------------------------------------------
// Versioned binary of named 2-D tensors, little-endian f32 payload.

struct NamedTensor {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::vector<float> data;  // row-major
};

void save_weights(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_weights(const std::filesystem::path& path);

std::vector<NamedTensor> net_tensors(const std::string& prefix, const FeedForwardNet& net);
// Fills an already-shaped net; throws DataError on missing names or shape mismatch.
void load_net_tensors(const std::string& prefix, const std::vector<NamedTensor>& tensors,
                      FeedForwardNet& net);
const NamedTensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

NamedTensor row_tensor(const std::string& name, const Eigen::RowVectorXd& v);
NamedTensor matrix_tensor(const std::string& name, const Eigen::MatrixXd& m);
Eigen::RowVectorXd tensor_row(const NamedTensor& t);
Eigen::MatrixXd tensor_matrix(const NamedTensor& t);

}  // namespace flowplan
