#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <span>
#include <vector>

#include "flowplan/field.hpp"
#include "flowplan/nnkit.hpp"
#include "flowplan/scene.hpp"

namespace flowplan {

enum class AnchorProvenance { kmeans, refined };

// N candidate trajectories of t_f 2-D waypoints. Row k of `coords` is
// [x0, y0, x1, y1, ...].
struct AnchorSet {
    Eigen::MatrixXd coords;
    int t_f = 0;
    AnchorProvenance provenance = AnchorProvenance::kmeans;

    int count() const { return static_cast<int>(coords.rows()); }
    Vec2 waypoint(int anchor, int step) const {
        return {coords(anchor, 2 * step), coords(anchor, 2 * step + 1)};
    }
    void set_waypoint(int anchor, int step, const Vec2& p) {
        coords(anchor, 2 * step) = p.x;
        coords(anchor, 2 * step + 1) = p.y;
    }
};

// Flatten trajectory positions to an xy row compatible with AnchorSet rows.
Eigen::RowVectorXd trajectory_xy_row(const Trajectory& t);

// Lloyd's algorithm with k-means++ seeding on flattened waypoint vectors.
// Empty clusters are reseeded from the point farthest from its centroid.
// Throws DataError when the corpus is smaller than n_clusters.
AnchorSet kmeans_anchors(std::span<const Trajectory> corpus, int n_clusters, std::uint64_t seed,
                         int max_iters = 100);

// Within-cluster sum of squares of a clustering of `corpus` induced by the
// given centroids (test/diagnostic helper).
double kmeans_objective(std::span<const Trajectory> corpus, const AnchorSet& centroids);

struct RefineNetConfig {
    int ego_hidden = 32;
    int head_hidden = 64;
    double pos_scale = 0.05;    // world meters -> net units
    double speed_scale = 0.1;
};

// Residual refinement conditioned on globally pooled field features and the
// ego state. The residual head's final layer is zero-initialized, so a fresh
// net is exactly the identity refinement.
struct RefinementNet {
    RefineNetConfig cfg;
    int n_anchors = 0;
    int t_f = 0;
    FeedForwardNet ego_encoder;    // [ego(5) | pooled(6)] -> ego_hidden
    FeedForwardNet residual_head;  // [pooled(6) | ego_hidden] -> N * 2 * t_f

    static RefinementNet create(int n_anchors, int t_f, const RefineNetConfig& cfg, Rng& rng);

    std::size_t param_count() const;
    void write_params(double* out) const;
    const double* read_params(const double* in);
};

// Global average pool of (value, grad_u, grad_v) for both fields, scaled by
// the shared field weights: 6 features.
Eigen::RowVectorXd pool_fields(const EnergyField& risk, const EnergyField& lane,
                               const FieldWeights& weights);
// (x, y, cos heading, sin heading, speed), scaled per config.
Eigen::RowVectorXd ego_features(const EgoState& ego, const RefineNetConfig& cfg);

AnchorSet refine_anchors(const AnchorSet& anchors, const EnergyField& risk,
                         const EnergyField& lane, const EgoState& ego, const RefinementNet& net,
                         const FieldWeights& weights);

// Forward pass with tapes kept for training.
struct RefineForward {
    AnchorSet refined;
    Eigen::RowVectorXd ego_in;
    Eigen::RowVectorXd head_in;
    FeedForwardNet::Tape ego_tape;
    FeedForwardNet::Tape head_tape;
};
RefineForward refine_anchors_fwd(const AnchorSet& anchors, const Eigen::RowVectorXd& pooled,
                                 const Eigen::RowVectorXd& ego_vec, const RefinementNet& net);
// d_residual: N x 2*t_f gradient w.r.t. the refined coordinates.
void refine_anchors_bwd(const RefineForward& fwd, const RefinementNet& net,
                        const Eigen::MatrixXd& d_residual, RefinementNet& grads);

// Verification oracle: per-waypoint gradient descent on a combined field.
// Updates that leave the grid are clamped to its extent.
AnchorSet energy_descent_refine(const AnchorSet& anchors, const EnergyField& field, int steps,
                                double step_size);

// Mean per-coordinate L1 distance between an xy row and the GT positions.
double l1_to_gt(const Eigen::RowVectorXd& xy, const Trajectory& gt);

// Index of the row with minimal summed L1 distance to GT; ties -> lowest index.
int closest_index(const Eigen::MatrixXd& coords, const Trajectory& gt);
// One-hot labels y_k over rows.
Eigen::VectorXd label_closest(const Eigen::MatrixXd& coords, const Trajectory& gt);
Eigen::VectorXd label_closest(const AnchorSet& anchors, const Trajectory& gt);

// JSON sidecar {format_version, N, t_f, provenance, row-major waypoints}.
void write_anchor_file(const std::filesystem::path& path, const AnchorSet& anchors);
AnchorSet read_anchor_file(const std::filesystem::path& path);

}  // namespace flowplan
