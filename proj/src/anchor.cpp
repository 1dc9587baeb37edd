#include "flowplan/anchor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "flowplan/errors.hpp"

namespace flowplan {

Eigen::RowVectorXd trajectory_xy_row(const Trajectory& t) {
    Eigen::RowVectorXd row(2 * t.poses.size());
    for (std::size_t i = 0; i < t.poses.size(); ++i) {
        row(2 * i) = t.poses[i].x;
        row(2 * i + 1) = t.poses[i].y;
    }
    return row;
}

namespace {

Eigen::MatrixXd corpus_matrix(std::span<const Trajectory> corpus) {
    const Eigen::Index dim = 2 * static_cast<Eigen::Index>(corpus.front().poses.size());
    Eigen::MatrixXd m(corpus.size(), dim);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto row = trajectory_xy_row(corpus[i]);
        if (row.size() != dim) throw DataError("kmeans_anchors: corpus horizon mismatch");
        m.row(static_cast<Eigen::Index>(i)) = row;
    }
    return m;
}

}  // namespace

AnchorSet kmeans_anchors(std::span<const Trajectory> corpus, int n_clusters, std::uint64_t seed,
                         int max_iters) {
    if (n_clusters < 1) throw std::invalid_argument("kmeans_anchors: need at least one cluster");
    if (corpus.size() < static_cast<std::size_t>(n_clusters))
        throw DataError("kmeans_anchors: corpus smaller than cluster count");

    const Eigen::MatrixXd points = corpus_matrix(corpus);
    const Eigen::Index n = points.rows();
    Rng rng(seed);

    // k-means++ seeding.
    Eigen::MatrixXd centroids(n_clusters, points.cols());
    centroids.row(0) = points.row(static_cast<Eigen::Index>(rng.uniform_int(n)));
    Eigen::VectorXd d2 = (points.rowwise() - centroids.row(0)).rowwise().squaredNorm();
    for (int k = 1; k < n_clusters; ++k) {
        const double total = d2.sum();
        Eigen::Index chosen = 0;
        if (total > 0.0) {
            double target = rng.uniform() * total;
            for (Eigen::Index i = 0; i < n; ++i) {
                target -= d2(i);
                if (target <= 0.0) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = static_cast<Eigen::Index>(rng.uniform_int(n));
        }
        centroids.row(k) = points.row(chosen);
        d2 = d2.cwiseMin((points.rowwise() - centroids.row(k)).rowwise().squaredNorm());
    }

    std::vector<int> assign(n, -1);
    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int k = 0; k < n_clusters; ++k) {
                const double d = (points.row(i) - centroids.row(k)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = k;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;

        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(n_clusters, points.cols());
        std::vector<int> counts(n_clusters, 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(assign[i]) += points.row(i);
            ++counts[assign[i]];
        }
        for (int k = 0; k < n_clusters; ++k) {
            if (counts[k] > 0) {
                centroids.row(k) = sums.row(k) / counts[k];
            } else {
                // Reseed from the point farthest from its own centroid.
                Eigen::Index far = 0;
                double far_d = -1.0;
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double d = (points.row(i) - centroids.row(assign[i])).squaredNorm();
                    if (d > far_d) {
                        far_d = d;
                        far = i;
                    }
                }
                centroids.row(k) = points.row(far);
            }
        }
    }

    AnchorSet out;
    out.coords = centroids;
    out.t_f = static_cast<int>(corpus.front().poses.size());
    out.provenance = AnchorProvenance::kmeans;
    return out;
}

double kmeans_objective(std::span<const Trajectory> corpus, const AnchorSet& centroids) {
    const Eigen::MatrixXd points = corpus_matrix(corpus);
    double total = 0.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index k = 0; k < centroids.coords.rows(); ++k)
            best = std::min(best, (points.row(i) - centroids.coords.row(k)).squaredNorm());
        total += best;
    }
    return total;
}

RefinementNet RefinementNet::create(int n_anchors, int t_f, const RefineNetConfig& cfg, Rng& rng) {
    RefinementNet net;
    net.cfg = cfg;
    net.n_anchors = n_anchors;
    net.t_f = t_f;
    net.ego_encoder =
        FeedForwardNet::create({5 + 6, cfg.ego_hidden, cfg.ego_hidden}, {Act::tanh, Act::tanh}, rng);
    net.residual_head = FeedForwardNet::create({6 + cfg.ego_hidden, cfg.head_hidden, n_anchors * 2 * t_f},
                                               {Act::tanh, Act::identity}, rng);
    net.residual_head.zero_final_layer();
    return net;
}

std::size_t RefinementNet::param_count() const {
    return ego_encoder.param_count() + residual_head.param_count();
}

void RefinementNet::write_params(double* out) const {
    ego_encoder.write_params(out);
    residual_head.write_params(out + ego_encoder.param_count());
}

const double* RefinementNet::read_params(const double* in) {
    return residual_head.read_params(ego_encoder.read_params(in));
}

Eigen::RowVectorXd pool_fields(const EnergyField& risk, const EnergyField& lane,
                               const FieldWeights& weights) {
    const auto mean = [](const Grid<double>& g) {
        double sum = 0.0;
        for (const double v : g.data()) sum += v;
        return sum / static_cast<double>(g.data().size());
    };
    Eigen::RowVectorXd pooled(6);
    pooled << weights.w_risk * mean(risk.value), weights.w_risk * mean(risk.grad_u),
        weights.w_risk * mean(risk.grad_v), weights.w_lane * mean(lane.value),
        weights.w_lane * mean(lane.grad_u), weights.w_lane * mean(lane.grad_v);
    return pooled;
}

Eigen::RowVectorXd ego_features(const EgoState& ego, const RefineNetConfig& cfg) {
    Eigen::RowVectorXd v(5);
    v << cfg.pos_scale * ego.position.x, cfg.pos_scale * ego.position.y, std::cos(ego.heading),
        std::sin(ego.heading), cfg.speed_scale * ego.speed;
    return v;
}

RefineForward refine_anchors_fwd(const AnchorSet& anchors, const Eigen::RowVectorXd& pooled,
                                 const Eigen::RowVectorXd& ego_vec, const RefinementNet& net) {
    if (anchors.count() != net.n_anchors || anchors.t_f != net.t_f)
        throw std::invalid_argument("refine_anchors: anchor shape does not match net");
    RefineForward fwd;
    fwd.ego_in.resize(ego_vec.size() + pooled.size());
    fwd.ego_in << ego_vec, pooled;
    const Eigen::MatrixXd ego_emb = net.ego_encoder.forward(fwd.ego_in, fwd.ego_tape);
    fwd.head_in.resize(pooled.size() + ego_emb.cols());
    fwd.head_in << pooled, ego_emb.row(0);
    const Eigen::MatrixXd residual = net.residual_head.forward(fwd.head_in, fwd.head_tape);

    fwd.refined = anchors;
    fwd.refined.provenance = AnchorProvenance::refined;
    for (int k = 0; k < anchors.count(); ++k)
        fwd.refined.coords.row(k) +=
            residual.block(0, k * 2 * anchors.t_f, 1, 2 * anchors.t_f).row(0);
    return fwd;
}

void refine_anchors_bwd(const RefineForward& fwd, const RefinementNet& net,
                        const Eigen::MatrixXd& d_residual, RefinementNet& grads) {
    const int n = net.n_anchors, w = 2 * net.t_f;
    Eigen::MatrixXd dres(1, n * w);
    for (int k = 0; k < n; ++k) dres.block(0, k * w, 1, w) = d_residual.row(k);
    const Eigen::MatrixXd dhead_in =
        net.residual_head.backward(fwd.head_tape, dres, grads.residual_head);
    const Eigen::MatrixXd dego_emb = dhead_in.block(0, 6, 1, net.cfg.ego_hidden);
    net.ego_encoder.backward(fwd.ego_tape, dego_emb, grads.ego_encoder);
}

AnchorSet refine_anchors(const AnchorSet& anchors, const EnergyField& risk,
                         const EnergyField& lane, const EgoState& ego, const RefinementNet& net,
                         const FieldWeights& weights) {
    return refine_anchors_fwd(anchors, pool_fields(risk, lane, weights),
                              ego_features(ego, net.cfg), net)
        .refined;
}

AnchorSet energy_descent_refine(const AnchorSet& anchors, const EnergyField& field, int steps,
                                double step_size) {
    AnchorSet out = anchors;
    const auto& g = field.grid;
    for (int iter = 0; iter < steps; ++iter) {
        for (int k = 0; k < out.count(); ++k) {
            for (int j = 0; j < out.t_f; ++j) {
                const Vec2 w = out.waypoint(k, j);
                const FieldSample s = sample_field_clamped(field, w);
                Vec2 next = w - step_size * s.grad;
                next.x = std::clamp(next.x, g.min_x(), g.max_x());
                next.y = std::clamp(next.y, g.min_y(), g.max_y());
                out.set_waypoint(k, j, next);
            }
        }
    }
    out.provenance = AnchorProvenance::refined;
    return out;
}

double l1_to_gt(const Eigen::RowVectorXd& xy, const Trajectory& gt) {
    const Eigen::RowVectorXd gt_row = trajectory_xy_row(gt);
    if (xy.size() != gt_row.size()) throw std::invalid_argument("l1_to_gt: size mismatch");
    return (xy - gt_row).cwiseAbs().mean();
}

int closest_index(const Eigen::MatrixXd& coords, const Trajectory& gt) {
    const Eigen::RowVectorXd gt_row = trajectory_xy_row(gt);
    if (coords.cols() != gt_row.size()) throw std::invalid_argument("label_closest: size mismatch");
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < coords.rows(); ++k) {
        const double d = (coords.row(k) - gt_row).cwiseAbs().sum();
        if (d < best_d) {  // strict: ties keep the lowest index
            best_d = d;
            best = static_cast<int>(k);
        }
    }
    return best;
}

Eigen::VectorXd label_closest(const Eigen::MatrixXd& coords, const Trajectory& gt) {
    Eigen::VectorXd y = Eigen::VectorXd::Zero(coords.rows());
    y(closest_index(coords, gt)) = 1.0;
    return y;
}

Eigen::VectorXd label_closest(const AnchorSet& anchors, const Trajectory& gt) {
    return label_closest(anchors.coords, gt);
}

void write_anchor_file(const std::filesystem::path& path, const AnchorSet& anchors) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["N"] = anchors.count();
    j["t_f"] = anchors.t_f;
    j["provenance"] = anchors.provenance == AnchorProvenance::kmeans ? "kmeans" : "refined";
    std::vector<double> flat;
    flat.reserve(anchors.coords.size());
    for (Eigen::Index r = 0; r < anchors.coords.rows(); ++r)
        for (Eigen::Index c = 0; c < anchors.coords.cols(); ++c) flat.push_back(anchors.coords(r, c));
    j["waypoints"] = flat;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << j.dump(1) << "\n";
}

AnchorSet read_anchor_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open anchor file: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
        AnchorSet a;
        const int n = j.at("N").get<int>();
        a.t_f = j.at("t_f").get<int>();
        const std::string prov = j.at("provenance").get<std::string>();
        a.provenance = prov == "refined" ? AnchorProvenance::refined : AnchorProvenance::kmeans;
        const auto flat = j.at("waypoints").get<std::vector<double>>();
        if (flat.size() != static_cast<std::size_t>(n) * 2 * a.t_f)
            throw DataError("anchor file: waypoint count mismatch");
        a.coords = Eigen::MatrixXd(n, 2 * a.t_f);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < 2 * a.t_f; ++c) a.coords(r, c) = flat[static_cast<std::size_t>(r) * 2 * a.t_f + c];
        return a;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("anchor file " + path.string() + ": " + e.what());
    }
}

}  // namespace flowplan
