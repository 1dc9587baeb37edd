#include "flowplan/nnkit.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "flowplan/errors.hpp"

namespace flowplan {

namespace {

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Act act) {
    switch (act) {
        case Act::identity: return z;
        case Act::tanh: return z.array().tanh();
        case Act::sigmoid: return (1.0 / (1.0 + (-z.array()).exp())).matrix();
    }
    return z;
}

// Derivative expressed through the activated output.
Eigen::ArrayXXd activate_deriv(const Eigen::MatrixXd& post, Act act) {
    switch (act) {
        case Act::identity: return Eigen::ArrayXXd::Ones(post.rows(), post.cols());
        case Act::tanh: return 1.0 - post.array().square();
        case Act::sigmoid: return post.array() * (1.0 - post.array());
    }
    return Eigen::ArrayXXd::Ones(post.rows(), post.cols());
}

}  // namespace

FeedForwardNet FeedForwardNet::create(const std::vector<int>& widths, const std::vector<Act>& acts,
                                      Rng& rng) {
    if (widths.size() < 2 || acts.size() != widths.size() - 1)
        throw std::invalid_argument("FeedForwardNet::create: widths/acts mismatch");
    FeedForwardNet net;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        Layer layer;
        const int fan_in = widths[i];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        layer.w = Eigen::MatrixXd(fan_in, widths[i + 1]);
        for (Eigen::Index c = 0; c < layer.w.cols(); ++c)
            for (Eigen::Index r = 0; r < layer.w.rows(); ++r)
                layer.w(r, c) = rng.uniform(-bound, bound);
        layer.b = Eigen::RowVectorXd::Zero(widths[i + 1]);
        layer.act = acts[i];
        net.layers.push_back(std::move(layer));
    }
    return net;
}

Eigen::MatrixXd FeedForwardNet::forward(const Eigen::MatrixXd& x) const {
    if (x.cols() != input_dim()) throw std::invalid_argument("forward: input dim mismatch");
    Eigen::MatrixXd h = x;
    for (const auto& layer : layers)
        h = activate((h * layer.w).rowwise() + layer.b, layer.act);
    return h;
}

Eigen::MatrixXd FeedForwardNet::forward(const Eigen::MatrixXd& x, Tape& tape) const {
    if (x.cols() != input_dim()) throw std::invalid_argument("forward: input dim mismatch");
    tape.inputs.clear();
    tape.post.clear();
    Eigen::MatrixXd h = x;
    for (const auto& layer : layers) {
        tape.inputs.push_back(h);
        h = activate((h * layer.w).rowwise() + layer.b, layer.act);
        tape.post.push_back(h);
    }
    return h;
}

Eigen::MatrixXd FeedForwardNet::backward(const Tape& tape, const Eigen::MatrixXd& dy,
                                         FeedForwardNet& grad) const {
    Eigen::MatrixXd delta = dy;
    for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
        const auto& layer = layers[i];
        delta = (delta.array() * activate_deriv(tape.post[i], layer.act)).matrix();
        grad.layers[i].w += tape.inputs[i].transpose() * delta;
        grad.layers[i].b += delta.colwise().sum();
        delta = delta * layer.w.transpose();
    }
    return delta;
}

FeedForwardNet FeedForwardNet::zeros_like() const {
    FeedForwardNet g;
    for (const auto& layer : layers)
        g.layers.push_back({Eigen::MatrixXd::Zero(layer.w.rows(), layer.w.cols()),
                            Eigen::RowVectorXd::Zero(layer.b.cols()), layer.act});
    return g;
}

void FeedForwardNet::zero_final_layer() {
    layers.back().w.setZero();
    layers.back().b.setZero();
}

std::size_t FeedForwardNet::param_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers) n += layer.w.size() + layer.b.size();
    return n;
}

void FeedForwardNet::write_params(double* out) const {
    for (const auto& layer : layers) {
        std::memcpy(out, layer.w.data(), sizeof(double) * layer.w.size());
        out += layer.w.size();
        std::memcpy(out, layer.b.data(), sizeof(double) * layer.b.size());
        out += layer.b.size();
    }
}

const double* FeedForwardNet::read_params(const double* in) {
    for (auto& layer : layers) {
        std::memcpy(layer.w.data(), in, sizeof(double) * layer.w.size());
        in += layer.w.size();
        std::memcpy(layer.b.data(), in, sizeof(double) * layer.b.size());
        in += layer.b.size();
    }
    return in;
}

Eigen::RowVectorXd GateVector::gates() const {
    return (1.0 / (1.0 + (-logits.array().min(30.0).max(-30.0)).exp())).matrix();
}

Eigen::MatrixXd apply_gate(const GateVector& gate, const Eigen::MatrixXd& features) {
    if (features.cols() != gate.logits.cols())
        throw std::invalid_argument("apply_gate: dimension mismatch");
    return (features.array().rowwise() * gate.gates().array()).matrix();
}

Eigen::MatrixXd gate_backward(const GateVector& gate, const Eigen::MatrixXd& features,
                              const Eigen::MatrixXd& dy, Eigen::RowVectorXd& dlogits) {
    const Eigen::ArrayXd g = gate.gates().transpose().array();
    // sigmoid' = g (1 - g); zero where the logit clamp is active.
    Eigen::ArrayXd dsig = g * (1.0 - g);
    for (Eigen::Index i = 0; i < dsig.size(); ++i)
        if (std::abs(gate.logits(i)) >= 30.0) dsig(i) = 0.0;
    const Eigen::ArrayXd colsum = (dy.array() * features.array()).colwise().sum().transpose();
    dlogits += (colsum * dsig).matrix().transpose();
    return (dy.array().rowwise() * g.transpose()).matrix();
}

void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grads) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw std::invalid_argument("adam_step: size mismatch");
    if (!grads.allFinite()) throw DivergenceError("adam_step: non-finite gradient", 0.0);
    const auto& c = state.cfg;
    state.step += 1;
    state.m = c.beta1 * state.m + (1.0 - c.beta1) * grads;
    state.v = c.beta2 * state.v + (1.0 - c.beta2) * grads.array().square().matrix();
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    params.array() -=
        c.lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + c.eps);
}

GradCheckResult check_gradients(const std::function<double(const Eigen::VectorXd&)>& loss_at,
                                const Eigen::VectorXd& params, const Eigen::VectorXd& analytic,
                                int n_coords, double h, Rng& rng) {
    GradCheckResult res;
    Eigen::VectorXd p = params;
    for (int i = 0; i < n_coords; ++i) {
        const Eigen::Index k =
            static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::uint64_t>(params.size())));
        const double orig = p(k);
        p(k) = orig + h;
        const double fp = loss_at(p);
        p(k) = orig - h;
        const double fm = loss_at(p);
        p(k) = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double denom = std::max({std::abs(numeric), std::abs(analytic(k)), 1e-3});
        const double rel = std::abs(numeric - analytic(k)) / denom;
        if (rel > res.max_rel_err) {
            res.max_rel_err = rel;
            res.worst_coord = static_cast<int>(k);
        }
        ++res.checked;
    }
    return res;
}

// ---- weights files ----------------------------------------------------

namespace io_detail {

constexpr std::uint32_t magic = 0x54575046u;  // "FPWT"
constexpr std::uint32_t version = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace io_detail

void save_weights(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    io_detail::write_u32(out, io_detail::magic);
    io_detail::write_u32(out, io_detail::version);
    io_detail::write_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        io_detail::write_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        io_detail::write_u32(out, static_cast<std::uint32_t>(t.rows));
        io_detail::write_u32(out, static_cast<std::uint32_t>(t.cols));
        for (const float f : t.data) {
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            io_detail::write_u32(out, bits);
        }
    }
}

std::vector<NamedTensor> load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open weights file: " + path.string());
    if (io_detail::read_u32(in) != io_detail::magic) throw DataError("weights: bad magic");
    if (io_detail::read_u32(in) != io_detail::version) throw DataError("weights: unsupported version");
    const std::uint32_t count = io_detail::read_u32(in);
    std::vector<NamedTensor> tensors;
    tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        const std::uint32_t name_len = io_detail::read_u32(in);
        t.name.resize(name_len);
        in.read(t.name.data(), name_len);
        t.rows = static_cast<int>(io_detail::read_u32(in));
        t.cols = static_cast<int>(io_detail::read_u32(in));
        if (t.rows < 0 || t.cols < 0) throw DataError("weights: bad tensor shape");
        t.data.resize(static_cast<std::size_t>(t.rows) * t.cols);
        for (float& f : t.data) {
            const std::uint32_t bits = io_detail::read_u32(in);
            std::memcpy(&f, &bits, 4);
        }
        if (!in) throw DataError("weights: truncated file");
        tensors.push_back(std::move(t));
    }
    return tensors;
}

std::vector<NamedTensor> net_tensors(const std::string& prefix, const FeedForwardNet& net) {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        out.push_back(matrix_tensor(prefix + ".w" + std::to_string(i), net.layers[i].w));
        out.push_back(row_tensor(prefix + ".b" + std::to_string(i), net.layers[i].b));
    }
    return out;
}

const NamedTensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
    for (const auto& t : tensors)
        if (t.name == name) return t;
    throw DataError("weights: missing tensor " + name);
}

void load_net_tensors(const std::string& prefix, const std::vector<NamedTensor>& tensors,
                      FeedForwardNet& net) {
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto& wt = find_tensor(tensors, prefix + ".w" + std::to_string(i));
        const auto& bt = find_tensor(tensors, prefix + ".b" + std::to_string(i));
        if (wt.rows != net.layers[i].w.rows() || wt.cols != net.layers[i].w.cols() ||
            bt.cols != net.layers[i].b.cols())
            throw DataError("weights: shape mismatch for " + wt.name);
        net.layers[i].w = tensor_matrix(wt);
        net.layers[i].b = tensor_row(bt);
    }
}

NamedTensor row_tensor(const std::string& name, const Eigen::RowVectorXd& v) {
    NamedTensor t{name, 1, static_cast<int>(v.cols()), {}};
    t.data.reserve(v.cols());
    for (Eigen::Index i = 0; i < v.cols(); ++i) t.data.push_back(static_cast<float>(v(i)));
    return t;
}

NamedTensor matrix_tensor(const std::string& name, const Eigen::MatrixXd& m) {
    NamedTensor t{name, static_cast<int>(m.rows()), static_cast<int>(m.cols()), {}};
    t.data.reserve(m.size());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) t.data.push_back(static_cast<float>(m(r, c)));
    return t;
}

Eigen::RowVectorXd tensor_row(const NamedTensor& t) {
    if (t.rows != 1) throw DataError("weights: expected row vector for " + t.name);
    Eigen::RowVectorXd v(t.cols);
    for (int i = 0; i < t.cols; ++i) v(i) = static_cast<double>(t.data[i]);
    return v;
}

Eigen::MatrixXd tensor_matrix(const NamedTensor& t) {
    Eigen::MatrixXd m(t.rows, t.cols);
    for (int r = 0; r < t.rows; ++r)
        for (int c = 0; c < t.cols; ++c)
            m(r, c) = static_cast<double>(t.data[static_cast<std::size_t>(r) * t.cols + c]);
    return m;
}

}  // namespace flowplan
