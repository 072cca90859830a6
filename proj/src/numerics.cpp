#include "fedae/numerics.hpp"

#include <cmath>
#include <string>

#include "fedae/errors.hpp"

namespace fedae {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double activation_derivative(Activation kind, double activated) {
    switch (kind) {
        case Activation::ReLU: return activated > 0.0 ? 1.0 : 0.0;
        case Activation::Tanh: return 1.0 - activated * activated;
        case Activation::Identity: return 1.0;
    }
    return 1.0;
}

template <typename M>
void apply_activation_inplace(Activation kind, M& m) {
    switch (kind) {
        case Activation::ReLU: m = m.cwiseMax(0.0); break;
        case Activation::Tanh: m = m.array().tanh().matrix(); break;
        case Activation::Identity: break;
    }
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    return splitmix64(splitmix64(splitmix64(base) ^ a) ^ (b * 0x2545f4914f6cdd1dULL));
}

const char* to_string(Activation a) {
    switch (a) {
        case Activation::ReLU: return "relu";
        case Activation::Tanh: return "tanh";
        case Activation::Identity: return "identity";
    }
    return "?";
}

void DenseLayer::validate() const {
    if (bias.size() != weights.rows()) {
        throw ShapeError::mismatch("dense layer bias", out_size(), static_cast<std::size_t>(bias.size()));
    }
}

ParameterSet::ParameterSet(std::vector<LayerShape> shapes) : shapes_(std::move(shapes)) {
    std::size_t total = 0;
    for (std::size_t i = 0; i < shapes_.size(); ++i) {
        if (i > 0 && shapes_[i - 1].out != shapes_[i].in) {
            throw ShapeError::mismatch("layer " + std::to_string(i) + " input", shapes_[i - 1].out, shapes_[i].in);
        }
        offsets_.push_back(total);
        total += shapes_[i].param_count();
    }
    values_.assign(total, 0.0);
}

ParameterSet ParameterSet::from_layers(const std::vector<DenseLayer>& layers) {
    std::vector<LayerShape> shapes;
    for (const auto& l : layers) {
        l.validate();
        shapes.push_back({l.in_size(), l.out_size(), l.activation});
    }
    ParameterSet p(std::move(shapes));
    for (std::size_t i = 0; i < layers.size(); ++i) {
        p.weights(i) = layers[i].weights;
        p.bias(i) = layers[i].bias;
    }
    return p;
}

DenseLayer ParameterSet::layer(std::size_t i) const {
    return DenseLayer{weights(i), bias(i), shapes_.at(i).activation};
}

std::vector<DenseLayer> ParameterSet::layers() const {
    std::vector<DenseLayer> out;
    out.reserve(shapes_.size());
    for (std::size_t i = 0; i < shapes_.size(); ++i) out.push_back(layer(i));
    return out;
}

Eigen::Map<const Matrix> ParameterSet::weights(std::size_t i) const {
    const auto& s = shapes_.at(i);
    return {values_.data() + offset(i), static_cast<Eigen::Index>(s.out), static_cast<Eigen::Index>(s.in)};
}

Eigen::Map<Matrix> ParameterSet::weights(std::size_t i) {
    const auto& s = shapes_.at(i);
    return {values_.data() + offset(i), static_cast<Eigen::Index>(s.out), static_cast<Eigen::Index>(s.in)};
}

Eigen::Map<const Vector> ParameterSet::bias(std::size_t i) const {
    const auto& s = shapes_.at(i);
    return {values_.data() + offset(i) + s.in * s.out, static_cast<Eigen::Index>(s.out)};
}

Eigen::Map<Vector> ParameterSet::bias(std::size_t i) {
    const auto& s = shapes_.at(i);
    return {values_.data() + offset(i) + s.in * s.out, static_cast<Eigen::Index>(s.out)};
}

std::size_t packed_size(const std::vector<LayerShape>& shapes) {
    std::size_t n = 0;
    for (const auto& s : shapes) n += s.param_count();
    return n;
}

std::vector<double> pack(const ParameterSet& params) {
    auto v = params.values();
    return {v.begin(), v.end()};
}

ParameterSet unpack(std::span<const double> flat, const std::vector<LayerShape>& shapes) {
    ParameterSet p(shapes);
    if (flat.size() != p.size()) throw ShapeError::mismatch("unpack", p.size(), flat.size());
    std::copy(flat.begin(), flat.end(), p.values().begin());
    return p;
}

Vector activate(Activation kind, const Vector& x) {
    Vector y = x;
    apply_activation_inplace(kind, y);
    return y;
}

Vector dense_forward(const Vector& x, const DenseLayer& layer) {
    layer.validate();
    if (static_cast<std::size_t>(x.size()) != layer.in_size()) {
        throw ShapeError::mismatch("dense_forward input", layer.in_size(), static_cast<std::size_t>(x.size()));
    }
    Vector z = layer.weights * x + layer.bias;
    return activate(layer.activation, z);
}

namespace {

void check_dropout_p(double p) {
    if (!(p >= 0.0 && p < 1.0)) {
        throw InvalidArgument("dropout probability must be in [0, 1), got " + std::to_string(p));
    }
}

}  // namespace

DropoutResult dropout(const Vector& x, double p, Rng& rng, bool training) {
    check_dropout_p(p);
    if (!training || p == 0.0) return {x, Vector::Ones(x.size())};
    Matrix m = dropout_mask(1, x.size(), p, rng);
    Vector mask = m.row(0).transpose();
    return {x.cwiseProduct(mask), mask};
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
    check_dropout_p(p);
    Matrix mask(rows, cols);
    const double keep_scale = 1.0 / (1.0 - p);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) mask(r, c) = u(rng) < p ? 0.0 : keep_scale;
    }
    return mask;
}

double mse(const Vector& x, const Vector& z) {
    if (x.size() != z.size()) {
        throw ShapeError::mismatch("mse", static_cast<std::size_t>(x.size()), static_cast<std::size_t>(z.size()));
    }
    if (x.size() == 0) return 0.0;
    return (x - z).squaredNorm() / static_cast<double>(x.size());
}

ForwardCache forward_batch(const ParameterSet& params, const Matrix& batch, const LayerMasks& masks) {
    const std::size_t n_layers = params.layer_count();
    if (n_layers == 0) throw InvalidArgument("forward pass over an empty network");
    if (static_cast<std::size_t>(batch.cols()) != params.shapes().front().in) {
        throw ShapeError::mismatch("batch width", params.shapes().front().in, static_cast<std::size_t>(batch.cols()));
    }
    if (!masks.empty() && masks.size() != n_layers) {
        throw ShapeError::mismatch("dropout masks", n_layers, masks.size());
    }

    ForwardCache cache;
    cache.inputs.reserve(n_layers);
    cache.activations.reserve(n_layers);
    Matrix current = batch;
    for (std::size_t i = 0; i < n_layers; ++i) {
        Matrix z = current * params.weights(i).transpose();
        z.rowwise() += params.bias(i).transpose();
        apply_activation_inplace(params.shapes()[i].activation, z);
        cache.inputs.push_back(std::move(current));
        if (!masks.empty() && masks[i]) {
            const Matrix& m = *masks[i];
            if (m.rows() != z.rows() || m.cols() != z.cols()) {
                throw ShapeError::mismatch("dropout mask for layer " + std::to_string(i),
                                           static_cast<std::size_t>(z.size()), static_cast<std::size_t>(m.size()));
            }
            current = z.cwiseProduct(m);
        } else {
            current = z;
        }
        cache.activations.push_back(std::move(z));
    }
    cache.output = std::move(current);
    return cache;
}

std::vector<double> compute_gradients(const ParameterSet& params, const Matrix& batch, const LayerMasks& masks,
                                      double* batch_loss) {
    ForwardCache cache = forward_batch(params, batch, masks);
    if (cache.output.cols() != batch.cols()) {
        throw ShapeError::mismatch("reconstruction width", static_cast<std::size_t>(batch.cols()),
                                   static_cast<std::size_t>(cache.output.cols()));
    }
    const double scale = 1.0 / static_cast<double>(batch.rows() * batch.cols());
    Matrix diff = cache.output - batch;
    if (batch_loss) *batch_loss = diff.squaredNorm() * scale;

    ParameterSet grads(params.shapes());
    Matrix upstream = 2.0 * scale * diff;  // dL/d(output of last layer, after mask)
    for (std::size_t k = params.layer_count(); k-- > 0;) {
        if (!masks.empty() && masks[k]) upstream = upstream.cwiseProduct(*masks[k]);
        const Activation act = params.shapes()[k].activation;
        if (act != Activation::Identity) {
            const Matrix& a = cache.activations[k];
            for (Eigen::Index r = 0; r < a.rows(); ++r) {
                for (Eigen::Index c = 0; c < a.cols(); ++c) upstream(r, c) *= activation_derivative(act, a(r, c));
            }
        }
        grads.weights(k).noalias() = upstream.transpose() * cache.inputs[k];
        grads.bias(k) = upstream.colwise().sum().transpose();
        if (k > 0) upstream = upstream * params.weights(k);
    }
    return pack(grads);
}

AdamState AdamState::fresh(std::size_t n, AdamHyper hyper) {
    return AdamState{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0, hyper};
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double rate) {
    if (grads.size() != params.size()) throw ShapeError::mismatch("adam gradient", params.size(), grads.size());
    if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
        throw ShapeError::mismatch("adam moments", params.size(), state.first_moment.size());
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!std::isfinite(grads[i])) {
            throw NumericError("non-finite gradient at coordinate " + std::to_string(i));
        }
    }
    const auto& h = state.hyper;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(h.beta1, t);
    const double correction2 = 1.0 - std::pow(h.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        double& m = state.first_moment[i];
        double& v = state.second_moment[i];
        m = h.beta1 * m + (1.0 - h.beta1) * grads[i];
        v = h.beta2 * v + (1.0 - h.beta2) * grads[i] * grads[i];
        const double m_hat = m / correction1;
        const double v_hat = v / correction2;
        params[i] -= rate * m_hat / (std::sqrt(v_hat) + h.epsilon);
    }
}

void LrSchedule::validate() const {
    if (!(base_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
    if (step_size < 1) throw InvalidArgument("lr step size must be >= 1");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidArgument("lr gamma must be in (0, 1]");
}

double lr_at(const LrSchedule& schedule, int epoch) {
    if (epoch < 0) throw InvalidArgument("epoch must be non-negative, got " + std::to_string(epoch));
    schedule.validate();
    return schedule.base_rate * std::pow(schedule.gamma, epoch / schedule.step_size);
}

double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace fedae
