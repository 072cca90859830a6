#include "fedae/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fedae/errors.hpp"

namespace fedae {

void AutoencoderConfig::validate() const {
    if (input_dim == 0 || bottleneck_dim == 0) throw InvalidArgument("autoencoder dimensions must be >= 1");
    for (auto h : hidden_dims) {
        if (h == 0) throw InvalidArgument("autoencoder hidden dimensions must be >= 1");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("dropout must be in [0, 1)");
}

std::vector<LayerShape> AutoencoderConfig::layer_shapes() const {
    validate();
    std::vector<std::size_t> dims{input_dim};
    dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
    dims.push_back(bottleneck_dim);
    // decoder mirrors encoder
    dims.insert(dims.end(), hidden_dims.rbegin(), hidden_dims.rend());
    dims.push_back(input_dim);

    std::vector<LayerShape> shapes;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        const bool head = i + 2 == dims.size();
        shapes.push_back({dims[i], dims[i + 1], head ? Activation::Tanh : Activation::ReLU});
    }
    return shapes;
}

std::vector<double> AutoencoderConfig::dropout_plan() const {
    const std::size_t n_hidden = hidden_dims.size();
    const std::size_t n_layers = 2 * (n_hidden + 1);
    std::vector<double> plan(n_layers, 0.0);
    // encoder hidden layers are 0..n_hidden-1; layer n_hidden is the bottleneck
    for (std::size_t i = 0; i < n_hidden; ++i) plan[i] = dropout;
    if (mirror_dropout) {
        for (std::size_t i = n_hidden + 1; i + 1 < n_layers; ++i) plan[i] = dropout;
    }
    return plan;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw InvalidArgument("epochs must be >= 1, got " + std::to_string(epochs));
    if (batch_size == 0) throw InvalidArgument("batch size must be >= 1");
    schedule.validate();
}

ParameterSet build(const AutoencoderConfig& config) {
    ParameterSet params(config.layer_shapes());
    Rng rng(config.seed);
    for (std::size_t i = 0; i < params.layer_count(); ++i) {
        const auto& s = params.shapes()[i];
        const double limit = std::sqrt(6.0 / static_cast<double>(s.in + s.out));
        std::uniform_real_distribution<double> u(-limit, limit);
        auto w = params.weights(i);
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = u(rng);
        }
    }
    return params;
}

namespace {

std::size_t encoder_layers(const ParameterSet& params) {
    if (params.layer_count() == 0 || params.layer_count() % 2 != 0) {
        throw ShapeError("autoencoder must have an even, non-zero number of layers, got " +
                         std::to_string(params.layer_count()));
    }
    return params.layer_count() / 2;
}

Vector run_layers(const ParameterSet& params, Vector x, std::size_t first, std::size_t last) {
    for (std::size_t i = first; i < last; ++i) x = dense_forward(x, params.layer(i));
    return x;
}

}  // namespace

Vector encode(const ParameterSet& params, const Vector& x) {
    return run_layers(params, x, 0, encoder_layers(params));
}

Vector decode(const ParameterSet& params, const Vector& y) {
    return run_layers(params, y, encoder_layers(params), params.layer_count());
}

Vector reconstruct(const ParameterSet& params, const Vector& x) { return decode(params, encode(params, x)); }

std::vector<double> reconstruction_errors(const ParameterSet& params, const Matrix& data) {
    encoder_layers(params);
    std::vector<double> errors;
    errors.reserve(static_cast<std::size_t>(data.rows()));
    constexpr Eigen::Index chunk = 1024;
    for (Eigen::Index start = 0; start < data.rows(); start += chunk) {
        const Eigen::Index n = std::min(chunk, data.rows() - start);
        Matrix block = data.middleRows(start, n);
        ForwardCache cache = forward_batch(params, block, {});
        if (cache.output.cols() != block.cols()) {
            throw ShapeError::mismatch("reconstruction width", static_cast<std::size_t>(block.cols()),
                                       static_cast<std::size_t>(cache.output.cols()));
        }
        const double inv_d = 1.0 / static_cast<double>(block.cols());
        for (Eigen::Index r = 0; r < n; ++r) {
            errors.push_back((cache.output.row(r) - block.row(r)).squaredNorm() * inv_d);
        }
    }
    return errors;
}

TrainResult train_epochs(const AutoencoderConfig& model, ParameterSet params, const Matrix& data,
                         const TrainConfig& tc, AdamState state) {
    tc.validate();
    if (data.rows() == 0) throw InvalidArgument("cannot train on an empty dataset");
    if (static_cast<std::size_t>(data.cols()) != params.shapes().front().in) {
        throw ShapeError::mismatch("training data width", params.shapes().front().in,
                                   static_cast<std::size_t>(data.cols()));
    }
    if (state.first_moment.size() != params.size()) throw ShapeError::mismatch("adam state", params.size(), state.first_moment.size());

    const std::vector<double> plan = model.dropout_plan();
    if (plan.size() != params.layer_count()) throw ShapeError::mismatch("dropout plan", params.layer_count(), plan.size());

    Rng rng(tc.shuffle_seed);
    const auto n = static_cast<std::size_t>(data.rows());
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), Eigen::Index{0});

    std::vector<double> trace;
    trace.reserve(static_cast<std::size_t>(tc.epochs));
    Matrix batch;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        const double rate = lr_at(tc.schedule, epoch);
        double loss_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < n; start += tc.batch_size) {
            const std::size_t len = std::min(tc.batch_size, n - start);
            batch.resize(static_cast<Eigen::Index>(len), data.cols());
            for (std::size_t r = 0; r < len; ++r) batch.row(static_cast<Eigen::Index>(r)) = data.row(order[start + r]);

            LayerMasks masks(plan.size());
            for (std::size_t l = 0; l < plan.size(); ++l) {
                if (plan[l] > 0.0) {
                    masks[l] = dropout_mask(batch.rows(), static_cast<Eigen::Index>(params.shapes()[l].out), plan[l], rng);
                }
            }
            double loss = 0.0;
            std::vector<double> grads = compute_gradients(params, batch, masks, &loss);
            if (!std::isfinite(loss)) throw DivergenceError(epoch, n_batches, "non-finite batch loss");
            try {
                adam_step(params.values(), grads, state, rate);
            } catch (const NumericError& e) {
                throw DivergenceError(epoch, n_batches, e.what());
            }
            loss_sum += loss;
            ++n_batches;
        }
        trace.push_back(loss_sum / static_cast<double>(n_batches));
    }
    return {std::move(params), std::move(state), std::move(trace)};
}

}  // namespace fedae
