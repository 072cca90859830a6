#pragma once

// Dense neural-network math for the autoencoder: layers, activations,
// dropout, MSE, reverse-mode gradients, Adam and a step-decay schedule.
// Everything is double precision.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace fedae {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;

// Mixes a base seed with stream identifiers (splitmix64 finalizer), so that
// e.g. (client seed, round) pairs get independent, reproducible streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

enum class Activation { ReLU, Tanh, Identity };

const char* to_string(Activation a);

struct DenseLayer {
    Matrix weights;  // out x in
    Vector bias;     // out
    Activation activation = Activation::Identity;

    std::size_t in_size() const { return static_cast<std::size_t>(weights.cols()); }
    std::size_t out_size() const { return static_cast<std::size_t>(weights.rows()); }
    void validate() const;
};

struct LayerShape {
    std::size_t in = 0;
    std::size_t out = 0;
    Activation activation = Activation::Identity;

    std::size_t param_count() const { return in * out + out; }
    bool operator==(const LayerShape&) const = default;
};

// All weights and biases of a feed-forward stack, stored contiguously in
// packed order: per layer, weights row-major then bias.
class ParameterSet {
public:
    ParameterSet() = default;
    explicit ParameterSet(std::vector<LayerShape> shapes);  // zero-initialised
    static ParameterSet from_layers(const std::vector<DenseLayer>& layers);

    const std::vector<LayerShape>& shapes() const { return shapes_; }
    std::size_t layer_count() const { return shapes_.size(); }
    std::size_t size() const { return values_.size(); }

    DenseLayer layer(std::size_t i) const;
    std::vector<DenseLayer> layers() const;

    Eigen::Map<const Matrix> weights(std::size_t i) const;
    Eigen::Map<Matrix> weights(std::size_t i);
    Eigen::Map<const Vector> bias(std::size_t i) const;
    Eigen::Map<Vector> bias(std::size_t i);

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }

    bool operator==(const ParameterSet&) const = default;

private:
    std::size_t offset(std::size_t i) const { return offsets_.at(i); }

    std::vector<LayerShape> shapes_;
    std::vector<std::size_t> offsets_;
    std::vector<double> values_;
};

std::size_t packed_size(const std::vector<LayerShape>& shapes);
std::vector<double> pack(const ParameterSet& params);
ParameterSet unpack(std::span<const double> flat, const std::vector<LayerShape>& shapes);

Vector activate(Activation kind, const Vector& x);
Vector dense_forward(const Vector& x, const DenseLayer& layer);

struct DropoutResult {
    Vector values;
    Vector mask;  // per-element multiplier: 0 or 1/(1-p); all ones in eval mode
};

DropoutResult dropout(const Vector& x, double p, Rng& rng, bool training);

// Batch dropout mask (rows x cols) of 0 or 1/(1-p) multipliers.
Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng);

double mse(const Vector& x, const Vector& z);

// Per-layer multiplicative masks applied after that layer's activation;
// nullopt means no dropout at that position.
using LayerMasks = std::vector<std::optional<Matrix>>;

struct ForwardCache {
    std::vector<Matrix> inputs;       // input to layer i (batch x in)
    std::vector<Matrix> activations;  // activation(z_i) before the mask
    Matrix output;
};

ForwardCache forward_batch(const ParameterSet& params, const Matrix& batch, const LayerMasks& masks);

// Gradient of the mean (over batch and feature dims) squared reconstruction
// error with respect to the packed parameters. `batch_loss`, when given,
// receives the loss value of the same forward pass.
std::vector<double> compute_gradients(const ParameterSet& params, const Matrix& batch,
                                      const LayerMasks& masks, double* batch_loss = nullptr);

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    bool operator==(const AdamHyper&) const = default;
};

struct AdamState {
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::uint64_t step = 0;
    AdamHyper hyper;

    static AdamState fresh(std::size_t n, AdamHyper hyper = {});
};

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double rate);

struct LrSchedule {
    double base_rate = 0.001;
    int step_size = 1;
    double gamma = 0.9;

    void validate() const;
    bool operator==(const LrSchedule&) const = default;
};

double lr_at(const LrSchedule& schedule, int epoch);

double l2_norm(std::span<const double> v);

}  // namespace fedae
