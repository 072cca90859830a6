#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fedae/numerics.hpp"

namespace fedae {

/// Mirror-symmetric dense autoencoder:
/// in -> hidden... -> bottleneck -> reversed hidden... -> in.
/// Hidden and bottleneck layers use ReLU, the reconstruction head uses Tanh.
struct AutoencoderConfig {
    std::size_t input_dim = 66;
    std::vector<std::size_t> hidden_dims{128, 64, 32};
    std::size_t bottleneck_dim = 16;
    double dropout = 0.2;
    // Also place dropout after the decoder's hidden layers.
    bool mirror_dropout = true;
    std::uint64_t seed = 0;

    void validate() const;
    std::vector<LayerShape> layer_shapes() const;
    // Dropout probability applied after each layer (0 = none).
    std::vector<double> dropout_plan() const;

    bool operator==(const AutoencoderConfig&) const = default;
};

struct TrainConfig {
    int epochs = 50;
    std::size_t batch_size = 32;
    LrSchedule schedule{};
    AdamHyper adam{};
    std::uint64_t shuffle_seed = 0;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

/// Glorot-uniform weights, zero biases.
ParameterSet build(const AutoencoderConfig& config);

Vector encode(const ParameterSet& params, const Vector& x);
Vector decode(const ParameterSet& params, const Vector& y);
Vector reconstruct(const ParameterSet& params, const Vector& x);

/// Per-row MSE between each row and its eval-mode reconstruction.
std::vector<double> reconstruction_errors(const ParameterSet& params, const Matrix& data);

struct TrainResult {
    ParameterSet params;
    AdamState state;
    std::vector<double> loss_trace;  // mean batch loss per epoch
};

/// Mini-batch Adam over `data`. Rows are reshuffled every epoch and dropout
/// masks are drawn from a single stream seeded by tc.shuffle_seed, so the
/// result is a pure function of the inputs.
TrainResult train_epochs(const AutoencoderConfig& model, ParameterSet params, const Matrix& data,
                         const TrainConfig& tc, AdamState state);

}  // namespace fedae
