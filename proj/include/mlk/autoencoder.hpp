#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mlk/bytes.hpp"

namespace mlk {

/// Tied-weight linear autoencoder. The encoder is `weights` (latent_dim x dim,
/// row-major) and the decoder is its transpose; inputs are Z-score normalized
/// with a single scalar mean and standard deviation.
struct AEModel {
    std::size_t latent_dim = 0;
    std::size_t dim = 0;
    std::vector<float> weights;
    double norm_mean = 0.0;
    double norm_std = 1.0;

    /// Bytes of the serialized form: normalizer plus 32-bit weights.
    std::size_t serialized_size() const { return 16 + latent_dim * dim * sizeof(float); }

    void validate() const;

    friend bool operator==(const AEModel&, const AEModel&) = default;
};

/// Little-endian: mean (f64), std (f64), then weights row-major (f32).
Bytes serialize_model(const AEModel& model);
AEModel deserialize_model(std::span<const std::uint8_t> bytes, std::size_t latent_dim, std::size_t dim);

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 128;
    int epochs = 100;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Normalizer {
    double mean = 0.0;
    double std = 1.0;
};

inline constexpr double kStdFloor = 1e-30;

/// Mean and population standard deviation over every entry of every image.
Normalizer fit_normalizer(std::span<const std::span<const double>> images);

std::vector<double> encode(const AEModel& model, std::span<const double> image);
std::vector<double> decode(const AEModel& model, std::span<const double> latent);

struct ForwardResult {
    std::vector<double> latent;
    std::vector<double> recon;
};

ForwardResult forward(const AEModel& model, std::span<const double> image);

struct LossGrad {
    double mse = 0.0;
    /// d(mse)/dW, latent_dim x dim row-major.
    std::vector<double> grad;
};

/// MSE between normalized inputs and their tied-weight reconstruction, with
/// its analytic gradient. `weights` is latent_dim x dim in 64-bit precision and
/// `batch` holds already-normalized rows of length dim.
LossGrad loss_and_grad(std::span<const double> weights, std::size_t latent_dim, std::size_t dim,
                       std::span<const std::span<const double>> batch);

/// Same quantity for a stored model; images are normalized with the model's normalizer.
LossGrad loss_and_grad(const AEModel& model, std::span<const std::span<const double>> images);

/// Glorot-uniform initialized model with the given normalizer.
AEModel init_model(std::size_t latent_dim, std::size_t dim, Normalizer norm, std::uint64_t seed);

struct TrainResult {
    AEModel model;
    std::vector<double> epoch_loss;
};

/// Minibatch Adam. With `init` the weights are warm-started (incremental
/// training) and the normalizer is refit on `images`.
TrainResult train(std::span<const std::span<const double>> images, std::size_t latent_dim,
                  const TrainConfig& config, const AEModel* init = nullptr);

/// Fraction of images whose reconstruction has per-image NRMSE <= tau.
double ae_accuracy(std::span<const std::span<const double>> images, const AEModel& model, double tau);

}  // namespace mlk
