#include "mlk/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mlk/error.hpp"
#include "mlk/qoi_metrics.hpp"
#include "mlk/random.hpp"

namespace mlk {

void AEModel::validate() const {
    if (latent_dim == 0 || dim == 0) throw InvalidArgument("AE model has zero dimension");
    if (weights.size() != latent_dim * dim) throw InvalidArgument("AE weight count does not match its shape");
    if (!(norm_std > 0.0) || !std::isfinite(norm_std) || !std::isfinite(norm_mean))
        throw InvalidArgument("AE normalizer must be finite with positive std");
}

Bytes serialize_model(const AEModel& model) {
    Bytes out;
    out.reserve(model.serialized_size());
    ByteWriter w(out);
    w.f64(model.norm_mean);
    w.f64(model.norm_std);
    for (float v : model.weights) w.f32(v);
    return out;
}

AEModel deserialize_model(std::span<const std::uint8_t> bytes, std::size_t latent_dim, std::size_t dim) {
    AEModel m;
    m.latent_dim = latent_dim;
    m.dim = dim;
    if (bytes.size() != m.serialized_size())
        throw FormatError("AE weights section has " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(m.serialized_size()));
    ByteReader r(bytes);
    m.norm_mean = r.f64();
    m.norm_std = r.f64();
    m.weights.resize(latent_dim * dim);
    for (float& v : m.weights) v = r.f32();
    m.validate();
    return m;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw InvalidArgument("train: learning rate must be positive");
    if (batch_size < 1) throw InvalidArgument("train: batch size must be >= 1");
    if (epochs < 1) throw InvalidArgument("train: epochs must be >= 1");
}

Normalizer fit_normalizer(std::span<const std::span<const double>> images) {
    if (images.empty()) throw InvalidArgument("fit_normalizer: no images");
    std::size_t count = 0;
    double sum = 0.0;
    for (const auto& img : images) {
        for (double v : img) sum += v;
        count += img.size();
    }
    if (count == 0) throw InvalidArgument("fit_normalizer: images are empty");
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (const auto& img : images)
        for (double v : img) sq += (v - mean) * (v - mean);
    return {mean, std::max(std::sqrt(sq / static_cast<double>(count)), kStdFloor)};
}

std::vector<double> encode(const AEModel& model, std::span<const double> image) {
    if (image.size() != model.dim) throw ShapeMismatch("encode: image size does not match model");
    std::vector<double> z(model.latent_dim, 0.0);
    const double inv = 1.0 / model.norm_std;
    for (std::size_t k = 0; k < model.latent_dim; ++k) {
        const float* w = model.weights.data() + k * model.dim;
        double acc = 0.0;
        for (std::size_t j = 0; j < model.dim; ++j) acc += static_cast<double>(w[j]) * ((image[j] - model.norm_mean) * inv);
        z[k] = acc;
    }
    return z;
}

std::vector<double> decode(const AEModel& model, std::span<const double> latent) {
    if (latent.size() != model.latent_dim) throw ShapeMismatch("decode: latent size does not match model");
    std::vector<double> x(model.dim, 0.0);
    for (std::size_t k = 0; k < model.latent_dim; ++k) {
        const float* w = model.weights.data() + k * model.dim;
        const double zk = latent[k];
        for (std::size_t j = 0; j < model.dim; ++j) x[j] += static_cast<double>(w[j]) * zk;
    }
    for (double& v : x) v = v * model.norm_std + model.norm_mean;
    return x;
}

ForwardResult forward(const AEModel& model, std::span<const double> image) {
    ForwardResult r;
    r.latent = encode(model, image);
    r.recon = decode(model, r.latent);
    return r;
}

LossGrad loss_and_grad(std::span<const double> weights, std::size_t latent_dim, std::size_t dim,
                       std::span<const std::span<const double>> batch) {
    if (batch.empty()) throw InvalidArgument("loss_and_grad: empty batch");
    if (weights.size() != latent_dim * dim) throw ShapeMismatch("loss_and_grad: weight shape mismatch");

    LossGrad out;
    out.grad.assign(latent_dim * dim, 0.0);
    std::vector<double> z(latent_dim), wr(latent_dim), r(dim);
    double sq = 0.0;

    for (const auto& x : batch) {
        if (x.size() != dim) throw ShapeMismatch("loss_and_grad: image size does not match model");
        for (std::size_t k = 0; k < latent_dim; ++k) {
            const double* w = weights.data() + k * dim;
            double acc = 0.0;
            for (std::size_t j = 0; j < dim; ++j) acc += w[j] * x[j];
            z[k] = acc;
        }
        for (std::size_t j = 0; j < dim; ++j) r[j] = -x[j];
        for (std::size_t k = 0; k < latent_dim; ++k) {
            const double* w = weights.data() + k * dim;
            for (std::size_t j = 0; j < dim; ++j) r[j] += w[j] * z[k];
        }
        for (std::size_t k = 0; k < latent_dim; ++k) {
            const double* w = weights.data() + k * dim;
            double acc = 0.0;
            for (std::size_t j = 0; j < dim; ++j) acc += w[j] * r[j];
            wr[k] = acc;
        }
        for (std::size_t j = 0; j < dim; ++j) sq += r[j] * r[j];
        // d/dW ||W^T W x - x||^2 = 2 (z r^T + (W r) x^T)
        for (std::size_t k = 0; k < latent_dim; ++k) {
            double* g = out.grad.data() + k * dim;
            const double zk = z[k], wrk = wr[k];
            for (std::size_t j = 0; j < dim; ++j) g[j] += zk * r[j] + wrk * x[j];
        }
    }

    const double denom = static_cast<double>(batch.size()) * static_cast<double>(dim);
    out.mse = sq / denom;
    const double scale = 2.0 / denom;
    for (double& g : out.grad) g *= scale;
    return out;
}

LossGrad loss_and_grad(const AEModel& model, std::span<const std::span<const double>> images) {
    model.validate();
    std::vector<double> w(model.weights.begin(), model.weights.end());
    std::vector<std::vector<double>> normed;
    normed.reserve(images.size());
    for (const auto& img : images) {
        if (img.size() != model.dim) throw ShapeMismatch("loss_and_grad: image size does not match model");
        auto& v = normed.emplace_back(img.begin(), img.end());
        for (double& e : v) e = (e - model.norm_mean) / model.norm_std;
    }
    std::vector<std::span<const double>> views(normed.begin(), normed.end());
    return loss_and_grad(w, model.latent_dim, model.dim, views);
}

AEModel init_model(std::size_t latent_dim, std::size_t dim, Normalizer norm, std::uint64_t seed) {
    AEModel m;
    m.latent_dim = latent_dim;
    m.dim = dim;
    m.norm_mean = norm.mean;
    m.norm_std = norm.std;
    m.weights.resize(latent_dim * dim);
    const double limit = std::sqrt(6.0 / static_cast<double>(latent_dim + dim));
    Rng rng(derive_seed(seed, 0xae));
    for (float& w : m.weights) w = static_cast<float>(rng.uniform(-limit, limit));
    return m;
}

TrainResult train(std::span<const std::span<const double>> images, std::size_t latent_dim,
                  const TrainConfig& config, const AEModel* init) {
    config.validate();
    if (images.empty()) throw InvalidArgument("train: no training images");
    const std::size_t dim = images.front().size();
    if (latent_dim == 0 || dim == 0) throw InvalidArgument("train: zero dimension");
    for (const auto& img : images)
        if (img.size() != dim) throw ShapeMismatch("train: images differ in size");

    const Normalizer norm = fit_normalizer(images);
    AEModel start;
    if (init != nullptr) {
        init->validate();
        if (init->latent_dim != latent_dim || init->dim != dim)
            throw ShapeMismatch("train: warm-start model has a different shape");
        start = *init;
        start.norm_mean = norm.mean;
        start.norm_std = norm.std;
    } else {
        start = init_model(latent_dim, dim, norm, config.seed);
    }

    const std::size_t n = images.size();
    std::vector<double> data(n * dim);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dim; ++j) data[i * dim + j] = (images[i][j] - norm.mean) / norm.std;

    std::vector<double> w(start.weights.begin(), start.weights.end());
    std::vector<double> m1(w.size(), 0.0), m2(w.size(), 0.0);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.seed, 0x5a5a));

    TrainResult result;
    std::vector<std::span<const double>> batch;
    double b1t = 1.0, b2t = 1.0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        double epoch_sq = 0.0;
        for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
            const std::size_t end = std::min(n, begin + config.batch_size);
            batch.clear();
            for (std::size_t i = begin; i < end; ++i) batch.emplace_back(data.data() + order[i] * dim, dim);

            const LossGrad lg = loss_and_grad(w, latent_dim, dim, batch);
            if (!std::isfinite(lg.mse))
                throw TrainingDiverged(epoch, "training diverged at epoch " + std::to_string(epoch));
            epoch_sq += lg.mse * static_cast<double>(end - begin);

            b1t *= config.beta1;
            b2t *= config.beta2;
            const double c1 = 1.0 / (1.0 - b1t), c2 = 1.0 / (1.0 - b2t);
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double g = lg.grad[i];
                m1[i] = config.beta1 * m1[i] + (1.0 - config.beta1) * g;
                m2[i] = config.beta2 * m2[i] + (1.0 - config.beta2) * g * g;
                w[i] -= config.learning_rate * (m1[i] * c1) / (std::sqrt(m2[i] * c2) + config.epsilon);
            }
        }
        result.epoch_loss.push_back(epoch_sq / static_cast<double>(n));
    }

    result.model = std::move(start);
    for (std::size_t i = 0; i < w.size(); ++i) result.model.weights[i] = static_cast<float>(w[i]);
    return result;
}

double ae_accuracy(std::span<const std::span<const double>> images, const AEModel& model, double tau) {
    if (!(tau > 0.0)) throw InvalidArgument("ae_accuracy: tau must be positive");
    if (images.empty()) return 1.0;
    std::size_t ok = 0;
    for (const auto& img : images) {
        const auto recon = forward(model, img).recon;
        double e;
        try {
            e = nrmse(img, recon);
        } catch (const DegenerateRange&) {
            continue;
        }
        if (e <= tau) ++ok;
    }
    return static_cast<double>(ok) / static_cast<double>(images.size());
}

}  // namespace mlk
