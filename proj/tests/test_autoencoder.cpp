#include <doctest.h>

#include <cmath>

#include "mlk/autoencoder.hpp"
#include "mlk/core_model.hpp"
#include "mlk/error.hpp"
#include "mlk/random.hpp"
#include "oracles.hpp"

using namespace mlk;

namespace {

using Images = std::vector<std::vector<double>>;

std::vector<std::span<const double>> views(const Images& imgs) {
    return {imgs.begin(), imgs.end()};
}

AEModel random_model(std::size_t latent, std::size_t dim, std::uint64_t seed) {
    AEModel m;
    m.latent_dim = latent;
    m.dim = dim;
    m.norm_mean = 0.3;
    m.norm_std = 1.7;
    Rng rng(seed);
    m.weights.resize(latent * dim);
    for (float& w : m.weights) w = static_cast<float>(rng.uniform(-1.0, 1.0));
    return m;
}

// Images spanned by the constant image and `rank` fixed random bases.
Images low_rank_corpus(std::size_t n, std::size_t dim, std::size_t rank, std::uint64_t seed) {
    Rng rng(seed);
    Images basis(rank, std::vector<double>(dim));
    for (auto& b : basis)
        for (double& v : b) v = rng.uniform(-1.0, 1.0);
    Images out(n, std::vector<double>(dim, 3.0));
    for (auto& img : out)
        for (const auto& b : basis) {
            const double c = (rng.below(2) ? 1.0 : -1.0) * rng.uniform(0.5, 2.0);
            for (std::size_t j = 0; j < dim; ++j) img[j] += c * b[j];
        }
    return out;
}

}  // namespace

TEST_CASE("normalizer of constant images") {
    const Images imgs{{5, 5}, {5, 5, 5}};
    const auto n = fit_normalizer(views(imgs));
    CHECK(n.mean == 5.0);
    CHECK(n.std == kStdFloor);
}

TEST_CASE("normalizer of {0, 2}") {
    const Images imgs{{0, 2}, {2, 0}};
    const auto n = fit_normalizer(views(imgs));
    CHECK(n.mean == 1.0);
    CHECK(n.std == 1.0);
}

TEST_CASE("normalizer matches a streaming extended-precision oracle") {
    const auto ds = gen_synthetic(2, 64, default_grid(), SyntheticParams{});
    std::vector<std::span<const double>> imgs;
    for (std::size_t i = 0; i < ds.n_images(); ++i) imgs.push_back(ds.image(i));
    long double mean = 0.0L, m2 = 0.0L;
    std::size_t count = 0;
    for (const auto& img : imgs)
        for (double v : img) {
            ++count;
            const long double d = v - mean;
            mean += d / static_cast<long double>(count);
            m2 += d * (v - mean);
        }
    const auto n = fit_normalizer(imgs);
    CHECK(n.mean == doctest::Approx(static_cast<double>(mean)).epsilon(1e-12));
    CHECK(n.std == doctest::Approx(static_cast<double>(std::sqrt(m2 / count))).epsilon(1e-12));
}

TEST_CASE("zero weights give zero latents and a constant mean image") {
    AEModel m;
    m.latent_dim = 3;
    m.dim = 5;
    m.weights.assign(15, 0.0f);
    m.norm_mean = 2.5;
    m.norm_std = 4.0;
    const auto r = forward(m, std::vector<double>{1, 2, 3, 4, 5});
    for (double z : r.latent) CHECK(z == 0.0);
    for (double v : r.recon) CHECK(v == 2.5);
}

TEST_CASE("orthonormal rows reproduce images in their span") {
    AEModel m;
    m.latent_dim = 2;
    m.dim = 4;
    const float h = 0.5f;
    m.weights = {h, h, h, h, h, -h, h, -h};
    m.norm_mean = 1.0;
    m.norm_std = 2.0;
    // normalized x = 3 * row0 - 1 * row1
    std::vector<double> img(4);
    for (std::size_t j = 0; j < 4; ++j) img[j] = 1.0 + 2.0 * (3.0 * m.weights[j] - 1.0 * m.weights[4 + j]);
    const auto r = forward(m, img);
    for (std::size_t j = 0; j < 4; ++j) CHECK(r.recon[j] == doctest::Approx(img[j]).epsilon(1e-5));
}

TEST_CASE("forward matches a naive matrix product") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const std::size_t L = 4, D = 37;
        const auto m = random_model(L, D, seed);
        Rng rng(seed + 100);
        std::vector<double> img(D);
        for (double& v : img) v = rng.uniform(-5.0, 5.0);

        std::vector<double> x(D), z(L, 0.0), y(D, 0.0);
        for (std::size_t j = 0; j < D; ++j) x[j] = (img[j] - m.norm_mean) / m.norm_std;
        for (std::size_t k = 0; k < L; ++k)
            for (std::size_t j = 0; j < D; ++j) z[k] += double(m.weights[k * D + j]) * x[j];
        for (std::size_t j = 0; j < D; ++j)
            for (std::size_t k = 0; k < L; ++k) y[j] += double(m.weights[k * D + j]) * z[k];

        const auto r = forward(m, img);
        for (std::size_t k = 0; k < L; ++k) CHECK(r.latent[k] == doctest::Approx(z[k]).epsilon(1e-12));
        for (std::size_t j = 0; j < D; ++j)
            CHECK(r.recon[j] == doctest::Approx(y[j] * m.norm_std + m.norm_mean).epsilon(1e-12));
    }
}

TEST_CASE("decoder is linear in the latent") {
    const auto m = random_model(3, 11, 4);
    const std::vector<double> a{1, -2, 0.5}, b{0.25, 3, -1};
    std::vector<double> s(3);
    for (std::size_t k = 0; k < 3; ++k) s[k] = 2.0 * a[k] + b[k];
    const auto da = decode(m, a), db = decode(m, b), ds = decode(m, s);
    for (std::size_t j = 0; j < 11; ++j) {
        const double lin = 2.0 * (da[j] - m.norm_mean) + (db[j] - m.norm_mean) + m.norm_mean;
        CHECK(ds[j] == doctest::Approx(lin).epsilon(1e-12));
    }
}

TEST_CASE("loss at zero weights is the mean square input with zero gradient") {
    const Images batch{{1, -2, 3}, {0.5, 0.5, -1}};
    const std::vector<double> w(6, 0.0);
    const auto lg = loss_and_grad(w, 2, 3, views(batch));
    CHECK(lg.mse == doctest::Approx((1 + 4 + 9 + 0.25 + 0.25 + 1) / 6.0));
    for (double g : lg.grad) CHECK(g == 0.0);
}

TEST_CASE("perfect reconstruction has zero loss and gradient") {
    const std::vector<double> w{1, 0, 0, 0, 1, 0};
    const Images batch{{1, 2, 0}, {-3, 4, 0}};
    const auto lg = loss_and_grad(w, 2, 3, views(batch));
    CHECK(lg.mse == 0.0);
    for (double g : lg.grad) CHECK(g == 0.0);
}

TEST_CASE("gradient matches central finite differences") {
    int instances = 0;
    for (std::uint64_t seed = 1; seed <= 25; ++seed) {
        Rng rng(seed);
        const std::size_t D = 6, L = 2;
        std::vector<double> w(L * D);
        for (double& v : w) v = rng.uniform(-1.0, 1.0);
        Images batch(3, std::vector<double>(D));
        for (auto& x : batch)
            for (double& v : x) v = rng.uniform(-1.0, 1.0);
        const auto lg = loss_and_grad(w, L, D, views(batch));
        auto mse = [&](const std::vector<double>& wv) { return loss_and_grad(wv, L, D, views(batch)).mse; };
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double fd = oracle::central_difference(mse, w, i, 1e-6);
            CHECK(std::abs(fd - lg.grad[i]) <= 1e-5 * std::max(std::abs(fd), 1e-3));
        }
        ++instances;
    }
    CHECK(instances >= 20);
}

TEST_CASE("training on low-rank data drives the loss down by four orders") {
    const std::size_t D = 24, rank = 2;
    const auto corpus = low_rank_corpus(256, D, rank, 17);
    TrainConfig cfg;
    cfg.epochs = 400;
    cfg.learning_rate = 1e-2;
    cfg.batch_size = 32;
    cfg.seed = 3;
    const auto res = train(views(corpus), rank + 1, cfg);
    const auto init = init_model(rank + 1, D, fit_normalizer(views(corpus)), cfg.seed);
    const double initial = loss_and_grad(init, views(corpus)).mse;
    const double final_loss = loss_and_grad(res.model, views(corpus)).mse;
    CHECK(final_loss <= 1e-4 * initial);
    CHECK(res.epoch_loss.size() == 400);
    CHECK(ae_accuracy(views(corpus), res.model, 1e-2) == 1.0);
}

TEST_CASE("training is deterministic") {
    const auto corpus = low_rank_corpus(64, 12, 2, 5);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.seed = 9;
    const auto a = train(views(corpus), 3, cfg);
    const auto b = train(views(corpus), 3, cfg);
    CHECK(serialize_model(a.model) == serialize_model(b.model));
    cfg.seed = 10;
    CHECK(train(views(corpus), 3, cfg).model.weights != a.model.weights);
}

TEST_CASE("incremental training starts from the given weights") {
    const auto corpus = low_rank_corpus(64, 12, 2, 5);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.learning_rate = 1e-2;
    const auto full = train(views(corpus), 3, cfg);
    cfg.epochs = 2;
    const auto inc = train(views(corpus), 3, cfg, &full.model);
    const auto cold = train(views(corpus), 3, cfg);
    CHECK(inc.epoch_loss.back() < cold.epoch_loss.back());
}

TEST_CASE("invalid training configs are rejected") {
    const auto corpus = low_rank_corpus(8, 4, 1, 1);
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(train(views(corpus), 2, cfg), InvalidArgument);
    cfg = TrainConfig{};
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(train(views(corpus), 2, cfg), InvalidArgument);
    CHECK_THROWS_AS(train({}, 2, TrainConfig{}), InvalidArgument);
}

TEST_CASE("ae accuracy extremes") {
    const Images imgs{{0, 1, 2, 3}, {3, 1, 0, 2}};
    AEModel zero;
    zero.latent_dim = 1;
    zero.dim = 4;
    zero.weights.assign(4, 0.0f);
    zero.norm_mean = 1.5;
    CHECK(ae_accuracy(views(imgs), zero, 1e-6) == 0.0);

    const auto rank = low_rank_corpus(128, 8, 1, 2);
    TrainConfig cfg;
    cfg.epochs = 600;
    cfg.learning_rate = 1e-2;
    cfg.batch_size = 16;
    const auto res = train(views(rank), 2, cfg);
    CHECK(ae_accuracy(views(rank), res.model, 1e-2) == 1.0);
}

TEST_CASE("serialized model has 16 + 4*L*D bytes and roundtrips") {
    const auto m = random_model(4, 1221, 2);
    const auto bytes = serialize_model(m);
    CHECK(bytes.size() == 19552);
    CHECK(m.serialized_size() == 19552);
    CHECK(deserialize_model(bytes, 4, 1221) == m);
    CHECK_THROWS_AS(deserialize_model(std::span(bytes).first(bytes.size() - 1), 4, 1221), FormatError);
}
