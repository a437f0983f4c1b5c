#include "mlk/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mlk/error.hpp"
#include "mlk/residual.hpp"

namespace mlk::kernels {

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

std::vector<double> encode_batch(const AEModel& model, std::span<const std::span<const double>> images, Exec exec) {
    std::vector<double> latents(images.size() * model.latent_dim);
    for_each_index(images.size(), exec, [&](std::size_t i) {
        const auto z = encode(model, images[i]);
        std::copy(z.begin(), z.end(), latents.begin() + static_cast<std::ptrdiff_t>(i * model.latent_dim));
    });
    return latents;
}

std::vector<std::vector<double>> decode_batch(const AEModel& model, std::span<const double> latents, Exec exec) {
    if (model.latent_dim == 0 || latents.size() % model.latent_dim != 0)
        throw ShapeMismatch("decode_batch: latent array does not match model");
    const std::size_t n = latents.size() / model.latent_dim;
    std::vector<std::vector<double>> out(n);
    for_each_index(n, exec, [&](std::size_t i) { out[i] = decode(model, latents.subspan(i * model.latent_dim, model.latent_dim)); });
    return out;
}

std::vector<Qoi> qoi_batch(std::span<const std::span<const double>> images, const VelocityGrid& grid, Exec exec) {
    std::vector<Qoi> out(images.size());
    for_each_index(images.size(), exec, [&](std::size_t i) { out[i] = compute_qoi(images[i], grid); });
    return out;
}

std::vector<double> nrmse_batch(std::span<const std::span<const double>> reference,
                                std::span<const std::span<const double>> approx, Exec exec) {
    if (reference.size() != approx.size()) throw ShapeMismatch("nrmse_batch: image count mismatch");
    std::vector<double> out(reference.size());
    for_each_index(reference.size(), exec, [&](std::size_t i) { out[i] = image_nrmse_or_inf(reference[i], approx[i]); });
    return out;
}

std::vector<ProjectionResult> project_batch(std::span<const std::span<const double>> recons,
                                            std::span<const ConstraintSystem> systems, const NewtonOptions& opts,
                                            Exec exec) {
    if (recons.size() != systems.size()) throw ShapeMismatch("project_batch: image/constraint count mismatch");
    std::vector<ProjectionResult> out(recons.size());
    for_each_index(recons.size(), exec, [&](std::size_t i) { out[i] = newton_project(recons[i], systems[i], opts); });
    return out;
}

}  // namespace mlk::kernels
