#pragma once

#include <cstddef>
#include <exception>
#include <mutex>
#include <span>
#include <vector>

#include "mlk/autoencoder.hpp"
#include "mlk/core_model.hpp"
#include "mlk/lagrange.hpp"
#include "mlk/qoi_metrics.hpp"

// Batch kernels over independent images. Every kernel has a serial reference
// path and an OpenMP path; per-image arithmetic is identical in both, so the
// results match bit for bit.
namespace mlk::kernels {

enum class Exec { serial, parallel };

int max_threads();

/// Runs fn(i) for i in [0, n). The first exception thrown is rethrown.
template <class Fn>
void for_each_index(std::size_t n, Exec exec, Fn&& fn) {
    if (exec == Exec::serial) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::exception_ptr error;
    std::mutex lock;
    const long long count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 16)
    for (long long i = 0; i < count; ++i) {
        try {
            fn(static_cast<std::size_t>(i));
        } catch (...) {
            std::lock_guard<std::mutex> g(lock);
            if (!error) error = std::current_exception();
        }
    }
    if (error) std::rethrow_exception(error);
}

/// Latents of every image, n x latent_dim row-major.
std::vector<double> encode_batch(const AEModel& model, std::span<const std::span<const double>> images, Exec exec);

/// Decoded images from n x latent_dim latents.
std::vector<std::vector<double>> decode_batch(const AEModel& model, std::span<const double> latents, Exec exec);

std::vector<Qoi> qoi_batch(std::span<const std::span<const double>> images, const VelocityGrid& grid, Exec exec);

/// Per-image NRMSE; a constant reference matched inexactly gives +inf.
std::vector<double> nrmse_batch(std::span<const std::span<const double>> reference,
                                std::span<const std::span<const double>> approx, Exec exec);

/// Dual-Newton projection of every reconstruction onto its image's constraints.
std::vector<ProjectionResult> project_batch(std::span<const std::span<const double>> recons,
                                            std::span<const ConstraintSystem> systems, const NewtonOptions& opts,
                                            Exec exec);

}  // namespace mlk::kernels
