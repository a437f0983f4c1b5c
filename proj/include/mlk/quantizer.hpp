#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mlk/bytes.hpp"

namespace mlk {

/// Per-dimension scalar codebooks. `centroids` is latent_dim x k,
/// dimension-major, each row sorted ascending.
struct PQCodebook {
    std::size_t latent_dim = 0;
    std::size_t k = 0;
    std::vector<float> centroids;

    int bits() const;
    std::size_t serialized_size() const { return latent_dim * k * sizeof(float); }
    std::span<const float> row(std::size_t d) const { return {centroids.data() + d * k, k}; }

    friend bool operator==(const PQCodebook&, const PQCodebook&) = default;
};

/// Bits per code component for a supported cluster count (16, 64 or 256).
int pq_bits_for(std::size_t k);
std::size_t pq_k_for_bits(int bits);

/// 1-D k-means: k-means++ seeding, at most 25 Lloyd iterations, sorted output.
std::vector<double> kmeans_1d(std::span<const double> values, std::size_t k, std::uint64_t seed);

/// Sum of squared distances to the nearest centroid.
double kmeans_sse(std::span<const double> values, std::span<const double> centroids);

/// `latents` is n x latent_dim row-major.
PQCodebook pq_train(std::span<const double> latents, std::size_t latent_dim, std::size_t k, std::uint64_t seed);

/// Index of the nearest centroid, ties to the lower index.
std::uint32_t nearest_centroid(std::span<const float> row, double value);

/// Unpacked indices, n x latent_dim.
std::vector<std::uint32_t> pq_assign(const PQCodebook& codebook, std::span<const double> latents);

/// Little-endian bit packing of `bits`-wide indices, zero padded to a byte boundary.
Bytes pack_indices(std::span<const std::uint32_t> indices, int bits);
std::vector<std::uint32_t> unpack_indices(std::span<const std::uint8_t> bytes, std::size_t count, int bits);

Bytes pq_encode(const PQCodebook& codebook, std::span<const double> latents);
/// Returns n_latents x latent_dim reconstructed latents.
std::vector<double> pq_decode(const PQCodebook& codebook, std::span<const std::uint8_t> codes, std::size_t n_latents);

Bytes serialize_codebook(const PQCodebook& codebook);
PQCodebook deserialize_codebook(std::span<const std::uint8_t> bytes, std::size_t latent_dim, std::size_t k);

}  // namespace mlk
