#include "mlk/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mlk/error.hpp"
#include "mlk/random.hpp"

namespace mlk {

namespace {

constexpr int kMaxLloydIterations = 25;

std::size_t nearest_index(std::span<const double> centroids, double v) {
    std::size_t best = 0;
    double best_d = std::abs(v - centroids[0]);
    for (std::size_t c = 1; c < centroids.size(); ++c) {
        const double d = std::abs(v - centroids[c]);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

}  // namespace

int pq_bits_for(std::size_t k) {
    switch (k) {
        case 16: return 4;
        case 64: return 6;
        case 256: return 8;
        default: throw InvalidArgument("PQ cluster count must be 16, 64 or 256, got " + std::to_string(k));
    }
}

std::size_t pq_k_for_bits(int bits) {
    switch (bits) {
        case 4: return 16;
        case 6: return 64;
        case 8: return 256;
        default: throw InvalidArgument("PQ bits must be 4, 6 or 8, got " + std::to_string(bits));
    }
}

int PQCodebook::bits() const { return pq_bits_for(k); }

std::vector<double> kmeans_1d(std::span<const double> values, std::size_t k, std::uint64_t seed) {
    if (values.empty()) throw InvalidArgument("kmeans_1d: no values");
    if (k == 0) throw InvalidArgument("kmeans_1d: k must be >= 1");

    std::vector<double> distinct(values.begin(), values.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() <= k) {
        // Every value gets its own centroid; surplus slots repeat the largest.
        distinct.resize(k, distinct.back());
        return distinct;
    }

    const std::size_t n = values.size();
    Rng rng(seed);
    std::vector<double> centroids;
    centroids.reserve(k);
    centroids.push_back(values[static_cast<std::size_t>(rng.below(n))]);
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = (values[i] - centroids[0]) * (values[i] - centroids[0]);
    while (centroids.size() < k) {
        double total = 0.0;
        for (double d : d2) total += d;
        std::size_t pick = n - 1;
        if (total > 0.0) {
            double target = rng.uniform() * total;
            for (std::size_t i = 0; i < n; ++i) {
                target -= d2[i];
                if (target < 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        centroids.push_back(values[pick]);
        for (std::size_t i = 0; i < n; ++i) {
            const double d = values[i] - centroids.back();
            d2[i] = std::min(d2[i], d * d);
        }
    }

    std::vector<std::size_t> assign(n, std::numeric_limits<std::size_t>::max());
    std::vector<double> sum(k);
    std::vector<std::size_t> count(k);
    for (int iter = 0; iter < kMaxLloydIterations; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t a = nearest_index(centroids, values[i]);
            if (a != assign[i]) {
                assign[i] = a;
                changed = true;
            }
        }
        if (!changed) break;

        std::fill(sum.begin(), sum.end(), 0.0);
        std::fill(count.begin(), count.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            sum[assign[i]] += values[i];
            ++count[assign[i]];
        }
        for (std::size_t c = 0; c < k; ++c)
            if (count[c] > 0) centroids[c] = sum[c] / static_cast<double>(count[c]);
        for (std::size_t c = 0; c < k; ++c) {
            if (count[c] > 0) continue;
            // Reseed an empty cluster at the point farthest from its centroid.
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = std::abs(values[i] - centroids[assign[i]]);
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            centroids[c] = values[far];
            --count[assign[far]];
            assign[far] = c;
            count[c] = 1;
        }
    }

    std::sort(centroids.begin(), centroids.end());
    return centroids;
}

double kmeans_sse(std::span<const double> values, std::span<const double> centroids) {
    double sse = 0.0;
    for (double v : values) {
        const double d = v - centroids[nearest_index(centroids, v)];
        sse += d * d;
    }
    return sse;
}

PQCodebook pq_train(std::span<const double> latents, std::size_t latent_dim, std::size_t k, std::uint64_t seed) {
    pq_bits_for(k);
    if (latent_dim == 0) throw InvalidArgument("pq_train: latent_dim must be >= 1");
    if (latents.empty() || latents.size() % latent_dim != 0)
        throw InvalidArgument("pq_train: latent array is empty or not a multiple of latent_dim");
    const std::size_t n = latents.size() / latent_dim;

    PQCodebook cb;
    cb.latent_dim = latent_dim;
    cb.k = k;
    cb.centroids.resize(latent_dim * k);
    std::vector<double> column(n);
    for (std::size_t d = 0; d < latent_dim; ++d) {
        for (std::size_t i = 0; i < n; ++i) column[i] = latents[i * latent_dim + d];
        const auto c = kmeans_1d(column, k, derive_seed(seed, d));
        for (std::size_t j = 0; j < k; ++j) cb.centroids[d * k + j] = static_cast<float>(c[j]);
    }
    return cb;
}

std::uint32_t nearest_centroid(std::span<const float> row, double value) {
    std::uint32_t best = 0;
    double best_d = std::abs(value - static_cast<double>(row[0]));
    for (std::size_t c = 1; c < row.size(); ++c) {
        const double d = std::abs(value - static_cast<double>(row[c]));
        if (d < best_d) {
            best_d = d;
            best = static_cast<std::uint32_t>(c);
        }
    }
    return best;
}

std::vector<std::uint32_t> pq_assign(const PQCodebook& codebook, std::span<const double> latents) {
    if (codebook.latent_dim == 0 || latents.size() % codebook.latent_dim != 0)
        throw ShapeMismatch("pq_encode: latent array does not match codebook dimension");
    std::vector<std::uint32_t> idx(latents.size());
    for (std::size_t i = 0; i < latents.size(); ++i)
        idx[i] = nearest_centroid(codebook.row(i % codebook.latent_dim), latents[i]);
    return idx;
}

Bytes pack_indices(std::span<const std::uint32_t> indices, int bits) {
    const std::size_t total_bits = indices.size() * static_cast<std::size_t>(bits);
    Bytes out((total_bits + 7) / 8, 0);
    std::size_t pos = 0;
    for (std::uint32_t v : indices) {
        if (bits < 32 && (v >> bits) != 0) throw InvalidArgument("pack_indices: index does not fit in bit width");
        for (int b = 0; b < bits; ++b, ++pos)
            if ((v >> b) & 1U) out[pos / 8] |= static_cast<std::uint8_t>(1U << (pos % 8));
    }
    return out;
}

std::vector<std::uint32_t> unpack_indices(std::span<const std::uint8_t> bytes, std::size_t count, int bits) {
    const std::size_t total_bits = count * static_cast<std::size_t>(bits);
    if (bytes.size() != (total_bits + 7) / 8)
        throw FormatError("code section has " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string((total_bits + 7) / 8));
    std::vector<std::uint32_t> out(count, 0);
    std::size_t pos = 0;
    for (auto& v : out)
        for (int b = 0; b < bits; ++b, ++pos)
            if ((bytes[pos / 8] >> (pos % 8)) & 1U) v |= 1U << b;
    return out;
}

Bytes pq_encode(const PQCodebook& codebook, std::span<const double> latents) {
    return pack_indices(pq_assign(codebook, latents), codebook.bits());
}

std::vector<double> pq_decode(const PQCodebook& codebook, std::span<const std::uint8_t> codes, std::size_t n_latents) {
    const auto idx = unpack_indices(codes, n_latents * codebook.latent_dim, codebook.bits());
    std::vector<double> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const std::size_t d = i % codebook.latent_dim;
        if (idx[i] >= codebook.k) throw FormatError("PQ code out of range");
        out[i] = static_cast<double>(codebook.centroids[d * codebook.k + idx[i]]);
    }
    return out;
}

Bytes serialize_codebook(const PQCodebook& codebook) {
    Bytes out;
    out.reserve(codebook.serialized_size());
    ByteWriter w(out);
    for (float c : codebook.centroids) w.f32(c);
    return out;
}

PQCodebook deserialize_codebook(std::span<const std::uint8_t> bytes, std::size_t latent_dim, std::size_t k) {
    PQCodebook cb;
    cb.latent_dim = latent_dim;
    cb.k = k;
    if (bytes.size() != cb.serialized_size())
        throw FormatError("PQ table has " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(cb.serialized_size()));
    ByteReader r(bytes);
    cb.centroids.resize(latent_dim * k);
    for (float& c : cb.centroids) c = r.f32();
    return cb;
}

}  // namespace mlk
