#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mlk/bytes.hpp"

namespace mlk {

/// Error-bounded lossy codec for one residual image.
///
/// Implementations must guarantee |r_j - r̂_j| <= eb for every component.
/// An eb of zero requests lossless storage.
class EBCodec {
public:
    virtual ~EBCodec() = default;

    virtual std::string name() const = 0;
    virtual Bytes compress(std::span<const double> residual, std::size_t rows, std::size_t cols, double eb) const = 0;
    virtual std::vector<double> decompress(std::span<const std::uint8_t> bytes) const = 0;

    /// decompress(compress(residual)); codecs may override with a cheaper
    /// path that yields identical values.
    virtual std::vector<double> roundtrip(std::span<const double> residual, std::size_t rows, std::size_t cols,
                                          double eb) const {
        return decompress(compress(residual, rows, cols, eb));
    }
};

/// Uniform scalar quantizer with step 2*eb, zigzag varints, raw DEFLATE.
///
/// Payload: eb (f64), rows (u32), cols (u32), DEFLATE stream. With eb == 0
/// the stream carries the raw 64-bit patterns instead of quantization indices.
class BuiltinCodec final : public EBCodec {
public:
    std::string name() const override { return "builtin-uniform-deflate"; }
    Bytes compress(std::span<const double> residual, std::size_t rows, std::size_t cols, double eb) const override;
    std::vector<double> decompress(std::span<const std::uint8_t> bytes) const override;
    std::vector<double> roundtrip(std::span<const double> residual, std::size_t rows, std::size_t cols,
                                  double eb) const override;
};

Bytes builtin_eb_compress(std::span<const double> residual, std::size_t rows, std::size_t cols, double eb);
std::vector<double> builtin_eb_decompress(std::span<const std::uint8_t> bytes);

/// Quantization indices of the built-in codec; throws InvalidArgument when eb
/// is too small for the magnitude of a value to keep the bound.
std::vector<std::int64_t> uniform_quantize(std::span<const double> residual, double eb);

Bytes deflate_bytes(std::span<const std::uint8_t> in);
Bytes inflate_bytes(std::span<const std::uint8_t> in);
void put_varint(Bytes& out, std::uint64_t v);
std::uint64_t get_varint(std::span<const std::uint8_t> in, std::size_t& pos);
inline std::uint64_t zigzag(std::int64_t v) {
    return (static_cast<std::uint64_t>(v) << 1) ^ static_cast<std::uint64_t>(v >> 63);
}
inline std::int64_t unzigzag(std::uint64_t v) {
    return static_cast<std::int64_t>(v >> 1) ^ -static_cast<std::int64_t>(v & 1);
}

/// Indices of images whose per-image NRMSE exceeds tau, ascending.
std::vector<std::size_t> select_residuals(std::span<const std::span<const double>> originals,
                                          std::span<const std::span<const double>> recons, double tau);

/// NRMSE that treats a constant reference matched inexactly as infinitely wrong.
double image_nrmse_or_inf(std::span<const double> reference, std::span<const double> approx);

struct ErrorBoundSearch {
    double eb = 0.0;
    /// No probed bound passed; residuals must be stored losslessly.
    bool lossless = false;
    int probes = 0;
};

/// Largest L-infinity bound (log-bisection over [eb_hi * 2^-20, eb_hi],
/// eb_hi = tau * max image range) for which every image, corrected by its
/// decoded residual, meets per-image NRMSE <= tau. Inputs are the selected
/// images only and must be non-empty.
ErrorBoundSearch find_error_bound(std::span<const std::span<const double>> originals,
                                  std::span<const std::span<const double>> recons, std::size_t rows,
                                  std::size_t cols, double tau, const EBCodec& codec);

struct ResidualPlan {
    double tau = 1e-3;
    double eb = 0.0;
    bool lossless = false;
    std::vector<std::size_t> selected;
    std::vector<Bytes> payloads;
};

/// Section layout: eb (f64), count (u32), then per image index (u32),
/// payload length (u32), payload bytes.
Bytes serialize_residuals(const ResidualPlan& plan);
ResidualPlan deserialize_residuals(std::span<const std::uint8_t> bytes);

/// Adds each decoded payload to its image in place.
void apply_residuals(std::span<std::vector<double>> recons, const ResidualPlan& plan, const EBCodec& codec);

}  // namespace mlk
