#include "mlk/residual.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include <zlib.h>

#include "mlk/error.hpp"
#include "mlk/qoi_metrics.hpp"

namespace mlk {

namespace {

constexpr int kSearchSpan = 20;  // bracket covers eb_hi * 2^-20 .. eb_hi
constexpr int kMaxProbes = 20;

// Slightly under 2*eb so half-step residuals stay within eb after rounding.
double quant_step(double eb) { return 2.0 * eb * (1.0 - 0x1.0p-40); }

std::vector<double> dequantize(std::span<const std::int64_t> q, double eb) {
    const double step = quant_step(eb);
    std::vector<double> out(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) out[i] = static_cast<double>(q[i]) * step;
    return out;
}

}  // namespace

void put_varint(Bytes& out, std::uint64_t v) {
    while (v >= 0x80) {
        out.push_back(static_cast<std::uint8_t>(v | 0x80));
        v >>= 7;
    }
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint64_t get_varint(std::span<const std::uint8_t> in, std::size_t& pos) {
    std::uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
        if (pos >= in.size()) throw FormatError("truncated varint");
        const std::uint8_t b = in[pos++];
        v |= static_cast<std::uint64_t>(b & 0x7f) << shift;
        if ((b & 0x80) == 0) return v;
    }
    throw FormatError("varint too long");
}

Bytes deflate_bytes(std::span<const std::uint8_t> in) {
    z_stream zs{};
    if (deflateInit2(&zs, Z_BEST_COMPRESSION, Z_DEFLATED, -15, 9, Z_DEFAULT_STRATEGY) != Z_OK)
        throw Error("deflateInit2 failed");
    Bytes out(deflateBound(&zs, static_cast<uLong>(in.size())));
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = deflate(&zs, Z_FINISH);
    const std::size_t produced = zs.total_out;
    deflateEnd(&zs);
    if (rc != Z_STREAM_END) throw Error("deflate failed");
    out.resize(produced);
    return out;
}

Bytes inflate_bytes(std::span<const std::uint8_t> in) {
    z_stream zs{};
    if (inflateInit2(&zs, -15) != Z_OK) throw Error("inflateInit2 failed");
    Bytes out;
    std::uint8_t buf[16384];
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    int rc;
    do {
        zs.next_out = buf;
        zs.avail_out = sizeof buf;
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw FormatError("corrupt DEFLATE stream");
        }
        out.insert(out.end(), buf, buf + (sizeof buf - zs.avail_out));
        if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
            inflateEnd(&zs);
            throw FormatError("truncated DEFLATE stream");
        }
    } while (rc != Z_STREAM_END);
    const bool trailing = zs.avail_in != 0;
    inflateEnd(&zs);
    if (trailing) throw FormatError("trailing bytes after DEFLATE stream");
    return out;
}

std::vector<std::int64_t> uniform_quantize(std::span<const double> residual, double eb) {
    if (!(eb > 0.0) || !std::isfinite(eb)) throw InvalidArgument("error bound must be positive and finite");
    const double step = quant_step(eb);
    std::vector<std::int64_t> q(residual.size());
    for (std::size_t i = 0; i < residual.size(); ++i) {
        const double r = residual[i];
        if (!std::isfinite(r)) throw InvalidArgument("residual must be finite");
        const double t = r / step;
        if (!(std::abs(t) < 0x1.0p62)) throw InvalidArgument("error bound too small for residual magnitude");
        std::int64_t k = std::llround(t);
        // Division and product rounding can leave the bound off by an ulp.
        if (std::abs(r - static_cast<double>(k) * step) > eb) {
            if (std::abs(r - static_cast<double>(k + 1) * step) <= eb)
                ++k;
            else if (std::abs(r - static_cast<double>(k - 1) * step) <= eb)
                --k;
            else
                throw InvalidArgument("error bound too small for residual magnitude");
        }
        q[i] = k;
    }
    return q;
}

Bytes builtin_eb_compress(std::span<const double> residual, std::size_t rows, std::size_t cols, double eb) {
    if (residual.size() != rows * cols) throw ShapeMismatch("codec: residual size does not match dims");
    if (!(eb >= 0.0) || !std::isfinite(eb)) throw InvalidArgument("codec: error bound must be >= 0");

    Bytes stream;
    stream.reserve(residual.size() * 2);
    if (eb == 0.0) {
        for (double r : residual) put_varint(stream, std::bit_cast<std::uint64_t>(r));
    } else {
        for (std::int64_t k : uniform_quantize(residual, eb)) put_varint(stream, zigzag(k));
    }

    Bytes out;
    ByteWriter w(out);
    w.f64(eb);
    w.u32(static_cast<std::uint32_t>(rows));
    w.u32(static_cast<std::uint32_t>(cols));
    w.raw(deflate_bytes(stream));
    return out;
}

std::vector<double> builtin_eb_decompress(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    const double eb = r.f64();
    const std::size_t rows = r.u32();
    const std::size_t cols = r.u32();
    if (!(eb >= 0.0) || !std::isfinite(eb)) throw FormatError("codec: corrupt error bound");
    const Bytes stream = inflate_bytes(r.raw(r.remaining()));

    const std::size_t n = rows * cols;
    std::vector<double> out(n);
    std::size_t pos = 0;
    if (eb == 0.0) {
        for (auto& v : out) v = std::bit_cast<double>(get_varint(stream, pos));
    } else {
        std::vector<std::int64_t> q(n);
        for (auto& k : q) k = unzigzag(get_varint(stream, pos));
        out = dequantize(q, eb);
    }
    if (pos != stream.size()) throw FormatError("codec: stream length does not match dims");
    return out;
}

Bytes BuiltinCodec::compress(std::span<const double> residual, std::size_t rows, std::size_t cols, double eb) const {
    return builtin_eb_compress(residual, rows, cols, eb);
}

std::vector<double> BuiltinCodec::decompress(std::span<const std::uint8_t> bytes) const {
    return builtin_eb_decompress(bytes);
}

std::vector<double> BuiltinCodec::roundtrip(std::span<const double> residual, std::size_t rows, std::size_t cols,
                                            double eb) const {
    if (residual.size() != rows * cols) throw ShapeMismatch("codec: residual size does not match dims");
    if (eb == 0.0) return {residual.begin(), residual.end()};
    return dequantize(uniform_quantize(residual, eb), eb);
}

double image_nrmse_or_inf(std::span<const double> reference, std::span<const double> approx) {
    try {
        return nrmse(reference, approx);
    } catch (const DegenerateRange&) {
        return std::numeric_limits<double>::infinity();
    }
}

std::vector<std::size_t> select_residuals(std::span<const std::span<const double>> originals,
                                          std::span<const std::span<const double>> recons, double tau) {
    if (!(tau > 0.0)) throw InvalidArgument("select_residuals: tau must be positive");
    if (originals.size() != recons.size()) throw ShapeMismatch("select_residuals: image count mismatch");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < originals.size(); ++i)
        if (image_nrmse_or_inf(originals[i], recons[i]) > tau) out.push_back(i);
    return out;
}

ErrorBoundSearch find_error_bound(std::span<const std::span<const double>> originals,
                                  std::span<const std::span<const double>> recons, std::size_t rows,
                                  std::size_t cols, double tau, const EBCodec& codec) {
    if (originals.empty()) throw InvalidArgument("find_error_bound: no selected images");
    if (originals.size() != recons.size()) throw ShapeMismatch("find_error_bound: image count mismatch");
    if (!(tau > 0.0)) throw InvalidArgument("find_error_bound: tau must be positive");

    double max_range = 0.0;
    std::vector<std::vector<double>> residuals(originals.size());
    for (std::size_t i = 0; i < originals.size(); ++i) {
        const auto& o = originals[i];
        const auto [lo, hi] = std::minmax_element(o.begin(), o.end());
        max_range = std::max(max_range, *hi - *lo);
        residuals[i].resize(o.size());
        for (std::size_t j = 0; j < o.size(); ++j) residuals[i][j] = o[j] - recons[i][j];
    }

    ErrorBoundSearch result;
    const double eb_hi = tau * max_range;
    if (!(eb_hi > 0.0) || !std::isfinite(eb_hi)) {
        result.lossless = true;
        return result;
    }

    std::vector<double> corrected;
    auto accepted = [&](double eb) {
        ++result.probes;
        for (std::size_t i = 0; i < originals.size(); ++i) {
            std::vector<double> decoded;
            try {
                decoded = codec.roundtrip(residuals[i], rows, cols, eb);
            } catch (const InvalidArgument&) {
                return false;
            }
            corrected.assign(recons[i].begin(), recons[i].end());
            for (std::size_t j = 0; j < corrected.size(); ++j) corrected[j] += decoded[j];
            if (!(image_nrmse_or_inf(originals[i], corrected) <= tau)) return false;
        }
        return true;
    };

    if (accepted(eb_hi)) {
        result.eb = eb_hi;
        return result;
    }
    const double eb_lo = std::ldexp(eb_hi, -kSearchSpan);
    if (!accepted(eb_lo)) {
        result.eb = eb_lo;
        result.lossless = true;
        return result;
    }
    double pass_t = -kSearchSpan, fail_t = 0.0;
    while (result.probes < kMaxProbes) {
        const double mid = 0.5 * (pass_t + fail_t);
        if (accepted(eb_hi * std::exp2(mid)))
            pass_t = mid;
        else
            fail_t = mid;
    }
    result.eb = eb_hi * std::exp2(pass_t);
    return result;
}

Bytes serialize_residuals(const ResidualPlan& plan) {
    if (plan.selected.size() != plan.payloads.size())
        throw InvalidArgument("residual plan: selected/payload count mismatch");
    Bytes out;
    ByteWriter w(out);
    w.f64(plan.lossless ? 0.0 : plan.eb);
    w.u32(static_cast<std::uint32_t>(plan.selected.size()));
    for (std::size_t i = 0; i < plan.selected.size(); ++i) {
        w.u32(static_cast<std::uint32_t>(plan.selected[i]));
        w.u32(static_cast<std::uint32_t>(plan.payloads[i].size()));
        w.raw(plan.payloads[i]);
    }
    return out;
}

ResidualPlan deserialize_residuals(std::span<const std::uint8_t> bytes) {
    ResidualPlan plan;
    if (bytes.empty()) return plan;
    ByteReader r(bytes);
    plan.eb = r.f64();
    plan.lossless = plan.eb == 0.0;
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        plan.selected.push_back(r.u32());
        const std::uint32_t len = r.u32();
        const auto payload = r.raw(len);
        plan.payloads.emplace_back(payload.begin(), payload.end());
    }
    if (!r.at_end()) throw FormatError("residual section has trailing bytes");
    return plan;
}

void apply_residuals(std::span<std::vector<double>> recons, const ResidualPlan& plan, const EBCodec& codec) {
    if (plan.selected.size() != plan.payloads.size())
        throw FormatError("residual plan: selected/payload count mismatch");
    for (std::size_t i = 0; i < plan.selected.size(); ++i) {
        const std::size_t idx = plan.selected[i];
        if (idx >= recons.size()) throw FormatError("residual index out of range");
        const auto delta = codec.decompress(plan.payloads[i]);
        auto& img = recons[idx];
        if (delta.size() != img.size()) throw FormatError("residual payload dims do not match image");
        for (std::size_t j = 0; j < img.size(); ++j) img[j] += delta[j];
    }
}

}  // namespace mlk
