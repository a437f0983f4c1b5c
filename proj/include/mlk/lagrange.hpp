#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mlk/bytes.hpp"
#include "mlk/core_model.hpp"
#include "mlk/qoi_metrics.hpp"

namespace mlk {

using Vec4 = std::array<double, 4>;
using Mat4 = std::array<std::array<double, 4>, 4>;

/// Linear moment constraints A f = b for one image, each row divided by its
/// largest magnitude entry so that all rows (and b) are of order one.
///
/// Rows: vol, vol*v_par, (m/2)*vol*v_perp^2, (m/2)*vol*(v_par - u_anchor)^2.
/// The last row is anchored at a fixed velocity so every constraint is linear
/// in f; its target absorbs the anchor offset from the true flow.
struct ConstraintSystem {
    std::size_t dim = 0;
    std::array<std::vector<double>, 4> rows;
    Vec4 b{};
    Vec4 row_scales{};
    double u_anchor = 0.0;

    /// Unscaled entry A[k][j].
    double unscaled(std::size_t k, std::size_t j) const { return rows[k][j] * row_scales[k]; }
    Vec4 unscaled_b() const {
        return {b[0] * row_scales[0], b[1] * row_scales[1], b[2] * row_scales[2], b[3] * row_scales[3]};
    }
};

/// Constraint rows for a grid with the quadratic row anchored at `u_anchor`
/// (defaults to target.u_par). Throws InvalidArgument if target.n <= 0.
ConstraintSystem build_constraints(const VelocityGrid& grid, const Qoi& target,
                                   std::optional<double> u_anchor = std::nullopt);

enum class Distance : std::uint8_t { kl = 0, l2 = 1 };

struct NewtonOptions {
    double step = 1.0;
    int max_iter = 50;
    double tolerance = 1e-13;
    double floor_factor = 1e-12;
    Distance distance = Distance::kl;

    void validate() const;
};

enum class ProjectionStatus : std::uint8_t { converged, max_iter, degenerate };

struct ProjectionResult {
    Vec4 lambda{};
    std::vector<double> f;
    ProjectionStatus status = ProjectionStatus::degenerate;
    int iterations = 0;
    /// Final ||A f - b||_inf / ||b||_inf.
    double residual = 0.0;
    bool clamped = false;
};

inline constexpr double kExponentClamp = 700.0;

/// f_hat with entries below floor_factor * max(f_hat) raised to that floor.
/// Empty when max(f_hat) is not positive.
std::vector<double> positivity_floor(std::span<const double> f_hat, double floor_factor);

/// Generalized-KL projection of f_hat onto {f : A f = b} by damped Newton
/// ascent on the concave dual, starting from lambda = 0.
ProjectionResult newton_project(std::span<const double> f_hat, const ConstraintSystem& cs, const NewtonOptions& opts);

/// Decoder-side correction: f = f_hat_floor * exp(-lambda^T a) for KL, or
/// f = f_hat - A^T lambda for L2. Bit-identical to newton_project's output at the same lambda.
std::vector<double> apply_lambda(std::span<const double> f_hat, const Vec4& lambda, const ConstraintSystem& cs,
                                 const NewtonOptions& opts);

/// Dual gradient A f(lambda) - b and Hessian -sum a a^T f(lambda) for the KL distance.
Vec4 dual_gradient(std::span<const double> f_floor, const Vec4& lambda, const ConstraintSystem& cs);
Mat4 dual_hessian(std::span<const double> f_floor, const Vec4& lambda, const ConstraintSystem& cs);

/// Solves m x = rhs with partial pivoting; adds a small diagonal jitter and
/// retries when the matrix is numerically singular. Empty when that fails too.
std::optional<Vec4> solve4(Mat4 m, const Vec4& rhs);

enum class LambdaPrecision : std::uint8_t { f32 = 4, f64 = 8 };

LambdaPrecision parse_lambda_precision(std::string_view s);
std::string to_string(LambdaPrecision p);

/// Value as stored at the given precision (round to nearest even for f32).
double round_to(double v, LambdaPrecision p);

struct LambdaEntry {
    Vec4 lambda{};
    Qoi qoi;
    bool converged = false;
    bool overflow = false;
};

struct LambdaSet {
    LambdaPrecision precision = LambdaPrecision::f64;
    std::vector<LambdaEntry> entries;
};

/// Narrows every lambda and stored QoI to `precision`. Entries that overflow
/// are zeroed and flagged.
LambdaSet cast_lambda(const LambdaSet& set, LambdaPrecision precision);

/// Per image: 4 lambdas then n, u_par, t_perp, t_par at the set's precision.
Bytes serialize_lambdas(const LambdaSet& set);
LambdaSet deserialize_lambdas(std::span<const std::uint8_t> bytes, std::size_t n_images, LambdaPrecision precision);

}  // namespace mlk
