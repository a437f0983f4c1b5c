#include "mlk/lagrange.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mlk/error.hpp"

namespace mlk {

namespace {

// Neumaier-compensated running sum.
struct CompensatedSum {
    double sum = 0.0;
    double carry = 0.0;

    void add(double v) {
        const double t = sum + v;
        if (std::abs(sum) >= std::abs(v))
            carry += (sum - t) + v;
        else
            carry += (v - t) + sum;
        sum = t;
    }
    double value() const { return sum + carry; }
};

double exponent(const ConstraintSystem& cs, const Vec4& lambda, std::size_t j) {
    return lambda[0] * cs.rows[0][j] + lambda[1] * cs.rows[1][j] + lambda[2] * cs.rows[2][j] +
           lambda[3] * cs.rows[3][j];
}

// Primal point f(lambda) on the floored reconstruction. Returns true if any
// exponent had to be clamped.
bool primal(std::span<const double> f_floor, const Vec4& lambda, const ConstraintSystem& cs, std::span<double> out) {
    bool clamped = false;
    for (std::size_t j = 0; j < cs.dim; ++j) {
        double e = exponent(cs, lambda, j);
        if (e > kExponentClamp) {
            e = kExponentClamp;
            clamped = true;
        } else if (e < -kExponentClamp) {
            e = -kExponentClamp;
            clamped = true;
        }
        out[j] = f_floor[j] * std::exp(-e);
    }
    return clamped;
}

Vec4 constraint_residual(std::span<const double> f, const ConstraintSystem& cs) {
    Vec4 g{};
    for (int k = 0; k < 4; ++k) {
        CompensatedSum s;
        for (std::size_t j = 0; j < cs.dim; ++j) s.add(cs.rows[k][j] * f[j]);
        g[k] = s.value() - cs.b[k];
    }
    return g;
}

double inf_norm(const Vec4& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

std::optional<Vec4> solve_pivoted(Mat4 m, Vec4 rhs, double tiny) {
    for (int col = 0; col < 4; ++col) {
        int piv = col;
        for (int r = col + 1; r < 4; ++r)
            if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
        if (!(std::abs(m[piv][col]) > tiny)) return std::nullopt;
        std::swap(m[piv], m[col]);
        std::swap(rhs[piv], rhs[col]);
        for (int r = col + 1; r < 4; ++r) {
            const double f = m[r][col] / m[col][col];
            for (int c = col; c < 4; ++c) m[r][c] -= f * m[col][c];
            rhs[r] -= f * rhs[col];
        }
    }
    Vec4 x{};
    for (int r = 3; r >= 0; --r) {
        double acc = rhs[r];
        for (int c = r + 1; c < 4; ++c) acc -= m[r][c] * x[c];
        x[r] = acc / m[r][r];
    }
    for (double v : x)
        if (!std::isfinite(v)) return std::nullopt;
    return x;
}

ProjectionResult project_l2(std::span<const double> f_hat, const ConstraintSystem& cs, const NewtonOptions& opts) {
    ProjectionResult res;
    // f = f_hat - A^T mu with (A A^T) mu = A f_hat - b.
    std::vector<double> fh(f_hat.begin(), f_hat.end());
    const Vec4 g = constraint_residual(fh, cs);
    Mat4 gram{};
    for (int a = 0; a < 4; ++a)
        for (int c = 0; c < 4; ++c) {
            CompensatedSum s;
            for (std::size_t j = 0; j < cs.dim; ++j) s.add(cs.rows[a][j] * cs.rows[c][j]);
            gram[a][c] = s.value();
        }
    const auto mu = solve4(gram, g);
    if (!mu) return res;
    res.lambda = *mu;
    res.f = apply_lambda(f_hat, res.lambda, cs, opts);
    res.iterations = 1;
    res.residual = inf_norm(constraint_residual(res.f, cs)) / inf_norm(cs.b);
    res.status = res.residual <= std::max(opts.tolerance, 1e-12) ? ProjectionStatus::converged
                                                                 : ProjectionStatus::max_iter;
    return res;
}

}  // namespace

ConstraintSystem build_constraints(const VelocityGrid& grid, const Qoi& target, std::optional<double> u_anchor) {
    if (!(target.n > 0.0)) throw InvalidArgument("build_constraints: zero density");
    const double anchor = u_anchor.value_or(target.u_par);
    const double half_m = 0.5 * grid.mass;

    ConstraintSystem cs;
    cs.dim = grid.cells();
    cs.u_anchor = anchor;
    for (auto& row : cs.rows) row.resize(cs.dim);
    for (std::size_t r = 0; r < grid.rows; ++r) {
        for (std::size_t c = 0; c < grid.cols; ++c) {
            const std::size_t j = r * grid.cols + c;
            const double w = grid.vol[j];
            const double dv = grid.v_par[c] - anchor;
            cs.rows[0][j] = w;
            cs.rows[1][j] = w * grid.v_par[c];
            cs.rows[2][j] = half_m * w * grid.v_perp[r] * grid.v_perp[r];
            cs.rows[3][j] = half_m * w * dv * dv;
        }
    }
    const double shift = target.u_par - anchor;
    const Vec4 b = {target.n, target.n * target.u_par, target.n * target.t_perp,
                    target.n * target.t_par + half_m * target.n * shift * shift};

    for (int k = 0; k < 4; ++k) {
        double scale = 0.0;
        for (double v : cs.rows[k]) scale = std::max(scale, std::abs(v));
        if (!(scale > 0.0)) scale = 1.0;
        cs.row_scales[k] = scale;
        for (double& v : cs.rows[k]) v /= scale;
        cs.b[k] = b[k] / scale;
    }
    return cs;
}

void NewtonOptions::validate() const {
    if (!(step > 0.0 && step <= 1.0)) throw InvalidArgument("newton: step must lie in (0, 1]");
    if (max_iter < 1) throw InvalidArgument("newton: max_iter must be >= 1");
    if (!(tolerance > 0.0)) throw InvalidArgument("newton: tolerance must be positive");
    if (!(floor_factor >= 0.0)) throw InvalidArgument("newton: floor factor must be >= 0");
}

std::vector<double> positivity_floor(std::span<const double> f_hat, double floor_factor) {
    double peak = -std::numeric_limits<double>::infinity();
    for (double v : f_hat) {
        if (!std::isfinite(v)) return {};
        peak = std::max(peak, v);
    }
    if (!(peak > 0.0)) return {};
    const double floor = floor_factor * peak;
    std::vector<double> out(f_hat.size());
    for (std::size_t j = 0; j < f_hat.size(); ++j) out[j] = std::max(f_hat[j], floor);
    return out;
}

Vec4 dual_gradient(std::span<const double> f_floor, const Vec4& lambda, const ConstraintSystem& cs) {
    std::vector<double> f(cs.dim);
    primal(f_floor, lambda, cs, f);
    return constraint_residual(f, cs);
}

Mat4 dual_hessian(std::span<const double> f_floor, const Vec4& lambda, const ConstraintSystem& cs) {
    std::vector<double> f(cs.dim);
    primal(f_floor, lambda, cs, f);
    Mat4 h{};
    for (int a = 0; a < 4; ++a)
        for (int c = a; c < 4; ++c) {
            CompensatedSum s;
            for (std::size_t j = 0; j < cs.dim; ++j) s.add(cs.rows[a][j] * cs.rows[c][j] * f[j]);
            h[a][c] = h[c][a] = -s.value();
        }
    return h;
}

std::optional<Vec4> solve4(Mat4 m, const Vec4& rhs) {
    double scale = 0.0, trace = 0.0;
    for (int r = 0; r < 4; ++r) {
        trace += m[r][r];
        for (int c = 0; c < 4; ++c) scale = std::max(scale, std::abs(m[r][c]));
    }
    if (!(scale > 0.0) || !std::isfinite(scale)) return std::nullopt;
    const double tiny = 1e-15 * scale;
    if (auto x = solve_pivoted(m, rhs, tiny)) return x;
    // Tikhonov jitter along the sign of the diagonal keeps definiteness.
    const double jitter = 1e-14 * std::abs(trace);
    for (int r = 0; r < 4; ++r) m[r][r] += (trace < 0.0 ? -jitter : jitter);
    return solve_pivoted(m, rhs, tiny);
}

ProjectionResult newton_project(std::span<const double> f_hat, const ConstraintSystem& cs, const NewtonOptions& opts) {
    opts.validate();
    if (f_hat.size() != cs.dim) throw ShapeMismatch("newton_project: image size does not match constraints");

    ProjectionResult res;
    const double b_norm = inf_norm(cs.b);
    if (!(cs.b[0] > 0.0) || !(b_norm > 0.0)) return res;
    if (opts.distance == Distance::l2) return project_l2(f_hat, cs, opts);

    const auto f_floor = positivity_floor(f_hat, opts.floor_factor);
    if (f_floor.empty()) return res;

    Vec4 lambda{};
    std::vector<double> f(cs.dim);
    for (int it = 0;; ++it) {
        res.clamped = primal(f_floor, lambda, cs, f);
        const Vec4 g = constraint_residual(f, cs);
        res.residual = inf_norm(g) / b_norm;
        res.iterations = it;
        if (!std::isfinite(res.residual)) return res;
        if (res.residual <= opts.tolerance) {
            res.status = res.clamped ? ProjectionStatus::max_iter : ProjectionStatus::converged;
            break;
        }
        if (it == opts.max_iter) {
            res.status = ProjectionStatus::max_iter;
            break;
        }
        // The Hessian only steers the step, so plain sums are accurate enough.
        Mat4 h{};
        for (std::size_t j = 0; j < cs.dim; ++j) {
            const double a[4] = {cs.rows[0][j], cs.rows[1][j], cs.rows[2][j], cs.rows[3][j]};
            for (int r = 0; r < 4; ++r) {
                const double ar = a[r] * f[j];
                for (int c = r; c < 4; ++c) h[r][c] -= ar * a[c];
            }
        }
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < r; ++c) h[r][c] = h[c][r];
        const auto d = solve4(h, g);
        if (!d) {
            res.status = ProjectionStatus::degenerate;
            return res;
        }
        for (int k = 0; k < 4; ++k) lambda[k] -= opts.step * (*d)[k];
    }
    res.lambda = lambda;
    res.f = std::move(f);
    return res;
}

std::vector<double> apply_lambda(std::span<const double> f_hat, const Vec4& lambda, const ConstraintSystem& cs,
                                 const NewtonOptions& opts) {
    if (f_hat.size() != cs.dim) throw ShapeMismatch("apply_lambda: image size does not match constraints");
    std::vector<double> f(cs.dim);
    if (opts.distance == Distance::l2) {
        for (std::size_t j = 0; j < cs.dim; ++j) f[j] = f_hat[j] - exponent(cs, lambda, j);
        return f;
    }
    const auto f_floor = positivity_floor(f_hat, opts.floor_factor);
    if (f_floor.empty()) return {f_hat.begin(), f_hat.end()};
    primal(f_floor, lambda, cs, f);
    return f;
}

LambdaPrecision parse_lambda_precision(std::string_view s) {
    if (s == "f32" || s == "float" || s == "4") return LambdaPrecision::f32;
    if (s == "f64" || s == "double" || s == "8") return LambdaPrecision::f64;
    throw InvalidArgument("unknown lambda precision '" + std::string(s) + "'");
}

std::string to_string(LambdaPrecision p) { return p == LambdaPrecision::f32 ? "f32" : "f64"; }

double round_to(double v, LambdaPrecision p) {
    return p == LambdaPrecision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

LambdaSet cast_lambda(const LambdaSet& set, LambdaPrecision precision) {
    LambdaSet out;
    out.precision = precision;
    out.entries.reserve(set.entries.size());
    for (const auto& e : set.entries) {
        LambdaEntry c = e;
        bool finite = true;
        for (double& l : c.lambda) {
            l = round_to(l, precision);
            finite = finite && std::isfinite(l);
        }
        c.qoi = {round_to(e.qoi.n, precision), round_to(e.qoi.u_par, precision), round_to(e.qoi.t_perp, precision),
                 round_to(e.qoi.t_par, precision)};
        for (double q : c.qoi.as_array()) finite = finite && std::isfinite(q);
        if (!finite) {
            c.lambda = {};
            c.overflow = true;
            c.converged = false;
        }
        out.entries.push_back(c);
    }
    return out;
}

Bytes serialize_lambdas(const LambdaSet& set) {
    Bytes out;
    ByteWriter w(out);
    auto put = [&](double v) {
        if (set.precision == LambdaPrecision::f32)
            w.f32(static_cast<float>(v));
        else
            w.f64(v);
    };
    for (const auto& e : set.entries) {
        for (double l : e.lambda) put(l);
        for (double q : e.qoi.as_array()) put(q);
    }
    return out;
}

LambdaSet deserialize_lambdas(std::span<const std::uint8_t> bytes, std::size_t n_images, LambdaPrecision precision) {
    const std::size_t width = static_cast<std::size_t>(precision);
    if (bytes.size() != n_images * 8 * width)
        throw FormatError("lambda section has " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(n_images * 8 * width));
    ByteReader r(bytes);
    auto get = [&] { return precision == LambdaPrecision::f32 ? static_cast<double>(r.f32()) : r.f64(); };
    LambdaSet set;
    set.precision = precision;
    set.entries.resize(n_images);
    for (auto& e : set.entries) {
        for (double& l : e.lambda) l = get();
        e.qoi.n = get();
        e.qoi.u_par = get();
        e.qoi.t_perp = get();
        e.qoi.t_par = get();
        e.converged = true;
    }
    return set;
}

}  // namespace mlk
