#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance run. None of these call into the library's numerical kernels.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "mlk/lagrange.hpp"

namespace oracle {

/// NRMSE in extended precision.
inline long double nrmse(std::span<const double> u, std::span<const double> f) {
    long double sq = 0.0L, lo = u[0], hi = u[0];
    for (std::size_t i = 0; i < u.size(); ++i) {
        const long double d = static_cast<long double>(u[i]) - static_cast<long double>(f[i]);
        sq += d * d;
        lo = std::min<long double>(lo, u[i]);
        hi = std::max<long double>(hi, u[i]);
    }
    return std::sqrt(sq / static_cast<long double>(u.size())) / (hi - lo);
}

/// Dual of the KL projection onto {f : A f = b}.
struct KlDual {
    std::span<const double> f;
    const mlk::ConstraintSystem& cs;

    double expo(const mlk::Vec4& l, std::size_t j) const {
        double s = 0.0;
        for (int k = 0; k < 4; ++k) s += l[k] * cs.rows[k][j];
        return s;
    }
    double value(const mlk::Vec4& l) const {
        double q = 0.0;
        for (std::size_t j = 0; j < cs.dim; ++j) q += f[j] - f[j] * std::exp(-expo(l, j));
        for (int k = 0; k < 4; ++k) q -= l[k] * cs.b[k];
        return q;
    }
    mlk::Vec4 grad(const mlk::Vec4& l) const {
        mlk::Vec4 g{};
        for (std::size_t j = 0; j < cs.dim; ++j) {
            const double fj = f[j] * std::exp(-expo(l, j));
            for (int k = 0; k < 4; ++k) g[k] += cs.rows[k][j] * fj;
        }
        for (int k = 0; k < 4; ++k) g[k] -= cs.b[k];
        return g;
    }
};

/// Damped Newton ascent with a finite-difference Hessian and a
/// partial-pivot long double solve.
inline mlk::Vec4 dual_ascent(const KlDual& d) {
    mlk::Vec4 l{};
    for (int it = 0; it < 500; ++it) {
        const mlk::Vec4 g = d.grad(l);
        double gg = 0.0;
        for (double v : g) gg += v * v;
        if (std::sqrt(gg) < 1e-13) break;

        long double a[4][5];
        const double h = 1e-6;
        for (int c = 0; c < 4; ++c) {
            mlk::Vec4 up = l, down = l;
            up[c] += h;
            down[c] -= h;
            const auto gu = d.grad(up), gd = d.grad(down);
            for (int r = 0; r < 4; ++r) a[r][c] = -(static_cast<long double>(gu[r]) - gd[r]) / (2.0L * h);
        }
        for (int r = 0; r < 4; ++r) {
            a[r][r] += 1e-14L;
            a[r][4] = g[r];
        }
        for (int c = 0; c < 4; ++c) {
            int piv = c;
            for (int r = c + 1; r < 4; ++r)
                if (std::fabs(a[r][c]) > std::fabs(a[piv][c])) piv = r;
            for (int k = 0; k < 5; ++k) std::swap(a[c][k], a[piv][k]);
            for (int r = c + 1; r < 4; ++r) {
                const long double m = a[r][c] / a[c][c];
                for (int k = c; k < 5; ++k) a[r][k] -= m * a[c][k];
            }
        }
        long double x[4];
        for (int r = 3; r >= 0; --r) {
            long double s = a[r][4];
            for (int k = r + 1; k < 4; ++k) s -= a[r][k] * x[k];
            x[r] = s / a[r][r];
        }

        const double q0 = d.value(l);
        double t = 1.0;
        mlk::Vec4 n;
        for (;;) {
            for (int k = 0; k < 4; ++k) n[k] = l[k] + t * static_cast<double>(x[k]);
            if (d.value(n) >= q0 || t < 1e-12) break;
            t *= 0.5;
        }
        l = n;
    }
    return l;
}

/// Central finite difference of `loss` with respect to entry i of w.
template <class Loss>
double central_difference(Loss&& loss, std::vector<double> w, std::size_t i, double h) {
    const double w0 = w[i];
    w[i] = w0 + h;
    const double up = loss(w);
    w[i] = w0 - h;
    const double down = loss(w);
    return (up - down) / (2.0 * h);
}

}  // namespace oracle
