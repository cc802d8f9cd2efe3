#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace spectral {

inline double vec_norm2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// Eigenvalues of a real symmetric matrix via cyclic Jacobi rotations.
// Row-major input; the input copy is destroyed.  Intended for small/medium
// matrices where an exact answer is wanted without an external solver.
inline std::vector<double> sym_eigvals(std::vector<double> a, int n) {
    auto at = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };
    double norm = 0.0;
    for (double x : a) norm += x * x;
    norm = std::sqrt(norm);
    const double stop = 1e-15 * (norm > 0.0 ? norm : 1.0);
    for (int sweep = 0; sweep < 128; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += 2.0 * at(i, j) * at(i, j);
        if (std::sqrt(off) <= stop) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = at(p, q);
                if (apq == 0.0) continue;
                const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = at(k, p), akq = at(k, q);
                    at(k, p) = c * akp - s * akq;
                    at(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = at(p, k), aqk = at(q, k);
                    at(p, k) = c * apk - s * aqk;
                    at(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> ev(n);
    for (int i = 0; i < n; ++i) ev[i] = at(i, i);
    return ev;
}

inline double sym_eig_max(std::vector<double> a, int n) {
    double best = 0.0;
    bool first = true;
    for (double ev : sym_eigvals(std::move(a), n)) {
        if (first || ev > best) best = ev;
        first = false;
    }
    return best;
}

// Largest eigenvalue of a complex Hermitian matrix through the real
// embedding [[Re, -Im], [Im, Re]], whose spectrum repeats each eigenvalue
// twice without changing the extremes.
inline double herm_eig_max(const std::vector<std::complex<double>>& a, int n) {
    std::vector<double> e(static_cast<std::size_t>(2 * n) * (2 * n), 0.0);
    auto put = [&](int i, int j, double v) { e[static_cast<std::size_t>(i) * 2 * n + j] = v; };
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const auto z = a[static_cast<std::size_t>(i) * n + j];
            put(i, j, z.real());
            put(i, n + j, -z.imag());
            put(n + i, j, z.imag());
            put(n + i, n + j, z.real());
        }
    return sym_eig_max(std::move(e), 2 * n);
}

// Largest singular value by power iteration on M^T M with a fixed start
// vector; a lower-bound estimate when it has not fully converged.
inline double operator_norm_power(const std::vector<double>& m, int rows, int cols,
                                  int iters = 50, double tol = 1e-9) {
    if (rows <= 0 || cols <= 0 || m.size() != static_cast<std::size_t>(rows) * cols)
        throw std::invalid_argument("coordinate length mismatch");
    std::vector<double> v(cols), u(rows);
    for (int j = 0; j < cols; ++j) v[j] = 1.0 + 1e-3 * j;
    double nv = vec_norm2(v);
    for (auto& x : v) x /= nv;
    double sigma = 0.0;
    for (int it = 0; it < iters; ++it) {
        for (int i = 0; i < rows; ++i) {
            double acc = 0.0;
            const double* row = m.data() + static_cast<std::size_t>(i) * cols;
            for (int j = 0; j < cols; ++j) acc += row[j] * v[j];
            u[i] = acc;
        }
        const double s = vec_norm2(u);
        if (s == 0.0) return 0.0;
        for (int j = 0; j < cols; ++j) {
            double acc = 0.0;
            for (int i = 0; i < rows; ++i) acc += m[static_cast<std::size_t>(i) * cols + j] * u[i];
            v[j] = acc;
        }
        const double nw = vec_norm2(v);
        for (auto& x : v) x /= nw;
        if (std::abs(s - sigma) <= tol * std::max(1.0, s)) return s;
        sigma = s;
    }
    return sigma;
}

// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
inline std::vector<double> cholesky(const std::vector<double>& a, int n) {
    std::vector<double> l(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a[static_cast<std::size_t>(i) * n + j];
            for (int k = 0; k < j; ++k)
                s -= l[static_cast<std::size_t>(i) * n + k] * l[static_cast<std::size_t>(j) * n + k];
            if (i == j) {
                if (s <= 0.0 || !std::isfinite(s))
                    throw std::runtime_error("matrix not positive definite");
                l[static_cast<std::size_t>(i) * n + i] = std::sqrt(s);
            } else {
                l[static_cast<std::size_t>(i) * n + j] = s / l[static_cast<std::size_t>(j) * n + j];
            }
        }
    }
    return l;
}

inline double logdet_from_cholesky(const std::vector<double>& l, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::log(l[static_cast<std::size_t>(i) * n + i]);
    return 2.0 * s;
}

// Solves A x = b given the Cholesky factor of A.
inline std::vector<double> cholesky_solve(const std::vector<double>& l, int n, std::vector<double> b) {
    for (int i = 0; i < n; ++i) {
        double s = b[i];
        for (int k = 0; k < i; ++k) s -= l[static_cast<std::size_t>(i) * n + k] * b[k];
        b[i] = s / l[static_cast<std::size_t>(i) * n + i];
    }
    for (int i = n - 1; i >= 0; --i) {
        double s = b[i];
        for (int k = i + 1; k < n; ++k) s -= l[static_cast<std::size_t>(k) * n + i] * b[k];
        b[i] = s / l[static_cast<std::size_t>(i) * n + i];
    }
    return b;
}

inline std::vector<double> cholesky_inverse(const std::vector<double>& l, int n) {
    std::vector<double> inv(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<double> e(n, 0.0);
    for (int j = 0; j < n; ++j) {
        e.assign(n, 0.0);
        e[j] = 1.0;
        auto col = cholesky_solve(l, n, e);
        for (int i = 0; i < n; ++i) inv[static_cast<std::size_t>(i) * n + j] = col[i];
    }
    return inv;
}

}  // namespace spectral
