#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

namespace spectral {

using cplx = std::complex<double>;

inline constexpr double kPi = 3.141592653589793238462643383279502884;

// Convention used throughout: forward transforms are unnormalized sums
// sum_t x_t e^{-2pi i k t / n}; inverse transforms carry the 1/n factor.

// Nonredundant half of the length-n real DFT: bins 0..floor(n/2).
struct HalfSpectrum1D {
    std::vector<cplx> coeffs;
    int n = 0;

    int k_half() const { return n / 2 + 1; }
};

// Nonredundant half-plane of the H x W real DFT: all rows, columns
// 0..floor(W/2), row-major.  Boundary columns (v = 0, and v = W/2 for even W)
// still contain conjugate-mirrored rows; coordinate packing skips those.
struct HalfPlane2D {
    std::vector<cplx> coeffs;
    int height = 0;
    int width = 0;

    int half_width() const { return width / 2 + 1; }
    cplx& at(int u, int v) { return coeffs[static_cast<std::size_t>(u) * half_width() + v]; }
    const cplx& at(int u, int v) const { return coeffs[static_cast<std::size_t>(u) * half_width() + v]; }
};

inline bool is_self_conjugate_1d(int k, int n) { return (2 * k) % n == 0; }

inline bool is_self_conjugate_2d(int u, int v, int height, int width) {
    return (2 * u) % height == 0 && (2 * v) % width == 0;
}

namespace detail {

struct FftPlan {
    int n = 0;
    bool pow2 = false;
    std::vector<int> bitrev;     // pow2 only
    std::vector<cplx> roots;     // e^{-2pi i j / n}, j < n/2 (forward sign)
    // Bluestein data for non-pow2 lengths.
    int m = 0;                   // convolution length, power of two >= 2n-1
    std::vector<cplx> chirp;     // e^{-i pi j^2 / n}, j < n
    std::vector<cplx> bfft;      // forward fft of the wrapped conjugate chirp
    std::shared_ptr<const FftPlan> sub;
};

inline std::shared_ptr<const FftPlan> make_pow2_plan(int n) {
    auto plan = std::make_shared<FftPlan>();
    plan->n = n;
    plan->pow2 = true;
    plan->bitrev.assign(n, 0);
    int log2n = 0;
    while ((1 << log2n) < n) ++log2n;
    for (int i = 0; i < n; ++i) {
        int r = 0;
        for (int b = 0; b < log2n; ++b)
            if (i & (1 << b)) r |= 1 << (log2n - 1 - b);
        plan->bitrev[i] = r;
    }
    plan->roots.resize(n / 2);
    for (int j = 0; j < n / 2; ++j) {
        const double ang = -2.0 * kPi * j / n;
        plan->roots[j] = cplx(std::cos(ang), std::sin(ang));
    }
    return plan;
}

inline void fft_pow2_inplace(cplx* a, bool inverse, const FftPlan& plan) {
    const int n = plan.n;
    for (int i = 0; i < n; ++i)
        if (i < plan.bitrev[i]) std::swap(a[i], a[plan.bitrev[i]]);
    for (int len = 2; len <= n; len <<= 1) {
        const int half = len / 2;
        const int step = n / len;
        for (int i = 0; i < n; i += len) {
            for (int j = 0; j < half; ++j) {
                cplx w = plan.roots[j * step];
                if (inverse) w = std::conj(w);
                const cplx u = a[i + j];
                const cplx v = a[i + j + half] * w;
                a[i + j] = u + v;
                a[i + j + half] = u - v;
            }
        }
    }
    if (inverse) {
        const double inv = 1.0 / n;
        for (int i = 0; i < n; ++i) a[i] *= inv;
    }
}

inline std::shared_ptr<const FftPlan> plan_for(int n);

inline std::shared_ptr<const FftPlan> make_bluestein_plan(int n) {
    auto plan = std::make_shared<FftPlan>();
    plan->n = n;
    plan->pow2 = false;
    int m = 1;
    while (m < 2 * n - 1) m <<= 1;
    plan->m = m;
    plan->sub = plan_for(m);
    plan->chirp.resize(n);
    const std::int64_t period = 2 * static_cast<std::int64_t>(n);
    for (int j = 0; j < n; ++j) {
        const std::int64_t r = (static_cast<std::int64_t>(j) * j) % period;
        const double ang = -kPi * static_cast<double>(r) / n;
        plan->chirp[j] = cplx(std::cos(ang), std::sin(ang));
    }
    std::vector<cplx> b(m, cplx(0.0, 0.0));
    for (int j = 0; j < n; ++j) {
        const cplx c = std::conj(plan->chirp[j]);
        b[j] = c;
        if (j > 0) b[m - j] = c;
    }
    fft_pow2_inplace(b.data(), false, *plan->sub);
    plan->bfft = std::move(b);
    return plan;
}

inline std::shared_ptr<const FftPlan> plan_for(int n) {
    static std::unordered_map<int, std::shared_ptr<const FftPlan>> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    const bool pow2 = (n & (n - 1)) == 0;
    auto plan = pow2 ? make_pow2_plan(n) : make_bluestein_plan(n);
    cache.emplace(n, plan);
    return plan;
}

inline void fft_forward_inplace(cplx* a, const FftPlan& plan) {
    if (plan.pow2) {
        fft_pow2_inplace(a, false, plan);
        return;
    }
    const int n = plan.n;
    std::vector<cplx> t(plan.m, cplx(0.0, 0.0));
    for (int j = 0; j < n; ++j) t[j] = a[j] * plan.chirp[j];
    fft_pow2_inplace(t.data(), false, *plan.sub);
    for (int i = 0; i < plan.m; ++i) t[i] *= plan.bfft[i];
    fft_pow2_inplace(t.data(), true, *plan.sub);
    for (int k = 0; k < n; ++k) a[k] = t[k] * plan.chirp[k];
}

inline void fft_inplace(std::vector<cplx>& a, bool inverse) {
    const int n = static_cast<int>(a.size());
    if (n == 0) throw std::invalid_argument("empty signal");
    if (n == 1) return;
    auto plan = plan_for(n);
    if (!inverse) {
        fft_forward_inplace(a.data(), *plan);
        return;
    }
    if (plan->pow2) {
        fft_pow2_inplace(a.data(), true, *plan);
        return;
    }
    for (auto& z : a) z = std::conj(z);
    fft_forward_inplace(a.data(), *plan);
    const double inv = 1.0 / n;
    for (auto& z : a) z = std::conj(z) * inv;
}

}  // namespace detail

inline std::vector<cplx> fft(std::vector<cplx> a) {
    detail::fft_inplace(a, false);
    return a;
}

inline std::vector<cplx> ifft(std::vector<cplx> a) {
    detail::fft_inplace(a, true);
    return a;
}

inline HalfSpectrum1D rfft_1d(const std::vector<double>& x) {
    const int n = static_cast<int>(x.size());
    if (n == 0) throw std::invalid_argument("empty signal");
    std::vector<cplx> a(x.begin(), x.end());
    detail::fft_inplace(a, false);
    HalfSpectrum1D h;
    h.n = n;
    h.coeffs.assign(a.begin(), a.begin() + (n / 2 + 1));
    // Self-conjugate bins are sums of reals; recompute them directly so they
    // are exactly real rather than real up to rounding.
    double dc = 0.0;
    for (double v : x) dc += v;
    h.coeffs[0] = cplx(dc, 0.0);
    if (n % 2 == 0 && n > 1) {
        double nyq = 0.0;
        for (int t = 0; t < n; ++t) nyq += (t % 2 == 0) ? x[t] : -x[t];
        h.coeffs[n / 2] = cplx(nyq, 0.0);
    }
    return h;
}

inline void validate_half_spectrum(const HalfSpectrum1D& h) {
    if (h.n <= 0) throw std::invalid_argument("empty signal");
    if (static_cast<int>(h.coeffs.size()) != h.k_half())
        throw std::invalid_argument("coordinate length mismatch");
    for (int k = 0; k < h.k_half(); ++k)
        if (is_self_conjugate_1d(k, h.n) && h.coeffs[k].imag() != 0.0)
            throw std::invalid_argument("non-real self-conjugate bin");
}

// Expands the half spectrum to the full length-n spectrum using conjugate
// symmetry: full[n-k] = conj(full[k]).
inline std::vector<cplx> hermitian_complete_1d(const HalfSpectrum1D& h) {
    validate_half_spectrum(h);
    const int n = h.n;
    std::vector<cplx> full(n);
    for (int k = 0; k < h.k_half(); ++k) full[k] = h.coeffs[k];
    for (int k = h.k_half(); k < n; ++k) full[k] = std::conj(h.coeffs[n - k]);
    return full;
}

inline std::vector<double> irfft_1d(const HalfSpectrum1D& h) {
    std::vector<cplx> full = hermitian_complete_1d(h);
    detail::fft_inplace(full, true);
    std::vector<double> out(h.n);
    for (int t = 0; t < h.n; ++t) out[t] = full[t].real();
    return out;
}

namespace detail {

// Full 2D transform, rows then columns, on a row-major H x W grid.
inline void fft2_inplace(std::vector<cplx>& grid, int height, int width, bool inverse) {
    if (height <= 0 || width <= 0) throw std::invalid_argument("empty signal");
    std::vector<cplx> row(width), col(height);
    for (int u = 0; u < height; ++u) {
        cplx* base = grid.data() + static_cast<std::size_t>(u) * width;
        row.assign(base, base + width);
        fft_inplace(row, inverse);
        for (int v = 0; v < width; ++v) base[v] = row[v];
    }
    for (int v = 0; v < width; ++v) {
        for (int u = 0; u < height; ++u) col[u] = grid[static_cast<std::size_t>(u) * width + v];
        fft_inplace(col, inverse);
        for (int u = 0; u < height; ++u) grid[static_cast<std::size_t>(u) * width + v] = col[u];
    }
}

}  // namespace detail

inline std::vector<cplx> fft2_full(const std::vector<double>& grid, int height, int width) {
    if (height <= 0 || width <= 0 || grid.size() != static_cast<std::size_t>(height) * width)
        throw std::invalid_argument(grid.empty() ? "empty signal" : "coordinate length mismatch");
    std::vector<cplx> a(grid.begin(), grid.end());
    detail::fft2_inplace(a, height, width, false);
    return a;
}

inline HalfPlane2D rfft_2d(const std::vector<double>& grid, int height, int width) {
    std::vector<cplx> full = fft2_full(grid, height, width);
    HalfPlane2D h;
    h.height = height;
    h.width = width;
    h.coeffs.assign(static_cast<std::size_t>(height) * h.half_width(), cplx(0.0, 0.0));
    for (int u = 0; u < height; ++u)
        for (int v = 0; v < h.half_width(); ++v)
            h.at(u, v) = full[static_cast<std::size_t>(u) * width + v];
    // Enforce exact conjugate symmetry inside boundary columns and exact
    // realness of self-conjugate bins; both hold analytically for real input.
    for (int v = 0; v < h.half_width(); ++v) {
        if ((2 * v) % width != 0) continue;
        for (int u = 1; u < height - u; ++u) {
            const cplx avg = 0.5 * (h.at(u, v) + std::conj(h.at(height - u, v)));
            h.at(u, v) = avg;
            h.at(height - u, v) = std::conj(avg);
        }
        for (int u = 0; u < height; ++u)
            if (is_self_conjugate_2d(u, v, height, width))
                h.at(u, v) = cplx(h.at(u, v).real(), 0.0);
    }
    return h;
}

inline void validate_half_plane(const HalfPlane2D& h) {
    if (h.height <= 0 || h.width <= 0) throw std::invalid_argument("empty signal");
    if (h.coeffs.size() != static_cast<std::size_t>(h.height) * h.half_width())
        throw std::invalid_argument("coordinate length mismatch");
    for (int u = 0; u < h.height; ++u)
        for (int v = 0; v < h.half_width(); ++v)
            if (is_self_conjugate_2d(u, v, h.height, h.width) && h.at(u, v).imag() != 0.0)
                throw std::invalid_argument("non-real self-conjugate bin");
    for (int v = 0; v < h.half_width(); ++v) {
        if ((2 * v) % h.width != 0) continue;
        for (int u = 1; u < h.height - u; ++u)
            if (h.at(u, v) != std::conj(h.at(h.height - u, v)))
                throw std::invalid_argument("inconsistent conjugate bins");
    }
}

// Expands a half-plane to the full H x W spectrum: columns past W/2 come from
// full[u][v] = conj(full[(H-u)%H][W-v]).  Rows beyond H/2 inside boundary
// columns are taken as stored (they mirror rows below H/2 by construction).
inline std::vector<cplx> hermitian_complete_2d(const HalfPlane2D& h) {
    validate_half_plane(h);
    const int height = h.height, width = h.width;
    std::vector<cplx> full(static_cast<std::size_t>(height) * width);
    for (int u = 0; u < height; ++u)
        for (int v = 0; v < h.half_width(); ++v)
            full[static_cast<std::size_t>(u) * width + v] = h.at(u, v);
    for (int u = 0; u < height; ++u)
        for (int v = h.half_width(); v < width; ++v)
            full[static_cast<std::size_t>(u) * width + v] =
                std::conj(full[static_cast<std::size_t>((height - u) % height) * width + (width - v)]);
    return full;
}

inline std::vector<double> irfft_2d(const HalfPlane2D& h) {
    std::vector<cplx> full = hermitian_complete_2d(h);
    detail::fft2_inplace(full, h.height, h.width, true);
    std::vector<double> out(static_cast<std::size_t>(h.height) * h.width);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = full[i].real();
    return out;
}

}  // namespace spectral
