#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "spectral/fft.hpp"
#include "spectral/layout.hpp"
#include "spectral/rng.hpp"

namespace spectral {

// Radial power-law decay of per-bin variance: S(rho) = sigma0^2 / (1 + rho^alpha),
// with rho^0 == 1 by convention even at rho = 0, so alpha = 0 means a flat
// spectrum at sigma0^2 / 2.
struct SpectrumProfile {
    double sigma0_sq = 1.0;
    double alpha = 2.0;
};

inline double variance_profile(const SpectrumProfile& p, double rho) {
    if (rho < 0.0) throw std::invalid_argument("negative radial frequency");
    return p.sigma0_sq / (1.0 + std::pow(rho, p.alpha));
}

// d S / d alpha; zero at rho = 0 (S constant in alpha there for alpha > 0)
// and at rho = 1.
inline double variance_profile_dalpha(const SpectrumProfile& p, double rho) {
    if (rho <= 0.0) return 0.0;
    const double r = std::pow(rho, p.alpha);
    const double denom = 1.0 + r;
    return -p.sigma0_sq * r * std::log(rho) / (denom * denom);
}

inline std::vector<double> profile_grid_1d(const SpectrumProfile& p, int n) {
    std::vector<double> s(n);
    for (int k = 0; k < n; ++k) s[k] = variance_profile(p, rho_1d(k, n));
    return s;
}

inline std::vector<double> profile_grid_2d(const SpectrumProfile& p, int height, int width) {
    std::vector<double> s(static_cast<std::size_t>(height) * width);
    for (int u = 0; u < height; ++u)
        for (int v = 0; v < width; ++v)
            s[static_cast<std::size_t>(u) * width + v] = variance_profile(p, rho_2d(u, v, height, width));
    return s;
}

// Draws the nonredundant spectrum of a stationary real process: self-conjugate
// bins get N(0, S), free complex bins get independent N(0, S/2) real and
// imaginary parts.  Draw order is the canonical coordinate order (ascending
// frequency, real part first), one or two normals per bin.
inline HalfSpectrum1D sample_spectrum_1d(const SpectrumProfile& p, int n, RngStream& rng) {
    if (n <= 0) throw std::invalid_argument("empty signal");
    HalfSpectrum1D h;
    h.n = n;
    h.coeffs.assign(h.k_half(), cplx(0.0, 0.0));
    for (int k = 0; k < h.k_half(); ++k) {
        const double s = variance_profile(p, rho_1d(k, n));
        if (is_self_conjugate_1d(k, n)) {
            h.coeffs[k] = cplx(std::sqrt(s) * rng.normal(), 0.0);
        } else {
            const double half = std::sqrt(0.5 * s);
            const double re = half * rng.normal();
            const double im = half * rng.normal();
            h.coeffs[k] = cplx(re, im);
        }
    }
    return h;
}

inline HalfPlane2D sample_spectrum_2d(const SpectrumProfile& p, int height, int width, RngStream& rng) {
    const CoordLayout layout = layout_bccb(height, width);
    std::vector<double> a(layout.d_eff);
    for (const auto& e : layout.entries) {
        const auto [u, v] = layout.bin_uv(e.bin);
        const double s = variance_profile(p, rho_2d(u, v, height, width));
        if (e.kind == BinKind::Real) {
            a[e.offset] = std::sqrt(s) * rng.normal();
        } else {
            const double half = std::sqrt(0.5 * s);
            a[e.offset] = half * rng.normal();
            a[e.offset + 1] = half * rng.normal();
        }
    }
    return unpack_bccb(a, layout);
}

// Spatial filter with covariance k(tau) = (1/n) sum_k S(k) e^{2 pi i k tau / n}:
// the sqrt(n) factor converts the 1/n inverse transform to the scaling under
// which that identity holds.
inline std::vector<double> sample_filter_1d(const SpectrumProfile& p, int n, RngStream& rng) {
    HalfSpectrum1D h = sample_spectrum_1d(p, n, rng);
    std::vector<double> w = irfft_1d(h);
    const double scale = std::sqrt(static_cast<double>(n));
    for (auto& x : w) x *= scale;
    return w;
}

inline std::vector<double> sample_field_2d(const SpectrumProfile& p, int height, int width,
                                           RngStream& rng) {
    HalfPlane2D h = sample_spectrum_2d(p, height, width, rng);
    std::vector<double> w = irfft_2d(h);
    const double scale = std::sqrt(static_cast<double>(height) * width);
    for (auto& x : w) x *= scale;
    return w;
}

// Stationary covariance at every lag, k(tau) for tau = 0..n-1.
inline std::vector<double> prior_covariance_1d(const SpectrumProfile& p, int n) {
    std::vector<double> s = profile_grid_1d(p, n);
    std::vector<cplx> a(s.begin(), s.end());
    detail::fft_inplace(a, true);
    std::vector<double> k(n);
    for (int t = 0; t < n; ++t) k[t] = a[t].real();
    return k;
}

// Covariance over all 2D lags, row-major (tau_y, tau_x).
inline std::vector<double> prior_covariance_2d(const SpectrumProfile& p, int height, int width) {
    std::vector<double> s = profile_grid_2d(p, height, width);
    std::vector<cplx> a(s.begin(), s.end());
    detail::fft2_inplace(a, height, width, true);
    std::vector<double> k(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) k[i] = a[i].real();
    return k;
}

// Per-coordinate prior variances on the packed real coordinates: S for a
// self-conjugate bin, S/2 for each component of a free complex bin.
struct PriorDiag {
    std::vector<double> tau_sq;
};

// Radial frequency and component scale for every packed coordinate; the
// prior variance of coordinate i is scale[i] * sigma0^2 / (1 + rho[i]^alpha).
struct CoordProfile {
    std::vector<double> rho;
    std::vector<double> scale;
};

inline CoordProfile coord_profile(const CoordLayout& layout) {
    validate_layout(layout);
    CoordProfile cp;
    cp.rho.reserve(layout.d_eff);
    cp.scale.reserve(layout.d_eff);
    for (const auto& e : layout.entries) {
        double r;
        if (layout.two_dim) {
            const auto [u, v] = layout.bin_uv(e.bin);
            r = rho_2d(u, v, layout.height, layout.width);
        } else {
            r = rho_1d(e.bin, layout.n);
        }
        if (e.kind == BinKind::Real) {
            cp.rho.push_back(r);
            cp.scale.push_back(1.0);
        } else {
            cp.rho.push_back(r);
            cp.scale.push_back(0.5);
            cp.rho.push_back(r);
            cp.scale.push_back(0.5);
        }
    }
    return cp;
}

inline PriorDiag prior_variances(const SpectrumProfile& p, const CoordLayout& layout) {
    const CoordProfile cp = coord_profile(layout);
    PriorDiag d;
    d.tau_sq.resize(cp.rho.size());
    for (std::size_t i = 0; i < cp.rho.size(); ++i)
        d.tau_sq[i] = cp.scale[i] * variance_profile(p, cp.rho[i]);
    return d;
}

}  // namespace spectral
