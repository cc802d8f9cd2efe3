#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "spectral/fft.hpp"

namespace spectral {

// Normalized radial frequency in [0, 1]: distance of bin k to DC on the
// circle, relative to the highest representable frequency.
inline double rho_1d(int k, int n) {
    if (n <= 0) throw std::invalid_argument("empty signal");
    if (k < 0 || k >= n) throw std::out_of_range("frequency index out of range");
    const int dist = std::min(k, n - k);
    return static_cast<double>(dist) / static_cast<double>(std::max(1, n / 2));
}

// 2D radial frequency in [0, sqrt(2)]: Euclidean combination of the per-axis
// normalized frequencies.
inline double rho_2d(int u, int v, int height, int width) {
    const double a = rho_1d(u, height);
    const double b = rho_1d(v, width);
    return std::sqrt(a * a + b * b);
}

enum class BinKind { Real, Complex };

// Canonical real coordinates for a Hermitian half spectrum / half plane:
// DC first, ascending frequency, real part before imaginary part.  Entries
// list the free bins; mirrors list conjugate-determined bins in boundary
// columns (destination, source) — those carry no coordinates of their own.
struct CoordLayout {
    bool two_dim = false;
    int n = 0;                    // 1D length
    int height = 0, width = 0;    // 2D grid
    int mask_bins = -1;           // 1D: keep bins k < mask_bins; -1 keeps all
    double radial_cutoff = -1.0;  // 2D: keep bins with rho <= cutoff; <0 keeps all

    struct Entry {
        int bin = 0;      // flat index into the half storage
        int offset = 0;   // first coordinate index for this bin
        BinKind kind = BinKind::Complex;
    };
    std::vector<Entry> entries;
    std::vector<std::pair<int, int>> mirrors;
    int d_eff = 0;

    int half_width() const { return width / 2 + 1; }
    std::pair<int, int> bin_uv(int bin) const { return {bin / half_width(), bin % half_width()}; }
};

inline CoordLayout layout_circulant(int n, int mask_bins = -1) {
    if (n <= 0) throw std::invalid_argument("empty signal");
    const int k_half = n / 2 + 1;
    if (mask_bins == 0 || mask_bins < -1 || mask_bins > k_half)
        throw std::invalid_argument("mask out of range");
    CoordLayout layout;
    layout.n = n;
    layout.mask_bins = mask_bins;
    const int keep = mask_bins < 0 ? k_half : mask_bins;
    int offset = 0;
    for (int k = 0; k < keep; ++k) {
        CoordLayout::Entry e;
        e.bin = k;
        e.offset = offset;
        e.kind = is_self_conjugate_1d(k, n) ? BinKind::Real : BinKind::Complex;
        offset += e.kind == BinKind::Real ? 1 : 2;
        layout.entries.push_back(e);
    }
    layout.d_eff = offset;
    return layout;
}

inline CoordLayout layout_bccb(int height, int width, double radial_cutoff = -1.0) {
    if (height <= 0 || width <= 0) throw std::invalid_argument("empty signal");
    CoordLayout layout;
    layout.two_dim = true;
    layout.height = height;
    layout.width = width;
    layout.radial_cutoff = radial_cutoff;
    const int half_w = width / 2 + 1;
    int offset = 0;
    for (int u = 0; u < height; ++u) {
        for (int v = 0; v < half_w; ++v) {
            if (radial_cutoff >= 0.0 && rho_2d(u, v, height, width) > radial_cutoff) continue;
            const int bin = u * half_w + v;
            const bool boundary = (2 * v) % width == 0;
            if (boundary && u > height - u) {
                layout.mirrors.emplace_back(bin, (height - u) * half_w + v);
                continue;
            }
            CoordLayout::Entry e;
            e.bin = bin;
            e.offset = offset;
            e.kind = is_self_conjugate_2d(u, v, height, width) ? BinKind::Real : BinKind::Complex;
            offset += e.kind == BinKind::Real ? 1 : 2;
            layout.entries.push_back(e);
        }
    }
    layout.d_eff = offset;
    return layout;
}

// Checks that the entry list is consistent with the declared mask; layouts
// built by the constructors above always pass.
inline void validate_layout(const CoordLayout& layout) {
    for (const auto& e : layout.entries) {
        if (!layout.two_dim) {
            if (e.bin < 0 || e.bin >= layout.n / 2 + 1 ||
                (layout.mask_bins >= 0 && e.bin >= layout.mask_bins))
                throw std::invalid_argument("masked bin present in layout");
        } else {
            const auto [u, v] = layout.bin_uv(e.bin);
            if (u < 0 || u >= layout.height || v < 0 || v >= layout.half_width() ||
                (layout.radial_cutoff >= 0.0 &&
                 rho_2d(u, v, layout.height, layout.width) > layout.radial_cutoff))
                throw std::invalid_argument("masked bin present in layout");
        }
    }
}

inline std::vector<double> pack_coords(const HalfSpectrum1D& h, const CoordLayout& layout) {
    if (layout.two_dim || h.n != layout.n || static_cast<int>(h.coeffs.size()) != h.k_half())
        throw std::invalid_argument("coordinate length mismatch");
    std::vector<double> a(layout.d_eff);
    for (const auto& e : layout.entries) {
        const cplx c = h.coeffs[e.bin];
        a[e.offset] = c.real();
        if (e.kind == BinKind::Complex) a[e.offset + 1] = c.imag();
    }
    return a;
}

inline std::vector<double> pack_coords(const HalfPlane2D& h, const CoordLayout& layout) {
    if (!layout.two_dim || h.height != layout.height || h.width != layout.width ||
        h.coeffs.size() != static_cast<std::size_t>(h.height) * h.half_width())
        throw std::invalid_argument("coordinate length mismatch");
    std::vector<double> a(layout.d_eff);
    for (const auto& e : layout.entries) {
        const cplx c = h.coeffs[e.bin];
        a[e.offset] = c.real();
        if (e.kind == BinKind::Complex) a[e.offset + 1] = c.imag();
    }
    return a;
}

inline HalfSpectrum1D unpack_circulant(const std::vector<double>& a, const CoordLayout& layout) {
    if (layout.two_dim || static_cast<int>(a.size()) != layout.d_eff)
        throw std::invalid_argument("coordinate length mismatch");
    HalfSpectrum1D h;
    h.n = layout.n;
    h.coeffs.assign(h.k_half(), cplx(0.0, 0.0));
    for (const auto& e : layout.entries) {
        const double re = a[e.offset];
        const double im = e.kind == BinKind::Complex ? a[e.offset + 1] : 0.0;
        h.coeffs[e.bin] = cplx(re, im);
    }
    return h;
}

inline HalfPlane2D unpack_bccb(const std::vector<double>& a, const CoordLayout& layout) {
    if (!layout.two_dim || static_cast<int>(a.size()) != layout.d_eff)
        throw std::invalid_argument("coordinate length mismatch");
    HalfPlane2D h;
    h.height = layout.height;
    h.width = layout.width;
    h.coeffs.assign(static_cast<std::size_t>(h.height) * h.half_width(), cplx(0.0, 0.0));
    for (const auto& e : layout.entries) {
        const double re = a[e.offset];
        const double im = e.kind == BinKind::Complex ? a[e.offset + 1] : 0.0;
        h.coeffs[e.bin] = cplx(re, im);
    }
    for (const auto& [dst, src] : layout.mirrors) h.coeffs[dst] = std::conj(h.coeffs[src]);
    return h;
}

inline int effective_dim(const CoordLayout& layout) { return layout.d_eff; }

}  // namespace spectral
