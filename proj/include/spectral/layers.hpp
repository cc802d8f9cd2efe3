#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "spectral/fft.hpp"
#include "spectral/layout.hpp"

namespace spectral {

// Circular layer on length-n signals, parameterized directly by the
// nonredundant half spectrum of its transfer function.  Masked bins are held
// at exactly zero.  The spatial bias is a single shared scalar.
struct SpectralCirculant1D {
    HalfSpectrum1D h;
    int mask_bins = -1;
    bool has_bias = true;
    double bias = 0.0;

    CoordLayout layout() const { return layout_circulant(h.n, mask_bins); }
};

// Channel-mixing circular layer on H x W grids: one half-plane transfer
// function per (output, input) channel pair, output-major.  Bias is one
// spatial constant per output channel.
struct SpectralBccb2D {
    std::vector<HalfPlane2D> planes;
    int height = 0, width = 0;
    int c_in = 1, c_out = 1;
    double radial_cutoff = -1.0;
    bool has_bias = true;
    std::vector<double> bias;

    CoordLayout plane_layout() const { return layout_bccb(height, width, radial_cutoff); }
    const HalfPlane2D& plane(int o, int c) const { return planes[static_cast<std::size_t>(o) * c_in + c]; }
};

// Zeroes all bins at or above the cutoff; idempotent.
inline void apply_mask_1d(HalfSpectrum1D& h, int mask_bins) {
    if (mask_bins < 1 || mask_bins > h.k_half()) throw std::invalid_argument("mask out of range");
    for (int k = mask_bins; k < h.k_half(); ++k) h.coeffs[k] = cplx(0.0, 0.0);
}

inline void apply_mask_2d(HalfPlane2D& h, double radial_cutoff) {
    if (radial_cutoff < 0.0) throw std::invalid_argument("mask out of range");
    for (int u = 0; u < h.height; ++u)
        for (int v = 0; v < h.half_width(); ++v)
            if (rho_2d(u, v, h.height, h.width) > radial_cutoff) h.at(u, v) = cplx(0.0, 0.0);
}

// y = irfft(h . rfft(x)) + bias, rows of X independently; X is batch x n.
inline std::vector<double> circulant_layer_forward(const SpectralCirculant1D& layer,
                                                   const std::vector<double>& X, int batch) {
    const int n = layer.h.n;
    if (X.size() != static_cast<std::size_t>(batch) * n)
        throw std::invalid_argument("coordinate length mismatch");
    std::vector<double> Y(X.size());
    std::vector<double> row(n);
    for (int b = 0; b < batch; ++b) {
        const double* xb = X.data() + static_cast<std::size_t>(b) * n;
        row.assign(xb, xb + n);
        HalfSpectrum1D xs = rfft_1d(row);
        for (int k = 0; k < xs.k_half(); ++k) xs.coeffs[k] *= layer.h.coeffs[k];
        // The product can leave rounding residue on self-conjugate bins only
        // through the imaginary part, which is exactly zero for both factors.
        std::vector<double> yb = irfft_1d(xs);
        double* out = Y.data() + static_cast<std::size_t>(b) * n;
        const double bias = layer.has_bias ? layer.bias : 0.0;
        for (int t = 0; t < n; ++t) out[t] = yb[t] + bias;
    }
    return Y;
}

// Gradient with respect to the packed coordinates of the layer's layout,
// summed over the batch.  With Xhat, Ghat the forward transforms of input and
// upstream gradient, the contribution of bin k is conj(Xhat_k) Ghat_k / n,
// doubled for bins that own a conjugate partner.
inline std::vector<double> circulant_coord_vjp(const CoordLayout& layout,
                                               const std::vector<double>& X,
                                               const std::vector<double>& G, int batch) {
    const int n = layout.n;
    std::vector<double> grad(layout.d_eff, 0.0);
    std::vector<double> row(n);
    for (int b = 0; b < batch; ++b) {
        const double* xb = X.data() + static_cast<std::size_t>(b) * n;
        const double* gb = G.data() + static_cast<std::size_t>(b) * n;
        row.assign(xb, xb + n);
        const HalfSpectrum1D xs = rfft_1d(row);
        row.assign(gb, gb + n);
        const HalfSpectrum1D gs = rfft_1d(row);
        for (const auto& e : layout.entries) {
            const cplx d = std::conj(xs.coeffs[e.bin]) * gs.coeffs[e.bin] / static_cast<double>(n);
            if (e.kind == BinKind::Real) {
                grad[e.offset] += d.real();
            } else {
                grad[e.offset] += 2.0 * d.real();
                grad[e.offset + 1] += 2.0 * d.imag();
            }
        }
    }
    return grad;
}

// Adjoint of the circular operator: rows of the upstream gradient pass
// through the conjugate transfer function.
inline std::vector<double> circulant_input_vjp(const SpectralCirculant1D& layer,
                                               const std::vector<double>& G, int batch) {
    const int n = layer.h.n;
    std::vector<double> out(G.size());
    std::vector<double> row(n);
    for (int b = 0; b < batch; ++b) {
        const double* gb = G.data() + static_cast<std::size_t>(b) * n;
        row.assign(gb, gb + n);
        HalfSpectrum1D gs = rfft_1d(row);
        for (int k = 0; k < gs.k_half(); ++k) gs.coeffs[k] *= std::conj(layer.h.coeffs[k]);
        std::vector<double> xb = irfft_1d(gs);
        double* dst = out.data() + static_cast<std::size_t>(b) * n;
        for (int t = 0; t < n; ++t) dst[t] = xb[t];
    }
    return out;
}

namespace detail {

inline std::vector<cplx> fft2_of_slice(const double* grid, int height, int width) {
    std::vector<cplx> a(grid, grid + static_cast<std::size_t>(height) * width);
    fft2_inplace(a, height, width, false);
    return a;
}

}  // namespace detail

// X is batch x (c_in * H * W), channel-major within a sample; output is
// batch x (c_out * H * W).  Each output channel sums the per-input-channel
// circular responses, then adds its spatial bias.
inline std::vector<double> bccb_layer_forward(const SpectralBccb2D& layer,
                                              const std::vector<double>& X, int batch) {
    const int hw = layer.height * layer.width;
    const std::size_t in_stride = static_cast<std::size_t>(layer.c_in) * hw;
    const std::size_t out_stride = static_cast<std::size_t>(layer.c_out) * hw;
    if (X.size() != static_cast<std::size_t>(batch) * in_stride)
        throw std::invalid_argument("coordinate length mismatch");
    std::vector<std::vector<cplx>> transfer(layer.planes.size());
    for (std::size_t i = 0; i < layer.planes.size(); ++i)
        transfer[i] = hermitian_complete_2d(layer.planes[i]);
    std::vector<double> Y(static_cast<std::size_t>(batch) * out_stride, 0.0);
    std::vector<std::vector<cplx>> xhat(layer.c_in);
    for (int b = 0; b < batch; ++b) {
        const double* xb = X.data() + static_cast<std::size_t>(b) * in_stride;
        for (int c = 0; c < layer.c_in; ++c)
            xhat[c] = detail::fft2_of_slice(xb + static_cast<std::size_t>(c) * hw,
                                            layer.height, layer.width);
        for (int o = 0; o < layer.c_out; ++o) {
            std::vector<cplx> acc(hw, cplx(0.0, 0.0));
            for (int c = 0; c < layer.c_in; ++c) {
                const auto& t = transfer[static_cast<std::size_t>(o) * layer.c_in + c];
                for (int i = 0; i < hw; ++i) acc[i] += t[i] * xhat[c][i];
            }
            detail::fft2_inplace(acc, layer.height, layer.width, true);
            double* dst = Y.data() + static_cast<std::size_t>(b) * out_stride +
                          static_cast<std::size_t>(o) * hw;
            const double bias = layer.has_bias ? layer.bias[o] : 0.0;
            for (int i = 0; i < hw; ++i) dst[i] = acc[i].real() + bias;
        }
    }
    return Y;
}

// Gradient with respect to the packed coordinates of every (o, c) plane,
// concatenated output-major, summed over the batch.
inline std::vector<double> bccb_coord_vjp(const SpectralBccb2D& layer, const CoordLayout& layout,
                                          const std::vector<double>& X,
                                          const std::vector<double>& G, int batch) {
    const int hw = layer.height * layer.width;
    const int half_w = layer.width / 2 + 1;
    const std::size_t in_stride = static_cast<std::size_t>(layer.c_in) * hw;
    const std::size_t out_stride = static_cast<std::size_t>(layer.c_out) * hw;
    std::vector<double> grad(static_cast<std::size_t>(layer.c_out) * layer.c_in * layout.d_eff, 0.0);
    std::vector<std::vector<cplx>> xhat(layer.c_in), ghat(layer.c_out);
    const double scale = 1.0 / hw;
    for (int b = 0; b < batch; ++b) {
        const double* xb = X.data() + static_cast<std::size_t>(b) * in_stride;
        const double* gb = G.data() + static_cast<std::size_t>(b) * out_stride;
        for (int c = 0; c < layer.c_in; ++c)
            xhat[c] = detail::fft2_of_slice(xb + static_cast<std::size_t>(c) * hw,
                                            layer.height, layer.width);
        for (int o = 0; o < layer.c_out; ++o)
            ghat[o] = detail::fft2_of_slice(gb + static_cast<std::size_t>(o) * hw,
                                            layer.height, layer.width);
        for (int o = 0; o < layer.c_out; ++o) {
            for (int c = 0; c < layer.c_in; ++c) {
                double* gp = grad.data() +
                             (static_cast<std::size_t>(o) * layer.c_in + c) * layout.d_eff;
                for (const auto& e : layout.entries) {
                    const int u = e.bin / half_w, v = e.bin % half_w;
                    const cplx d = std::conj(xhat[c][static_cast<std::size_t>(u) * layer.width + v]) *
                                   ghat[o][static_cast<std::size_t>(u) * layer.width + v] * scale;
                    if (e.kind == BinKind::Real) {
                        gp[e.offset] += d.real();
                    } else {
                        gp[e.offset] += 2.0 * d.real();
                        gp[e.offset + 1] += 2.0 * d.imag();
                    }
                }
            }
        }
    }
    return grad;
}

inline std::vector<double> bccb_input_vjp(const SpectralBccb2D& layer,
                                          const std::vector<double>& G, int batch) {
    const int hw = layer.height * layer.width;
    const std::size_t in_stride = static_cast<std::size_t>(layer.c_in) * hw;
    const std::size_t out_stride = static_cast<std::size_t>(layer.c_out) * hw;
    std::vector<std::vector<cplx>> transfer(layer.planes.size());
    for (std::size_t i = 0; i < layer.planes.size(); ++i)
        transfer[i] = hermitian_complete_2d(layer.planes[i]);
    std::vector<double> out(static_cast<std::size_t>(batch) * in_stride, 0.0);
    std::vector<std::vector<cplx>> ghat(layer.c_out);
    for (int b = 0; b < batch; ++b) {
        const double* gb = G.data() + static_cast<std::size_t>(b) * out_stride;
        for (int o = 0; o < layer.c_out; ++o)
            ghat[o] = detail::fft2_of_slice(gb + static_cast<std::size_t>(o) * hw,
                                            layer.height, layer.width);
        for (int c = 0; c < layer.c_in; ++c) {
            std::vector<cplx> acc(hw, cplx(0.0, 0.0));
            for (int o = 0; o < layer.c_out; ++o) {
                const auto& t = transfer[static_cast<std::size_t>(o) * layer.c_in + c];
                for (int i = 0; i < hw; ++i) acc[i] += std::conj(t[i]) * ghat[o][i];
            }
            detail::fft2_inplace(acc, layer.height, layer.width, true);
            double* dst = out.data() + static_cast<std::size_t>(b) * in_stride +
                          static_cast<std::size_t>(c) * hw;
            for (int i = 0; i < hw; ++i) dst[i] = acc[i].real();
        }
    }
    return out;
}

struct ParamCount {
    long long weights = 0;
    long long biases = 0;
};

inline ParamCount operator+(ParamCount a, ParamCount b) {
    return {a.weights + b.weights, a.biases + b.biases};
}

inline ParamCount circulant_param_count(int n, int mask_bins, bool bias) {
    return {static_cast<long long>(layout_circulant(n, mask_bins).d_eff), bias ? 1LL : 0LL};
}

inline ParamCount bccb_param_count(int height, int width, int c_in, int c_out,
                                   double radial_cutoff, bool bias) {
    const long long per_plane = layout_bccb(height, width, radial_cutoff).d_eff;
    return {per_plane * c_in * c_out, bias ? static_cast<long long>(c_out) : 0LL};
}

inline ParamCount conv2d_param_count(int c_in, int c_out, int kernel, bool bias) {
    return {static_cast<long long>(c_in) * c_out * kernel * kernel,
            bias ? static_cast<long long>(c_out) : 0LL};
}

inline ParamCount dense_param_count(int in_dim, int out_dim, bool bias) {
    return {static_cast<long long>(in_dim) * out_dim, bias ? static_cast<long long>(out_dim) : 0LL};
}

}  // namespace spectral
