#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "spectral/fft.hpp"
#include "spectral/linalg.hpp"

namespace spectral {

// Exact operator 2-norm of the circulant map: the transfer function is
// diagonal in the Fourier basis, and conjugate bins share a modulus, so the
// maximum over the stored half suffices.
inline double spectral_norm_1d(const HalfSpectrum1D& h) {
    validate_half_spectrum(h);
    double best = 0.0;
    for (const cplx& c : h.coeffs) best = std::max(best, std::abs(c));
    return best;
}

// Exact operator 2-norm of the multichannel map: block-diagonal in the 2D
// Fourier basis with one c_out x c_in mixing matrix per bin; conjugate bins
// share singular values, so the half-plane again suffices.  planes is
// output-major: planes[o * c_in + c].
inline double spectral_norm_2d(const std::vector<HalfPlane2D>& planes, int c_in, int c_out) {
    if (c_in <= 0 || c_out <= 0 ||
        planes.size() != static_cast<std::size_t>(c_in) * c_out)
        throw std::invalid_argument("coordinate length mismatch");
    for (const auto& p : planes) validate_half_plane(p);
    const int H = planes[0].height, Wh = planes[0].half_width();
    double best = 0.0;
    std::vector<std::complex<double>> K(static_cast<std::size_t>(c_out) * c_in);
    std::vector<std::complex<double>> gram(static_cast<std::size_t>(c_in) * c_in);
    for (int u = 0; u < H; ++u)
        for (int v = 0; v < Wh; ++v) {
            for (int o = 0; o < c_out; ++o)
                for (int c = 0; c < c_in; ++c)
                    K[static_cast<std::size_t>(o) * c_in + c] =
                        planes[static_cast<std::size_t>(o) * c_in + c].at(u, v);
            // gram = K^H K, Hermitian PSD of size c_in.
            for (int a = 0; a < c_in; ++a)
                for (int b = 0; b < c_in; ++b) {
                    std::complex<double> acc(0.0, 0.0);
                    for (int o = 0; o < c_out; ++o)
                        acc += std::conj(K[static_cast<std::size_t>(o) * c_in + a]) *
                               K[static_cast<std::size_t>(o) * c_in + b];
                    gram[static_cast<std::size_t>(a) * c_in + b] = acc;
                }
            const double lam = herm_eig_max(gram, c_in);
            best = std::max(best, std::sqrt(std::max(lam, 0.0)));
        }
    return best;
}

inline double spectral_norm_2d(const HalfPlane2D& plane) {
    return spectral_norm_2d(std::vector<HalfPlane2D>{plane}, 1, 1);
}

// Largest singular value of a dense row-major matrix: exact symmetric
// eigensolve of the smaller Gram matrix up to size 256, power iteration
// beyond that.
inline double dense_operator_norm(const std::vector<double>& w, int rows, int cols) {
    if (rows <= 0 || cols <= 0 || w.size() != static_cast<std::size_t>(rows) * cols)
        throw std::invalid_argument("coordinate length mismatch");
    const int small = std::min(rows, cols);
    if (small > 256) return operator_norm_power(w, rows, cols);
    std::vector<double> gram(static_cast<std::size_t>(small) * small);
    if (rows <= cols) {
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < rows; ++j) {
                double acc = 0.0;
                for (int k = 0; k < cols; ++k)
                    acc += w[static_cast<std::size_t>(i) * cols + k] *
                           w[static_cast<std::size_t>(j) * cols + k];
                gram[static_cast<std::size_t>(i) * rows + j] = acc;
            }
    } else {
        for (int i = 0; i < cols; ++i)
            for (int j = 0; j < cols; ++j) {
                double acc = 0.0;
                for (int k = 0; k < rows; ++k)
                    acc += w[static_cast<std::size_t>(k) * cols + i] *
                           w[static_cast<std::size_t>(k) * cols + j];
                gram[static_cast<std::size_t>(i) * cols + j] = acc;
            }
    }
    return std::sqrt(std::max(sym_eig_max(std::move(gram), small), 0.0));
}

// One layer of a network whose Lipschitz constant is being bounded.  Biases
// are translations and do not enter; interleaved activations must be
// 1-Lipschitz (tanh, relu, softmax-free heads).
struct LayerDesc {
    enum class Kind { Unspecified, Spectral1D, Spectral2D, Dense };
    Kind kind = Kind::Unspecified;
    HalfSpectrum1D h;               // Spectral1D
    std::vector<HalfPlane2D> planes;  // Spectral2D, output-major
    int c_in = 1, c_out = 1;
    std::vector<double> w;          // Dense, rows x cols row-major
    int rows = 0, cols = 0;
};

inline double layer_norm(const LayerDesc& layer) {
    switch (layer.kind) {
        case LayerDesc::Kind::Spectral1D:
            return spectral_norm_1d(layer.h);
        case LayerDesc::Kind::Spectral2D:
            return spectral_norm_2d(layer.planes, layer.c_in, layer.c_out);
        case LayerDesc::Kind::Dense:
            return dense_operator_norm(layer.w, layer.rows, layer.cols);
        default:
            throw std::invalid_argument("unclassified layer");
    }
}

inline std::vector<double> layer_norms(const std::vector<LayerDesc>& layers) {
    std::vector<double> out;
    out.reserve(layers.size());
    for (const auto& l : layers) out.push_back(layer_norm(l));
    return out;
}

inline double network_lipschitz(const std::vector<LayerDesc>& layers) {
    double prod = 1.0;
    for (const auto& l : layers) prod *= layer_norm(l);
    return prod;
}

// Logit margin m = z_y - max_{k != y} z_k.
inline double margin(const std::vector<double>& logits, int y) {
    const int k = static_cast<int>(logits.size());
    if (k < 2) throw std::invalid_argument("margin needs at least two classes");
    if (y < 0 || y >= k) throw std::invalid_argument("label out of range");
    double rival = -1e300;
    for (int i = 0; i < k; ++i)
        if (i != y) rival = std::max(rival, logits[i]);
    return logits[y] - rival;
}

// Global certificate: the prediction cannot change within radius
// max(m, 0) / (2 Lhat) in l2.
inline double cert_radius(double m, double lhat) {
    if (lhat <= 0.0) throw std::invalid_argument("Lipschitz bound must be positive");
    return std::max(m, 0.0) / (2.0 * lhat);
}

// Tail bound on the prior spectral norm: with m_active active bins of
// variance at most S_max, P(norm >= t) <= 2 m exp(-t^2 / (2 S_max)),
// reported clipped to [0, 1].
inline double prior_tail_bound(long long m_active, double s_max, double t) {
    if (m_active < 1 || s_max <= 0.0 || t <= 0.0)
        throw std::invalid_argument("invalid tail bound arguments");
    const double raw = 2.0 * static_cast<double>(m_active) * std::exp(-t * t / (2.0 * s_max));
    return std::min(raw, 1.0);
}

// Inverse form: the radius t such that the bound equals delta.
inline double prior_tail_radius(long long m_active, double s_max, double delta) {
    if (m_active < 1 || s_max <= 0.0) throw std::invalid_argument("invalid tail bound arguments");
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
    return std::sqrt(2.0 * s_max * std::log(2.0 * static_cast<double>(m_active) / delta));
}

struct LayerTail {
    long long m_active = 0;  // active frequency bins of the layer
    double s_max = 1.0;      // largest prior variance among them
};

struct NetworkTail {
    std::vector<double> radii;  // per-layer norm radii
    double product = 1.0;       // simultaneous product bound, prob >= 1 - delta
};

// Union bound across layers: each layer gets budget delta / L, so all norms
// stay under their radii simultaneously with probability at least 1 - delta.
inline NetworkTail prior_tail_bound_network(const std::vector<LayerTail>& layers, double delta) {
    if (layers.empty()) throw std::invalid_argument("empty batch");
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
    const double L = static_cast<double>(layers.size());
    NetworkTail out;
    for (const auto& l : layers) {
        if (l.m_active < 1 || l.s_max <= 0.0)
            throw std::invalid_argument("invalid tail bound arguments");
        const double t =
            std::sqrt(2.0 * l.s_max * std::log(2.0 * static_cast<double>(l.m_active) * L / delta));
        out.radii.push_back(t);
        out.product *= t;
    }
    return out;
}

struct CertRow {
    int label = 0;
    double margin = 0.0;
    double radius = 0.0;
};

struct CertReport {
    std::vector<double> norms;  // per layer
    double lipschitz = 1.0;
    std::vector<CertRow> rows;  // per input
};

// Certificates for a batch of logits under one network bound.
inline CertReport certify_batch(const std::vector<LayerDesc>& layers,
                                const std::vector<double>& logits, const std::vector<int>& labels,
                                int count, int classes) {
    if (count <= 0 || logits.size() != static_cast<std::size_t>(count) * classes ||
        static_cast<int>(labels.size()) != count)
        throw std::invalid_argument("coordinate length mismatch");
    CertReport rep;
    rep.norms = layer_norms(layers);
    rep.lipschitz = 1.0;
    for (double n : rep.norms) rep.lipschitz *= n;
    std::vector<double> row(classes);
    for (int i = 0; i < count; ++i) {
        std::copy(logits.begin() + static_cast<std::size_t>(i) * classes,
                  logits.begin() + static_cast<std::size_t>(i + 1) * classes, row.begin());
        const double m = margin(row, labels[i]);
        rep.rows.push_back({labels[i], m, cert_radius(m, rep.lipschitz)});
    }
    return rep;
}

}  // namespace spectral
