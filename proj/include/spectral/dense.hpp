#pragma once

#include <stdexcept>
#include <vector>

#include "spectral/fft.hpp"

namespace spectral {

// Row-major dense matrix helpers.  These materializations exist to make the
// fast spectral paths checkable against plain matvecs; none of them are used
// on the training path.

inline std::vector<double> dense_matvec(const std::vector<double>& m, const std::vector<double>& x,
                                        int rows, int cols) {
    if (m.size() != static_cast<std::size_t>(rows) * cols || static_cast<int>(x.size()) != cols)
        throw std::invalid_argument("coordinate length mismatch");
    std::vector<double> y(rows, 0.0);
    for (int i = 0; i < rows; ++i) {
        double acc = 0.0;
        const double* row = m.data() + static_cast<std::size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
    return y;
}

// C[i][j] = w[(i - j) mod n]: matvec with C is circular convolution by w.
inline std::vector<double> circulant_dense(const std::vector<double>& w) {
    const int n = static_cast<int>(w.size());
    if (n == 0) throw std::invalid_argument("empty signal");
    std::vector<double> m(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m[static_cast<std::size_t>(i) * n + j] = w[(i - j + n) % n];
    return m;
}

// Doubly-circulant matrix of the 2D circular convolution by the H x W filter
// w (row-major): rows/cols indexed t = ty*W + tx.
inline std::vector<double> bccb_dense(const std::vector<double>& w, int height, int width) {
    if (height <= 0 || width <= 0 || w.size() != static_cast<std::size_t>(height) * width)
        throw std::invalid_argument("coordinate length mismatch");
    const int hw = height * width;
    std::vector<double> m(static_cast<std::size_t>(hw) * hw);
    for (int ty = 0; ty < height; ++ty)
        for (int tx = 0; tx < width; ++tx)
            for (int sy = 0; sy < height; ++sy)
                for (int sx = 0; sx < width; ++sx) {
                    const int row = ty * width + tx;
                    const int col = sy * width + sx;
                    m[static_cast<std::size_t>(row) * hw + col] =
                        w[((ty - sy + height) % height) * width + ((tx - sx + width) % width)];
                }
    return m;
}

// Dense equivalent of a half-spectrum circulant operator.
inline std::vector<double> circulant_dense(const HalfSpectrum1D& h) {
    return circulant_dense(irfft_1d(h));
}

inline std::vector<double> bccb_dense(const HalfPlane2D& h) {
    return bccb_dense(irfft_2d(h), h.height, h.width);
}

}  // namespace spectral
