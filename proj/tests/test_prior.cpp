#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "spectral/prior.hpp"

using spectral::SpectrumProfile;

TEST_CASE("radial frequency is normalized distance to DC on the circle") {
    REQUIRE(spectral::rho_1d(0, 8) == 0.0);
    REQUIRE(spectral::rho_1d(1, 8) == 0.25);
    REQUIRE(spectral::rho_1d(7, 8) == 0.25);
    REQUIRE(spectral::rho_1d(4, 8) == 1.0);
    REQUIRE(spectral::rho_1d(0, 1) == 0.0);
    REQUIRE(spectral::rho_1d(1, 3) == 1.0);
    REQUIRE(spectral::rho_2d(0, 0, 8, 8) == 0.0);
    REQUIRE(spectral::rho_2d(4, 4, 8, 8) == Catch::Approx(std::sqrt(2.0)).epsilon(1e-15));
    REQUIRE_THROWS(spectral::rho_1d(8, 8));
    REQUIRE_THROWS(spectral::rho_1d(-1, 8));
}

TEST_CASE("variance profile values") {
    SpectrumProfile p{1.0, 2.0};
    REQUIRE(spectral::variance_profile(p, 0.0) == 1.0);
    REQUIRE(spectral::variance_profile(p, 1.0) == 0.5);
    REQUIRE(spectral::variance_profile(p, 0.75) == Catch::Approx(0.64).epsilon(1e-15));
    REQUIRE(spectral::variance_profile(p, std::sqrt(2.0)) == Catch::Approx(1.0 / 3.0).epsilon(1e-12));

    SpectrumProfile flat{2.0, 0.0};
    // rho^0 == 1 by convention, including at DC: alpha = 0 flattens the
    // spectrum to half the scale everywhere.
    REQUIRE(spectral::variance_profile(flat, 0.0) == 1.0);
    REQUIRE(spectral::variance_profile(flat, 0.5) == 1.0);
    REQUIRE(spectral::variance_profile(flat, 1.0) == 1.0);
}

TEST_CASE("variance profile is monotone in both arguments") {
    // Decreasing in rho at fixed alpha.
    SpectrumProfile p{1.0, 2.0};
    double prev = spectral::variance_profile(p, 0.0);
    for (double r = 0.1; r <= 1.4; r += 0.1) {
        const double s = spectral::variance_profile(p, r);
        REQUIRE(s < prev);
        prev = s;
    }
    // In alpha the direction flips around rho = 1: rho^alpha shrinks with
    // alpha below 1 and grows above it.
    for (double a = 0.5; a <= 4.0; a += 0.5) {
        SpectrumProfile lo{1.0, a}, hi{1.0, a + 0.5};
        REQUIRE(spectral::variance_profile(hi, 0.75) > spectral::variance_profile(lo, 0.75));
        REQUIRE(spectral::variance_profile(hi, 1.3) < spectral::variance_profile(lo, 1.3));
        REQUIRE(spectral::variance_profile(hi, 1.0) == spectral::variance_profile(lo, 1.0));
    }
}

TEST_CASE("profile derivative in alpha matches finite differences") {
    for (double rho : {0.0, 0.25, 0.75, 1.0, 1.3}) {
        for (double alpha : {0.5, 1.0, 2.0, 3.5}) {
            SpectrumProfile p{1.7, alpha};
            const double h = 1e-6;
            SpectrumProfile up{1.7, alpha + h}, dn{1.7, alpha - h};
            const double fd =
                (spectral::variance_profile(up, rho) - spectral::variance_profile(dn, rho)) / (2.0 * h);
            REQUIRE(spectral::variance_profile_dalpha(p, rho) == Catch::Approx(fd).margin(1e-8));
        }
    }
}

TEST_CASE("profile grids are symmetric under frequency negation") {
    SpectrumProfile p{1.3, 1.7};
    const auto s = spectral::profile_grid_1d(p, 12);
    for (int k = 1; k < 12; ++k) REQUIRE(s[k] == s[12 - k]);
    const auto s2 = spectral::profile_grid_2d(p, 4, 6);
    for (int u = 0; u < 4; ++u)
        for (int v = 0; v < 6; ++v)
            REQUIRE(s2[static_cast<std::size_t>(u) * 6 + v] ==
                    s2[static_cast<std::size_t>((4 - u) % 4) * 6 + (6 - v) % 6]);
}

TEST_CASE("flat profile gives white covariance") {
    SpectrumProfile flat{2.0, 0.0};
    const auto k = spectral::prior_covariance_1d(flat, 16);
    REQUIRE(k[0] == Catch::Approx(1.0).margin(1e-13));
    for (int t = 1; t < 16; ++t) REQUIRE(std::abs(k[t]) < 1e-13);
    const auto k2 = spectral::prior_covariance_2d(flat, 4, 4);
    REQUIRE(k2[0] == Catch::Approx(1.0).margin(1e-13));
    for (std::size_t i = 1; i < k2.size(); ++i) REQUIRE(std::abs(k2[i]) < 1e-13);
}

TEST_CASE("covariance at lag zero is the mean bin variance") {
    SpectrumProfile p{1.0, 2.0};
    for (int n : {5, 8, 16}) {
        const auto s = spectral::profile_grid_1d(p, n);
        double mean = 0.0;
        for (double v : s) mean += v;
        mean /= n;
        REQUIRE(spectral::prior_covariance_1d(p, n)[0] == Catch::Approx(mean).epsilon(1e-12));
    }
    const auto s2 = spectral::profile_grid_2d(p, 4, 6);
    double mean2 = 0.0;
    for (double v : s2) mean2 += v;
    mean2 /= s2.size();
    REQUIRE(spectral::prior_covariance_2d(p, 4, 6)[0] == Catch::Approx(mean2).epsilon(1e-12));
}

TEST_CASE("covariance matrices are symmetric positive semidefinite") {
    SpectrumProfile p{1.0, 2.0};
    const int n = 16;
    const auto k = spectral::prior_covariance_1d(p, n);
    Eigen::MatrixXd C(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) C(i, j) = k[(i - j + n) % n];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
    REQUIRE(es.eigenvalues().minCoeff() > -1e-12);
    // The eigenvalues of this circulant covariance are exactly the bin
    // variances, so the top one is S at DC.
    const auto s = spectral::profile_grid_1d(p, n);
    REQUIRE(es.eigenvalues().maxCoeff() ==
            Catch::Approx(*std::max_element(s.begin(), s.end())).epsilon(1e-10));
}

TEST_CASE("sampled filters reproduce the stationary covariance") {
    SpectrumProfile p{1.0, 2.0};
    const int n = 16;
    const int draws = 20000;
    spectral::RngStream rng(123);
    const auto kfn = spectral::prior_covariance_1d(p, n);
    std::vector<std::vector<double>> prods(n, std::vector<double>{});
    for (auto& v : prods) v.reserve(draws);
    for (int s = 0; s < draws; ++s) {
        const auto w = spectral::sample_filter_1d(p, n, rng);
        for (int tau = 0; tau < n; ++tau) prods[tau].push_back(w[3] * w[(3 + tau) % n]);
    }
    for (int tau = 0; tau < n; ++tau) {
        double mean = 0.0;
        for (double v : prods[tau]) mean += v;
        mean /= draws;
        double var = 0.0;
        for (double v : prods[tau]) var += (v - mean) * (v - mean);
        var /= draws - 1;
        const double se = std::sqrt(var / draws);
        INFO("lag " << tau);
        REQUIRE(std::abs(mean - kfn[tau]) < 4.0 * se + 1e-12);
    }
}

TEST_CASE("sampled 2D fields reproduce the covariance at a few lags") {
    SpectrumProfile p{1.0, 2.0};
    const int H = 4, W = 4;
    const int draws = 20000;
    spectral::RngStream rng(321);
    const auto kfn = spectral::prior_covariance_2d(p, H, W);
    const std::vector<std::pair<int, int>> lags = {{0, 0}, {1, 0}, {0, 1}, {1, 1}, {2, 3}};
    std::vector<std::vector<double>> prods(lags.size());
    for (auto& v : prods) v.reserve(draws);
    for (int s = 0; s < draws; ++s) {
        const auto w = spectral::sample_field_2d(p, H, W, rng);
        for (std::size_t i = 0; i < lags.size(); ++i) {
            const auto [dy, dx] = lags[i];
            prods[i].push_back(w[1 * W + 2] * w[((1 + dy) % H) * W + (2 + dx) % W]);
        }
    }
    for (std::size_t i = 0; i < lags.size(); ++i) {
        double mean = 0.0;
        for (double v : prods[i]) mean += v;
        mean /= draws;
        double var = 0.0;
        for (double v : prods[i]) var += (v - mean) * (v - mean);
        var /= draws - 1;
        const double se = std::sqrt(var / draws);
        const auto [dy, dx] = lags[i];
        INFO("lag (" << dy << ", " << dx << ")");
        REQUIRE(std::abs(mean - kfn[static_cast<std::size_t>(dy) * W + dx]) < 4.0 * se + 1e-12);
    }
}

TEST_CASE("sampled 2D spectra satisfy the Hermitian invariants") {
    SpectrumProfile p{1.0, 1.0};
    spectral::RngStream rng(55);
    for (int H : {2, 3, 4}) {
        for (int W : {3, 4}) {
            const auto h = spectral::sample_spectrum_2d(p, H, W, rng);
            REQUIRE_NOTHROW(spectral::validate_half_plane(h));
        }
    }
}

TEST_CASE("coordinate prior variances split bin variance across components") {
    SpectrumProfile p{1.0, 2.0};
    const auto d = spectral::prior_variances(p, spectral::layout_circulant(4));
    REQUIRE(d.tau_sq.size() == 4);
    REQUIRE(d.tau_sq[0] == 1.0);        // DC, self-conjugate
    REQUIRE(d.tau_sq[1] == 0.4);        // bin 1 real part, S(1/2)/2
    REQUIRE(d.tau_sq[2] == 0.4);        // bin 1 imaginary part
    REQUIRE(d.tau_sq[3] == 0.5);        // Nyquist, self-conjugate: full S(1)
}

TEST_CASE("prior variances reject layouts that leak masked bins") {
    SpectrumProfile p{1.0, 2.0};
    auto layout = spectral::layout_circulant(8, 2);
    layout.entries.push_back({3, layout.d_eff, spectral::BinKind::Complex});
    REQUIRE_THROWS_WITH(spectral::prior_variances(p, layout), "masked bin present in layout");
}

TEST_CASE("masked layouts keep per-coordinate variances of the surviving bins") {
    SpectrumProfile p{1.0, 2.0};
    const auto full = spectral::prior_variances(p, spectral::layout_circulant(8));
    const auto cut = spectral::prior_variances(p, spectral::layout_circulant(8, 3));
    REQUIRE(cut.tau_sq.size() == 5);
    for (std::size_t i = 0; i < cut.tau_sq.size(); ++i) REQUIRE(cut.tau_sq[i] == full.tau_sq[i]);
}
