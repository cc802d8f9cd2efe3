#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "spectral/metrics.hpp"
#include "spectral/rng.hpp"

using namespace spectral;

namespace {

PredictiveBatch random_batch(int count, int classes, RngStream& rng) {
    PredictiveBatch b;
    b.count = count;
    b.classes = classes;
    b.probs.resize(static_cast<std::size_t>(count) * classes);
    b.labels.resize(count);
    for (int i = 0; i < count; ++i) {
        double z = 0.0;
        for (int k = 0; k < classes; ++k) {
            const double e = std::exp(rng.normal());
            b.probs[static_cast<std::size_t>(i) * classes + k] = e;
            z += e;
        }
        for (int k = 0; k < classes; ++k) b.probs[static_cast<std::size_t>(i) * classes + k] /= z;
        b.labels[i] = static_cast<int>(rng.below(classes));
    }
    return b;
}

}  // namespace

TEST_CASE("entropy: frozen values, bounds, permutation invariance") {
    std::vector<double> uniform(10, 0.1);
    REQUIRE(entropy(uniform.data(), 10) == Catch::Approx(std::log(10.0)).margin(1e-12));
    std::vector<double> onehot = {0.0, 1.0, 0.0};
    REQUIRE(entropy(onehot.data(), 3) == 0.0);
    std::vector<double> half = {0.5, 0.5, 0.0};
    REQUIRE(entropy(half.data(), 3) == Catch::Approx(std::log(2.0)).margin(1e-12));

    RngStream rng(601);
    const PredictiveBatch b = random_batch(10000, 5, rng);
    for (double h : entropies(b)) {
        REQUIRE(h >= 0.0);
        REQUIRE(h <= std::log(5.0) + 1e-12);
    }

    std::vector<double> row = {0.1, 0.25, 0.65};
    std::vector<double> perm = {0.65, 0.1, 0.25};
    REQUIRE(entropy(row.data(), 3) == Catch::Approx(entropy(perm.data(), 3)).margin(1e-15));
}

TEST_CASE("nll and brier: frozen values and the clamp flag") {
    PredictiveBatch perfect;
    perfect.count = 2;
    perfect.classes = 3;
    perfect.probs = {1, 0, 0, 0, 0, 1};
    perfect.labels = {0, 2};
    REQUIRE(nll(perfect).value == 0.0);
    REQUIRE(!nll(perfect).clamped);
    REQUIRE(brier(perfect) == 0.0);

    PredictiveBatch uniform;
    uniform.count = 4;
    uniform.classes = 10;
    uniform.probs.assign(40, 0.1);
    uniform.labels = {0, 3, 7, 9};
    REQUIRE(nll(uniform).value == Catch::Approx(std::log(10.0)).margin(1e-12));
    REQUIRE(brier(uniform) == Catch::Approx(0.9).margin(1e-12));

    PredictiveBatch zero;
    zero.count = 1;
    zero.classes = 2;
    zero.probs = {1.0, 0.0};
    zero.labels = {1};
    const NllResult r = nll(zero);
    REQUIRE(r.clamped);
    REQUIRE(r.value == Catch::Approx(-std::log(1e-12)).margin(1e-9));
}

TEST_CASE("nll and brier match direct summation on random batches") {
    RngStream rng(602);
    const PredictiveBatch b = random_batch(257, 4, rng);
    double nll_ref = 0.0, brier_ref = 0.0;
    for (int i = 0; i < b.count; ++i) {
        nll_ref -= std::log(b.probs[static_cast<std::size_t>(i) * 4 + b.labels[i]]);
        for (int k = 0; k < 4; ++k) {
            const double d =
                b.probs[static_cast<std::size_t>(i) * 4 + k] - (k == b.labels[i] ? 1.0 : 0.0);
            brier_ref += d * d;
        }
    }
    REQUIRE(nll(b).value == Catch::Approx(nll_ref / b.count).margin(1e-12));
    REQUIRE(brier(b) == Catch::Approx(brier_ref / b.count).margin(1e-12));
}

TEST_CASE("calibration error: frozen constructions") {
    // Two bins whose mean confidence equals the bin accuracy exactly.
    PredictiveBatch calib;
    calib.count = 20;
    calib.classes = 2;
    for (int i = 0; i < 10; ++i) {
        calib.probs.push_back(0.7);
        calib.probs.push_back(0.3);
        calib.labels.push_back(i < 7 ? 0 : 1);
    }
    for (int i = 0; i < 10; ++i) {
        calib.probs.push_back(0.9);
        calib.probs.push_back(0.1);
        calib.labels.push_back(i < 9 ? 0 : 1);
    }
    REQUIRE(ece(calib, 5) == Catch::Approx(0.0).margin(1e-12));

    PredictiveBatch wrong;
    wrong.count = 3;
    wrong.classes = 2;
    wrong.probs = {1, 0, 1, 0, 1, 0};
    wrong.labels = {1, 1, 1};
    REQUIRE(ece(wrong, 15) == 1.0);
    REQUIRE(mce(wrong, 15) == 1.0);
}

TEST_CASE("calibration error: four-point hand computation") {
    PredictiveBatch b;
    b.count = 4;
    b.classes = 2;
    b.probs = {0.6, 0.4, 0.8, 0.2, 0.55, 0.45, 0.95, 0.05};
    b.labels = {0, 1, 1, 0};  // correct, wrong, wrong, correct
    // bins=4: rows 0 and 2 land in bin 2 (conf 0.575, acc 0.5), rows 1 and 3
    // in bin 3 (conf 0.875, acc 0.5).
    REQUIRE(ece(b, 4) == Catch::Approx(0.5 * 0.075 + 0.5 * 0.375).margin(1e-12));
    REQUIRE(mce(b, 4) == Catch::Approx(0.375).margin(1e-12));
}

TEST_CASE("calibration error ordering on random batches") {
    RngStream rng(603);
    for (int trial = 0; trial < 5; ++trial) {
        const PredictiveBatch b = random_batch(200, 3, rng);
        const double e = ece(b, 15), m = mce(b, 15);
        REQUIRE(e <= m + 1e-12);
        REQUIRE(m <= 1.0 + 1e-12);
        REQUIRE(e >= 0.0);
    }
}

TEST_CASE("auroc equals the pair-counting oracle with ties") {
    RngStream rng(604);
    std::vector<double> id(200), ood(200);
    // Coarse grid forces many exact ties.
    for (auto& v : id) v = static_cast<double>(rng.below(25)) / 5.0 + 1.0;
    for (auto& v : ood) v = static_cast<double>(rng.below(25)) / 5.0;
    double pairs = 0.0;
    for (double a : id)
        for (double b : ood) {
            if (a > b)
                pairs += 1.0;
            else if (a == b)
                pairs += 0.5;
        }
    REQUIRE(auroc(id, ood) == Catch::Approx(pairs / (200.0 * 200.0)).margin(1e-12));
}

TEST_CASE("auroc and fpr on separated and identical distributions") {
    std::vector<double> hi(50), lo(50);
    for (int i = 0; i < 50; ++i) {
        hi[i] = 10.0 + i;
        lo[i] = -10.0 - i;
    }
    REQUIRE(auroc(hi, lo) == 1.0);
    REQUIRE(fpr_at_95tpr(hi, lo) == 0.0);
    REQUIRE(auroc(lo, hi) == 0.0);

    RngStream rng(605);
    std::vector<double> a(2000), b(2000);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    REQUIRE(auroc(a, b) == Catch::Approx(0.5).margin(0.02));

    REQUIRE_THROWS_AS(auroc({}, {1.0}), std::invalid_argument);
    REQUIRE_THROWS_AS(auroc({1.0}, {}), std::invalid_argument);
    REQUIRE_THROWS_AS(fpr_at_95tpr({}, {1.0}), std::invalid_argument);
}

TEST_CASE("auroc is invariant under strictly increasing transforms") {
    RngStream rng(606);
    std::vector<double> id(300), ood(300);
    for (auto& v : id) v = rng.normal() + 0.5;
    for (auto& v : ood) v = rng.normal();
    const double base = auroc(id, ood);
    std::vector<double> id_t = id, ood_t = ood;
    for (auto& v : id_t) v = std::exp(0.7 * v);
    for (auto& v : ood_t) v = std::exp(0.7 * v);
    REQUIRE(auroc(id_t, ood_t) == base);
}

TEST_CASE("fpr threshold uses the lower nearest-rank percentile") {
    std::vector<double> id(100);
    for (int i = 0; i < 100; ++i) id[i] = static_cast<double>(i + 1);
    const std::vector<double> ood = {4.9, 5.0, 5.1, 100.0};
    // 5th percentile of 1..100 is the 5th order statistic, 5.0.
    REQUIRE(fpr_at_95tpr(id, ood) == 0.75);
}

TEST_CASE("batch validation rejects malformed rows") {
    PredictiveBatch bad;
    bad.count = 1;
    bad.classes = 2;
    bad.probs = {0.6, 0.6};
    bad.labels = {0};
    REQUIRE_THROWS_AS(nll(bad), std::invalid_argument);
    bad.probs = {1.2, -0.2};
    REQUIRE_THROWS_AS(nll(bad), std::invalid_argument);
    bad.probs = {0.6, 0.4};
    bad.labels = {2};
    REQUIRE_THROWS_AS(nll(bad), std::invalid_argument);
    bad.labels = {0};
    REQUIRE(nll(bad).value == Catch::Approx(-std::log(0.6)).margin(1e-12));
}
