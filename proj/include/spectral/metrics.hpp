#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace spectral {

// Row-stochastic predictive probabilities with optional labels.
struct PredictiveBatch {
    std::vector<double> probs;  // count x classes, row-major
    std::vector<int> labels;    // empty when unlabeled
    int count = 0;
    int classes = 0;
};

inline void validate_batch(const PredictiveBatch& b, bool need_labels) {
    if (b.count <= 0 || b.classes <= 0 ||
        b.probs.size() != static_cast<std::size_t>(b.count) * b.classes)
        throw std::invalid_argument("coordinate length mismatch");
    if (need_labels && static_cast<int>(b.labels.size()) != b.count)
        throw std::invalid_argument("labels required");
    for (int i = 0; i < b.count; ++i) {
        double row = 0.0;
        for (int k = 0; k < b.classes; ++k) {
            const double p = b.probs[static_cast<std::size_t>(i) * b.classes + k];
            if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("probability out of range");
            row += p;
        }
        if (std::abs(row - 1.0) > 1e-9) throw std::invalid_argument("row does not sum to one");
    }
    if (need_labels)
        for (int y : b.labels)
            if (y < 0 || y >= b.classes) throw std::invalid_argument("label out of range");
}

// Shannon entropy in nats with 0 log 0 = 0.
inline double entropy(const double* row, int classes) {
    double h = 0.0;
    for (int k = 0; k < classes; ++k)
        if (row[k] > 0.0) h -= row[k] * std::log(row[k]);
    return h;
}

inline std::vector<double> entropies(const PredictiveBatch& b) {
    validate_batch(b, false);
    std::vector<double> out(b.count);
    for (int i = 0; i < b.count; ++i)
        out[i] = entropy(b.probs.data() + static_cast<std::size_t>(i) * b.classes, b.classes);
    return out;
}

struct NllResult {
    double value = 0.0;
    bool clamped = false;  // some true-label probability hit the 1e-12 floor
};

inline NllResult nll(const PredictiveBatch& b) {
    validate_batch(b, true);
    NllResult r;
    double acc = 0.0;
    for (int i = 0; i < b.count; ++i) {
        double p = b.probs[static_cast<std::size_t>(i) * b.classes + b.labels[i]];
        if (p < 1e-12) {
            p = 1e-12;
            r.clamped = true;
        }
        acc -= std::log(p);
    }
    r.value = acc / b.count;
    return r;
}

inline double brier(const PredictiveBatch& b) {
    validate_batch(b, true);
    double acc = 0.0;
    for (int i = 0; i < b.count; ++i)
        for (int k = 0; k < b.classes; ++k) {
            const double e = k == b.labels[i] ? 1.0 : 0.0;
            const double d = b.probs[static_cast<std::size_t>(i) * b.classes + k] - e;
            acc += d * d;
        }
    return acc / b.count;
}

namespace detail {

struct BinStats {
    std::vector<double> conf, acc, weight;  // nonempty bins only
};

inline BinStats calibration_bins(const PredictiveBatch& b, int bins) {
    if (bins < 1) throw std::invalid_argument("bins must be at least 1");
    validate_batch(b, true);
    std::vector<double> conf_sum(bins, 0.0), acc_sum(bins, 0.0);
    std::vector<int> count(bins, 0);
    for (int i = 0; i < b.count; ++i) {
        const double* row = b.probs.data() + static_cast<std::size_t>(i) * b.classes;
        int arg = 0;
        for (int k = 1; k < b.classes; ++k)
            if (row[k] > row[arg]) arg = k;
        const double conf = row[arg];
        const int bin = std::min(bins - 1, static_cast<int>(conf * bins));
        conf_sum[bin] += conf;
        acc_sum[bin] += arg == b.labels[i] ? 1.0 : 0.0;
        count[bin] += 1;
    }
    BinStats s;
    for (int m = 0; m < bins; ++m)
        if (count[m] > 0) {
            s.conf.push_back(conf_sum[m] / count[m]);
            s.acc.push_back(acc_sum[m] / count[m]);
            s.weight.push_back(static_cast<double>(count[m]) / b.count);
        }
    return s;
}

}  // namespace detail

// Expected calibration error over equal-width confidence bins.
inline double ece(const PredictiveBatch& b, int bins = 15) {
    const detail::BinStats s = detail::calibration_bins(b, bins);
    double acc = 0.0;
    for (std::size_t m = 0; m < s.conf.size(); ++m)
        acc += s.weight[m] * std::abs(s.acc[m] - s.conf[m]);
    return acc;
}

// Maximum calibration error over nonempty bins.
inline double mce(const PredictiveBatch& b, int bins = 15) {
    const detail::BinStats s = detail::calibration_bins(b, bins);
    double worst = 0.0;
    for (std::size_t m = 0; m < s.conf.size(); ++m)
        worst = std::max(worst, std::abs(s.acc[m] - s.conf[m]));
    return worst;
}

// Area under the ROC curve for separating ID from OOD scores, where ID
// points are expected to score higher.  Midrank statistic: ties count half.
inline double auroc(const std::vector<double>& id_scores, const std::vector<double>& ood_scores) {
    if (id_scores.empty() || ood_scores.empty()) throw std::invalid_argument("empty score set");
    struct Entry {
        double score;
        bool id;
    };
    std::vector<Entry> all;
    all.reserve(id_scores.size() + ood_scores.size());
    for (double s : id_scores) all.push_back({s, true});
    for (double s : ood_scores) all.push_back({s, false});
    std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });
    // Sum of ID midranks.
    double rank_sum = 0.0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        while (j < all.size() && all[j].score == all[i].score) ++j;
        const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t k = i; k < j; ++k)
            if (all[k].id) rank_sum += midrank;
        i = j;
    }
    const double n1 = static_cast<double>(id_scores.size());
    const double n0 = static_cast<double>(ood_scores.size());
    return (rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0);
}

// Fraction of OOD scores at or above the detection threshold that keeps 95%
// of ID scores detected; the threshold is the lower-nearest-rank 5th
// percentile of the ID scores.
inline double fpr_at_95tpr(const std::vector<double>& id_scores,
                           const std::vector<double>& ood_scores) {
    if (id_scores.empty() || ood_scores.empty()) throw std::invalid_argument("empty score set");
    std::vector<double> sorted = id_scores;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    std::size_t rank = static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(n)));
    if (rank > 0) --rank;  // nearest-rank index, clamped to the lowest score
    const double threshold = sorted[rank];
    std::size_t hits = 0;
    for (double s : ood_scores)
        if (s >= threshold) ++hits;
    return static_cast<double>(hits) / static_cast<double>(ood_scores.size());
}

}  // namespace spectral
