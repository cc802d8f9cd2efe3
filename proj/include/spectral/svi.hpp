#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spectral/layers.hpp"
#include "spectral/layout.hpp"
#include "spectral/prior.hpp"
#include "spectral/rng.hpp"
#include "spectral/tape.hpp"

namespace spectral {

struct Dataset {
    std::vector<double> X;  // count x dim, row-major
    std::vector<int> y;     // empty when unlabeled
    int count = 0;
    int dim = 0;
};

// Balanced Gaussian blobs around well-separated class centers; linearly
// separable once separation is a few noise standard deviations.
inline Dataset make_blobs(int count, int dim, int classes, double separation, RngStream& rng) {
    std::vector<std::vector<double>> centers(classes, std::vector<double>(dim));
    for (auto& c : centers) {
        double norm = 0.0;
        for (auto& v : c) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (auto& v : c) v = separation * v / norm;
    }
    Dataset d;
    d.count = count;
    d.dim = dim;
    d.X.resize(static_cast<std::size_t>(count) * dim);
    d.y.resize(count);
    for (int s = 0; s < count; ++s) {
        const int label = s % classes;
        d.y[s] = label;
        for (int i = 0; i < dim; ++i)
            d.X[static_cast<std::size_t>(s) * dim + i] = centers[label][i] + rng.normal();
    }
    return d;
}

// Architecture: spectral layer -> tanh -> dense head -> softmax, with the
// layer's transfer function under the radial-profile prior.
struct ModelSpec {
    enum class Kind { Circulant1D, Bccb2D };
    Kind kind = Kind::Circulant1D;

    int n = 0;             // 1D signal length
    int mask_bins = -1;    // 1D low-frequency cutoff; -1 unmasked

    int height = 0, width = 0;
    int c_in = 1, c_out = 1;
    double radial_cutoff = -1.0;

    int classes = 2;
    bool layer_bias = true;

    double sigma0_sq = 1.0;
    double alpha = 2.0;
    bool learn_alpha = true;

    bool two_dim() const { return kind == Kind::Bccb2D; }
    int input_dim() const { return two_dim() ? c_in * height * width : n; }
    int feature_dim() const { return two_dim() ? c_out * height * width : n; }
    int planes() const { return two_dim() ? c_in * c_out : 1; }
    int bias_dim() const { return layer_bias ? (two_dim() ? c_out : 1) : 0; }
    CoordLayout plane_layout() const {
        return two_dim() ? layout_bccb(height, width, radial_cutoff) : layout_circulant(n, mask_bins);
    }
    int spectral_dim() const { return planes() * plane_layout().d_eff; }
};

// Constrained view of the spectral-site posterior.
struct LowRankGaussian {
    std::vector<double> mu;      // d
    std::vector<double> U;       // d x r
    std::vector<double> lambda;  // r, positive
    std::vector<double> sigma;   // d, positive
    double eps = 1e-5;
    int d = 0, r = 0;
};

// a = mu + U (lambda . xi) + sigma . zeta; the eps jitter regularizes the
// density, not the sampler.  Draw order: xi then zeta.
inline std::vector<double> sample_lowrank(const LowRankGaussian& q, RngStream& rng) {
    std::vector<double> xi(q.r), a(q.mu);
    for (auto& v : xi) v = rng.normal();
    for (int j = 0; j < q.r; ++j) xi[j] *= q.lambda[j];
    for (int i = 0; i < q.d; ++i) {
        double acc = 0.0;
        for (int j = 0; j < q.r; ++j) acc += q.U[static_cast<std::size_t>(i) * q.r + j] * xi[j];
        a[i] += acc;
    }
    for (int i = 0; i < q.d; ++i) a[i] += q.sigma[i] * rng.normal();
    return a;
}

inline double softplus_inv(double y) {
    if (y <= 0.0) throw std::invalid_argument("softplus inverse needs a positive argument");
    return y > 30.0 ? y : std::log(std::expm1(y));
}

// Unconstrained guide parameters.  sigma and lambda pass through
// softplus(z) + 1e-6; alpha through a bare softplus.
struct SpectralGuide {
    std::vector<double> mu;        // d
    std::vector<double> U;         // d x r
    std::vector<double> lambda_z;  // r
    std::vector<double> sigma_z;   // d
    int d = 0, r = 0;
    double eps = 1e-5;
};

struct MeanFieldGuide {
    std::vector<double> mu;
    std::vector<double> sigma_z;
};

struct Guides {
    SpectralGuide spec;
    MeanFieldGuide head_w, head_b;
    MeanFieldGuide layer_bias;  // empty when the model has no layer bias
    MeanFieldGuide alpha;       // empty when alpha is fixed
};

inline constexpr double kSoftplusFloor = 1e-6;

inline double constrain_positive(double z) { return detail::softplus(z) + kSoftplusFloor; }

inline LowRankGaussian constrained(const SpectralGuide& g) {
    LowRankGaussian q;
    q.mu = g.mu;
    q.U = g.U;
    q.d = g.d;
    q.r = g.r;
    q.eps = g.eps;
    q.lambda.resize(g.r);
    q.sigma.resize(g.d);
    for (int j = 0; j < g.r; ++j) q.lambda[j] = constrain_positive(g.lambda_z[j]);
    for (int i = 0; i < g.d; ++i) q.sigma[i] = constrain_positive(g.sigma_z[i]);
    return q;
}

// Prior variances on the full spectral block: the per-plane diagonal tiled
// across planes.
inline std::vector<double> tiled_prior_tau(const ModelSpec& m, const CoordLayout& layout,
                                           double alpha) {
    const PriorDiag base = prior_variances(SpectrumProfile{m.sigma0_sq, alpha}, layout);
    std::vector<double> tau;
    tau.reserve(static_cast<std::size_t>(m.planes()) * base.tau_sq.size());
    for (int p = 0; p < m.planes(); ++p)
        tau.insert(tau.end(), base.tau_sq.begin(), base.tau_sq.end());
    return tau;
}

// Posterior initialization: mean at a damped prior draw, scales at 5% of the
// prior scale, low-rank factor at variance 1/(d*r).  Normal draw order: spec
// mean, then U, then head weight means.
inline Guides init_guides(const ModelSpec& m, int rank, double eps, RngStream& rng) {
    const CoordLayout layout = m.plane_layout();
    const std::vector<double> tau = tiled_prior_tau(m, layout, m.alpha);
    const int d = m.spectral_dim();
    const int feat = m.feature_dim();
    Guides g;
    g.spec.d = d;
    g.spec.r = rank;
    g.spec.eps = eps;
    g.spec.mu.resize(d);
    for (int i = 0; i < d; ++i) g.spec.mu[i] = 0.1 * std::sqrt(tau[i]) * rng.normal();
    g.spec.U.resize(static_cast<std::size_t>(d) * rank);
    const double u_sd = 1.0 / std::sqrt(static_cast<double>(d) * rank);
    for (auto& v : g.spec.U) v = u_sd * rng.normal();
    g.spec.lambda_z.assign(rank, softplus_inv(0.05));
    g.spec.sigma_z.resize(d);
    for (int i = 0; i < d; ++i)
        g.spec.sigma_z[i] = softplus_inv(std::max(0.05 * std::sqrt(tau[i]) - kSoftplusFloor, 1e-8));

    g.head_w.mu.resize(static_cast<std::size_t>(m.classes) * feat);
    const double w_sd = 1.0 / std::sqrt(static_cast<double>(feat));
    for (auto& v : g.head_w.mu) v = w_sd * rng.normal();
    g.head_w.sigma_z.assign(g.head_w.mu.size(), softplus_inv(0.05));
    g.head_b.mu.assign(m.classes, 0.0);
    g.head_b.sigma_z.assign(m.classes, softplus_inv(0.05));
    if (m.bias_dim() > 0) {
        g.layer_bias.mu.assign(m.bias_dim(), 0.0);
        g.layer_bias.sigma_z.assign(m.bias_dim(), softplus_inv(0.05));
    }
    if (m.learn_alpha) {
        g.alpha.mu.assign(1, softplus_inv(m.alpha));
        g.alpha.sigma_z.assign(1, softplus_inv(0.05));
    }
    return g;
}

// Correctly shaped zero guides for deserialization.
inline Guides shaped_guides(const ModelSpec& m, int rank, double eps) {
    Guides g;
    const int d = m.spectral_dim();
    g.spec.d = d;
    g.spec.r = rank;
    g.spec.eps = eps;
    g.spec.mu.assign(d, 0.0);
    g.spec.U.assign(static_cast<std::size_t>(d) * rank, 0.0);
    g.spec.lambda_z.assign(rank, 0.0);
    g.spec.sigma_z.assign(d, 0.0);
    g.head_w.mu.assign(static_cast<std::size_t>(m.classes) * m.feature_dim(), 0.0);
    g.head_w.sigma_z = g.head_w.mu;
    g.head_b.mu.assign(m.classes, 0.0);
    g.head_b.sigma_z = g.head_b.mu;
    if (m.bias_dim() > 0) {
        g.layer_bias.mu.assign(m.bias_dim(), 0.0);
        g.layer_bias.sigma_z = g.layer_bias.mu;
    }
    if (m.learn_alpha) {
        g.alpha.mu.assign(1, 0.0);
        g.alpha.sigma_z = g.alpha.mu;
    }
    return g;
}

// Fixed block enumeration shared by the optimizer, checkpoints, and the ELBO
// graph's leaf ordering.
template <class G, class F>
inline void for_each_block(const ModelSpec& m, G& g, F&& f) {
    f("spectral.mu", g.spec.mu);
    f("spectral.U", g.spec.U);
    f("spectral.lambda_z", g.spec.lambda_z);
    f("spectral.sigma_z", g.spec.sigma_z);
    f("head_weight.mu", g.head_w.mu);
    f("head_weight.sigma_z", g.head_w.sigma_z);
    f("head_bias.mu", g.head_b.mu);
    f("head_bias.sigma_z", g.head_b.sigma_z);
    if (m.bias_dim() > 0) {
        f("layer_bias.mu", g.layer_bias.mu);
        f("layer_bias.sigma_z", g.layer_bias.sigma_z);
    }
    if (m.learn_alpha) {
        f("alpha.mu", g.alpha.mu);
        f("alpha.sigma_z", g.alpha.sigma_z);
    }
}

struct ElboGraph {
    Tape::Id elbo = 0;
    Tape::Id loglik = 0;       // minibatch log-likelihood rescaled to dataset scale
    Tape::Id kl_spectral = 0;  // averaged over MC draws (alpha is sampled per draw)
    Tape::Id kl_base = 0;
    std::vector<Tape::Id> leaves;  // one per block, in for_each_block order
};

// Builds the ELBO graph for one minibatch.  Per MC draw the noise stream is
// consumed in a fixed order: alpha (if learned), xi, spectral zeta, layer
// bias, head weights, head bias.  The caller owns X, y, and layout for the
// tape's lifetime.
inline ElboGraph build_elbo(Tape& t, const ModelSpec& m, const Guides& g, const CoordLayout& layout,
                            const std::vector<double>& X, const std::vector<int>& y, int batch,
                            double data_scale, int n_mc, RngStream& noise) {
    if (batch <= 0 || X.empty()) throw std::invalid_argument("empty batch");
    if (static_cast<int>(y.size()) != batch ||
        X.size() != static_cast<std::size_t>(batch) * m.input_dim())
        throw std::invalid_argument("coordinate length mismatch");
    if (n_mc < 1) throw std::invalid_argument("n_mc must be at least 1");

    const int d = m.spectral_dim();
    const int r = g.spec.r;
    const int feat = m.feature_dim();
    const int K = m.classes;

    ElboGraph eg;
    const Tape::Id mu = t.leaf(g.spec.mu);
    const Tape::Id U = t.leaf(g.spec.U);
    const Tape::Id lam_z = t.leaf(g.spec.lambda_z);
    const Tape::Id sig_z = t.leaf(g.spec.sigma_z);
    const Tape::Id hw_mu = t.leaf(g.head_w.mu);
    const Tape::Id hw_sz = t.leaf(g.head_w.sigma_z);
    const Tape::Id hb_mu = t.leaf(g.head_b.mu);
    const Tape::Id hb_sz = t.leaf(g.head_b.sigma_z);
    eg.leaves = {mu, U, lam_z, sig_z, hw_mu, hw_sz, hb_mu, hb_sz};
    Tape::Id lb_mu = -1, lb_sz = -1, al_mu = -1, al_sz = -1;
    if (m.bias_dim() > 0) {
        lb_mu = t.leaf(g.layer_bias.mu);
        lb_sz = t.leaf(g.layer_bias.sigma_z);
        eg.leaves.push_back(lb_mu);
        eg.leaves.push_back(lb_sz);
    }
    if (m.learn_alpha) {
        al_mu = t.leaf(g.alpha.mu);
        al_sz = t.leaf(g.alpha.sigma_z);
        eg.leaves.push_back(al_mu);
        eg.leaves.push_back(al_sz);
    }

    const Tape::Id lam = t.shift(t.softplus_(lam_z), kSoftplusFloor);
    const Tape::Id sig = t.shift(t.softplus_(sig_z), kSoftplusFloor);
    const Tape::Id hw_sigma = t.shift(t.softplus_(hw_sz), kSoftplusFloor);
    const Tape::Id hb_sigma = t.shift(t.softplus_(hb_sz), kSoftplusFloor);
    Tape::Id lb_sigma = -1, al_sigma = -1;
    if (lb_sz >= 0) lb_sigma = t.shift(t.softplus_(lb_sz), kSoftplusFloor);
    if (al_sz >= 0) al_sigma = t.shift(t.softplus_(al_sz), kSoftplusFloor);

    // Mean-field KL of every base block against a standard normal prior on
    // the unconstrained scale.
    auto meanfield = [&](Tape::Id mu_id, Tape::Id sigma_id, std::size_t len) {
        OpAttrs a;
        a.reals.assign(len, 1.0);
        return t.record("meanfield_kl", {mu_id, sigma_id}, a);
    };
    Tape::Id kl_base = meanfield(hw_mu, hw_sigma, g.head_w.mu.size());
    kl_base = t.add(kl_base, meanfield(hb_mu, hb_sigma, g.head_b.mu.size()));
    if (lb_mu >= 0) kl_base = t.add(kl_base, meanfield(lb_mu, lb_sigma, g.layer_bias.mu.size()));
    if (al_mu >= 0) kl_base = t.add(kl_base, meanfield(al_mu, al_sigma, 1));

    const Tape::Id Xc = t.constant(X);
    std::vector<double> fixed_tau;
    if (!m.learn_alpha) fixed_tau = tiled_prior_tau(m, layout, m.alpha);

    auto draw_const = [&](int count) {
        std::vector<double> v(count);
        for (auto& x : v) x = noise.normal();
        return t.constant(std::move(v));
    };

    Tape::Id ll_acc = -1, kl_acc = -1;
    for (int s = 0; s < n_mc; ++s) {
        Tape::Id tau;
        if (m.learn_alpha) {
            const Tape::Id az = t.add(al_mu, t.record("mul", {al_sigma, draw_const(1)}));
            const Tape::Id alpha_con = t.softplus_(az);
            OpAttrs pa;
            pa.layout = &layout;
            pa.reals = {m.sigma0_sq};
            pa.ints = {m.planes()};
            tau = t.record("profile_tau", {alpha_con}, pa);
        } else {
            tau = t.constant(fixed_tau);
        }

        OpAttrs mv;
        mv.ints = {d, r};
        const Tape::Id a_sample =
            t.add(t.add(mu, t.record("matvec", {U, t.mul(lam, draw_const(r))}, mv)),
                  t.mul(sig, draw_const(d)));

        Tape::Id features;
        if (m.two_dim()) {
            OpAttrs ba;
            ba.ints = {batch, m.height, m.width, m.c_in, m.c_out};
            ba.layout = &layout;
            features = t.record("bccb2d", {a_sample, Xc}, ba);
        } else {
            OpAttrs sa;
            sa.ints = {batch};
            sa.layout = &layout;
            features = t.record("spectral1d", {a_sample, Xc}, sa);
        }
        if (m.bias_dim() > 0) {
            const Tape::Id bias = t.add(lb_mu, t.mul(lb_sigma, draw_const(m.bias_dim())));
            if (m.two_dim()) {
                OpAttrs ca;
                ca.ints = {batch, m.c_out, m.height * m.width};
                features = t.record("add_channel_bias", {features, bias}, ca);
            } else {
                features = t.record("add_scalar", {features, bias});
            }
        }
        const Tape::Id hidden = t.tanh_(features);

        const Tape::Id W = t.add(hw_mu, t.mul(hw_sigma, draw_const(K * feat)));
        const Tape::Id b = t.add(hb_mu, t.mul(hb_sigma, draw_const(K)));
        OpAttrs fa;
        fa.ints = {batch, feat, K};
        const Tape::Id logits = t.record("affine", {hidden, W, b}, fa);
        OpAttrs la;
        la.ints = {batch, K};
        const Tape::Id lsm = t.record("log_softmax", {logits}, la);
        OpAttrs pk;
        pk.ints = {batch, K};
        pk.labels = &y;
        const Tape::Id ll = t.scale(t.sum(t.record("pick", {lsm}, pk)), data_scale);

        OpAttrs ka;
        ka.ints = {d, r};
        ka.reals = {g.spec.eps};
        const Tape::Id kl_s = t.record("lowrank_kl", {mu, U, lam, sig, tau}, ka);

        ll_acc = s == 0 ? ll : t.add(ll_acc, ll);
        kl_acc = s == 0 ? kl_s : t.add(kl_acc, kl_s);
    }
    eg.loglik = n_mc == 1 ? ll_acc : t.scale(ll_acc, 1.0 / n_mc);
    eg.kl_spectral = n_mc == 1 ? kl_acc : t.scale(kl_acc, 1.0 / n_mc);
    eg.kl_base = kl_base;
    eg.elbo = t.sub(t.sub(eg.loglik, eg.kl_spectral), kl_base);
    return eg;
}

struct ElboParts {
    double elbo = 0.0, loglik = 0.0, kl_spectral = 0.0, kl_base = 0.0;
};

inline ElboParts elbo_parts(const ModelSpec& m, const Guides& g, const std::vector<double>& X,
                            const std::vector<int>& y, int batch, double data_scale, int n_mc,
                            RngStream& noise) {
    Tape t;
    const CoordLayout layout = m.plane_layout();
    const ElboGraph eg = build_elbo(t, m, g, layout, X, y, batch, data_scale, n_mc, noise);
    return {t.value(eg.elbo)[0], t.value(eg.loglik)[0], t.value(eg.kl_spectral)[0],
            t.value(eg.kl_base)[0]};
}

struct AdamConfig {
    double lr = 1e-2;
    double beta1 = 0.9, beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<double> m, v;
    long long t = 0;
};

// Standard bias-corrected Adam minimization step.
inline void adam_step(std::vector<double>& p, const std::vector<double>& grad, AdamState& s,
                      const AdamConfig& cfg) {
    if (s.m.size() != p.size()) {
        s.m.assign(p.size(), 0.0);
        s.v.assign(p.size(), 0.0);
    }
    s.t += 1;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < p.size(); ++i) {
        s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * grad[i];
        s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double mh = s.m[i] / c1;
        const double vh = s.v[i] / c2;
        p[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
}

struct TrainConfig {
    int steps = 1000;
    int batch = 128;
    int n_mc = 1;
    int rank = 8;
    double eps = 1e-5;
    AdamConfig adam;
    std::uint64_t seed = 0;
};

struct TrainingDiverged : std::runtime_error {
    explicit TrainingDiverged(std::vector<double> t)
        : std::runtime_error("ELBO diverged (non-finite)"), trace(std::move(t)) {}
    std::vector<double> trace;
};

struct TrainResult {
    Guides guides;
    std::vector<double> elbo_trace;
    std::array<std::uint64_t, 4> noise_state{};
    std::array<std::uint64_t, 4> batch_state{};
};

// One SVI step: sample the spectral site and base parameters by
// reparameterization, run the forward pass for the minibatch log-likelihood,
// add the closed-form KLs, and take an Adam step on all guide parameters.
// Minibatches are drawn uniformly with replacement.
inline TrainResult train(const ModelSpec& m, const Dataset& data, const TrainConfig& cfg) {
    if (data.count <= 0) throw std::invalid_argument("empty batch");
    RngStream master(cfg.seed);
    RngStream init_rng = master.split(0);
    RngStream batch_rng = master.split(1);
    RngStream noise_rng = master.split(2);

    TrainResult out;
    out.guides = init_guides(m, cfg.rank, cfg.eps, init_rng);
    const CoordLayout layout = m.plane_layout();

    std::vector<std::vector<double>*> blocks;
    for_each_block(m, out.guides, [&](const char*, std::vector<double>& v) { blocks.push_back(&v); });
    std::vector<AdamState> adam(blocks.size());

    const int B = std::min(cfg.batch, data.count);
    std::vector<double> Xb(static_cast<std::size_t>(B) * data.dim);
    std::vector<int> yb(B);
    std::vector<double> neg;
    for (int step = 0; step < cfg.steps; ++step) {
        for (int j = 0; j < B; ++j) {
            const int idx = static_cast<int>(batch_rng.below(static_cast<std::uint64_t>(data.count)));
            std::copy(data.X.begin() + static_cast<std::size_t>(idx) * data.dim,
                      data.X.begin() + static_cast<std::size_t>(idx + 1) * data.dim,
                      Xb.begin() + static_cast<std::size_t>(j) * data.dim);
            yb[j] = data.y[idx];
        }
        Tape tape;
        ElboGraph eg;
        double elbo;
        // A KL overflow mid-step means the step's ELBO is -inf; surface it as
        // divergence with the trace up to this step.
        try {
            eg = build_elbo(tape, m, out.guides, layout, Xb, yb, B,
                            static_cast<double>(data.count) / B, cfg.n_mc, noise_rng);
            elbo = tape.value(eg.elbo)[0];
        } catch (const std::runtime_error& e) {
            if (std::string(e.what()) == "KL overflow") {
                out.elbo_trace.push_back(-std::numeric_limits<double>::infinity());
                throw TrainingDiverged(out.elbo_trace);
            }
            throw;
        }
        if (!std::isfinite(elbo)) {
            out.elbo_trace.push_back(elbo);
            throw TrainingDiverged(out.elbo_trace);
        }
        tape.backward(eg.elbo);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const auto& grad = tape.grad(eg.leaves[i]);
            neg.assign(grad.size(), 0.0);
            for (std::size_t j = 0; j < grad.size(); ++j) neg[j] = -grad[j];
            adam_step(*blocks[i], neg, adam[i], cfg.adam);
        }
        out.elbo_trace.push_back(elbo);
    }
    out.noise_state = noise_rng.save_state();
    out.batch_state = batch_rng.save_state();
    return out;
}

// Deterministic forward pass at fixed parameter values: spectral layer (+
// bias) -> tanh -> dense head.  Returns count x classes logits.
inline std::vector<double> model_logits(const ModelSpec& m, const CoordLayout& layout,
                                        const std::vector<double>& a,
                                        const std::vector<double>& layer_bias,
                                        const std::vector<double>& W, const std::vector<double>& b,
                                        const std::vector<double>& X, int count) {
    const int feat = m.feature_dim();
    const int K = m.classes;
    std::vector<double> features;
    if (m.two_dim()) {
        SpectralBccb2D layer;
        layer.height = m.height;
        layer.width = m.width;
        layer.c_in = m.c_in;
        layer.c_out = m.c_out;
        layer.radial_cutoff = m.radial_cutoff;
        layer.has_bias = m.layer_bias;
        layer.bias = layer_bias;
        const int dp = layout.d_eff;
        for (int p = 0; p < m.planes(); ++p) {
            std::vector<double> slice(a.begin() + static_cast<std::size_t>(p) * dp,
                                      a.begin() + static_cast<std::size_t>(p + 1) * dp);
            layer.planes.push_back(unpack_bccb(slice, layout));
        }
        features = bccb_layer_forward(layer, X, count);
    } else {
        SpectralCirculant1D layer;
        layer.h = unpack_circulant(a, layout);
        layer.mask_bins = m.mask_bins;
        layer.has_bias = m.layer_bias;
        layer.bias = layer_bias.empty() ? 0.0 : layer_bias[0];
        features = circulant_layer_forward(layer, X, count);
    }
    for (auto& v : features) v = std::tanh(v);
    std::vector<double> logits(static_cast<std::size_t>(count) * K);
    for (int i = 0; i < count; ++i) {
        const double* h = features.data() + static_cast<std::size_t>(i) * feat;
        for (int k = 0; k < K; ++k) {
            double acc = b[k];
            for (int j = 0; j < feat; ++j) acc += h[j] * W[static_cast<std::size_t>(k) * feat + j];
            logits[static_cast<std::size_t>(i) * K + k] = acc;
        }
    }
    return logits;
}

// Posterior-averaged class probabilities, n_mc samples per input batch.
// Likelihood parameters only are sampled (alpha shapes the prior, not the
// forward map); draw order matches the likelihood part of training draws.
inline std::vector<double> predictive_probs(const ModelSpec& m, const Guides& g,
                                            const std::vector<double>& X, int count, int n_mc,
                                            RngStream& rng) {
    const CoordLayout layout = m.plane_layout();
    const LowRankGaussian q = constrained(g.spec);
    const int K = m.classes;
    std::vector<double> probs(static_cast<std::size_t>(count) * K, 0.0);
    std::vector<double> W(g.head_w.mu.size()), b(g.head_b.mu.size()), bias(m.bias_dim());
    for (int s = 0; s < n_mc; ++s) {
        const std::vector<double> a = sample_lowrank(q, rng);
        for (int i = 0; i < m.bias_dim(); ++i)
            bias[i] = g.layer_bias.mu[i] + constrain_positive(g.layer_bias.sigma_z[i]) * rng.normal();
        for (std::size_t i = 0; i < W.size(); ++i)
            W[i] = g.head_w.mu[i] + constrain_positive(g.head_w.sigma_z[i]) * rng.normal();
        for (std::size_t i = 0; i < b.size(); ++i)
            b[i] = g.head_b.mu[i] + constrain_positive(g.head_b.sigma_z[i]) * rng.normal();
        const std::vector<double> logits = model_logits(m, layout, a, bias, W, b, X, count);
        for (int i = 0; i < count; ++i) {
            const double* row = logits.data() + static_cast<std::size_t>(i) * K;
            double best = row[0];
            for (int k = 1; k < K; ++k) best = std::max(best, row[k]);
            double z = 0.0;
            for (int k = 0; k < K; ++k) z += std::exp(row[k] - best);
            for (int k = 0; k < K; ++k)
                probs[static_cast<std::size_t>(i) * K + k] += std::exp(row[k] - best) / z;
        }
    }
    for (auto& v : probs) v /= n_mc;
    return probs;
}

inline double accuracy(const std::vector<double>& probs, const std::vector<int>& labels, int count,
                       int classes) {
    int hits = 0;
    for (int i = 0; i < count; ++i) {
        int arg = 0;
        for (int k = 1; k < classes; ++k)
            if (probs[static_cast<std::size_t>(i) * classes + k] >
                probs[static_cast<std::size_t>(i) * classes + arg])
                arg = k;
        if (arg == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / count;
}

}  // namespace spectral
