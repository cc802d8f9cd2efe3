// Acceptance gate: one line per criterion, PASS or FAIL, nonzero exit on any
// failure.  Each check recomputes its reference from scratch (dense linear
// algebra, Monte Carlo, finite differences, pair counting) rather than
// trusting library internals.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spectral/cli.hpp"
#include "spectral/dense.hpp"

using namespace spectral;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void criterion(const std::string& name, const std::function<bool(std::string&)>& f) {
    std::string detail;
    bool ok = false;
    try {
        ok = f(detail);
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
        ok = false;
    }
    std::printf("%s - %s%s%s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.empty() ? "" : ": ",
                detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::vector<double> random_vec(int n, RngStream& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
    return v;
}

double max_singular_value(const std::vector<double>& flat, int rows, int cols) {
    Eigen::MatrixXd M(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) M(i, j) = flat[static_cast<std::size_t>(i) * cols + j];
    Eigen::BDCSVD<Eigen::MatrixXd> svd(M);
    return svd.singularValues()(0);
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Shared state between criteria 1 and 2, which use the same instance set.
struct OperatorErrors {
    double forward = 0.0;
    double norm = 0.0;
    bool ran = false;
};

OperatorErrors operator_errors() {
    OperatorErrors err;
    RngStream rng(101);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 4 + static_cast<int>(rng.below(61));
        const CoordLayout lay = layout_circulant(n);
        SpectralCirculant1D layer;
        layer.h = unpack_circulant(random_vec(lay.d_eff, rng), lay);
        layer.has_bias = false;
        const std::vector<double> x = random_vec(n, rng);
        const std::vector<double> fast = circulant_layer_forward(layer, x, 1);
        const std::vector<double> C = circulant_dense(layer.h);
        const std::vector<double> slow = dense_matvec(C, x, n, n);
        for (int i = 0; i < n; ++i) err.forward = std::max(err.forward, std::abs(fast[i] - slow[i]));
        err.norm = std::max(err.norm,
                            std::abs(spectral_norm_1d(layer.h) - max_singular_value(C, n, n)));
    }
    for (int trial = 0; trial < 200; ++trial) {
        const int h = 8, w = 8, hw = h * w;
        const int c_in = 1 + static_cast<int>(rng.below(3));
        const int c_out = 1 + static_cast<int>(rng.below(3));
        const CoordLayout lay = layout_bccb(h, w);
        SpectralBccb2D layer;
        layer.height = h;
        layer.width = w;
        layer.c_in = c_in;
        layer.c_out = c_out;
        layer.has_bias = false;
        for (int p = 0; p < c_in * c_out; ++p)
            layer.planes.push_back(unpack_bccb(random_vec(lay.d_eff, rng), lay));
        const std::vector<double> x = random_vec(c_in * hw, rng);
        const std::vector<double> fast = bccb_layer_forward(layer, x, 1);

        const int rows = c_out * hw, cols = c_in * hw;
        std::vector<double> dense(static_cast<std::size_t>(rows) * cols, 0.0);
        for (int o = 0; o < c_out; ++o)
            for (int c = 0; c < c_in; ++c) {
                const std::vector<double> block = bccb_dense(layer.plane(o, c));
                for (int i = 0; i < hw; ++i)
                    for (int j = 0; j < hw; ++j)
                        dense[static_cast<std::size_t>(o * hw + i) * cols + c * hw + j] =
                            block[static_cast<std::size_t>(i) * hw + j];
            }
        const std::vector<double> slow = dense_matvec(dense, x, rows, cols);
        for (int i = 0; i < rows; ++i)
            err.forward = std::max(err.forward, std::abs(fast[i] - slow[i]));
        err.norm = std::max(err.norm, std::abs(spectral_norm_2d(layer.planes, c_in, c_out) -
                                               max_singular_value(dense, rows, cols)));
    }
    err.ran = true;
    return err;
}

// Mean and standard error of per-sample products against a reference, worst
// z-score over the requested lags.
struct LagCheck {
    double worst_z = 0.0;
    bool all_within(double z) const { return worst_z <= z; }
};

LagCheck covariance_check_1d(const SpectrumProfile& p, int n, int samples, RngStream& rng) {
    const std::vector<double> want = prior_covariance_1d(p, n);
    std::vector<double> sum(n, 0.0), sumsq(n, 0.0);
    for (int s = 0; s < samples; ++s) {
        const std::vector<double> w = sample_filter_1d(p, n, rng);
        for (int t = 0; t < n; ++t) {
            const double prod = w[0] * w[t];
            sum[t] += prod;
            sumsq[t] += prod * prod;
        }
    }
    LagCheck out;
    for (int t = 0; t < n; ++t) {
        const double mean = sum[t] / samples;
        const double var = (sumsq[t] - samples * mean * mean) / (samples - 1);
        const double se = std::sqrt(var / samples);
        out.worst_z = std::max(out.worst_z, std::abs(mean - want[t]) / se);
    }
    return out;
}

LagCheck covariance_check_2d(const SpectrumProfile& p, int h, int w, int samples,
                             const std::vector<std::pair<int, int>>& lags, RngStream& rng) {
    const std::vector<double> want = prior_covariance_2d(p, h, w);
    std::vector<double> sum(lags.size(), 0.0), sumsq(lags.size(), 0.0);
    for (int s = 0; s < samples; ++s) {
        const std::vector<double> f = sample_field_2d(p, h, w, rng);
        for (std::size_t i = 0; i < lags.size(); ++i) {
            const double prod = f[0] * f[static_cast<std::size_t>(lags[i].first) * w + lags[i].second];
            sum[i] += prod;
            sumsq[i] += prod * prod;
        }
    }
    LagCheck out;
    for (std::size_t i = 0; i < lags.size(); ++i) {
        const double mean = sum[i] / samples;
        const double var = (sumsq[i] - samples * mean * mean) / (samples - 1);
        const double se = std::sqrt(var / samples);
        const double ref = want[static_cast<std::size_t>(lags[i].first) * w + lags[i].second];
        out.worst_z = std::max(out.worst_z, std::abs(mean - ref) / se);
    }
    return out;
}

double dense_kl(const std::vector<double>& mu, const std::vector<double>& U,
                const std::vector<double>& lam, const std::vector<double>& sig,
                const std::vector<double>& tau_sq, double eps, int d, int r) {
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            double v = 0.0;
            for (int k = 0; k < r; ++k)
                v += U[static_cast<std::size_t>(i) * r + k] * lam[k] * lam[k] *
                     U[static_cast<std::size_t>(j) * r + k];
            S(i, j) = v;
        }
    for (int i = 0; i < d; ++i) S(i, i) += sig[i] * sig[i] + eps;
    double trace = 0.0, mahal = 0.0, log_tau = 0.0;
    for (int i = 0; i < d; ++i) {
        trace += S(i, i) / tau_sq[i];
        mahal += mu[i] * mu[i] / tau_sq[i];
        log_tau += std::log(tau_sq[i]);
    }
    const double logdet_s = std::log(S.llt().matrixL().determinant()) * 2.0;
    return 0.5 * (trace + mahal - d + log_tau - logdet_s);
}

// Weighted-output probe for one registered op; returns the worst ratio of
// |fd - analytic| to the permitted tolerance (so < 1 passes).
struct OpProbe {
    std::string op;
    std::vector<std::vector<double>> inputs;
    OpAttrs attrs;
    std::vector<double> weights;

    double eval(const std::vector<std::vector<double>>& ins) {
        Tape t;
        std::vector<Tape::Id> ids;
        for (const auto& v : ins) ids.push_back(t.leaf(v));
        const Tape::Id out = t.record(op, ids, attrs);
        if (weights.empty()) {
            RngStream wr(99);
            weights = random_vec(static_cast<int>(t.value(out).size()), wr);
        }
        double s = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * t.value(out)[i];
        return s;
    }

    double worst_ratio() {
        Tape t;
        std::vector<Tape::Id> ids;
        for (const auto& v : inputs) ids.push_back(t.leaf(v));
        const Tape::Id out = t.record(op, ids, attrs);
        eval(inputs);
        const Tape::Id w = t.constant(weights);
        const Tape::Id root = t.record("sum", {t.record("mul", {out, w})});
        t.backward(root);
        const double h = 1e-5;
        double worst = 0.0;
        for (std::size_t p = 0; p < inputs.size(); ++p) {
            const auto& an = t.grad(ids[p]);
            for (std::size_t i = 0; i < inputs[p].size(); ++i) {
                auto up = inputs, dn = inputs;
                up[p][i] += h;
                dn[p][i] -= h;
                const double fd = (eval(up) - eval(dn)) / (2.0 * h);
                const double tol = 1e-5 * std::max({std::abs(fd), std::abs(an[i]), 1e-2});
                worst = std::max(worst, std::abs(fd - an[i]) / tol);
            }
        }
        return worst;
    }
};

double elbo_at(const ModelSpec& m, const Guides& g, const Dataset& data, int n_mc,
               const RngStream& snapshot) {
    RngStream noise = snapshot;
    return elbo_parts(m, g, data.X, data.y, data.count, 1.0, n_mc, noise).elbo;
}

// Full ELBO gradient against central differences under common random numbers;
// returns the worst tolerance ratio over sampled coordinates of every block.
double elbo_gradient_ratio(const ModelSpec& m, unsigned seed, int n_mc) {
    RngStream rng(seed);
    Guides g = init_guides(m, 2, 1e-5, rng);
    Dataset data;
    data.count = 2;
    data.dim = m.input_dim();
    data.X.resize(static_cast<std::size_t>(data.count) * data.dim);
    for (auto& v : data.X) v = rng.normal();
    data.y = {0, m.classes - 1};

    const RngStream snapshot = rng.split(77);
    Tape t;
    const CoordLayout layout = m.plane_layout();
    RngStream noise = snapshot;
    const ElboGraph eg = build_elbo(t, m, g, layout, data.X, data.y, data.count, 1.0, n_mc, noise);
    t.backward(eg.elbo);

    std::vector<std::vector<double>*> blocks;
    for_each_block(m, g, [&](const char*, std::vector<double>& v) { blocks.push_back(&v); });

    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        const std::vector<double> grad = t.grad(eg.leaves[bi]);
        std::vector<double>& p = *blocks[bi];
        const std::size_t stride = std::max<std::size_t>(1, p.size() / 4);
        for (std::size_t i = 0; i < p.size(); i += stride) {
            const double keep = p[i];
            p[i] = keep + h;
            const double up = elbo_at(m, g, data, n_mc, snapshot);
            p[i] = keep - h;
            const double dn = elbo_at(m, g, data, n_mc, snapshot);
            p[i] = keep;
            const double fd = (up - dn) / (2.0 * h);
            const double tol = 1e-5 * std::max({std::abs(fd), std::abs(grad[i]), 1e-2});
            worst = std::max(worst, std::abs(fd - grad[i]) / tol);
        }
    }
    return worst;
}

double pair_count_auroc(const std::vector<double>& id, const std::vector<double>& ood) {
    double wins = 0.0;
    for (double a : id)
        for (double b : ood) {
            if (a > b)
                wins += 1.0;
            else if (a == b)
                wins += 0.5;
        }
    return wins / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

std::string slurp(const fs::path& p) { return read_file(p.string()); }

fs::path fresh_dir(const std::string& leaf) {
    const fs::path p = fs::temp_directory_path() / "spectral_acceptance" / leaf;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

bool mnist_available(const fs::path& dir) {
    return fs::exists(dir / "train-images-idx3-ubyte") &&
           fs::exists(dir / "train-labels-idx1-ubyte") &&
           fs::exists(dir / "t10k-images-idx3-ubyte") &&
           fs::exists(dir / "t10k-labels-idx1-ubyte") &&
           fs::exists(dir / "fashion" / "t10k-images-idx3-ubyte");
}

}  // namespace

int main() {
    const OperatorErrors op_err = operator_errors();

    criterion("01 circular operator forward equals dense matvec (400 instances, tol 1e-10)",
              [&](std::string& detail) {
                  std::ostringstream os;
                  os << "max abs err " << op_err.forward;
                  detail = os.str();
                  return op_err.ran && op_err.forward < 1e-10;
              });

    criterion("02 spectral norms equal dense largest singular values (tol 1e-8)",
              [&](std::string& detail) {
                  std::ostringstream os;
                  os << "max abs err " << op_err.norm;
                  detail = os.str();
                  return op_err.ran && op_err.norm < 1e-8;
              });

    criterion("03 sampled filters match the closed-form stationary covariance (3 SE)",
              [&](std::string& detail) {
                  const auto t0 = std::chrono::steady_clock::now();
                  RngStream rng(202);
                  const LagCheck flat = covariance_check_1d({2.0, 0.0}, 16, 100000, rng);
                  const LagCheck decay = covariance_check_1d({2.0, 2.0}, 16, 100000, rng);
                  const LagCheck grid =
                      covariance_check_2d({1.5, 2.0}, 8, 8, 100000,
                                          {{0, 0}, {1, 0}, {0, 1}, {1, 1}}, rng);
                  const double elapsed = seconds_since(t0);
                  std::ostringstream os;
                  os << "worst z " << std::max({flat.worst_z, decay.worst_z, grid.worst_z})
                     << ", " << elapsed << " s";
                  detail = os.str();
                  return flat.all_within(3.0) && decay.all_within(3.0) && grid.all_within(3.0) &&
                         elapsed < 60.0;
              });

    criterion("04 low-rank KL matches the dense formula (100 instances, tol 1e-10; zero at prior)",
              [&](std::string& detail) {
                  RngStream rng(303);
                  double worst = 0.0;
                  for (int trial = 0; trial < 100; ++trial) {
                      const int d = 2 + static_cast<int>(rng.below(15));
                      const int r = 1 + static_cast<int>(rng.below(4));
                      const double eps = 1e-5;
                      const auto mu = random_vec(d, rng);
                      const auto U = random_vec(d * r, rng);
                      const auto lam = random_vec(r, rng, 0.2, 1.2);
                      const auto sig = random_vec(d, rng, 0.2, 1.2);
                      const auto tau = random_vec(d, rng, 0.3, 2.0);
                      const double fast = lowrank_kl(mu, U, lam, sig, tau, eps, d, r);
                      const double slow = dense_kl(mu, U, lam, sig, tau, eps, d, r);
                      worst = std::max(worst, std::abs(fast - slow));
                  }
                  const int d = 6, r = 2;
                  const double eps = 1e-5;
                  const std::vector<double> tau = random_vec(d, rng, 0.5, 2.0);
                  std::vector<double> sig(d);
                  for (int i = 0; i < d; ++i) sig[i] = std::sqrt(tau[i] - eps);
                  const double at_prior =
                      lowrank_kl(std::vector<double>(d, 0.0), std::vector<double>(d * r, 0.0),
                                 {1.0, 1.0}, sig, tau, eps, d, r);
                  std::ostringstream os;
                  os << "max abs err " << worst << ", KL at prior " << std::abs(at_prior);
                  detail = os.str();
                  return worst < 1e-10 && std::abs(at_prior) < 1e-12;
              });

    criterion("05 per-op and full-ELBO gradients match central differences (50 configs, rel 1e-5)",
              [&](std::string& detail) {
                  RngStream rng(2024);
                  std::vector<OpProbe> probes;
                  probes.push_back({"add", {random_vec(5, rng), random_vec(5, rng)}, {}});
                  probes.push_back({"sub", {random_vec(5, rng), random_vec(5, rng)}, {}});
                  probes.push_back({"mul", {random_vec(5, rng), random_vec(5, rng)}, {}});
                  probes.push_back({"scale", {random_vec(5, rng)}, {{}, {1.7}}});
                  probes.push_back({"shift", {random_vec(5, rng)}, {{}, {-0.3}}});
                  probes.push_back({"tanh", {random_vec(6, rng)}, {}});
                  probes.push_back({"softplus", {random_vec(6, rng, -3.0, 3.0)}, {}});
                  probes.push_back({"log", {random_vec(6, rng, 0.4, 2.0)}, {}});
                  probes.push_back({"exp", {random_vec(6, rng)}, {}});
                  probes.push_back({"sum", {random_vec(7, rng)}, {}});
                  probes.push_back({"mean", {random_vec(7, rng)}, {}});
                  probes.push_back({"matvec", {random_vec(12, rng), random_vec(4, rng)}, {{3, 4}, {}}});
                  probes.push_back({"affine",
                                    {random_vec(6, rng), random_vec(12, rng), random_vec(4, rng)},
                                    {{2, 3, 4}, {}}});
                  probes.push_back({"log_softmax", {random_vec(10, rng)}, {{2, 5}, {}}});
                  static const std::vector<int> labels = {0, 2, 3};
                  {
                      OpAttrs a;
                      a.ints = {3, 4};
                      a.labels = &labels;
                      probes.push_back({"pick", {random_vec(12, rng)}, a});
                  }
                  probes.push_back({"add_scalar", {random_vec(6, rng), random_vec(1, rng)}, {}});
                  probes.push_back({"add_channel_bias",
                                    {random_vec(24, rng), random_vec(3, rng)}, {{2, 3, 4}, {}}});
                  static const CoordLayout lay6 = layout_circulant(6);
                  {
                      OpAttrs a;
                      a.ints = {2};
                      a.layout = &lay6;
                      probes.push_back({"spectral1d", {random_vec(6, rng), random_vec(12, rng)}, a});
                  }
                  static const CoordLayout lay34 = layout_bccb(3, 4);
                  {
                      OpAttrs a;
                      a.ints = {2, 3, 4, 2, 2};
                      a.layout = &lay34;
                      probes.push_back(
                          {"bccb2d", {random_vec(4 * lay34.d_eff, rng), random_vec(48, rng)}, a});
                  }
                  {
                      OpAttrs a;
                      a.ints = {6, 2};
                      a.reals = {1e-5};
                      probes.push_back({"lowrank_kl",
                                        {random_vec(6, rng), random_vec(12, rng),
                                         random_vec(2, rng, 0.3, 1.0), random_vec(6, rng, 0.3, 1.0),
                                         random_vec(6, rng, 0.4, 1.5)},
                                        a});
                  }
                  {
                      OpAttrs a;
                      a.reals = random_vec(5, rng, 0.5, 2.0);
                      probes.push_back(
                          {"meanfield_kl", {random_vec(5, rng), random_vec(5, rng, 0.3, 1.2)}, a});
                  }
                  {
                      OpAttrs a;
                      a.layout = &lay6;
                      a.reals = {1.3};
                      a.ints = {2};
                      probes.push_back({"profile_tau", {{1.7}}, a});
                  }
                  double worst = 0.0;
                  std::set<std::string> covered;
                  for (auto& p : probes) {
                      worst = std::max(worst, p.worst_ratio());
                      covered.insert(p.op);
                  }
                  for (const auto& name : Tape::registered_ops())
                      if (covered.count(name) == 0) {
                          detail = "op lacking a probe: " + name;
                          return false;
                      }

                  RngStream cfg_rng(404);
                  for (int c = 0; c < 50; ++c) {
                      ModelSpec m;
                      if (cfg_rng.below(2) == 0) {
                          m.kind = ModelSpec::Kind::Circulant1D;
                          m.n = 4 + static_cast<int>(cfg_rng.below(7));
                          if (cfg_rng.below(2) == 0)
                              m.mask_bins = 2 + static_cast<int>(cfg_rng.below(m.n / 2));
                      } else {
                          m.kind = ModelSpec::Kind::Bccb2D;
                          m.height = 2 + static_cast<int>(cfg_rng.below(3));
                          m.width = 2 + static_cast<int>(cfg_rng.below(3));
                          m.c_in = 1 + static_cast<int>(cfg_rng.below(2));
                          m.c_out = 1 + static_cast<int>(cfg_rng.below(2));
                          if (cfg_rng.below(2) == 0) m.radial_cutoff = 1.0;
                      }
                      m.classes = 2 + static_cast<int>(cfg_rng.below(3));
                      m.layer_bias = cfg_rng.below(2) == 0;
                      m.learn_alpha = cfg_rng.below(2) == 0;
                      m.alpha = 0.5 + 0.5 * static_cast<double>(cfg_rng.below(4));
                      m.sigma0_sq = 0.5 + 1.5 * cfg_rng.uniform();
                      const int n_mc = 1 + static_cast<int>(cfg_rng.below(2));
                      worst = std::max(
                          worst, elbo_gradient_ratio(m, 1000 + static_cast<unsigned>(c), n_mc));
                  }
                  std::ostringstream os;
                  os << "worst error at " << worst << "x tolerance";
                  detail = os.str();
                  return worst < 1.0;
              });

    criterion("06 prior tail bounds dominate Monte Carlo exceedance (1e5 draws)",
              [&](std::string& detail) {
                  const auto t0 = std::chrono::steady_clock::now();
                  const int n = 32, N = 100000;
                  const SpectrumProfile flat{1.0, 0.0};
                  const long long m_active =
                      static_cast<long long>(layout_circulant(n).entries.size());
                  RngStream rng(505);
                  std::vector<double> norms(N);
                  for (int s = 0; s < N; ++s)
                      norms[s] = spectral_norm_1d(sample_spectrum_1d(flat, n, rng));
                  bool ok = true;
                  std::ostringstream os;
                  for (const double t : {1.0, 2.0, 3.0}) {
                      int hits = 0;
                      for (const double v : norms)
                          if (v >= t) ++hits;
                      const double emp = static_cast<double>(hits) / N;
                      const double bound = prior_tail_bound(m_active, 1.0, t);
                      ok = ok && emp <= bound;
                      os << "t=" << t << " emp " << emp << " <= bound " << bound << "; ";
                  }
                  const NetworkTail joint = prior_tail_bound_network(
                      {{m_active, 1.0}, {m_active, 1.0}}, 0.1);
                  int violations = 0;
                  for (int s = 0; s < N; ++s) {
                      const double a = spectral_norm_1d(sample_spectrum_1d(flat, n, rng));
                      const double b = spectral_norm_1d(sample_spectrum_1d(flat, n, rng));
                      if (a >= joint.radii[0] || b >= joint.radii[1]) ++violations;
                  }
                  const double joint_emp = static_cast<double>(violations) / N;
                  const double elapsed = seconds_since(t0);
                  os << "joint emp " << joint_emp << " <= 0.1, " << elapsed << " s";
                  detail = os.str();
                  return ok && joint_emp <= 0.1 && elapsed < 60.0;
              });

    criterion("07 parameter counts reproduce the reference tables exactly",
              [&](std::string& detail) {
                  using nlohmann::json;
                  auto totals = [](const json& j) {
                      const cli_detail::CountedModel c = cli_detail::count_params(j);
                      return std::pair<long long, long long>{c.total.weights, c.total.biases};
                  };
                  bool ok = true;
                  ok = ok && totals({{"kind", "circulant1d"}, {"n", 784}, {"classes", 10}}) ==
                                 std::pair<long long, long long>{8624, 11};
                  ok = ok && totals({{"kind", "conv2d"},
                                     {"height", 28},
                                     {"width", 28},
                                     {"c_in", 1},
                                     {"c_out", 8},
                                     {"kernel", 3},
                                     {"classes", 10}}) ==
                                 std::pair<long long, long long>{62792, 18};
                  ok = ok && totals({{"kind", "dense"},
                                     {"in_dim", 784},
                                     {"hidden", 784},
                                     {"classes", 10}}) ==
                                 std::pair<long long, long long>{622496, 794};
                  const std::vector<std::pair<int, long long>> ablation = {
                      {1025, 22528}, {768, 22015}, {512, 21503},
                      {256, 20991},  {128, 20735}, {64, 20607}};
                  for (const auto& [k, weights] : ablation)
                      ok = ok && totals({{"kind", "circulant1d"},
                                         {"n", 2048},
                                         {"mask_bins", k},
                                         {"classes", 10},
                                         {"layer_bias", false},
                                         {"head_bias", false}}) ==
                                     std::pair<long long, long long>{weights, 0};
                  detail = "3 architecture rows + 6 bandwidth rows";
                  return ok;
              });

    criterion("08 metric oracles: pairwise AUROC, uniform NLL/Brier, entropy bounds",
              [&](std::string& detail) {
                  RngStream rng(606);
                  std::vector<double> id(300), ood(300);
                  for (auto& v : id) v = std::round(rng.normal() * 4.0) / 4.0 + 0.25;
                  for (auto& v : ood) v = std::round(rng.normal() * 4.0) / 4.0;
                  const double fast = auroc(id, ood);
                  const double slow = pair_count_auroc(id, ood);

                  PredictiveBatch uniform;
                  uniform.count = 100;
                  uniform.classes = 10;
                  uniform.probs.assign(1000, 0.1);
                  uniform.labels.resize(100);
                  for (int i = 0; i < 100; ++i) uniform.labels[i] = i % 10;
                  const double nll_err = std::abs(nll(uniform).value - std::log(10.0));
                  const double brier_err = std::abs(brier(uniform) - 0.9);

                  bool entropy_ok = true;
                  for (int i = 0; i < 10000; ++i) {
                      const int k = 2 + static_cast<int>(rng.below(9));
                      std::vector<double> row(k);
                      double z = 0.0;
                      for (auto& v : row) {
                          v = std::exp(rng.normal());
                          z += v;
                      }
                      for (auto& v : row) v /= z;
                      const double h = entropy(row.data(), k);
                      entropy_ok = entropy_ok && h >= 0.0 && h <= std::log(k) + 1e-12;
                  }
                  std::ostringstream os;
                  os << "auroc diff " << std::abs(fast - slow) << ", nll err " << nll_err
                     << ", brier err " << brier_err;
                  detail = os.str();
                  return fast == slow && nll_err < 1e-12 && brier_err < 1e-12 && entropy_ok;
              });

    criterion("09 end-to-end training", [&](std::string& detail) {
        const fs::path data_dir = fs::path(ACCEPT_DATA_DIR);
        const auto t0 = std::chrono::steady_clock::now();
        std::ostringstream os;
        if (mnist_available(data_dir)) {
            Dataset train_set = load_idx_images((data_dir / "train-images-idx3-ubyte").string());
            train_set.y = load_idx_labels((data_dir / "train-labels-idx1-ubyte").string(), 10);
            Dataset test_set = load_idx_images((data_dir / "t10k-images-idx3-ubyte").string());
            test_set.y = load_idx_labels((data_dir / "t10k-labels-idx1-ubyte").string(), 10);
            Dataset ood_set =
                load_idx_images((data_dir / "fashion" / "t10k-images-idx3-ubyte").string());

            ModelSpec m;
            m.kind = ModelSpec::Kind::Circulant1D;
            m.n = 784;
            m.classes = 10;
            m.alpha = 2.0;
            m.learn_alpha = true;
            TrainConfig cfg;
            cfg.steps = 1000;
            cfg.batch = 128;
            cfg.rank = 8;
            cfg.seed = 1;
            const TrainResult r = train(m, train_set, cfg);

            RngStream prng(7);
            const std::vector<double> probs =
                predictive_probs(m, r.guides, test_set.X, test_set.count, 32, prng);
            const double acc = accuracy(probs, test_set.y, test_set.count, 10);

            PredictiveBatch idb{probs, test_set.y, test_set.count, 10};
            const std::vector<double> id_ent = entropies(idb);
            RngStream orng(8);
            PredictiveBatch odb;
            odb.count = ood_set.count;
            odb.classes = 10;
            odb.probs = predictive_probs(m, r.guides, ood_set.X, ood_set.count, 32, orng);
            odb.labels.assign(ood_set.count, 0);
            const std::vector<double> ood_ent = entropies(odb);
            std::vector<double> id_scores(id_ent.size()), ood_scores(ood_ent.size());
            for (std::size_t i = 0; i < id_ent.size(); ++i) id_scores[i] = -id_ent[i];
            for (std::size_t i = 0; i < ood_ent.size(); ++i) ood_scores[i] = -ood_ent[i];
            const double area = auroc(id_scores, ood_scores);
            const double elapsed = seconds_since(t0);
            os << "digit data: test acc " << acc << " (>= 0.85), entropy AUROC " << area
               << " (>= 0.70), " << elapsed << " s";
            detail = os.str();
            return acc >= 0.85 && area >= 0.70 && elapsed <= 1200.0;
        }
        // Fallback: separable synthetic task, training accuracy and a rising
        // ELBO within one minute.
        RngStream drng(3);
        const Dataset blobs = make_blobs(240, 16, 4, 6.0, drng);
        ModelSpec m;
        m.kind = ModelSpec::Kind::Circulant1D;
        m.n = 16;
        m.classes = 4;
        m.sigma0_sq = 2.0;
        m.alpha = 1.0;
        TrainConfig cfg;
        cfg.steps = 600;
        cfg.batch = 32;
        cfg.rank = 4;
        cfg.seed = 11;
        const TrainResult r = train(m, blobs, cfg);
        RngStream prng(7);
        const std::vector<double> probs = predictive_probs(m, r.guides, blobs.X, blobs.count, 32, prng);
        const double acc = accuracy(probs, blobs.y, blobs.count, 4);
        double head = 0.0, tail = 0.0;
        for (int i = 0; i < 100; ++i) head += r.elbo_trace[i];
        for (int i = 0; i < 100; ++i) tail += r.elbo_trace[cfg.steps - 100 + i];
        const double elapsed = seconds_since(t0);
        os << "synthetic fallback (no digit data found): train acc " << acc
           << " (>= 0.95), ELBO first-100 mean " << head / 100 << " -> last-100 mean "
           << tail / 100 << ", " << elapsed << " s";
        detail = os.str();
        return acc >= 0.95 && tail > head && elapsed < 60.0;
    });

    criterion("10 training is bitwise deterministic for a fixed seed", [&](std::string& detail) {
        const fs::path dir = fresh_dir("determinism");
        const std::string cfg = R"({
          "model": {"kind": "circulant1d", "n": 12, "classes": 3, "layer_bias": true,
                    "sigma0_sq": 2.0, "alpha": 1.0, "learn_alpha": true},
          "train": {"steps": 40, "batch": 16, "rank": 3, "seed": 21, "lr": 0.02},
          "data": {"train": {"synthetic": {"count": 60, "dim": 12, "classes": 3,
                                           "separation": 5.0, "seed": 9}}}
        })";
        write_file((dir / "cfg.json").string(), cfg);
        const int rcA = run_cli({"train", "--config", (dir / "cfg.json").string(), "--out",
                                 (dir / "A").string()});
        const int rcB = run_cli({"train", "--config", (dir / "cfg.json").string(), "--out",
                                 (dir / "B").string()});
        const bool params = slurp(dir / "A" / "params.bin") == slurp(dir / "B" / "params.bin");
        const bool manifest =
            slurp(dir / "A" / "checkpoint.json") == slurp(dir / "B" / "checkpoint.json");
        const bool trace =
            slurp(dir / "A" / "elbo_trace.csv") == slurp(dir / "B" / "elbo_trace.csv");
        detail = std::string("params ") + (params ? "identical" : "differ") + ", manifest " +
                 (manifest ? "identical" : "differ") + ", trace " +
                 (trace ? "identical" : "differ");
        return rcA == 0 && rcB == 0 && params && manifest && trace;
    });

    std::printf("%d/10 criteria passed\n", 10 - failures);
    return failures == 0 ? 0 : 1;
}
