#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "spectral/layers.hpp"
#include "spectral/linalg.hpp"
#include "spectral/prior.hpp"

namespace spectral {

// Attribute bundle passed to an operation alongside its inputs.  Shapes are
// not tracked by the tape; each op reads what it needs from here.
struct OpAttrs {
    std::vector<int> ints;
    std::vector<double> reals;
    const CoordLayout* layout = nullptr;
    const std::vector<int>* labels = nullptr;
};

using ValueRefs = std::vector<const std::vector<double>*>;
using GradRefs = std::vector<std::vector<double>*>;  // nullptr where no gradient is wanted

struct OpDef {
    std::string name;
    std::function<std::vector<double>(const ValueRefs&, const OpAttrs&)> forward;
    std::function<void(const ValueRefs&, const std::vector<double>&, const std::vector<double>&,
                       const OpAttrs&, const GradRefs&)> vjp;
};

namespace detail {

inline void check_same_size(const ValueRefs& in) {
    for (std::size_t i = 1; i < in.size(); ++i)
        if (in[i]->size() != in[0]->size()) throw std::invalid_argument("shape mismatch");
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// KL( N(mu, U diag(l^2) U^T + diag(s^2) + eps I)  ||  N(0, diag(tau^2)) ),
// evaluated through the r x r capacitance so no d x d matrix is formed.
struct LowRankKlWork {
    double kl = 0.0;
    std::vector<double> D;        // s^2 + eps
    std::vector<double> B;        // U diag(l), d x r
    std::vector<double> C;        // (I + B^T diag(1/D) B)^{-1}, r x r
    std::vector<double> row_sq;   // per-row sum of B^2
};

inline LowRankKlWork lowrank_kl_eval(const std::vector<double>& mu, const std::vector<double>& U,
                                     const std::vector<double>& lam, const std::vector<double>& sig,
                                     const std::vector<double>& tau_sq, double eps, int d, int r,
                                     bool want_grad_work) {
    LowRankKlWork w;
    w.D.resize(d);
    w.B.resize(static_cast<std::size_t>(d) * r);
    w.row_sq.assign(d, 0.0);
    for (int i = 0; i < d; ++i) {
        w.D[i] = sig[i] * sig[i] + eps;
        for (int j = 0; j < r; ++j) {
            const double b = U[static_cast<std::size_t>(i) * r + j] * lam[j];
            w.B[static_cast<std::size_t>(i) * r + j] = b;
            w.row_sq[i] += b * b;
        }
    }
    std::vector<double> M(static_cast<std::size_t>(r) * r, 0.0);
    for (int j = 0; j < r; ++j) M[static_cast<std::size_t>(j) * r + j] = 1.0;
    for (int i = 0; i < d; ++i) {
        const double e = 1.0 / w.D[i];
        for (int j = 0; j < r; ++j)
            for (int k = 0; k < r; ++k)
                M[static_cast<std::size_t>(j) * r + k] += e * w.B[static_cast<std::size_t>(i) * r + j] *
                                                          w.B[static_cast<std::size_t>(i) * r + k];
    }
    double trace = 0.0, mahal = 0.0, log_tau = 0.0, log_d = 0.0, logdet_m = 0.0;
    for (int i = 0; i < d; ++i) {
        trace += (w.D[i] + w.row_sq[i]) / tau_sq[i];
        mahal += mu[i] * mu[i] / tau_sq[i];
        log_tau += std::log(tau_sq[i]);
        log_d += std::log(w.D[i]);
    }
    std::vector<double> L;
    try {
        L = cholesky(M, r);
    } catch (const std::runtime_error&) {
        throw std::runtime_error("KL overflow");
    }
    logdet_m = logdet_from_cholesky(L, r);
    w.kl = 0.5 * (trace + mahal - d + log_tau - log_d - logdet_m);
    if (!std::isfinite(w.kl)) throw std::runtime_error("KL overflow");
    if (want_grad_work) w.C = cholesky_inverse(L, r);
    return w;
}

}  // namespace detail

namespace detail {

inline const std::vector<OpDef>& op_registry();
inline const std::unordered_map<std::string, int>& op_index();

}  // namespace detail

// Eager reverse-mode tape over flat double vectors.  Operations come from a
// fixed registry; recording an unknown name is an error.  backward() walks
// nodes in reverse creation order, which is a topological order by
// construction, with a fixed accumulation order for determinism.
class Tape {
public:
    using Id = int;

    Id leaf(std::vector<double> v) { return push(std::move(v), {}, -1, {}, true); }

    Id constant(std::vector<double> v) { return push(std::move(v), {}, -1, {}, false); }

    Id record(const std::string& op, std::vector<Id> parents, OpAttrs attrs = {}) {
        const auto& index = detail::op_index();
        const auto it = index.find(op);
        if (it == index.end()) throw std::invalid_argument("unregistered op: " + op);
        const OpDef& def = detail::op_registry()[it->second];
        ValueRefs in;
        in.reserve(parents.size());
        bool needs = false;
        for (Id p : parents) {
            in.push_back(&nodes_[p].value);
            needs = needs || nodes_[p].requires_grad;
        }
        std::vector<double> out = def.forward(in, attrs);
        return push(std::move(out), std::move(parents), it->second, std::move(attrs), needs);
    }

    const std::vector<double>& value(Id id) const { return nodes_[id].value; }

    void backward(Id root) {
        if (nodes_[root].value.size() != 1) throw std::invalid_argument("backward root must be scalar");
        grads_.assign(nodes_.size(), {});
        grads_[root] = {1.0};
        for (Id i = root; i >= 0; --i) {
            const Node& nd = nodes_[i];
            if (nd.op < 0 || !nd.requires_grad || grads_[i].empty()) continue;
            ValueRefs in;
            GradRefs out;
            in.reserve(nd.parents.size());
            out.reserve(nd.parents.size());
            for (Id p : nd.parents) {
                in.push_back(&nodes_[p].value);
                if (nodes_[p].requires_grad) {
                    if (grads_[p].empty()) grads_[p].assign(nodes_[p].value.size(), 0.0);
                    out.push_back(&grads_[p]);
                } else {
                    out.push_back(nullptr);
                }
            }
            detail::op_registry()[nd.op].vjp(in, nd.value, grads_[i], nd.attrs, out);
        }
    }

    const std::vector<double>& grad(Id id) {
        if (grads_.size() != nodes_.size()) grads_.assign(nodes_.size(), {});
        if (grads_[id].empty()) grads_[id].assign(nodes_[id].value.size(), 0.0);
        return grads_[id];
    }

    static std::vector<std::string> registered_ops() {
        std::vector<std::string> names;
        for (const auto& def : detail::op_registry()) names.push_back(def.name);
        return names;
    }

    // Convenience wrappers over record().
    Id add(Id a, Id b) { return record("add", {a, b}); }
    Id sub(Id a, Id b) { return record("sub", {a, b}); }
    Id mul(Id a, Id b) { return record("mul", {a, b}); }
    Id scale(Id a, double c) { return record("scale", {a}, {{}, {c}}); }
    Id shift(Id a, double c) { return record("shift", {a}, {{}, {c}}); }
    Id tanh_(Id a) { return record("tanh", {a}); }
    Id softplus_(Id a) { return record("softplus", {a}); }
    Id sum(Id a) { return record("sum", {a}); }

private:
    struct Node {
        std::vector<double> value;
        std::vector<Id> parents;
        int op = -1;
        OpAttrs attrs;
        bool requires_grad = false;
    };

    Id push(std::vector<double> value, std::vector<Id> parents, int op, OpAttrs attrs, bool grad) {
        nodes_.push_back({std::move(value), std::move(parents), op, std::move(attrs), grad});
        return static_cast<Id>(nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
};

namespace detail {

inline std::vector<OpDef> build_registry() {
    std::vector<OpDef> ops;

    ops.push_back({"add",
                   [](const ValueRefs& in, const OpAttrs&) {
                       check_same_size(in);
                       std::vector<double> out(*in[0]);
                       for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*in[1])[i];
                       return out;
                   },
                   [](const ValueRefs&, const std::vector<double>&, const std::vector<double>& bar,
                      const OpAttrs&, const GradRefs& g) {
                       for (int s = 0; s < 2; ++s)
                           if (g[s])
                               for (std::size_t i = 0; i < bar.size(); ++i) (*g[s])[i] += bar[i];
                   }});

    ops.push_back({"sub",
                   [](const ValueRefs& in, const OpAttrs&) {
                       check_same_size(in);
                       std::vector<double> out(*in[0]);
                       for (std::size_t i = 0; i < out.size(); ++i) out[i] -= (*in[1])[i];
                       return out;
                   },
                   [](const ValueRefs&, const std::vector<double>&, const std::vector<double>& bar,
                      const OpAttrs&, const GradRefs& g) {
                       if (g[0])
                           for (std::size_t i = 0; i < bar.size(); ++i) (*g[0])[i] += bar[i];
                       if (g[1])
                           for (std::size_t i = 0; i < bar.size(); ++i) (*g[1])[i] -= bar[i];
                   }});

    ops.push_back({"mul",
                   [](const ValueRefs& in, const OpAttrs&) {
                       check_same_size(in);
                       std::vector<double> out(*in[0]);
                       for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*in[1])[i];
                       return out;
                   },
                   [](const ValueRefs& in, const std::vector<double>&, const std::vector<double>& bar,
                      const OpAttrs&, const GradRefs& g) {
                       if (g[0])
                           for (std::size_t i = 0; i < bar.size(); ++i) (*g[0])[i] += bar[i] * (*in[1])[i];
                       if (g[1])
                           for (std::size_t i = 0; i < bar.size(); ++i) (*g[1])[i] += bar[i] * (*in[0])[i];
                   }});

    ops.push_back({"scale",
                   [](const ValueRefs& in, const OpAttrs& a) {
                       std::vector<double> out(*in[0]);
                       for (auto& v : out) v *= a.reals[0];
                       return out;
                   },
                   [](const ValueRefs&, const std::vector<double>&, const std::vector<double>& bar,
                      const OpAttrs& a, const GradRefs& g) {
                       if (g[0])
                           for (std::size_t i = 0; i < bar.size(); ++i) (*g[0])[i] += bar[i] * a.reals[0];
                   }});

    ops.push_back({"shift",
                   [](const ValueRefs& in, const OpAttrs& a) {
                       std::vector<double> out(*in[0]);
                       for (auto& v : out) v += a.reals[0];
                       return out;
                   },
                   [](const ValueRefs&, const std::vector<double>&, const std::vector<double>& bar,
                      const OpAttrs&, const GradRefs& g) {
                       if (g[0])
                           for (std::size_t i = 0; i < bar.size(); ++i) (*g[0])[i] += bar[i];
                   }});

    ops.push_back({"tanh",
                   [](const ValueRefs& in, const OpAttrs&) {
                       std::vector<double> out(*in[0]);
                       for (auto& v : out) v = std::tanh(v);
                       return out;
                   },
                   [](const ValueRefs&, const std::vector<double>& y, const std::vector<double>& bar,
                      const OpAttrs&, const GradRefs& g) {
                       if (g[0])
                           for (std::size_t i = 0; i < bar.size(); ++i)
                               (*g[0])[i] += bar[i] * (1.0 - y[i] * y[i]);
                   }});

    ops.push_back({"softplus",
                   [](const ValueRefs& in, const OpAttrs&) {
                       std::vector<double> out(*in[0]);
                       for (auto& v : out) v = softplus(v);
                       return out;
                   },
                   [](const ValueRefs& in, const std::vector<double>&, const std::vector<double>& bar,
                      const OpAttrs&, const GradRefs& g) {
                       if (g[0])
                           for (std::size_t i = 0; i < bar.size(); ++i)
                               (*g[0])[i] += bar[i] * sigmoid((*in[0])[i]);
                   }});

    ops.push_back({"log",
                   [](const ValueRefs& in, const OpAttrs&) {
                       std::vector<double> out(*in[0]);
                       for (auto& v : out) v = std::log(v);
                       return out;
                   },
                   [](const ValueRefs& in, const std::vector<double>&, const std::vector<double>& bar,
                      const OpAttrs&, const GradRefs& g) {
                       if (g[0])
                           for (std::size_t i = 0; i < bar.size(); ++i) (*g[0])[i] += bar[i] / (*in[0])[i];
                   }});

    ops.push_back({"exp",
                   [](const ValueRefs& in, const OpAttrs&) {
                       std::vector<double> out(*in[0]);
                       for (auto& v : out) v = std::exp(v);
                       return out;
                   },
                   [](const ValueRefs&, const std::vector<double>& y, const std::vector<double>& bar,
                      const OpAttrs&, const GradRefs& g) {
                       if (g[0])
                           for (std::size_t i = 0; i < bar.size(); ++i) (*g[0])[i] += bar[i] * y[i];
                   }});

    ops.push_back({"sum",
                   [](const ValueRefs& in, const OpAttrs&) {
                       double s = 0.0;
                       for (double v : *in[0]) s += v;
                       return std::vector<double>{s};
                   },
                   [](const ValueRefs& in, const std::vector<double>&, const std::vector<double>& bar,
                      const OpAttrs&, const GradRefs& g) {
                       if (g[0])
                           for (std::size_t i = 0; i < in[0]->size(); ++i) (*g[0])[i] += bar[0];
                   }});

    ops.push_back({"mean",
                   [](const ValueRefs& in, const OpAttrs&) {
                       double s = 0.0;
                       for (double v : *in[0]) s += v;
                       return std::vector<double>{s / static_cast<double>(in[0]->size())};
                   },
                   [](const ValueRefs& in, const std::vector<double>&, const std::vector<double>& bar,
                      const OpAttrs&, const GradRefs& g) {
                       const double b = bar[0] / static_cast<double>(in[0]->size());
                       if (g[0])
                           for (std::size_t i = 0; i < in[0]->size(); ++i) (*g[0])[i] += b;
                   }});

    // ints = {rows, cols}: y = M v with M row-major rows x cols.
    ops.push_back({"matvec",
                   [](const ValueRefs& in, const OpAttrs& a) {
                       const int rows = a.ints[0], cols = a.ints[1];
                       std::vector<double> out(rows, 0.0);
                       for (int i = 0; i < rows; ++i) {
                           double acc = 0.0;
                           for (int j = 0; j < cols; ++j)
                               acc += (*in[0])[static_cast<std::size_t>(i) * cols + j] * (*in[1])[j];
                           out[i] = acc;
                       }
                       return out;
                   },
                   [](const ValueRefs& in, const std::vector<double>&, const std::vector<double>& bar,
                      const OpAttrs& a, const GradRefs& g) {
                       const int rows = a.ints[0], cols = a.ints[1];
                       if (g[0])
                           for (int i = 0; i < rows; ++i)
                               for (int j = 0; j < cols; ++j)
                                   (*g[0])[static_cast<std::size_t>(i) * cols + j] += bar[i] * (*in[1])[j];
                       if (g[1])
                           for (int j = 0; j < cols; ++j) {
                               double acc = 0.0;
                               for (int i = 0; i < rows; ++i)
                                   acc += (*in[0])[static_cast<std::size_t>(i) * cols + j] * bar[i];
                               (*g[1])[j] += acc;
                           }
                   }});

    // ints = {batch, in, out}: Y = X W^T + b row-wise; W is out x in.
    ops.push_back({"affine",
                   [](const ValueRefs& in, const OpAttrs& a) {
                       const int batch = a.ints[0], din = a.ints[1], dout = a.ints[2];
                       std::vector<double> out(static_cast<std::size_t>(batch) * dout);
                       for (int b = 0; b < batch; ++b)
                           for (int o = 0; o < dout; ++o) {
                               double acc = (*in[2])[o];
                               for (int i = 0; i < din; ++i)
                                   acc += (*in[0])[static_cast<std::size_t>(b) * din + i] *
                                          (*in[1])[static_cast<std::size_t>(o) * din + i];
                               out[static_cast<std::size_t>(b) * dout + o] = acc;
                           }
                       return out;
                   },
                   [](const ValueRefs& in, const std::vector<double>&, const std::vector<double>& bar,
                      const OpAttrs& a, const GradRefs& g) {
                       const int batch = a.ints[0], din = a.ints[1], dout = a.ints[2];
                       for (int b = 0; b < batch; ++b)
                           for (int o = 0; o < dout; ++o) {
                               const double bo = bar[static_cast<std::size_t>(b) * dout + o];
                               if (bo == 0.0) continue;
                               if (g[0])
                                   for (int i = 0; i < din; ++i)
                                       (*g[0])[static_cast<std::size_t>(b) * din + i] +=
                                           bo * (*in[1])[static_cast<std::size_t>(o) * din + i];
                               if (g[1])
                                   for (int i = 0; i < din; ++i)
                                       (*g[1])[static_cast<std::size_t>(o) * din + i] +=
                                           bo * (*in[0])[static_cast<std::size_t>(b) * din + i];
                               if (g[2]) (*g[2])[o] += bo;
                           }
                   }});

    // ints = {batch, k}: row-wise log softmax.
    ops.push_back({"log_softmax",
                   [](const ValueRefs& in, const OpAttrs& a) {
                       const int batch = a.ints[0], k = a.ints[1];
                       std::vector<double> out(in[0]->size());
                       for (int b = 0; b < batch; ++b) {
                           const double* x = in[0]->data() + static_cast<std::size_t>(b) * k;
                           double m = x[0];
                           for (int j = 1; j < k; ++j) m = std::max(m, x[j]);
                           double lse = 0.0;
                           for (int j = 0; j < k; ++j) lse += std::exp(x[j] - m);
                           lse = m + std::log(lse);
                           for (int j = 0; j < k; ++j)
                               out[static_cast<std::size_t>(b) * k + j] = x[j] - lse;
                       }
                       return out;
                   },
                   [](const ValueRefs&, const std::vector<double>& y, const std::vector<double>& bar,
                      const OpAttrs& a, const GradRefs& g) {
                       if (!g[0]) return;
                       const int batch = a.ints[0], k = a.ints[1];
                       for (int b = 0; b < batch; ++b) {
                           double tot = 0.0;
                           for (int j = 0; j < k; ++j) tot += bar[static_cast<std::size_t>(b) * k + j];
                           for (int j = 0; j < k; ++j) {
                               const std::size_t idx = static_cast<std::size_t>(b) * k + j;
                               (*g[0])[idx] += bar[idx] - std::exp(y[idx]) * tot;
                           }
                       }
                   }});

    // ints = {batch, k}, labels: out[b] = X[b][label[b]].
    ops.push_back({"pick",
                   [](const ValueRefs& in, const OpAttrs& a) {
                       const int batch = a.ints[0], k = a.ints[1];
                       std::vector<double> out(batch);
                       for (int b = 0; b < batch; ++b)
                           out[b] = (*in[0])[static_cast<std::size_t>(b) * k + (*a.labels)[b]];
                       return out;
                   },
                   [](const ValueRefs&, const std::vector<double>&, const std::vector<double>& bar,
                      const OpAttrs& a, const GradRefs& g) {
                       if (!g[0]) return;
                       const int batch = a.ints[0], k = a.ints[1];
                       for (int b = 0; b < batch; ++b)
                           (*g[0])[static_cast<std::size_t>(b) * k + (*a.labels)[b]] += bar[b];
                   }});

    // Broadcast a 1-element node onto every entry: used for the shared
    // spatial bias of the 1D layer.
    ops.push_back({"add_scalar",
                   [](const ValueRefs& in, const OpAttrs&) {
                       std::vector<double> out(*in[0]);
                       for (auto& v : out) v += (*in[1])[0];
                       return out;
                   },
                   [](const ValueRefs&, const std::vector<double>&, const std::vector<double>& bar,
                      const OpAttrs&, const GradRefs& g) {
                       if (g[0])
                           for (std::size_t i = 0; i < bar.size(); ++i) (*g[0])[i] += bar[i];
                       if (g[1]) {
                           double acc = 0.0;
                           for (double v : bar) acc += v;
                           (*g[1])[0] += acc;
                       }
                   }});

    // ints = {batch, channels, plane}: per-channel constant over each plane.
    ops.push_back({"add_channel_bias",
                   [](const ValueRefs& in, const OpAttrs& a) {
                       const int batch = a.ints[0], ch = a.ints[1], plane = a.ints[2];
                       std::vector<double> out(*in[0]);
                       for (int b = 0; b < batch; ++b)
                           for (int c = 0; c < ch; ++c) {
                               const double bias = (*in[1])[c];
                               double* p = out.data() + (static_cast<std::size_t>(b) * ch + c) * plane;
                               for (int i = 0; i < plane; ++i) p[i] += bias;
                           }
                       return out;
                   },
                   [](const ValueRefs&, const std::vector<double>&, const std::vector<double>& bar,
                      const OpAttrs& a, const GradRefs& g) {
                       const int batch = a.ints[0], ch = a.ints[1], plane = a.ints[2];
                       if (g[0])
                           for (std::size_t i = 0; i < bar.size(); ++i) (*g[0])[i] += bar[i];
                       if (g[1])
                           for (int b = 0; b < batch; ++b)
                               for (int c = 0; c < ch; ++c) {
                                   const double* p =
                                       bar.data() + (static_cast<std::size_t>(b) * ch + c) * plane;
                                   double acc = 0.0;
                                   for (int i = 0; i < plane; ++i) acc += p[i];
                                   (*g[1])[c] += acc;
                               }
                   }});

    // Parents (coords, X); attrs.layout gives the half-spectrum layout,
    // ints = {batch}.  Bias-free circular layer on rows of X.
    ops.push_back({"spectral1d",
                   [](const ValueRefs& in, const OpAttrs& a) {
                       SpectralCirculant1D layer;
                       layer.h = unpack_circulant(*in[0], *a.layout);
                       layer.mask_bins = a.layout->mask_bins;
                       layer.has_bias = false;
                       return circulant_layer_forward(layer, *in[1], a.ints[0]);
                   },
                   [](const ValueRefs& in, const std::vector<double>&, const std::vector<double>& bar,
                      const OpAttrs& a, const GradRefs& g) {
                       const int batch = a.ints[0];
                       if (g[0]) {
                           const auto gc = circulant_coord_vjp(*a.layout, *in[1], bar, batch);
                           for (std::size_t i = 0; i < gc.size(); ++i) (*g[0])[i] += gc[i];
                       }
                       if (g[1]) {
                           SpectralCirculant1D layer;
                           layer.h = unpack_circulant(*in[0], *a.layout);
                           layer.has_bias = false;
                           const auto gx = circulant_input_vjp(layer, bar, batch);
                           for (std::size_t i = 0; i < gx.size(); ++i) (*g[1])[i] += gx[i];
                       }
                   }});

    // Parents (coords, X); attrs.layout is the per-plane layout,
    // ints = {batch, H, W, c_in, c_out}; coords concatenates the planes
    // output-major.  Bias-free channel-mixing circular layer.
    ops.push_back({"bccb2d",
                   [](const ValueRefs& in, const OpAttrs& a) {
                       SpectralBccb2D layer;
                       layer.height = a.ints[1];
                       layer.width = a.ints[2];
                       layer.c_in = a.ints[3];
                       layer.c_out = a.ints[4];
                       layer.radial_cutoff = a.layout->radial_cutoff;
                       layer.has_bias = false;
                       const int d_plane = a.layout->d_eff;
                       for (int p = 0; p < layer.c_in * layer.c_out; ++p) {
                           std::vector<double> slice(
                               in[0]->begin() + static_cast<std::size_t>(p) * d_plane,
                               in[0]->begin() + static_cast<std::size_t>(p + 1) * d_plane);
                           layer.planes.push_back(unpack_bccb(slice, *a.layout));
                       }
                       return bccb_layer_forward(layer, *in[1], a.ints[0]);
                   },
                   [](const ValueRefs& in, const std::vector<double>&, const std::vector<double>& bar,
                      const OpAttrs& a, const GradRefs& g) {
                       SpectralBccb2D layer;
                       layer.height = a.ints[1];
                       layer.width = a.ints[2];
                       layer.c_in = a.ints[3];
                       layer.c_out = a.ints[4];
                       layer.radial_cutoff = a.layout->radial_cutoff;
                       layer.has_bias = false;
                       const int d_plane = a.layout->d_eff;
                       for (int p = 0; p < layer.c_in * layer.c_out; ++p) {
                           std::vector<double> slice(
                               in[0]->begin() + static_cast<std::size_t>(p) * d_plane,
                               in[0]->begin() + static_cast<std::size_t>(p + 1) * d_plane);
                           layer.planes.push_back(unpack_bccb(slice, *a.layout));
                       }
                       if (g[0]) {
                           const auto gc = bccb_coord_vjp(layer, *a.layout, *in[1], bar, a.ints[0]);
                           for (std::size_t i = 0; i < gc.size(); ++i) (*g[0])[i] += gc[i];
                       }
                       if (g[1]) {
                           const auto gx = bccb_input_vjp(layer, bar, a.ints[0]);
                           for (std::size_t i = 0; i < gx.size(); ++i) (*g[1])[i] += gx[i];
                       }
                   }});

    // Parents (mu, U, lambda, sigma, tau_sq); ints = {d, r}, reals = {eps}.
    ops.push_back({"lowrank_kl",
                   [](const ValueRefs& in, const OpAttrs& a) {
                       const auto w = lowrank_kl_eval(*in[0], *in[1], *in[2], *in[3], *in[4],
                                                      a.reals[0], a.ints[0], a.ints[1], false);
                       return std::vector<double>{w.kl};
                   },
                   [](const ValueRefs& in, const std::vector<double>&, const std::vector<double>& bar,
                      const OpAttrs& a, const GradRefs& g) {
                       const int d = a.ints[0], r = a.ints[1];
                       const auto& mu = *in[0];
                       const auto& U = *in[1];
                       const auto& lam = *in[2];
                       const auto& sig = *in[3];
                       const auto& tau = *in[4];
                       const auto w = lowrank_kl_eval(mu, U, lam, sig, tau, a.reals[0], d, r, true);
                       // barB = B / tau^2 - diag(1/D) B C, then chain to U and lambda.
                       std::vector<double> barB(static_cast<std::size_t>(d) * r);
                       for (int i = 0; i < d; ++i) {
                           const double e = 1.0 / w.D[i];
                           for (int j = 0; j < r; ++j) {
                               double bc = 0.0;
                               for (int k = 0; k < r; ++k)
                                   bc += w.B[static_cast<std::size_t>(i) * r + k] *
                                         w.C[static_cast<std::size_t>(k) * r + j];
                               barB[static_cast<std::size_t>(i) * r + j] =
                                   w.B[static_cast<std::size_t>(i) * r + j] / tau[i] - e * bc;
                           }
                       }
                       const double b0 = bar[0];
                       if (g[0])
                           for (int i = 0; i < d; ++i) (*g[0])[i] += b0 * mu[i] / tau[i];
                       if (g[1])
                           for (int i = 0; i < d; ++i)
                               for (int j = 0; j < r; ++j)
                                   (*g[1])[static_cast<std::size_t>(i) * r + j] +=
                                       b0 * barB[static_cast<std::size_t>(i) * r + j] * lam[j];
                       if (g[2])
                           for (int j = 0; j < r; ++j) {
                               double acc = 0.0;
                               for (int i = 0; i < d; ++i)
                                   acc += barB[static_cast<std::size_t>(i) * r + j] *
                                          U[static_cast<std::size_t>(i) * r + j];
                               (*g[2])[j] += b0 * acc;
                           }
                       if (g[3])
                           for (int i = 0; i < d; ++i) {
                               double p = 0.0;  // (B C B^T)_ii
                               for (int j = 0; j < r; ++j) {
                                   double bc = 0.0;
                                   for (int k = 0; k < r; ++k)
                                       bc += w.B[static_cast<std::size_t>(i) * r + k] *
                                             w.C[static_cast<std::size_t>(k) * r + j];
                                   p += bc * w.B[static_cast<std::size_t>(i) * r + j];
                               }
                               const double dD = 0.5 * (1.0 / tau[i] - 1.0 / w.D[i] + p / (w.D[i] * w.D[i]));
                               (*g[3])[i] += b0 * dD * 2.0 * sig[i];
                           }
                       if (g[4])
                           for (int i = 0; i < d; ++i) {
                               const double sii = w.D[i] + w.row_sq[i];
                               (*g[4])[i] +=
                                   b0 * 0.5 * (1.0 / tau[i] - (sii + mu[i] * mu[i]) / (tau[i] * tau[i]));
                           }
                   }});

    // Parents (mu, sigma); attrs.reals holds the prior variances.
    ops.push_back({"meanfield_kl",
                   [](const ValueRefs& in, const OpAttrs& a) {
                       check_same_size(in);
                       double kl = 0.0;
                       for (std::size_t i = 0; i < in[0]->size(); ++i) {
                           const double v = a.reals[i];
                           const double s2 = (*in[1])[i] * (*in[1])[i];
                           kl += 0.5 * ((s2 + (*in[0])[i] * (*in[0])[i]) / v - 1.0 +
                                        std::log(v) - std::log(s2));
                       }
                       if (!std::isfinite(kl)) throw std::runtime_error("KL overflow");
                       return std::vector<double>{kl};
                   },
                   [](const ValueRefs& in, const std::vector<double>&, const std::vector<double>& bar,
                      const OpAttrs& a, const GradRefs& g) {
                       for (std::size_t i = 0; i < in[0]->size(); ++i) {
                           const double v = a.reals[i];
                           if (g[0]) (*g[0])[i] += bar[0] * (*in[0])[i] / v;
                           if (g[1]) (*g[1])[i] += bar[0] * ((*in[1])[i] / v - 1.0 / (*in[1])[i]);
                       }
                   }});

    // Parent (alpha, scalar); attrs.layout names the coordinates,
    // reals = {sigma0_sq}, optional ints = {repeats} tiles the result for
    // multi-plane layers.  Emits the per-coordinate prior variances.
    ops.push_back({"profile_tau",
                   [](const ValueRefs& in, const OpAttrs& a) {
                       const CoordProfile cp = coord_profile(*a.layout);
                       SpectrumProfile p{a.reals[0], (*in[0])[0]};
                       const int reps = a.ints.empty() ? 1 : a.ints[0];
                       const std::size_t base = cp.rho.size();
                       std::vector<double> out(base * reps);
                       for (std::size_t i = 0; i < base; ++i)
                           out[i] = cp.scale[i] * variance_profile(p, cp.rho[i]);
                       for (int t = 1; t < reps; ++t)
                           for (std::size_t i = 0; i < base; ++i) out[t * base + i] = out[i];
                       return out;
                   },
                   [](const ValueRefs& in, const std::vector<double>&, const std::vector<double>& bar,
                      const OpAttrs& a, const GradRefs& g) {
                       if (!g[0]) return;
                       const CoordProfile cp = coord_profile(*a.layout);
                       SpectrumProfile p{a.reals[0], (*in[0])[0]};
                       const int reps = a.ints.empty() ? 1 : a.ints[0];
                       const std::size_t base = cp.rho.size();
                       double acc = 0.0;
                       for (int t = 0; t < reps; ++t)
                           for (std::size_t i = 0; i < base; ++i)
                               acc += bar[t * base + i] * cp.scale[i] *
                                      variance_profile_dalpha(p, cp.rho[i]);
                       (*g[0])[0] += acc;
                   }});

    return ops;
}

inline const std::vector<OpDef>& op_registry() {
    static const std::vector<OpDef> registry = build_registry();
    return registry;
}

inline const std::unordered_map<std::string, int>& op_index() {
    static const std::unordered_map<std::string, int> index = [] {
        std::unordered_map<std::string, int> m;
        const auto& reg = op_registry();
        for (std::size_t i = 0; i < reg.size(); ++i) m[reg[i].name] = static_cast<int>(i);
        return m;
    }();
    return index;
}

}  // namespace detail

// Closed-form KL divergence between the low-rank-plus-diagonal Gaussian and a
// diagonal zero-mean prior, exposed outside the tape as well.
inline double lowrank_kl(const std::vector<double>& mu, const std::vector<double>& U,
                         const std::vector<double>& lam, const std::vector<double>& sig,
                         const std::vector<double>& tau_sq, double eps, int d, int r) {
    return detail::lowrank_kl_eval(mu, U, lam, sig, tau_sq, eps, d, r, false).kl;
}

}  // namespace spectral
