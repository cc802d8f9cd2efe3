#pragma once

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "spectral/certify.hpp"
#include "spectral/io.hpp"
#include "spectral/layers.hpp"
#include "spectral/metrics.hpp"
#include "spectral/prior.hpp"
#include "spectral/svi.hpp"

namespace spectral {

// One JSON document describes a run; flags only pick the subcommand, the
// config file, the output directory, and an optional seed override.
struct RunConfig {
    ModelSpec model;
    TrainConfig train;
    int predict_mc = 64;    // posterior samples per prediction
    int ece_bins = 15;
    int prior_samples = 8;  // sample-prior draw count
    int cert_samples = 32;  // posterior draws for the certificate distribution
    double tail_delta = 0.05;
    nlohmann::json data;         // dataset source descriptions
    std::string checkpoint_dir;  // input checkpoint for certify/eval
    std::uint64_t digest = 0;    // FNV-1a of the raw config text
};

namespace cli_detail {

inline std::uint64_t parse_seed(const nlohmann::json& j) {
    if (j.is_string()) return parse_hex_u64(j.get<std::string>());
    return j.get<std::uint64_t>();
}

inline RunConfig parse_config(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    RunConfig cfg;
    cfg.digest = fnv1a(text);
    cfg.model = model_from_json(j.at("model"));
    if (j.contains("train")) {
        const auto& t = j.at("train");
        cfg.train.steps = t.value("steps", cfg.train.steps);
        cfg.train.batch = t.value("batch", cfg.train.batch);
        cfg.train.n_mc = t.value("n_mc", cfg.train.n_mc);
        cfg.train.rank = t.value("rank", cfg.train.rank);
        cfg.train.eps = t.value("eps", cfg.train.eps);
        cfg.train.adam.lr = t.value("lr", cfg.train.adam.lr);
        cfg.train.adam.beta1 = t.value("beta1", cfg.train.adam.beta1);
        cfg.train.adam.beta2 = t.value("beta2", cfg.train.adam.beta2);
        cfg.train.adam.eps = t.value("adam_eps", cfg.train.adam.eps);
        if (t.contains("seed")) cfg.train.seed = parse_seed(t.at("seed"));
    }
    if (j.contains("predict")) cfg.predict_mc = j.at("predict").value("n_mc", cfg.predict_mc);
    if (j.contains("eval")) cfg.ece_bins = j.at("eval").value("ece_bins", cfg.ece_bins);
    if (j.contains("prior")) cfg.prior_samples = j.at("prior").value("samples", cfg.prior_samples);
    if (j.contains("certify")) {
        cfg.cert_samples = j.at("certify").value("samples", cfg.cert_samples);
        cfg.tail_delta = j.at("certify").value("delta", cfg.tail_delta);
    }
    if (j.contains("data")) cfg.data = j.at("data");
    cfg.checkpoint_dir = j.value("checkpoint", "");
    return cfg;
}

// Dataset sources: {"images": idx [, "labels": idx]} | {"csv": path} |
// {"binary": path, "sidecar": path} | {"synthetic": {...}}.
inline Dataset load_source(const nlohmann::json& src, int classes) {
    if (src.contains("images")) {
        Dataset d = load_idx_images(src.at("images").get<std::string>());
        if (src.contains("labels")) {
            d.y = load_idx_labels(src.at("labels").get<std::string>(), classes);
            if (static_cast<int>(d.y.size()) != d.count)
                throw std::runtime_error("label count mismatch: " +
                                         src.at("labels").get<std::string>());
        }
        return d;
    }
    if (src.contains("csv")) return load_features_csv(src.at("csv").get<std::string>());
    if (src.contains("binary"))
        return load_features_binary(src.at("binary").get<std::string>(),
                                    src.at("sidecar").get<std::string>());
    if (src.contains("synthetic")) {
        const auto& s = src.at("synthetic");
        RngStream rng(parse_seed(s.value("seed", nlohmann::json(0))));
        return make_blobs(s.at("count").get<int>(), s.at("dim").get<int>(),
                          s.value("classes", classes), s.value("separation", 4.0), rng);
    }
    throw std::runtime_error("unknown dataset source");
}

inline Dataset load_named_source(const RunConfig& cfg, const std::string& name) {
    if (!cfg.data.contains(name))
        throw std::runtime_error("config is missing data." + name);
    return load_source(cfg.data.at(name), cfg.model.classes);
}

inline void check_dims(const ModelSpec& m, const Dataset& d, const std::string& name) {
    if (d.dim != m.input_dim())
        throw std::runtime_error("dataset dimension mismatch for data." + name + ": have " +
                                 std::to_string(d.dim) + ", model wants " +
                                 std::to_string(m.input_dim()));
}

inline void write_run_manifest(const std::string& out_dir, const std::string& command,
                               const RunConfig& cfg, const std::vector<std::string>& outputs) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["command"] = command;
    j["config_digest"] = hex_u64(cfg.digest);
    j["seed"] = hex_u64(cfg.train.seed);
    j["outputs"] = outputs;
    write_file(out_dir + "/run.json", j.dump(2) + "\n");
}

// Layer norms and Lipschitz product at explicit parameter values.
inline std::pair<std::vector<double>, double> network_norms(const ModelSpec& m,
                                                            const CoordLayout& layout,
                                                            const std::vector<double>& a,
                                                            const std::vector<double>& W) {
    std::vector<double> norms;
    if (m.two_dim()) {
        std::vector<HalfPlane2D> planes;
        const int dp = layout.d_eff;
        for (int p = 0; p < m.planes(); ++p) {
            std::vector<double> slice(a.begin() + static_cast<std::size_t>(p) * dp,
                                      a.begin() + static_cast<std::size_t>(p + 1) * dp);
            planes.push_back(unpack_bccb(slice, layout));
        }
        norms.push_back(spectral_norm_2d(planes, m.c_in, m.c_out));
    } else {
        norms.push_back(spectral_norm_1d(unpack_circulant(a, layout)));
    }
    norms.push_back(dense_operator_norm(W, m.classes, m.feature_dim()));
    double prod = 1.0;
    for (double n : norms) prod *= n;
    return {norms, prod};
}

struct CountedModel {
    ParamCount layer, head, total;
    std::string kind;
};

// Parameter counting accepts two extra architectures (conv2d, dense) that
// exist only as comparison rows; they are not trainable here.
inline CountedModel count_params(const nlohmann::json& mj) {
    CountedModel out;
    out.kind = mj.at("kind").get<std::string>();
    const int classes = mj.value("classes", 10);
    const bool layer_bias = mj.value("layer_bias", true);
    const bool head_bias = mj.value("head_bias", true);
    int feat;
    if (out.kind == "circulant1d") {
        const int n = mj.at("n").get<int>();
        out.layer = circulant_param_count(n, mj.value("mask_bins", -1), layer_bias);
        feat = n;
    } else if (out.kind == "bccb2d") {
        const int h = mj.at("height").get<int>(), w = mj.at("width").get<int>();
        const int ci = mj.value("c_in", 1), co = mj.value("c_out", 1);
        out.layer = bccb_param_count(h, w, ci, co, mj.value("radial_cutoff", -1.0), layer_bias);
        feat = co * h * w;
    } else if (out.kind == "conv2d") {
        const int h = mj.at("height").get<int>(), w = mj.at("width").get<int>();
        const int ci = mj.value("c_in", 1), co = mj.value("c_out", 1);
        out.layer = conv2d_param_count(ci, co, mj.at("kernel").get<int>(), layer_bias);
        feat = co * h * w;
    } else if (out.kind == "dense") {
        const int in = mj.at("in_dim").get<int>(), hidden = mj.at("hidden").get<int>();
        out.layer = dense_param_count(in, hidden, layer_bias);
        feat = hidden;
    } else {
        throw std::runtime_error("unknown layer kind: " + out.kind);
    }
    out.head = dense_param_count(feat, classes, head_bias);
    out.total = out.layer + out.head;
    return out;
}

// --------------------------------------------------------------------------
// Subcommands.  Each returns the file names it wrote (beyond run.json).

inline std::vector<std::string> cmd_sample_prior(const RunConfig& cfg, const std::string& out_dir) {
    const ModelSpec& m = cfg.model;
    const SpectrumProfile profile{m.sigma0_sq, m.alpha};
    RngStream rng = RngStream(cfg.train.seed).split(10);
    std::vector<std::vector<double>> filters;
    const int dim = m.two_dim() ? m.height * m.width : m.n;
    for (int s = 0; s < cfg.prior_samples; ++s) {
        std::vector<double> w = m.two_dim() ? sample_field_2d(profile, m.height, m.width, rng)
                                            : sample_filter_1d(profile, m.n, rng);
        std::vector<double> row;
        row.push_back(static_cast<double>(s));
        row.insert(row.end(), w.begin(), w.end());
        filters.push_back(std::move(row));
    }
    std::vector<std::string> header = {"sample"};
    for (int i = 0; i < dim; ++i) header.push_back("v" + std::to_string(i));
    write_csv(out_dir + "/filters.csv", header, filters);

    std::vector<std::vector<double>> cov_rows;
    if (m.two_dim()) {
        const std::vector<double> cov = prior_covariance_2d(profile, m.height, m.width);
        for (int u = 0; u < m.height; ++u)
            for (int v = 0; v < m.width; ++v)
                cov_rows.push_back({static_cast<double>(u), static_cast<double>(v),
                                    cov[static_cast<std::size_t>(u) * m.width + v]});
        write_csv(out_dir + "/covariance.csv", {"lag_row", "lag_col", "covariance"}, cov_rows);
    } else {
        const std::vector<double> cov = prior_covariance_1d(profile, m.n);
        for (int t = 0; t < m.n; ++t) cov_rows.push_back({static_cast<double>(t), cov[t]});
        write_csv(out_dir + "/covariance.csv", {"lag", "covariance"}, cov_rows);
    }
    return {"filters.csv", "covariance.csv"};
}

inline std::vector<std::string> cmd_train(const RunConfig& cfg, const std::string& out_dir) {
    const Dataset data = load_named_source(cfg, "train");
    check_dims(cfg.model, data, "train");
    if (data.y.empty()) throw std::runtime_error("labels required");
    const TrainResult result = train(cfg.model, data, cfg.train);

    Checkpoint ck;
    ck.config_digest = cfg.digest;
    ck.seed = cfg.train.seed;
    ck.model = cfg.model;
    ck.rank = cfg.train.rank;
    ck.eps = cfg.train.eps;
    ck.guides = result.guides;
    ck.noise_state = result.noise_state;
    ck.batch_state = result.batch_state;
    save_checkpoint(out_dir, ck);

    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < result.elbo_trace.size(); ++i)
        rows.push_back({static_cast<double>(i), result.elbo_trace[i]});
    write_csv(out_dir + "/elbo_trace.csv", {"step", "elbo"}, rows);
    return {"checkpoint.json", "params.bin", "elbo_trace.csv"};
}

inline Checkpoint load_run_checkpoint(const RunConfig& cfg, const std::string& out_dir) {
    const std::string dir = cfg.checkpoint_dir.empty() ? out_dir : cfg.checkpoint_dir;
    return load_checkpoint(dir);
}

inline std::vector<std::string> cmd_certify(const RunConfig& cfg, const std::string& out_dir) {
    const Checkpoint ck = load_run_checkpoint(cfg, out_dir);
    const ModelSpec& m = ck.model;
    const Dataset data = load_named_source(cfg, "test");
    check_dims(m, data, "test");
    if (data.y.empty()) throw std::runtime_error("labels required");
    const CoordLayout layout = m.plane_layout();

    // Point certificates at the posterior mean.
    const auto [mean_norms, mean_lhat] =
        network_norms(m, layout, ck.guides.spec.mu, ck.guides.head_w.mu);
    const std::vector<double> logits =
        model_logits(m, layout, ck.guides.spec.mu, ck.guides.layer_bias.mu, ck.guides.head_w.mu,
                     ck.guides.head_b.mu, data.X, data.count);
    std::vector<std::vector<double>> cert_rows;
    std::vector<double> row(m.classes);
    for (int i = 0; i < data.count; ++i) {
        std::copy(logits.begin() + static_cast<std::size_t>(i) * m.classes,
                  logits.begin() + static_cast<std::size_t>(i + 1) * m.classes, row.begin());
        const double mg = margin(row, data.y[i]);
        cert_rows.push_back({static_cast<double>(i), static_cast<double>(data.y[i]), mg,
                             cert_radius(mg, mean_lhat)});
    }
    write_csv(out_dir + "/certificates.csv", {"index", "label", "margin", "radius"}, cert_rows);

    // Posterior distribution of the bound: per sample, norms, product, and
    // margin/radius summaries over the batch.
    RngStream rng = RngStream(cfg.train.seed).split(12);
    const LowRankGaussian q = constrained(ck.guides.spec);
    std::vector<std::vector<double>> sample_rows;
    std::vector<double> W(ck.guides.head_w.mu.size()), b(ck.guides.head_b.mu.size());
    std::vector<double> bias(m.bias_dim());
    for (int s = 0; s < cfg.cert_samples; ++s) {
        const std::vector<double> a = sample_lowrank(q, rng);
        for (int i = 0; i < m.bias_dim(); ++i)
            bias[i] = ck.guides.layer_bias.mu[i] +
                      constrain_positive(ck.guides.layer_bias.sigma_z[i]) * rng.normal();
        for (std::size_t i = 0; i < W.size(); ++i)
            W[i] = ck.guides.head_w.mu[i] +
                   constrain_positive(ck.guides.head_w.sigma_z[i]) * rng.normal();
        for (std::size_t i = 0; i < b.size(); ++i)
            b[i] = ck.guides.head_b.mu[i] +
                   constrain_positive(ck.guides.head_b.sigma_z[i]) * rng.normal();
        const auto [norms, lhat] = network_norms(m, layout, a, W);
        const std::vector<double> ls = model_logits(m, layout, a, bias, W, b, data.X, data.count);
        double mean_margin = 0.0, mean_radius = 0.0, certified = 0.0;
        for (int i = 0; i < data.count; ++i) {
            std::copy(ls.begin() + static_cast<std::size_t>(i) * m.classes,
                      ls.begin() + static_cast<std::size_t>(i + 1) * m.classes, row.begin());
            const double mg = margin(row, data.y[i]);
            const double r = cert_radius(mg, lhat);
            mean_margin += mg;
            mean_radius += r;
            if (mg > 0.0) certified += 1.0;
        }
        mean_margin /= data.count;
        mean_radius /= data.count;
        certified /= data.count;
        sample_rows.push_back({static_cast<double>(s), norms[0], norms[1], lhat, mean_margin,
                               mean_radius, certified});
    }
    write_csv(out_dir + "/lipschitz_samples.csv",
              {"sample", "spectral_norm", "head_norm", "lipschitz", "mean_margin", "mean_radius",
               "certified_fraction"},
              sample_rows);

    // Prior tail table for the spectral planes (max-modulus control per
    // plane, simultaneous via a union bound).
    const SpectrumProfile profile{m.sigma0_sq, m.alpha};
    double s_max = 0.0;
    for (const auto& e : layout.entries) {
        const double rho = m.two_dim()
                               ? rho_2d(layout.bin_uv(e.bin).first, layout.bin_uv(e.bin).second,
                                        m.height, m.width)
                               : rho_1d(e.bin, m.n);
        s_max = std::max(s_max, variance_profile(profile, rho));
    }
    const long long m_active = static_cast<long long>(layout.entries.size());
    std::vector<LayerTail> tails(m.planes(), LayerTail{m_active, s_max});
    const NetworkTail tail = prior_tail_bound_network(tails, cfg.tail_delta);

    nlohmann::json summary;
    summary["schema_version"] = 1;
    summary["config_digest"] = hex_u64(cfg.digest);
    summary["posterior_mean"] = {{"norms", mean_norms}, {"lipschitz", mean_lhat}};
    summary["samples"] = cfg.cert_samples;
    nlohmann::json tj;
    tj["delta"] = cfg.tail_delta;
    tj["bins_per_plane"] = m_active;
    tj["s_max"] = s_max;
    tj["plane_radii"] = tail.radii;
    summary["prior_tail"] = tj;
    write_file(out_dir + "/summary.json", summary.dump(2) + "\n");
    return {"certificates.csv", "lipschitz_samples.csv", "summary.json"};
}

inline std::vector<std::string> cmd_eval(const RunConfig& cfg, const std::string& out_dir) {
    const Checkpoint ck = load_run_checkpoint(cfg, out_dir);
    const ModelSpec& m = ck.model;
    const Dataset data = load_named_source(cfg, "test");
    check_dims(m, data, "test");
    if (data.y.empty()) throw std::runtime_error("labels required");

    RngStream rng = RngStream(cfg.train.seed).split(11);
    PredictiveBatch batch;
    batch.count = data.count;
    batch.classes = m.classes;
    batch.probs = predictive_probs(m, ck.guides, data.X, data.count, cfg.predict_mc, rng);
    batch.labels = data.y;

    const std::vector<double> ent = entropies(batch);
    const NllResult n = nll(batch);
    nlohmann::json metrics;
    metrics["schema_version"] = 1;
    metrics["config_digest"] = hex_u64(cfg.digest);
    metrics["predict_mc"] = cfg.predict_mc;
    metrics["ece_bins"] = cfg.ece_bins;
    metrics["count"] = data.count;
    metrics["accuracy"] = accuracy(batch.probs, data.y, data.count, m.classes);
    metrics["nll"] = n.value;
    metrics["nll_clamped"] = n.clamped;
    metrics["brier"] = brier(batch);
    metrics["ece"] = ece(batch, cfg.ece_bins);
    metrics["mce"] = mce(batch, cfg.ece_bins);
    double mean_ent = 0.0;
    for (double e : ent) mean_ent += e;
    metrics["mean_entropy"] = mean_ent / data.count;

    std::vector<std::vector<double>> ent_rows;
    auto push_rows = [&](int source, const PredictiveBatch& b, const std::vector<double>& es) {
        for (int i = 0; i < b.count; ++i) {
            const double* r = b.probs.data() + static_cast<std::size_t>(i) * b.classes;
            double conf = r[0];
            for (int k = 1; k < b.classes; ++k) conf = std::max(conf, r[k]);
            ent_rows.push_back({static_cast<double>(source), static_cast<double>(i), es[i], conf});
        }
    };
    push_rows(0, batch, ent);

    // Negative entropy scores ID inputs higher.
    std::vector<double> id_scores(ent.size());
    for (std::size_t i = 0; i < ent.size(); ++i) id_scores[i] = -ent[i];
    nlohmann::json ood_reports = nlohmann::json::array();
    if (cfg.data.contains("ood")) {
        int index = 0;
        for (const auto& src : cfg.data.at("ood")) {
            Dataset ood = load_source(src, m.classes);
            check_dims(m, ood, "ood");
            RngStream ood_rng = RngStream(cfg.train.seed).split(13 + index);
            PredictiveBatch ob;
            ob.count = ood.count;
            ob.classes = m.classes;
            ob.probs = predictive_probs(m, ck.guides, ood.X, ood.count, cfg.predict_mc, ood_rng);
            const std::vector<double> oent = entropies(ob);
            std::vector<double> ood_scores(oent.size());
            for (std::size_t i = 0; i < oent.size(); ++i) ood_scores[i] = -oent[i];
            double mean_oent = 0.0;
            for (double e : oent) mean_oent += e;
            nlohmann::json r;
            r["index"] = index;
            r["count"] = ood.count;
            r["auroc"] = auroc(id_scores, ood_scores);
            r["fpr_at_95tpr"] = fpr_at_95tpr(id_scores, ood_scores);
            r["mean_entropy"] = mean_oent / ood.count;
            ood_reports.push_back(r);
            push_rows(index + 1, ob, oent);
            ++index;
        }
        if (!ood_reports.empty()) {
            double mean_auroc = 0.0, mean_fpr = 0.0;
            for (const auto& r : ood_reports) {
                mean_auroc += r.at("auroc").get<double>();
                mean_fpr += r.at("fpr_at_95tpr").get<double>();
            }
            metrics["ood_mean"] = {{"auroc", mean_auroc / ood_reports.size()},
                                   {"fpr_at_95tpr", mean_fpr / ood_reports.size()}};
        }
    }
    metrics["ood"] = ood_reports;
    write_file(out_dir + "/metrics.json", metrics.dump(2) + "\n");
    write_csv(out_dir + "/entropy.csv", {"source", "index", "entropy", "confidence"}, ent_rows);
    return {"metrics.json", "entropy.csv"};
}

inline std::vector<std::string> cmd_param_count(const RunConfig& cfg, const std::string& out_dir,
                                                const nlohmann::json& model_json) {
    const CountedModel c = count_params(model_json);
    nlohmann::json j;
    j["schema_version"] = 1;
    j["config_digest"] = hex_u64(cfg.digest);
    j["kind"] = c.kind;
    j["layer"] = {{"weights", c.layer.weights}, {"biases", c.layer.biases}};
    j["head"] = {{"weights", c.head.weights}, {"biases", c.head.biases}};
    j["total"] = {{"weights", c.total.weights}, {"biases", c.total.biases}};
    write_file(out_dir + "/param_count.json", j.dump(2) + "\n");
    std::cout << c.kind << ": " << c.total.weights << " weights, " << c.total.biases
              << " biases\n";
    return {"param_count.json"};
}

}  // namespace cli_detail

// Entry point shared by the binary and in-process tests.  args excludes the
// program name.  Parse failures (including unknown subcommands) exit 2 with
// usage; runtime failures exit 1 with a one-line JSON error on stdout.
inline int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"spectral layers with Fourier-domain Gaussian priors"};
    app.require_subcommand(1);
    std::string config_path, out_dir;
    std::string seed_override;
    const std::vector<std::string> names = {"sample-prior", "train", "certify", "eval",
                                            "param-count"};
    std::vector<CLI::App*> subs;
    for (const auto& name : names) {
        CLI::App* s = app.add_subcommand(name);
        s->add_option("--config", config_path)->required();
        s->add_option("--out", out_dir)->required();
        s->add_option("--seed", seed_override);
        subs.push_back(s);
    }
    std::vector<const char*> argv = {"spectral"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        std::string command;
        for (std::size_t i = 0; i < names.size(); ++i)
            if (subs[i]->parsed()) command = names[i];
        const std::string text = read_file(config_path);
        // param-count accepts comparison architectures that the trainable
        // model description does not, so it skips the full config parse.
        RunConfig cfg;
        if (command == "param-count")
            cfg.digest = fnv1a(text);
        else
            cfg = cli_detail::parse_config(text);
        if (!seed_override.empty()) {
            cfg.train.seed = seed_override.rfind("0x", 0) == 0
                                 ? parse_hex_u64(seed_override)
                                 : static_cast<std::uint64_t>(std::stoull(seed_override));
        }
        std::filesystem::create_directories(out_dir);
        std::vector<std::string> outputs;
        if (command == "sample-prior")
            outputs = cli_detail::cmd_sample_prior(cfg, out_dir);
        else if (command == "train")
            outputs = cli_detail::cmd_train(cfg, out_dir);
        else if (command == "certify")
            outputs = cli_detail::cmd_certify(cfg, out_dir);
        else if (command == "eval")
            outputs = cli_detail::cmd_eval(cfg, out_dir);
        else
            outputs = cli_detail::cmd_param_count(
                cfg, out_dir, nlohmann::json::parse(text).at("model"));
        outputs.push_back("run.json");
        cli_detail::write_run_manifest(out_dir, command, cfg, outputs);
        return 0;
    } catch (const std::exception& e) {
        nlohmann::json err;
        err["error"] = e.what();
        std::cout << err.dump() << "\n";
        return 1;
    }
}

}  // namespace spectral
