#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "spectral/svi.hpp"

namespace spectral {

static_assert(std::endian::native == std::endian::little,
              "parameter blocks are written little-endian");

inline std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hex_u64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::uint64_t parse_hex_u64(const std::string& s) {
    if (s.size() < 3 || s[0] != '0' || (s[1] != 'x' && s[1] != 'X'))
        throw std::invalid_argument("bad hex integer: " + s);
    std::uint64_t v = 0;
    for (std::size_t i = 2; i < s.size(); ++i) {
        const char c = s[i];
        int digit;
        if (c >= '0' && c <= '9')
            digit = c - '0';
        else if (c >= 'a' && c <= 'f')
            digit = c - 'a' + 10;
        else if (c >= 'A' && c <= 'F')
            digit = c - 'A' + 10;
        else
            throw std::invalid_argument("bad hex integer: " + s);
        v = (v << 4) | static_cast<std::uint64_t>(digit);
    }
    return v;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open file: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

// ---------------------------------------------------------------------------
// IDX (big-endian magic + dims, raw unsigned bytes)

struct IdxData {
    std::vector<int> dims;
    std::vector<unsigned char> bytes;
};

inline IdxData load_idx(const std::string& path) {
    const std::string raw = read_file(path);
    auto need = [&](std::size_t offset, std::size_t count) {
        if (raw.size() < offset + count)
            throw std::runtime_error("truncated IDX file at offset " + std::to_string(offset) +
                                     ": " + path);
    };
    need(0, 4);
    const auto* b = reinterpret_cast<const unsigned char*>(raw.data());
    if (b[0] != 0 || b[1] != 0)
        throw std::runtime_error("bad IDX magic at offset 0: " + path);
    if (b[2] != 0x08)
        throw std::runtime_error("unsupported IDX element type at offset 2: " + path);
    const int ndim = b[3];
    if (ndim < 1) throw std::runtime_error("bad IDX magic at offset 3: " + path);
    need(4, static_cast<std::size_t>(ndim) * 4);
    IdxData d;
    std::size_t total = 1;
    for (int i = 0; i < ndim; ++i) {
        const std::size_t o = 4 + static_cast<std::size_t>(i) * 4;
        const int dim = (b[o] << 24) | (b[o + 1] << 16) | (b[o + 2] << 8) | b[o + 3];
        if (dim <= 0) throw std::runtime_error("bad IDX dimension at offset " + std::to_string(o) +
                                               ": " + path);
        d.dims.push_back(dim);
        total *= static_cast<std::size_t>(dim);
    }
    const std::size_t payload = 4 + static_cast<std::size_t>(ndim) * 4;
    if (raw.size() != payload + total)
        throw std::runtime_error("IDX payload mismatch at offset " + std::to_string(payload) +
                                 ": " + path);
    d.bytes.assign(b + payload, b + payload + total);
    return d;
}

// N x rows x cols images scaled to [0, 1], flattened row-major.
inline Dataset load_idx_images(const std::string& path) {
    const IdxData d = load_idx(path);
    if (d.dims.size() != 3)
        throw std::runtime_error("IDX image file must have 3 dimensions: " + path);
    Dataset out;
    out.count = d.dims[0];
    out.dim = d.dims[1] * d.dims[2];
    out.X.resize(d.bytes.size());
    for (std::size_t i = 0; i < d.bytes.size(); ++i) out.X[i] = d.bytes[i] / 255.0;
    return out;
}

inline std::vector<int> load_idx_labels(const std::string& path, int classes) {
    const IdxData d = load_idx(path);
    if (d.dims.size() != 1)
        throw std::runtime_error("IDX label file must have 1 dimension: " + path);
    std::vector<int> y(d.bytes.begin(), d.bytes.end());
    for (int v : y)
        if (v < 0 || v >= classes) throw std::runtime_error("label out of range: " + path);
    return y;
}

// ---------------------------------------------------------------------------
// Feature matrices: CSV with header + final label column, or a raw
// little-endian float32 block with a JSON sidecar declaring count and dim.

inline Dataset load_features_csv(const std::string& path) {
    const std::string raw = read_file(path);
    std::istringstream in(raw);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty feature file: " + path);
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::string field;
        std::istringstream ls(s);
        while (std::getline(ls, field, ',')) out.push_back(field);
        if (!s.empty() && s.back() == ',') out.push_back("");
        return out;
    };
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const int columns = static_cast<int>(split(line).size());
    if (columns < 2) throw std::runtime_error("feature file needs at least two columns: " + path);
    Dataset d;
    d.dim = columns - 1;
    int row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++row;
        const std::vector<std::string> fields = split(line);
        if (static_cast<int>(fields.size()) != columns)
            throw std::runtime_error("ragged row " + std::to_string(row) + ": " + path);
        for (int j = 0; j < d.dim; ++j) {
            double v;
            try {
                std::size_t used = 0;
                v = std::stod(fields[j], &used);
                if (used != fields[j].size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw std::runtime_error("bad value at row " + std::to_string(row) + ": " + path);
            }
            if (!std::isfinite(v))
                throw std::runtime_error("non-finite value at row " + std::to_string(row) + ": " +
                                         path);
            d.X.push_back(v);
        }
        try {
            std::size_t used = 0;
            const long label = std::stol(fields[d.dim], &used);
            if (used != fields[d.dim].size()) throw std::invalid_argument("trailing");
            d.y.push_back(static_cast<int>(label));
        } catch (const std::exception&) {
            throw std::runtime_error("bad label at row " + std::to_string(row) + ": " + path);
        }
        ++d.count;
    }
    if (d.count == 0) throw std::runtime_error("empty feature file: " + path);
    return d;
}

inline Dataset load_features_binary(const std::string& data_path, const std::string& sidecar_path) {
    const nlohmann::json side = nlohmann::json::parse(read_file(sidecar_path));
    if (!side.contains("count") || !side.contains("dim"))
        throw std::runtime_error("sidecar must declare count and dim: " + sidecar_path);
    Dataset d;
    d.count = side.at("count").get<int>();
    d.dim = side.at("dim").get<int>();
    if (d.count <= 0 || d.dim <= 0)
        throw std::runtime_error("sidecar must declare count and dim: " + sidecar_path);
    const std::string raw = read_file(data_path);
    const std::size_t expect = static_cast<std::size_t>(d.count) * d.dim * 4;
    if (raw.size() != expect)
        throw std::runtime_error("binary block size mismatch (want " + std::to_string(expect) +
                                 " bytes, have " + std::to_string(raw.size()) + "): " + data_path);
    d.X.resize(static_cast<std::size_t>(d.count) * d.dim);
    for (std::size_t i = 0; i < d.X.size(); ++i) {
        float f;
        std::memcpy(&f, raw.data() + i * 4, 4);
        if (!std::isfinite(static_cast<double>(f)))
            throw std::runtime_error("non-finite value at row " +
                                     std::to_string(i / static_cast<std::size_t>(d.dim) + 1) +
                                     ": " + data_path);
        d.X[i] = static_cast<double>(f);
    }
    if (side.contains("labels")) {
        d.y = side.at("labels").get<std::vector<int>>();
        if (static_cast<int>(d.y.size()) != d.count)
            throw std::runtime_error("sidecar labels length mismatch: " + sidecar_path);
    }
    return d;
}

// ---------------------------------------------------------------------------
// CSV output, 17 significant digits so text roundtrips are lossless.

inline std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
    std::ostringstream out;
    for (std::size_t i = 0; i < header.size(); ++i)
        out << (i ? "," : "") << header[i];
    out << "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i)
            out << (i ? "," : "") << format_g17(row[i]);
        out << "\n";
    }
    write_file(path, out.str());
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON manifest + raw little-endian float64 blocks in the fixed
// block order.  Roundtrips are bitwise exact, including RNG state.

struct Checkpoint {
    int schema_version = 1;
    std::uint64_t config_digest = 0;
    std::uint64_t seed = 0;
    ModelSpec model;
    int rank = 8;
    double eps = 1e-5;
    Guides guides;
    std::array<std::uint64_t, 4> noise_state{};
    std::array<std::uint64_t, 4> batch_state{};
};

inline nlohmann::json model_to_json(const ModelSpec& m) {
    nlohmann::json j;
    j["kind"] = m.two_dim() ? "bccb2d" : "circulant1d";
    j["n"] = m.n;
    j["mask_bins"] = m.mask_bins;
    j["height"] = m.height;
    j["width"] = m.width;
    j["c_in"] = m.c_in;
    j["c_out"] = m.c_out;
    j["radial_cutoff"] = m.radial_cutoff;
    j["classes"] = m.classes;
    j["layer_bias"] = m.layer_bias;
    j["sigma0_sq"] = m.sigma0_sq;
    j["alpha"] = m.alpha;
    j["learn_alpha"] = m.learn_alpha;
    return j;
}

inline ModelSpec model_from_json(const nlohmann::json& j) {
    ModelSpec m;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "circulant1d")
        m.kind = ModelSpec::Kind::Circulant1D;
    else if (kind == "bccb2d")
        m.kind = ModelSpec::Kind::Bccb2D;
    else
        throw std::runtime_error("unknown layer kind: " + kind);
    m.n = j.value("n", 0);
    m.mask_bins = j.value("mask_bins", -1);
    m.height = j.value("height", 0);
    m.width = j.value("width", 0);
    m.c_in = j.value("c_in", 1);
    m.c_out = j.value("c_out", 1);
    m.radial_cutoff = j.value("radial_cutoff", -1.0);
    m.classes = j.value("classes", 2);
    m.layer_bias = j.value("layer_bias", true);
    m.sigma0_sq = j.value("sigma0_sq", 1.0);
    m.alpha = j.value("alpha", 2.0);
    m.learn_alpha = j.value("learn_alpha", true);
    return m;
}

inline void save_checkpoint(const std::string& dir, const Checkpoint& ck) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["schema_version"] = ck.schema_version;
    manifest["format"] = "spectral-checkpoint";
    manifest["config_digest"] = hex_u64(ck.config_digest);
    manifest["seed"] = hex_u64(ck.seed);
    manifest["model"] = model_to_json(ck.model);
    manifest["guide"] = {{"rank", ck.rank}, {"eps", ck.eps}};
    auto states = [](const std::array<std::uint64_t, 4>& s) {
        nlohmann::json a = nlohmann::json::array();
        for (std::uint64_t v : s) a.push_back(hex_u64(v));
        return a;
    };
    manifest["rng"] = {{"noise", states(ck.noise_state)}, {"batch", states(ck.batch_state)}};

    std::string blob;
    nlohmann::json blocks = nlohmann::json::array();
    for_each_block(ck.model, const_cast<Guides&>(ck.guides),
                   [&](const char* name, std::vector<double>& v) {
                       blocks.push_back({{"name", name},
                                         {"offset", blob.size() / sizeof(double)},
                                         {"count", v.size()}});
                       const std::size_t at = blob.size();
                       blob.resize(at + v.size() * sizeof(double));
                       std::memcpy(blob.data() + at, v.data(), v.size() * sizeof(double));
                   });
    manifest["blocks"] = blocks;
    write_file(dir + "/checkpoint.json", manifest.dump(2) + "\n");
    write_file(dir + "/params.bin", blob);
}

inline Checkpoint load_checkpoint(const std::string& dir) {
    const nlohmann::json manifest = nlohmann::json::parse(read_file(dir + "/checkpoint.json"));
    if (manifest.value("format", "") != "spectral-checkpoint")
        throw std::runtime_error("not a checkpoint manifest: " + dir);
    Checkpoint ck;
    ck.schema_version = manifest.at("schema_version").get<int>();
    if (ck.schema_version != 1)
        throw std::runtime_error("unsupported checkpoint schema version: " +
                                 std::to_string(ck.schema_version));
    ck.config_digest = parse_hex_u64(manifest.at("config_digest").get<std::string>());
    ck.seed = parse_hex_u64(manifest.at("seed").get<std::string>());
    ck.model = model_from_json(manifest.at("model"));
    ck.rank = manifest.at("guide").at("rank").get<int>();
    ck.eps = manifest.at("guide").at("eps").get<double>();
    auto states = [&](const nlohmann::json& a) {
        std::array<std::uint64_t, 4> s{};
        for (int i = 0; i < 4; ++i) s[i] = parse_hex_u64(a.at(i).get<std::string>());
        return s;
    };
    ck.noise_state = states(manifest.at("rng").at("noise"));
    ck.batch_state = states(manifest.at("rng").at("batch"));

    const std::string blob = read_file(dir + "/params.bin");
    std::map<std::string, std::pair<std::size_t, std::size_t>> table;
    for (const auto& b : manifest.at("blocks"))
        table[b.at("name").get<std::string>()] = {b.at("offset").get<std::size_t>(),
                                                  b.at("count").get<std::size_t>()};
    ck.guides = shaped_guides(ck.model, ck.rank, ck.eps);
    for_each_block(ck.model, ck.guides, [&](const char* name, std::vector<double>& v) {
        const auto it = table.find(name);
        if (it == table.end() || it->second.second != v.size())
            throw std::runtime_error(std::string("checkpoint block mismatch: ") + name);
        const std::size_t bytes_at = it->second.first * sizeof(double);
        if (blob.size() < bytes_at + v.size() * sizeof(double))
            throw std::runtime_error(std::string("checkpoint block mismatch: ") + name);
        std::memcpy(v.data(), blob.data() + bytes_at, v.size() * sizeof(double));
    });
    return ck;
}

}  // namespace spectral
