#include "divscan/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace divscan {

namespace fs = std::filesystem;

std::string kind_to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv: return "conv";
        case LayerKind::FullyConnected: return "fully_connected";
        case LayerKind::MsaQ: return "msa_q";
        case LayerKind::MsaK: return "msa_k";
        case LayerKind::MsaV: return "msa_v";
        case LayerKind::Activation: return "activation";
    }
    throw ValidationError("unhandled layer kind");
}

LayerKind kind_from_string(const std::string& s) {
    if (s == "conv") return LayerKind::Conv;
    if (s == "fully_connected") return LayerKind::FullyConnected;
    if (s == "msa_q") return LayerKind::MsaQ;
    if (s == "msa_k") return LayerKind::MsaK;
    if (s == "msa_v") return LayerKind::MsaV;
    if (s == "activation") return LayerKind::Activation;
    throw ValidationError("unknown layer kind '" + s + "'");
}

std::size_t LayerTensor::element_count() const {
    std::size_t n = 1;
    for (std::size_t axis : shape) n *= axis;
    return shape.empty() ? 0 : n;
}

const LayerTensor* TensorBundle::find_layer(const std::string& name) const {
    for (const auto& layer : layers) {
        if (layer.name == name) return &layer;
    }
    return nullptr;
}

namespace {

bool is_msa(LayerKind kind) {
    return kind == LayerKind::MsaQ || kind == LayerKind::MsaK || kind == LayerKind::MsaV;
}

} // namespace

void validate_layer(const LayerTensor& layer) {
    if (layer.name.empty()) throw ValidationError("layer with empty name");
    for (std::size_t axis : layer.shape) {
        if (axis == 0)
            throw ValidationError("layer '" + layer.name + "': zero-sized shape axis");
    }
    switch (layer.kind) {
        case LayerKind::Conv:
            if (layer.shape.size() != 4)
                throw ValidationError("layer '" + layer.name + "': conv needs 4 shape axes (k,k,n_in,n_out)");
            break;
        case LayerKind::FullyConnected:
        case LayerKind::Activation:
            if (layer.shape.size() != 2)
                throw ValidationError("layer '" + layer.name + "': " + kind_to_string(layer.kind) +
                                      " needs 2 shape axes");
            break;
        case LayerKind::MsaQ:
        case LayerKind::MsaK:
        case LayerKind::MsaV:
            if (layer.shape.size() != 2)
                throw ValidationError("layer '" + layer.name + "': msa needs 2 shape axes (in,out)");
            break;
    }
    if (layer.heads == 0)
        throw ValidationError("layer '" + layer.name + "': heads must be positive");
    if (is_msa(layer.kind)) {
        if (layer.shape[0] % layer.heads != 0)
            throw ValidationError("layer '" + layer.name + "': input size " +
                                  std::to_string(layer.shape[0]) + " not divisible by heads " +
                                  std::to_string(layer.heads));
    } else if (layer.heads != 1) {
        throw ValidationError("layer '" + layer.name + "': heads only applies to msa kinds");
    }
    if (layer.data.size() != layer.element_count())
        throw ValidationError("layer '" + layer.name + "': element count " +
                              std::to_string(layer.data.size()) + " does not match shape product " +
                              std::to_string(layer.element_count()));
    for (float v : layer.data) {
        if (!std::isfinite(v))
            throw ValidationError("layer '" + layer.name + "': non-finite value in data");
    }
}

void validate_bundle(const TensorBundle& bundle) {
    if (bundle.model_id.empty()) throw ValidationError("bundle with empty model_id");
    std::set<std::string> names;
    for (const auto& layer : bundle.layers) {
        if (!names.insert(layer.name).second)
            throw ValidationError("duplicate layer name '" + layer.name + "'");
        validate_layer(layer);
    }
    if (bundle.upstream_accuracy) {
        const double a = *bundle.upstream_accuracy;
        if (!(a >= 0.0 && a <= 1.0))
            throw ValidationError("upstream_accuracy outside [0,1]");
    }
}

std::vector<float> read_f32_blob(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open blob '" + path.string() + "'");
    in.seekg(0, std::ios::end);
    const std::streamoff bytes = in.tellg();
    in.seekg(0, std::ios::beg);
    if (bytes < 0) throw IoError("cannot stat blob '" + path.string() + "'");
    if (bytes % 4 != 0)
        throw ValidationError("blob '" + path.string() + "': size " + std::to_string(bytes) +
                              " is not a multiple of 4");
    std::vector<unsigned char> raw(static_cast<std::size_t>(bytes));
    if (bytes > 0 && !in.read(reinterpret_cast<char*>(raw.data()), bytes))
        throw IoError("short read on blob '" + path.string() + "'");
    std::vector<float> values(raw.size() / 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const std::uint32_t u = static_cast<std::uint32_t>(raw[4 * i]) |
                                (static_cast<std::uint32_t>(raw[4 * i + 1]) << 8) |
                                (static_cast<std::uint32_t>(raw[4 * i + 2]) << 16) |
                                (static_cast<std::uint32_t>(raw[4 * i + 3]) << 24);
        values[i] = std::bit_cast<float>(u);
    }
    return values;
}

void write_f32_blob(const fs::path& path, const std::vector<float>& values) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open blob '" + path.string() + "' for writing");
    std::vector<unsigned char> raw(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const std::uint32_t u = std::bit_cast<std::uint32_t>(values[i]);
        raw[4 * i] = static_cast<unsigned char>(u & 0xFF);
        raw[4 * i + 1] = static_cast<unsigned char>((u >> 8) & 0xFF);
        raw[4 * i + 2] = static_cast<unsigned char>((u >> 16) & 0xFF);
        raw[4 * i + 3] = static_cast<unsigned char>((u >> 24) & 0xFF);
    }
    if (!raw.empty()) out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("short write on blob '" + path.string() + "'");
}

TensorBundle load_bundle(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw IoError("missing manifest '" + manifest_path.string() + "'");

    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("manifest '" + manifest_path.string() + "': " + e.what());
    }

    TensorBundle bundle;
    try {
        bundle.model_id = manifest.at("model_id").get<std::string>();
        if (manifest.contains("upstream_accuracy") && !manifest["upstream_accuracy"].is_null())
            bundle.upstream_accuracy = manifest["upstream_accuracy"].get<double>();
        for (const auto& entry : manifest.at("layers")) {
            LayerTensor layer;
            layer.name = entry.at("name").get<std::string>();
            layer.kind = kind_from_string(entry.at("kind").get<std::string>());
            for (const auto& axis : entry.at("shape")) {
                const std::int64_t v = axis.get<std::int64_t>();
                if (v <= 0)
                    throw ValidationError("layer '" + layer.name + "': non-positive shape axis");
                layer.shape.push_back(static_cast<std::size_t>(v));
            }
            if (entry.contains("heads")) {
                const std::int64_t h = entry["heads"].get<std::int64_t>();
                if (h <= 0) throw ValidationError("layer '" + layer.name + "': non-positive heads");
                layer.heads = static_cast<std::size_t>(h);
            }
            const fs::path blob = dir / entry.at("file").get<std::string>();
            layer.data = read_f32_blob(blob);
            if (layer.data.size() != layer.element_count())
                throw ValidationError("layer '" + layer.name + "': blob holds " +
                                      std::to_string(layer.data.size() * 4) + " bytes, shape needs " +
                                      std::to_string(layer.element_count() * 4));
            bundle.layers.push_back(std::move(layer));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("manifest '" + manifest_path.string() + "': " + e.what());
    }

    validate_bundle(bundle);
    return bundle;
}

void write_bundle(const TensorBundle& bundle, const fs::path& dir) {
    validate_bundle(bundle);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create bundle directory '" + dir.string() + "'");

    nlohmann::ordered_json manifest;
    manifest["model_id"] = bundle.model_id;
    if (bundle.upstream_accuracy) manifest["upstream_accuracy"] = *bundle.upstream_accuracy;
    manifest["layers"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < bundle.layers.size(); ++i) {
        const auto& layer = bundle.layers[i];
        const std::string blob_name = "layer_" + std::to_string(i) + ".bin";
        nlohmann::ordered_json entry;
        entry["name"] = layer.name;
        entry["kind"] = kind_to_string(layer.kind);
        entry["shape"] = layer.shape;
        entry["heads"] = layer.heads;
        entry["file"] = blob_name;
        manifest["layers"].push_back(entry);
        write_f32_blob(dir / blob_name, layer.data);
    }

    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw IoError("cannot write manifest in '" + dir.string() + "'");
    out << manifest.dump(2) << "\n";
    if (!out) throw IoError("short write on manifest in '" + dir.string() + "'");
}

namespace csv {

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

} // namespace

Table read_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open CSV '" + path.string() + "'");
    Table table;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_line(line);
        if (first) {
            table.header = std::move(cells);
            first = false;
            continue;
        }
        if (cells.size() != table.header.size())
            throw ValidationError("CSV '" + path.string() + "': row with " +
                                  std::to_string(cells.size()) + " cells, header has " +
                                  std::to_string(table.header.size()));
        table.rows.push_back(std::move(cells));
    }
    if (first) throw ValidationError("CSV '" + path.string() + "': empty file");
    return table;
}

double parse_number(const std::string& cell, const std::string& context) {
    // std::from_chars is locale-independent: decimal points only, no
    // thousands separators.
    std::size_t first = 0;
    std::size_t last = cell.size();
    while (first < last && cell[first] == ' ') ++first;
    while (last > first && cell[last - 1] == ' ') --last;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(cell.data() + first, cell.data() + last, v);
    if (ec != std::errc{} || ptr != cell.data() + last)
        throw ValidationError(context + ": non-numeric cell '" + cell + "'");
    return v;
}

} // namespace csv

EmbeddingSet load_embeddings(const fs::path& path) {
    const csv::Table table = csv::read_file(path);
    if (table.header.size() < 2 || table.header[0] != "label")
        throw ValidationError("embeddings CSV '" + path.string() +
                              "': header must be label,e0,...");
    const std::size_t p = table.header.size() - 1;
    if (table.rows.size() < 2)
        throw ValidationError("embeddings CSV '" + path.string() + "': fewer than 2 rows");

    EmbeddingSet set;
    set.vectors.resize(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(p));
    std::map<std::string, int> label_ids;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        auto [it, inserted] = label_ids.try_emplace(row[0], static_cast<int>(label_ids.size()));
        set.labels.push_back(it->second);
        for (std::size_t c = 0; c < p; ++c) {
            set.vectors(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                csv::parse_number(row[c + 1], "embeddings row " + std::to_string(r + 1));
        }
    }
    set.num_classes = static_cast<int>(label_ids.size());
    return set;
}

double clamp_accuracy(double value, double clamp_eps) {
    return std::min(std::max(value, clamp_eps), 1.0 - clamp_eps);
}

AccuracyTable load_accuracy_table(const fs::path& path, double clamp_eps) {
    if (!(clamp_eps > 0.0 && clamp_eps < 0.5))
        throw ValidationError("clamp_eps must lie in (0, 0.5)");
    const csv::Table table = csv::read_file(path);
    if (table.header.size() < 2)
        throw ValidationError("accuracy CSV '" + path.string() + "': needs at least one dataset column");

    AccuracyTable out;
    out.datasets.assign(table.header.begin() + 1, table.header.end());
    out.acc.resize(static_cast<Eigen::Index>(table.rows.size()),
                   static_cast<Eigen::Index>(out.datasets.size()));
    std::set<std::string> seen;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        if (!seen.insert(row[0]).second)
            throw ValidationError("accuracy CSV: duplicate model_id '" + row[0] + "'");
        out.models.push_back(row[0]);
        for (std::size_t c = 1; c < row.size(); ++c) {
            const double v = csv::parse_number(row[c], "accuracy row '" + row[0] + "'");
            if (!(v >= 0.0 && v <= 1.0))
                throw ValidationError("accuracy row '" + row[0] + "': value " + row[c] +
                                      " outside [0,1]");
            out.acc(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c - 1)) =
                clamp_accuracy(v, clamp_eps);
        }
    }
    if (out.models.size() < 2)
        throw ValidationError("accuracy CSV '" + path.string() + "': needs at least 2 models");
    return out;
}

} // namespace divscan
