#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "divscan/errors.hpp"

namespace divscan {

enum class LayerKind {
    Conv,
    FullyConnected,
    MsaQ,
    MsaK,
    MsaV,
    Activation, // stored data, never a weight-feature source
};

std::string kind_to_string(LayerKind kind);
LayerKind kind_from_string(const std::string& s);

/// One named weight (or activation) tensor. Data is kept in the on-disk
/// float32 row-major layout; all computation upgrades to double.
struct LayerTensor {
    std::string name;
    LayerKind kind = LayerKind::FullyConnected;
    std::vector<std::size_t> shape;
    std::size_t heads = 1;
    std::vector<float> data;

    std::size_t element_count() const;
};

struct TensorBundle {
    std::string model_id;
    std::optional<double> upstream_accuracy;
    std::vector<LayerTensor> layers;

    const LayerTensor* find_layer(const std::string& name) const;
};

/// Embedding vectors with dense class labels in [0, K).
struct EmbeddingSet {
    Eigen::MatrixXd vectors; // N x p
    std::vector<int> labels; // size N
    int num_classes = 0;
};

/// Dense models x datasets grid of top-1 accuracies, clamped away from {0,1}.
struct AccuracyTable {
    std::vector<std::string> models;
    std::vector<std::string> datasets;
    Eigen::MatrixXd acc; // |models| x |datasets|
};

/// Validates a tensor against the per-kind shape contract and finiteness.
void validate_layer(const LayerTensor& layer);
void validate_bundle(const TensorBundle& bundle);

/// Loads a bundle directory: manifest.json plus one raw little-endian
/// float32 blob per layer. Layer order follows the manifest.
TensorBundle load_bundle(const std::filesystem::path& dir);

/// Writes a bundle in the same directory layout. Blob file names are
/// derived from layer indices; load_bundle(write_bundle(b)) == b.
void write_bundle(const TensorBundle& bundle, const std::filesystem::path& dir);

/// CSV with header "label,e0,...,e{p-1}". Labels are re-indexed densely
/// to [0, K) in first-appearance order.
EmbeddingSet load_embeddings(const std::filesystem::path& path);

/// CSV with model_id rows and dataset columns; cells in [0,1] are clamped
/// into [clamp_eps, 1-clamp_eps] so the logit stays finite.
AccuracyTable load_accuracy_table(const std::filesystem::path& path, double clamp_eps = 1e-6);

double clamp_accuracy(double value, double clamp_eps);

/// Raw float32 blob helpers (little-endian, no header).
std::vector<float> read_f32_blob(const std::filesystem::path& path);
void write_f32_blob(const std::filesystem::path& path, const std::vector<float>& values);

namespace csv {
/// Parsed CSV: a header row plus data rows, all as strings. Rows must be
/// rectangular; the caller converts cells as needed.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};
Table read_file(const std::filesystem::path& path);
double parse_number(const std::string& cell, const std::string& context);
} // namespace csv

} // namespace divscan
