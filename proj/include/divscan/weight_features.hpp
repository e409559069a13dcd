#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "divscan/tensor_io.hpp"

namespace divscan {

/// A layer's weights rearranged so that each column is one feature vector:
/// a flattened filter (conv), an output-unit weight vector (fc), or a
/// per-head projection column (attention). Exact-zero columns are removed
/// at construction and counted in zero_dropped.
struct FeatureMatrix {
    std::string layer_name;
    std::string sub_unit; // "" for conv/fc, "<kind>.h<h>" for attention heads
    Eigen::MatrixXd matrix; // d x n, n >= 2
    std::size_t zero_dropped = 0;
};

/// Conv (k,k,n_in,n_out) -> (k*k*n_in) x n_out; column i is output filter i
/// flattened in row-major (k,k,n_in) order.
FeatureMatrix features_of_conv(const LayerTensor& layer);

/// Fully-connected (in,out) -> in x out identity reshape.
FeatureMatrix features_of_fc(const LayerTensor& layer);

/// MSA projection (in,out) with H heads -> H matrices of (in/H) x out, one
/// per contiguous input-channel block.
std::vector<FeatureMatrix> features_of_msa(const LayerTensor& layer);

/// Extracts every weight layer of the bundle in manifest order. Layers whose
/// names match exclude_pattern (ECMAScript regex, unanchored search) are
/// skipped, as are activation tensors.
std::vector<FeatureMatrix> extract_all(const TensorBundle& bundle,
                                       const std::optional<std::string>& exclude_pattern = std::nullopt);

} // namespace divscan
