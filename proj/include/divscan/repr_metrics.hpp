#pragma once

#include <vector>

#include <Eigen/Core>

#include "divscan/tensor_io.hpp"

namespace divscan {

/// Activations of n examples across p channels. Construction validates
/// n >= 2 and finiteness.
struct ActivationMatrix {
    Eigen::MatrixXd values; // n x p
    bool centered = false;

    static ActivationMatrix from(Eigen::MatrixXd values, bool centered = false);
};

/// Loads an activation tensor (kind "activation", shape [n, p]) from a
/// bundle directory. When layer_name is empty the bundle must contain
/// exactly one activation layer.
ActivationMatrix load_activation(const std::filesystem::path& bundle_dir,
                                 const std::string& layer_name = "");

/// Linear CKA: cosine similarity between the example-space Gram matrices of
/// the column-centered activations. Invariant to rotation and isotropic
/// scaling; 0 when either Gram vanishes.
double cka_linear(const ActivationMatrix& x, const ActivationMatrix& y);

/// Minibatch CKA: per-batch unbiased HSIC estimates with linear kernels,
/// combined as mean(hsic_xy) / sqrt(mean(hsic_xx) * mean(hsic_yy)).
/// Every batch needs at least 4 rows.
double cka_minibatch(const std::vector<ActivationMatrix>& x_batches,
                     const std::vector<ActivationMatrix>& y_batches);

/// Mean linear CKA over all unordered distinct stage pairs.
double cka_abstraction_score(const std::vector<ActivationMatrix>& stage_activations);

struct ClassMetrics {
    double v_intra = 0.0;
    double s_inter = 0.0;
    double msc = 0.0;
};

/// Intra-class variation, inter-class separation, and the mean silhouette
/// coefficient under cosine distance 1 - cos. Singleton-class examples (and
/// all examples when only one class exists) contribute a silhouette of 0.
ClassMetrics class_metrics(const EmbeddingSet& emb);

} // namespace divscan
