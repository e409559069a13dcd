#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "divscan/reports.hpp"
#include "divscan/tensor_io.hpp"
#include "divscan/weight_features.hpp"

namespace divscan {

struct ClusterParams {
    double grid_step = 0.01; // 1/grid_step must be an integer

    void validate() const;
};

/// Greedy average-cosine agglomeration: repeatedly merge the cluster pair
/// with the largest mean pairwise cosine similarity while that maximum is
/// strictly greater than tau. Ties go to the pair with the lexicographically
/// smallest (min column index, min column index) key. Clusters are returned
/// ordered by smallest member, members ascending.
std::vector<std::vector<int>> agglomerate(const FeatureMatrix& features, double tau);

/// |agglomerate(features, tau)| / n.
double cluster_ratio(const FeatureMatrix& features, double tau);

/// Trapezoidal area under the cluster-ratio curve over the uniform tau grid
/// {0, grid_step, ..., 1}. Higher means less redundant features.
double cluster_diversity(const FeatureMatrix& features, const ClusterParams& params = {});

/// One minus the normalized area under the cumulative explained-variance
/// curve of the feature covariance spectrum. Rank 0/1 inputs score 0.
double spectral_diversity(const FeatureMatrix& features);

enum class DiversityMeasure { Cluster, Spectral, Both };

/// Extracts all weight features, scores each unit with the requested
/// measures, and averages unweighted across units. CIS fields are filled
/// when an upstream accuracy is available (the override wins over the
/// bundle's own value).
DiversityReport model_diversity(const TensorBundle& bundle,
                                const ClusterParams& params = {},
                                const std::optional<std::string>& exclude_pattern = std::nullopt,
                                DiversityMeasure measure = DiversityMeasure::Both,
                                std::optional<double> accuracy_override = std::nullopt);

} // namespace divscan
