#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "divscan/errors.hpp"

namespace divscan {

struct GbdtConfig {
    std::size_t n_trees = 100;
    std::size_t max_depth = 6;
    double learning_rate = 0.1;
    std::size_t min_samples_leaf = 1;

    void validate() const;
};

/// One node of a regression tree; leaves keep feature == -1.
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0; // leaf prediction (residual scale, before learning rate)
    double gain = 0.0;  // SSE reduction of the split
};

struct RegressionTree {
    std::vector<TreeNode> nodes;

    double predict(const Eigen::RowVectorXd& x) const;
};

struct GbdtModel {
    double base = 0.0;
    double learning_rate = 0.1;
    std::size_t n_features = 0;
    std::vector<RegressionTree> trees;
    std::vector<double> train_mse; // after each boosting round

    double predict(const Eigen::RowVectorXd& x) const;
};

/// Squared-error gradient boosting with exact greedy splits over midpoints
/// of sorted distinct feature values. Fully deterministic: equal gains go to
/// the lowest feature index, then the lowest threshold. The seed is accepted
/// for interface stability but nothing is randomized.
GbdtModel fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& target,
              const GbdtConfig& config = {}, std::uint64_t seed = 0);

/// Per-feature share of total split gain across all trees; sums to 1 unless
/// no split ever happened (then all zeros).
std::vector<double> importance(const GbdtModel& model);

struct ImportanceRecord {
    std::vector<std::pair<std::string, double>> features;
    double transfer = 0.0;
};

struct FeatureImportance {
    std::vector<std::string> names;
    std::vector<double> shares;
};

/// Assembles the records into a matrix (feature order taken from the first
/// record), fits, and returns named gain shares. Every record must carry
/// exactly the same feature keys.
FeatureImportance importance_table(const std::vector<ImportanceRecord>& records,
                                   const GbdtConfig& config = {}, std::uint64_t seed = 0);

} // namespace divscan
