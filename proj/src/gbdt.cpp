#include "divscan/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace divscan {

void GbdtConfig::validate() const {
    if (n_trees == 0) throw ValidationError("gbdt: n_trees must be positive");
    if (max_depth == 0) throw ValidationError("gbdt: max_depth must be positive");
    if (!(learning_rate > 0.0)) throw ValidationError("gbdt: learning_rate must be > 0");
    if (min_samples_leaf == 0) throw ValidationError("gbdt: min_samples_leaf must be positive");
}

double RegressionTree::predict(const Eigen::RowVectorXd& x) const {
    int node = 0;
    while (nodes[static_cast<std::size_t>(node)].feature >= 0) {
        const TreeNode& cur = nodes[static_cast<std::size_t>(node)];
        node = x(cur.feature) <= cur.threshold ? cur.left : cur.right;
    }
    return nodes[static_cast<std::size_t>(node)].value;
}

double GbdtModel::predict(const Eigen::RowVectorXd& x) const {
    double out = base;
    for (const auto& tree : trees) out += learning_rate * tree.predict(x);
    return out;
}

namespace {

struct SplitChoice {
    bool found = false;
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
};

SplitChoice best_split(const Eigen::MatrixXd& features, const Eigen::VectorXd& residual,
                       const std::vector<int>& samples, std::size_t min_samples_leaf) {
    const std::size_t m = samples.size();
    SplitChoice best;
    if (m < 2 * min_samples_leaf) return best;

    double parent_sum = 0.0;
    for (int i : samples) parent_sum += residual(i);

    std::vector<std::pair<double, double>> column(m); // (feature value, residual)
    for (int f = 0; f < features.cols(); ++f) {
        for (std::size_t t = 0; t < m; ++t)
            column[t] = {features(samples[t], f), residual(samples[t])};
        std::sort(column.begin(), column.end());

        // Prefix scan over the sorted order; candidate thresholds are the
        // midpoints between consecutive distinct feature values.
        double left_sum = 0.0;
        for (std::size_t t = 0; t + 1 < m; ++t) {
            left_sum += column[t].second;
            if (column[t].first == column[t + 1].first) continue;
            const std::size_t left_n = t + 1;
            const std::size_t right_n = m - left_n;
            if (left_n < min_samples_leaf || right_n < min_samples_leaf) continue;

            const double right_sum = parent_sum - left_sum;
            // SSE(parent) - SSE(L) - SSE(R) reduces to this closed form.
            const double gain = left_sum * left_sum / static_cast<double>(left_n) +
                                right_sum * right_sum / static_cast<double>(right_n) -
                                parent_sum * parent_sum / static_cast<double>(m);
            if (!(gain > 0.0)) continue;
            const double threshold = 0.5 * (column[t].first + column[t + 1].first);
            const bool better =
                gain > best.gain ||
                (gain == best.gain && (f < best.feature ||
                                       (f == best.feature && threshold < best.threshold)));
            if (!best.found || better) {
                best.found = true;
                best.feature = f;
                best.threshold = threshold;
                best.gain = gain;
            }
        }
    }
    return best;
}

int build_node(RegressionTree& tree, const Eigen::MatrixXd& features,
               const Eigen::VectorXd& residual, std::vector<int>& samples, std::size_t depth,
               const GbdtConfig& config) {
    const int index = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();

    double sum = 0.0;
    for (int i : samples) sum += residual(i);
    tree.nodes[static_cast<std::size_t>(index)].value = sum / static_cast<double>(samples.size());

    if (depth >= config.max_depth) return index;
    const SplitChoice split = best_split(features, residual, samples, config.min_samples_leaf);
    if (!split.found) return index;

    std::vector<int> left, right;
    left.reserve(samples.size());
    right.reserve(samples.size());
    for (int i : samples) {
        if (features(i, split.feature) <= split.threshold)
            left.push_back(i);
        else
            right.push_back(i);
    }

    tree.nodes[static_cast<std::size_t>(index)].feature = split.feature;
    tree.nodes[static_cast<std::size_t>(index)].threshold = split.threshold;
    tree.nodes[static_cast<std::size_t>(index)].gain = split.gain;
    const int left_child = build_node(tree, features, residual, left, depth + 1, config);
    tree.nodes[static_cast<std::size_t>(index)].left = left_child;
    const int right_child = build_node(tree, features, residual, right, depth + 1, config);
    tree.nodes[static_cast<std::size_t>(index)].right = right_child;
    return index;
}

} // namespace

GbdtModel fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& target,
              const GbdtConfig& config, std::uint64_t seed) {
    (void)seed; // tie-breaks are deterministic; nothing to randomize
    config.validate();
    const Eigen::Index n = features.rows();
    if (n < 2) throw ValidationError("gbdt: needs at least 2 samples");
    if (features.cols() < 1) throw ValidationError("gbdt: needs at least 1 feature");
    if (target.size() != n) throw ValidationError("gbdt: target length does not match rows");

    GbdtModel model;
    model.learning_rate = config.learning_rate;
    model.n_features = static_cast<std::size_t>(features.cols());

    // Exactly constant targets get an exact base so residuals are exact zeros.
    const double lo = target.minCoeff();
    const double hi = target.maxCoeff();
    model.base = (lo == hi) ? lo : target.mean();

    Eigen::VectorXd prediction = Eigen::VectorXd::Constant(n, model.base);
    std::vector<int> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);

    for (std::size_t round = 0; round < config.n_trees; ++round) {
        const Eigen::VectorXd residual = target - prediction;
        RegressionTree tree;
        std::vector<int> samples = all;
        build_node(tree, features, residual, samples, 0, config);
        for (Eigen::Index i = 0; i < n; ++i)
            prediction(i) += config.learning_rate * tree.predict(features.row(i));
        model.trees.push_back(std::move(tree));
        model.train_mse.push_back((target - prediction).squaredNorm() / static_cast<double>(n));
    }
    return model;
}

std::vector<double> importance(const GbdtModel& model) {
    std::vector<double> gains(model.n_features, 0.0);
    for (const auto& tree : model.trees)
        for (const auto& node : tree.nodes)
            if (node.feature >= 0) gains[static_cast<std::size_t>(node.feature)] += node.gain;
    const double total = std::accumulate(gains.begin(), gains.end(), 0.0);
    if (total > 0.0)
        for (double& g : gains) g /= total;
    return gains;
}

FeatureImportance importance_table(const std::vector<ImportanceRecord>& records,
                                   const GbdtConfig& config, std::uint64_t seed) {
    if (records.size() < 2) throw ValidationError("importance_table: needs at least 2 records");

    FeatureImportance out;
    for (const auto& [name, value] : records.front().features) {
        (void)value;
        out.names.push_back(name);
    }
    if (out.names.empty()) throw ValidationError("importance_table: records have no features");

    Eigen::MatrixXd features(static_cast<Eigen::Index>(records.size()),
                             static_cast<Eigen::Index>(out.names.size()));
    Eigen::VectorXd target(static_cast<Eigen::Index>(records.size()));
    for (std::size_t r = 0; r < records.size(); ++r) {
        if (records[r].features.size() != out.names.size())
            throw ValidationError("importance_table: record " + std::to_string(r) +
                                  " has a different feature count");
        std::map<std::string, double> lookup;
        for (const auto& [name, value] : records[r].features) lookup[name] = value;
        for (std::size_t c = 0; c < out.names.size(); ++c) {
            const auto it = lookup.find(out.names[c]);
            if (it == lookup.end())
                throw ValidationError("importance_table: record " + std::to_string(r) +
                                      " is missing feature '" + out.names[c] + "'");
            features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = it->second;
        }
        target(static_cast<Eigen::Index>(r)) = records[r].transfer;
    }

    const GbdtModel model = fit(features, target, config, seed);
    out.shares = importance(model);
    return out;
}

} // namespace divscan
