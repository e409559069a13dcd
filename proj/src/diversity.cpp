#include "divscan/diversity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "divscan/parallel.hpp"

namespace divscan {

void ClusterParams::validate() const {
    if (!(grid_step > 0.0 && grid_step <= 1.0))
        throw ValidationError("grid_step must lie in (0, 1]");
    const double inv = 1.0 / grid_step;
    if (std::abs(inv - std::round(inv)) > 1e-9)
        throw ValidationError("1/grid_step must be an integer");
}

namespace {

// Pairwise cosine similarities of the (nonzero) feature columns, clamped
// into [-1,1] so that identical columns never compare strictly above 1.
Eigen::MatrixXd cosine_matrix(const Eigen::MatrixXd& features) {
    Eigen::MatrixXd unit = features;
    for (Eigen::Index c = 0; c < unit.cols(); ++c) unit.col(c) /= unit.col(c).norm();
    Eigen::MatrixXd cos = unit.transpose() * unit;
    for (Eigen::Index i = 0; i < cos.rows(); ++i)
        for (Eigen::Index j = 0; j < cos.cols(); ++j)
            cos(i, j) = std::clamp(cos(i, j), -1.0, 1.0);
    return cos;
}

// The greedy merge order does not depend on the threshold; tau only decides
// where the chain stops. Building the full chain once therefore gives the
// partition at every threshold: stop before the first merge whose similarity
// fails the strictly-greater test.
struct MergeChain {
    int n = 0;
    std::vector<double> sims;                 // similarity of merge t
    std::vector<std::pair<int, int>> merges;  // representatives merged at step t
};

MergeChain build_merge_chain(const Eigen::MatrixXd& cos) {
    const int n = static_cast<int>(cos.rows());
    MergeChain chain;
    chain.n = n;

    // Cluster state: rep = smallest original column index, used for the
    // deterministic tie-break; sum[a][b] accumulates cross-pair cosines.
    std::vector<int> rep(n), size(n, 1);
    std::vector<bool> active(n, true);
    std::iota(rep.begin(), rep.end(), 0);
    Eigen::MatrixXd sum = cos;

    for (int step = 0; step + 1 < n; ++step) {
        double best = -std::numeric_limits<double>::infinity();
        int best_a = -1, best_b = -1;
        for (int a = 0; a < n; ++a) {
            if (!active[a]) continue;
            for (int b = a + 1; b < n; ++b) {
                if (!active[b]) continue;
                const double avg = sum(a, b) / (static_cast<double>(size[a]) * size[b]);
                const int lo = std::min(rep[a], rep[b]);
                const int hi = std::max(rep[a], rep[b]);
                bool better = avg > best;
                if (!better && avg == best) {
                    const int cur_lo = std::min(rep[best_a], rep[best_b]);
                    const int cur_hi = std::max(rep[best_a], rep[best_b]);
                    better = std::pair(lo, hi) < std::pair(cur_lo, cur_hi);
                }
                if (better) {
                    best = avg;
                    best_a = a;
                    best_b = b;
                }
            }
        }
        // Merge into the slot holding the smaller representative.
        int keep = best_a, drop = best_b;
        if (rep[drop] < rep[keep]) std::swap(keep, drop);
        chain.sims.push_back(best);
        chain.merges.emplace_back(rep[keep], rep[drop]);
        for (int c = 0; c < n; ++c) {
            if (!active[c] || c == keep || c == drop) continue;
            const double merged = sum(std::min(keep, c), std::max(keep, c)) +
                                  sum(std::min(drop, c), std::max(drop, c));
            sum(std::min(keep, c), std::max(keep, c)) = merged;
        }
        size[keep] += size[drop];
        active[drop] = false;
    }
    return chain;
}

// Number of leading merges allowed at threshold tau (strictly-greater rule).
int prefix_length(const MergeChain& chain, double tau) {
    int len = 0;
    for (double s : chain.sims) {
        if (s > tau)
            ++len;
        else
            break;
    }
    return len;
}

std::vector<std::vector<int>> partition_from_chain(const MergeChain& chain, double tau) {
    const int merges = prefix_length(chain, tau);
    std::vector<int> parent(chain.n);
    std::iota(parent.begin(), parent.end(), 0);
    const auto find = [&](int x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    for (int t = 0; t < merges; ++t) {
        const auto [a, b] = chain.merges[t];
        const int ra = find(a), rb = find(b);
        parent[std::max(ra, rb)] = std::min(ra, rb);
    }
    std::vector<std::vector<int>> clusters(chain.n);
    for (int i = 0; i < chain.n; ++i) clusters[find(i)].push_back(i);
    std::vector<std::vector<int>> out;
    for (auto& c : clusters)
        if (!c.empty()) out.push_back(std::move(c));
    return out; // root of each set is its min index, so order is canonical
}

} // namespace

std::vector<std::vector<int>> agglomerate(const FeatureMatrix& features, double tau) {
    const MergeChain chain = build_merge_chain(cosine_matrix(features.matrix));
    return partition_from_chain(chain, tau);
}

double cluster_ratio(const FeatureMatrix& features, double tau) {
    const MergeChain chain = build_merge_chain(cosine_matrix(features.matrix));
    const int clusters = chain.n - prefix_length(chain, tau);
    return static_cast<double>(clusters) / chain.n;
}

double cluster_diversity(const FeatureMatrix& features, const ClusterParams& params) {
    params.validate();
    const MergeChain chain = build_merge_chain(cosine_matrix(features.matrix));
    const int grid = static_cast<int>(std::round(1.0 / params.grid_step));

    double area = 0.0;
    double prev = 0.0;
    for (int i = 0; i <= grid; ++i) {
        const double tau = static_cast<double>(i) / grid;
        const double ratio = static_cast<double>(chain.n - prefix_length(chain, tau)) / chain.n;
        if (i > 0) area += 0.5 * (prev + ratio) / grid;
        prev = ratio;
    }
    return area;
}

double spectral_diversity(const FeatureMatrix& features) {
    const Eigen::MatrixXd& w = features.matrix;
    // The nonzero spectrum of W^T W equals that of W W^T; solve the smaller.
    Eigen::MatrixXd gram;
    if (w.cols() <= w.rows())
        gram = w.transpose() * w;
    else
        gram = w * w.transpose();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success)
        throw ComputationError("eigen-solver failed to converge on layer '" + features.layer_name + "'");

    std::vector<double> eig(solver.eigenvalues().data(),
                            solver.eigenvalues().data() + solver.eigenvalues().size());
    std::sort(eig.begin(), eig.end(), std::greater<>());
    if (eig.empty() || eig.front() <= 0.0) return 0.0;

    const double tol = 1e-12 * eig.front();
    std::vector<double> kept;
    for (double v : eig)
        if (v >= tol) kept.push_back(v);
    const std::size_t rank = kept.size();
    if (rank <= 1) return 0.0;

    const double total = std::accumulate(kept.begin(), kept.end(), 0.0);
    double running = 0.0;
    double cum_sum = 0.0;
    for (double v : kept) {
        running += v;
        cum_sum += running / total;
    }
    return 1.0 - cum_sum / static_cast<double>(rank);
}

DiversityReport model_diversity(const TensorBundle& bundle,
                                const ClusterParams& params,
                                const std::optional<std::string>& exclude_pattern,
                                DiversityMeasure measure,
                                std::optional<double> accuracy_override) {
    params.validate();
    const std::vector<FeatureMatrix> units = extract_all(bundle, exclude_pattern);
    if (units.empty())
        throw ValidationError("no feature units left after extraction (all layers excluded?)");

    const bool want_cluster = measure != DiversityMeasure::Spectral;
    const bool want_spectral = measure != DiversityMeasure::Cluster;

    DiversityReport report;
    report.model_id = bundle.model_id;
    report.per_unit.resize(units.size());

    parallel_for(units.size(), [&](std::size_t i) {
        DiversityReport::Unit& unit = report.per_unit[i];
        unit.layer_name = units[i].layer_name;
        unit.sub_unit = units[i].sub_unit;
        unit.zero_dropped = units[i].zero_dropped;
        if (want_cluster) unit.cluster_div = cluster_diversity(units[i], params);
        if (want_spectral) unit.spectral_div = spectral_diversity(units[i]);
    });

    // Reduce in manifest order for bit-reproducible averages.
    if (want_cluster) {
        double sum = 0.0;
        for (const auto& unit : report.per_unit) sum += *unit.cluster_div;
        report.cluster_avg = sum / static_cast<double>(units.size());
    }
    if (want_spectral) {
        double sum = 0.0;
        for (const auto& unit : report.per_unit) sum += *unit.spectral_div;
        report.spectral_avg = sum / static_cast<double>(units.size());
    }

    std::optional<double> accuracy = accuracy_override ? accuracy_override : bundle.upstream_accuracy;
    if (accuracy) {
        if (!(*accuracy >= 0.0 && *accuracy <= 1.0))
            throw ValidationError("accuracy outside [0,1]");
        report.upstream_accuracy = accuracy;
        if (report.cluster_avg) report.cis_cluster = *accuracy * *report.cluster_avg;
        if (report.spectral_avg) report.cis_spectral = *accuracy * *report.spectral_avg;
    }
    return report;
}

} // namespace divscan
