#include "divscan/transfer_stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace divscan {

double logit(double p) {
    if (!(p > 0.0 && p < 1.0))
        throw ValidationError("logit requires p strictly inside (0,1), got " + std::to_string(p));
    return std::log(p / (1.0 - p));
}

TransferScores transfer_scores(const AccuracyTable& table) {
    const Eigen::Index m = table.acc.rows();
    const Eigen::Index d = table.acc.cols();
    if (m < 2) throw ValidationError("transfer_scores needs at least 2 models");
    if (d < 1) throw ValidationError("transfer_scores needs at least 1 dataset");

    Eigen::MatrixXd y(m, d);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < d; ++j) y(i, j) = logit(table.acc(i, j));

    Eigen::MatrixXd adjusted = y;
    for (Eigen::Index j = 0; j < d; ++j) {
        const double mean = y.col(j).mean();
        for (Eigen::Index i = 0; i < m; ++i) adjusted(i, j) -= mean;
        double residual = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) residual += adjusted(i, j);
        if (std::abs(residual) > 1e-9)
            throw ComputationError("per-dataset adjusted accuracies failed to center");
    }

    const double correction = static_cast<double>(m) / (static_cast<double>(m) - 1.0);
    TransferScores scores;
    for (Eigen::Index i = 0; i < m; ++i) {
        TransferScores::ModelScore ms;
        ms.model_id = table.models[static_cast<std::size_t>(i)];
        ms.mean_adjusted = adjusted.row(i).mean();
        if (d > 1) {
            double ss = 0.0;
            for (Eigen::Index j = 0; j < d; ++j) {
                const double dev = adjusted(i, j) - ms.mean_adjusted;
                ss += dev * dev;
            }
            const double sample_sd = std::sqrt(ss / (static_cast<double>(d) - 1.0));
            ms.stderr_adjusted = sample_sd / std::sqrt(static_cast<double>(d)) * correction;
        }
        scores.per_model.push_back(std::move(ms));
    }
    return scores;
}

namespace {

/// Average ranks with ties sharing the mean of their positions (1-based).
std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double mean_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw ValidationError("correlate: constant input vector");
    return sxy / (std::sqrt(sxx) * std::sqrt(syy));
}

/// Kendall tau-b via the Knight algorithm: sort by (x, y), count discordant
/// pairs as merge-sort inversions of the y sequence, and correct for ties.
double kendall_tau_b(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (x[a] != x[b]) return x[a] < x[b];
        return y[a] < y[b];
    });

    const auto tie_pairs = [](const std::vector<double>& sorted) {
        long long pairs = 0;
        std::size_t i = 0;
        while (i < sorted.size()) {
            std::size_t j = i;
            while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
            const long long t = static_cast<long long>(j - i + 1);
            pairs += t * (t - 1) / 2;
            i = j + 1;
        }
        return pairs;
    };

    // Ties in x and joint ties, walked in x-sorted order.
    long long n1 = 0, n3 = 0;
    {
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
            const long long t = static_cast<long long>(j - i + 1);
            n1 += t * (t - 1) / 2;
            std::size_t a = i;
            while (a <= j) {
                std::size_t b = a;
                while (b + 1 <= j && y[order[b + 1]] == y[order[a]]) ++b;
                const long long v = static_cast<long long>(b - a + 1);
                n3 += v * (v - 1) / 2;
                a = b + 1;
            }
            i = j + 1;
        }
    }

    std::vector<double> ys_sorted(y);
    std::sort(ys_sorted.begin(), ys_sorted.end());
    const long long n2 = tie_pairs(ys_sorted);

    // Merge-sort inversion count over y in x-order. Within an x-tie group the
    // ys are ascending, so same-x pairs never count as inversions.
    std::vector<double> seq(n), tmp(n);
    for (std::size_t i = 0; i < n; ++i) seq[i] = y[order[i]];
    long long swaps = 0;
    for (std::size_t width = 1; width < n; width *= 2) {
        for (std::size_t lo = 0; lo + width < n; lo += 2 * width) {
            const std::size_t mid = lo + width;
            const std::size_t hi = std::min(lo + 2 * width, n);
            std::size_t a = lo, b = mid, t = lo;
            while (a < mid && b < hi) {
                if (seq[b] < seq[a]) {
                    swaps += static_cast<long long>(mid - a);
                    tmp[t++] = seq[b++];
                } else {
                    tmp[t++] = seq[a++];
                }
            }
            while (a < mid) tmp[t++] = seq[a++];
            while (b < hi) tmp[t++] = seq[b++];
            std::copy(tmp.begin() + static_cast<std::ptrdiff_t>(lo),
                      tmp.begin() + static_cast<std::ptrdiff_t>(hi),
                      seq.begin() + static_cast<std::ptrdiff_t>(lo));
        }
    }

    const long long n0 = static_cast<long long>(n) * (static_cast<long long>(n) - 1) / 2;
    const long long concordant_minus_discordant = n0 - n1 - n2 + n3 - 2 * swaps;
    if (n0 == n1 || n0 == n2) throw ValidationError("correlate: constant input vector");
    return static_cast<double>(concordant_minus_discordant) /
           (std::sqrt(static_cast<double>(n0 - n1)) * std::sqrt(static_cast<double>(n0 - n2)));
}

} // namespace

CorrelationReport correlate(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size())
        throw ValidationError("correlate: length mismatch (" + std::to_string(x.size()) + " vs " +
                              std::to_string(y.size()) + ")");
    if (x.size() < 3) throw ValidationError("correlate: needs at least 3 points");

    CorrelationReport report;
    report.pearson_r = pearson(x, y);
    report.spearman_rho = pearson(average_ranks(x), average_ranks(y));
    report.kendall_tau = kendall_tau_b(x, y);

    // R^2 via the regression route; equals r^2 for a simple linear fit but is
    // computed independently from the fitted line's residuals.
    const std::size_t n = x.size();
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, sst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        sst += (y[i] - my) * (y[i] - my);
    }
    const double slope = sxy / sxx;
    const double intercept = my - slope * mx;
    double ssr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double resid = y[i] - (intercept + slope * x[i]);
        ssr += resid * resid;
    }
    report.r_squared = 1.0 - ssr / sst;
    return report;
}

double cis(double accuracy, double diversity) {
    if (!(accuracy >= 0.0 && accuracy <= 1.0))
        throw ValidationError("cis: accuracy outside [0,1]");
    if (!(diversity >= 0.0 && diversity <= 1.0))
        throw ValidationError("cis: diversity outside [0,1]");
    return accuracy * diversity;
}

} // namespace divscan
