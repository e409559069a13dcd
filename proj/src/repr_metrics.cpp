#include "divscan/repr_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace divscan {

ActivationMatrix ActivationMatrix::from(Eigen::MatrixXd values, bool centered) {
    if (values.rows() < 2) throw ValidationError("activation matrix needs at least 2 rows");
    if (values.cols() < 1) throw ValidationError("activation matrix needs at least 1 column");
    if (!values.allFinite()) throw ValidationError("activation matrix has non-finite entries");
    return ActivationMatrix{std::move(values), centered};
}

ActivationMatrix load_activation(const std::filesystem::path& bundle_dir,
                                 const std::string& layer_name) {
    const TensorBundle bundle = load_bundle(bundle_dir);
    const LayerTensor* layer = nullptr;
    if (!layer_name.empty()) {
        layer = bundle.find_layer(layer_name);
        if (!layer) throw ValidationError("no layer named '" + layer_name + "' in bundle");
        if (layer->kind != LayerKind::Activation)
            throw ValidationError("layer '" + layer_name + "' is not an activation tensor");
    } else {
        for (const auto& candidate : bundle.layers) {
            if (candidate.kind != LayerKind::Activation) continue;
            if (layer) throw ValidationError("bundle has multiple activation layers; name one");
            layer = &candidate;
        }
        if (!layer) throw ValidationError("bundle has no activation layer");
    }
    const std::size_t n = layer->shape[0];
    const std::size_t p = layer->shape[1];
    Eigen::MatrixXd values(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < p; ++c)
            values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                static_cast<double>(layer->data[r * p + c]);
    return ActivationMatrix::from(std::move(values));
}

namespace {

Eigen::MatrixXd centered(const ActivationMatrix& a) {
    if (a.centered) return a.values;
    return a.values.rowwise() - a.values.colwise().mean();
}

// Unbiased HSIC estimator (Song et al.) on kernel matrices with zeroed
// diagonals; requires n >= 4.
double hsic_unbiased(const Eigen::MatrixXd& k, const Eigen::MatrixXd& l) {
    const Eigen::Index n = k.rows();
    Eigen::MatrixXd kt = k;
    Eigen::MatrixXd lt = l;
    kt.diagonal().setZero();
    lt.diagonal().setZero();

    const double trace_kl = kt.cwiseProduct(lt).sum();
    const double sum_k = kt.sum();
    const double sum_l = lt.sum();
    const double cross = kt.rowwise().sum().dot(lt.rowwise().sum());

    const double nn = static_cast<double>(n);
    return (trace_kl + sum_k * sum_l / ((nn - 1.0) * (nn - 2.0)) - 2.0 * cross / (nn - 2.0)) /
           (nn * (nn - 3.0));
}

} // namespace

double cka_linear(const ActivationMatrix& x, const ActivationMatrix& y) {
    if (x.values.rows() != y.values.rows())
        throw ValidationError("cka: row counts differ (" + std::to_string(x.values.rows()) +
                              " vs " + std::to_string(y.values.rows()) + ")");
    const Eigen::MatrixXd xc = centered(x);
    const Eigen::MatrixXd yc = centered(y);

    // <Gx, Gy>_F over the n x n example Grams equals ||Yc^T Xc||_F^2, which
    // avoids materializing n x n matrices.
    const double numerator = (yc.transpose() * xc).squaredNorm();
    const double nx = (xc.transpose() * xc).norm();
    const double ny = (yc.transpose() * yc).norm();
    if (nx == 0.0 || ny == 0.0) return 0.0;
    return numerator / (nx * ny);
}

double cka_minibatch(const std::vector<ActivationMatrix>& x_batches,
                     const std::vector<ActivationMatrix>& y_batches) {
    if (x_batches.size() != y_batches.size())
        throw ValidationError("cka_minibatch: batch lists have different lengths");
    if (x_batches.empty()) throw ValidationError("cka_minibatch: no batches");

    double xy = 0.0, xx = 0.0, yy = 0.0;
    for (std::size_t i = 0; i < x_batches.size(); ++i) {
        const Eigen::MatrixXd& xb = x_batches[i].values;
        const Eigen::MatrixXd& yb = y_batches[i].values;
        if (xb.rows() != yb.rows())
            throw ValidationError("cka_minibatch: batch " + std::to_string(i) +
                                  " row counts differ");
        if (xb.rows() < 4)
            throw ValidationError("cka_minibatch: batch " + std::to_string(i) +
                                  " has fewer than 4 rows (unbiased HSIC undefined)");
        const Eigen::MatrixXd kx = xb * xb.transpose();
        const Eigen::MatrixXd ky = yb * yb.transpose();
        xy += hsic_unbiased(kx, ky);
        xx += hsic_unbiased(kx, kx);
        yy += hsic_unbiased(ky, ky);
    }
    const double batches = static_cast<double>(x_batches.size());
    xy /= batches;
    xx /= batches;
    yy /= batches;
    const double denom = std::sqrt(xx) * std::sqrt(yy);
    if (!(denom > 0.0)) throw ComputationError("cka_minibatch: degenerate self-HSIC");
    return xy / denom;
}

double cka_abstraction_score(const std::vector<ActivationMatrix>& stage_activations) {
    if (stage_activations.size() < 2)
        throw ValidationError("abstraction score needs at least 2 stages");
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < stage_activations.size(); ++i) {
        for (std::size_t j = i + 1; j < stage_activations.size(); ++j) {
            sum += cka_linear(stage_activations[i], stage_activations[j]);
            ++pairs;
        }
    }
    return sum / static_cast<double>(pairs);
}

ClassMetrics class_metrics(const EmbeddingSet& emb) {
    const Eigen::Index n = emb.vectors.rows();
    const int k = emb.num_classes;
    if (static_cast<Eigen::Index>(emb.labels.size()) != n)
        throw ValidationError("class_metrics: label count does not match vectors");
    if (k < 1) throw ValidationError("class_metrics: no classes");

    Eigen::MatrixXd unit = emb.vectors;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double norm = unit.row(i).norm();
        if (norm == 0.0)
            throw ValidationError("class_metrics: zero embedding vector at row " +
                                  std::to_string(i) + " (cosine undefined)");
        unit.row(i) /= norm;
    }

    // dist(i,j) = 1 - cos, with the cosine clamped into [-1,1].
    Eigen::MatrixXd dist(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        dist(i, i) = 0.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double c = std::clamp(unit.row(i).dot(unit.row(j)), -1.0, 1.0);
            dist(i, j) = 1.0 - c;
            dist(j, i) = dist(i, j);
        }
    }

    std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(k));
    for (Eigen::Index i = 0; i < n; ++i) members[static_cast<std::size_t>(emb.labels[i])].push_back(i);
    for (int c = 0; c < k; ++c)
        if (members[static_cast<std::size_t>(c)].empty())
            throw ValidationError("class_metrics: class " + std::to_string(c) + " is empty");

    ClassMetrics out;

    // V_intra: all N_k^2 ordered within-class pairs, self-pairs included.
    for (int c = 0; c < k; ++c) {
        const auto& idx = members[static_cast<std::size_t>(c)];
        double sum = 0.0;
        for (Eigen::Index a : idx)
            for (Eigen::Index b : idx) sum += dist(a, b);
        out.v_intra += sum / (static_cast<double>(k) * idx.size() * idx.size());
    }

    // S_inter: all ordered class pairs, each normalized by K^2 N_j N_k.
    for (int cj = 0; cj < k; ++cj) {
        for (int ck = 0; ck < k; ++ck) {
            const auto& ja = members[static_cast<std::size_t>(cj)];
            const auto& ka = members[static_cast<std::size_t>(ck)];
            double sum = 0.0;
            for (Eigen::Index a : ja)
                for (Eigen::Index b : ka) sum += dist(a, b);
            out.s_inter += sum / (static_cast<double>(k) * k * ja.size() * ka.size());
        }
    }

    // Mean silhouette coefficient.
    double sc_sum = 0.0;
    for (Eigen::Index m = 0; m < n; ++m) {
        const int own = emb.labels[m];
        const auto& own_members = members[static_cast<std::size_t>(own)];
        if (own_members.size() < 2 || k < 2) continue; // SC = 0 by convention

        double v = 0.0;
        for (Eigen::Index b : own_members)
            if (b != m) v += dist(m, b);
        v /= static_cast<double>(own_members.size() - 1);

        double s = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            if (c == own) continue;
            const auto& other = members[static_cast<std::size_t>(c)];
            double mean = 0.0;
            for (Eigen::Index b : other) mean += dist(m, b);
            mean /= static_cast<double>(other.size());
            s = std::min(s, mean);
        }

        const double denom = std::max(s, v);
        if (denom > 0.0) sc_sum += (s - v) / denom;
    }
    out.msc = sc_sum / static_cast<double>(n);
    return out;
}

} // namespace divscan
