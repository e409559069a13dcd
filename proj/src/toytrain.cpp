#include "divscan/toytrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "divscan/diversity.hpp"
#include "divscan/weight_features.hpp"

namespace divscan {

Eigen::MatrixXd ToyModel::embed(const Eigen::MatrixXd& x_cols) const {
    return ((w1 * x_cols).colwise() + b1).array().tanh().matrix();
}

void ToyModel::validate() const {
    if (w1.rows() < 1 || w1.cols() < 1 || w2.rows() < 1)
        throw ValidationError("toy model: h, p, K must all be >= 1");
    if (b1.size() != w1.rows() || w2.cols() != w1.rows() || b2.size() != w2.rows())
        throw ValidationError("toy model: inconsistent parameter shapes");
    if (!w1.allFinite() || !b1.allFinite() || !w2.allFinite() || !b2.allFinite())
        throw ValidationError("toy model: non-finite parameters");
}

ToyModel init_toy_model(Eigen::Index hidden, Eigen::Index input_dim, Eigen::Index classes,
                        std::uint64_t seed) {
    if (hidden < 1 || input_dim < 1 || classes < 1)
        throw ValidationError("toy model: h, p, K must all be >= 1");
    Rng rng(seed);
    ToyModel model;
    model.w1.resize(hidden, input_dim);
    model.w2.resize(classes, hidden);
    const double scale1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
    const double scale2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (Eigen::Index i = 0; i < hidden; ++i)
        for (Eigen::Index j = 0; j < input_dim; ++j) model.w1(i, j) = scale1 * rng.normal();
    for (Eigen::Index i = 0; i < classes; ++i)
        for (Eigen::Index j = 0; j < hidden; ++j) model.w2(i, j) = scale2 * rng.normal();
    model.b1 = Eigen::VectorXd::Zero(hidden);
    model.b2 = Eigen::VectorXd::Zero(classes);
    return model;
}

namespace {

// Stored in the fc (in, out) convention: the file holds the transpose of the
// math-orientation matrix, so that columns of the feature view are units.
std::vector<float> matrix_to_blob(const Eigen::MatrixXd& m) {
    std::vector<float> data(static_cast<std::size_t>(m.size()));
    std::size_t t = 0;
    for (Eigen::Index in = 0; in < m.cols(); ++in)
        for (Eigen::Index out = 0; out < m.rows(); ++out)
            data[t++] = static_cast<float>(m(out, in));
    return data;
}

Eigen::MatrixXd blob_to_matrix(const LayerTensor& layer) {
    const std::size_t in = layer.shape[0];
    const std::size_t out = layer.shape[1];
    Eigen::MatrixXd m(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    std::size_t t = 0;
    for (std::size_t i = 0; i < in; ++i)
        for (std::size_t o = 0; o < out; ++o)
            m(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i)) =
                static_cast<double>(layer.data[t++]);
    return m;
}

LayerTensor fc_layer(const std::string& name, const Eigen::MatrixXd& m) {
    LayerTensor layer;
    layer.name = name;
    layer.kind = LayerKind::FullyConnected;
    layer.shape = {static_cast<std::size_t>(m.cols()), static_cast<std::size_t>(m.rows())};
    layer.data = matrix_to_blob(m);
    return layer;
}

} // namespace

TensorBundle to_bundle(const ToyModel& model, const std::string& model_id) {
    model.validate();
    TensorBundle bundle;
    bundle.model_id = model_id;
    bundle.layers.push_back(fc_layer("backbone.w1", model.w1));
    bundle.layers.push_back(fc_layer("backbone.b1", model.b1)); // h x 1 -> shape [1, h]
    bundle.layers.push_back(fc_layer("head.w2", model.w2));
    bundle.layers.push_back(fc_layer("head.b2", model.b2));
    return bundle;
}

ToyModel from_bundle(const TensorBundle& bundle) {
    const auto need = [&](const std::string& name) -> const LayerTensor& {
        const LayerTensor* layer = bundle.find_layer(name);
        if (!layer) throw ValidationError("model bundle: missing layer '" + name + "'");
        return *layer;
    };
    ToyModel model;
    model.w1 = blob_to_matrix(need("backbone.w1"));
    model.b1 = blob_to_matrix(need("backbone.b1"));
    model.w2 = blob_to_matrix(need("head.w2"));
    model.b2 = blob_to_matrix(need("head.b2"));
    model.validate();
    return model;
}

void SyntheticTask::validate() const {
    if (means.rows() < 1 || means.cols() < 1) throw ValidationError("task: needs K >= 1 blobs in R^p");
    if (!(sigma > 0.0)) throw ValidationError("task: sigma must be > 0");
    if (samples_per_class < 1) throw ValidationError("task: samples_per_class must be >= 1");
    for (Eigen::Index a = 0; a < means.rows(); ++a)
        for (Eigen::Index b = a + 1; b < means.rows(); ++b)
            if ((means.row(a) - means.row(b)).norm() == 0.0)
                throw ValidationError("task: blob means must be distinct");
}

SyntheticTask make_blobs_task(int classes, int dim, int samples_per_class, double sigma,
                              double separation, std::uint64_t seed) {
    if (classes < 1 || dim < 1) throw ValidationError("task: classes and dim must be >= 1");
    Rng rng(seed ^ 0xB10B5ULL);
    SyntheticTask task;
    task.means.resize(classes, dim);
    for (int c = 0; c < classes; ++c) {
        Eigen::RowVectorXd direction(dim);
        for (int j = 0; j < dim; ++j) direction(j) = rng.normal();
        task.means.row(c) = separation * direction / direction.norm();
    }
    task.sigma = sigma;
    task.samples_per_class = samples_per_class;
    task.seed = seed;
    task.validate();
    return task;
}

Dataset generate_dataset(const SyntheticTask& task) {
    task.validate();
    Rng rng(task.seed);
    const int k = static_cast<int>(task.means.rows());
    const int p = static_cast<int>(task.means.cols());
    const int n = k * task.samples_per_class;

    Dataset data;
    data.xs.resize(p, n);
    data.ys.reserve(static_cast<std::size_t>(n));
    int col = 0;
    for (int c = 0; c < k; ++c) {
        for (int s = 0; s < task.samples_per_class; ++s) {
            for (int j = 0; j < p; ++j)
                data.xs(j, col) = task.means(c, j) + task.sigma * rng.normal();
            data.ys.push_back(c);
            ++col;
        }
    }
    return data;
}

Gradients Gradients::zeros_like(const ToyModel& model) {
    Gradients g;
    g.w1 = Eigen::MatrixXd::Zero(model.w1.rows(), model.w1.cols());
    g.b1 = Eigen::VectorXd::Zero(model.b1.size());
    g.w2 = Eigen::MatrixXd::Zero(model.w2.rows(), model.w2.cols());
    g.b2 = Eigen::VectorXd::Zero(model.b2.size());
    return g;
}

double cross_entropy_loss_grad(const ToyModel& model, const Eigen::MatrixXd& x_cols,
                               const std::vector<int>& labels, Gradients* out,
                               bool with_backbone, double* accuracy_out) {
    const Eigen::Index b = x_cols.cols();
    if (b < 1) throw ValidationError("cross entropy: empty batch");
    if (static_cast<Eigen::Index>(labels.size()) != b)
        throw ValidationError("cross entropy: labels do not match batch");

    const Eigen::MatrixXd a = model.embed(x_cols);                       // h x b
    const Eigen::MatrixXd logits = (model.w2 * a).colwise() + model.b2;  // K x b

    Eigen::MatrixXd probs(logits.rows(), b);
    double loss = 0.0;
    int correct = 0;
    for (Eigen::Index i = 0; i < b; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= logits.rows())
            throw ValidationError("cross entropy: label out of range");
        const double max_logit = logits.col(i).maxCoeff();
        const Eigen::VectorXd shifted = logits.col(i).array() - max_logit;
        const Eigen::VectorXd exps = shifted.array().exp();
        const double denom = exps.sum();
        probs.col(i) = exps / denom;
        loss += -(shifted(y) - std::log(denom));

        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < logits.rows(); ++c)
            if (logits(c, i) > logits(best, i)) best = c; // first max wins
        if (best == y) ++correct;
    }
    loss /= static_cast<double>(b);
    if (accuracy_out) *accuracy_out = static_cast<double>(correct) / static_cast<double>(b);

    if (out) {
        Eigen::MatrixXd dlogits = probs;
        for (Eigen::Index i = 0; i < b; ++i) dlogits(labels[static_cast<std::size_t>(i)], i) -= 1.0;
        dlogits /= static_cast<double>(b);

        out->w2 = dlogits * a.transpose();
        out->b2 = dlogits.rowwise().sum();
        if (with_backbone) {
            const Eigen::MatrixXd da = model.w2.transpose() * dlogits;           // h x b
            const Eigen::MatrixXd dz = da.cwiseProduct((1.0 - a.array().square()).matrix());
            out->w1 = dz * x_cols.transpose();
            out->b1 = dz.rowwise().sum();
        } else {
            out->w1.setZero(model.w1.rows(), model.w1.cols());
            out->b1.setZero(model.b1.size());
        }
    }
    return loss;
}

double contrastive_loss_grad(const ToyModel& model, const Eigen::MatrixXd& clean_cols,
                             const Eigen::MatrixXd& noised_cols, double temperature,
                             Gradients* out) {
    const Eigen::Index b = clean_cols.cols();
    if (b < 2) throw ValidationError("contrastive loss: batch_size < 2 gives no negatives");
    if (noised_cols.cols() != b || noised_cols.rows() != clean_cols.rows())
        throw ValidationError("contrastive loss: view shapes do not match");
    if (!(temperature > 0.0)) throw ValidationError("contrastive loss: temperature must be > 0");

    const Eigen::MatrixXd ua = model.embed(clean_cols);  // h x b (anchors)
    const Eigen::MatrixXd uv = model.embed(noised_cols); // h x b (views)

    Eigen::VectorXd na(b), nv(b);
    Eigen::MatrixXd za(ua.rows(), b), zv(uv.rows(), b);
    for (Eigen::Index i = 0; i < b; ++i) {
        na(i) = ua.col(i).norm();
        nv(i) = uv.col(i).norm();
        if (na(i) == 0.0 || nv(i) == 0.0)
            throw ComputationError("contrastive loss: zero-norm embedding");
        za.col(i) = ua.col(i) / na(i);
        zv.col(i) = uv.col(i) / nv(i);
    }

    const Eigen::MatrixXd sims = (za.transpose() * zv) / temperature; // anchors x views

    Eigen::MatrixXd probs(b, b);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) {
        const double row_max = sims.row(i).maxCoeff();
        const Eigen::RowVectorXd shifted = sims.row(i).array() - row_max;
        const Eigen::RowVectorXd exps = shifted.array().exp();
        const double denom = exps.sum();
        probs.row(i) = exps / denom;
        loss += -(shifted(i) - std::log(denom));
    }
    loss /= static_cast<double>(b);

    if (out) {
        Eigen::MatrixXd dsims = probs;
        dsims.diagonal().array() -= 1.0;
        dsims /= static_cast<double>(b) * temperature;

        const Eigen::MatrixXd dza = zv * dsims.transpose(); // h x b
        const Eigen::MatrixXd dzv = za * dsims;             // h x b

        // Through the normalization z = u/||u||, then tanh.
        Eigen::MatrixXd dua(ua.rows(), b), duv(uv.rows(), b);
        for (Eigen::Index i = 0; i < b; ++i) {
            dua.col(i) = (dza.col(i) - za.col(i) * za.col(i).dot(dza.col(i))) / na(i);
            duv.col(i) = (dzv.col(i) - zv.col(i) * zv.col(i).dot(dzv.col(i))) / nv(i);
        }
        const Eigen::MatrixXd dpa = dua.cwiseProduct((1.0 - ua.array().square()).matrix());
        const Eigen::MatrixXd dpv = duv.cwiseProduct((1.0 - uv.array().square()).matrix());

        out->w1 = dpa * clean_cols.transpose() + dpv * noised_cols.transpose();
        out->b1 = dpa.rowwise().sum() + dpv.rowwise().sum();
        out->w2.setZero(model.w2.rows(), model.w2.cols());
        out->b2.setZero(model.b2.size());
    }
    return loss;
}

BatchIterator::BatchIterator(std::size_t dataset_size, std::size_t batch_size, Rng& rng)
    : order_(dataset_size), batch_size_(batch_size), pos_(0), rng_(rng) {
    if (batch_size == 0 || batch_size > dataset_size)
        throw ValidationError("batch_size must lie in [1, dataset size]");
    std::iota(order_.begin(), order_.end(), 0);
    rng_.shuffle(order_);
}

std::vector<int> BatchIterator::next() {
    if (pos_ + batch_size_ > order_.size()) {
        rng_.shuffle(order_);
        pos_ = 0;
    }
    std::vector<int> batch(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                           order_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_size_));
    pos_ += batch_size_;
    return batch;
}

void PretrainConfig::validate() const {
    if (epochs < 0) throw ValidationError("pretrain: epochs must be >= 0");
    if (!(lr > 0.0)) throw ValidationError("pretrain: lr must be > 0");
    if (!(noise_sigma >= 0.0)) throw ValidationError("pretrain: noise_sigma must be >= 0");
    if (!(temperature > 0.0)) throw ValidationError("pretrain: temperature must be > 0");
    if (batch_size < 2) throw ValidationError("pretrain: batch_size < 2 gives no negatives");
}

ToyModel pretrain_instance_discrimination(ToyModel model, const Dataset& data,
                                          const PretrainConfig& cfg) {
    cfg.validate();
    model.validate();
    if (cfg.epochs == 0) return model;

    const std::size_t n = data.ys.size();
    Rng rng(cfg.seed ^ 0x5E1FULL);
    const std::size_t batches_per_epoch = n / static_cast<std::size_t>(cfg.batch_size);
    if (batches_per_epoch == 0)
        throw ValidationError("pretrain: batch_size larger than dataset");

    BatchIterator batches(n, static_cast<std::size_t>(cfg.batch_size), rng);
    Gradients grads = Gradients::zeros_like(model);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t t = 0; t < batches_per_epoch; ++t) {
            const std::vector<int> batch = batches.next();
            Eigen::MatrixXd clean(data.xs.rows(), static_cast<Eigen::Index>(batch.size()));
            Eigen::MatrixXd noised(data.xs.rows(), static_cast<Eigen::Index>(batch.size()));
            for (std::size_t i = 0; i < batch.size(); ++i) {
                clean.col(static_cast<Eigen::Index>(i)) = data.xs.col(batch[i]);
                for (Eigen::Index j = 0; j < data.xs.rows(); ++j)
                    noised(j, static_cast<Eigen::Index>(i)) =
                        clean(j, static_cast<Eigen::Index>(i)) + cfg.noise_sigma * rng.normal();
            }
            contrastive_loss_grad(model, clean, noised, cfg.temperature, &grads);
            model.w1 -= cfg.lr * grads.w1;
            model.b1 -= cfg.lr * grads.b1;
        }
    }
    return model;
}

ToyModel centroid_init_head(ToyModel model, const Dataset& data) {
    model.validate();
    const int k = static_cast<int>(model.classes());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(model.hidden(), k);

    const Eigen::MatrixXd embeddings = model.embed(data.xs);
    for (std::size_t i = 0; i < data.ys.size(); ++i) {
        const int y = data.ys[i];
        if (y < 0 || y >= k) throw ValidationError("centroid init: label out of range");
        sums.col(y) += embeddings.col(static_cast<Eigen::Index>(i));
        ++counts[static_cast<std::size_t>(y)];
    }
    for (int c = 0; c < k; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0)
            throw ValidationError("centroid init: class " + std::to_string(c) + " has no samples");
        model.w2.row(c) = sums.col(c).transpose() / static_cast<double>(counts[static_cast<std::size_t>(c)]);
    }
    model.b2.setZero();
    return model;
}

void InjectionConfig::validate() const {
    if (control_cycle && *control_cycle == 0)
        throw ValidationError("injection: control cycle must be >= 1");
    if (steps == 0) throw ValidationError("injection: steps must be >= 1");
    if (!(lr > 0.0)) throw ValidationError("injection: lr must be > 0");
    if (batch_size < 1) throw ValidationError("injection: batch_size must be >= 1");
}

InjectionResult controlled_label_injection(ToyModel model, const Dataset& data,
                                           const InjectionConfig& cfg) {
    cfg.validate();
    model.validate();

    Rng rng(cfg.seed ^ 0x1A8E1ULL);
    BatchIterator batches(data.ys.size(), static_cast<std::size_t>(cfg.batch_size), rng);

    InjectionResult result;
    result.log.reserve(cfg.steps);
    Gradients grads = Gradients::zeros_like(model);

    for (std::uint64_t step = 1; step <= cfg.steps; ++step) {
        const std::vector<int> batch = batches.next();
        Eigen::MatrixXd xb(data.xs.rows(), static_cast<Eigen::Index>(batch.size()));
        std::vector<int> yb(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) {
            xb.col(static_cast<Eigen::Index>(i)) = data.xs.col(batch[i]);
            yb[i] = data.ys[static_cast<std::size_t>(batch[i])];
        }

        const bool update_backbone = cfg.control_cycle && step % *cfg.control_cycle == 0;
        double accuracy = 0.0;
        const double loss = cross_entropy_loss_grad(model, xb, yb, &grads, update_backbone, &accuracy);

        // Both parameter groups step from the same evaluation point.
        model.w2 -= cfg.lr * grads.w2;
        model.b2 -= cfg.lr * grads.b2;
        if (update_backbone) {
            model.w1 -= cfg.lr * grads.w1;
            model.b1 -= cfg.lr * grads.b1;
        }

        result.log.push_back({step, loss, accuracy, update_backbone});
        if (cfg.snapshot_every > 0 && step % cfg.snapshot_every == 0)
            result.snapshots.emplace_back(step, model);
    }
    result.model = std::move(model);
    return result;
}

std::vector<double> diversity_trace(const std::vector<ToyModel>& snapshots) {
    if (snapshots.empty()) throw ValidationError("diversity trace: empty snapshot list");
    std::vector<double> trace;
    trace.reserve(snapshots.size());
    for (const auto& model : snapshots) {
        const LayerTensor layer = fc_layer("backbone.w1", model.w1);
        trace.push_back(cluster_diversity(features_of_fc(layer)));
    }
    return trace;
}

} // namespace divscan
