#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "divscan/errors.hpp"
#include "divscan/rng.hpp"
#include "divscan/tensor_io.hpp"

namespace divscan {

/// Two-layer model: tanh backbone h = tanh(W1 x + b1) and linear head
/// logits = W2 h + b2. Small enough that backprop is written out by hand
/// and checkable against finite differences.
struct ToyModel {
    Eigen::MatrixXd w1; // h x p
    Eigen::VectorXd b1; // h
    Eigen::MatrixXd w2; // K x h
    Eigen::VectorXd b2; // K

    Eigen::Index hidden() const { return w1.rows(); }
    Eigen::Index input_dim() const { return w1.cols(); }
    Eigen::Index classes() const { return w2.rows(); }

    /// Backbone embeddings, one column per sample.
    Eigen::MatrixXd embed(const Eigen::MatrixXd& x_cols) const;

    void validate() const;
};

ToyModel init_toy_model(Eigen::Index hidden, Eigen::Index input_dim, Eigen::Index classes,
                        std::uint64_t seed);

/// Serializes the model as a weight bundle: each tensor becomes a
/// fully-connected layer in the (in, out) storage convention, biases as
/// [1, n] rows.
TensorBundle to_bundle(const ToyModel& model, const std::string& model_id);
ToyModel from_bundle(const TensorBundle& bundle);

/// K Gaussian blobs in R^p with distinct means and shared isotropic sigma.
struct SyntheticTask {
    Eigen::MatrixXd means; // K x p
    double sigma = 0.1;
    int samples_per_class = 50;
    std::uint64_t seed = 0;

    void validate() const;
};

SyntheticTask make_blobs_task(int classes, int dim, int samples_per_class, double sigma,
                              double separation, std::uint64_t seed);

struct Dataset {
    Eigen::MatrixXd xs; // p x N, one column per sample
    std::vector<int> ys;
};

Dataset generate_dataset(const SyntheticTask& task);

struct Gradients {
    Eigen::MatrixXd w1;
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2;
    Eigen::VectorXd b2;

    static Gradients zeros_like(const ToyModel& model);
};

/// Mean softmax cross-entropy over the batch; fills gradients when out is
/// non-null. Backbone gradients are only computed when with_backbone is set
/// (the head part is identical either way). Returns the loss; accuracy_out,
/// when given, receives the batch top-1 accuracy (ties to the lowest index).
double cross_entropy_loss_grad(const ToyModel& model, const Eigen::MatrixXd& x_cols,
                               const std::vector<int>& labels, Gradients* out = nullptr,
                               bool with_backbone = true, double* accuracy_out = nullptr);

/// InfoNCE-style loss over (sample, noised view) pairs: embeddings are
/// L2-normalized backbone outputs, each sample's positive is its own noised
/// view and the negatives are all other noised views in the batch.
double contrastive_loss_grad(const ToyModel& model, const Eigen::MatrixXd& clean_cols,
                             const Eigen::MatrixXd& noised_cols, double temperature,
                             Gradients* out = nullptr);

struct PretrainConfig {
    int epochs = 5;
    double lr = 0.05;
    double noise_sigma = 0.05;
    double temperature = 0.2;
    int batch_size = 32;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Instance-discrimination pretraining of the backbone; the head is never
/// touched. epochs == 0 returns the model unchanged.
ToyModel pretrain_instance_discrimination(ToyModel model, const Dataset& data,
                                          const PretrainConfig& cfg);

/// Head row i becomes the mean backbone embedding of class-i samples; the
/// head bias is zeroed.
ToyModel centroid_init_head(ToyModel model, const Dataset& data);

struct InjectionConfig {
    std::optional<std::uint64_t> control_cycle; // nullopt = infinity (linear probing)
    std::uint64_t steps = 100;
    double lr = 0.1;
    int batch_size = 16;
    std::uint64_t seed = 0;
    std::uint64_t snapshot_every = 0; // 0 disables model snapshots

    void validate() const;
};

struct StepLog {
    std::uint64_t step = 0; // 1-based
    double loss = 0.0;
    double accuracy = 0.0;
    bool backbone_updated = false;
};

struct InjectionResult {
    ToyModel model;
    std::vector<StepLog> log;
    std::vector<std::pair<std::uint64_t, ToyModel>> snapshots; // post-update copies
};

/// Controlled label injection: the head is updated every step; the backbone
/// only on steps whose 1-based index is a multiple of the control cycle,
/// using gradients of the same minibatch loss at the same parameter point.
/// An infinite cycle never touches the backbone (linear probing).
InjectionResult controlled_label_injection(ToyModel model, const Dataset& data,
                                           const InjectionConfig& cfg);

/// Model-average cluster diversity of each snapshot's backbone weight
/// matrix, treated as a fully-connected layer.
std::vector<double> diversity_trace(const std::vector<ToyModel>& snapshots);

/// Deterministic minibatch iterator: shuffles indices with the given rng and
/// reshuffles whenever fewer than batch_size remain.
class BatchIterator {
public:
    BatchIterator(std::size_t dataset_size, std::size_t batch_size, Rng& rng);
    std::vector<int> next();

private:
    std::vector<int> order_;
    std::size_t batch_size_;
    std::size_t pos_;
    Rng& rng_;
};

} // namespace divscan
