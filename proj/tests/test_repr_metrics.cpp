#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "divscan/repr_metrics.hpp"
#include "divscan/rng.hpp"
#include "oracles.hpp"

using namespace divscan;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
    return m;
}

Eigen::MatrixXd random_orthogonal(Eigen::Index n, Rng& rng) {
    const Eigen::MatrixXd m = random_matrix(n, n, rng);
    return Eigen::HouseholderQR<Eigen::MatrixXd>(m).householderQ();
}

EmbeddingSet make_embeddings(const Eigen::MatrixXd& vectors, std::vector<int> labels, int k) {
    EmbeddingSet set;
    set.vectors = vectors;
    set.labels = std::move(labels);
    set.num_classes = k;
    return set;
}

} // namespace

TEST_CASE("self-CKA is 1") {
    Rng rng(79);
    const auto x = ActivationMatrix::from(random_matrix(30, 6, rng));
    CHECK(cka_linear(x, x) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("CKA is invariant to isotropic scaling") {
    Rng rng(83);
    const auto x = ActivationMatrix::from(random_matrix(25, 5, rng));
    const auto y = ActivationMatrix::from(random_matrix(25, 7, rng));
    const double base = cka_linear(x, y);
    for (double c : {-2.0, 0.5, 10.0}) {
        const auto scaled = ActivationMatrix::from(c * x.values);
        CHECK(cka_linear(scaled, y) == doctest::Approx(base).epsilon(1e-10));
    }
    const auto self_scaled = ActivationMatrix::from(-3.0 * x.values);
    CHECK(cka_linear(x, self_scaled) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("CKA is invariant to orthogonal transforms") {
    Rng rng(89);
    const auto x = ActivationMatrix::from(random_matrix(30, 8, rng));
    const auto y = ActivationMatrix::from(random_matrix(30, 5, rng));
    const double base = cka_linear(x, y);
    const Eigen::MatrixXd q = random_orthogonal(8, rng);
    const auto rotated = ActivationMatrix::from(x.values * q);
    CHECK(cka_linear(rotated, y) == doctest::Approx(base).epsilon(1e-8));
}

TEST_CASE("CKA equals the double-loop oracle on random data") {
    Rng rng(97);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::MatrixXd xm = random_matrix(50, 8, rng);
        const Eigen::MatrixXd ym = random_matrix(50, 8, rng);
        const double got = cka_linear(ActivationMatrix::from(xm), ActivationMatrix::from(ym));
        CHECK(got == doctest::Approx(oracles::cka_linear(xm, ym)).epsilon(1e-10));
    }
}

TEST_CASE("CKA rejects mismatched row counts") {
    Rng rng(101);
    const auto x = ActivationMatrix::from(random_matrix(10, 3, rng));
    const auto y = ActivationMatrix::from(random_matrix(12, 3, rng));
    CHECK_THROWS_AS(cka_linear(x, y), ValidationError);
}

TEST_CASE("single large batch minibatch CKA tracks the full-batch value") {
    Rng rng(103);
    const Eigen::MatrixXd xm = random_matrix(256, 10, rng);
    const Eigen::MatrixXd ym = 0.5 * xm + 0.2 * random_matrix(256, 10, rng);
    const double full = cka_linear(ActivationMatrix::from(xm), ActivationMatrix::from(ym));
    const double mini = cka_minibatch({ActivationMatrix::from(xm)}, {ActivationMatrix::from(ym)});
    CHECK(std::abs(full - mini) < 0.05);
}

TEST_CASE("identical batch lists give minibatch CKA of 1") {
    Rng rng(107);
    std::vector<ActivationMatrix> batches;
    for (int b = 0; b < 3; ++b) batches.push_back(ActivationMatrix::from(random_matrix(16, 4, rng)));
    CHECK(cka_minibatch(batches, batches) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("minibatch CKA validates batch alignment and sizes") {
    Rng rng(109);
    const auto a = ActivationMatrix::from(random_matrix(8, 3, rng));
    const auto tiny = ActivationMatrix::from(random_matrix(3, 3, rng));
    CHECK_THROWS_AS(cka_minibatch({a, a}, {a}), ValidationError);
    CHECK_THROWS_AS(cka_minibatch({tiny}, {tiny}), ValidationError);
}

TEST_CASE("abstraction score averages stage pairs") {
    Rng rng(113);
    const auto a = ActivationMatrix::from(random_matrix(20, 4, rng));
    const auto b = ActivationMatrix::from(random_matrix(20, 6, rng));
    const auto c = ActivationMatrix::from(random_matrix(20, 5, rng));

    CHECK(cka_abstraction_score({a, a, a}) == doctest::Approx(1.0).epsilon(1e-12));
    const double want = (cka_linear(a, b) + cka_linear(a, c) + cka_linear(b, c)) / 3.0;
    CHECK(cka_abstraction_score({a, b, c}) == doctest::Approx(want).epsilon(1e-14));
    CHECK_THROWS_AS(cka_abstraction_score({a}), ValidationError);
}

TEST_CASE("orthogonal two-class fixture separates perfectly") {
    Eigen::MatrixXd vectors(4, 2);
    vectors << 1, 0,
               1, 0,
               0, 1,
               0, 1;
    const ClassMetrics metrics = class_metrics(make_embeddings(vectors, {0, 0, 1, 1}, 2));
    CHECK(metrics.v_intra == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(metrics.msc == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("identical embeddings across classes collapse every metric") {
    Eigen::MatrixXd vectors(4, 3);
    for (int r = 0; r < 4; ++r) vectors.row(r) << 1, 2, 3;
    const ClassMetrics metrics = class_metrics(make_embeddings(vectors, {0, 0, 1, 1}, 2));
    CHECK(metrics.v_intra == 0.0);
    CHECK(metrics.s_inter == 0.0);
    CHECK(metrics.msc == 0.0);
}

TEST_CASE("class metrics match the nested-loop oracle") {
    Rng rng(127);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::MatrixXd vectors = random_matrix(30, 4, rng);
        std::vector<int> labels(30);
        for (auto& l : labels) l = static_cast<int>(rng.uniform_below(3));
        labels[0] = 0; labels[1] = 1; labels[2] = 2; // keep all classes inhabited
        const ClassMetrics got = class_metrics(make_embeddings(vectors, labels, 3));
        const oracles::ClassMetrics want = oracles::class_metrics(vectors, labels, 3);
        CHECK(got.v_intra == doctest::Approx(want.v_intra).epsilon(1e-10));
        CHECK(got.s_inter == doctest::Approx(want.s_inter).epsilon(1e-10));
        CHECK(got.msc == doctest::Approx(want.msc).epsilon(1e-10));
    }
}

TEST_CASE("class metrics are invariant to per-vector positive rescaling") {
    Rng rng(131);
    const Eigen::MatrixXd vectors = random_matrix(20, 5, rng);
    std::vector<int> labels(20);
    for (auto& l : labels) l = static_cast<int>(rng.uniform_below(2));
    labels[0] = 0; labels[1] = 1;

    Eigen::MatrixXd rescaled = vectors;
    for (int r = 0; r < 20; ++r) rescaled.row(r) *= rng.uniform(0.05, 20.0);

    const ClassMetrics a = class_metrics(make_embeddings(vectors, labels, 2));
    const ClassMetrics b = class_metrics(make_embeddings(rescaled, labels, 2));
    CHECK(a.v_intra == doctest::Approx(b.v_intra).epsilon(1e-10));
    CHECK(a.s_inter == doctest::Approx(b.s_inter).epsilon(1e-10));
    CHECK(a.msc == doctest::Approx(b.msc).epsilon(1e-10));
}

TEST_CASE("MSC stays within [-1,1] on random data") {
    Rng rng(137);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 6 + static_cast<int>(rng.uniform_below(20));
        const int k = 2 + static_cast<int>(rng.uniform_below(4));
        const Eigen::MatrixXd vectors = random_matrix(n, 3, rng);
        std::vector<int> labels(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i % k;
        const ClassMetrics metrics = class_metrics(make_embeddings(vectors, labels, k));
        CHECK(metrics.msc >= -1.0);
        CHECK(metrics.msc <= 1.0);
        CHECK(metrics.v_intra >= 0.0);
        CHECK(metrics.s_inter >= 0.0);
    }
}

TEST_CASE("zero embedding vectors are rejected") {
    Eigen::MatrixXd vectors = Eigen::MatrixXd::Zero(3, 2);
    vectors(0, 0) = 1.0;
    vectors(1, 1) = 1.0;
    CHECK_THROWS_AS(class_metrics(make_embeddings(vectors, {0, 1, 1}, 2)), ValidationError);
}

TEST_CASE("singleton classes contribute a silhouette of zero") {
    Eigen::MatrixXd vectors(3, 2);
    vectors << 1, 0,
               0.9, 0.1,
               0, 1;
    const ClassMetrics metrics = class_metrics(make_embeddings(vectors, {0, 0, 1}, 2));
    // The singleton's SC is 0; the other two get positive scores on this data.
    CHECK(metrics.msc > 0.0);
    CHECK(metrics.msc < 1.0);
}
