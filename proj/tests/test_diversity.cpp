#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "divscan/diversity.hpp"
#include "divscan/rng.hpp"
#include "oracles.hpp"

using namespace divscan;

namespace {

FeatureMatrix from_matrix(Eigen::MatrixXd m, const std::string& name = "unit") {
    FeatureMatrix fm;
    fm.layer_name = name;
    fm.matrix = std::move(m);
    return fm;
}

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
    return m;
}

LayerTensor fc_from_matrix(const std::string& name, const Eigen::MatrixXd& m) {
    LayerTensor layer;
    layer.name = name;
    layer.kind = LayerKind::FullyConnected;
    layer.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            layer.data.push_back(static_cast<float>(m(r, c)));
    return layer;
}

} // namespace

TEST_CASE("identical columns merge at any threshold below 1") {
    Eigen::MatrixXd m(2, 2);
    m << 3, 3, 4, 4;
    const auto clusters = agglomerate(from_matrix(m), 0.5);
    REQUIRE(clusters.size() == 1);
    CHECK(clusters[0] == std::vector<int>{0, 1});
}

TEST_CASE("orthogonal columns never merge") {
    const Eigen::MatrixXd m = Eigen::MatrixXd::Identity(4, 4);
    for (double tau : {0.0, 0.3, 0.9, 1.0}) {
        const auto clusters = agglomerate(from_matrix(m), tau);
        CHECK(clusters.size() == 4);
    }
}

TEST_CASE("near-parallel pair clusters away from the orthogonal column") {
    Eigen::MatrixXd m(2, 3);
    m << 1, 1, 0,
         0, 1e-3, 1;
    const auto got = agglomerate(from_matrix(m), 0.9);
    const auto want = oracles::agglomerate(m, 0.9);
    CHECK(got == want);
    REQUIRE(got.size() == 2);
    CHECK(got[0] == std::vector<int>{0, 1});
    CHECK(got[1] == std::vector<int>{2});
}

TEST_CASE("cluster ratio fixtures") {
    Eigen::MatrixXd same(3, 4);
    for (int c = 0; c < 4; ++c) same.col(c) << 1, 2, 3;
    CHECK(cluster_ratio(from_matrix(same), 0.5) == 0.25);

    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(5, 5);
    CHECK(cluster_ratio(from_matrix(eye), 0.0) == 1.0);
    CHECK(cluster_ratio(from_matrix(eye), 0.99) == 1.0);

    // Two tight pairs: intra-pair cosine 0.99, inter-pair 0.
    Eigen::MatrixXd pairs(4, 4);
    const double rest = std::sqrt(1.0 - 0.99 * 0.99);
    pairs.setZero();
    pairs.col(0) << 1, 0, 0, 0;
    pairs.col(1) << 0.99, rest, 0, 0;
    pairs.col(2) << 0, 0, 1, 0;
    pairs.col(3) << 0, 0, 0.99, rest;
    CHECK(cluster_ratio(from_matrix(pairs), 0.5) == 0.5);
    CHECK(cluster_ratio(from_matrix(pairs), 0.5) == oracles::cluster_ratio(pairs, 0.5));
}

TEST_CASE("cluster diversity of orthogonal features is exactly 1") {
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(6, 6);
    CHECK(cluster_diversity(from_matrix(eye)) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cluster diversity of two identical columns is 0.5025 on the 0.01 grid") {
    Eigen::MatrixXd m(2, 2);
    m << 3, 3, 4, 4;
    CHECK(cluster_diversity(from_matrix(m)) == doctest::Approx(0.5025).epsilon(1e-12));
}

TEST_CASE("default grid tracks a 0.001-grid oracle within 0.01") {
    Rng rng(41);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::MatrixXd m = random_matrix(6, 6, rng);
        const double coarse = cluster_diversity(from_matrix(m));
        const double fine = oracles::cluster_auc(m, 0.001);
        CHECK(std::abs(coarse - fine) < 0.01);
    }
}

TEST_CASE("agglomerate matches the brute-force oracle on random matrices") {
    Rng rng(43);
    for (int trial = 0; trial < 50; ++trial) {
        const Eigen::MatrixXd m = random_matrix(2 + rng.uniform_below(4), 2 + rng.uniform_below(6), rng);
        const double tau = rng.uniform01();
        CHECK(agglomerate(from_matrix(m), tau) == oracles::agglomerate(m, tau));
    }
}

TEST_CASE("agglomerate at tau=1 returns singletons when cosines stay below 1") {
    Rng rng(47);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::MatrixXd m = random_matrix(5, 6, rng);
        // random Gaussian columns are pairwise non-parallel with probability 1
        CHECK(agglomerate(from_matrix(m), 1.0).size() == 6);
    }
}

TEST_CASE("cluster diversity is invariant to column permutation and positive rescaling") {
    Rng rng(53);
    const Eigen::MatrixXd m = random_matrix(5, 7, rng);
    const double base = cluster_diversity(from_matrix(m));

    Eigen::MatrixXd permuted(5, 7);
    const int perm[7] = {3, 0, 6, 1, 5, 2, 4};
    for (int c = 0; c < 7; ++c) permuted.col(c) = m.col(perm[c]);
    CHECK(cluster_diversity(from_matrix(permuted)) == doctest::Approx(base).epsilon(1e-12));

    Eigen::MatrixXd rescaled = m;
    for (int c = 0; c < 7; ++c) rescaled.col(c) *= rng.uniform(0.1, 10.0);
    CHECK(cluster_diversity(from_matrix(rescaled)) == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("spectral diversity closed forms") {
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(2, 2);
    CHECK(spectral_diversity(from_matrix(eye)) == doctest::Approx(0.25).epsilon(1e-12));

    Eigen::MatrixXd rank1(2, 2);
    rank1 << 1, 2, 2, 4;
    CHECK(spectral_diversity(from_matrix(rank1)) == 0.0);
}

TEST_CASE("spectral diversity matches the Jacobi oracle") {
    Rng rng(59);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::MatrixXd m = random_matrix(10, 20, rng);
        CHECK(spectral_diversity(from_matrix(m)) ==
              doctest::Approx(oracles::spectral_diversity(m)).epsilon(1e-8));
    }
}

TEST_CASE("spectral diversity is invariant to global scaling and bounded") {
    Rng rng(61);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::MatrixXd m = random_matrix(4 + rng.uniform_below(8), 4 + rng.uniform_below(8), rng);
        const double base = spectral_diversity(from_matrix(m));
        CHECK(base >= 0.0);
        CHECK(base <= 1.0);
        CHECK(spectral_diversity(from_matrix(3.7 * m)) == doctest::Approx(base).epsilon(1e-10));
    }
}

TEST_CASE("model diversity averages units and fills CIS") {
    Rng rng(67);
    TensorBundle bundle;
    bundle.model_id = "toy";
    bundle.upstream_accuracy = 0.75;
    bundle.layers.push_back(fc_from_matrix("a", random_matrix(6, 5, rng)));
    bundle.layers.push_back(fc_from_matrix("b", random_matrix(6, 5, rng)));

    const DiversityReport report = model_diversity(bundle);
    REQUIRE(report.per_unit.size() == 2);
    const double want_cluster = (*report.per_unit[0].cluster_div + *report.per_unit[1].cluster_div) / 2.0;
    CHECK(*report.cluster_avg == doctest::Approx(want_cluster).epsilon(1e-15));
    CHECK(*report.cis_cluster == doctest::Approx(0.75 * *report.cluster_avg).epsilon(1e-15));
    CHECK(*report.cis_spectral == doctest::Approx(0.75 * *report.spectral_avg).epsilon(1e-15));
}

TEST_CASE("model diversity composes the fixture layers per the unit oracles") {
    // Layer A: orthogonal 2x2 identity (cluster 1.0, spectral 0.25).
    // Layer B: two identical columns, rank 1 (cluster 0.5025, spectral 0).
    TensorBundle bundle;
    bundle.model_id = "fixture";
    bundle.layers.push_back(fc_from_matrix("ortho", Eigen::MatrixXd::Identity(2, 2)));
    Eigen::MatrixXd same(2, 2);
    same << 3, 3, 4, 4;
    bundle.layers.push_back(fc_from_matrix("dup", same));

    const DiversityReport report = model_diversity(bundle);
    CHECK(*report.cluster_avg == doctest::Approx((1.0 + 0.5025) / 2.0).epsilon(1e-12));
    CHECK(*report.spectral_avg == doctest::Approx((0.25 + 0.0) / 2.0).epsilon(1e-12));
}

TEST_CASE("model diversity rejects empty extraction") {
    Rng rng(71);
    TensorBundle bundle;
    bundle.model_id = "m";
    bundle.layers.push_back(fc_from_matrix("only", random_matrix(3, 3, rng)));
    CHECK_THROWS_AS(model_diversity(bundle, {}, std::optional<std::string>("only")),
                    ValidationError);
}

TEST_CASE("spectral diversity is invariant to column permutation") {
    Rng rng(301);
    const Eigen::MatrixXd m = random_matrix(6, 8, rng);
    Eigen::MatrixXd permuted(6, 8);
    const int perm[8] = {5, 2, 7, 0, 3, 6, 1, 4};
    for (int c = 0; c < 8; ++c) permuted.col(c) = m.col(perm[c]);
    CHECK(spectral_diversity(from_matrix(permuted)) ==
          doctest::Approx(spectral_diversity(from_matrix(m))).epsilon(1e-12));
}

TEST_CASE("identical-column matrices sit at the cluster-diversity floor") {
    Rng rng(307);
    Eigen::MatrixXd collapsed(4, 6);
    const Eigen::VectorXd column = random_matrix(4, 1, rng);
    for (int c = 0; c < 6; ++c) collapsed.col(c) = column;
    const double floor_value = cluster_diversity(from_matrix(collapsed));
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::MatrixXd m = random_matrix(4, 6, rng);
        CHECK(cluster_diversity(from_matrix(m)) >= floor_value);
    }
}

TEST_CASE("reports are identical across worker counts") {
    Rng rng(311);
    TensorBundle bundle;
    bundle.model_id = "threads";
    for (int l = 0; l < 5; ++l)
        bundle.layers.push_back(fc_from_matrix("fc" + std::to_string(l), random_matrix(8, 10, rng)));

    setenv("DIVSCAN_THREADS", "1", 1);
    const DiversityReport serial = model_diversity(bundle);
    setenv("DIVSCAN_THREADS", "4", 1);
    const DiversityReport parallel = model_diversity(bundle);
    unsetenv("DIVSCAN_THREADS");

    CHECK(*serial.cluster_avg == *parallel.cluster_avg);
    CHECK(*serial.spectral_avg == *parallel.spectral_avg);
    for (std::size_t i = 0; i < serial.per_unit.size(); ++i) {
        CHECK(*serial.per_unit[i].cluster_div == *parallel.per_unit[i].cluster_div);
        CHECK(*serial.per_unit[i].spectral_div == *parallel.per_unit[i].spectral_div);
    }
}

TEST_CASE("grid step must divide the unit interval") {
    ClusterParams params;
    params.grid_step = 0.03;
    Rng rng(73);
    CHECK_THROWS_AS(cluster_diversity(from_matrix(random_matrix(3, 3, rng)), params),
                    ValidationError);
}
