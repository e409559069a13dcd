#include "divscan/weight_features.hpp"

#include <regex>

namespace divscan {

namespace {

// Drops exact-zero columns (cosine is undefined on them) and enforces the
// n >= 2 invariant on what remains.
void finalize(FeatureMatrix& fm) {
    const Eigen::Index n_raw = fm.matrix.cols();
    if (n_raw < 2)
        throw ValidationError("layer '" + fm.layer_name + "': n=" + std::to_string(n_raw) +
                              " < 2 features");
    Eigen::Index kept = 0;
    for (Eigen::Index c = 0; c < n_raw; ++c) {
        bool all_zero = true;
        for (Eigen::Index r = 0; r < fm.matrix.rows(); ++r) {
            if (fm.matrix(r, c) != 0.0) {
                all_zero = false;
                break;
            }
        }
        if (all_zero) {
            ++fm.zero_dropped;
        } else {
            if (kept != c) fm.matrix.col(kept) = fm.matrix.col(c);
            ++kept;
        }
    }
    if (kept < 2)
        throw ValidationError("layer '" + fm.layer_name + "': fewer than 2 nonzero features after dropping " +
                              std::to_string(fm.zero_dropped) + " zero columns");
    fm.matrix.conservativeResize(Eigen::NoChange, kept);
}

} // namespace

FeatureMatrix features_of_conv(const LayerTensor& layer) {
    if (layer.kind != LayerKind::Conv)
        throw ValidationError("layer '" + layer.name + "': expected conv, got " +
                              kind_to_string(layer.kind));
    if (layer.shape.size() != 4)
        throw ValidationError("layer '" + layer.name + "': conv needs 4 shape axes");
    const std::size_t k1 = layer.shape[0];
    const std::size_t k2 = layer.shape[1];
    const std::size_t n_in = layer.shape[2];
    const std::size_t n_out = layer.shape[3];

    FeatureMatrix fm;
    fm.layer_name = layer.name;
    const std::size_t d = k1 * k2 * n_in;
    fm.matrix.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n_out));
    // Row-major data over (k,k,n_in,n_out): element (r, o) sits at r*n_out + o,
    // where r already is the row-major flattening of (k,k,n_in).
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t o = 0; o < n_out; ++o)
            fm.matrix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(o)) =
                static_cast<double>(layer.data[r * n_out + o]);
    finalize(fm);
    return fm;
}

FeatureMatrix features_of_fc(const LayerTensor& layer) {
    if (layer.kind != LayerKind::FullyConnected)
        throw ValidationError("layer '" + layer.name + "': expected fully_connected, got " +
                              kind_to_string(layer.kind));
    if (layer.shape.size() != 2)
        throw ValidationError("layer '" + layer.name + "': fully_connected needs 2 shape axes");
    const std::size_t d = layer.shape[0];
    const std::size_t n = layer.shape[1];

    FeatureMatrix fm;
    fm.layer_name = layer.name;
    fm.matrix.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < n; ++c)
            fm.matrix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                static_cast<double>(layer.data[r * n + c]);
    finalize(fm);
    return fm;
}

std::vector<FeatureMatrix> features_of_msa(const LayerTensor& layer) {
    if (layer.kind != LayerKind::MsaQ && layer.kind != LayerKind::MsaK &&
        layer.kind != LayerKind::MsaV)
        throw ValidationError("layer '" + layer.name + "': expected msa kind, got " +
                              kind_to_string(layer.kind));
    if (layer.shape.size() != 2)
        throw ValidationError("layer '" + layer.name + "': msa needs 2 shape axes");
    const std::size_t in = layer.shape[0];
    const std::size_t out = layer.shape[1];
    const std::size_t heads = layer.heads;
    if (in % heads != 0)
        throw ValidationError("layer '" + layer.name + "': input size " + std::to_string(in) +
                              " not divisible by heads " + std::to_string(heads));
    const std::size_t block = in / heads;

    std::vector<FeatureMatrix> result;
    result.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        FeatureMatrix fm;
        fm.layer_name = layer.name;
        fm.sub_unit = kind_to_string(layer.kind) + ".h" + std::to_string(h);
        fm.matrix.resize(static_cast<Eigen::Index>(block), static_cast<Eigen::Index>(out));
        for (std::size_t r = 0; r < block; ++r)
            for (std::size_t c = 0; c < out; ++c)
                fm.matrix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                    static_cast<double>(layer.data[(h * block + r) * out + c]);
        finalize(fm);
        result.push_back(std::move(fm));
    }
    return result;
}

std::vector<FeatureMatrix> extract_all(const TensorBundle& bundle,
                                       const std::optional<std::string>& exclude_pattern) {
    std::optional<std::regex> exclude;
    if (exclude_pattern) {
        try {
            exclude.emplace(*exclude_pattern);
        } catch (const std::regex_error& e) {
            throw ValidationError(std::string("bad exclude pattern: ") + e.what());
        }
    }

    std::vector<FeatureMatrix> result;
    for (const auto& layer : bundle.layers) {
        if (exclude && std::regex_search(layer.name, *exclude)) continue;
        switch (layer.kind) {
            case LayerKind::Conv:
                result.push_back(features_of_conv(layer));
                break;
            case LayerKind::FullyConnected:
                result.push_back(features_of_fc(layer));
                break;
            case LayerKind::MsaQ:
            case LayerKind::MsaK:
            case LayerKind::MsaV: {
                auto heads = features_of_msa(layer);
                for (auto& fm : heads) result.push_back(std::move(fm));
                break;
            }
            case LayerKind::Activation:
                break; // stored data, not a weight layer
        }
    }
    return result;
}

} // namespace divscan
