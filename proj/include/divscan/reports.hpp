#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace divscan {

/// Per-model diversity summary. cluster/spectral fields are optional so a
/// run may compute only one measure; CIS fields mirror upstream_accuracy.
struct DiversityReport {
    struct Unit {
        std::string layer_name;
        std::string sub_unit;
        std::optional<double> cluster_div;
        std::optional<double> spectral_div;
        std::size_t zero_dropped = 0;
    };

    std::string model_id;
    std::vector<Unit> per_unit;
    std::optional<double> upstream_accuracy;
    std::optional<double> cluster_avg;
    std::optional<double> spectral_avg;
    std::optional<double> cis_cluster;
    std::optional<double> cis_spectral;

    /// Checks internal consistency: nonempty units, averages equal to unit
    /// means within 1e-12, CIS fields present iff accuracy is.
    void validate() const;
};

struct TransferScores {
    struct ModelScore {
        std::string model_id;
        double mean_adjusted = 0.0;
        double stderr_adjusted = 0.0;
    };
    std::vector<ModelScore> per_model;

    void validate() const;
};

struct CorrelationReport {
    double pearson_r = 0.0;
    double spearman_rho = 0.0;
    double kendall_tau = 0.0;
    double r_squared = 0.0;

    void validate() const;
};

/// Writers emit UTF-8 JSON with a fixed key order and doubles rendered with
/// 17 significant digits, so output is byte-stable and round-trips at full
/// 64-bit precision.
void write_report(const DiversityReport& report, const std::filesystem::path& path);
void write_report(const TransferScores& report, const std::filesystem::path& path);
void write_report(const CorrelationReport& report, const std::filesystem::path& path);

DiversityReport read_diversity_report(const std::filesystem::path& path);
TransferScores read_transfer_scores(const std::filesystem::path& path);
CorrelationReport read_correlation_report(const std::filesystem::path& path);

namespace json_detail {
/// Shortest-of-17-significant-digits decimal rendering; round-trips binary64.
std::string format_double(double v);
std::string escape_string(const std::string& s);
} // namespace json_detail

} // namespace divscan
