#include "divscan/reports.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "divscan/errors.hpp"

namespace divscan {

namespace json_detail {

std::string format_double(double v) {
    if (!std::isfinite(v)) throw ValidationError("non-finite value in report");
    // Locale-independent %.17g equivalent; 17 significant digits round-trip
    // any binary64 value exactly.
    char buf[40];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    if (ec != std::errc{}) throw ComputationError("double formatting failed");
    return std::string(buf, ptr);
}

std::string escape_string(const std::string& s) {
    std::string out;
    out.reserve(s.size() + 2);
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default:
                if (static_cast<unsigned char>(c) < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof(buf), "\\u%04x", c);
                    out += buf;
                } else {
                    out += c;
                }
        }
    }
    return out;
}

} // namespace json_detail

namespace {

using json_detail::escape_string;
using json_detail::format_double;

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw IoError("short write on '" + path.string() + "'");
}

nlohmann::json parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report '" + path.string() + "'");
    try {
        nlohmann::json doc;
        in >> doc;
        return doc;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("report '" + path.string() + "': " + e.what());
    }
}

} // namespace

void DiversityReport::validate() const {
    if (model_id.empty()) throw ValidationError("diversity report: empty model_id");
    if (per_unit.empty()) throw ValidationError("diversity report: empty per-unit list");

    const auto check_avg = [&](const std::optional<double>& avg, const char* which, auto getter) {
        std::size_t count = 0;
        double sum = 0.0;
        for (const auto& unit : per_unit) {
            const auto& value = getter(unit);
            if (value) {
                ++count;
                sum += *value;
            }
        }
        if (avg.has_value() != (count > 0))
            throw ValidationError(std::string("diversity report: ") + which +
                                  " average inconsistent with per-unit values");
        if (avg && count != per_unit.size())
            throw ValidationError(std::string("diversity report: ") + which +
                                  " missing for some units");
        if (avg && std::abs(*avg - sum / static_cast<double>(count)) > 1e-12)
            throw ValidationError(std::string("diversity report: ") + which +
                                  " average does not match mean of units");
    };
    check_avg(cluster_avg, "cluster", [](const Unit& u) -> const std::optional<double>& { return u.cluster_div; });
    check_avg(spectral_avg, "spectral", [](const Unit& u) -> const std::optional<double>& { return u.spectral_div; });

    const auto check_cis = [&](const std::optional<double>& cis, const std::optional<double>& avg,
                               const char* which) {
        if (cis.has_value() != (upstream_accuracy.has_value() && avg.has_value()))
            throw ValidationError(std::string("diversity report: ") + which +
                                  " CIS presence inconsistent with accuracy");
        if (cis && std::abs(*cis - *upstream_accuracy * *avg) > 1e-12)
            throw ValidationError(std::string("diversity report: ") + which +
                                  " CIS does not equal accuracy x average");
    };
    check_cis(cis_cluster, cluster_avg, "cluster");
    check_cis(cis_spectral, spectral_avg, "spectral");
}

void TransferScores::validate() const {
    if (per_model.empty()) throw ValidationError("transfer scores: empty model list");
    for (const auto& m : per_model) {
        if (m.model_id.empty()) throw ValidationError("transfer scores: empty model_id");
        if (!(m.stderr_adjusted >= 0.0))
            throw ValidationError("transfer scores: negative stderr for '" + m.model_id + "'");
    }
}

void CorrelationReport::validate() const {
    const double tol = 1e-9;
    if (std::abs(pearson_r) > 1.0 + tol || std::abs(spearman_rho) > 1.0 + tol ||
        std::abs(kendall_tau) > 1.0 + tol)
        throw ValidationError("correlation report: coefficient outside [-1,1]");
}

void write_report(const DiversityReport& report, const std::filesystem::path& path) {
    report.validate();
    std::ostringstream out;
    out << "{\n";
    out << "  \"model_id\": \"" << escape_string(report.model_id) << "\",\n";
    out << "  \"per_unit\": [\n";
    for (std::size_t i = 0; i < report.per_unit.size(); ++i) {
        const auto& u = report.per_unit[i];
        out << "    {\"layer_name\": \"" << escape_string(u.layer_name) << "\", \"sub_unit\": \""
            << escape_string(u.sub_unit) << "\"";
        if (u.cluster_div) out << ", \"cluster_div\": " << format_double(*u.cluster_div);
        if (u.spectral_div) out << ", \"spectral_div\": " << format_double(*u.spectral_div);
        out << ", \"zero_dropped\": " << u.zero_dropped << "}";
        out << (i + 1 < report.per_unit.size() ? ",\n" : "\n");
    }
    out << "  ]";
    if (report.upstream_accuracy)
        out << ",\n  \"upstream_accuracy\": " << format_double(*report.upstream_accuracy);
    if (report.cluster_avg) out << ",\n  \"cluster_avg\": " << format_double(*report.cluster_avg);
    if (report.spectral_avg) out << ",\n  \"spectral_avg\": " << format_double(*report.spectral_avg);
    if (report.cis_cluster) out << ",\n  \"cis_cluster\": " << format_double(*report.cis_cluster);
    if (report.cis_spectral) out << ",\n  \"cis_spectral\": " << format_double(*report.cis_spectral);
    out << "\n}\n";
    write_text_file(path, out.str());
}

void write_report(const TransferScores& report, const std::filesystem::path& path) {
    report.validate();
    std::ostringstream out;
    out << "{\n  \"per_model\": [\n";
    for (std::size_t i = 0; i < report.per_model.size(); ++i) {
        const auto& m = report.per_model[i];
        out << "    {\"model_id\": \"" << escape_string(m.model_id)
            << "\", \"mean_adjusted\": " << format_double(m.mean_adjusted)
            << ", \"stderr\": " << format_double(m.stderr_adjusted) << "}"
            << (i + 1 < report.per_model.size() ? ",\n" : "\n");
    }
    out << "  ]\n}\n";
    write_text_file(path, out.str());
}

void write_report(const CorrelationReport& report, const std::filesystem::path& path) {
    report.validate();
    std::ostringstream out;
    out << "{\n";
    out << "  \"pearson_r\": " << format_double(report.pearson_r) << ",\n";
    out << "  \"spearman_rho\": " << format_double(report.spearman_rho) << ",\n";
    out << "  \"kendall_tau\": " << format_double(report.kendall_tau) << ",\n";
    out << "  \"r_squared\": " << format_double(report.r_squared) << "\n";
    out << "}\n";
    write_text_file(path, out.str());
}

DiversityReport read_diversity_report(const std::filesystem::path& path) {
    const nlohmann::json doc = parse_file(path);
    DiversityReport report;
    try {
        report.model_id = doc.at("model_id").get<std::string>();
        for (const auto& entry : doc.at("per_unit")) {
            DiversityReport::Unit unit;
            unit.layer_name = entry.at("layer_name").get<std::string>();
            unit.sub_unit = entry.at("sub_unit").get<std::string>();
            if (entry.contains("cluster_div")) unit.cluster_div = entry["cluster_div"].get<double>();
            if (entry.contains("spectral_div")) unit.spectral_div = entry["spectral_div"].get<double>();
            unit.zero_dropped = entry.at("zero_dropped").get<std::size_t>();
            report.per_unit.push_back(std::move(unit));
        }
        const auto opt = [&](const char* key) -> std::optional<double> {
            if (doc.contains(key)) return doc[key].get<double>();
            return std::nullopt;
        };
        report.upstream_accuracy = opt("upstream_accuracy");
        report.cluster_avg = opt("cluster_avg");
        report.spectral_avg = opt("spectral_avg");
        report.cis_cluster = opt("cis_cluster");
        report.cis_spectral = opt("cis_spectral");
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("report '" + path.string() + "': " + e.what());
    }
    return report;
}

TransferScores read_transfer_scores(const std::filesystem::path& path) {
    const nlohmann::json doc = parse_file(path);
    TransferScores report;
    try {
        for (const auto& entry : doc.at("per_model")) {
            TransferScores::ModelScore m;
            m.model_id = entry.at("model_id").get<std::string>();
            m.mean_adjusted = entry.at("mean_adjusted").get<double>();
            m.stderr_adjusted = entry.at("stderr").get<double>();
            report.per_model.push_back(std::move(m));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("report '" + path.string() + "': " + e.what());
    }
    return report;
}

CorrelationReport read_correlation_report(const std::filesystem::path& path) {
    const nlohmann::json doc = parse_file(path);
    CorrelationReport report;
    try {
        report.pearson_r = doc.at("pearson_r").get<double>();
        report.spearman_rho = doc.at("spearman_rho").get<double>();
        report.kendall_tau = doc.at("kendall_tau").get<double>();
        report.r_squared = doc.at("r_squared").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("report '" + path.string() + "': " + e.what());
    }
    return report;
}

} // namespace divscan
