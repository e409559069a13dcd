// divscan: feature-diversity and transferability analysis of weight bundles.
//
// Subcommands write exactly one report plus one run manifest; reruns with
// identical inputs and seeds are byte-identical. stdout carries only the
// report path, diagnostics go to stderr. Exit codes: 0 ok, 1 I/O error,
// 2 validation error.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "divscan/diversity.hpp"
#include "divscan/gbdt.hpp"
#include "divscan/repr_metrics.hpp"
#include "divscan/reports.hpp"
#include "divscan/tensor_io.hpp"
#include "divscan/toytrain.hpp"
#include "divscan/transfer_stats.hpp"

namespace {

constexpr const char* kToolVersion = "0.1.0";

namespace fs = std::filesystem;
using divscan::json_detail::escape_string;
using divscan::json_detail::format_double;

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t hash = 0xCBF29CE484222325ULL;
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 0x100000001B3ULL;
    }
    return hash;
}

std::string digest_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw divscan::IoError("cannot open input '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    char hex[20];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(buf.str())));
    return std::string("fnv1a64:") + hex;
}

/// Collects (display path, digest) pairs; directories are walked in sorted
/// relative-path order so the manifest is stable.
std::vector<std::pair<std::string, std::string>> digest_inputs(const std::vector<fs::path>& inputs) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& input : inputs) {
        if (fs::is_directory(input)) {
            std::vector<fs::path> files;
            for (const auto& entry : fs::recursive_directory_iterator(input))
                if (entry.is_regular_file()) files.push_back(entry.path());
            std::sort(files.begin(), files.end());
            for (const auto& f : files) out.emplace_back(f.generic_string(), digest_file(f));
        } else {
            out.emplace_back(input.generic_string(), digest_file(input));
        }
    }
    return out;
}

struct ManifestParam {
    std::string key;
    std::string rendered; // already JSON-encoded
};

void add_param(std::vector<ManifestParam>& params, const std::string& key, const std::string& v) {
    params.push_back({key, "\"" + escape_string(v) + "\""});
}
void add_param(std::vector<ManifestParam>& params, const std::string& key, double v) {
    params.push_back({key, format_double(v)});
}
void add_param(std::vector<ManifestParam>& params, const std::string& key, std::uint64_t v) {
    params.push_back({key, std::to_string(v)});
}
void add_param(std::vector<ManifestParam>& params, const std::string& key, bool v) {
    params.push_back({key, v ? "true" : "false"});
}

/// The run manifest records the command, resolved parameters, input digests
/// and tool version. Wall time is deliberately not stored (it would break
/// byte-identical reruns); it is printed to stderr instead.
void write_run_manifest(const fs::path& report_path, const std::string& command,
                        const std::vector<ManifestParam>& params,
                        const std::vector<fs::path>& inputs) {
    std::ostringstream out;
    out << "{\n  \"command\": \"" << escape_string(command) << "\",\n";
    out << "  \"tool_version\": \"" << kToolVersion << "\",\n";
    out << "  \"parameters\": {";
    for (std::size_t i = 0; i < params.size(); ++i) {
        out << (i ? ", " : "") << "\"" << escape_string(params[i].key)
            << "\": " << params[i].rendered;
    }
    out << "},\n  \"inputs\": [\n";
    const auto digests = digest_inputs(inputs);
    for (std::size_t i = 0; i < digests.size(); ++i) {
        out << "    {\"path\": \"" << escape_string(digests[i].first) << "\", \"digest\": \""
            << digests[i].second << "\"}" << (i + 1 < digests.size() ? ",\n" : "\n");
    }
    out << "  ]\n}\n";

    fs::path manifest_path = report_path;
    manifest_path += ".manifest.json";
    std::ofstream file(manifest_path, std::ios::binary | std::ios::trunc);
    if (!file) throw divscan::IoError("cannot write run manifest '" + manifest_path.string() + "'");
    file << out.str();
    if (!file) throw divscan::IoError("short write on '" + manifest_path.string() + "'");
}

std::vector<double> load_csv_column(const std::string& spec) {
    const std::size_t colon = spec.rfind(':');
    if (colon == std::string::npos || colon + 1 == spec.size())
        throw divscan::ValidationError("expected <csv-path>:<column>, got '" + spec + "'");
    const fs::path path = spec.substr(0, colon);
    const std::string column = spec.substr(colon + 1);
    const divscan::csv::Table table = divscan::csv::read_file(path);
    std::size_t index = table.header.size();
    for (std::size_t i = 0; i < table.header.size(); ++i)
        if (table.header[i] == column) index = i;
    if (index == table.header.size())
        throw divscan::ValidationError("CSV '" + path.string() + "' has no column '" + column + "'");
    std::vector<double> values;
    values.reserve(table.rows.size());
    for (const auto& row : table.rows)
        values.push_back(divscan::csv::parse_number(row[index], "column '" + column + "'"));
    return values;
}

std::vector<divscan::ActivationMatrix> split_batches(const divscan::ActivationMatrix& full,
                                                     Eigen::Index batch_rows) {
    std::vector<divscan::ActivationMatrix> batches;
    Eigen::Index row = 0;
    while (row < full.values.rows()) {
        const Eigen::Index take = std::min(batch_rows, full.values.rows() - row);
        if (take < 4) break; // trailing fragment too small for unbiased HSIC
        batches.push_back(divscan::ActivationMatrix::from(full.values.middleRows(row, take)));
        row += take;
    }
    if (batches.empty())
        throw divscan::ValidationError("minibatch split produced no usable batch (need >= 4 rows)");
    return batches;
}

void write_json_file(const fs::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw divscan::IoError("cannot open '" + path.string() + "' for writing");
    out << body;
    if (!out) throw divscan::IoError("short write on '" + path.string() + "'");
}

// ---------------------------------------------------------------------------

int cmd_diversity(const std::string& bundle_dir, const std::string& measure_name,
                  double grid_step, const std::string& exclude, double accuracy_flag,
                  bool accuracy_set, const std::string& out_path) {
    divscan::DiversityMeasure measure = divscan::DiversityMeasure::Both;
    if (measure_name == "cluster")
        measure = divscan::DiversityMeasure::Cluster;
    else if (measure_name == "spectral")
        measure = divscan::DiversityMeasure::Spectral;
    else if (measure_name != "both")
        throw divscan::ValidationError("--measure must be cluster, spectral or both");

    const divscan::TensorBundle bundle = divscan::load_bundle(bundle_dir);
    divscan::ClusterParams params;
    params.grid_step = grid_step;
    std::optional<std::string> exclude_pattern;
    if (!exclude.empty()) exclude_pattern = exclude;
    std::optional<double> accuracy;
    if (accuracy_set) accuracy = accuracy_flag;

    const divscan::DiversityReport report =
        divscan::model_diversity(bundle, params, exclude_pattern, measure, accuracy);
    divscan::write_report(report, out_path);

    std::vector<ManifestParam> params_out;
    add_param(params_out, "bundle", bundle_dir);
    add_param(params_out, "measure", measure_name);
    add_param(params_out, "grid_step", grid_step);
    add_param(params_out, "exclude", exclude);
    if (accuracy_set) add_param(params_out, "accuracy", accuracy_flag);
    write_run_manifest(out_path, "diversity", params_out, {bundle_dir});
    std::cout << out_path << "\n";
    return 0;
}

int cmd_transfer(const std::string& table_path, const std::string& out_path) {
    const divscan::AccuracyTable table = divscan::load_accuracy_table(table_path);
    const divscan::TransferScores scores = divscan::transfer_scores(table);
    divscan::write_report(scores, out_path);

    std::vector<ManifestParam> params;
    add_param(params, "table", table_path);
    write_run_manifest(out_path, "transfer", params, {table_path});
    std::cout << out_path << "\n";
    return 0;
}

int cmd_correlate(const std::string& x_spec, const std::string& y_spec,
                  const std::string& out_path) {
    const std::vector<double> x = load_csv_column(x_spec);
    const std::vector<double> y = load_csv_column(y_spec);
    const divscan::CorrelationReport report = divscan::correlate(x, y);
    divscan::write_report(report, out_path);

    std::vector<ManifestParam> params;
    add_param(params, "x", x_spec);
    add_param(params, "y", y_spec);
    const fs::path x_file = x_spec.substr(0, x_spec.rfind(':'));
    const fs::path y_file = y_spec.substr(0, y_spec.rfind(':'));
    write_run_manifest(out_path, "correlate", params, {x_file, y_file});
    std::cout << out_path << "\n";
    return 0;
}

int cmd_cka(const std::string& x_dir, const std::string& y_dir, std::uint64_t minibatch,
            const std::string& out_path) {
    const divscan::ActivationMatrix x = divscan::load_activation(x_dir);
    const divscan::ActivationMatrix y = divscan::load_activation(y_dir);

    double value = 0.0;
    std::string mode;
    if (minibatch > 0) {
        const auto xb = split_batches(x, static_cast<Eigen::Index>(minibatch));
        const auto yb = split_batches(y, static_cast<Eigen::Index>(minibatch));
        value = divscan::cka_minibatch(xb, yb);
        mode = "minibatch";
    } else {
        value = divscan::cka_linear(x, y);
        mode = "linear";
    }

    std::ostringstream body;
    body << "{\n  \"mode\": \"" << mode << "\",\n  \"cka\": " << format_double(value) << "\n}\n";
    write_json_file(out_path, body.str());

    std::vector<ManifestParam> params;
    add_param(params, "x", x_dir);
    add_param(params, "y", y_dir);
    add_param(params, "minibatch", minibatch);
    write_run_manifest(out_path, "cka", params, {x_dir, y_dir});
    std::cout << out_path << "\n";
    return 0;
}

int cmd_class_metrics(const std::string& embeddings_path, const std::string& out_path) {
    const divscan::EmbeddingSet set = divscan::load_embeddings(embeddings_path);
    const divscan::ClassMetrics metrics = divscan::class_metrics(set);

    std::ostringstream body;
    body << "{\n  \"v_intra\": " << format_double(metrics.v_intra)
         << ",\n  \"s_inter\": " << format_double(metrics.s_inter)
         << ",\n  \"msc\": " << format_double(metrics.msc) << "\n}\n";
    write_json_file(out_path, body.str());

    std::vector<ManifestParam> params;
    add_param(params, "embeddings", embeddings_path);
    write_run_manifest(out_path, "class-metrics", params, {embeddings_path});
    std::cout << out_path << "\n";
    return 0;
}

int cmd_importance(const std::string& table_path, const std::string& target,
                   std::uint64_t trees, std::uint64_t depth, double lr, std::uint64_t seed,
                   const std::string& out_path) {
    const divscan::csv::Table table = divscan::csv::read_file(table_path);
    std::size_t target_col = table.header.size();
    for (std::size_t i = 0; i < table.header.size(); ++i)
        if (table.header[i] == target) target_col = i;
    if (target_col == table.header.size())
        throw divscan::ValidationError("feature table has no target column '" + target + "'");

    std::vector<divscan::ImportanceRecord> records;
    for (const auto& row : table.rows) {
        divscan::ImportanceRecord record;
        for (std::size_t c = 0; c < row.size(); ++c) {
            const double v = divscan::csv::parse_number(row[c], "column '" + table.header[c] + "'");
            if (c == target_col)
                record.transfer = v;
            else
                record.features.emplace_back(table.header[c], v);
        }
        records.push_back(std::move(record));
    }

    divscan::GbdtConfig config;
    config.n_trees = trees;
    config.max_depth = depth;
    config.learning_rate = lr;
    const divscan::FeatureImportance imp = divscan::importance_table(records, config, seed);

    std::ostringstream body;
    body << "{\n  \"importance\": [\n";
    for (std::size_t i = 0; i < imp.names.size(); ++i) {
        body << "    {\"feature\": \"" << escape_string(imp.names[i])
             << "\", \"share\": " << format_double(imp.shares[i]) << "}"
             << (i + 1 < imp.names.size() ? ",\n" : "\n");
    }
    body << "  ]\n}\n";
    write_json_file(out_path, body.str());

    std::vector<ManifestParam> params;
    add_param(params, "table", table_path);
    add_param(params, "target", target);
    add_param(params, "trees", trees);
    add_param(params, "depth", depth);
    add_param(params, "lr", lr);
    add_param(params, "seed", seed);
    write_run_manifest(out_path, "importance", params, {table_path});
    std::cout << out_path << "\n";
    return 0;
}

struct ToytrainArgs {
    std::string control_cycle = "1";
    std::uint64_t steps = 200;
    double lr = 0.1;
    int batch = 16;
    std::uint64_t seed = 0;
    int pretrain_epochs = 0;
    bool centroid_init = false;
    std::string out;
    // task / model shape
    int classes = 3;
    int dim = 8;
    int hidden = 12;
    int per_class = 40;
    double blob_sigma = 0.25;
    double separation = 2.0;
    double noise_sigma = 0.05;
    double temperature = 0.2;
    double pretrain_lr = 0.05;
    std::uint64_t div_every = 0; // 0 disables the diversity column
};

int cmd_toytrain(const ToytrainArgs& args) {
    std::optional<std::uint64_t> cycle;
    if (args.control_cycle != "inf") {
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(args.control_cycle, &used);
        } catch (const std::exception&) {
            throw divscan::ValidationError("--control-cycle must be a positive integer or 'inf'");
        }
        if (used != args.control_cycle.size() || v == 0)
            throw divscan::ValidationError("--control-cycle must be a positive integer or 'inf'");
        cycle = v;
    }

    const divscan::SyntheticTask task = divscan::make_blobs_task(
        args.classes, args.dim, args.per_class, args.blob_sigma, args.separation, args.seed);
    const divscan::Dataset data = divscan::generate_dataset(task);

    divscan::ToyModel model =
        divscan::init_toy_model(args.hidden, args.dim, args.classes, args.seed);
    if (args.pretrain_epochs > 0) {
        divscan::PretrainConfig pre;
        pre.epochs = args.pretrain_epochs;
        pre.lr = args.pretrain_lr;
        pre.noise_sigma = args.noise_sigma;
        pre.temperature = args.temperature;
        pre.batch_size = args.batch;
        pre.seed = args.seed;
        model = divscan::pretrain_instance_discrimination(std::move(model), data, pre);
    }
    if (args.centroid_init) model = divscan::centroid_init_head(std::move(model), data);

    const fs::path out_path(args.out);
    fs::path stem = out_path;
    stem.replace_extension();
    divscan::write_bundle(divscan::to_bundle(model, "toytrain"), stem.string() + "_model_init");

    divscan::InjectionConfig cfg;
    cfg.control_cycle = cycle;
    cfg.steps = args.steps;
    cfg.lr = args.lr;
    cfg.batch_size = args.batch;
    cfg.seed = args.seed;
    cfg.snapshot_every = args.div_every;
    divscan::InjectionResult result =
        divscan::controlled_label_injection(std::move(model), data, cfg);

    std::map<std::uint64_t, double> diversity_at;
    if (!result.snapshots.empty()) {
        std::vector<divscan::ToyModel> models;
        models.reserve(result.snapshots.size());
        for (const auto& [step, snapshot] : result.snapshots) models.push_back(snapshot);
        const std::vector<double> trace = divscan::diversity_trace(models);
        for (std::size_t i = 0; i < trace.size(); ++i)
            diversity_at[result.snapshots[i].first] = trace[i];
    }

    std::ostringstream body;
    body << "step,loss,accuracy,backbone_updated,cluster_diversity\n";
    for (const auto& entry : result.log) {
        body << entry.step << "," << format_double(entry.loss) << ","
             << format_double(entry.accuracy) << "," << (entry.backbone_updated ? 1 : 0) << ",";
        const auto it = diversity_at.find(entry.step);
        if (it != diversity_at.end()) body << format_double(it->second);
        body << "\n";
    }
    write_json_file(out_path, body.str());

    divscan::write_bundle(divscan::to_bundle(result.model, "toytrain"),
                          stem.string() + "_model");

    std::vector<ManifestParam> params;
    add_param(params, "control_cycle", args.control_cycle);
    add_param(params, "steps", args.steps);
    add_param(params, "lr", args.lr);
    add_param(params, "batch", static_cast<std::uint64_t>(args.batch));
    add_param(params, "seed", args.seed);
    add_param(params, "pretrain_epochs", static_cast<std::uint64_t>(args.pretrain_epochs));
    add_param(params, "centroid_init", args.centroid_init);
    add_param(params, "classes", static_cast<std::uint64_t>(args.classes));
    add_param(params, "dim", static_cast<std::uint64_t>(args.dim));
    add_param(params, "hidden", static_cast<std::uint64_t>(args.hidden));
    add_param(params, "per_class", static_cast<std::uint64_t>(args.per_class));
    add_param(params, "blob_sigma", args.blob_sigma);
    add_param(params, "separation", args.separation);
    add_param(params, "noise_sigma", args.noise_sigma);
    add_param(params, "temperature", args.temperature);
    add_param(params, "pretrain_lr", args.pretrain_lr);
    add_param(params, "div_every", args.div_every);
    write_run_manifest(out_path, "toytrain", params, {});
    std::cout << out_path.string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"divscan: feature diversity and transferability analysis"};
    app.require_subcommand(1);

    // diversity
    std::string bundle_dir, measure = "both", exclude, out_path;
    double grid_step = 0.01, accuracy = 0.0;
    auto* diversity = app.add_subcommand("diversity", "score a weight bundle");
    diversity->add_option("--bundle", bundle_dir, "bundle directory")->required();
    diversity->add_option("--measure", measure, "cluster|spectral|both");
    diversity->add_option("--grid-step", grid_step, "threshold grid step");
    diversity->add_option("--exclude", exclude, "regex of layer names to skip");
    auto* accuracy_opt = diversity->add_option("--accuracy", accuracy, "upstream accuracy override");
    diversity->add_option("--out", out_path, "report path")->required();

    // transfer
    std::string table_path;
    auto* transfer = app.add_subcommand("transfer", "per-model transfer scores from an accuracy table");
    transfer->add_option("--table", table_path, "accuracy CSV")->required();
    transfer->add_option("--out", out_path, "report path")->required();

    // correlate
    std::string x_spec, y_spec;
    auto* correlate = app.add_subcommand("correlate", "correlation statistics of two CSV columns");
    correlate->add_option("--x", x_spec, "<csv-path>:<column>")->required();
    correlate->add_option("--y", y_spec, "<csv-path>:<column>")->required();
    correlate->add_option("--out", out_path, "report path")->required();

    // cka
    std::string x_dir, y_dir;
    std::uint64_t minibatch = 0;
    auto* cka = app.add_subcommand("cka", "centered kernel alignment of two activation bundles");
    cka->add_option("--x", x_dir, "activation bundle directory")->required();
    cka->add_option("--y", y_dir, "activation bundle directory")->required();
    cka->add_option("--minibatch", minibatch, "batch rows for the minibatch estimator (0 = full batch)");
    cka->add_option("--out", out_path, "report path")->required();

    // class-metrics
    std::string embeddings_path;
    auto* class_metrics = app.add_subcommand("class-metrics", "intra/inter class metrics of an embedding CSV");
    class_metrics->add_option("--embeddings", embeddings_path, "embedding CSV")->required();
    class_metrics->add_option("--out", out_path, "report path")->required();

    // importance
    std::string imp_table, imp_target = "transfer";
    std::uint64_t trees = 100, depth = 6, seed = 0;
    double imp_lr = 0.1;
    auto* importance = app.add_subcommand("importance", "GBDT feature importance for a feature table");
    importance->add_option("--table", imp_table, "feature CSV")->required();
    importance->add_option("--target", imp_target, "target column name");
    importance->add_option("--trees", trees, "boosting rounds");
    importance->add_option("--depth", depth, "max tree depth");
    importance->add_option("--lr", imp_lr, "learning rate");
    importance->add_option("--seed", seed, "seed");
    importance->add_option("--out", out_path, "report path")->required();

    // toytrain
    ToytrainArgs toy;
    auto* toytrain = app.add_subcommand("toytrain", "controlled label injection on a toy model");
    toytrain->add_option("--control-cycle", toy.control_cycle, "backbone update period or 'inf'")->required();
    toytrain->add_option("--steps", toy.steps, "training steps");
    toytrain->add_option("--lr", toy.lr, "learning rate");
    toytrain->add_option("--batch", toy.batch, "batch size");
    toytrain->add_option("--seed", toy.seed, "seed");
    toytrain->add_option("--pretrain-epochs", toy.pretrain_epochs, "instance-discrimination epochs");
    toytrain->add_flag("--centroid-init", toy.centroid_init, "initialize the head from class centroids");
    toytrain->add_option("--classes", toy.classes, "number of blob classes");
    toytrain->add_option("--dim", toy.dim, "input dimension");
    toytrain->add_option("--hidden", toy.hidden, "hidden width");
    toytrain->add_option("--per-class", toy.per_class, "samples per class");
    toytrain->add_option("--blob-sigma", toy.blob_sigma, "blob standard deviation");
    toytrain->add_option("--separation", toy.separation, "blob mean separation");
    toytrain->add_option("--noise-sigma", toy.noise_sigma, "pretraining view noise");
    toytrain->add_option("--temperature", toy.temperature, "contrastive temperature");
    toytrain->add_option("--pretrain-lr", toy.pretrain_lr, "pretraining learning rate");
    toytrain->add_option("--div-every", toy.div_every, "diversity sampling interval (0 = off)");
    toytrain->add_option("--out", toy.out, "per-step log CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const auto started = std::chrono::steady_clock::now();
    int rc = 0;
    try {
        if (diversity->parsed()) {
            rc = cmd_diversity(bundle_dir, measure, grid_step, exclude, accuracy,
                               accuracy_opt->count() > 0, out_path);
        } else if (transfer->parsed()) {
            rc = cmd_transfer(table_path, out_path);
        } else if (correlate->parsed()) {
            rc = cmd_correlate(x_spec, y_spec, out_path);
        } else if (cka->parsed()) {
            rc = cmd_cka(x_dir, y_dir, minibatch, out_path);
        } else if (class_metrics->parsed()) {
            rc = cmd_class_metrics(embeddings_path, out_path);
        } else if (importance->parsed()) {
            rc = cmd_importance(imp_table, imp_target, trees, depth, imp_lr, seed, out_path);
        } else if (toytrain->parsed()) {
            rc = cmd_toytrain(toy);
        }
    } catch (const divscan::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const divscan::DivscanError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started);
    std::cerr << "done in " << elapsed.count() << "s\n";
    return rc;
}
