#pragma once

// Experiment configuration, centralized/federated runners and report files.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedae/autoencoder.hpp"
#include "fedae/dataplane.hpp"
#include "fedae/detector.hpp"
#include "fedae/federation.hpp"

namespace fedae {

enum class Mode { Centralized, Federated };

struct DataSource {
    enum class Kind { Synth, Csv };
    Kind kind = Kind::Synth;
    std::string path;    // CSV file (Csv)
    std::string schema;  // schema JSON path (Csv)
    SynthSpec synth;

    bool operator==(const DataSource&) const = default;
};

struct ExperimentConfig {
    Mode mode = Mode::Centralized;
    std::uint64_t seed = 42;
    std::string output_dir = "out";
    DataSource data;
    AutoencoderConfig model;
    TrainConfig train;
    double train_fraction = 0.8;
    StdKind std_kind = StdKind::Population;
    FederationConfig federation;
    StrategyConfig strategy;
    LatencyModel latency;

    void validate() const;
    bool operator==(const ExperimentConfig&) const = default;
};

/// Environment variable naming the directory that relative dataset/schema
/// paths are looked up in first; a path missing there falls back to the
/// working directory.
inline constexpr const char* kDataDirEnv = "FEDAE_DATA_DIR";

ExperimentConfig parse_config_text(const std::string& json_text);
ExperimentConfig parse_config(const std::string& path);
/// Canonical JSON (sorted keys, every field present).
std::string canonical_config(const ExperimentConfig& cfg);
/// 16 hex digits of FNV-1a over the canonical form, excluding output_dir.
std::string config_fingerprint(const ExperimentConfig& cfg);

struct ClientRow {
    int client_id = 0;
    ConfusionMatrix confusion;
    MetricsReport metrics;
};

struct RoundTraceRow {
    int round = 0;
    int client_id = 0;
    double local_loss = 0.0;
    double threshold = 0.0;
    bool participated = false;
    double alpha = 1.0;
    double global_norm = 0.0;
};

struct RoundSummary {
    int round = 0;
    std::size_t participants = 0;
    std::string branch;
    double alpha = 1.0;
    double mean_local_loss = 0.0;
    double global_norm = 0.0;
    std::optional<double> threshold;
    std::optional<double> accuracy;
};

struct ClientEpochLoss {
    int round = 0;
    int client_id = 0;
    int epoch = 0;
    double loss = 0.0;
};

struct DataStats {
    std::size_t records = 0;
    std::size_t skipped = 0;
    std::size_t train_normal = 0;
    std::size_t validation_normal = 0;
    std::size_t test_attack = 0;
};

struct EvaluationReport {
    Mode mode = Mode::Centralized;
    std::uint64_t seed = 0;
    std::string fingerprint;
    ThresholdDetector detector;
    ConfusionMatrix confusion;
    MetricsReport metrics;
    std::vector<ClientRow> per_client;
    std::optional<double> mean_round_accuracy;
    DataStats data;

    std::vector<double> epoch_losses;  // centralized
    std::vector<RoundSummary> rounds;  // federated
    std::vector<RoundTraceRow> round_trace;
    std::vector<ClientEpochLoss> client_losses;
};

struct RunResult {
    EvaluationReport report;
    ParameterSet params;
    ScalerParams scaler;
};

LabeledDataset load_dataset(const DataSource& source);

/// The client partition a federated run of `cfg` uses for `ds`.
PartitionPlan plan_partition(const ExperimentConfig& cfg, const LabeledDataset& ds);

RunResult run_centralized(const ExperimentConfig& cfg);
RunResult run_federated_experiment(const ExperimentConfig& cfg);
RunResult run_experiment(const ExperimentConfig& cfg);

/// Evaluates a trained model on every record of `ds` (scaled with `scaler`).
EvaluationReport evaluate_dataset(const ParameterSet& params, const ScalerParams& scaler,
                                  const ThresholdDetector& detector, const LabeledDataset& ds);

/// Writes metrics.json, confusion.csv, loss_trace.csv, manifest.json and,
/// for federated runs, round_trace.csv, client_loss_trace.csv and
/// confusion_clients.csv. Returns the written paths.
std::vector<std::string> emit_report(const EvaluationReport& report, const ExperimentConfig& cfg,
                                     const std::string& dir);

/// Reads back the metrics.json written by emit_report.
EvaluationReport parse_report(const std::string& dir);

/// model.bin, scaler.json and detector.json.
void save_model(const RunResult& run, const std::string& dir);
RunResult load_model(const std::string& dir);

}  // namespace fedae
