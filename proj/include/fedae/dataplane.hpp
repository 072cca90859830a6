#pragma once

// Flow-record ingestion, scaling, splitting, Dirichlet partitioning and a
// synthetic flow generator.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedae/label.hpp"
#include "fedae/numerics.hpp"

namespace fedae {

struct FlowRecord {
    Vector features;
    Label label = Label::Normal;
    std::string category;  // empty iff Normal
};

struct LabeledDataset {
    Matrix features;  // rows are records
    std::vector<Label> labels;
    std::vector<std::string> categories;
    std::size_t skipped_rows = 0;  // rows dropped during ingestion

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
    bool empty() const { return labels.empty(); }
    FlowRecord record(std::size_t i) const;
    std::size_t count(Label l) const;
};

LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> rows);
LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b);

struct CategoricalColumn {
    std::string column;
    std::vector<std::string> vocabulary;  // one output column per entry
    bool operator==(const CategoricalColumn&) const = default;
};

// Describes how a flow CSV maps to a fixed-width feature vector.
struct SchemaConfig {
    std::string label_column = "Attack_label";
    std::vector<std::string> normal_values{"0"};
    std::string category_column;  // optional
    std::vector<std::string> drop_columns;
    std::vector<CategoricalColumn> categorical;
    // Value whose one-hot slot receives unknown categories when present in a vocabulary.
    std::string other_token = "__other__";
    std::size_t input_dim = 66;

    bool operator==(const SchemaConfig&) const = default;
};

SchemaConfig load_schema(const std::string& path);
SchemaConfig parse_schema(const std::string& json_text);

/// Parses a header-first CSV. Rows with unparseable numeric cells are
/// skipped and counted in `skipped_rows`.
LabeledDataset load_csv(const std::string& path, const SchemaConfig& schema);
LabeledDataset parse_csv(std::istream& in, const SchemaConfig& schema, const std::string& origin = "<stream>");

struct ScalerParams {
    Vector min;
    Vector max;
};

ScalerParams fit_scaler(const Matrix& data);
/// Affine [min, max] -> [-1, 1] per column, clamped; constant columns map to 0.
Matrix apply_scaler(const ScalerParams& scaler, const Matrix& data);

std::pair<LabeledDataset, LabeledDataset> split_by_label(const LabeledDataset& ds);

/// Seeded shuffle, then the first floor(fraction * n) rows become the train part.
std::pair<LabeledDataset, LabeledDataset> train_val_split(const LabeledDataset& ds, double fraction,
                                                          std::uint64_t seed);

struct PartitionPlan {
    std::vector<std::vector<std::size_t>> assignments;  // per client, ascending record indices
    double alpha = 0.0;
    std::uint64_t seed = 0;

    std::size_t clients() const { return assignments.size(); }
};

/// Label-skew partition: per class, client shares ~ Dirichlet(alpha * 1).
PartitionPlan dirichlet_partition(std::span<const Label> labels, std::size_t n_clients, double alpha,
                                  std::uint64_t seed);
PartitionPlan dirichlet_partition(const LabeledDataset& ds, std::size_t n_clients, double alpha, std::uint64_t seed);

struct SynthSpec {
    std::size_t n_normal = 2000;
    std::size_t n_attack = 200;
    std::size_t dim = 66;
    double displacement = 2.0;
    std::uint64_t seed = 42;

    bool operator==(const SynthSpec&) const = default;
};

/// Normal rows are a noisy low-rank Gaussian squashed into (-1, 1), with a
/// small share of high-noise "bursty" rows. Attack rows come from the same
/// generator and are then shifted by +-displacement on a random subset of
/// coordinates.
LabeledDataset synth_generate(const SynthSpec& spec);

/// Header: f0..f{d-1},Attack_label,Attack_type. Matches the synthetic schema.
void write_dataset_csv(const LabeledDataset& ds, const std::string& path);
std::string dataset_csv(const LabeledDataset& ds);
SchemaConfig synthetic_schema(std::size_t dim);

/// Writes partition.csv (record_index,client_id) and partition_manifest.json.
void write_partition(const PartitionPlan& plan, std::span<const Label> labels, const std::string& dir);

}  // namespace fedae
