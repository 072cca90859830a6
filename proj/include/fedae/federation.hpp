#pragma once

// Round-based federated training: client sampling, local rounds, pluggable
// aggregation (FedAvg, q-FFL, FairFedAvg), gradient-history relevance
// scoring and a deterministic straggler model on a virtual clock.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fedae/autoencoder.hpp"
#include "fedae/dataplane.hpp"
#include "fedae/detector.hpp"
#include "fedae/numerics.hpp"

namespace fedae {

struct ClientState {
    int id = 0;
    Matrix train;  // normal-only, already scaled
    std::uint64_t seed = 0;

    std::size_t n_samples() const { return static_cast<std::size_t>(train.rows()); }
};

struct ClientUpdate {
    int client_id = 0;
    int round = 0;
    std::vector<double> params;
    double local_loss = 0.0;  // mean training MSE of the final local epoch
    std::size_t n_samples = 0;
    double local_threshold = 0.0;
    std::vector<double> loss_trace;
};

struct LocalTrainConfig {
    AutoencoderConfig model;
    TrainConfig train;  // `epochs` is the per-round local epoch count
    StdKind std_kind = StdKind::Population;
};

/// Loads `global`, trains for train.epochs with a fresh optimizer and
/// schedule, then computes the local threshold on the client's own
/// training errors.
ClientUpdate local_round(const ClientState& client, std::span<const double> global, int round,
                         const LocalTrainConfig& cfg);

std::uint64_t local_round_seed(std::uint64_t client_seed, int round);

/// ceil(fraction * K) distinct ids, ascending.
std::vector<int> sample_clients(std::span<const int> ids, double fraction, Rng& rng);

// ---------------------------------------------------------------------------
// Aggregation

enum class StrategyKind { FedAvg, QFFL, FairFedAvg };

std::string_view to_string(StrategyKind k);
std::optional<StrategyKind> parse_strategy_kind(std::string_view s);

struct StrategyConfig {
    StrategyKind kind = StrategyKind::FedAvg;
    double q = 0.0;
    std::optional<double> lipschitz;  // defaults to 1 / learning rate
    std::vector<double> client_weights;  // by client id; empty = n_k / sum(n)
    double sample_fraction = 1.0;
    bool weighted_mean = false;
    std::size_t gh_window = 64;  // gradient-history capacity in entries

    void validate() const;
    double lipschitz_or(double learning_rate) const;
    bool operator==(const StrategyConfig&) const = default;
};

/// Plain mean over updates (or p_k-weighted mean when weighted_mean is set).
std::vector<double> fedavg_aggregate(std::span<const ClientUpdate> updates, const StrategyConfig& cfg);

struct QfflDelta {
    int client_id = 0;
    std::vector<double> delta;  // F_k^q * L * (w^t - w_k)
    double h = 0.0;
};

QfflDelta qffl_deltas(std::span<const double> global, const ClientUpdate& update, double q, double lipschitz);

/// w^t - sum(delta_k) / sum(h_k)
std::vector<double> qffl_aggregate(std::span<const double> global, std::span<const QfflDelta> deltas);

/// Root-mean-square of a vector; the scalar summary stored in the gradient history.
double rms(std::span<const double> v);

/// Softmax weight of `current` against `window` (current is included in the denominator).
double relevance_score(std::span<const double> window, double current);

std::vector<double> apply_relevance(double alpha, std::vector<double> params);

struct GhEntry {
    int round = 0;
    int client_id = 0;
    double summary = 0.0;
};

struct ServerState {
    std::vector<double> global;
    int round = 0;  // completed aggregations
    std::deque<GhEntry> gradient_history;
    std::size_t gh_capacity = 64;
    std::vector<double> hs;  // h_k of the latest aggregation
    std::size_t prev_participants = 0;
};

enum class RoundBranch { Stable, Shrunken, CarryForward };

std::string_view to_string(RoundBranch b);

struct RoundOutcome {
    ServerState state;
    double alpha = 1.0;
    RoundBranch branch = RoundBranch::Stable;
};

/// One FairFedAvg server step:
///   < 2 updates            -> carry the global model forward
///   fewer than last round  -> q-FFL update, then scale by the relevance score
///   otherwise              -> plain q-FFL update
RoundOutcome fair_round(ServerState server, std::span<const ClientUpdate> updates, const StrategyConfig& cfg,
                        double learning_rate);

class AggregationStrategy {
public:
    virtual ~AggregationStrategy() = default;
    virtual std::string_view name() const = 0;
    virtual RoundOutcome aggregate(ServerState server, std::span<const ClientUpdate> updates) const = 0;
};

std::unique_ptr<AggregationStrategy> make_strategy(const StrategyConfig& cfg, double learning_rate);

// ---------------------------------------------------------------------------
// Stragglers

struct LatencyOverride {
    int round = 0;
    int client_id = 0;
    double delay = 0.0;
    bool operator==(const LatencyOverride&) const = default;
};

struct LatencyModel {
    std::map<int, double> delays;  // base virtual delay per client (default 0)
    std::vector<LatencyOverride> overrides;  // replaces the base delay for one (round, client)
    double jitter = 0.0;  // adds jitter * U[0,1) per (seed, round, client)
    std::optional<double> drop_after;  // arrivals later than this miss the round

    void validate() const;
    bool operator==(const LatencyModel&) const = default;
};

struct Arrival {
    int client_id = 0;
    double time = 0.0;
    bool on_time = true;
};

struct RoundSchedule {
    std::vector<Arrival> arrivals;  // ordered by (time, client id)
    std::vector<int> active;        // on-time clients, ascending
};

RoundSchedule assign_latencies(const LatencyModel& model, std::span<const int> sampled, int round,
                               std::uint64_t seed);

// ---------------------------------------------------------------------------
// Orchestration

struct FederationConfig {
    std::size_t clients = 2;
    int rounds = 5;
    int epochs_per_round = 10;
    double alpha = 10.0;
    bool parallel = true;

    void validate() const;
    bool operator==(const FederationConfig&) const = default;
};

struct FederationSettings {
    FederationConfig federation;
    StrategyConfig strategy;
    LatencyModel latency;
    LocalTrainConfig local;  // local.train.epochs is overridden by epochs_per_round
    std::uint64_t master_seed = 0;
};

struct RoundRecord {
    int round = 0;
    std::vector<int> sampled;
    std::vector<int> active;
    std::vector<ClientUpdate> updates;  // every sampled client, ascending id
    double alpha = 1.0;
    RoundBranch branch = RoundBranch::Stable;
    double global_norm = 0.0;

    bool participated(int client_id) const;
};

using RoundObserver = std::function<void(const ServerState&, const RoundRecord&)>;

struct FederationRun {
    ServerState server;
    std::vector<RoundRecord> rounds;
};

FederationRun run_rounds(const FederationSettings& settings, const std::vector<ClientState>& clients,
                         std::vector<double> initial, const RoundObserver& observer = {});

struct ClientData {
    int id = 0;
    LabeledDataset train;         // normal-only
    LabeledDataset validation;    // normal-only
    LabeledDataset test_attacks;  // attack-only
};

struct ClientEvaluation {
    int client_id = 0;
    ConfusionMatrix confusion;
    MetricsReport metrics;
};

struct RoundEvaluation {
    int round = 0;
    double threshold = 0.0;  // running minimum used for this round's evaluation
    ConfusionMatrix pooled_confusion;
    MetricsReport pooled;
};

struct FederatedExperiment {
    FederationSettings settings;
    std::vector<ClientData> clients;
    bool evaluate_each_round = true;
};

struct FederatedOutcome {
    ParameterSet final_params;
    ThresholdDetector detector;
    FederationRun run;
    std::vector<RoundEvaluation> round_evaluations;
    std::vector<ClientEvaluation> per_client;
    ConfusionMatrix pooled_confusion;
    MetricsReport pooled;
    std::optional<double> mean_round_accuracy;
};

/// Confusion of validation normals + test attacks under `detector`.
ConfusionMatrix evaluate_split(const ParameterSet& params, const ThresholdDetector& detector,
                               const LabeledDataset& normals, const LabeledDataset& attacks);

FederatedOutcome run_federated(const FederatedExperiment& experiment);

}  // namespace fedae
