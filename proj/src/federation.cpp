#include "fedae/federation.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <numeric>
#include <string>

#include "fedae/errors.hpp"

namespace fedae {

namespace {

constexpr std::uint64_t kLocalStream = 0x10ca1;
constexpr std::uint64_t kSampleStream = 0x5a3b1e;
constexpr std::uint64_t kLatencyStream = 0x1a7e;
constexpr std::uint64_t kClientStream = 0xc11e47;

void check_same_length(std::size_t expected, std::size_t actual, const char* what) {
    if (expected != actual) throw ShapeError::mismatch(what, expected, actual);
}

std::vector<ClientUpdate> sorted_by_client(std::span<const ClientUpdate> updates) {
    std::vector<ClientUpdate> out(updates.begin(), updates.end());
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
    return out;
}

}  // namespace

std::uint64_t local_round_seed(std::uint64_t client_seed, int round) {
    return derive_seed(client_seed, kLocalStream, static_cast<std::uint64_t>(round));
}

ClientUpdate local_round(const ClientState& client, std::span<const double> global, int round,
                         const LocalTrainConfig& cfg) {
    try {
        if (client.n_samples() == 0) throw InvalidArgument("client has no training data");
        const auto shapes = cfg.model.layer_shapes();
        ParameterSet params = unpack(global, shapes);
        TrainConfig tc = cfg.train;
        tc.shuffle_seed = local_round_seed(client.seed, round);
        TrainResult result = train_epochs(cfg.model, std::move(params), client.train, tc,
                                          AdamState::fresh(global.size(), tc.adam));
        const auto errors = reconstruction_errors(result.params, client.train);

        ClientUpdate u;
        u.client_id = client.id;
        u.round = round;
        u.params = pack(result.params);
        u.local_loss = result.loss_trace.back();
        u.n_samples = client.n_samples();
        u.local_threshold = compute_threshold(errors, cfg.std_kind);
        u.loss_trace = std::move(result.loss_trace);
        return u;
    } catch (const ClientError&) {
        throw;
    } catch (const Error& e) {
        throw ClientError(client.id, round, e.what());
    }
}

std::vector<int> sample_clients(std::span<const int> ids, double fraction, Rng& rng) {
    if (ids.empty()) throw InvalidArgument("no clients available for sampling");
    if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("sample fraction must be in (0, 1]");
    std::vector<int> pool(ids.begin(), ids.end());
    std::sort(pool.begin(), pool.end());
    if (std::adjacent_find(pool.begin(), pool.end()) != pool.end()) throw InvalidArgument("duplicate client id");
    // small epsilon so that e.g. 0.3 * 10 does not round up to 4
    const auto want = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(pool.size()) - 1e-9));
    const std::size_t m = std::clamp<std::size_t>(want, 1, pool.size());
    if (m == pool.size()) return pool;
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(m);
    std::sort(pool.begin(), pool.end());
    return pool;
}

// ---------------------------------------------------------------------------

std::string_view to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::FedAvg: return "fedavg";
        case StrategyKind::QFFL: return "qffl";
        case StrategyKind::FairFedAvg: return "fairfedavg";
    }
    return "?";
}

std::optional<StrategyKind> parse_strategy_kind(std::string_view s) {
    for (auto k : {StrategyKind::FedAvg, StrategyKind::QFFL, StrategyKind::FairFedAvg}) {
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

std::string_view to_string(RoundBranch b) {
    switch (b) {
        case RoundBranch::Stable: return "stable";
        case RoundBranch::Shrunken: return "shrunken";
        case RoundBranch::CarryForward: return "carry_forward";
    }
    return "?";
}

void StrategyConfig::validate() const {
    if (!(q >= 0.0) || !std::isfinite(q)) throw InvalidArgument("q must be a finite value >= 0");
    if (lipschitz && !(*lipschitz > 0.0)) throw InvalidArgument("Lipschitz constant L must be positive");
    if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) throw InvalidArgument("sample_fraction must be in (0, 1]");
    for (double w : client_weights) {
        if (!(w > 0.0)) throw InvalidArgument("client weights must be positive");
    }
    if (!client_weights.empty()) {
        const double total = std::accumulate(client_weights.begin(), client_weights.end(), 0.0);
        if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("client weights must sum to 1, got " + std::to_string(total));
    }
    if (gh_window == 0) throw InvalidArgument("gradient history window must be >= 1");
}

double StrategyConfig::lipschitz_or(double learning_rate) const { return lipschitz ? *lipschitz : 1.0 / learning_rate; }

std::vector<double> fedavg_aggregate(std::span<const ClientUpdate> updates, const StrategyConfig& cfg) {
    if (updates.empty()) throw InvalidArgument("fedavg needs at least one update");
    const auto ordered = sorted_by_client(updates);
    const std::size_t d = ordered.front().params.size();
    for (const auto& u : ordered) check_same_length(d, u.params.size(), "client update length");

    std::vector<double> weights(ordered.size(), 1.0);
    if (cfg.weighted_mean) {
        for (std::size_t i = 0; i < ordered.size(); ++i) {
            const auto id = static_cast<std::size_t>(ordered[i].client_id);
            if (!cfg.client_weights.empty()) {
                if (id >= cfg.client_weights.size()) throw InvalidArgument("no client weight for client " + std::to_string(id));
                weights[i] = cfg.client_weights[id];
            } else {
                weights[i] = static_cast<double>(ordered[i].n_samples);
            }
        }
    }
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (!(total > 0.0)) throw NumericError("fedavg weights sum to zero");

    std::vector<double> out(d, 0.0);
    for (std::size_t i = 0; i < ordered.size(); ++i) {
        const double w = weights[i];
        const auto& p = ordered[i].params;
        for (std::size_t j = 0; j < d; ++j) out[j] += w * p[j];
    }
    for (auto& v : out) v /= total;
    return out;
}

QfflDelta qffl_deltas(std::span<const double> global, const ClientUpdate& update, double q, double lipschitz) {
    check_same_length(global.size(), update.params.size(), "client update length");
    if (!(q >= 0.0)) throw InvalidArgument("q must be >= 0");
    if (!(lipschitz > 0.0)) throw InvalidArgument("Lipschitz constant must be positive");
    const double f = update.local_loss;
    if (!std::isfinite(f) || f < 0.0) throw NumericError("local loss must be finite and non-negative");
    if (q > 0.0 && f == 0.0) {
        throw NumericError("client " + std::to_string(update.client_id) + " reported zero loss; F^q is degenerate for q > 0");
    }

    const double f_q = std::pow(f, q);
    QfflDelta out;
    out.client_id = update.client_id;
    out.delta.resize(global.size());
    double step_sq = 0.0;
    for (std::size_t j = 0; j < global.size(); ++j) {
        const double step = lipschitz * (global[j] - update.params[j]);
        step_sq += step * step;
        out.delta[j] = f_q * step;
    }
    const double curvature = q > 0.0 ? q * std::pow(f, q - 1.0) * step_sq : 0.0;
    out.h = curvature + lipschitz * f_q;
    return out;
}

std::vector<double> qffl_aggregate(std::span<const double> global, std::span<const QfflDelta> deltas) {
    if (deltas.empty()) throw InvalidArgument("q-FFL aggregation needs at least one update");
    std::vector<const QfflDelta*> ordered;
    for (const auto& d : deltas) {
        check_same_length(global.size(), d.delta.size(), "q-FFL delta length");
        ordered.push_back(&d);
    }
    std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->client_id < b->client_id; });

    double h_sum = 0.0;
    std::vector<double> delta_sum(global.size(), 0.0);
    for (const auto* d : ordered) {
        h_sum += d->h;
        for (std::size_t j = 0; j < global.size(); ++j) delta_sum[j] += d->delta[j];
    }
    if (!(h_sum > 0.0) || !std::isfinite(h_sum)) throw NumericError("q-FFL aggregation is degenerate: sum of h_k is not positive");
    std::vector<double> out(global.begin(), global.end());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] -= delta_sum[j] / h_sum;
    return out;
}

double rms(std::span<const double> v) {
    if (v.empty()) return 0.0;
    return l2_norm(v) / std::sqrt(static_cast<double>(v.size()));
}

double relevance_score(std::span<const double> window, double current) {
    double top = current;
    for (double s : window) top = std::max(top, s);
    double denom = std::exp(current - top);
    const double numer = denom;
    for (double s : window) denom += std::exp(s - top);
    return numer / denom;
}

std::vector<double> apply_relevance(double alpha, std::vector<double> params) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidArgument("relevance score must be in (0, 1], got " + std::to_string(alpha));
    for (auto& v : params) v *= alpha;
    return params;
}

namespace {

// Summaries stored by the most recent round before `round`.
std::vector<double> previous_round_window(const std::deque<GhEntry>& gh, int round) {
    int latest = std::numeric_limits<int>::min();
    for (const auto& e : gh) {
        if (e.round < round) latest = std::max(latest, e.round);
    }
    std::vector<double> window;
    for (const auto& e : gh) {
        if (e.round == latest) window.push_back(e.summary);
    }
    return window;
}

}  // namespace

RoundOutcome fair_round(ServerState server, std::span<const ClientUpdate> updates, const StrategyConfig& cfg,
                        double learning_rate) {
    const int round = server.round + 1;
    const auto ordered = sorted_by_client(updates);
    const double lipschitz = cfg.lipschitz_or(learning_rate);

    std::vector<QfflDelta> deltas;
    server.hs.clear();
    for (const auto& u : ordered) {
        deltas.push_back(qffl_deltas(server.global, u, cfg.q, lipschitz));
        server.hs.push_back(deltas.back().h);
        server.gradient_history.push_back({round, u.client_id, rms(deltas.back().delta)});
        while (server.gradient_history.size() > server.gh_capacity) server.gradient_history.pop_front();
    }

    RoundOutcome out;
    const std::size_t count = ordered.size();
    if (count < 2) {
        out.branch = RoundBranch::CarryForward;
    } else {
        std::vector<double> next = qffl_aggregate(server.global, deltas);
        const bool shrunk = server.prev_participants > 0 && count < server.prev_participants;
        if (shrunk) {
            out.alpha = relevance_score(previous_round_window(server.gradient_history, round), rms(next));
            next = apply_relevance(out.alpha, std::move(next));
            out.branch = RoundBranch::Shrunken;
        }
        server.global = std::move(next);
    }
    server.prev_participants = count;
    server.round = round;
    out.state = std::move(server);
    return out;
}

namespace {

class FedAvgStrategy final : public AggregationStrategy {
public:
    explicit FedAvgStrategy(StrategyConfig cfg) : cfg_(std::move(cfg)) {}
    std::string_view name() const override { return "fedavg"; }
    RoundOutcome aggregate(ServerState server, std::span<const ClientUpdate> updates) const override {
        RoundOutcome out;
        if (updates.empty()) {
            out.branch = RoundBranch::CarryForward;
        } else {
            server.global = fedavg_aggregate(updates, cfg_);
        }
        server.prev_participants = updates.size();
        server.round += 1;
        out.state = std::move(server);
        return out;
    }

private:
    StrategyConfig cfg_;
};

class QfflStrategy final : public AggregationStrategy {
public:
    QfflStrategy(StrategyConfig cfg, double lr) : cfg_(std::move(cfg)), lr_(lr) {}
    std::string_view name() const override { return "qffl"; }
    RoundOutcome aggregate(ServerState server, std::span<const ClientUpdate> updates) const override {
        RoundOutcome out;
        if (updates.empty()) {
            out.branch = RoundBranch::CarryForward;
        } else {
            std::vector<QfflDelta> deltas;
            server.hs.clear();
            for (const auto& u : sorted_by_client(updates)) {
                deltas.push_back(qffl_deltas(server.global, u, cfg_.q, cfg_.lipschitz_or(lr_)));
                server.hs.push_back(deltas.back().h);
            }
            server.global = qffl_aggregate(server.global, deltas);
        }
        server.prev_participants = updates.size();
        server.round += 1;
        out.state = std::move(server);
        return out;
    }

private:
    StrategyConfig cfg_;
    double lr_;
};

class FairFedAvgStrategy final : public AggregationStrategy {
public:
    FairFedAvgStrategy(StrategyConfig cfg, double lr) : cfg_(std::move(cfg)), lr_(lr) {}
    std::string_view name() const override { return "fairfedavg"; }
    RoundOutcome aggregate(ServerState server, std::span<const ClientUpdate> updates) const override {
        return fair_round(std::move(server), updates, cfg_, lr_);
    }

private:
    StrategyConfig cfg_;
    double lr_;
};

}  // namespace

std::unique_ptr<AggregationStrategy> make_strategy(const StrategyConfig& cfg, double learning_rate) {
    cfg.validate();
    switch (cfg.kind) {
        case StrategyKind::FedAvg: return std::make_unique<FedAvgStrategy>(cfg);
        case StrategyKind::QFFL: return std::make_unique<QfflStrategy>(cfg, learning_rate);
        case StrategyKind::FairFedAvg: return std::make_unique<FairFedAvgStrategy>(cfg, learning_rate);
    }
    throw InvalidArgument("unknown strategy kind");
}

// ---------------------------------------------------------------------------

void LatencyModel::validate() const {
    for (const auto& [id, d] : delays) {
        if (!(d >= 0.0)) throw InvalidArgument("latency for client " + std::to_string(id) + " must be >= 0");
    }
    for (const auto& o : overrides) {
        if (!(o.delay >= 0.0)) throw InvalidArgument("latency override delay must be >= 0");
    }
    if (!(jitter >= 0.0)) throw InvalidArgument("latency jitter must be >= 0");
    if (drop_after && !(*drop_after >= 0.0)) throw InvalidArgument("drop_after must be >= 0");
}

RoundSchedule assign_latencies(const LatencyModel& model, std::span<const int> sampled, int round,
                               std::uint64_t seed) {
    RoundSchedule schedule;
    for (int id : sampled) {
        double t = 0.0;
        if (auto it = model.delays.find(id); it != model.delays.end()) t = it->second;
        for (const auto& o : model.overrides) {
            if (o.round == round && o.client_id == id) t = o.delay;
        }
        if (model.jitter > 0.0) {
            Rng rng(derive_seed(seed, static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(id)));
            t += model.jitter * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        }
        const bool on_time = !model.drop_after || t <= *model.drop_after;
        schedule.arrivals.push_back({id, t, on_time});
    }
    std::sort(schedule.arrivals.begin(), schedule.arrivals.end(), [](const Arrival& a, const Arrival& b) {
        return a.time != b.time ? a.time < b.time : a.client_id < b.client_id;
    });
    for (const auto& a : schedule.arrivals) {
        if (a.on_time) schedule.active.push_back(a.client_id);
    }
    std::sort(schedule.active.begin(), schedule.active.end());
    return schedule;
}

// ---------------------------------------------------------------------------

void FederationConfig::validate() const {
    if (clients == 0) throw InvalidArgument("federation needs at least one client");
    if (rounds < 1) throw InvalidArgument("rounds must be >= 1, got " + std::to_string(rounds));
    if (epochs_per_round < 1) throw InvalidArgument("epochs_per_round must be >= 1, got " + std::to_string(epochs_per_round));
    if (!(alpha > 0.0)) throw InvalidArgument("dirichlet alpha must be positive");
}

bool RoundRecord::participated(int client_id) const {
    return std::binary_search(active.begin(), active.end(), client_id);
}

FederationRun run_rounds(const FederationSettings& settings, const std::vector<ClientState>& clients,
                         std::vector<double> initial, const RoundObserver& observer) {
    settings.federation.validate();
    settings.latency.validate();
    if (clients.empty()) throw InvalidArgument("federation needs at least one client");
    check_same_length(packed_size(settings.local.model.layer_shapes()), initial.size(), "initial global model");

    const double lr = settings.local.train.schedule.base_rate;
    const auto strategy = make_strategy(settings.strategy, lr);
    LocalTrainConfig local = settings.local;
    local.train.epochs = settings.federation.epochs_per_round;
    local.train.validate();

    std::vector<int> ids;
    for (const auto& c : clients) ids.push_back(c.id);
    auto client_by_id = [&](int id) -> const ClientState& {
        return *std::find_if(clients.begin(), clients.end(), [&](const ClientState& c) { return c.id == id; });
    };

    FederationRun run;
    run.server.global = std::move(initial);
    run.server.gh_capacity = settings.strategy.gh_window;
    const std::uint64_t latency_seed = derive_seed(settings.master_seed, kLatencyStream);

    for (int t = 1; t <= settings.federation.rounds; ++t) {
        Rng sampler(derive_seed(settings.master_seed, kSampleStream, static_cast<std::uint64_t>(t)));
        RoundRecord record;
        record.round = t;
        record.sampled = sample_clients(ids, settings.strategy.sample_fraction, sampler);
        record.active = assign_latencies(settings.latency, record.sampled, t, latency_seed).active;

        const std::vector<double>& global = run.server.global;
        if (settings.federation.parallel && record.sampled.size() > 1) {
            std::vector<std::future<ClientUpdate>> jobs;
            for (int id : record.sampled) {
                jobs.push_back(std::async(std::launch::async, [&, id] { return local_round(client_by_id(id), global, t, local); }));
            }
            for (auto& j : jobs) record.updates.push_back(j.get());
        } else {
            for (int id : record.sampled) record.updates.push_back(local_round(client_by_id(id), global, t, local));
        }

        std::vector<ClientUpdate> arrived;
        for (const auto& u : record.updates) {
            if (record.participated(u.client_id)) arrived.push_back(u);
        }
        RoundOutcome outcome = strategy->aggregate(std::move(run.server), arrived);
        run.server = std::move(outcome.state);
        record.alpha = outcome.alpha;
        record.branch = outcome.branch;
        record.global_norm = l2_norm(run.server.global);
        if (observer) observer(run.server, record);
        run.rounds.push_back(std::move(record));
    }
    return run;
}

ConfusionMatrix evaluate_split(const ParameterSet& params, const ThresholdDetector& detector,
                               const LabeledDataset& normals, const LabeledDataset& attacks) {
    ConfusionMatrix cm;
    for (const LabeledDataset* part : {&normals, &attacks}) {
        if (part->empty()) continue;
        const auto errors = reconstruction_errors(params, part->features);
        cm += confusion(classify(detector, errors), part->labels);
    }
    return cm;
}

FederatedOutcome run_federated(const FederatedExperiment& experiment) {
    const auto& settings = experiment.settings;
    if (experiment.clients.empty()) throw InvalidArgument("federated experiment has no clients");

    std::vector<ClientState> states;
    for (const auto& c : experiment.clients) {
        states.push_back({c.id, c.train.features,
                          derive_seed(settings.master_seed, kClientStream, static_cast<std::uint64_t>(c.id))});
    }
    const auto shapes = settings.local.model.layer_shapes();

    FederatedOutcome outcome;
    std::vector<double> thresholds;
    auto observer = [&](const ServerState& server, const RoundRecord& record) {
        for (const auto& u : record.updates) {
            if (record.participated(u.client_id)) thresholds.push_back(u.local_threshold);
        }
        if (!experiment.evaluate_each_round || thresholds.empty()) return;
        const ParameterSet params = unpack(server.global, shapes);
        const ThresholdDetector det = min_round_threshold(thresholds);
        RoundEvaluation eval;
        eval.round = record.round;
        eval.threshold = det.threshold;
        for (const auto& c : experiment.clients) eval.pooled_confusion += evaluate_split(params, det, c.validation, c.test_attacks);
        eval.pooled = metrics(eval.pooled_confusion);
        outcome.round_evaluations.push_back(eval);
    };

    outcome.run = run_rounds(settings, states, pack(build(settings.local.model)), observer);
    if (thresholds.empty()) throw InvalidArgument("no client update arrived in any round; cannot set a threshold");

    outcome.final_params = unpack(outcome.run.server.global, shapes);
    outcome.detector = min_round_threshold(thresholds);
    for (const auto& c : experiment.clients) {
        ClientEvaluation ce;
        ce.client_id = c.id;
        ce.confusion = evaluate_split(outcome.final_params, outcome.detector, c.validation, c.test_attacks);
        ce.metrics = metrics(ce.confusion);
        outcome.pooled_confusion += ce.confusion;
        outcome.per_client.push_back(ce);
    }
    outcome.pooled = metrics(outcome.pooled_confusion);

    double acc_sum = 0.0;
    std::size_t acc_n = 0;
    for (const auto& e : outcome.round_evaluations) {
        if (e.pooled.accuracy) {
            acc_sum += *e.pooled.accuracy;
            ++acc_n;
        }
    }
    if (acc_n > 0) outcome.mean_round_accuracy = acc_sum / static_cast<double>(acc_n);
    return outcome;
}

}  // namespace fedae
