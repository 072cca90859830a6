#include "fedae/harness.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "fedae/errors.hpp"
#include "json_util.hpp"

namespace fedae {

using detail::json;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kTrainStream = 0x7a41;
constexpr std::uint64_t kSplitStream = 0x5b117;
constexpr std::uint64_t kTestStream = 0x7e57;
constexpr std::uint64_t kPartitionStream = 0x9a27;

const char* mode_name(Mode m) { return m == Mode::Centralized ? "centralized" : "federated"; }

Mode parse_mode(const std::string& s) {
    if (s == "centralized") return Mode::Centralized;
    if (s == "federated") return Mode::Federated;
    throw SchemaError("key 'mode' must be \"centralized\" or \"federated\", got \"" + s + "\"");
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> read_optional_number(const json& j, const char* key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return detail::as<double>(*it, detail::join_path(where, key));
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
    model.validate();
    train.validate();
    federation.validate();
    strategy.validate();
    latency.validate();
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InvalidArgument("train.train_fraction must be in (0, 1)");
    if (data.kind == DataSource::Kind::Csv && data.path.empty()) throw InvalidArgument("data.path is required for csv sources");
    if (data.kind == DataSource::Kind::Synth && data.synth.dim != model.input_dim) {
        throw InvalidArgument("data.synth.dim (" + std::to_string(data.synth.dim) + ") must equal model.input_dim (" +
                              std::to_string(model.input_dim) + ")");
    }
}

ExperimentConfig parse_config_text(const std::string& json_text) {
    using namespace detail;
    const json j = parse_json_text(json_text, "config");
    check_keys(j, {"mode", "seed", "output_dir", "data", "model", "train", "detector", "federation", "strategy", "latency"}, "");

    ExperimentConfig c;
    if (j.contains("mode")) c.mode = parse_mode(as<std::string>(j["mode"], "mode"));
    read(j, "seed", c.seed, "");
    read(j, "output_dir", c.output_dir, "");

    if (auto it = j.find("data"); it != j.end()) {
        const json& d = *it;
        check_keys(d, {"source", "path", "schema", "synth"}, "data");
        if (d.contains("source")) {
            const auto s = as<std::string>(d["source"], "data.source");
            if (s == "synth") c.data.kind = DataSource::Kind::Synth;
            else if (s == "csv") c.data.kind = DataSource::Kind::Csv;
            else throw SchemaError("key 'data.source' must be \"synth\" or \"csv\", got \"" + s + "\"");
        }
        read(d, "path", c.data.path, "data");
        read(d, "schema", c.data.schema, "data");
        if (auto s = d.find("synth"); s != d.end()) {
            check_keys(*s, {"n_normal", "n_attack", "dim", "displacement", "seed"}, "data.synth");
            read(*s, "n_normal", c.data.synth.n_normal, "data.synth");
            read(*s, "n_attack", c.data.synth.n_attack, "data.synth");
            read(*s, "dim", c.data.synth.dim, "data.synth");
            read(*s, "displacement", c.data.synth.displacement, "data.synth");
            read(*s, "seed", c.data.synth.seed, "data.synth");
        }
    }
    if (auto it = j.find("model"); it != j.end()) {
        check_keys(*it, {"input_dim", "hidden_dims", "bottleneck_dim", "dropout", "mirror_dropout"}, "model");
        read(*it, "input_dim", c.model.input_dim, "model");
        read_list(*it, "hidden_dims", c.model.hidden_dims, "model");
        read(*it, "bottleneck_dim", c.model.bottleneck_dim, "model");
        read(*it, "dropout", c.model.dropout, "model");
        read(*it, "mirror_dropout", c.model.mirror_dropout, "model");
    }
    if (auto it = j.find("train"); it != j.end()) {
        check_keys(*it, {"epochs", "batch_size", "learning_rate", "lr_step", "lr_gamma", "adam_beta1", "adam_beta2",
                         "adam_epsilon", "train_fraction"},
                   "train");
        read(*it, "epochs", c.train.epochs, "train");
        read(*it, "batch_size", c.train.batch_size, "train");
        read(*it, "learning_rate", c.train.schedule.base_rate, "train");
        read(*it, "lr_step", c.train.schedule.step_size, "train");
        read(*it, "lr_gamma", c.train.schedule.gamma, "train");
        read(*it, "adam_beta1", c.train.adam.beta1, "train");
        read(*it, "adam_beta2", c.train.adam.beta2, "train");
        read(*it, "adam_epsilon", c.train.adam.epsilon, "train");
        read(*it, "train_fraction", c.train_fraction, "train");
    }
    if (auto it = j.find("detector"); it != j.end()) {
        check_keys(*it, {"std"}, "detector");
        std::string s = "population";
        read(*it, "std", s, "detector");
        if (s == "population") c.std_kind = StdKind::Population;
        else if (s == "sample") c.std_kind = StdKind::Sample;
        else throw SchemaError("key 'detector.std' must be \"population\" or \"sample\", got \"" + s + "\"");
    }
    if (auto it = j.find("federation"); it != j.end()) {
        check_keys(*it, {"clients", "rounds", "epochs_per_round", "alpha", "parallel"}, "federation");
        read(*it, "clients", c.federation.clients, "federation");
        read(*it, "rounds", c.federation.rounds, "federation");
        read(*it, "epochs_per_round", c.federation.epochs_per_round, "federation");
        read(*it, "alpha", c.federation.alpha, "federation");
        read(*it, "parallel", c.federation.parallel, "federation");
    }
    if (auto it = j.find("strategy"); it != j.end()) {
        check_keys(*it, {"kind", "q", "lipschitz", "client_weights", "sample_fraction", "weighted_mean", "gh_window"},
                   "strategy");
        if (it->contains("kind")) {
            const auto s = as<std::string>((*it)["kind"], "strategy.kind");
            auto k = parse_strategy_kind(s);
            if (!k) throw SchemaError("key 'strategy.kind' must be one of fedavg, qffl, fairfedavg; got \"" + s + "\"");
            c.strategy.kind = *k;
        }
        read(*it, "q", c.strategy.q, "strategy");
        c.strategy.lipschitz = read_optional_number(*it, "lipschitz", "strategy");
        read_list(*it, "client_weights", c.strategy.client_weights, "strategy");
        read(*it, "sample_fraction", c.strategy.sample_fraction, "strategy");
        read(*it, "weighted_mean", c.strategy.weighted_mean, "strategy");
        read(*it, "gh_window", c.strategy.gh_window, "strategy");
    }
    if (auto it = j.find("latency"); it != j.end()) {
        check_keys(*it, {"delays", "overrides", "jitter", "drop_after"}, "latency");
        if (auto d = it->find("delays"); d != it->end()) {
            require_object(*d, "latency.delays");
            for (const auto& [key, value] : d->items()) {
                int id = 0;
                try {
                    std::size_t used = 0;
                    id = std::stoi(key, &used);
                    if (used != key.size()) throw std::invalid_argument(key);
                } catch (const std::exception&) {
                    throw SchemaError("key 'latency.delays." + key + "' must be an integer client id");
                }
                c.latency.delays[id] = as<double>(value, "latency.delays." + key);
            }
        }
        if (auto o = it->find("overrides"); o != it->end()) {
            if (!o->is_array()) throw SchemaError("key 'latency.overrides' must be an array");
            for (std::size_t i = 0; i < o->size(); ++i) {
                const std::string where = "latency.overrides[" + std::to_string(i) + "]";
                check_keys((*o)[i], {"round", "client", "delay"}, where);
                LatencyOverride lo;
                read((*o)[i], "round", lo.round, where);
                read((*o)[i], "client", lo.client_id, where);
                read((*o)[i], "delay", lo.delay, where);
                c.latency.overrides.push_back(lo);
            }
        }
        read(*it, "jitter", c.latency.jitter, "latency");
        c.latency.drop_after = read_optional_number(*it, "drop_after", "latency");
    }
    c.validate();
    return c;
}

ExperimentConfig parse_config(const std::string& path) { return parse_config_text(detail::read_file(path)); }

namespace {

json config_json(const ExperimentConfig& c) {
    json delays = json::object();
    for (const auto& [id, d] : c.latency.delays) delays[std::to_string(id)] = d;
    json overrides = json::array();
    for (const auto& o : c.latency.overrides) overrides.push_back({{"round", o.round}, {"client", o.client_id}, {"delay", o.delay}});

    return json{
        {"mode", mode_name(c.mode)},
        {"seed", c.seed},
        {"output_dir", c.output_dir},
        {"data",
         {{"source", c.data.kind == DataSource::Kind::Synth ? "synth" : "csv"},
          {"path", c.data.path},
          {"schema", c.data.schema},
          {"synth",
           {{"n_normal", c.data.synth.n_normal},
            {"n_attack", c.data.synth.n_attack},
            {"dim", c.data.synth.dim},
            {"displacement", c.data.synth.displacement},
            {"seed", c.data.synth.seed}}}}},
        {"model",
         {{"input_dim", c.model.input_dim},
          {"hidden_dims", c.model.hidden_dims},
          {"bottleneck_dim", c.model.bottleneck_dim},
          {"dropout", c.model.dropout},
          {"mirror_dropout", c.model.mirror_dropout}}},
        {"train",
         {{"epochs", c.train.epochs},
          {"batch_size", c.train.batch_size},
          {"learning_rate", c.train.schedule.base_rate},
          {"lr_step", c.train.schedule.step_size},
          {"lr_gamma", c.train.schedule.gamma},
          {"adam_beta1", c.train.adam.beta1},
          {"adam_beta2", c.train.adam.beta2},
          {"adam_epsilon", c.train.adam.epsilon},
          {"train_fraction", c.train_fraction}}},
        {"detector", {{"std", c.std_kind == StdKind::Population ? "population" : "sample"}}},
        {"federation",
         {{"clients", c.federation.clients},
          {"rounds", c.federation.rounds},
          {"epochs_per_round", c.federation.epochs_per_round},
          {"alpha", c.federation.alpha},
          {"parallel", c.federation.parallel}}},
        {"strategy",
         {{"kind", std::string(to_string(c.strategy.kind))},
          {"q", c.strategy.q},
          {"lipschitz", optional_number(c.strategy.lipschitz)},
          {"client_weights", c.strategy.client_weights},
          {"sample_fraction", c.strategy.sample_fraction},
          {"weighted_mean", c.strategy.weighted_mean},
          {"gh_window", c.strategy.gh_window}}},
        {"latency",
         {{"delays", delays},
          {"overrides", overrides},
          {"jitter", c.latency.jitter},
          {"drop_after", optional_number(c.latency.drop_after)}}},
    };
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

std::string canonical_config(const ExperimentConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

std::string config_fingerprint(const ExperimentConfig& cfg) {
    json j = config_json(cfg);
    j.erase("output_dir");
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
    return buf;
}

// ---------------------------------------------------------------------------
// Runs

namespace {

std::string resolve_data_path(const std::string& p) {
    if (p.empty() || fs::path(p).is_absolute()) return p;
    if (const char* dir = std::getenv(kDataDirEnv); dir && *dir) {
        const fs::path candidate = fs::path(dir) / p;
        if (fs::exists(candidate) || !fs::exists(p)) return candidate.string();
    }
    return p;
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t m, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(n, m));
    std::sort(idx.begin(), idx.end());
    return idx;
}

LabeledDataset scaled(LabeledDataset ds, const ScalerParams& scaler) {
    if (!ds.empty()) ds.features = apply_scaler(scaler, ds.features);
    return ds;
}

// Matched-size attack sample: as many attacks as validation normals, when available.
LabeledDataset attack_sample(const LabeledDataset& attacks, std::size_t n_validation, std::uint64_t seed) {
    return subset(attacks, sample_without_replacement(attacks.size(), n_validation, seed));
}

AutoencoderConfig seeded_model(const ExperimentConfig& cfg) {
    AutoencoderConfig m = cfg.model;
    m.seed = derive_seed(cfg.seed, kInitStream);
    return m;
}

}  // namespace

LabeledDataset load_dataset(const DataSource& source) {
    if (source.kind == DataSource::Kind::Synth) return synth_generate(source.synth);
    const SchemaConfig schema = source.schema.empty() ? synthetic_schema(66) : load_schema(resolve_data_path(source.schema));
    return load_csv(resolve_data_path(source.path), schema);
}

PartitionPlan plan_partition(const ExperimentConfig& cfg, const LabeledDataset& ds) {
    return dirichlet_partition(ds, cfg.federation.clients, cfg.federation.alpha, derive_seed(cfg.seed, kPartitionStream));
}

RunResult run_centralized(const ExperimentConfig& cfg) {
    cfg.validate();
    const LabeledDataset ds = load_dataset(cfg.data);
    if (ds.dim() != cfg.model.input_dim) throw ShapeError::mismatch("dataset width", cfg.model.input_dim, ds.dim());
    auto [normal, attack] = split_by_label(ds);
    auto [train, validation] = train_val_split(normal, cfg.train_fraction, derive_seed(cfg.seed, kSplitStream));

    const ScalerParams scaler = fit_scaler(train.features);
    train = scaled(std::move(train), scaler);
    validation = scaled(std::move(validation), scaler);
    const LabeledDataset test_attacks =
        scaled(attack_sample(attack, validation.size(), derive_seed(cfg.seed, kTestStream)), scaler);

    const AutoencoderConfig model = seeded_model(cfg);
    TrainConfig tc = cfg.train;
    tc.shuffle_seed = derive_seed(cfg.seed, kTrainStream);
    ParameterSet init = build(model);
    const std::size_t n_params = init.size();
    TrainResult trained = train_epochs(model, std::move(init), train.features, tc, AdamState::fresh(n_params, tc.adam));

    RunResult out;
    out.scaler = scaler;
    auto& r = out.report;
    r.mode = Mode::Centralized;
    r.seed = cfg.seed;
    r.fingerprint = config_fingerprint(cfg);
    r.detector = ThresholdDetector::centralized(
        compute_threshold(reconstruction_errors(trained.params, train.features), cfg.std_kind));
    r.confusion = evaluate_split(trained.params, r.detector, validation, test_attacks);
    r.metrics = metrics(r.confusion);
    r.epoch_losses = trained.loss_trace;
    r.data = {ds.size(), ds.skipped_rows, train.size(), validation.size(), test_attacks.size()};
    out.params = std::move(trained.params);
    return out;
}

RunResult run_federated_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const LabeledDataset ds = load_dataset(cfg.data);
    if (ds.dim() != cfg.model.input_dim) throw ShapeError::mismatch("dataset width", cfg.model.input_dim, ds.dim());
    const PartitionPlan plan = plan_partition(cfg, ds);

    FederatedExperiment exp;
    std::vector<LabeledDataset> attacks;
    for (std::size_t k = 0; k < plan.clients(); ++k) {
        const LabeledDataset local = subset(ds, plan.assignments[k]);
        auto [normal, attack] = split_by_label(local);
        ClientData cd;
        cd.id = static_cast<int>(k);
        if (normal.size() < 2) {
            throw InvalidArgument("client " + std::to_string(k) + " received fewer than two normal records");
        }
        std::tie(cd.train, cd.validation) =
            train_val_split(normal, cfg.train_fraction, derive_seed(cfg.seed, kSplitStream, k));
        exp.clients.push_back(std::move(cd));
        attacks.push_back(std::move(attack));
    }

    // One scaler over the union of the clients' training normals.
    Matrix pooled_train;
    for (const auto& c : exp.clients) {
        Matrix grown(pooled_train.rows() + c.train.features.rows(), c.train.features.cols());
        if (pooled_train.rows() > 0) grown.topRows(pooled_train.rows()) = pooled_train;
        grown.bottomRows(c.train.features.rows()) = c.train.features;
        pooled_train = std::move(grown);
    }
    const ScalerParams scaler = fit_scaler(pooled_train);
    DataStats stats{ds.size(), ds.skipped_rows, 0, 0, 0};
    for (std::size_t k = 0; k < exp.clients.size(); ++k) {
        auto& c = exp.clients[k];
        c.train = scaled(std::move(c.train), scaler);
        c.validation = scaled(std::move(c.validation), scaler);
        c.test_attacks = scaled(attack_sample(attacks[k], c.validation.size(), derive_seed(cfg.seed, kTestStream, k)), scaler);
        stats.train_normal += c.train.size();
        stats.validation_normal += c.validation.size();
        stats.test_attack += c.test_attacks.size();
    }

    auto& s = exp.settings;
    s.federation = cfg.federation;
    s.strategy = cfg.strategy;
    s.latency = cfg.latency;
    s.local.model = seeded_model(cfg);
    s.local.train = cfg.train;
    s.local.std_kind = cfg.std_kind;
    s.master_seed = cfg.seed;

    FederatedOutcome fo = run_federated(exp);

    RunResult out;
    out.scaler = scaler;
    auto& r = out.report;
    r.mode = Mode::Federated;
    r.seed = cfg.seed;
    r.fingerprint = config_fingerprint(cfg);
    r.detector = fo.detector;
    r.confusion = fo.pooled_confusion;
    r.metrics = fo.pooled;
    r.mean_round_accuracy = fo.mean_round_accuracy;
    r.data = stats;
    for (const auto& ce : fo.per_client) r.per_client.push_back({ce.client_id, ce.confusion, ce.metrics});

    for (const auto& rec : fo.run.rounds) {
        RoundSummary sum;
        sum.round = rec.round;
        sum.participants = rec.active.size();
        sum.branch = std::string(to_string(rec.branch));
        sum.alpha = rec.alpha;
        sum.global_norm = rec.global_norm;
        double loss_sum = 0.0;
        std::optional<double> round_min;
        for (const auto& u : rec.updates) {
            const bool took_part = rec.participated(u.client_id);
            r.round_trace.push_back({rec.round, u.client_id, u.local_loss, u.local_threshold, took_part,
                                     took_part ? rec.alpha : 1.0, rec.global_norm});
            for (std::size_t e = 0; e < u.loss_trace.size(); ++e) {
                r.client_losses.push_back({rec.round, u.client_id, static_cast<int>(e), u.loss_trace[e]});
            }
            if (took_part) {
                loss_sum += u.local_loss;
                round_min = round_min ? std::min(*round_min, u.local_threshold) : u.local_threshold;
            }
        }
        sum.mean_local_loss = rec.active.empty() ? 0.0 : loss_sum / static_cast<double>(rec.active.size());
        sum.threshold = round_min;
        for (const auto& ev : fo.round_evaluations) {
            if (ev.round == rec.round) sum.accuracy = ev.pooled.accuracy;
        }
        r.rounds.push_back(sum);
    }
    out.params = std::move(fo.final_params);
    return out;
}

RunResult run_experiment(const ExperimentConfig& cfg) {
    return cfg.mode == Mode::Centralized ? run_centralized(cfg) : run_federated_experiment(cfg);
}

EvaluationReport evaluate_dataset(const ParameterSet& params, const ScalerParams& scaler,
                                  const ThresholdDetector& detector, const LabeledDataset& ds) {
    EvaluationReport r;
    r.detector = detector;
    if (!ds.empty()) {
        const auto errors = reconstruction_errors(params, apply_scaler(scaler, ds.features));
        r.confusion = confusion(classify(detector, errors), ds.labels);
    }
    r.metrics = metrics(r.confusion);
    r.data.records = ds.size();
    r.data.skipped = ds.skipped_rows;
    return r;
}

// ---------------------------------------------------------------------------
// Report files

namespace {

json metrics_json(const MetricsReport& m) {
    return {{"accuracy", optional_number(m.accuracy)},
            {"precision", optional_number(m.precision)},
            {"recall", optional_number(m.recall)},
            {"f_measure", optional_number(m.f_measure)},
            {"false_rate", optional_number(m.fp_rate)}};
}

json confusion_json(const ConfusionMatrix& cm) { return {{"tp", cm.tp}, {"fp", cm.fp}, {"tn", cm.tn}, {"fn", cm.fn}}; }

MetricsReport metrics_from_json(const json& j) {
    auto get = [&](const char* k) -> std::optional<double> {
        if (!j.contains(k) || j[k].is_null()) return std::nullopt;
        return j[k].get<double>();
    };
    return {get("accuracy"), get("precision"), get("recall"), get("f_measure"), get("false_rate")};
}

ConfusionMatrix confusion_from_json(const json& j) {
    return {j.at("tp").get<std::size_t>(), j.at("fp").get<std::size_t>(), j.at("tn").get<std::size_t>(),
            j.at("fn").get<std::size_t>()};
}

std::string opt_cell(const std::optional<double>& v) { return v ? detail::format_double(*v) : std::string(); }

std::string provenance_line(const EvaluationReport& r) {
    return "# seed=" + std::to_string(r.seed) + " fingerprint=" + r.fingerprint + "\n";
}

}  // namespace

std::vector<std::string> emit_report(const EvaluationReport& r, const ExperimentConfig& cfg, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
    std::vector<std::string> written;
    auto put = [&](const char* name, const std::string& contents) {
        const std::string path = (fs::path(dir) / name).string();
        detail::write_file(path, contents);
        written.push_back(path);
    };

    json m = {{"mode", mode_name(r.mode)},
              {"seed", r.seed},
              {"fingerprint", r.fingerprint},
              {"threshold", r.detector.threshold},
              {"threshold_source", r.detector.source == ThresholdDetector::Source::Centralized ? "centralized" : "round_min"},
              {"round_thresholds", r.detector.round_thresholds},
              {"metrics", metrics_json(r.metrics)},
              {"confusion", confusion_json(r.confusion)},
              {"mean_round_accuracy", optional_number(r.mean_round_accuracy)},
              {"data",
               {{"records", r.data.records},
                {"skipped", r.data.skipped},
                {"train_normal", r.data.train_normal},
                {"validation_normal", r.data.validation_normal},
                {"test_attack", r.data.test_attack}}}};
    json clients = json::array();
    for (const auto& c : r.per_client) {
        clients.push_back({{"client_id", c.client_id}, {"metrics", metrics_json(c.metrics)}, {"confusion", confusion_json(c.confusion)}});
    }
    m["per_client"] = clients;
    put("metrics.json", m.dump(2) + "\n");

    const std::string prov = provenance_line(r);
    put("confusion.csv", "tp,fp,tn,fn\n" + std::to_string(r.confusion.tp) + "," + std::to_string(r.confusion.fp) + "," +
                             std::to_string(r.confusion.tn) + "," + std::to_string(r.confusion.fn) + "\n" + prov);

    std::string loss;
    if (r.mode == Mode::Centralized) {
        loss = "epoch,loss\n";
        for (std::size_t e = 0; e < r.epoch_losses.size(); ++e) {
            loss += std::to_string(e + 1) + "," + detail::format_double(r.epoch_losses[e]) + "\n";
        }
    } else {
        loss = "round,participants,branch,alpha,mean_local_loss,global_norm,threshold,accuracy\n";
        for (const auto& s : r.rounds) {
            loss += std::to_string(s.round) + "," + std::to_string(s.participants) + "," + s.branch + "," +
                    detail::format_double(s.alpha) + "," + detail::format_double(s.mean_local_loss) + "," +
                    detail::format_double(s.global_norm) + "," + opt_cell(s.threshold) + "," + opt_cell(s.accuracy) + "\n";
        }
    }
    put("loss_trace.csv", loss + prov);

    if (r.mode == Mode::Federated) {
        std::string trace = "round,client_id,local_loss,threshold,participated,alpha,global_norm\n";
        for (const auto& t : r.round_trace) {
            trace += std::to_string(t.round) + "," + std::to_string(t.client_id) + "," + detail::format_double(t.local_loss) +
                     "," + detail::format_double(t.threshold) + "," + (t.participated ? "1" : "0") + "," +
                     detail::format_double(t.alpha) + "," + detail::format_double(t.global_norm) + "\n";
        }
        put("round_trace.csv", trace + prov);

        std::string cl = "round,client_id,epoch,loss\n";
        for (const auto& c : r.client_losses) {
            cl += std::to_string(c.round) + "," + std::to_string(c.client_id) + "," + std::to_string(c.epoch + 1) + "," +
                  detail::format_double(c.loss) + "\n";
        }
        put("client_loss_trace.csv", cl + prov);

        std::string cc = "client_id,tp,fp,tn,fn\n";
        for (const auto& c : r.per_client) {
            cc += std::to_string(c.client_id) + "," + std::to_string(c.confusion.tp) + "," + std::to_string(c.confusion.fp) +
                  "," + std::to_string(c.confusion.tn) + "," + std::to_string(c.confusion.fn) + "\n";
        }
        put("confusion_clients.csv", cc + prov);
    }

    json files = json::array();
    for (const auto& p : written) files.push_back(fs::path(p).filename().string());
    json manifest = {{"seed", r.seed},
                     {"fingerprint", r.fingerprint},
                     {"files", files},
                     {"config", json::parse(canonical_config(cfg))}};
    put("manifest.json", manifest.dump(2) + "\n");
    return written;
}

EvaluationReport parse_report(const std::string& dir) {
    const std::string path = (fs::path(dir) / "metrics.json").string();
    const json j = detail::parse_json_text(detail::read_file(path), path);
    EvaluationReport r;
    try {
        r.mode = parse_mode(j.at("mode").get<std::string>());
        r.seed = j.at("seed").get<std::uint64_t>();
        r.fingerprint = j.at("fingerprint").get<std::string>();
        r.detector.threshold = j.at("threshold").get<double>();
        r.detector.source = j.at("threshold_source").get<std::string>() == "centralized"
                                ? ThresholdDetector::Source::Centralized
                                : ThresholdDetector::Source::RoundMin;
        r.detector.round_thresholds = j.at("round_thresholds").get<std::vector<double>>();
        r.metrics = metrics_from_json(j.at("metrics"));
        r.confusion = confusion_from_json(j.at("confusion"));
        if (!j.at("mean_round_accuracy").is_null()) r.mean_round_accuracy = j["mean_round_accuracy"].get<double>();
        const json& d = j.at("data");
        r.data = {d.at("records").get<std::size_t>(), d.at("skipped").get<std::size_t>(),
                  d.at("train_normal").get<std::size_t>(), d.at("validation_normal").get<std::size_t>(),
                  d.at("test_attack").get<std::size_t>()};
        for (const auto& c : j.at("per_client")) {
            r.per_client.push_back({c.at("client_id").get<int>(), confusion_from_json(c.at("confusion")),
                                    metrics_from_json(c.at("metrics"))});
        }
    } catch (const json::exception& e) {
        throw SchemaError(path + ": " + e.what());
    }
    return r;
}

// ---------------------------------------------------------------------------
// Model files

namespace {

constexpr char kModelMagic[8] = {'F', 'E', 'D', 'A', 'E', 'M', '0', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("truncated model file '" + path + "'");
    return v;
}

}  // namespace

void save_model(const RunResult& run, const std::string& dir) {
    fs::create_directories(dir);
    const std::string model_path = (fs::path(dir) / "model.bin").string();
    std::ofstream out(model_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + model_path + "'");
    out.write(kModelMagic, sizeof(kModelMagic));
    write_pod<std::uint64_t>(out, run.params.layer_count());
    for (const auto& s : run.params.shapes()) {
        write_pod<std::uint64_t>(out, s.in);
        write_pod<std::uint64_t>(out, s.out);
        write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(s.activation));
    }
    const auto values = run.params.values();
    write_pod<std::uint64_t>(out, values.size());
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!out) throw IoError("write failed for '" + model_path + "'");

    json scaler = {{"min", std::vector<double>(run.scaler.min.data(), run.scaler.min.data() + run.scaler.min.size())},
                   {"max", std::vector<double>(run.scaler.max.data(), run.scaler.max.data() + run.scaler.max.size())}};
    detail::write_file((fs::path(dir) / "scaler.json").string(), scaler.dump(2) + "\n");
    const auto& det = run.report.detector;
    json detector = {{"threshold", det.threshold},
                     {"source", det.source == ThresholdDetector::Source::Centralized ? "centralized" : "round_min"},
                     {"round_thresholds", det.round_thresholds},
                     {"seed", run.report.seed},
                     {"fingerprint", run.report.fingerprint}};
    detail::write_file((fs::path(dir) / "detector.json").string(), detector.dump(2) + "\n");
}

RunResult load_model(const std::string& dir) {
    const std::string model_path = (fs::path(dir) / "model.bin").string();
    std::ifstream in(model_path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + model_path + "'");
    char magic[sizeof(kModelMagic)];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0) {
        throw SchemaError("'" + model_path + "' is not a model file");
    }
    const auto n_layers = read_pod<std::uint64_t>(in, model_path);
    std::vector<LayerShape> shapes;
    for (std::uint64_t i = 0; i < n_layers; ++i) {
        LayerShape s;
        s.in = read_pod<std::uint64_t>(in, model_path);
        s.out = read_pod<std::uint64_t>(in, model_path);
        const auto act = read_pod<std::uint8_t>(in, model_path);
        if (act > static_cast<std::uint8_t>(Activation::Identity)) throw SchemaError("bad activation in '" + model_path + "'");
        s.activation = static_cast<Activation>(act);
        shapes.push_back(s);
    }
    const auto n_values = read_pod<std::uint64_t>(in, model_path);
    std::vector<double> values(n_values);
    if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n_values * sizeof(double)))) {
        throw IoError("truncated model file '" + model_path + "'");
    }

    RunResult run;
    run.params = unpack(values, shapes);
    try {
        const std::string sp = (fs::path(dir) / "scaler.json").string();
        const json s = detail::parse_json_text(detail::read_file(sp), sp);
        const auto mn = s.at("min").get<std::vector<double>>();
        const auto mx = s.at("max").get<std::vector<double>>();
        run.scaler.min = Eigen::Map<const Vector>(mn.data(), static_cast<Eigen::Index>(mn.size()));
        run.scaler.max = Eigen::Map<const Vector>(mx.data(), static_cast<Eigen::Index>(mx.size()));
        const std::string dp = (fs::path(dir) / "detector.json").string();
        const json d = detail::parse_json_text(detail::read_file(dp), dp);
        run.report.detector.threshold = d.at("threshold").get<double>();
        run.report.detector.source = d.at("source").get<std::string>() == "centralized"
                                         ? ThresholdDetector::Source::Centralized
                                         : ThresholdDetector::Source::RoundMin;
        run.report.detector.round_thresholds = d.at("round_thresholds").get<std::vector<double>>();
        run.report.seed = d.at("seed").get<std::uint64_t>();
        run.report.fingerprint = d.at("fingerprint").get<std::string>();
    } catch (const json::exception& e) {
        throw SchemaError("model directory '" + dir + "': " + e.what());
    }
    return run;
}

}  // namespace fedae
