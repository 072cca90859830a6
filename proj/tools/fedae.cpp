// fedae: command-line front end for dataset generation, partitioning,
// centralized/federated training, evaluation and report inspection.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fedae/errors.hpp"
#include "fedae/harness.hpp"

namespace fs = std::filesystem;
using namespace fedae;

namespace {

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config, "Experiment config (JSON); empty uses defaults");
    cmd->add_option("--seed", flags.seed, "Master seed, overrides the config");
    cmd->add_option("--out", flags.out, "Output directory, overrides the config");
}

ExperimentConfig resolve(const CommonFlags& flags) {
    ExperimentConfig cfg = flags.config.empty() ? parse_config_text("") : parse_config(flags.config);
    if (flags.seed) cfg.seed = *flags.seed;
    if (!flags.out.empty()) cfg.output_dir = flags.out;
    return cfg;
}

std::string fmt(const std::optional<double>& v) {
    if (!v) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", *v);
    return buf;
}

void print_summary(const EvaluationReport& r, std::ostream& os) {
    os << "mode        " << (r.mode == Mode::Centralized ? "centralized" : "federated") << "\n"
       << "seed        " << r.seed << "\n"
       << "fingerprint " << r.fingerprint << "\n"
       << "threshold   " << r.detector.threshold << "\n"
       << "confusion   tp=" << r.confusion.tp << " fp=" << r.confusion.fp << " tn=" << r.confusion.tn
       << " fn=" << r.confusion.fn << "\n"
       << "accuracy    " << fmt(r.metrics.accuracy) << "\n"
       << "precision   " << fmt(r.metrics.precision) << "\n"
       << "recall      " << fmt(r.metrics.recall) << "\n"
       << "f_measure   " << fmt(r.metrics.f_measure) << "\n"
       << "false_rate  " << fmt(r.metrics.fp_rate) << "\n";
    if (r.mean_round_accuracy) os << "mean round accuracy " << fmt(r.mean_round_accuracy) << "\n";
    for (const auto& c : r.per_client) {
        os << "client " << c.client_id << "    accuracy=" << fmt(c.metrics.accuracy)
           << " recall=" << fmt(c.metrics.recall) << " false_rate=" << fmt(c.metrics.fp_rate) << "\n";
    }
}

void train(const CommonFlags& flags, Mode mode) {
    ExperimentConfig cfg = resolve(flags);
    cfg.mode = mode;
    const RunResult run = run_experiment(cfg);
    emit_report(run.report, cfg, cfg.output_dir);
    save_model(run, (fs::path(cfg.output_dir) / "model").string());
    print_summary(run.report, std::cout);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated autoencoder anomaly detection for IIoT network flows"};
    app.require_subcommand(1);

    CommonFlags synth_flags, part_flags, central_flags, fed_flags, eval_flags;
    std::string model_dir, report_dir;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset CSV");
    add_common(synth, synth_flags);
    auto* partition = app.add_subcommand("partition", "Write the Dirichlet client partition of the dataset");
    add_common(partition, part_flags);
    auto* central = app.add_subcommand("train-central", "Train and evaluate the centralized baseline");
    add_common(central, central_flags);
    auto* fed = app.add_subcommand("train-fed", "Run federated training and evaluation");
    add_common(fed, fed_flags);
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a saved model on the configured dataset");
    add_common(evaluate, eval_flags);
    evaluate->add_option("--model", model_dir, "Directory written by train-central/train-fed (model/)")->required();
    auto* report = app.add_subcommand("report", "Print the summary of a report directory");
    report->add_option("--in", report_dir, "Report directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            ExperimentConfig cfg = resolve(synth_flags);
            if (synth_flags.seed) cfg.data.synth.seed = *synth_flags.seed;
            const LabeledDataset ds = synth_generate(cfg.data.synth);
            fs::create_directories(cfg.output_dir);
            const std::string path = (fs::path(cfg.output_dir) / "dataset.csv").string();
            write_dataset_csv(ds, path);
            std::cout << "wrote " << ds.size() << " records to " << path << "\n";
        } else if (partition->parsed()) {
            const ExperimentConfig cfg = resolve(part_flags);
            const LabeledDataset ds = load_dataset(cfg.data);
            const PartitionPlan plan = plan_partition(cfg, ds);
            write_partition(plan, ds.labels, cfg.output_dir);
            for (std::size_t k = 0; k < plan.clients(); ++k) {
                std::cout << "client " << k << ": " << plan.assignments[k].size() << " records\n";
            }
        } else if (central->parsed()) {
            train(central_flags, Mode::Centralized);
        } else if (fed->parsed()) {
            train(fed_flags, Mode::Federated);
        } else if (evaluate->parsed()) {
            const ExperimentConfig cfg = resolve(eval_flags);
            const RunResult model = load_model(model_dir);
            EvaluationReport r =
                evaluate_dataset(model.params, model.scaler, model.report.detector, load_dataset(cfg.data));
            r.seed = cfg.seed;
            r.fingerprint = config_fingerprint(cfg);
            emit_report(r, cfg, cfg.output_dir);
            print_summary(r, std::cout);
        } else if (report->parsed()) {
            print_summary(parse_report(report_dir), std::cout);
        }
    } catch (const fedae::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
