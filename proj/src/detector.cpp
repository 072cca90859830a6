#include "fedae/detector.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedae/errors.hpp"

namespace fedae {

double compute_threshold(std::span<const double> errors, StdKind kind) {
    if (errors.empty()) throw InvalidArgument("threshold requires at least one error value");
    double sum = 0.0;
    for (std::size_t i = 0; i < errors.size(); ++i) {
        if (!std::isfinite(errors[i])) throw NumericError("non-finite reconstruction error at index " + std::to_string(i));
        sum += errors[i];
    }
    const auto n = static_cast<double>(errors.size());
    const double mean = sum / n;
    double ss = 0.0;
    for (double e : errors) ss += (e - mean) * (e - mean);
    double denom = n;
    if (kind == StdKind::Sample) {
        if (errors.size() < 2) throw InvalidArgument("sample std requires at least two errors");
        denom = n - 1.0;
    }
    return mean + std::sqrt(ss / denom);
}

ThresholdDetector ThresholdDetector::centralized(double threshold) {
    if (!(threshold >= 0.0) || !std::isfinite(threshold)) throw InvalidArgument("threshold must be finite and >= 0");
    return {threshold, Source::Centralized, {}};
}

ThresholdDetector min_round_threshold(std::span<const double> per_round) {
    if (per_round.empty()) throw InvalidArgument("min_round_threshold requires at least one round");
    const double m = *std::min_element(per_round.begin(), per_round.end());
    return {m, ThresholdDetector::Source::RoundMin, {per_round.begin(), per_round.end()}};
}

std::vector<Label> classify(const ThresholdDetector& detector, std::span<const double> errors) {
    std::vector<Label> out;
    out.reserve(errors.size());
    for (double e : errors) out.push_back(e > detector.threshold ? Label::Attack : Label::Normal);
    return out;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
}

ConfusionMatrix confusion(std::span<const Label> predicted, std::span<const Label> truth) {
    if (predicted.size() != truth.size()) throw ShapeError::mismatch("confusion labels", truth.size(), predicted.size());
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const bool pred_attack = predicted[i] == Label::Attack;
        const bool true_attack = truth[i] == Label::Attack;
        if (pred_attack && true_attack) ++cm.tp;
        else if (pred_attack) ++cm.fp;
        else if (true_attack) ++cm.fn;
        else ++cm.tn;
    }
    return cm;
}

namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricsReport metrics(const ConfusionMatrix& cm) {
    MetricsReport r;
    r.accuracy = ratio(cm.tp + cm.tn, cm.total());
    r.precision = ratio(cm.tp, cm.tp + cm.fp);
    r.recall = ratio(cm.tp, cm.tp + cm.fn);
    r.fp_rate = ratio(cm.fp, cm.fp + cm.tn);
    if (r.precision && r.recall && (*r.precision + *r.recall) > 0.0) {
        r.f_measure = 2.0 * *r.precision * *r.recall / (*r.precision + *r.recall);
    }
    return r;
}

}  // namespace fedae
