#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "fedae/label.hpp"

namespace fedae {

enum class StdKind { Population, Sample };

/// mean(errors) + std(errors). Population std unless asked otherwise.
double compute_threshold(std::span<const double> errors, StdKind kind = StdKind::Population);

struct ThresholdDetector {
    enum class Source { Centralized, RoundMin };

    double threshold = 0.0;
    Source source = Source::Centralized;
    std::vector<double> round_thresholds;  // populated for RoundMin

    static ThresholdDetector centralized(double threshold);
};

/// Detector using the smallest of the per-round thresholds.
ThresholdDetector min_round_threshold(std::span<const double> per_round);

/// Attack iff error > threshold.
std::vector<Label> classify(const ThresholdDetector& detector, std::span<const double> errors);

struct ConfusionMatrix {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;

    std::size_t total() const { return tp + fp + tn + fn; }
    ConfusionMatrix& operator+=(const ConfusionMatrix& o);
    bool operator==(const ConfusionMatrix&) const = default;
};

/// Attack is the positive class.
ConfusionMatrix confusion(std::span<const Label> predicted, std::span<const Label> truth);

// nullopt marks a metric whose denominator is zero.
struct MetricsReport {
    std::optional<double> accuracy;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f_measure;
    std::optional<double> fp_rate;

    bool operator==(const MetricsReport&) const = default;
};

MetricsReport metrics(const ConfusionMatrix& cm);

}  // namespace fedae
