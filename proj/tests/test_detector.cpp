#include <doctest.h>

#include <cmath>
#include <limits>

#include "fedae/detector.hpp"
#include "fedae/errors.hpp"
#include "test_support.hpp"

using namespace fedae;

namespace {

constexpr Label A = Label::Attack;
constexpr Label N = Label::Normal;

double mean_plus_pop_std(const std::vector<double>& v) {
    long double sum = 0;
    for (double x : v) sum += x;
    const long double m = sum / v.size();
    long double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return static_cast<double>(m + std::sqrt(ss / v.size()));
}

}  // namespace

TEST_CASE("compute_threshold examples") {
    CHECK(compute_threshold(std::vector<double>{5, 5, 5}) == 5.0);
    CHECK(std::abs(compute_threshold(std::vector<double>{1, 2, 3}) - (2.0 + std::sqrt(2.0 / 3.0))) <= 1e-12);
    CHECK(compute_threshold(std::vector<double>{0}) == 0.0);
    CHECK(std::abs(compute_threshold(std::vector<double>{1, 2, 3}, StdKind::Sample) - 3.0) <= 1e-12);
}

TEST_CASE("compute_threshold errors") {
    CHECK_THROWS_AS(compute_threshold(std::vector<double>{}), InvalidArgument);
    CHECK_THROWS_AS(compute_threshold(std::vector<double>{1.0, std::numeric_limits<double>::infinity()}), NumericError);
    CHECK_THROWS_AS(compute_threshold(std::vector<double>{std::nan("")}), NumericError);
}

TEST_CASE("compute_threshold is translation and scale covariant") {
    Rng rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> e(test::uniform_int(rng, 1, 40));
        for (auto& v : e) v = test::uniform(rng, 0.0, 2.0);
        const double base = compute_threshold(e);
        CHECK(base == doctest::Approx(mean_plus_pop_std(e)).epsilon(1e-12));

        const double c = test::uniform(rng, -5.0, 5.0);
        auto shifted = e;
        for (auto& v : shifted) v += c;
        CHECK(compute_threshold(shifted) == doctest::Approx(base + c).epsilon(1e-9));

        const double s = test::uniform(rng, 0.01, 10.0);
        auto scaled = e;
        for (auto& v : scaled) v *= s;
        CHECK(compute_threshold(scaled) == doctest::Approx(base * s).epsilon(1e-9));
    }
}

TEST_CASE("min_round_threshold") {
    const auto d = min_round_threshold(std::vector<double>{0.9, 0.5, 0.7});
    CHECK(d.threshold == 0.5);
    CHECK(d.source == ThresholdDetector::Source::RoundMin);
    CHECK(d.round_thresholds == std::vector<double>{0.9, 0.5, 0.7});
    CHECK(min_round_threshold(std::vector<double>{0.3}).threshold == 0.3);
    CHECK(min_round_threshold(std::vector<double>{0.4, 0.4}).threshold == 0.4);
    CHECK_THROWS_AS(min_round_threshold(std::vector<double>{}), InvalidArgument);
}

TEST_CASE("classify") {
    const auto d = ThresholdDetector::centralized(2.8165);
    CHECK(classify(d, std::vector<double>{0.1, 3.0}) == std::vector<Label>{N, A});
    CHECK(classify(d, std::vector<double>{2.8165}) == std::vector<Label>{N});
    CHECK(classify(d, std::vector<double>{}).empty());
}

TEST_CASE("classify is monotone in the threshold") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> e(20);
        for (auto& v : e) v = test::uniform(rng, 0.0, 1.0);
        const double lo = test::uniform(rng, 0.0, 1.0);
        const double hi = lo + test::uniform(rng, 0.0, 0.5);
        const auto a = classify(ThresholdDetector::centralized(lo), e);
        const auto b = classify(ThresholdDetector::centralized(hi), e);
        for (std::size_t i = 0; i < e.size(); ++i) {
            if (a[i] == N) CHECK(b[i] == N);
        }
    }
}

TEST_CASE("confusion") {
    const std::vector<Label> all_attack(4, A);
    const auto c1 = confusion(all_attack, all_attack);
    CHECK(c1 == ConfusionMatrix{4, 0, 0, 0});

    const auto c2 = confusion(std::vector<Label>{A, A, N, N, N, A}, std::vector<Label>{A, A, N, N, N, N});
    CHECK(c2 == ConfusionMatrix{2, 1, 3, 0});

    const std::vector<Label> truth{A, N, N, A};
    const std::vector<Label> flipped{N, A, A, N};
    const auto c3 = confusion(flipped, truth);
    CHECK(c3.tp == 0);
    CHECK(c3.tn == 0);

    CHECK_THROWS_AS(confusion(std::vector<Label>{A}, std::vector<Label>{A, N}), ShapeError);
}

TEST_CASE("confusion counts sum to the sample count") {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = test::uniform_int(rng, 0, 30);
        std::vector<Label> p(n), t(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = rng() % 2 ? A : N;
            t[i] = rng() % 2 ? A : N;
        }
        CHECK(confusion(p, t).total() == n);
    }
}

TEST_CASE("metrics on the hand matrix") {
    const auto m = metrics({2, 1, 3, 0});
    CHECK(std::abs(*m.accuracy - 5.0 / 6.0) <= 1e-12);
    CHECK(std::abs(*m.precision - 2.0 / 3.0) <= 1e-12);
    CHECK(std::abs(*m.recall - 1.0) <= 1e-12);
    CHECK(std::abs(*m.f_measure - 0.8) <= 1e-12);
    CHECK(std::abs(*m.fp_rate - 0.25) <= 1e-12);
}

TEST_CASE("metrics edge cases") {
    const auto perfect = metrics({5, 0, 5, 0});
    CHECK(*perfect.accuracy == 1.0);
    CHECK(*perfect.precision == 1.0);
    CHECK(*perfect.recall == 1.0);
    CHECK(*perfect.f_measure == 1.0);
    CHECK(*perfect.fp_rate == 0.0);

    const auto no_positive_predictions = metrics({0, 0, 4, 2});
    CHECK_FALSE(no_positive_predictions.precision.has_value());
    CHECK_FALSE(no_positive_predictions.f_measure.has_value());
    CHECK(*no_positive_predictions.recall == 0.0);

    const auto only_normals = metrics({0, 1, 3, 0});
    CHECK_FALSE(only_normals.recall.has_value());
    CHECK(*only_normals.fp_rate == 0.25);

    const auto empty = metrics({});
    CHECK_FALSE(empty.accuracy.has_value());
}

TEST_CASE("defined metrics lie in [0,1] and F is bounded by max(P, R)") {
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        ConfusionMatrix cm{test::uniform_int(rng, 0, 20), test::uniform_int(rng, 0, 20), test::uniform_int(rng, 0, 20),
                           test::uniform_int(rng, 0, 20)};
        const auto m = metrics(cm);
        for (const auto& v : {m.accuracy, m.precision, m.recall, m.f_measure, m.fp_rate}) {
            if (v) {
                CHECK(*v >= 0.0);
                CHECK(*v <= 1.0);
            }
        }
        if (m.f_measure) CHECK(*m.f_measure <= std::max(*m.precision, *m.recall) + 1e-15);
        if (m.accuracy) {
            CHECK(*m.accuracy == doctest::Approx(double(cm.tp + cm.tn) / double(cm.total())).epsilon(1e-12));
        }
    }
}
