#include <doctest.h>

#include "fedae/autoencoder.hpp"
#include "fedae/errors.hpp"
#include "test_support.hpp"

using namespace fedae;

namespace {

AutoencoderConfig toy(std::uint64_t seed = 7) {
    AutoencoderConfig c;
    c.input_dim = 3;
    c.hidden_dims = {2};
    c.bottleneck_dim = 1;
    c.seed = seed;
    return c;
}

Matrix blob(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> g(0.0, 0.3);
    Matrix m(n, d);
    for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index c = 0; c < d; ++c) m(r, c) = std::tanh(0.2 + g(rng));
    }
    return m;
}

}  // namespace

TEST_CASE("default architecture") {
    const AutoencoderConfig cfg;
    const auto shapes = cfg.layer_shapes();
    REQUIRE(shapes.size() == 8);
    const std::size_t dims[] = {66, 128, 64, 32, 16, 32, 64, 128, 66};
    for (std::size_t i = 0; i < 8; ++i) {
        CHECK(shapes[i].in == dims[i]);
        CHECK(shapes[i].out == dims[i + 1]);
        CHECK(shapes[i].activation == (i == 7 ? Activation::Tanh : Activation::ReLU));
    }
    CHECK(packed_size(shapes) == 38930);

    const auto plan = cfg.dropout_plan();
    REQUIRE(plan.size() == 8);
    const double expected[] = {0.2, 0.2, 0.2, 0.0, 0.2, 0.2, 0.2, 0.0};
    for (std::size_t i = 0; i < 8; ++i) CHECK(plan[i] == expected[i]);

    AutoencoderConfig unmirrored;
    unmirrored.mirror_dropout = false;
    const auto p2 = unmirrored.dropout_plan();
    for (std::size_t i = 4; i < 8; ++i) CHECK(p2[i] == 0.0);
}

TEST_CASE("toy architecture packs to 24") { CHECK(packed_size(toy().layer_shapes()) == 24); }

TEST_CASE("config validation") {
    AutoencoderConfig c;
    c.input_dim = 0;
    CHECK_THROWS_AS(build(c), InvalidArgument);
    c = AutoencoderConfig{};
    c.hidden_dims = {128, 0};
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = AutoencoderConfig{};
    c.dropout = 1.0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);

    TrainConfig t;
    t.epochs = 0;
    CHECK_THROWS_AS(t.validate(), InvalidArgument);
    t = TrainConfig{};
    t.batch_size = 0;
    CHECK_THROWS_AS(t.validate(), InvalidArgument);
}

TEST_CASE("build is deterministic and Glorot bounded") {
    const AutoencoderConfig cfg;
    const ParameterSet a = build(cfg);
    CHECK(a == build(cfg));
    AutoencoderConfig other = cfg;
    other.seed = 1;
    CHECK_FALSE(a == build(other));
    for (std::size_t i = 0; i < a.layer_count(); ++i) {
        const auto& s = a.shapes()[i];
        const double limit = std::sqrt(6.0 / static_cast<double>(s.in + s.out));
        CHECK(a.weights(i).cwiseAbs().maxCoeff() <= limit);
        CHECK(a.bias(i).isZero(0.0));
    }
}

TEST_CASE("encode and decode shapes") {
    const AutoencoderConfig cfg;
    const ParameterSet p = build(cfg);
    Rng rng(1);
    const Vector x = test::random_matrix(66, 1, rng).col(0);
    const Vector y = encode(p, x);
    CHECK(y.size() == 16);
    CHECK(encode(p, x) == y);
    const Vector z = decode(p, y);
    CHECK(z.size() == 66);
    CHECK((z.array().abs() < 1.0).all());
    CHECK(reconstruct(p, x) == z);

    CHECK_THROWS_AS(encode(p, Vector::Zero(65)), ShapeError);
    CHECK_THROWS_AS(decode(p, Vector::Zero(15)), ShapeError);

    const ParameterSet zero(cfg.layer_shapes());
    CHECK(encode(zero, Vector::Zero(66)).isZero(0.0));
    CHECK(decode(zero, Vector::Zero(16)).isZero(0.0));
}

TEST_CASE("reconstruction stays inside the tanh range for wild inputs") {
    Rng rng(8);
    const ParameterSet p = build(toy(3));
    for (int i = 0; i < 100; ++i) {
        const Vector x = test::random_matrix(3, 1, rng, -1e3, 1e3).col(0);
        CHECK((reconstruct(p, x).array().abs() <= 1.0).all());
    }
}

TEST_CASE("reconstruction_errors matches a direct composition oracle") {
    Rng rng(9);
    const ParameterSet p = build(toy());
    const Matrix data = test::random_matrix(10, 3, rng);
    const auto errs = reconstruction_errors(p, data);
    REQUIRE(errs.size() == 10);
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
        Vector h = data.row(r).transpose();
        for (std::size_t i = 0; i < p.layer_count(); ++i) {
            h = p.weights(i) * h + p.bias(i);
            h = p.shapes()[i].activation == Activation::ReLU ? Vector(h.cwiseMax(0.0)) : Vector(h.array().tanh());
        }
        const double oracle = (h - data.row(r).transpose()).squaredNorm() / 3.0;
        CHECK(errs[static_cast<std::size_t>(r)] == doctest::Approx(oracle).epsilon(1e-12));
    }

    // Row permutation permutes the errors.
    Matrix reversed = data.colwise().reverse();
    const auto rev_errs = reconstruction_errors(p, reversed);
    for (std::size_t i = 0; i < errs.size(); ++i) CHECK(rev_errs[i] == errs[errs.size() - 1 - i]);

    CHECK_THROWS_AS(reconstruction_errors(p, Matrix::Zero(2, 4)), ShapeError);
}

TEST_CASE("a zero model reconstructs the zero row exactly") {
    const ParameterSet zero(toy().layer_shapes());
    CHECK(reconstruction_errors(zero, Matrix::Zero(1, 3))[0] == 0.0);
}

TEST_CASE("without dropout, train-time forward equals eval forward") {
    AutoencoderConfig cfg = toy();
    cfg.dropout = 0.0;
    const ParameterSet p = build(cfg);
    Rng rng(12);
    const Matrix data = test::random_matrix(6, 3, rng);
    const auto cache = forward_batch(p, data, LayerMasks(p.layer_count()));
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
        CHECK(cache.output.row(r).transpose() == reconstruct(p, data.row(r).transpose()));
    }
}

TEST_CASE("training descends and is deterministic") {
    AutoencoderConfig cfg;
    cfg.input_dim = 6;
    cfg.hidden_dims = {5};
    cfg.bottleneck_dim = 3;
    cfg.seed = 4;
    TrainConfig tc;
    tc.epochs = 50;
    tc.batch_size = 16;
    tc.schedule = {0.01, 10, 0.9};
    tc.shuffle_seed = 77;
    const Matrix data = blob(200, 6, 5);

    const ParameterSet init = build(cfg);
    auto r1 = train_epochs(cfg, init, data, tc, AdamState::fresh(init.size()));
    auto r2 = train_epochs(cfg, init, data, tc, AdamState::fresh(init.size()));
    REQUIRE(r1.loss_trace.size() == 50);
    CHECK(r1.loss_trace.back() < r1.loss_trace.front());
    CHECK(r1.loss_trace == r2.loss_trace);
    CHECK(r1.params == r2.params);
    // 200 rows in batches of 16 is 13 steps per epoch, the last one partial.
    CHECK(r1.state.step == 50u * 13u);
}

TEST_CASE("training rejects empty data and reports divergence") {
    const AutoencoderConfig cfg = toy();
    const ParameterSet init = build(cfg);
    TrainConfig tc;
    tc.epochs = 1;
    CHECK_THROWS_AS(train_epochs(cfg, init, Matrix(0, 3), tc, AdamState::fresh(init.size())), InvalidArgument);

    Matrix bad = Matrix::Zero(4, 3);
    bad(2, 1) = std::numeric_limits<double>::quiet_NaN();
    try {
        train_epochs(cfg, init, bad, tc, AdamState::fresh(init.size()));
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        CHECK(e.epoch() == 0);
    }
    CHECK_THROWS_AS(train_epochs(cfg, init, Matrix::Zero(4, 2), tc, AdamState::fresh(init.size())), ShapeError);
}
