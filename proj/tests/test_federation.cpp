#include <doctest.h>

#include <cmath>

#include "fedae/errors.hpp"
#include "fedae/federation.hpp"
#include "test_support.hpp"

using namespace fedae;

namespace {

ClientUpdate update(int id, std::vector<double> params, double loss = 1.0, std::size_t n = 1) {
    ClientUpdate u;
    u.client_id = id;
    u.params = std::move(params);
    u.local_loss = loss;
    u.n_samples = n;
    return u;
}

std::vector<ClientUpdate> updates_with_ids(std::initializer_list<int> ids, std::size_t dim, Rng& rng) {
    std::vector<ClientUpdate> out;
    for (int id : ids) {
        std::vector<double> p(dim);
        for (auto& v : p) v = test::uniform(rng, -1, 1);
        out.push_back(update(id, p, test::uniform(rng, 0.1, 2.0)));
    }
    return out;
}

LocalTrainConfig tiny_local() {
    LocalTrainConfig c;
    c.model.input_dim = 4;
    c.model.hidden_dims = {3};
    c.model.bottleneck_dim = 2;
    c.model.seed = 5;
    c.train.epochs = 2;
    c.train.batch_size = 8;
    return c;
}

std::vector<ClientState> tiny_clients(std::size_t k, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<ClientState> out;
    for (std::size_t i = 0; i < k; ++i) {
        out.push_back({static_cast<int>(i), test::random_matrix(20, 4, rng, -0.8, 0.8), rng()});
    }
    return out;
}

double rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
    }
    return worst;
}

}  // namespace

TEST_CASE("sample_clients") {
    const std::vector<int> ids{3, 1, 2, 0};
    Rng rng(1);
    CHECK(sample_clients(ids, 1.0, rng) == std::vector<int>{0, 1, 2, 3});
    const std::vector<int> two{0, 1};
    for (int round = 0; round < 5; ++round) CHECK(sample_clients(two, 1.0, rng) == two);

    Rng a(9), b(9);
    const auto s1 = sample_clients(ids, 0.5, a);
    CHECK(s1 == sample_clients(ids, 0.5, b));
    CHECK(s1.size() == 2);
    CHECK(std::is_sorted(s1.begin(), s1.end()));

    const std::vector<int> ten{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    CHECK(sample_clients(ten, 0.3, rng).size() == 3);
    CHECK(sample_clients(ten, 0.01, rng).size() == 1);

    CHECK_THROWS_AS(sample_clients(std::vector<int>{}, 1.0, rng), InvalidArgument);
    CHECK_THROWS_AS(sample_clients(ids, 0.0, rng), InvalidArgument);
    CHECK_THROWS_AS(sample_clients(ids, 1.5, rng), InvalidArgument);
}

TEST_CASE("fedavg_aggregate") {
    StrategyConfig cfg;
    const std::vector<ClientUpdate> one{update(0, {1.5, -2})};
    CHECK(fedavg_aggregate(one, cfg) == std::vector<double>{1.5, -2});

    const std::vector<ClientUpdate> pair{update(1, {4, 6}), update(0, {2, 4})};
    CHECK(fedavg_aggregate(pair, cfg) == std::vector<double>{3, 5});

    StrategyConfig weighted;
    weighted.weighted_mean = true;
    const std::vector<ClientUpdate> w{update(0, {0}, 1.0, 1), update(1, {4}, 1.0, 3)};
    CHECK(fedavg_aggregate(w, weighted) == std::vector<double>{3});

    weighted.client_weights = {0.5, 0.5};
    CHECK(fedavg_aggregate(w, weighted) == std::vector<double>{2});

    const std::vector<ClientUpdate> bad{update(0, {1, 2}), update(1, {1})};
    CHECK_THROWS_AS(fedavg_aggregate(bad, cfg), ShapeError);
    CHECK_THROWS_AS(fedavg_aggregate(std::vector<ClientUpdate>{}, cfg), InvalidArgument);
}

TEST_CASE("fedavg does not depend on arrival order") {
    Rng rng(4);
    auto ups = updates_with_ids({0, 1, 2, 3, 4}, 50, rng);
    const auto forward = fedavg_aggregate(ups, {});
    std::reverse(ups.begin(), ups.end());
    CHECK(fedavg_aggregate(ups, {}) == forward);
}

TEST_CASE("qffl_deltas") {
    const std::vector<double> g{1.0};
    const auto d0 = qffl_deltas(g, update(0, {0.5}, 3.7), 0.0, 10.0);
    CHECK(d0.delta == std::vector<double>{5.0});
    CHECK(d0.h == 10.0);

    const auto d1 = qffl_deltas(g, update(0, {0.0}, 2.0), 1.0, 1.0);
    CHECK(d1.delta == std::vector<double>{2.0});
    CHECK(d1.h == 3.0);

    const auto same = qffl_deltas(std::vector<double>{1, 2}, update(0, {1, 2}, 4.0), 2.0, 3.0);
    CHECK(same.delta == std::vector<double>{0, 0});
    CHECK(same.h == doctest::Approx(3.0 * 16.0));

    CHECK_THROWS_AS(qffl_deltas(g, update(0, {0.0}, 0.0), 0.5, 1.0), NumericError);
    CHECK_NOTHROW(qffl_deltas(g, update(0, {0.0}, 0.0), 0.0, 1.0));
    CHECK_THROWS_AS(qffl_deltas(g, update(0, {0.0, 1.0}), 0.0, 1.0), ShapeError);
    CHECK_THROWS_AS(qffl_deltas(g, update(0, {0.0}), -1.0, 1.0), InvalidArgument);
    CHECK_THROWS_AS(qffl_deltas(g, update(0, {0.0}), 0.0, 0.0), InvalidArgument);
}

TEST_CASE("qffl_aggregate") {
    const std::vector<double> g{1.0};
    const std::vector<QfflDelta> d{qffl_deltas(g, update(0, {0.5}), 0.0, 10.0)};
    CHECK(qffl_aggregate(g, d) == std::vector<double>{0.5});

    const std::vector<QfflDelta> zero{{0, {0.0, 0.0}, 2.0}, {1, {0.0, 0.0}, 1.0}};
    CHECK(qffl_aggregate(std::vector<double>{3, 4}, zero) == std::vector<double>{3, 4});

    const std::vector<QfflDelta> degenerate{{0, {1.0}, 0.0}};
    CHECK_THROWS_AS(qffl_aggregate(g, degenerate), NumericError);
    CHECK_THROWS_AS(qffl_aggregate(g, std::vector<QfflDelta>{}), InvalidArgument);
}

TEST_CASE("q=0 q-FFL reduces to the plain FedAvg mean") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t dim = test::uniform_int(rng, 1, 40);
        std::vector<double> g(dim);
        for (auto& v : g) v = test::uniform(rng, -2, 2);
        std::vector<ClientUpdate> ups;
        const std::size_t k = test::uniform_int(rng, 1, 6);
        for (std::size_t i = 0; i < k; ++i) {
            std::vector<double> p(dim);
            for (auto& v : p) v = test::uniform(rng, -2, 2);
            ups.push_back(update(static_cast<int>(i), p, test::uniform(rng, 0.0, 3.0)));
        }
        const double lipschitz = test::uniform(rng, 0.1, 1000.0);
        std::vector<QfflDelta> deltas;
        for (const auto& u : ups) deltas.push_back(qffl_deltas(g, u, 0.0, lipschitz));
        CHECK(rel_diff(qffl_aggregate(g, deltas), fedavg_aggregate(ups, {})) <= 1e-9);
    }
}

TEST_CASE("rms and relevance") {
    CHECK(rms(std::vector<double>{3, 4, 0, 0}) == doctest::Approx(2.5));
    CHECK(rms(std::vector<double>{}) == 0.0);

    CHECK(relevance_score(std::vector<double>{}, 0.7) == 1.0);
    CHECK(relevance_score(std::vector<double>{2.0}, 2.0) == doctest::Approx(0.5));
    CHECK(std::abs(relevance_score(std::vector<double>{0.0}, std::log(3.0)) - 0.75) <= 1e-12);
    CHECK(relevance_score(std::vector<double>{1e6, 1e6 + 1}, 1e6) > 0.0);  // no overflow

    const auto half = apply_relevance(0.5, {2, -4});
    CHECK(half == std::vector<double>{1, -2});
    CHECK(apply_relevance(1.0, {2, -4}) == std::vector<double>{2, -4});
    CHECK(apply_relevance(0.5, apply_relevance(0.4, {1.0, 3.0})) == apply_relevance(0.2, {1.0, 3.0}));
    CHECK_THROWS_AS(apply_relevance(0.0, {1.0}), InvalidArgument);
    CHECK_THROWS_AS(apply_relevance(1.5, {1.0}), InvalidArgument);
}

TEST_CASE("fair_round branches") {
    Rng rng(12);
    StrategyConfig cfg;
    cfg.kind = StrategyKind::FairFedAvg;
    cfg.q = 1.0;
    cfg.lipschitz = 10.0;
    ServerState s;
    s.global = std::vector<double>(6, 0.1);

    const auto r4 = fair_round(s, updates_with_ids({0, 1, 2, 3}, 6, rng), cfg, 0.001);
    CHECK(r4.branch == RoundBranch::Stable);
    CHECK(r4.alpha == 1.0);
    CHECK(r4.state.round == 1);
    CHECK(r4.state.prev_participants == 4);
    CHECK(r4.state.gradient_history.size() == 4);
    CHECK(r4.state.hs.size() == 4);

    SUBCASE("same count keeps the plain update") {
        const auto ups = updates_with_ids({0, 1, 2, 3}, 6, rng);
        const auto r = fair_round(r4.state, ups, cfg, 0.001);
        CHECK(r.branch == RoundBranch::Stable);
        CHECK(r.alpha == 1.0);
        std::vector<QfflDelta> d;
        for (const auto& u : ups) d.push_back(qffl_deltas(r4.state.global, u, 1.0, 10.0));
        CHECK(r.state.global == qffl_aggregate(r4.state.global, d));
    }
    SUBCASE("fewer than last round applies relevance") {
        const auto ups = updates_with_ids({0, 1, 3}, 6, rng);
        const auto r = fair_round(r4.state, ups, cfg, 0.001);
        CHECK(r.branch == RoundBranch::Shrunken);
        CHECK(r.alpha > 0.0);
        CHECK(r.alpha < 1.0);
        std::vector<QfflDelta> d;
        for (const auto& u : ups) d.push_back(qffl_deltas(r4.state.global, u, 1.0, 10.0));
        const auto plain = qffl_aggregate(r4.state.global, d);

        std::vector<double> window;
        for (const auto& e : r4.state.gradient_history) window.push_back(e.summary);
        const double alpha = relevance_score(window, rms(plain));
        CHECK(r.alpha == alpha);
        CHECK(r.state.global == apply_relevance(alpha, plain));
        CHECK(r.state.prev_participants == 3);
    }
    SUBCASE("a single arrival carries the model forward") {
        const auto r = fair_round(r4.state, updates_with_ids({2}, 6, rng), cfg, 0.001);
        CHECK(r.branch == RoundBranch::CarryForward);
        CHECK(r.state.global == r4.state.global);
        CHECK(r.state.round == 2);
        CHECK(r.state.prev_participants == 1);
    }
    SUBCASE("no arrivals carry the model forward") {
        const auto r = fair_round(r4.state, std::vector<ClientUpdate>{}, cfg, 0.001);
        CHECK(r.branch == RoundBranch::CarryForward);
        CHECK(r.state.global == r4.state.global);
    }
    SUBCASE("growing participation is stable") {
        const auto r3 = fair_round(s, updates_with_ids({0, 1, 2}, 6, rng), cfg, 0.001);
        const auto r = fair_round(r3.state, updates_with_ids({0, 1, 2, 3}, 6, rng), cfg, 0.001);
        CHECK(r.branch == RoundBranch::Stable);
    }
}

TEST_CASE("gradient history stays bounded") {
    Rng rng(3);
    StrategyConfig cfg;
    ServerState s;
    s.global = std::vector<double>(3, 0.0);
    s.gh_capacity = 5;
    for (int round = 0; round < 6; ++round) s = fair_round(s, updates_with_ids({0, 1, 2}, 3, rng), cfg, 0.01).state;
    CHECK(s.gradient_history.size() == 5);
    CHECK(s.gradient_history.back().round == 6);
}

TEST_CASE("strategies") {
    CHECK(parse_strategy_kind("qffl") == StrategyKind::QFFL);
    CHECK_FALSE(parse_strategy_kind("fedprox").has_value());
    CHECK(to_string(StrategyKind::FairFedAvg) == "fairfedavg");

    Rng rng(2);
    ServerState s;
    s.global = {0.0, 0.0};
    const auto ups = updates_with_ids({1, 0}, 2, rng);
    StrategyConfig cfg;
    CHECK(make_strategy(cfg, 0.001)->aggregate(s, ups).state.global == fedavg_aggregate(ups, cfg));
    const auto empty = make_strategy(cfg, 0.001)->aggregate(s, std::vector<ClientUpdate>{});
    CHECK(empty.branch == RoundBranch::CarryForward);
    CHECK(empty.state.global == s.global);

    cfg.kind = StrategyKind::QFFL;
    cfg.q = 0.0;
    CHECK(rel_diff(make_strategy(cfg, 0.001)->aggregate(s, ups).state.global, fedavg_aggregate(ups, {})) <= 1e-9);

    StrategyConfig bad;
    bad.q = -1;
    CHECK_THROWS_AS(make_strategy(bad, 0.001), InvalidArgument);
    bad = {};
    bad.sample_fraction = 0.0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = {};
    bad.client_weights = {0.5, 0.6};
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = {};
    bad.lipschitz = 0.0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("latencies") {
    LatencyModel m;
    const std::vector<int> ids{0, 1, 2};
    CHECK(assign_latencies(m, ids, 1, 5).active == ids);

    m.delays = {{0, 3.0}, {1, 1.0}, {2, 2.0}};
    m.drop_after = 2.5;
    const auto s = assign_latencies(m, ids, 1, 5);
    CHECK(s.active == std::vector<int>{1, 2});
    REQUIRE(s.arrivals.size() == 3);
    CHECK(s.arrivals[0].client_id == 1);
    CHECK(s.arrivals[2].client_id == 0);
    CHECK_FALSE(s.arrivals[2].on_time);

    m.overrides = {{2, 0, 0.5}};
    CHECK(assign_latencies(m, ids, 2, 5).active == ids);
    CHECK(assign_latencies(m, ids, 3, 5).active == std::vector<int>{1, 2});

    m.jitter = 1.0;
    const auto j1 = assign_latencies(m, ids, 4, 99);
    const auto j2 = assign_latencies(m, ids, 4, 99);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(j1.arrivals[i].client_id == j2.arrivals[i].client_id);
        CHECK(j1.arrivals[i].time == j2.arrivals[i].time);
    }

    LatencyModel neg;
    neg.delays[0] = -1.0;
    CHECK_THROWS_AS(neg.validate(), InvalidArgument);
}

TEST_CASE("local_round") {
    const auto clients = tiny_clients(2, 8);
    const auto cfg = tiny_local();
    const auto global = pack(build(cfg.model));
    const auto u = local_round(clients[0], global, 1, cfg);
    CHECK(u.client_id == 0);
    CHECK(u.round == 1);
    CHECK(u.params.size() == global.size());
    CHECK(u.loss_trace.size() == 2);
    CHECK(u.local_loss == u.loss_trace.back());
    CHECK(u.n_samples == 20);
    CHECK(u.local_threshold == compute_threshold(reconstruction_errors(unpack(u.params, cfg.model.layer_shapes()),
                                                                       clients[0].train)));

    ClientState twin = clients[0];
    twin.id = 0;
    const auto again = local_round(twin, global, 1, cfg);
    CHECK(again.params == u.params);
    CHECK(local_round(clients[0], global, 2, cfg).params != u.params);

    ClientState empty{3, Matrix(0, 4), 1};
    try {
        local_round(empty, global, 4, cfg);
        FAIL("expected ClientError");
    } catch (const ClientError& e) {
        CHECK(e.client_id() == 3);
        CHECK(e.round() == 4);
    }
    auto zero_epochs = cfg;
    zero_epochs.train.epochs = 0;
    CHECK_THROWS_AS(local_round(clients[0], global, 1, zero_epochs), ClientError);
}

TEST_CASE("run_rounds") {
    FederationSettings s;
    s.local = tiny_local();
    s.federation.rounds = 3;
    s.federation.epochs_per_round = 2;
    s.master_seed = 11;
    const auto clients = tiny_clients(3, 21);
    const auto init = pack(build(s.local.model));

    const auto run = run_rounds(s, clients, init);
    REQUIRE(run.rounds.size() == 3);
    CHECK(run.server.round == 3);
    for (const auto& r : run.rounds) {
        CHECK(r.active == std::vector<int>{0, 1, 2});
        CHECK(r.updates.size() == 3);
        CHECK(r.global_norm > 0.0);
        for (const auto& u : r.updates) CHECK(u.loss_trace.size() == 2);
    }
    CHECK(run.server.global.size() == init.size());

    auto serial = s;
    serial.federation.parallel = false;
    CHECK(run_rounds(serial, clients, init).server.global == run.server.global);

    auto zero = s;
    zero.federation.rounds = 0;
    CHECK_THROWS_AS(run_rounds(zero, clients, init), InvalidArgument);
    CHECK_THROWS_AS(run_rounds(s, clients, std::vector<double>(3)), ShapeError);
}

TEST_CASE("run_rounds: stragglers and carry-forward under FedAvg") {
    FederationSettings s;
    s.local = tiny_local();
    s.federation.rounds = 2;
    s.federation.epochs_per_round = 1;
    s.latency.delays = {{0, 0.0}, {1, 5.0}};
    s.latency.drop_after = 1.0;
    s.latency.overrides = {{2, 0, 5.0}};
    const auto clients = tiny_clients(2, 2);
    const auto init = pack(build(s.local.model));
    const auto run = run_rounds(s, clients, init);
    CHECK(run.rounds[0].active == std::vector<int>{0});
    CHECK(run.rounds[0].updates.size() == 2);
    CHECK(run.rounds[0].branch == RoundBranch::Stable);
    CHECK(run.rounds[1].active.empty());
    CHECK(run.rounds[1].branch == RoundBranch::CarryForward);
    // Round 1 keeps client 0's update alone; round 2 carries it forward.
    CHECK(run.server.global == run.rounds[0].updates[0].params);
}

TEST_CASE("run_federated evaluates each round and uses the least threshold") {
    FederatedExperiment exp;
    exp.settings.local = tiny_local();
    exp.settings.federation.rounds = 3;
    exp.settings.federation.epochs_per_round = 2;
    exp.settings.master_seed = 5;
    Rng rng(40);
    for (int id = 0; id < 2; ++id) {
        ClientData c;
        c.id = id;
        c.train.features = test::random_matrix(30, 4, rng, -0.5, 0.5);
        c.train.labels.assign(30, Label::Normal);
        c.train.categories.assign(30, "");
        c.validation.features = test::random_matrix(8, 4, rng, -0.5, 0.5);
        c.validation.labels.assign(8, Label::Normal);
        c.validation.categories.assign(8, "");
        c.test_attacks.features = test::random_matrix(8, 4, rng, -1, 1).array().sign();
        c.test_attacks.labels.assign(8, Label::Attack);
        c.test_attacks.categories.assign(8, "dos");
        exp.clients.push_back(c);
    }
    const auto out = run_federated(exp);
    CHECK(out.round_evaluations.size() == 3);
    CHECK(out.per_client.size() == 2);
    CHECK(out.pooled_confusion.total() == 32);
    CHECK(out.detector.source == ThresholdDetector::Source::RoundMin);
    std::vector<double> all;
    for (const auto& r : out.run.rounds) {
        for (const auto& u : r.updates) all.push_back(u.local_threshold);
    }
    CHECK(out.detector.threshold == *std::min_element(all.begin(), all.end()));
    CHECK(out.detector.round_thresholds == all);
    // Running minimum is non-increasing over rounds.
    for (std::size_t i = 1; i < out.round_evaluations.size(); ++i) {
        CHECK(out.round_evaluations[i].threshold <= out.round_evaluations[i - 1].threshold);
    }
    REQUIRE(out.mean_round_accuracy.has_value());
    double sum = 0.0;
    for (const auto& e : out.round_evaluations) sum += *e.pooled.accuracy;
    CHECK(*out.mean_round_accuracy == doctest::Approx(sum / 3.0));

    const auto again = run_federated(exp);
    CHECK(again.final_params == out.final_params);
    CHECK(again.pooled_confusion == out.pooled_confusion);
}
