#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kgcal/errors.hpp"
#include "kgcal/metrics.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace kgcal;

TEST_CASE("Brier score examples")
{
    CHECK(brier_score(std::vector<double>{0.5, 0.5, 0.5, 0.5}, {true, false, true, false}) == 0.25);
    CHECK(brier_score(std::vector<double>{1.0, 0.0}, {true, false}) == 0.0);
    CHECK(brier_score(std::vector<double>{0.8, 0.3}, {true, false}) == doctest::Approx(0.065).epsilon(1e-12));
    CHECK_THROWS_AS(brier_score(std::vector<double>{0.5}, {true, false}), ContractError);
    CHECK_THROWS_AS(brier_score(std::vector<double>{}, {}), ContractError);
    CHECK_THROWS_AS(brier_score(std::vector<double>{1.5}, {true}), ContractError);
}

TEST_CASE("log loss examples")
{
    CHECK(log_loss(std::vector<double>{0.5, 0.5}, {true, false}) == doctest::Approx(std::log(2.0)));
    const double perfect = log_loss(std::vector<double>{1.0, 0.0}, {true, false});
    CHECK(perfect == doctest::Approx(-std::log1p(-1e-15)).epsilon(1e-6));
    CHECK(perfect >= 0.0);
    CHECK(perfect < 1e-14);
    CHECK(log_loss(std::vector<double>{0.9}, {false}) == doctest::Approx(2.302585093).epsilon(1e-9));
    // Clipping keeps a confidently wrong prediction finite.
    CHECK(log_loss(std::vector<double>{0.0}, {true}) == doctest::Approx(-std::log(1e-15)));
    CHECK_THROWS_AS(log_loss(std::vector<double>{0.5}, {true, true}), ContractError);
}

TEST_CASE("metrics are permutation invariant")
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> p(500);
    std::vector<bool> y(500);
    for (std::size_t i = 0; i < 500; ++i) {
        p[i] = u(rng);
        y[i] = u(rng) < p[i];
    }
    std::vector<std::size_t> perm(500);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> p2;
    std::vector<bool> y2;
    for (auto i : perm) {
        p2.push_back(p[i]);
        y2.push_back(y[i]);
    }
    CHECK(brier_score(p2, y2) == doctest::Approx(brier_score(p, y)).epsilon(1e-13));
    CHECK(log_loss(p2, y2) == doctest::Approx(log_loss(p, y)).epsilon(1e-13));
}

TEST_CASE("reliability diagram: single occupied bin")
{
    std::vector<double> p;
    std::vector<bool> y;
    for (int i = 0; i < 10; ++i) {
        p.push_back(0.01 * i);
        y.push_back(i < 3);
    }
    const auto d = reliability_bins(p, y, 10);
    REQUIRE(d.bins.size() == 10);
    CHECK(d.bins[0].count == 10);
    CHECK(d.bins[0].frequency == doctest::Approx(0.3));
    CHECK(d.bins[0].mean_predicted == doctest::Approx(0.045));
    for (std::size_t b = 1; b < 10; ++b) CHECK(d.bins[b].count == 0);
    CHECK(d.bins[9].bin_high == 1.0);
}

TEST_CASE("reliability diagram of a calibrated sample has small gaps")
{
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> p(100000);
    std::vector<bool> y(100000);
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = u(rng);
        y[i] = u(rng) < p[i];
    }
    const auto d = reliability_bins(p, y, 10);
    CHECK(d.total_count() == 100000);
    CHECK(d.max_gap(100) < 0.02);
}

TEST_CASE("reliability bins partition the sample, edges included")
{
    const std::vector<double> p{0.0, 0.1, 0.2, 0.5, 0.999, 1.0, 1.0};
    const auto d = reliability_bins(p, std::vector<bool>(7, true), 5);
    CHECK(d.total_count() == 7);
    CHECK(d.bins[0].count == 2);
    CHECK(d.bins[1].count == 1);
    CHECK(d.bins[2].count == 1);
    CHECK(d.bins[4].count == 3);
    CHECK_THROWS_AS(reliability_bins(p, std::vector<bool>(7, true), 1), ContractError);
}

TEST_CASE("ranking toy cases")
{
    // DistMult with k = 1: entity 0 = 2, entity 1 = -1, relation = 1. (0, 0, 0) scores 4.
    EmbeddingModel m(ModelKind::distmult(), 1, 2, 1);
    m.entity(0)[0] = 2.0;
    m.entity(1)[0] = -1.0;
    m.relation(0)[0] = 1.0;
    const std::vector<Triple> pos{{0, 0, 0}};
    const auto r = ranked_eval(m, pos, nullptr);
    CHECK(r.mrr == 1.0);
    CHECK(r.mr == 1.0);
    CHECK(r.hits.at(1) == 1.0);

    const EmbeddingModel zero(ModelKind::distmult(), 3, 7, 2);
    const std::vector<Triple> q{{0, 0, 1}, {3, 1, 6}};
    const auto rz = ranked_eval(zero, q, nullptr);
    CHECK(rz.mr == 7.0);
    const auto ro = ranked_eval(zero, q, nullptr, {1, 3, 10}, TiePolicy::Optimistic);
    CHECK(ro.mr == 1.0);

    CHECK_THROWS_AS(ranked_eval(zero, std::vector<Triple>{}, nullptr), ContractError);
}

TEST_CASE("ranking matches a brute-force reference")
{
    for (const auto& kind : {ModelKind::transe(1), ModelKind::distmult(), ModelKind::complex(), ModelKind::hole()}) {
        const auto model = oracle::random_model(kind, 6, 30, 5, 31);
        std::mt19937_64 rng(2);
        std::vector<Triple> known, test;
        while (known.size() < 200) {
            const Triple t{EntityId(rng() % 30), RelationId(rng() % 5), EntityId(rng() % 30)};
            if (std::find(known.begin(), known.end(), t) == known.end()) known.push_back(t);
        }
        test.assign(known.begin(), known.begin() + 40);
        FilterIndex filter;
        for (const auto& t : known) filter.insert(t);
        const std::vector<std::size_t> hits{1, 3, 10};

        for (bool filtered : {false, true}) {
            const auto got = ranked_eval(model, test, filtered ? &filter : nullptr, hits);
            const auto ref = oracle::brute_force_ranks(model, test, filtered ? &known : nullptr, hits);
            CHECK(got.mr == doctest::Approx(ref.mr).epsilon(1e-14));
            CHECK(got.mrr == doctest::Approx(ref.mrr).epsilon(1e-14));
            for (auto n : hits) CHECK(got.hits.at(n) == ref.hits.at(n));
            CHECK(got.num_queries == 80);
        }
        for (const auto& t : test) {
            const auto raw = rank_triple(model, t, nullptr);
            const auto fil = rank_triple(model, t, &filter);
            CHECK(fil.subject_rank <= raw.subject_rank);
            CHECK(fil.object_rank <= raw.object_rank);
        }
    }
}

TEST_CASE("rank report invariants")
{
    const auto model = oracle::random_model(ModelKind::transe(), 4, 25, 3, 5);
    std::vector<Triple> test;
    for (EntityId i = 0; i < 20; ++i) test.push_back({i, i % 3, (i * 7) % 25});
    const auto r = ranked_eval(model, test, nullptr, {1, 3, 10, 50});
    CHECK(r.mr >= 1.0);
    CHECK(r.mrr > 0.0);
    CHECK(r.mrr <= 1.0);
    CHECK(r.hits.at(1) <= r.hits.at(3));
    CHECK(r.hits.at(3) <= r.hits.at(10));
    CHECK(r.hits.at(50) == 1.0);
}

TEST_CASE("threshold on separable scores")
{
    const std::vector<double> s{-3, -2, -1, 1, 2};
    const auto c = best_threshold(s, {false, false, false, true, true});
    CHECK(c.accuracy == 1.0);
    CHECK(c.tau == 0.0);
    // All-positive: -inf classifies everything as positive.
    const auto all = best_threshold(s, std::vector<bool>(5, true));
    CHECK(all.tau == -INFINITY);
}

TEST_CASE("threshold accuracy equals an exhaustive scan")
{
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0, 1);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t len = 1 + rng() % 40;
        std::vector<double> s(len);
        std::vector<bool> y(len);
        for (std::size_t i = 0; i < len; ++i) {
            y[i] = rng() % 2 == 0;
            s[i] = std::round((n(rng) + (y[i] ? 0.7 : 0.0)) * 4.0) / 4.0;
        }
        CHECK(best_threshold(s, y).accuracy == doctest::Approx(oracle::brute_force_threshold_accuracy(s, y)));
    }
}

TEST_CASE("learned thresholds are invariant under monotone maps and beat any global threshold")
{
    std::mt19937_64 rng(12);
    std::normal_distribution<double> n(0, 1);
    const std::size_t len = 400;
    std::vector<double> s(len), mapped(len);
    std::vector<bool> y(len);
    std::vector<RelationId> rel(len);
    for (std::size_t i = 0; i < len; ++i) {
        rel[i] = RelationId(rng() % 4);
        y[i] = rng() % 2 == 0;
        s[i] = n(rng) + (y[i] ? 0.5 + rel[i] : -double(rel[i]));
        mapped[i] = std::exp(0.5 * s[i]) + 3.0;
    }
    const auto table = learn_thresholds(s, y, rel);
    CHECK(table.per_relation.size() == 4);
    const auto table2 = learn_thresholds(mapped, y, rel);
    const auto a = classify(s, table, rel, y);
    const auto b = classify(mapped, table2, rel, y);
    CHECK(a.predictions == b.predictions);
    CHECK(a.fallback_count == 0);
    CHECK(a.accuracy >= oracle::brute_force_threshold_accuracy(s, y));
}

TEST_CASE("classification with a single threshold and with fallbacks")
{
    const std::vector<double> p{0.9, 0.8, 0.2, 0.1};
    const std::vector<bool> y{true, true, false, false};
    CHECK(classify(p, 0.5, {}, y).accuracy == 1.0);

    // Probabilities squeezed below one half: every prediction is negative.
    const std::vector<double> low{0.3, 0.2, 0.4, 0.1, 0.05, 0.45, 0.35, 0.25, 0.15, 0.01};
    std::vector<bool> y3(10, false);
    y3[0] = y3[1] = y3[2] = true;
    CHECK(classify(low, 0.5, {}, y3).accuracy == doctest::Approx(0.7));

    ThresholdTable table;
    table.per_relation[0] = 0.5;
    table.global = 0.0;
    const std::vector<RelationId> rel{0, 0, 1, 1};
    const auto r = classify(p, table, rel, y);
    CHECK(r.fallback_count == 2);
    CHECK(r.accuracy == 0.5);
    CHECK(parse_tie_policy(to_string(TiePolicy::Optimistic)) == TiePolicy::Optimistic);
}
