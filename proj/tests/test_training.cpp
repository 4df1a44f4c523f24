#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kgcal/errors.hpp"
#include "kgcal/planted.hpp"
#include "kgcal/rng.hpp"
#include "kgcal/training.hpp"
#include "oracles.hpp"

#include <cmath>
#include <random>

using namespace kgcal;

namespace {

std::vector<Triple> chain(std::size_t n)
{
    std::vector<Triple> out;
    for (EntityId i = 0; i + 1 < n; ++i) out.push_back({i, 0, i + 1});
    return out;
}

KnowledgeGraph graph_with(std::size_t entities, std::size_t relations, std::vector<Triple> triples)
{
    KnowledgeGraph g;
    for (std::size_t e = 0; e < entities; ++e) g.vocab.entities.intern("e" + std::to_string(e));
    for (std::size_t r = 0; r < relations; ++r) g.vocab.relations.intern("r" + std::to_string(r));
    g.triples = std::move(triples);
    return g;
}

} // namespace

TEST_CASE("corruption counts and the forced outcome")
{
    const auto positives = chain(6);
    REQUIRE(positives.size() == 5);
    const auto batch = sample_corruptions(positives, 20, 50, 1);
    CHECK(batch.negatives.size() == 100);
    CHECK(batch.corrupted_side.size() == 100);

    const std::vector<Triple> one{{0, 0, 1}};
    const auto forced = sample_corruptions(one, 200, 2, 9);
    for (std::size_t i = 0; i < forced.negatives.size(); ++i) {
        if (forced.corrupted_side[i] == CorruptedSide::Object) {
            CHECK(forced.negatives[i] == Triple{0, 0, 0});
        } else {
            CHECK(forced.negatives[i] == Triple{1, 0, 1});
        }
    }
    CHECK_THROWS_AS(sample_corruptions(one, 1, 1, 0), SamplingError);
}

TEST_CASE("corruptions change exactly the flagged slot")
{
    std::mt19937_64 rng(4);
    std::vector<Triple> positives;
    for (int i = 0; i < 200; ++i) positives.push_back({EntityId(rng() % 30), RelationId(rng() % 3), EntityId(rng() % 30)});
    for (auto mode : {CorruptionMode::UniformEntities, CorruptionMode::PerBatchEntities}) {
        const auto batch = sample_corruptions(positives, 7, 30, 12, mode);
        for (std::size_t i = 0; i < batch.negatives.size(); ++i) {
            const Triple& src = positives[i / 7];
            const Triple& neg = batch.negatives[i];
            REQUIRE(neg.predicate == src.predicate);
            if (batch.corrupted_side[i] == CorruptedSide::Subject) {
                REQUIRE(neg.object == src.object);
                REQUIRE(neg.subject != src.subject);
            } else {
                REQUIRE(neg.subject == src.subject);
                REQUIRE(neg.object != src.object);
            }
            REQUIRE(neg.subject < 30);
            REQUIRE(neg.object < 30);
        }
    }
}

TEST_CASE("subject side is chosen half of the time")
{
    const auto batch = sample_corruptions(chain(101), 1000, 1000, 77);
    REQUIRE(batch.negatives.size() == 100000);
    std::size_t subject = 0;
    for (auto side : batch.corrupted_side) subject += side == CorruptedSide::Subject ? 1 : 0;
    const double fraction = double(subject) / 1e5;
    CHECK(fraction > 0.49);
    CHECK(fraction < 0.51);
}

TEST_CASE("sampling is deterministic per seed")
{
    const auto a = sample_corruptions(chain(10), 5, 40, 3);
    const auto b = sample_corruptions(chain(10), 5, 40, 3);
    const auto c = sample_corruptions(chain(10), 5, 40, 4);
    CHECK(a.negatives == b.negatives);
    CHECK(a.negatives != c.negatives);
}

TEST_CASE("per-batch mode draws replacements from the batch")
{
    const std::vector<Triple> positives{{3, 0, 7}, {7, 0, 11}};
    const auto batch = sample_corruptions(positives, 50, 100, 2, CorruptionMode::PerBatchEntities);
    for (const auto& t : batch.negatives) {
        for (EntityId e : {t.subject, t.object}) {
            CHECK((e == 3 || e == 7 || e == 11));
        }
    }
}

TEST_CASE("loss worked examples")
{
    const std::vector<double> five{5.0}, zero{0.0};
    CHECK(compute_loss(LossKind::Pairwise, five, zero, {.margin = 1.0}).value == 0.0);
    CHECK(compute_loss(LossKind::Pairwise, zero, zero, {.margin = 1.0}).value == doctest::Approx(1.0));

    // NLL over one positive at score 0 and its negative far below: only log 2 remains.
    const std::vector<double> far{-800.0};
    CHECK(compute_loss(LossKind::NLL, zero, far).value == doctest::Approx(std::log(2.0)));

    const std::vector<double> four(4, 1.5), one{1.5};
    CHECK(compute_loss(LossKind::MulticlassNLL, one, four).value == doctest::Approx(std::log(5.0)));

    CHECK_THROWS_AS(compute_loss(LossKind::NLL, std::vector<double>{}, std::vector<double>{}), ContractError);
    CHECK_THROWS_AS(compute_loss(LossKind::NLL, std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}),
                    ContractError);
}

TEST_CASE("loss gradients match central finite differences")
{
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 2.0);
    const LossParams params{.margin = 1.0, .adv_temperature = 0.5};
    for (auto kind : {LossKind::Pairwise, LossKind::NLL, LossKind::MulticlassNLL, LossKind::SelfAdversarial}) {
        CAPTURE(to_string(kind));
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t np = 3, eta = 4;
            std::vector<double> x(np + np * eta);
            for (double& v : x) v = n(rng);
            const std::vector<double> pos(x.begin(), x.begin() + np), neg(x.begin() + np, x.end());
            if (kind == LossKind::Pairwise) {
                // Stay away from the hinge kinks where the derivative is undefined.
                bool near_kink = false;
                for (std::size_t i = 0; i < np; ++i)
                    for (std::size_t j = 0; j < eta; ++j)
                        near_kink |= std::abs(1.0 + neg[i * eta + j] - pos[i]) < 1e-3;
                if (near_kink) continue;
            }
            const auto result = compute_loss(kind, pos, neg, params);
            CHECK(std::isfinite(result.value));
            if (kind == LossKind::Pairwise || kind == LossKind::MulticlassNLL) CHECK(result.value >= 0.0);

            auto f = [&](const std::vector<double>& y) {
                const std::vector<double> p(y.begin(), y.begin() + np), q(y.begin() + np, y.end());
                if (kind == LossKind::SelfAdversarial) {
                    return oracle::self_adversarial_frozen(p, q, neg, params.margin, params.adv_temperature);
                }
                return compute_loss(kind, p, q, params).value;
            };
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double analytic = i < np ? result.grad_pos[i] : result.grad_neg[i - np];
                REQUIRE(oracle::rel_err(analytic, oracle::central_diff(f, x, i, 1e-5)) < 1e-4);
            }
        }
    }
}

TEST_CASE("the frozen self-adversarial oracle reproduces the loss value")
{
    const std::vector<double> pos{0.3, -1.2}, neg{0.1, 2.0, -0.5, 1.0, 0.0, -3.0};
    const auto r = compute_loss(LossKind::SelfAdversarial, pos, neg, {.margin = 2.0, .adv_temperature = 1.5});
    CHECK(r.value == doctest::Approx(oracle::self_adversarial_frozen(pos, neg, neg, 2.0, 1.5)).epsilon(1e-12));
}

TEST_CASE("Adam leaves parameters alone when the gradient is zero")
{
    std::vector<double> params{1.0, -2.0, 3.0, 4.0};
    AdamOptimizer adam(params.size(), 0.1, 0.9, 0.999, 1e-8);
    const std::vector<std::size_t> rows{0, 1};

    const std::vector<double> zero(4, 0.0);
    adam.tick();
    adam.step(params, zero, rows, 2);
    CHECK(params == std::vector<double>{1.0, -2.0, 3.0, 4.0});

    // With nonzero moments from an earlier step, a zero-gradient row still stays put.
    const std::vector<double> g{0.5, 0.5, 0.0, 0.0};
    adam.tick();
    adam.step(params, g, rows, 2);
    const auto after = params;
    CHECK(after[0] != 1.0);
    CHECK(after[2] == 3.0);
    const std::vector<double> g2{0.0, 0.0, 1.0, 1.0};
    adam.tick();
    adam.step(params, g2, rows, 2);
    CHECK(params[0] == after[0]);
    CHECK(params[1] == after[1]);
    CHECK(params[2] != 3.0);
}

TEST_CASE("rows never referenced by any batch are never updated")
{
    // Entities 6..9 and relation 1 never appear; per-batch corruptions keep it that way.
    auto g = graph_with(10, 2, chain(6));
    TrainConfig config;
    config.k = 4;
    config.eta = 3;
    config.epochs = 5;
    config.batch_size = 2;
    config.learning_rate = 0.05;
    config.corruption_mode = CorruptionMode::PerBatchEntities;
    for (auto loss : {LossKind::Pairwise, LossKind::NLL, LossKind::MulticlassNLL, LossKind::SelfAdversarial}) {
        config.loss = loss;
        const auto init = init_model(ModelKind::distmult(), 4, 10, 2, config.seed);
        const auto result = train(g, init, config);
        for (EntityId e = 6; e < 10; ++e) {
            CHECK(std::equal(init.entity(e).begin(), init.entity(e).end(), result.model.entity(e).begin()));
        }
        CHECK(std::equal(init.relation(1).begin(), init.relation(1).end(), result.model.relation(1).begin()));
        CHECK_FALSE(std::equal(init.entity(0).begin(), init.entity(0).end(), result.model.entity(0).begin()));
    }
}

TEST_CASE("training lowers the loss on a small planted graph")
{
    PlantedGraphOptions opts;
    opts.clusters = 4;
    opts.cluster_size = 5;
    opts.relations = 2;
    opts.train_size = 80;
    opts.validation_positives = 10;
    opts.test_positives = 10;
    const PlantedGraph planted(opts);
    REQUIRE(planted.splits().num_entities() == 20);

    TrainConfig config;
    config.k = 8;
    config.epochs = 200;
    config.eta = 5;
    config.batch_size = 16;
    config.learning_rate = 0.01;
    config.loss = LossKind::Pairwise;
    const auto result = train(planted.splits().train, ModelKind::transe(), config);
    REQUIRE(result.history.size() == 200);
    CHECK(result.history.back().mean_loss < result.history.front().mean_loss);
}

TEST_CASE("training is deterministic per seed")
{
    const auto g = graph_with(12, 2, {{0, 0, 1}, {1, 0, 2}, {2, 1, 3}, {4, 1, 5}, {6, 0, 7}, {8, 1, 9}, {10, 0, 11}});
    TrainConfig config;
    config.k = 6;
    config.epochs = 20;
    config.batch_size = 3;
    config.eta = 4;
    config.learning_rate = 0.01;
    config.seed = 99;
    const auto a = train(g, ModelKind::complex(), config);
    const auto b = train(g, ModelKind::complex(), config);
    CHECK(a.model == b.model);
    config.seed = 100;
    const auto c = train(g, ModelKind::complex(), config);
    CHECK_FALSE(a.model == c.model);
}

TEST_CASE("held-out planted positives outrank random corruptions")
{
    PlantedGraphOptions opts;
    opts.clusters = 8;
    opts.cluster_size = 6;
    opts.relations = 3;
    opts.train_size = 450;
    opts.validation_positives = 50;
    opts.test_positives = 100;
    const PlantedGraph planted(opts);

    TrainConfig config;
    config.k = 16;
    config.epochs = 150;
    config.eta = 10;
    config.batch_size = 64;
    config.learning_rate = 0.01;
    config.seed = 1;
    const auto model = train(planted.splits().train, ModelKind::transe(), config).model;

    Rng rng(derive_seed(5, {1}));
    const std::size_t ne = planted.splits().num_entities();
    std::size_t hits = 0, total = 0;
    for (const auto& row : planted.splits().test) {
        if (!row.label) continue;
        const double truth = score(model, row.triple);
        bool top = true;
        int drawn = 0;
        while (drawn < 10) {
            Triple c = row.triple;
            (rng() >> 63 ? c.subject : c.object) = EntityId(uniform_index(rng, ne));
            if (planted.is_true(c)) continue;
            ++drawn;
            top &= truth > score(model, c);
        }
        hits += top ? 1 : 0;
        ++total;
    }
    const double hits_at_1 = double(hits) / double(total);
    MESSAGE("planted Hits@1 = " << hits_at_1);
    CHECK(hits_at_1 > 0.8);
}

TEST_CASE("config validation and names")
{
    TrainConfig config;
    CHECK_NOTHROW(config.validate());
    config.eta = 0;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config = {};
    config.learning_rate = 0.0;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    for (auto kind : {LossKind::Pairwise, LossKind::NLL, LossKind::MulticlassNLL, LossKind::SelfAdversarial}) {
        CHECK(parse_loss_kind(to_string(kind)) == kind);
    }
    CHECK(parse_corruption_mode("per-batch-entities") == CorruptionMode::PerBatchEntities);
}
