#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kgcal/errors.hpp"
#include "kgcal/model.hpp"
#include "oracles.hpp"

#include <cmath>
#include <filesystem>
#include <random>

using namespace kgcal;

namespace {

void set_row(std::span<double> row, std::initializer_list<double> values)
{
    std::copy(values.begin(), values.end(), row.begin());
}

// Model with two entities and one relation whose rows are given explicitly.
EmbeddingModel tiny(ModelKind kind, std::size_t k, std::initializer_list<double> s, std::initializer_list<double> r,
                    std::initializer_list<double> o)
{
    EmbeddingModel m(kind, k, 2, 1);
    set_row(m.entity(0), s);
    set_row(m.relation(0), r);
    set_row(m.entity(1), o);
    return m;
}

const std::vector<ModelKind> kAllKinds = {ModelKind::transe(1), ModelKind::transe(2), ModelKind::distmult(),
                                          ModelKind::complex(), ModelKind::hole()};

} // namespace

TEST_CASE("TransE worked examples")
{
    CHECK(score_transe(tiny(ModelKind::transe(2), 2, {1, 0}, {0, 1}, {1, 1}), {0, 0, 1}) == 0.0);
    CHECK(score_transe(tiny(ModelKind::transe(2), 2, {0, 0}, {3, 4}, {0, 0}), {0, 0, 1}) == doctest::Approx(-5.0));
    CHECK(score_transe(tiny(ModelKind::transe(1), 2, {0, 0}, {3, 4}, {0, 0}), {0, 0, 1}) == doctest::Approx(-7.0));
}

TEST_CASE("TransE scores are non-positive and translation invariant")
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int norm : {1, 2}) {
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<double> s(6), r(6), o(6), v(6), sv(6), ov(6);
            for (std::size_t i = 0; i < 6; ++i) {
                s[i] = u(rng);
                r[i] = u(rng);
                o[i] = u(rng);
                v[i] = u(rng);
                sv[i] = s[i] + v[i];
                ov[i] = o[i] + v[i];
            }
            const double base = kernels::transe(s, r, o, norm);
            CHECK(base <= 0.0);
            CHECK(kernels::transe(sv, r, ov, norm) == doctest::Approx(base).epsilon(1e-12));
        }
    }
}

TEST_CASE("DistMult worked examples and symmetry")
{
    const auto m = tiny(ModelKind::distmult(), 2, {1, 2}, {0.5, 0.5}, {2, 1});
    CHECK(score_distmult(m, {0, 0, 1}) == doctest::Approx(2.0));
    CHECK(score_distmult(m, {1, 0, 0}) == score_distmult(m, {0, 0, 1}));
    CHECK(score_distmult(tiny(ModelKind::distmult(), 2, {1, 2}, {0, 0}, {2, 1}), {0, 0, 1}) == 0.0);
}

TEST_CASE("ComplEx worked example, real restriction and conjugate symmetry")
{
    // k = 1: s = 1 + 0i, r = 0 + 1i, o = 0 + 1i.
    CHECK(score_complex(tiny(ModelKind::complex(), 1, {1, 0}, {0, 1}, {0, 1}), {0, 0, 1}) == doctest::Approx(1.0));

    const auto cm = oracle::random_model(ModelKind::complex(), 5, 4, 2, 19);
    EmbeddingModel real_only = cm;
    EmbeddingModel dm(ModelKind::distmult(), 5, 4, 2);
    for (EntityId e = 0; e < 4; ++e) {
        for (std::size_t i = 0; i < 5; ++i) {
            real_only.entity(e)[5 + i] = 0.0;
            dm.entity(e)[i] = cm.entity(e)[i];
        }
    }
    for (RelationId p = 0; p < 2; ++p) {
        for (std::size_t i = 0; i < 5; ++i) {
            real_only.relation(p)[5 + i] = 0.0;
            dm.relation(p)[i] = cm.relation(p)[i];
        }
    }
    EmbeddingModel conj = cm;
    for (std::size_t i = 0; i < 5; ++i) conj.relation(0)[5 + i] = -cm.relation(0)[5 + i];
    for (EntityId s = 0; s < 4; ++s) {
        for (EntityId o = 0; o < 4; ++o) {
            CHECK(score_complex(real_only, {s, 0, o}) == score_distmult(dm, {s, 0, o}));
            CHECK(score_complex(conj, {s, 0, o}) == doctest::Approx(score_complex(cm, {o, 0, s})).epsilon(1e-12));
        }
    }
}

TEST_CASE("HolE reduces, annihilates and agrees with the frequency-domain evaluation")
{
    CHECK(score_hole(tiny(ModelKind::hole(), 1, {2}, {3}, {-0.5}), {0, 0, 1}) == doctest::Approx(-3.0));
    CHECK(score_hole(tiny(ModelKind::hole(), 3, {1, 2, 3}, {0, 0, 0}, {4, 5, 6}), {0, 0, 1}) == 0.0);

    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> s(8), r(8), o(8);
        for (std::size_t i = 0; i < 8; ++i) {
            s[i] = u(rng);
            r[i] = u(rng);
            o[i] = u(rng);
        }
        CHECK(std::abs(kernels::hole(s, r, o) - oracle::hole_frequency_domain(s, r, o)) < 1e-9);
    }
}

TEST_CASE("scoring checks the model family and id range")
{
    const auto m = oracle::random_model(ModelKind::distmult(), 3, 2, 1, 1);
    CHECK_THROWS_AS(score_transe(m, {0, 0, 1}), ContractError);
    CHECK_THROWS_AS(score(m, {0, 0, 2}), ContractError);
    CHECK_THROWS_AS(score(m, {0, 1, 0}), ContractError);
}

TEST_CASE("initialization is deterministic, seed sensitive and bounded")
{
    for (const auto& kind : kAllKinds) {
        const auto a = init_model(kind, 10, 30, 3, 5);
        const auto b = init_model(kind, 10, 30, 3, 5);
        const auto c = init_model(kind, 10, 30, 3, 6);
        CHECK(a == b);
        CHECK_FALSE(std::equal(a.entity_data().begin(), a.entity_data().end(), c.entity_data().begin()));
        const double bound = std::sqrt(6.0 / double(a.row_dim()));
        for (double v : a.entity_data()) REQUIRE(std::abs(v) <= bound);
        for (double v : a.relation_data()) REQUIRE(std::abs(v) <= bound);
    }
    CHECK_THROWS_AS(init_model(ModelKind::hole(), 4, 0, 2, 1), ConfigError);
    CHECK_THROWS_AS(init_model(ModelKind::hole(), 4, 2, 0, 1), ConfigError);
}

TEST_CASE("entity matrix shape at benchmark size")
{
    const auto m = init_model(ModelKind::transe(), 100, 38696, 11, 0);
    CHECK(m.entity_data().size() == 38696u * 100u);
    CHECK(m.relation_data().size() == 11u * 100u);
    const auto c = init_model(ModelKind::complex(), 100, 10, 2, 0);
    CHECK(c.row_dim() == 200);
}

TEST_CASE("score gradients match central finite differences")
{
    std::mt19937_64 rng(21);
    for (const auto& kind : kAllKinds) {
        CAPTURE(kind.name());
        for (int point = 0; point < 100; ++point) {
            const std::size_t k = 6;
            auto model = oracle::random_model(kind, k, 3, 1, rng());
            const Triple t{0, 0, 2};
            const std::size_t d = model.row_dim();
            std::vector<double> gs(d, 0.0), gr(d, 0.0), go(d, 0.0);
            accumulate_score_gradient(model, t, 1.0, gs, gr, go);

            // Pack (s, r, o) into one vector and differentiate the score through it.
            std::vector<double> x;
            for (double v : model.entity(0)) x.push_back(v);
            for (double v : model.relation(0)) x.push_back(v);
            for (double v : model.entity(2)) x.push_back(v);
            auto f = [&](const std::vector<double>& y) {
                EmbeddingModel m2 = model;
                std::copy(y.begin(), y.begin() + long(d), m2.entity(0).begin());
                std::copy(y.begin() + long(d), y.begin() + long(2 * d), m2.relation(0).begin());
                std::copy(y.begin() + long(2 * d), y.end(), m2.entity(2).begin());
                return score(m2, t);
            };
            for (std::size_t i = 0; i < 3 * d; ++i) {
                const double analytic = i < d ? gs[i] : i < 2 * d ? gr[i - d] : go[i - 2 * d];
                REQUIRE(oracle::rel_err(analytic, oracle::central_diff(f, x, i, 1e-5)) < 1e-4);
            }
        }
    }
}

TEST_CASE("checkpoints round-trip bit for bit")
{
    const auto dir = std::filesystem::temp_directory_path() / "kgcal_models_ckpt";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    for (const auto& kind : kAllKinds) {
        const auto m = init_model(kind, 7, 9, 2, 42);
        save_checkpoint(dir / "m.ckpt", m, 0xabcdefULL);
        const auto loaded = load_checkpoint(dir / "m.ckpt");
        CHECK(loaded.model == m);
        CHECK(loaded.vocab_hash == 0xabcdefULL);
    }
    CHECK(std::filesystem::exists(dir / "m.ckpt.json"));
    CHECK_THROWS(load_checkpoint(dir / "missing.ckpt"));
}

TEST_CASE("model kind names parse back")
{
    for (const auto& kind : kAllKinds) {
        CHECK(ModelKind::parse(kind.name()) == kind);
    }
    CHECK_THROWS_AS(ModelKind::parse("rotate"), ConfigError);
}
