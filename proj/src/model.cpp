#include "kgcal/model.hpp"

#include "kgcal/errors.hpp"
#include "kgcal/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>

namespace kgcal {

ModelKind ModelKind::transe(int norm_order)
{
    if (norm_order != 1 && norm_order != 2) {
        throw ConfigError("TransE norm order must be 1 or 2, got " + std::to_string(norm_order));
    }
    return {ModelFamily::TransE, norm_order};
}

ModelKind ModelKind::parse(std::string_view name)
{
    if (name == "transe" || name == "transe-l2") {
        return transe(2);
    }
    if (name == "transe-l1") {
        return transe(1);
    }
    if (name == "distmult") {
        return distmult();
    }
    if (name == "complex") {
        return complex();
    }
    if (name == "hole") {
        return hole();
    }
    throw ConfigError("unknown model kind '" + std::string(name) + "'");
}

std::string ModelKind::name() const
{
    switch (family) {
    case ModelFamily::TransE:
        return norm_order == 1 ? "transe-l1" : "transe";
    case ModelFamily::DistMult:
        return "distmult";
    case ModelFamily::ComplEx:
        return "complex";
    case ModelFamily::HolE:
        return "hole";
    }
    return "unknown";
}

EmbeddingModel::EmbeddingModel(ModelKind kind, std::size_t k, std::size_t num_entities, std::size_t num_relations,
                               std::uint64_t seed)
    : kind_(kind), k_(k), row_dim_(kind.family == ModelFamily::ComplEx ? 2 * k : k), num_entities_(num_entities),
      num_relations_(num_relations), seed_(seed), entities_(num_entities * row_dim_, 0.0),
      relations_(num_relations * row_dim_, 0.0)
{
    if (k == 0) {
        throw ConfigError("embedding dimensionality k must be >= 1");
    }
    if (kind.family == ModelFamily::TransE && kind.norm_order != 1 && kind.norm_order != 2) {
        throw ConfigError("TransE norm order must be 1 or 2");
    }
}

std::span<const double> EmbeddingModel::entity(EntityId id) const
{
    if (id >= num_entities_) {
        throw ContractError("entity id " + std::to_string(id) + " out of range");
    }
    return std::span<const double>(entities_).subspan(id * row_dim_, row_dim_);
}

std::span<double> EmbeddingModel::entity(EntityId id)
{
    if (id >= num_entities_) {
        throw ContractError("entity id " + std::to_string(id) + " out of range");
    }
    return std::span<double>(entities_).subspan(id * row_dim_, row_dim_);
}

std::span<const double> EmbeddingModel::relation(RelationId id) const
{
    if (id >= num_relations_) {
        throw ContractError("relation id " + std::to_string(id) + " out of range");
    }
    return std::span<const double>(relations_).subspan(id * row_dim_, row_dim_);
}

std::span<double> EmbeddingModel::relation(RelationId id)
{
    if (id >= num_relations_) {
        throw ContractError("relation id " + std::to_string(id) + " out of range");
    }
    return std::span<double>(relations_).subspan(id * row_dim_, row_dim_);
}

bool EmbeddingModel::all_finite() const noexcept
{
    auto finite = [](double v) { return std::isfinite(v); };
    return std::all_of(entities_.begin(), entities_.end(), finite) &&
           std::all_of(relations_.begin(), relations_.end(), finite);
}

namespace kernels {

double transe(std::span<const double> s, std::span<const double> r, std::span<const double> o, int norm_order)
{
    double acc = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double x = s[i] + r[i] - o[i];
        acc += norm_order == 1 ? std::abs(x) : x * x;
    }
    return norm_order == 1 ? -acc : -std::sqrt(acc);
}

void transe_grad(std::span<const double> s, std::span<const double> r, std::span<const double> o, int norm_order,
                 double upstream, std::span<double> gs, std::span<double> gr, std::span<double> go)
{
    double scale = upstream;
    if (norm_order == 2) {
        const double norm = -transe(s, r, o, 2);
        // Subgradient 0 at the kink.
        if (norm == 0.0) {
            return;
        }
        scale = upstream / norm;
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double x = s[i] + r[i] - o[i];
        const double dx = norm_order == 1 ? -scale * ((x > 0.0) - (x < 0.0)) : -scale * x;
        gs[i] += dx;
        gr[i] += dx;
        go[i] -= dx;
    }
}

double distmult(std::span<const double> s, std::span<const double> r, std::span<const double> o)
{
    double acc = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        acc += s[i] * r[i] * o[i];
    }
    return acc;
}

void distmult_grad(std::span<const double> s, std::span<const double> r, std::span<const double> o, double upstream,
                   std::span<double> gs, std::span<double> gr, std::span<double> go)
{
    for (std::size_t i = 0; i < s.size(); ++i) {
        gs[i] += upstream * r[i] * o[i];
        gr[i] += upstream * s[i] * o[i];
        go[i] += upstream * s[i] * r[i];
    }
}

double complex(std::span<const double> s, std::span<const double> r, std::span<const double> o)
{
    const std::size_t k = s.size() / 2;
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double a = s[i], b = s[k + i];
        const double c = r[i], d = r[k + i];
        const double e = o[i], f = o[k + i];
        acc += (a * c - b * d) * e + (a * d + b * c) * f;
    }
    return acc;
}

void complex_grad(std::span<const double> s, std::span<const double> r, std::span<const double> o, double upstream,
                  std::span<double> gs, std::span<double> gr, std::span<double> go)
{
    const std::size_t k = s.size() / 2;
    for (std::size_t i = 0; i < k; ++i) {
        const double a = s[i], b = s[k + i];
        const double c = r[i], d = r[k + i];
        const double e = o[i], f = o[k + i];
        gs[i] += upstream * (c * e + d * f);
        gs[k + i] += upstream * (c * f - d * e);
        gr[i] += upstream * (a * e + b * f);
        gr[k + i] += upstream * (a * f - b * e);
        go[i] += upstream * (a * c - b * d);
        go[k + i] += upstream * (a * d + b * c);
    }
}

double hole(std::span<const double> s, std::span<const double> r, std::span<const double> o)
{
    const std::size_t k = s.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        double c = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            c += r[j] * o[(i + j) % k];
        }
        acc += s[i] * c;
    }
    return acc;
}

void hole_grad(std::span<const double> s, std::span<const double> r, std::span<const double> o, double upstream,
               std::span<double> gs, std::span<double> gr, std::span<double> go)
{
    const std::size_t k = s.size();
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t m = (i + j) % k;
            gs[i] += upstream * r[j] * o[m];
            gr[j] += upstream * s[i] * o[m];
            go[m] += upstream * s[i] * r[j];
        }
    }
}

} // namespace kernels

namespace {

void require_family(const EmbeddingModel& model, ModelFamily family, const char* op)
{
    if (model.kind().family != family) {
        throw ContractError(std::string(op) + " called on a " + model.kind().name() + " model");
    }
}

} // namespace

double score_transe(const EmbeddingModel& model, const Triple& t)
{
    require_family(model, ModelFamily::TransE, "score_transe");
    return kernels::transe(model.entity(t.subject), model.relation(t.predicate), model.entity(t.object),
                           model.kind().norm_order);
}

double score_distmult(const EmbeddingModel& model, const Triple& t)
{
    require_family(model, ModelFamily::DistMult, "score_distmult");
    return kernels::distmult(model.entity(t.subject), model.relation(t.predicate), model.entity(t.object));
}

double score_complex(const EmbeddingModel& model, const Triple& t)
{
    require_family(model, ModelFamily::ComplEx, "score_complex");
    return kernels::complex(model.entity(t.subject), model.relation(t.predicate), model.entity(t.object));
}

double score_hole(const EmbeddingModel& model, const Triple& t)
{
    require_family(model, ModelFamily::HolE, "score_hole");
    return kernels::hole(model.entity(t.subject), model.relation(t.predicate), model.entity(t.object));
}

double score(const EmbeddingModel& model, const Triple& t)
{
    switch (model.kind().family) {
    case ModelFamily::TransE:
        return score_transe(model, t);
    case ModelFamily::DistMult:
        return score_distmult(model, t);
    case ModelFamily::ComplEx:
        return score_complex(model, t);
    case ModelFamily::HolE:
        return score_hole(model, t);
    }
    throw ContractError("unknown model family");
}

std::vector<double> score_all(const EmbeddingModel& model, std::span<const Triple> triples)
{
    std::vector<double> out;
    out.reserve(triples.size());
    for (const auto& t : triples) {
        out.push_back(score(model, t));
    }
    return out;
}

void accumulate_score_gradient(const EmbeddingModel& model, const Triple& t, double upstream, std::span<double> grad_s,
                               std::span<double> grad_r, std::span<double> grad_o)
{
    const auto s = model.entity(t.subject);
    const auto r = model.relation(t.predicate);
    const auto o = model.entity(t.object);
    switch (model.kind().family) {
    case ModelFamily::TransE:
        kernels::transe_grad(s, r, o, model.kind().norm_order, upstream, grad_s, grad_r, grad_o);
        return;
    case ModelFamily::DistMult:
        kernels::distmult_grad(s, r, o, upstream, grad_s, grad_r, grad_o);
        return;
    case ModelFamily::ComplEx:
        kernels::complex_grad(s, r, o, upstream, grad_s, grad_r, grad_o);
        return;
    case ModelFamily::HolE:
        kernels::hole_grad(s, r, o, upstream, grad_s, grad_r, grad_o);
        return;
    }
}

EmbeddingModel init_model(ModelKind kind, std::size_t k, std::size_t num_entities, std::size_t num_relations,
                          std::uint64_t seed)
{
    if (num_entities == 0 || num_relations == 0) {
        throw ConfigError("cannot initialize a model with zero entities or relations");
    }
    EmbeddingModel model(kind, k, num_entities, num_relations, seed);
    const double bound = std::sqrt(6.0 / static_cast<double>(model.row_dim()));
    Rng rng(derive_seed(seed, {0x1417}));
    for (double& v : model.entity_data()) {
        v = (2.0 * uniform_unit(rng) - 1.0) * bound;
    }
    for (double& v : model.relation_data()) {
        v = (2.0 * uniform_unit(rng) - 1.0) * bound;
    }
    return model;
}

namespace {

constexpr std::array<char, 8> checkpoint_magic{'K', 'G', 'C', 'A', 'L', 'C', 'K', '1'};

void put_u64(std::ostream& out, std::uint64_t v)
{
    std::array<char, 8> bytes{};
    for (int i = 0; i < 8; ++i) {
        bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    }
    out.write(bytes.data(), bytes.size());
}

std::uint64_t get_u64(std::istream& in, const std::filesystem::path& path)
{
    std::array<unsigned char, 8> bytes{};
    if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
        throw IoError("truncated checkpoint " + path.string());
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= std::uint64_t{bytes[i]} << (8 * i);
    }
    return v;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const EmbeddingModel& model, std::uint64_t vocab_hash)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) {
            throw IoError("cannot write checkpoint " + path.string());
        }
        out.write(checkpoint_magic.data(), checkpoint_magic.size());
        put_u64(out, static_cast<std::uint64_t>(model.kind().family));
        put_u64(out, static_cast<std::uint64_t>(model.kind().norm_order));
        put_u64(out, model.k());
        put_u64(out, model.num_entities());
        put_u64(out, model.num_relations());
        put_u64(out, model.seed());
        for (double v : model.entity_data()) {
            put_u64(out, std::bit_cast<std::uint64_t>(v));
        }
        for (double v : model.relation_data()) {
            put_u64(out, std::bit_cast<std::uint64_t>(v));
        }
        if (!out) {
            throw IoError("failed writing checkpoint " + path.string());
        }
    }
    nlohmann::json sidecar = {
        {"format", "kgcal-checkpoint"},
        {"version", 1},
        {"kind", model.kind().name()},
        {"norm_order", model.kind().norm_order},
        {"k", model.k()},
        {"num_entities", model.num_entities()},
        {"num_relations", model.num_relations()},
        {"seed", model.seed()},
        {"vocab_hash", vocab_hash},
    };
    std::ofstream side(path.string() + ".json");
    if (!side) {
        throw IoError("cannot write checkpoint sidecar for " + path.string());
    }
    side << sidecar.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint " + path.string());
    }
    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != checkpoint_magic) {
        throw IoError("not a kgcal checkpoint: " + path.string());
    }
    const auto family = get_u64(in, path);
    const auto norm = get_u64(in, path);
    const auto k = get_u64(in, path);
    const auto ne = get_u64(in, path);
    const auto nr = get_u64(in, path);
    const auto seed = get_u64(in, path);
    if (family > 3) {
        throw IoError("unknown model family in " + path.string());
    }
    EmbeddingModel model(ModelKind{static_cast<ModelFamily>(family), static_cast<int>(norm)}, k, ne, nr, seed);
    for (double& v : model.entity_data()) {
        v = std::bit_cast<double>(get_u64(in, path));
    }
    for (double& v : model.relation_data()) {
        v = std::bit_cast<double>(get_u64(in, path));
    }

    std::uint64_t vocab_hash = 0;
    std::ifstream side(path.string() + ".json");
    if (side) {
        const auto j = nlohmann::json::parse(side);
        vocab_hash = j.at("vocab_hash").get<std::uint64_t>();
    }
    return {std::move(model), vocab_hash};
}

} // namespace kgcal
