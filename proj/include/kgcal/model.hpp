#pragma once

#include "kgcal/graph.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kgcal {

enum class ModelFamily : std::uint32_t { TransE = 0, DistMult = 1, ComplEx = 2, HolE = 3 };

struct ModelKind {
    ModelFamily family = ModelFamily::TransE;
    // L_n norm of TransE; unused by the other families.
    int norm_order = 2;

    static ModelKind transe(int norm_order = 2);
    static ModelKind distmult() { return {ModelFamily::DistMult, 0}; }
    static ModelKind complex() { return {ModelFamily::ComplEx, 0}; }
    static ModelKind hole() { return {ModelFamily::HolE, 0}; }

    // "transe", "transe-l1", "distmult", "complex", "hole".
    static ModelKind parse(std::string_view name);
    std::string name() const;

    friend bool operator==(const ModelKind&, const ModelKind&) = default;
};

// Entity and relation embeddings stored as row-major real matrices. ComplEx rows hold
// 2k values: real parts in [0, k), imaginary parts in [k, 2k).
class EmbeddingModel {
public:
    EmbeddingModel(ModelKind kind, std::size_t k, std::size_t num_entities, std::size_t num_relations,
                   std::uint64_t seed = 0);

    const ModelKind& kind() const noexcept { return kind_; }
    std::size_t k() const noexcept { return k_; }
    std::size_t row_dim() const noexcept { return row_dim_; }
    std::size_t num_entities() const noexcept { return num_entities_; }
    std::size_t num_relations() const noexcept { return num_relations_; }
    std::uint64_t seed() const noexcept { return seed_; }

    std::span<const double> entity(EntityId id) const;
    std::span<double> entity(EntityId id);
    std::span<const double> relation(RelationId id) const;
    std::span<double> relation(RelationId id);

    std::span<const double> entity_data() const noexcept { return entities_; }
    std::span<double> entity_data() noexcept { return entities_; }
    std::span<const double> relation_data() const noexcept { return relations_; }
    std::span<double> relation_data() noexcept { return relations_; }

    bool all_finite() const noexcept;

    friend bool operator==(const EmbeddingModel&, const EmbeddingModel&) = default;

private:
    ModelKind kind_;
    std::size_t k_;
    std::size_t row_dim_;
    std::size_t num_entities_;
    std::size_t num_relations_;
    std::uint64_t seed_;
    std::vector<double> entities_;
    std::vector<double> relations_;
};

// Vector-level scoring functions and their gradients. Gradient functions add
// `upstream * d(score)/d(x)` into the output spans.
namespace kernels {

double transe(std::span<const double> s, std::span<const double> r, std::span<const double> o, int norm_order);
void transe_grad(std::span<const double> s, std::span<const double> r, std::span<const double> o, int norm_order,
                 double upstream, std::span<double> gs, std::span<double> gr, std::span<double> go);

double distmult(std::span<const double> s, std::span<const double> r, std::span<const double> o);
void distmult_grad(std::span<const double> s, std::span<const double> r, std::span<const double> o, double upstream,
                   std::span<double> gs, std::span<double> gr, std::span<double> go);

// Inputs use the split layout: size 2k.
double complex(std::span<const double> s, std::span<const double> r, std::span<const double> o);
void complex_grad(std::span<const double> s, std::span<const double> r, std::span<const double> o, double upstream,
                  std::span<double> gs, std::span<double> gr, std::span<double> go);

// <s, r (*) o> with circular correlation c_i = sum_j r_j o_{(i+j) mod k}.
double hole(std::span<const double> s, std::span<const double> r, std::span<const double> o);
void hole_grad(std::span<const double> s, std::span<const double> r, std::span<const double> o, double upstream,
               std::span<double> gs, std::span<double> gr, std::span<double> go);

} // namespace kernels

double score_transe(const EmbeddingModel& model, const Triple& t);
double score_distmult(const EmbeddingModel& model, const Triple& t);
double score_complex(const EmbeddingModel& model, const Triple& t);
double score_hole(const EmbeddingModel& model, const Triple& t);

// Dispatches on the model kind.
double score(const EmbeddingModel& model, const Triple& t);
std::vector<double> score_all(const EmbeddingModel& model, std::span<const Triple> triples);

// Adds upstream * d(score)/d(embedding) into the three row gradients.
void accumulate_score_gradient(const EmbeddingModel& model, const Triple& t, double upstream, std::span<double> grad_s,
                               std::span<double> grad_r, std::span<double> grad_o);

// Glorot-style uniform init on [-sqrt(6/d), sqrt(6/d)] with d the row width.
EmbeddingModel init_model(ModelKind kind, std::size_t k, std::size_t num_entities, std::size_t num_relations,
                          std::uint64_t seed);

struct Checkpoint {
    EmbeddingModel model;
    std::uint64_t vocab_hash = 0;
};

// Binary checkpoint at `path` (header + little-endian f64 matrices) and a JSON
// sidecar at `path` + ".json".
void save_checkpoint(const std::filesystem::path& path, const EmbeddingModel& model, std::uint64_t vocab_hash);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace kgcal
