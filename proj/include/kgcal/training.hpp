#pragma once

#include "kgcal/graph.hpp"
#include "kgcal/model.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kgcal {

enum class LossKind { Pairwise, NLL, MulticlassNLL, SelfAdversarial };

LossKind parse_loss_kind(std::string_view name);
std::string to_string(LossKind kind);

enum class CorruptionMode {
    UniformEntities,
    // Replacement entities are drawn from those appearing in the batch.
    PerBatchEntities,
};

CorruptionMode parse_corruption_mode(std::string_view name);
std::string to_string(CorruptionMode mode);

enum class CorruptedSide : std::uint8_t { Subject, Object };

struct CorruptionBatch {
    std::vector<Triple> positives;
    // eta consecutive negatives per positive.
    std::vector<Triple> negatives;
    std::vector<CorruptedSide> corrupted_side;
    std::size_t eta = 0;
};

// eta corruptions per positive; the side is a fair coin, the replacement is uniform
// over the pool minus the entity currently in that slot.
CorruptionBatch sample_corruptions(std::span<const Triple> positives, std::size_t eta, std::size_t entity_count,
                                   std::uint64_t seed, CorruptionMode mode = CorruptionMode::UniformEntities);

struct LossParams {
    // Margin gamma for Pairwise and SelfAdversarial.
    double margin = 1.0;
    // Softmax temperature of the self-adversarial negative weights.
    double adv_temperature = 0.5;
};

struct LossResult {
    double value = 0.0;
    std::vector<double> grad_pos;
    std::vector<double> grad_neg;
};

// Summed loss over the batch and its exact gradient w.r.t. every score. neg_scores
// holds eta = neg_scores.size() / pos_scores.size() consecutive scores per positive.
LossResult compute_loss(LossKind kind, std::span<const double> pos_scores, std::span<const double> neg_scores,
                        const LossParams& params = {});

struct TrainConfig {
    std::size_t k = 100;
    std::size_t eta = 20;
    std::size_t epochs = 1000;
    double learning_rate = 1e-4;
    std::size_t batch_size = 512;
    LossKind loss = LossKind::SelfAdversarial;
    double margin = 1.0;
    double adv_temperature = 0.5;
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    CorruptionMode corruption_mode = CorruptionMode::UniformEntities;
    // Rescale touched entity rows to unit L2 norm after each step.
    bool normalize_entities = false;

    // Throws ConfigError on violated invariants.
    void validate() const;
};

struct EpochStats {
    std::size_t epoch = 0;
    // Summed loss divided by the number of positives.
    double mean_loss = 0.0;
    double wall_ms = 0.0;
};

struct TrainResult {
    EmbeddingModel model;
    std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Lazy Adam: only rows with a nonzero gradient in the current batch are updated,
// using the global step count for bias correction.
class AdamOptimizer {
public:
    AdamOptimizer(std::size_t size, double learning_rate, double beta1, double beta2, double epsilon);

    // Applies one step to `rows` (row indices of width `row_dim`) of `params`.
    void step(std::span<double> params, std::span<const double> grads, std::span<const std::size_t> rows,
              std::size_t row_dim);
    void tick() { ++t_; }
    std::size_t steps() const noexcept { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<double> m_;
    std::vector<double> v_;
};

// Trains from init_model(kind, config.k, ...) with config.seed.
TrainResult train(const KnowledgeGraph& graph, ModelKind kind, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

// Continues training an existing model.
TrainResult train(const KnowledgeGraph& graph, EmbeddingModel model, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

} // namespace kgcal
