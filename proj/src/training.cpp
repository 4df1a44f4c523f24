#include "kgcal/training.hpp"

#include "kgcal/errors.hpp"
#include "kgcal/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace kgcal {

LossKind parse_loss_kind(std::string_view name)
{
    if (name == "pairwise") {
        return LossKind::Pairwise;
    }
    if (name == "nll") {
        return LossKind::NLL;
    }
    if (name == "multiclass-nll" || name == "multiclass_nll") {
        return LossKind::MulticlassNLL;
    }
    if (name == "self-adversarial" || name == "self_adversarial") {
        return LossKind::SelfAdversarial;
    }
    throw ConfigError("unknown loss '" + std::string(name) + "'");
}

std::string to_string(LossKind kind)
{
    switch (kind) {
    case LossKind::Pairwise:
        return "pairwise";
    case LossKind::NLL:
        return "nll";
    case LossKind::MulticlassNLL:
        return "multiclass-nll";
    case LossKind::SelfAdversarial:
        return "self-adversarial";
    }
    return "unknown";
}

CorruptionMode parse_corruption_mode(std::string_view name)
{
    if (name == "uniform-entities") {
        return CorruptionMode::UniformEntities;
    }
    if (name == "per-batch-entities") {
        return CorruptionMode::PerBatchEntities;
    }
    throw ConfigError("unknown corruption mode '" + std::string(name) + "'");
}

std::string to_string(CorruptionMode mode)
{
    return mode == CorruptionMode::UniformEntities ? "uniform-entities" : "per-batch-entities";
}

CorruptionBatch sample_corruptions(std::span<const Triple> positives, std::size_t eta, std::size_t entity_count,
                                   std::uint64_t seed, CorruptionMode mode)
{
    if (entity_count < 2) {
        throw SamplingError("need at least 2 entities to corrupt a triple");
    }
    if (eta == 0) {
        throw SamplingError("corruption rate eta must be >= 1");
    }

    std::vector<EntityId> pool;
    if (mode == CorruptionMode::PerBatchEntities) {
        for (const auto& t : positives) {
            pool.push_back(t.subject);
            pool.push_back(t.object);
        }
        std::sort(pool.begin(), pool.end());
        pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
        if (!positives.empty() && pool.size() < 2) {
            throw SamplingError("per-batch entity pool has fewer than 2 entities");
        }
    }

    CorruptionBatch batch;
    batch.positives.assign(positives.begin(), positives.end());
    batch.eta = eta;
    batch.negatives.reserve(positives.size() * eta);
    batch.corrupted_side.reserve(positives.size() * eta);

    Rng rng(seed);
    auto replacement = [&](EntityId original) -> EntityId {
        if (mode == CorruptionMode::UniformEntities) {
            auto x = static_cast<EntityId>(uniform_index(rng, entity_count - 1));
            return x >= original ? x + 1 : x;
        }
        const auto at = static_cast<std::size_t>(std::lower_bound(pool.begin(), pool.end(), original) - pool.begin());
        auto idx = static_cast<std::size_t>(uniform_index(rng, pool.size() - 1));
        return pool[idx >= at ? idx + 1 : idx];
    };

    for (const auto& t : positives) {
        for (std::size_t j = 0; j < eta; ++j) {
            Triple neg = t;
            const bool subject_side = (rng() >> 63) != 0;
            if (subject_side) {
                neg.subject = replacement(t.subject);
            } else {
                neg.object = replacement(t.object);
            }
            batch.negatives.push_back(neg);
            batch.corrupted_side.push_back(subject_side ? CorruptedSide::Subject : CorruptedSide::Object);
        }
    }
    return batch;
}

namespace {

// log(1 + exp(x)) without overflow.
double softplus(double x)
{
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x)
{
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

LossResult compute_loss(LossKind kind, std::span<const double> pos_scores, std::span<const double> neg_scores,
                        const LossParams& params)
{
    if (pos_scores.empty() || neg_scores.empty()) {
        throw ContractError("compute_loss needs at least one positive and one negative score");
    }
    if (neg_scores.size() % pos_scores.size() != 0) {
        throw ContractError("negative scores are not grouped evenly per positive");
    }
    const std::size_t eta = neg_scores.size() / pos_scores.size();
    const double gamma = params.margin;

    LossResult r;
    r.grad_pos.assign(pos_scores.size(), 0.0);
    r.grad_neg.assign(neg_scores.size(), 0.0);

    switch (kind) {
    case LossKind::Pairwise:
        for (std::size_t i = 0; i < pos_scores.size(); ++i) {
            for (std::size_t j = 0; j < eta; ++j) {
                const std::size_t n = i * eta + j;
                const double h = gamma + neg_scores[n] - pos_scores[i];
                if (h > 0.0) {
                    r.value += h;
                    r.grad_pos[i] -= 1.0;
                    r.grad_neg[n] += 1.0;
                }
            }
        }
        break;
    case LossKind::NLL:
        for (std::size_t i = 0; i < pos_scores.size(); ++i) {
            r.value += softplus(-pos_scores[i]);
            r.grad_pos[i] = -sigmoid(-pos_scores[i]);
        }
        for (std::size_t n = 0; n < neg_scores.size(); ++n) {
            r.value += softplus(neg_scores[n]);
            r.grad_neg[n] = sigmoid(neg_scores[n]);
        }
        break;
    case LossKind::MulticlassNLL:
        for (std::size_t i = 0; i < pos_scores.size(); ++i) {
            const auto group = neg_scores.subspan(i * eta, eta);
            const double mx = std::max(pos_scores[i], *std::max_element(group.begin(), group.end()));
            double z = std::exp(pos_scores[i] - mx);
            for (double s : group) {
                z += std::exp(s - mx);
            }
            const double lse = mx + std::log(z);
            r.value += lse - pos_scores[i];
            r.grad_pos[i] = std::exp(pos_scores[i] - lse) - 1.0;
            for (std::size_t j = 0; j < eta; ++j) {
                r.grad_neg[i * eta + j] = std::exp(group[j] - lse);
            }
        }
        break;
    case LossKind::SelfAdversarial: {
        std::vector<double> w(eta);
        for (std::size_t i = 0; i < pos_scores.size(); ++i) {
            const auto group = neg_scores.subspan(i * eta, eta);
            // Softmax weights over the group, held constant for the gradient.
            const double mx = params.adv_temperature * *std::max_element(group.begin(), group.end());
            double z = 0.0;
            for (std::size_t j = 0; j < eta; ++j) {
                w[j] = std::exp(params.adv_temperature * group[j] - mx);
                z += w[j];
            }
            r.value += softplus(-(gamma + pos_scores[i]));
            r.grad_pos[i] = -sigmoid(-(gamma + pos_scores[i]));
            for (std::size_t j = 0; j < eta; ++j) {
                const double p = w[j] / z;
                r.value += p * softplus(group[j] + gamma);
                r.grad_neg[i * eta + j] = p * sigmoid(group[j] + gamma);
            }
        }
        break;
    }
    }
    return r;
}

void TrainConfig::validate() const
{
    if (k < 1) {
        throw ConfigError("k must be >= 1");
    }
    if (eta < 1) {
        throw ConfigError("eta must be >= 1");
    }
    if (epochs < 1) {
        throw ConfigError("epochs must be >= 1");
    }
    if (!(learning_rate > 0.0)) {
        throw ConfigError("learning_rate must be > 0");
    }
    if (batch_size < 1) {
        throw ConfigError("batch_size must be >= 1");
    }
    if (!(adv_temperature > 0.0)) {
        throw ConfigError("adv_temperature must be > 0");
    }
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (!(adam_epsilon > 0.0)) {
        throw ConfigError("adam_epsilon must be > 0");
    }
}

AdamOptimizer::AdamOptimizer(std::size_t size, double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon), m_(size, 0.0), v_(size, 0.0)
{
}

void AdamOptimizer::step(std::span<double> params, std::span<const double> grads, std::span<const std::size_t> rows,
                         std::size_t row_dim)
{
    const double t = static_cast<double>(std::max<std::size_t>(t_, 1));
    const double c1 = 1.0 - std::pow(beta1_, t);
    const double c2 = 1.0 - std::pow(beta2_, t);
    for (std::size_t row : rows) {
        const std::size_t base = row * row_dim;
        const auto g = grads.subspan(base, row_dim);
        if (std::all_of(g.begin(), g.end(), [](double x) { return x == 0.0; })) {
            continue;
        }
        for (std::size_t i = 0; i < row_dim; ++i) {
            const std::size_t at = base + i;
            m_[at] = beta1_ * m_[at] + (1.0 - beta1_) * g[i];
            v_[at] = beta2_ * v_[at] + (1.0 - beta2_) * g[i] * g[i];
            params[at] -= lr_ * (m_[at] / c1) / (std::sqrt(v_[at] / c2) + eps_);
        }
    }
}

namespace {

// Dense gradient buffer with a list of rows written since the last clear.
class RowGradients {
public:
    RowGradients(std::size_t rows, std::size_t row_dim) : dim_(row_dim), grads_(rows * row_dim, 0.0), marked_(rows, 0) {}

    std::span<double> row(std::size_t r)
    {
        if (!marked_[r]) {
            marked_[r] = 1;
            touched_.push_back(r);
        }
        return std::span<double>(grads_).subspan(r * dim_, dim_);
    }

    std::span<const double> data() const { return grads_; }
    std::span<const std::size_t> touched() const { return touched_; }

    void clear()
    {
        for (std::size_t r : touched_) {
            std::fill_n(grads_.begin() + static_cast<std::ptrdiff_t>(r * dim_), dim_, 0.0);
            marked_[r] = 0;
        }
        touched_.clear();
    }

    void sort_touched() { std::sort(touched_.begin(), touched_.end()); }

private:
    std::size_t dim_;
    std::vector<double> grads_;
    std::vector<char> marked_;
    std::vector<std::size_t> touched_;
};

} // namespace

TrainResult train(const KnowledgeGraph& graph, ModelKind kind, const TrainConfig& config, const EpochCallback& on_epoch)
{
    config.validate();
    return train(graph, init_model(kind, config.k, graph.num_entities(), graph.num_relations(), config.seed), config,
                 on_epoch);
}

TrainResult train(const KnowledgeGraph& graph, EmbeddingModel model, const TrainConfig& config,
                  const EpochCallback& on_epoch)
{
    config.validate();
    if (graph.triples.empty()) {
        throw ConfigError("cannot train on an empty graph");
    }
    if (model.num_entities() != graph.num_entities() || model.num_relations() != graph.num_relations()) {
        throw ConfigError("model shape does not match the graph vocabulary");
    }

    const std::size_t dim = model.row_dim();
    RowGradients ent_grad(model.num_entities(), dim);
    RowGradients rel_grad(model.num_relations(), dim);
    AdamOptimizer ent_opt(model.entity_data().size(), config.learning_rate, config.adam_beta1, config.adam_beta2,
                          config.adam_epsilon);
    AdamOptimizer rel_opt(model.relation_data().size(), config.learning_rate, config.adam_beta1, config.adam_beta2,
                          config.adam_epsilon);
    const LossParams loss_params{config.margin, config.adv_temperature};

    std::vector<std::size_t> order(graph.triples.size());
    std::vector<Triple> batch;
    std::vector<double> pos_scores;
    std::vector<double> neg_scores;

    auto backprop = [&](const Triple& t, double upstream) {
        if (upstream == 0.0) {
            return;
        }
        accumulate_score_gradient(model, t, upstream, ent_grad.row(t.subject), rel_grad.row(t.predicate),
                                  ent_grad.row(t.object));
    };

    std::vector<EpochStats> history;
    history.reserve(config.epochs);
    const std::size_t num_batches = (graph.triples.size() + config.batch_size - 1) / config.batch_size;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(derive_seed(config.seed, {0x5e, epoch}));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);
        }

        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < num_batches; ++b) {
            const std::size_t lo = b * config.batch_size;
            const std::size_t hi = std::min(lo + config.batch_size, order.size());
            batch.clear();
            for (std::size_t i = lo; i < hi; ++i) {
                batch.push_back(graph.triples[order[i]]);
            }
            const auto corruptions = sample_corruptions(batch, config.eta, model.num_entities(),
                                                        derive_seed(config.seed, {0xc0, epoch, b}),
                                                        config.corruption_mode);
            pos_scores = score_all(model, batch);
            neg_scores = score_all(model, corruptions.negatives);
            const auto loss = compute_loss(config.loss, pos_scores, neg_scores, loss_params);
            if (!std::isfinite(loss.value)) {
                throw DivergenceError(epoch, b, "non-finite loss " + std::to_string(loss.value));
            }
            epoch_loss += loss.value;

            for (std::size_t i = 0; i < batch.size(); ++i) {
                backprop(batch[i], loss.grad_pos[i]);
            }
            for (std::size_t n = 0; n < corruptions.negatives.size(); ++n) {
                backprop(corruptions.negatives[n], loss.grad_neg[n]);
            }

            ent_opt.tick();
            rel_opt.tick();
            ent_grad.sort_touched();
            rel_grad.sort_touched();
            ent_opt.step(model.entity_data(), ent_grad.data(), ent_grad.touched(), dim);
            rel_opt.step(model.relation_data(), rel_grad.data(), rel_grad.touched(), dim);

            if (config.normalize_entities) {
                for (std::size_t row : ent_grad.touched()) {
                    auto e = model.entity(static_cast<EntityId>(row));
                    double norm = 0.0;
                    for (double v : e) {
                        norm += v * v;
                    }
                    norm = std::sqrt(norm);
                    if (norm > 0.0) {
                        for (double& v : e) {
                            v /= norm;
                        }
                    }
                }
            }
            auto finite_rows = [](std::span<const double> data, std::span<const std::size_t> rows, std::size_t width) {
                return std::all_of(rows.begin(), rows.end(), [&](std::size_t r) {
                    const auto row = data.subspan(r * width, width);
                    return std::all_of(row.begin(), row.end(), [](double v) { return std::isfinite(v); });
                });
            };
            if (!finite_rows(model.entity_data(), ent_grad.touched(), dim) ||
                !finite_rows(model.relation_data(), rel_grad.touched(), dim)) {
                throw DivergenceError(epoch, b, "non-finite parameters after update");
            }
            ent_grad.clear();
            rel_grad.clear();
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.mean_loss = epoch_loss / static_cast<double>(graph.triples.size());
        stats.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        history.push_back(stats);
        if (on_epoch) {
            on_epoch(stats);
        }
    }
    return TrainResult{std::move(model), std::move(history)};
}

} // namespace kgcal
