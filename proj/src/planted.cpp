#include "kgcal/planted.hpp"

#include "kgcal/errors.hpp"
#include "kgcal/rng.hpp"

#include <cmath>
#include <string>
#include <unordered_set>

namespace kgcal {

PlantedGraph::PlantedGraph(const PlantedGraphOptions& options) : options_(options)
{
    const std::size_t n_entities = options.clusters * options.cluster_size;
    if (options.relations == 0 || options.relations >= options.clusters || options.cluster_size == 0) {
        throw ConfigError("planted graph needs 0 < relations < clusters and a non-empty cluster size");
    }
    auto& vocab = splits_.train.vocab;
    for (std::size_t e = 0; e < n_entities; ++e) {
        vocab.entities.intern("e" + std::to_string(e));
    }
    for (std::size_t p = 0; p < options.relations; ++p) {
        vocab.relations.intern("r" + std::to_string(p));
    }

    std::vector<Triple> candidates;
    for (std::size_t p = 0; p < options.relations; ++p) {
        const std::size_t shift = p + 1;
        for (std::size_t c = 0; c + shift < options.clusters; ++c) {
            for (std::size_t i = 0; i < options.cluster_size; ++i) {
                for (std::size_t j = 0; j < options.cluster_size; ++j) {
                    candidates.push_back({static_cast<EntityId>(c * options.cluster_size + i),
                                          static_cast<RelationId>(p),
                                          static_cast<EntityId>((c + shift) * options.cluster_size + j)});
                }
            }
        }
    }
    const std::size_t wanted = options.train_size + options.validation_positives + options.test_positives;
    if (wanted > candidates.size()) {
        throw ConfigError("planted graph has only " + std::to_string(candidates.size()) + " true triples, " +
                          std::to_string(wanted) + " requested");
    }

    if (!(options.noise_fraction >= 0.0 && options.noise_fraction < 1.0)) {
        throw ConfigError("noise_fraction must lie in [0, 1)");
    }
    Rng rng(derive_seed(options.seed, {0x91a7}));
    const auto n_noise = static_cast<std::size_t>(std::llround(options.noise_fraction * static_cast<double>(wanted)));
    const std::size_t n_structured = wanted - n_noise;
    // Partial Fisher-Yates: the first n_structured entries become a uniform sample.
    for (std::size_t i = 0; i < n_structured; ++i) {
        std::swap(candidates[i], candidates[i + uniform_index(rng, candidates.size() - i)]);
    }
    candidates.resize(n_structured);
    std::unordered_set<Triple, TripleHash> used(candidates.begin(), candidates.end());
    while (candidates.size() < wanted) {
        const Triple t{static_cast<EntityId>(uniform_index(rng, n_entities)),
                       static_cast<RelationId>(uniform_index(rng, options.relations)),
                       static_cast<EntityId>(uniform_index(rng, n_entities))};
        if (!is_true(t) && used.insert(t).second) {
            candidates.push_back(t);
        }
    }
    for (std::size_t i = candidates.size(); i > 1; --i) {
        std::swap(candidates[i - 1], candidates[uniform_index(rng, i)]);
    }

    auto corrupt = [&](const Triple& t) {
        while (true) {
            Triple neg = t;
            const auto e = static_cast<EntityId>(uniform_index(rng, n_entities));
            if ((rng() >> 63) != 0) {
                neg.subject = e;
            } else {
                neg.object = e;
            }
            if (!is_true(neg) && used.insert(neg).second) {
                return neg;
            }
        }
    };
    auto labeled = [&](std::size_t from, std::size_t count) {
        std::vector<LabeledTriple> rows;
        for (std::size_t i = from; i < from + count; ++i) {
            rows.push_back({candidates[i], true});
            for (std::size_t k = 0; k < options.negatives_per_positive; ++k) {
                rows.push_back({corrupt(candidates[i]), false});
            }
        }
        return rows;
    };

    splits_.train.triples.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(options.train_size));
    splits_.validation = labeled(options.train_size, options.validation_positives);
    splits_.test = labeled(options.train_size + options.validation_positives, options.test_positives);
    splits_.validate();
}

bool PlantedGraph::is_true(const Triple& t) const noexcept
{
    return cluster_of(t.object) == cluster_of(t.subject) + t.predicate + 1;
}

} // namespace kgcal
