#pragma once

#include "kgcal/graph.hpp"

#include <cstdint>

namespace kgcal {

// Synthetic graph with known structure. Entities fall into `clusters` ordered groups
// of `cluster_size`; relation p with shift s_p = p + 1 holds exactly when
// cluster(o) = cluster(s) + s_p. Positives are drawn from that set, except for a
// `noise_fraction` of unstructured positive facts mixed into every split; evaluation
// negatives are one-sided corruptions that are neither structural nor sampled.
struct PlantedGraphOptions {
    std::size_t clusters = 15;
    std::size_t cluster_size = 10;
    std::size_t relations = 4;
    std::size_t train_size = 2000;
    std::size_t validation_positives = 250;
    std::size_t test_positives = 250;
    // Ground-truth negatives per evaluation positive.
    std::size_t negatives_per_positive = 1;
    double noise_fraction = 0.0;
    std::uint64_t seed = 7;
};

class PlantedGraph {
public:
    explicit PlantedGraph(const PlantedGraphOptions& options);

    const DatasetSplits& splits() const noexcept { return splits_; }
    const PlantedGraphOptions& options() const noexcept { return options_; }

    // Whether the triple follows the planted structure; noise positives do not.
    bool is_true(const Triple& t) const noexcept;
    std::size_t cluster_of(EntityId e) const noexcept { return e / options_.cluster_size; }

private:
    PlantedGraphOptions options_;
    DatasetSplits splits_;
};

} // namespace kgcal
