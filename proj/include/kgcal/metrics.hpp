#pragma once

#include "kgcal/graph.hpp"
#include "kgcal/model.hpp"

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace kgcal {

// Mean squared error between probabilities and 0/1 outcomes.
double brier_score(std::span<const double> probs, const std::vector<bool>& labels);

// Mean binary cross-entropy with probabilities clipped to [clip_eps, 1 - clip_eps].
double log_loss(std::span<const double> probs, const std::vector<bool>& labels, double clip_eps = 1e-15);

struct ReliabilityBin {
    double bin_low = 0.0;
    double bin_high = 0.0;
    // Both are 0 for an empty bin.
    double mean_predicted = 0.0;
    double frequency = 0.0;
    std::size_t count = 0;

    friend bool operator==(const ReliabilityBin&, const ReliabilityBin&) = default;
};

struct ReliabilityDiagram {
    std::size_t n_bins = 0;
    std::vector<ReliabilityBin> bins;

    std::size_t total_count() const noexcept;
    // Largest |frequency - mean_predicted| over bins with at least `min_count` samples.
    double max_gap(std::size_t min_count) const noexcept;

    friend bool operator==(const ReliabilityDiagram&, const ReliabilityDiagram&) = default;
};

// Equal-width bins over [0, 1]; bin i covers [i/n, (i+1)/n), the last one is closed.
ReliabilityDiagram reliability_bins(std::span<const double> probs, const std::vector<bool>& labels,
                                    std::size_t n_bins = 10);

enum class TiePolicy {
    // Ties count against the true triple.
    Pessimistic,
    Optimistic,
};

TiePolicy parse_tie_policy(std::string_view name);
std::string to_string(TiePolicy policy);

struct RankReport {
    double mr = 0.0;
    double mrr = 0.0;
    std::map<std::size_t, double> hits;
    bool filtered = true;
    std::string tie_policy = "pessimistic";
    // Number of ranked queries (two per positive).
    std::size_t num_queries = 0;

    friend bool operator==(const RankReport&, const RankReport&) = default;
};

struct TripleRanks {
    std::size_t subject_rank = 1;
    std::size_t object_rank = 1;
};

// Rank of `t` among all subject and all object corruptions: 1 + corruptions scoring
// higher (+ tied ones when pessimistic). Corruptions in `filter` are skipped when it
// is non-null.
TripleRanks rank_triple(const EmbeddingModel& model, const Triple& t, const FilterIndex* filter,
                        TiePolicy ties = TiePolicy::Pessimistic);

// filter == nullptr gives raw metrics.
RankReport ranked_eval(const EmbeddingModel& model, std::span<const Triple> positives, const FilterIndex* filter,
                       const std::vector<std::size_t>& hits_at = {1, 3, 10}, TiePolicy ties = TiePolicy::Pessimistic);

struct ThresholdChoice {
    double tau = 0.0;
    double accuracy = 0.0;
};

// Accuracy-maximizing tau for `score >= tau` among -inf, midpoints between adjacent
// distinct scores, and +inf. Ties go to the smallest tau.
ThresholdChoice best_threshold(std::span<const double> scores, const std::vector<bool>& labels);

struct ThresholdTable {
    std::map<RelationId, double> per_relation;
    // Learned on all samples; used for relations missing from the table.
    double global = 0.0;

    friend bool operator==(const ThresholdTable&, const ThresholdTable&) = default;
};

ThresholdTable learn_thresholds(std::span<const double> scores, const std::vector<bool>& labels,
                                std::span<const RelationId> relations);

using ThresholdSpec = std::variant<double, ThresholdTable>;

struct ClassificationResult {
    std::vector<bool> predictions;
    double accuracy = 0.0;
    // Samples whose relation was absent from the table.
    std::size_t fallback_count = 0;
};

// prediction = value >= threshold. `relations` may be empty for a single threshold.
ClassificationResult classify(std::span<const double> values, const ThresholdSpec& threshold,
                              std::span<const RelationId> relations, const std::vector<bool>& labels);

} // namespace kgcal
