#include "kgcal/metrics.hpp"

#include "kgcal/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace kgcal {

namespace {

void check_prob_inputs(std::span<const double> probs, const std::vector<bool>& labels)
{
    if (probs.size() != labels.size()) {
        throw ContractError("probabilities and labels differ in length");
    }
    if (probs.empty()) {
        throw ContractError("metric needs at least one sample");
    }
    for (double p : probs) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ContractError("probability outside [0, 1]");
        }
    }
}

} // namespace

double brier_score(std::span<const double> probs, const std::vector<bool>& labels)
{
    check_prob_inputs(probs, labels);
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double d = (labels[i] ? 1.0 : 0.0) - probs[i];
        acc += d * d;
    }
    return acc / static_cast<double>(probs.size());
}

double log_loss(std::span<const double> probs, const std::vector<bool>& labels, double clip_eps)
{
    check_prob_inputs(probs, labels);
    if (!(clip_eps > 0.0 && clip_eps < 0.5)) {
        throw ContractError("clip_eps must lie in (0, 0.5)");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = std::clamp(probs[i], clip_eps, 1.0 - clip_eps);
        acc -= labels[i] ? std::log(p) : std::log1p(-p);
    }
    return acc / static_cast<double>(probs.size());
}

std::size_t ReliabilityDiagram::total_count() const noexcept
{
    std::size_t n = 0;
    for (const auto& b : bins) {
        n += b.count;
    }
    return n;
}

double ReliabilityDiagram::max_gap(std::size_t min_count) const noexcept
{
    double gap = 0.0;
    for (const auto& b : bins) {
        if (b.count > 0 && b.count >= min_count) {
            gap = std::max(gap, std::abs(b.frequency - b.mean_predicted));
        }
    }
    return gap;
}

ReliabilityDiagram reliability_bins(std::span<const double> probs, const std::vector<bool>& labels,
                                    std::size_t n_bins)
{
    if (n_bins < 2) {
        throw ContractError("reliability diagram needs at least 2 bins");
    }
    if (probs.size() != labels.size()) {
        throw ContractError("probabilities and labels differ in length");
    }
    ReliabilityDiagram d;
    d.n_bins = n_bins;
    d.bins.resize(n_bins);
    std::vector<double> sum_p(n_bins, 0.0);
    std::vector<double> sum_y(n_bins, 0.0);
    const auto n = static_cast<double>(n_bins);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = probs[i];
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ContractError("probability outside [0, 1]");
        }
        const auto bin = std::min(static_cast<std::size_t>(p * n), n_bins - 1);
        sum_p[bin] += p;
        sum_y[bin] += labels[i] ? 1.0 : 0.0;
        ++d.bins[bin].count;
    }
    for (std::size_t b = 0; b < n_bins; ++b) {
        auto& bin = d.bins[b];
        bin.bin_low = static_cast<double>(b) / n;
        bin.bin_high = static_cast<double>(b + 1) / n;
        if (bin.count > 0) {
            bin.mean_predicted = sum_p[b] / static_cast<double>(bin.count);
            bin.frequency = sum_y[b] / static_cast<double>(bin.count);
        }
    }
    return d;
}

TiePolicy parse_tie_policy(std::string_view name)
{
    if (name == "pessimistic") {
        return TiePolicy::Pessimistic;
    }
    if (name == "optimistic") {
        return TiePolicy::Optimistic;
    }
    throw ConfigError("unknown tie policy '" + std::string(name) + "'");
}

std::string to_string(TiePolicy policy)
{
    return policy == TiePolicy::Pessimistic ? "pessimistic" : "optimistic";
}

TripleRanks rank_triple(const EmbeddingModel& model, const Triple& t, const FilterIndex* filter, TiePolicy ties)
{
    const double truth = score(model, t);
    const bool pessimistic = ties == TiePolicy::Pessimistic;
    auto beats = [&](double s) { return pessimistic ? s >= truth : s > truth; };
    TripleRanks ranks;
    const auto ne = static_cast<EntityId>(model.num_entities());
    for (EntityId e = 0; e < ne; ++e) {
        if (e != t.subject) {
            const Triple c{e, t.predicate, t.object};
            if ((filter == nullptr || !filter->contains(c)) && beats(score(model, c))) {
                ++ranks.subject_rank;
            }
        }
        if (e != t.object) {
            const Triple c{t.subject, t.predicate, e};
            if ((filter == nullptr || !filter->contains(c)) && beats(score(model, c))) {
                ++ranks.object_rank;
            }
        }
    }
    return ranks;
}

RankReport ranked_eval(const EmbeddingModel& model, std::span<const Triple> positives, const FilterIndex* filter,
                       const std::vector<std::size_t>& hits_at, TiePolicy ties)
{
    if (positives.empty()) {
        throw ContractError("ranked_eval needs at least one positive triple");
    }
    RankReport report;
    report.filtered = filter != nullptr;
    report.tie_policy = to_string(ties);
    double sum_rank = 0.0;
    double sum_rr = 0.0;
    std::map<std::size_t, std::size_t> hit_counts;
    for (std::size_t n : hits_at) {
        hit_counts[n] = 0;
    }
    for (const auto& t : positives) {
        const auto r = rank_triple(model, t, filter, ties);
        for (std::size_t rank : {r.subject_rank, r.object_rank}) {
            sum_rank += static_cast<double>(rank);
            sum_rr += 1.0 / static_cast<double>(rank);
            for (auto& [n, count] : hit_counts) {
                if (rank <= n) {
                    ++count;
                }
            }
        }
    }
    report.num_queries = 2 * positives.size();
    const auto q = static_cast<double>(report.num_queries);
    report.mr = sum_rank / q;
    report.mrr = sum_rr / q;
    for (const auto& [n, count] : hit_counts) {
        report.hits[n] = static_cast<double>(count) / q;
    }
    return report;
}

ThresholdChoice best_threshold(std::span<const double> scores, const std::vector<bool>& labels)
{
    if (scores.size() != labels.size()) {
        throw ContractError("scores and labels differ in length");
    }
    if (scores.empty()) {
        throw ContractError("threshold learning needs at least one sample");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });

    // Start at tau = -inf: everything predicted positive.
    std::ptrdiff_t correct = std::count(labels.begin(), labels.end(), true);
    ThresholdChoice best{-std::numeric_limits<double>::infinity(), 0.0};
    std::ptrdiff_t best_correct = correct;

    std::size_t i = 0;
    while (i < order.size()) {
        const double u = scores[order[i]];
        // Move tau just above u: this group flips to predicted negative.
        while (i < order.size() && scores[order[i]] == u) {
            correct += labels[order[i]] ? -1 : 1;
            ++i;
        }
        double tau = std::numeric_limits<double>::infinity();
        if (i < order.size()) {
            const double next = scores[order[i]];
            tau = u + (next - u) / 2.0;
            if (!(tau > u)) {
                tau = next;
            }
        }
        if (correct > best_correct) {
            best_correct = correct;
            best.tau = tau;
        }
    }
    best.accuracy = static_cast<double>(best_correct) / static_cast<double>(scores.size());
    return best;
}

ThresholdTable learn_thresholds(std::span<const double> scores, const std::vector<bool>& labels,
                                std::span<const RelationId> relations)
{
    if (scores.size() != labels.size() || scores.size() != relations.size()) {
        throw ContractError("scores, labels and relations differ in length");
    }
    ThresholdTable table;
    table.global = best_threshold(scores, labels).tau;

    std::map<RelationId, std::pair<std::vector<double>, std::vector<bool>>> groups;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        auto& g = groups[relations[i]];
        g.first.push_back(scores[i]);
        g.second.push_back(labels[i]);
    }
    for (const auto& [rel, g] : groups) {
        table.per_relation[rel] = best_threshold(g.first, g.second).tau;
    }
    return table;
}

ClassificationResult classify(std::span<const double> values, const ThresholdSpec& threshold,
                              std::span<const RelationId> relations, const std::vector<bool>& labels)
{
    if (values.size() != labels.size()) {
        throw ContractError("values and labels differ in length");
    }
    const auto* table = std::get_if<ThresholdTable>(&threshold);
    if (table != nullptr && relations.size() != values.size()) {
        throw ContractError("per-relation thresholds need one relation per value");
    }
    ClassificationResult result;
    result.predictions.reserve(values.size());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        double tau = 0.0;
        if (table == nullptr) {
            tau = std::get<double>(threshold);
        } else if (auto it = table->per_relation.find(relations[i]); it != table->per_relation.end()) {
            tau = it->second;
        } else {
            tau = table->global;
            ++result.fallback_count;
        }
        const bool pred = values[i] >= tau;
        result.predictions.push_back(pred);
        if (pred == labels[i]) {
            ++correct;
        }
    }
    result.accuracy = values.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(values.size());
    return result;
}

} // namespace kgcal
