#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace kgcal {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

struct Triple {
    EntityId subject = 0;
    RelationId predicate = 0;
    EntityId object = 0;

    friend bool operator==(const Triple&, const Triple&) = default;
    friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct TripleHash {
    std::size_t operator()(const Triple& t) const noexcept;
};

struct LabeledTriple {
    Triple triple;
    bool label = false;

    friend bool operator==(const LabeledTriple&, const LabeledTriple&) = default;
};

// Bijective label <-> dense id mapping. Ids follow first-appearance order.
class Dictionary {
public:
    // Returns the existing id, or assigns the next one.
    std::uint32_t intern(std::string_view label);
    std::optional<std::uint32_t> find(std::string_view label) const;
    const std::string& label(std::uint32_t id) const;
    std::size_t size() const noexcept { return labels_.size(); }
    const std::vector<std::string>& labels() const noexcept { return labels_; }

    // FNV-1a over the labels in id order; identifies a vocabulary in checkpoints.
    std::uint64_t content_hash() const noexcept;

    friend bool operator==(const Dictionary& a, const Dictionary& b) { return a.labels_ == b.labels_; }

private:
    std::vector<std::string> labels_;
    std::unordered_map<std::string, std::uint32_t> ids_;
};

struct Vocabulary {
    Dictionary entities;
    Dictionary relations;

    std::uint64_t content_hash() const noexcept;
};

struct KnowledgeGraph {
    Vocabulary vocab;
    std::vector<Triple> triples;

    std::size_t num_entities() const noexcept { return vocab.entities.size(); }
    std::size_t num_relations() const noexcept { return vocab.relations.size(); }
};

struct DatasetSplits {
    KnowledgeGraph train;
    std::vector<LabeledTriple> validation;
    std::vector<LabeledTriple> test;

    const Vocabulary& vocab() const noexcept { return train.vocab; }
    std::size_t num_entities() const noexcept { return train.num_entities(); }
    std::size_t num_relations() const noexcept { return train.num_relations(); }

    // Throws ContractError when ids are out of range or splits overlap.
    void validate() const;
};

enum class DuplicatePolicy { Reject, Dedup };

struct IngestOptions {
    // Unseen labels extend the vocabulary; otherwise they raise VocabularyError.
    bool grow_vocabulary = true;
    DuplicatePolicy duplicates = DuplicatePolicy::Reject;
};

// Triples of a `subject\tpredicate\tobject` file, resolved through (and possibly
// extending) `vocab`. Blank lines are skipped.
std::vector<Triple> read_positive_tsv(const std::filesystem::path& path, Vocabulary& vocab,
                                      const IngestOptions& options = {});

// `subject\tpredicate\tobject\tlabel` with label in {1, -1, 0}. Line order is kept.
std::vector<LabeledTriple> read_labeled_tsv(const std::filesystem::path& path, Vocabulary& vocab,
                                            const IngestOptions& options = {});

// Parses from memory; `source` names the origin in error messages.
std::vector<Triple> parse_positive_tsv(std::string_view text, Vocabulary& vocab, const IngestOptions& options = {},
                                       const std::string& source = "<memory>");
std::vector<LabeledTriple> parse_labeled_tsv(std::string_view text, Vocabulary& vocab,
                                             const IngestOptions& options = {},
                                             const std::string& source = "<memory>");

void write_positive_tsv(const std::filesystem::path& path, const Vocabulary& vocab, const std::vector<Triple>& triples);
void write_labeled_tsv(const std::filesystem::path& path, const Vocabulary& vocab,
                       const std::vector<LabeledTriple>& triples);

struct SplitPaths {
    std::filesystem::path train;
    std::filesystem::path validation;
    std::filesystem::path test;
    // When false, validation/test are positive-only files and every row is labeled true.
    bool labeled = false;
};

// Loads all three splits with a shared, growing vocabulary; train duplicates follow
// `train_duplicates`. Validates the result.
DatasetSplits load_splits(const SplitPaths& paths, DuplicatePolicy train_duplicates = DuplicatePolicy::Reject);

// Counts that the benchmark files sometimes hide: duplicates inside evaluation splits,
// overlap with training, and test positives whose inverse (o, p, s) is in training.
struct SplitDiagnostics {
    std::size_t validation_duplicates = 0;
    std::size_t test_duplicates = 0;
    std::size_t train_validation_overlap = 0;
    std::size_t train_test_overlap = 0;
    std::size_t validation_test_overlap = 0;
    std::size_t test_inverse_in_train = 0;
};

SplitDiagnostics diagnose(const DatasetSplits& splits);

// Known-true triples: train plus positive validation/test rows.
class FilterIndex {
public:
    FilterIndex() = default;
    explicit FilterIndex(const DatasetSplits& splits);

    bool contains(const Triple& t) const { return known_.contains(t); }
    std::size_t size() const noexcept { return known_.size(); }

    void insert(const Triple& t) { known_.insert(t); }

private:
    std::unordered_set<Triple, TripleHash> known_;
};

FilterIndex build_filter_index(const DatasetSplits& splits);

std::vector<Triple> positives_of(const std::vector<LabeledTriple>& rows);

} // namespace kgcal
