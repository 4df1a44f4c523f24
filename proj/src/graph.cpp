#include "kgcal/graph.hpp"

#include "kgcal/errors.hpp"

#include <fstream>
#include <sstream>

namespace kgcal {

std::size_t TripleHash::operator()(const Triple& t) const noexcept
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint64_t v : {std::uint64_t{t.subject}, std::uint64_t{t.predicate}, std::uint64_t{t.object}}) {
        h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
}

std::uint32_t Dictionary::intern(std::string_view label)
{
    if (auto it = ids_.find(std::string(label)); it != ids_.end()) {
        return it->second;
    }
    const auto id = static_cast<std::uint32_t>(labels_.size());
    labels_.emplace_back(label);
    ids_.emplace(labels_.back(), id);
    return id;
}

std::optional<std::uint32_t> Dictionary::find(std::string_view label) const
{
    if (auto it = ids_.find(std::string(label)); it != ids_.end()) {
        return it->second;
    }
    return std::nullopt;
}

const std::string& Dictionary::label(std::uint32_t id) const
{
    if (id >= labels_.size()) {
        throw VocabularyError("id " + std::to_string(id) + " out of range (size " + std::to_string(labels_.size()) + ")");
    }
    return labels_[id];
}

namespace {

constexpr std::uint64_t fnv_offset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t fnv_prime = 0x100000001b3ULL;

std::uint64_t fnv_update(std::uint64_t h, std::string_view bytes)
{
    for (unsigned char c : bytes) {
        h ^= c;
        h *= fnv_prime;
    }
    // Separator byte so that {"ab","c"} and {"a","bc"} differ.
    h ^= 0xff;
    h *= fnv_prime;
    return h;
}

} // namespace

std::uint64_t Dictionary::content_hash() const noexcept
{
    std::uint64_t h = fnv_offset;
    for (const auto& l : labels_) {
        h = fnv_update(h, l);
    }
    return h;
}

std::uint64_t Vocabulary::content_hash() const noexcept
{
    std::uint64_t h = fnv_offset;
    h = fnv_update(h, "entities");
    for (const auto& l : entities.labels()) {
        h = fnv_update(h, l);
    }
    h = fnv_update(h, "relations");
    for (const auto& l : relations.labels()) {
        h = fnv_update(h, l);
    }
    return h;
}

namespace {

std::string_view trim(std::string_view s)
{
    constexpr std::string_view ws = " \t\r\n\v\f";
    const auto first = s.find_first_not_of(ws);
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(ws);
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_tabs(std::string_view line)
{
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        if (tab == std::string_view::npos) {
            fields.push_back(trim(line.substr(start)));
            break;
        }
        fields.push_back(trim(line.substr(start, tab - start)));
        start = tab + 1;
    }
    return fields;
}

std::uint32_t resolve(Dictionary& dict, std::string_view label, bool grow, const char* kind, const std::string& source,
                      std::size_t line)
{
    if (grow) {
        return dict.intern(label);
    }
    if (auto id = dict.find(label)) {
        return *id;
    }
    throw VocabularyError(source + ":" + std::to_string(line) + ": unknown " + kind + " '" + std::string(label) + "'");
}

// Calls `on_row(fields, line_number)` for every non-blank line.
template <typename F>
void for_each_row(std::string_view text, std::size_t expected_fields, const std::string& source, F&& on_row)
{
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) {
            nl = text.size();
        }
        const auto line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const auto fields = split_tabs(line);
        if (fields.size() != expected_fields) {
            throw ParseError(source, line_no,
                             "expected " + std::to_string(expected_fields) + " tab-separated fields, found " +
                                 std::to_string(fields.size()));
        }
        for (const auto& f : fields) {
            if (f.empty()) {
                throw ParseError(source, line_no, "empty field");
            }
        }
        on_row(fields, line_no);
    }
}

Triple resolve_triple(const std::vector<std::string_view>& fields, Vocabulary& vocab, bool grow,
                      const std::string& source, std::size_t line)
{
    Triple t;
    t.subject = resolve(vocab.entities, fields[0], grow, "entity", source, line);
    t.predicate = resolve(vocab.relations, fields[1], grow, "relation", source, line);
    t.object = resolve(vocab.entities, fields[2], grow, "entity", source, line);
    return t;
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

} // namespace

std::vector<Triple> parse_positive_tsv(std::string_view text, Vocabulary& vocab, const IngestOptions& options,
                                       const std::string& source)
{
    std::vector<Triple> out;
    std::unordered_set<Triple, TripleHash> seen;
    for_each_row(text, 3, source, [&](const std::vector<std::string_view>& fields, std::size_t line) {
        const Triple t = resolve_triple(fields, vocab, options.grow_vocabulary, source, line);
        if (!seen.insert(t).second) {
            if (options.duplicates == DuplicatePolicy::Reject) {
                throw DuplicateTripleError(source + ":" + std::to_string(line) + ": duplicate triple");
            }
            return;
        }
        out.push_back(t);
    });
    return out;
}

std::vector<LabeledTriple> parse_labeled_tsv(std::string_view text, Vocabulary& vocab, const IngestOptions& options,
                                             const std::string& source)
{
    std::vector<LabeledTriple> out;
    for_each_row(text, 4, source, [&](const std::vector<std::string_view>& fields, std::size_t line) {
        LabeledTriple row;
        if (fields[3] == "1") {
            row.label = true;
        } else if (fields[3] == "-1" || fields[3] == "0") {
            row.label = false;
        } else {
            throw ParseError(source, line, "label must be 1, -1 or 0, got '" + std::string(fields[3]) + "'");
        }
        row.triple = resolve_triple(fields, vocab, options.grow_vocabulary, source, line);
        out.push_back(row);
    });
    return out;
}

std::vector<Triple> read_positive_tsv(const std::filesystem::path& path, Vocabulary& vocab,
                                      const IngestOptions& options)
{
    return parse_positive_tsv(read_file(path), vocab, options, path.string());
}

std::vector<LabeledTriple> read_labeled_tsv(const std::filesystem::path& path, Vocabulary& vocab,
                                            const IngestOptions& options)
{
    return parse_labeled_tsv(read_file(path), vocab, options, path.string());
}

namespace {

std::ofstream open_for_write(const std::filesystem::path& path)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    return out;
}

void write_triple(std::ostream& out, const Vocabulary& vocab, const Triple& t)
{
    out << vocab.entities.label(t.subject) << '\t' << vocab.relations.label(t.predicate) << '\t'
        << vocab.entities.label(t.object);
}

} // namespace

void write_positive_tsv(const std::filesystem::path& path, const Vocabulary& vocab, const std::vector<Triple>& triples)
{
    auto out = open_for_write(path);
    for (const auto& t : triples) {
        write_triple(out, vocab, t);
        out << '\n';
    }
}

void write_labeled_tsv(const std::filesystem::path& path, const Vocabulary& vocab,
                       const std::vector<LabeledTriple>& triples)
{
    auto out = open_for_write(path);
    for (const auto& row : triples) {
        write_triple(out, vocab, row.triple);
        out << '\t' << (row.label ? "1" : "-1") << '\n';
    }
}

DatasetSplits load_splits(const SplitPaths& paths, DuplicatePolicy train_duplicates)
{
    DatasetSplits splits;
    IngestOptions train_opts;
    train_opts.duplicates = train_duplicates;
    splits.train.triples = read_positive_tsv(paths.train, splits.train.vocab, train_opts);

    IngestOptions eval_opts;
    eval_opts.duplicates = DuplicatePolicy::Dedup;
    auto load_eval = [&](const std::filesystem::path& p) {
        if (p.empty()) {
            return std::vector<LabeledTriple>{};
        }
        if (paths.labeled) {
            return read_labeled_tsv(p, splits.train.vocab);
        }
        std::vector<LabeledTriple> rows;
        for (const auto& t : read_positive_tsv(p, splits.train.vocab, eval_opts)) {
            rows.push_back({t, true});
        }
        return rows;
    };
    splits.validation = load_eval(paths.validation);
    splits.test = load_eval(paths.test);
    splits.validate();
    return splits;
}

void DatasetSplits::validate() const
{
    const auto ne = num_entities();
    const auto nr = num_relations();
    auto check = [&](const Triple& t, const char* split) {
        if (t.subject >= ne || t.object >= ne || t.predicate >= nr) {
            throw ContractError(std::string("id out of range in ") + split + " split");
        }
    };
    std::unordered_set<Triple, TripleHash> train_set;
    for (const auto& t : train.triples) {
        check(t, "train");
        if (!train_set.insert(t).second) {
            throw ContractError("duplicate triple in train split");
        }
    }
    std::unordered_set<Triple, TripleHash> valid_set;
    for (const auto& row : validation) {
        check(row.triple, "validation");
        if (train_set.contains(row.triple)) {
            throw ContractError("validation triple also present in train split");
        }
        valid_set.insert(row.triple);
    }
    for (const auto& row : test) {
        check(row.triple, "test");
        if (train_set.contains(row.triple) || valid_set.contains(row.triple)) {
            throw ContractError("test triple also present in train or validation split");
        }
    }
}

SplitDiagnostics diagnose(const DatasetSplits& splits)
{
    SplitDiagnostics d;
    const std::unordered_set<Triple, TripleHash> train_set(splits.train.triples.begin(), splits.train.triples.end());
    std::unordered_set<Triple, TripleHash> valid_set;
    for (const auto& row : splits.validation) {
        if (!valid_set.insert(row.triple).second) {
            ++d.validation_duplicates;
        }
        if (train_set.contains(row.triple)) {
            ++d.train_validation_overlap;
        }
    }
    std::unordered_set<Triple, TripleHash> test_set;
    for (const auto& row : splits.test) {
        if (!test_set.insert(row.triple).second) {
            ++d.test_duplicates;
        }
        if (train_set.contains(row.triple)) {
            ++d.train_test_overlap;
        }
        if (valid_set.contains(row.triple)) {
            ++d.validation_test_overlap;
        }
        const Triple inverse{row.triple.object, row.triple.predicate, row.triple.subject};
        if (row.label && train_set.contains(inverse)) {
            ++d.test_inverse_in_train;
        }
    }
    return d;
}

FilterIndex::FilterIndex(const DatasetSplits& splits)
{
    known_.reserve(splits.train.triples.size() + splits.validation.size() + splits.test.size());
    known_.insert(splits.train.triples.begin(), splits.train.triples.end());
    for (const auto* rows : {&splits.validation, &splits.test}) {
        for (const auto& row : *rows) {
            if (row.label) {
                known_.insert(row.triple);
            }
        }
    }
}

FilterIndex build_filter_index(const DatasetSplits& splits)
{
    return FilterIndex(splits);
}

std::vector<Triple> positives_of(const std::vector<LabeledTriple>& rows)
{
    std::vector<Triple> out;
    for (const auto& row : rows) {
        if (row.label) {
            out.push_back(row.triple);
        }
    }
    return out;
}

} // namespace kgcal
