#include "kgcal/experiment.hpp"

#include "kgcal/rng.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

namespace kgcal {

namespace {

std::string_view trim(std::string_view s)
{
    constexpr std::string_view ws = " \t\r\n";
    const auto first = s.find_first_not_of(ws);
    if (first == std::string_view::npos) {
        return {};
    }
    return s.substr(first, s.find_last_not_of(ws) - first + 1);
}

std::vector<std::string_view> split_list(std::string_view value)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (start <= value.size()) {
        auto comma = value.find(',', start);
        if (comma == std::string_view::npos) {
            comma = value.size();
        }
        const auto item = trim(value.substr(start, comma - start));
        if (!item.empty()) {
            out.push_back(item);
        }
        start = comma + 1;
    }
    return out;
}

std::size_t parse_size(std::string_view key, std::string_view v)
{
    std::size_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size()) {
        throw ConfigError("'" + std::string(key) + "' expects a non-negative integer, got '" + std::string(v) + "'");
    }
    return out;
}

double parse_real(std::string_view key, std::string_view v)
{
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size()) {
        throw ConfigError("'" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
    }
    return out;
}

bool parse_bool(std::string_view key, std::string_view v)
{
    if (v == "true" || v == "1" || v == "yes") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no") {
        return false;
    }
    throw ConfigError("'" + std::string(key) + "' expects true/false, got '" + std::string(v) + "'");
}

std::string hex64(std::uint64_t v)
{
    std::ostringstream ss;
    ss << std::hex << v;
    return ss.str();
}

std::string strategy_name(NegativeStrategy::Kind kind)
{
    return kind == NegativeStrategy::Kind::GroundTruth ? "ground-truth" : "synthetic";
}

double elapsed_ms(std::chrono::steady_clock::time_point since)
{
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j)
{
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

nlohmann::json read_json_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("invalid JSON in " + path.string() + ": " + e.what());
    }
}

} // namespace

std::string format_double(double v)
{
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::vector<double> default_sweep_alphas()
{
    std::vector<double> out;
    for (int i = 1; i <= 19; ++i) {
        out.push_back(static_cast<double>(i) / 20.0);
    }
    return out;
}

void ExperimentConfig::set(std::string_view key, std::string_view raw)
{
    const auto value = trim(raw);
    if (key == "train") {
        paths.train = std::string(value);
    } else if (key == "valid" || key == "validation") {
        paths.validation = std::string(value);
    } else if (key == "test") {
        paths.test = std::string(value);
    } else if (key == "labeled") {
        paths.labeled = parse_bool(key, value);
    } else if (key == "train_duplicates") {
        if (value == "reject") {
            train_duplicates = DuplicatePolicy::Reject;
        } else if (value == "dedup") {
            train_duplicates = DuplicatePolicy::Dedup;
        } else {
            throw ConfigError("train_duplicates must be reject or dedup");
        }
    } else if (key == "model") {
        model = ModelKind::parse(value);
    } else if (key == "norm_order") {
        model = ModelKind::transe(static_cast<int>(parse_size(key, value)));
    } else if (key == "k") {
        train.k = parse_size(key, value);
    } else if (key == "eta") {
        train.eta = parse_size(key, value);
    } else if (key == "epochs") {
        train.epochs = parse_size(key, value);
    } else if (key == "learning_rate" || key == "lr") {
        train.learning_rate = parse_real(key, value);
    } else if (key == "batch_size") {
        train.batch_size = parse_size(key, value);
    } else if (key == "loss") {
        train.loss = parse_loss_kind(value);
    } else if (key == "margin") {
        train.margin = parse_real(key, value);
    } else if (key == "adv_temperature") {
        train.adv_temperature = parse_real(key, value);
    } else if (key == "adam_beta1") {
        train.adam_beta1 = parse_real(key, value);
    } else if (key == "adam_beta2") {
        train.adam_beta2 = parse_real(key, value);
    } else if (key == "adam_epsilon") {
        train.adam_epsilon = parse_real(key, value);
    } else if (key == "corruption_mode") {
        train.corruption_mode = parse_corruption_mode(value);
    } else if (key == "normalize_entities") {
        train.normalize_entities = parse_bool(key, value);
    } else if (key == "seed") {
        seed = parse_size(key, value);
    } else if (key == "methods") {
        methods.clear();
        for (auto m : split_list(value)) {
            methods.push_back(parse_calibration_method(m));
        }
    } else if (key == "strategies") {
        strategies.clear();
        for (auto s : split_list(value)) {
            strategies.push_back(parse_strategy_kind(s));
        }
    } else if (key == "alpha") {
        alpha = parse_real(key, value);
    } else if (key == "calibration_eta") {
        calibration_eta = parse_size(key, value);
    } else if (key == "filter_calibration_corruptions") {
        filter_calibration_corruptions = parse_bool(key, value);
    } else if (key == "bins") {
        eval.bins = parse_size(key, value);
    } else if (key == "hits_at") {
        eval.hits_at.clear();
        for (auto n : split_list(value)) {
            eval.hits_at.push_back(parse_size(key, n));
        }
    } else if (key == "tie_policy") {
        eval.ties = parse_tie_policy(value);
    } else if (key == "clip_eps") {
        eval.clip_eps = parse_real(key, value);
    } else if (key == "rank") {
        eval.rank = parse_bool(key, value);
    } else if (key == "output_dir") {
        output_dir = std::string(value);
    } else if (key == "pool_factor") {
        pool_factor = parse_real(key, value);
    } else if (key == "checkpoint") {
        checkpoint = std::string(value);
    } else if (key == "reuse_checkpoint") {
        reuse_checkpoint = parse_bool(key, value);
    } else if (key == "alphas") {
        sweep_alphas.clear();
        for (auto a : split_list(value)) {
            sweep_alphas.push_back(parse_real(key, a));
        }
    } else if (key == "sweep_etas") {
        sweep_etas.clear();
        for (auto e : split_list(value)) {
            sweep_etas.push_back(parse_size(key, e));
        }
    } else if (key == "sweep_ks") {
        sweep_ks.clear();
        for (auto k : split_list(value)) {
            sweep_ks.push_back(parse_size(key, k));
        }
    } else {
        throw ConfigError("unknown config key '" + std::string(key) + "'");
    }
}

void ExperimentConfig::validate() const
{
    TrainConfig t = train;
    t.seed = seed;
    t.validate();
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw DomainError("alpha must lie in (0, 1)");
    }
    if (calibration_eta < 1) {
        throw ConfigError("calibration_eta must be >= 1");
    }
    if (methods.empty() || strategies.empty()) {
        throw ConfigError("at least one calibration method and one strategy are required");
    }
    if (eval.bins < 2) {
        throw ConfigError("bins must be >= 2");
    }
    if (!(eval.clip_eps > 0.0 && eval.clip_eps < 0.5)) {
        throw ConfigError("clip_eps must lie in (0, 0.5)");
    }
    if (!(pool_factor > 0.0)) {
        throw ConfigError("pool_factor must be > 0");
    }
    for (const auto* p : {&paths.train, &paths.validation, &paths.test, &checkpoint}) {
        if (!p->empty() && !std::filesystem::exists(*p)) {
            throw ConfigError("path does not exist: " + p->string());
        }
    }
}

nlohmann::json ExperimentConfig::to_json() const
{
    nlohmann::json methods_j = nlohmann::json::array();
    for (auto m : methods) {
        methods_j.push_back(to_string(m));
    }
    nlohmann::json strategies_j = nlohmann::json::array();
    for (auto s : strategies) {
        strategies_j.push_back(strategy_name(s));
    }
    const auto w = calibration_weights(alpha, calibration_eta);
    return {
        {"train", paths.train.string()},
        {"valid", paths.validation.string()},
        {"test", paths.test.string()},
        {"labeled", paths.labeled},
        {"train_duplicates", train_duplicates == DuplicatePolicy::Reject ? "reject" : "dedup"},
        {"model", model.name()},
        {"norm_order", model.norm_order},
        {"k", train.k},
        {"eta", train.eta},
        {"epochs", train.epochs},
        {"learning_rate", train.learning_rate},
        {"batch_size", train.batch_size},
        {"loss", to_string(train.loss)},
        {"margin", train.margin},
        {"adv_temperature", train.adv_temperature},
        {"adam_beta1", train.adam_beta1},
        {"adam_beta2", train.adam_beta2},
        {"adam_epsilon", train.adam_epsilon},
        {"corruption_mode", to_string(train.corruption_mode)},
        {"normalize_entities", train.normalize_entities},
        {"seed", seed},
        {"methods", methods_j},
        {"strategies", strategies_j},
        {"alpha", alpha},
        {"calibration_eta", calibration_eta},
        {"omega_pos", w.omega_pos},
        {"omega_neg", w.omega_neg},
        {"filter_calibration_corruptions", filter_calibration_corruptions},
        {"bins", eval.bins},
        {"hits_at", eval.hits_at},
        {"tie_policy", to_string(eval.ties)},
        {"clip_eps", eval.clip_eps},
        {"rank", eval.rank},
        {"pool_factor", pool_factor},
        {"checkpoint", checkpoint.string()},
    };
}

ExperimentConfig parse_config(std::string_view text, ExperimentConfig base)
{
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) {
            nl = text.size();
        }
        auto line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return base;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

std::uint64_t checkpoint_key(const DatasetSplits& splits, const ModelKind& kind, const TrainConfig& t)
{
    std::uint64_t h = derive_seed(splits.vocab().content_hash(), {triples_hash(splits.train.triples)});
    for (char c : kind.name()) {
        h = derive_seed(h, {static_cast<std::uint64_t>(c)});
    }
    auto bits = [](double v) { return std::bit_cast<std::uint64_t>(v); };
    return derive_seed(h, {t.k, t.eta, t.epochs, bits(t.learning_rate), t.batch_size,
                           static_cast<std::uint64_t>(t.loss), bits(t.margin), bits(t.adv_temperature), t.seed,
                           bits(t.adam_beta1), bits(t.adam_beta2), bits(t.adam_epsilon),
                           static_cast<std::uint64_t>(t.corruption_mode), std::uint64_t{t.normalize_entities}});
}

EmbeddingModel obtain_model(const ExperimentConfig& config, const DatasetSplits& splits, nlohmann::json* timing)
{
    const auto vocab_hash = splits.vocab().content_hash();
    auto check_loaded = [&](Checkpoint ck, const std::filesystem::path& path) {
        if (ck.vocab_hash != 0 && ck.vocab_hash != vocab_hash) {
            throw ConfigError("checkpoint " + path.string() + " was trained on a different vocabulary");
        }
        if (ck.model.num_entities() != splits.num_entities() || ck.model.num_relations() != splits.num_relations()) {
            throw ConfigError("checkpoint " + path.string() + " does not match the dataset shape");
        }
        return std::move(ck.model);
    };
    if (!config.checkpoint.empty()) {
        return check_loaded(load_checkpoint(config.checkpoint), config.checkpoint);
    }

    TrainConfig tc = config.train;
    tc.seed = config.seed;
    std::filesystem::path ckpt;
    if (!config.output_dir.empty()) {
        ckpt = config.output_dir / "checkpoints" / (hex64(checkpoint_key(splits, config.model, tc)) + ".ckpt");
        if (config.reuse_checkpoint && std::filesystem::exists(ckpt)) {
            return check_loaded(load_checkpoint(ckpt), ckpt);
        }
    }

    std::ofstream log;
    if (!config.output_dir.empty()) {
        std::filesystem::create_directories(config.output_dir);
        log.open(config.output_dir / "train_log.jsonl");
    }
    const auto started = std::chrono::steady_clock::now();
    auto result = train(splits.train, config.model, tc, [&](const EpochStats& s) {
        if (log) {
            log << nlohmann::json{{"epoch", s.epoch}, {"mean_loss", s.mean_loss}, {"wall_ms", s.wall_ms}}.dump()
                << '\n';
        }
    });
    if (timing != nullptr) {
        (*timing)["train_ms"] = elapsed_ms(started);
    }
    if (!ckpt.empty()) {
        save_checkpoint(ckpt, result.model, vocab_hash);
    }
    return std::move(result.model);
}

ScoredSplit score_split(const EmbeddingModel& model, std::span<const LabeledTriple> rows)
{
    ScoredSplit out;
    out.scores.reserve(rows.size());
    out.labels.reserve(rows.size());
    out.relations.reserve(rows.size());
    for (const auto& row : rows) {
        out.scores.push_back(score(model, row.triple));
        out.labels.push_back(row.label);
        out.relations.push_back(row.triple.predicate);
    }
    return out;
}

FittedCalibrator fit_on_validation(const ExperimentConfig& config, const DatasetSplits& splits,
                                   const EmbeddingModel& model, CalibrationMethod method,
                                   NegativeStrategy::Kind strategy, const FilterIndex& filter)
{
    std::vector<Triple> pos_triples;
    std::vector<double> pos_scores;
    std::vector<double> neg_scores;
    for (const auto& row : splits.validation) {
        if (row.label) {
            pos_triples.push_back(row.triple);
            pos_scores.push_back(score(model, row.triple));
        } else {
            neg_scores.push_back(score(model, row.triple));
        }
    }
    const auto calib_seed = derive_seed(config.seed, {0xca11b});
    FittedCalibrator fitted{PlattCalibrator{}, {}};
    if (strategy == NegativeStrategy::Kind::GroundTruth) {
        fitted = calibrate(pos_scores, NegativeStrategy::ground_truth(), method, neg_scores, {}, calib_seed);
    } else {
        const auto scorer = make_corruption_scorer(model, pos_triples,
                                                   config.filter_calibration_corruptions ? &filter : nullptr,
                                                   config.train.corruption_mode);
        fitted = calibrate(pos_scores, NegativeStrategy::synthetic(config.calibration_eta, config.alpha), method, {},
                           scorer, calib_seed);
        fitted.metadata.filtered_corruptions = config.filter_calibration_corruptions;
    }
    std::vector<Triple> source;
    source.reserve(splits.validation.size());
    for (const auto& row : splits.validation) {
        source.push_back(row.triple);
    }
    fitted.metadata.source_split_hash = triples_hash(source);
    return fitted;
}

namespace {

template <typename F>
auto run_stage(const std::string& stage, const ExperimentConfig& config, F&& body)
{
    try {
        return body();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        if (!config.output_dir.empty()) {
            std::error_code ec;
            std::filesystem::create_directories(config.output_dir, ec);
            std::ofstream out(config.output_dir / "error.json");
            out << nlohmann::json{{"stage", stage}, {"message", e.what()}}.dump(2) << '\n';
        }
        throw StageError(stage, e.what());
    }
}

ProbabilityMetrics probability_metrics(std::span<const double> probs, const std::vector<bool>& labels, double clip_eps)
{
    ProbabilityMetrics m;
    m.brier = brier_score(probs, labels);
    m.log_loss = log_loss(probs, labels, clip_eps);
    m.accuracy = classify(probs, 0.5, {}, labels).accuracy;
    return m;
}

} // namespace

ReportBundle run_pipeline(const ExperimentConfig& config)
{
    const auto splits = run_stage("load", config, [&] {
        config.validate();
        if (config.paths.train.empty()) {
            throw ConfigError("no training split configured");
        }
        return load_splits(config.paths, config.train_duplicates);
    });
    return run_pipeline(config, splits);
}

ReportBundle run_pipeline(const ExperimentConfig& config, const DatasetSplits& splits)
{
    run_stage("config", config, [&] { config.validate(); });

    ReportBundle bundle;
    const auto model = run_stage("train", config, [&] { return obtain_model(config, splits, &bundle.timing); });
    const FilterIndex filter(splits);

    std::vector<FittedCalibrator> calibrators;
    run_stage("calibrate", config, [&] {
        const auto started = std::chrono::steady_clock::now();
        for (auto strategy : config.strategies) {
            for (auto method : config.methods) {
                auto fitted = fit_on_validation(config, splits, model, method, strategy, filter);
                if (!config.output_dir.empty()) {
                    save_calibrator(config.output_dir / "calibrators" /
                                        (to_string(method) + "_" + strategy_name(strategy) + ".json"),
                                    fitted);
                }
                calibrators.push_back(std::move(fitted));
            }
        }
        bundle.timing["calibrate_ms"] = elapsed_ms(started);
    });

    run_stage("evaluate", config, [&] {
        const auto started = std::chrono::steady_clock::now();
        const auto test = score_split(model, splits.test);
        const auto n_pos = static_cast<std::size_t>(std::count(test.labels.begin(), test.labels.end(), true));
        if (n_pos == 0 || n_pos == test.labels.size()) {
            throw ConfigError("test split needs both positives and negatives; use the base-rate sweep for "
                              "positive-only test sets");
        }
        bundle.test_size = test.labels.size();
        bundle.test_positives = n_pos;

        std::vector<double> probs(test.scores.size());
        std::transform(test.scores.begin(), test.scores.end(), probs.begin(), expit);
        bundle.uncalibrated = probability_metrics(probs, test.labels, config.eval.clip_eps);
        bundle.reliability["uncalibrated"] = reliability_bins(probs, test.labels, config.eval.bins);

        for (const auto& fitted : calibrators) {
            const auto calibrated = apply_calibrator(fitted.calibrator, std::span<const double>(test.scores));
            CalibrationRow row;
            row.method = to_string(fitted.method());
            row.strategy = fitted.metadata.strategy;
            row.metrics = probability_metrics(calibrated, test.labels, config.eval.clip_eps);
            row.alpha = fitted.metadata.alpha;
            row.eta = fitted.metadata.eta;
            row.omega_pos = fitted.metadata.omega_pos;
            row.omega_neg = fitted.metadata.omega_neg;
            bundle.reliability[row.method + "_" + row.strategy] =
                reliability_bins(calibrated, test.labels, config.eval.bins);
            bundle.rows.push_back(std::move(row));
        }

        const auto valid = score_split(model, splits.validation);
        const bool valid_has_both =
            std::find(valid.labels.begin(), valid.labels.end(), true) != valid.labels.end() &&
            std::find(valid.labels.begin(), valid.labels.end(), false) != valid.labels.end();
        if (valid_has_both) {
            const auto table = learn_thresholds(valid.scores, valid.labels, valid.relations);
            bundle.relation_threshold_accuracy = classify(test.scores, table, test.relations, test.labels).accuracy;
        }

        if (config.eval.rank) {
            const auto positives = positives_of(splits.test);
            bundle.ranks = ranked_eval(model, positives, &filter, config.eval.hits_at, config.eval.ties);
        }
        bundle.timing["evaluate_ms"] = elapsed_ms(started);
    });

    bundle.config = config.to_json();
    bundle.versions = {{"kgcal", kVersion}, {"report_schema", kReportSchemaVersion}};

    if (!config.output_dir.empty()) {
        run_stage("report", config, [&] { emit_report(bundle, config.output_dir); });
    }
    return bundle;
}

std::vector<Triple> build_negative_pool(std::span<const Triple> positives, const FilterIndex& filter,
                                        std::size_t entity_count, std::size_t cap, std::uint64_t seed)
{
    if (entity_count < 2) {
        throw SamplingError("need at least 2 entities to build a negative pool");
    }
    std::vector<Triple> pool;
    if (positives.empty() || cap == 0) {
        return pool;
    }
    std::unordered_set<Triple, TripleHash> seen;
    Rng rng(seed);
    const std::size_t max_attempts = 50 * cap + 1000;
    for (std::size_t attempt = 0; attempt < max_attempts && pool.size() < cap; ++attempt) {
        Triple c = positives[uniform_index(rng, positives.size())];
        const bool subject_side = (rng() >> 63) != 0;
        EntityId& slot = subject_side ? c.subject : c.object;
        const auto x = static_cast<EntityId>(uniform_index(rng, entity_count - 1));
        slot = x >= slot ? x + 1 : x;
        if (!filter.contains(c) && seen.insert(c).second) {
            pool.push_back(c);
        }
    }
    return pool;
}

std::pair<std::size_t, std::size_t> base_rate_counts(double alpha, std::size_t max_positives,
                                                     std::size_t max_negatives)
{
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw DomainError("alpha must lie in (0, 1), got " + format_double(alpha));
    }
    if (max_positives == 0 || max_negatives == 0) {
        throw SamplingError("base-rate evaluation needs positives and negatives");
    }
    for (std::size_t q = 2; q <= 1000; ++q) {
        const auto r = static_cast<std::size_t>(std::llround(alpha * static_cast<double>(q)));
        if (r == 0 || r >= q || std::abs(static_cast<double>(r) / static_cast<double>(q) - alpha) > 1e-12) {
            continue;
        }
        const std::size_t m = std::min(max_positives / r, max_negatives / (q - r));
        if (m >= 1) {
            return {m * r, m * (q - r)};
        }
        break;
    }
    std::size_t p = max_positives;
    auto n = static_cast<std::size_t>(std::llround(static_cast<double>(p) * (1.0 - alpha) / alpha));
    if (n > max_negatives) {
        n = max_negatives;
        p = static_cast<std::size_t>(std::llround(static_cast<double>(n) * alpha / (1.0 - alpha)));
    }
    return {std::clamp<std::size_t>(p, 1, max_positives), std::clamp<std::size_t>(n, 1, max_negatives)};
}

namespace {

// First `count` entries of a seeded shuffle of [0, n).
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, std::uint64_t seed)
{
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
    }
    idx.resize(count);
    return idx;
}

} // namespace

std::vector<SweepRow> run_base_rate_sweep(const ExperimentConfig& config, const DatasetSplits& splits,
                                          const EmbeddingModel& model, std::span<const double> alphas)
{
    for (double a : alphas) {
        if (!(a > 0.0 && a < 1.0)) {
            throw DomainError("sweep alpha must lie in (0, 1), got " + format_double(a));
        }
    }
    const FilterIndex filter(splits);
    const auto test_pos = positives_of(splits.test);
    if (test_pos.empty()) {
        throw ConfigError("base-rate sweep needs test positives");
    }
    const auto cap = static_cast<std::size_t>(std::ceil(config.pool_factor * static_cast<double>(test_pos.size())));
    const auto pool = build_negative_pool(test_pos, filter, model.num_entities(), cap,
                                          derive_seed(config.seed, {0x9001}));
    const auto pos_scores = score_all(model, test_pos);
    const auto pool_scores = score_all(model, pool);

    std::vector<SweepRow> rows;
    for (double alpha : alphas) {
        ExperimentConfig cfg = config;
        cfg.alpha = alpha;
        std::vector<FittedCalibrator> calibrators;
        for (auto method : config.methods) {
            calibrators.push_back(
                fit_on_validation(cfg, splits, model, method, NegativeStrategy::Kind::Synthetic, filter));
        }

        const auto [n_pos, n_neg] = base_rate_counts(alpha, test_pos.size(), pool.size());
        std::vector<double> scores;
        std::vector<bool> labels;
        for (auto i : sample_indices(test_pos.size(), n_pos, derive_seed(config.seed, alpha))) {
            scores.push_back(pos_scores[i]);
            labels.push_back(true);
        }
        for (auto i : sample_indices(pool.size(), n_neg, derive_seed(derive_seed(config.seed, {0x2e6}), alpha))) {
            scores.push_back(pool_scores[i]);
            labels.push_back(false);
        }

        auto add_row = [&](std::string name, const std::vector<double>& probs) {
            rows.push_back({alpha, std::move(name), brier_score(probs, labels),
                            log_loss(probs, labels, config.eval.clip_eps), n_pos, n_neg});
        };
        for (const auto& fitted : calibrators) {
            add_row(to_string(fitted.method()), apply_calibrator(fitted.calibrator, std::span<const double>(scores)));
        }
        std::vector<double> probs(scores.size());
        std::transform(scores.begin(), scores.end(), probs.begin(), expit);
        add_row("uncalibrated", probs);
        add_row("baseline", std::vector<double>(scores.size(), alpha));
    }
    return rows;
}

std::vector<SensitivityCell> run_sensitivity(const ExperimentConfig& config, const DatasetSplits& splits,
                                             std::span<const std::size_t> etas, std::span<const std::size_t> ks)
{
    const std::set<std::size_t> eta_set(etas.begin(), etas.end());
    const std::set<std::size_t> k_set(ks.begin(), ks.end());
    const FilterIndex filter(splits);
    const auto strategy = config.strategies.empty() ? NegativeStrategy::Kind::Synthetic : config.strategies.front();

    std::vector<SensitivityCell> cells;
    for (std::size_t eta : eta_set) {
        for (std::size_t k : k_set) {
            SensitivityCell cell;
            cell.eta = eta;
            cell.k = k;
            try {
                ExperimentConfig cfg = config;
                cfg.train.eta = eta;
                cfg.calibration_eta = eta;
                cfg.train.k = k;
                cfg.checkpoint.clear();
                cfg.validate();
                const auto model = obtain_model(cfg, splits);
                const auto test = score_split(model, splits.test);
                std::vector<double> probs(test.scores.size());
                std::transform(test.scores.begin(), test.scores.end(), probs.begin(), expit);
                cell.brier_uncalibrated = brier_score(probs, test.labels);
                for (auto method : {CalibrationMethod::Platt, CalibrationMethod::Isotonic}) {
                    const auto fitted = fit_on_validation(cfg, splits, model, method, strategy, filter);
                    const double b = brier_score(
                        apply_calibrator(fitted.calibrator, std::span<const double>(test.scores)), test.labels);
                    (method == CalibrationMethod::Platt ? cell.brier_platt : cell.brier_isotonic) = b;
                }
            } catch (const std::exception& e) {
                cell.error = e.what();
            }
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

void write_reliability_csv(const std::filesystem::path& path, const ReliabilityDiagram& diagram)
{
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "bin_low,bin_high,mean_predicted,frequency,count\n";
    for (const auto& b : diagram.bins) {
        out << format_double(b.bin_low) << ',' << format_double(b.bin_high) << ',' << format_double(b.mean_predicted)
            << ',' << format_double(b.frequency) << ',' << b.count << '\n';
    }
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

ReliabilityDiagram read_reliability_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::string line;
    std::getline(in, line);
    if (trim(line) != "bin_low,bin_high,mean_predicted,frequency,count") {
        throw IoError("unexpected reliability CSV header in " + path.string());
    }
    ReliabilityDiagram d;
    while (std::getline(in, line)) {
        if (trim(line).empty()) {
            continue;
        }
        const auto fields = split_list(line);
        if (fields.size() != 5) {
            throw IoError("malformed reliability CSV row in " + path.string());
        }
        ReliabilityBin b;
        b.bin_low = parse_real("bin_low", fields[0]);
        b.bin_high = parse_real("bin_high", fields[1]);
        b.mean_predicted = parse_real("mean_predicted", fields[2]);
        b.frequency = parse_real("frequency", fields[3]);
        b.count = parse_size("count", fields[4]);
        d.bins.push_back(b);
    }
    d.n_bins = d.bins.size();
    return d;
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows)
{
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "alpha,predictor,brier,log_loss,positives,negatives\n";
    for (const auto& r : rows) {
        out << format_double(r.alpha) << ',' << r.predictor << ',' << format_double(r.brier) << ','
            << format_double(r.log_loss) << ',' << r.positives << ',' << r.negatives << '\n';
    }
}

void write_sensitivity_csv(const std::filesystem::path& path, std::span<const SensitivityCell> cells)
{
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "eta,k,brier_uncalibrated,brier_platt,brier_isotonic,error\n";
    for (const auto& c : cells) {
        std::string err = c.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        out << c.eta << ',' << c.k << ',' << format_double(c.brier_uncalibrated) << ','
            << format_double(c.brier_platt) << ',' << format_double(c.brier_isotonic) << ',' << err << '\n';
    }
}

nlohmann::json to_json(const RankReport& report)
{
    nlohmann::json hits = nlohmann::json::object();
    for (const auto& [n, v] : report.hits) {
        hits[std::to_string(n)] = v;
    }
    return {{"mr", report.mr},
            {"mrr", report.mrr},
            {"hits", hits},
            {"mode", report.filtered ? "filtered" : "raw"},
            {"tie_policy", report.tie_policy},
            {"num_queries", report.num_queries}};
}

RankReport rank_report_from_json(const nlohmann::json& j)
{
    RankReport r;
    r.mr = j.at("mr").get<double>();
    r.mrr = j.at("mrr").get<double>();
    for (const auto& [n, v] : j.at("hits").items()) {
        r.hits[std::stoul(n)] = v.get<double>();
    }
    r.filtered = j.at("mode").get<std::string>() == "filtered";
    r.tie_policy = j.at("tie_policy").get<std::string>();
    r.num_queries = j.at("num_queries").get<std::size_t>();
    return r;
}

namespace {

nlohmann::json to_json(const ProbabilityMetrics& m)
{
    return {{"brier", m.brier}, {"log_loss", m.log_loss}, {"accuracy", m.accuracy}};
}

ProbabilityMetrics metrics_from_json(const nlohmann::json& j)
{
    return {j.at("brier").get<double>(), j.at("log_loss").get<double>(), j.at("accuracy").get<double>()};
}

} // namespace

void emit_report(const ReportBundle& bundle, const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());
    }
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : bundle.rows) {
        rows.push_back({{"method", r.method},
                        {"strategy", r.strategy},
                        {"metrics", to_json(r.metrics)},
                        {"alpha", r.alpha},
                        {"eta", r.eta},
                        {"omega_pos", r.omega_pos},
                        {"omega_neg", r.omega_neg}});
    }
    nlohmann::json reliability_files = nlohmann::json::object();
    for (const auto& [name, diagram] : bundle.reliability) {
        const std::string file = "reliability_" + name + ".csv";
        write_reliability_csv(dir / file, diagram);
        reliability_files[name] = file;
    }
    const nlohmann::json summary = {
        {"schema_version", bundle.schema_version},
        {"versions", bundle.versions},
        {"test_size", bundle.test_size},
        {"test_positives", bundle.test_positives},
        {"uncalibrated", to_json(bundle.uncalibrated)},
        {"calibrated", rows},
        {"relation_threshold_accuracy",
         bundle.relation_threshold_accuracy ? nlohmann::json(*bundle.relation_threshold_accuracy) : nlohmann::json()},
        {"reliability_files", reliability_files},
        {"settings",
         {{"alpha", bundle.config.value("alpha", 0.5)},
          {"eta", bundle.config.value("calibration_eta", std::size_t{0})},
          {"omega_pos", bundle.config.value("omega_pos", 1.0)},
          {"omega_neg", bundle.config.value("omega_neg", 1.0)},
          {"tie_policy", bundle.config.value("tie_policy", std::string("pessimistic"))},
          {"bins", bundle.config.value("bins", std::size_t{10})},
          {"loss", bundle.config.value("loss", std::string())}}},
        {"timing", bundle.timing},
    };
    write_json_file(dir / "summary.json", summary);
    write_json_file(dir / "ranks.json", bundle.ranks ? to_json(*bundle.ranks) : nlohmann::json());
    write_json_file(dir / "config_echo.json", bundle.config);
}

ReportBundle load_report(const std::filesystem::path& dir)
{
    const auto summary = read_json_file(dir / "summary.json");
    ReportBundle b;
    b.schema_version = summary.at("schema_version").get<int>();
    if (b.schema_version != kReportSchemaVersion) {
        throw IoError("unsupported report schema version " + std::to_string(b.schema_version));
    }
    b.versions = summary.at("versions");
    b.test_size = summary.at("test_size").get<std::size_t>();
    b.test_positives = summary.at("test_positives").get<std::size_t>();
    b.uncalibrated = metrics_from_json(summary.at("uncalibrated"));
    for (const auto& r : summary.at("calibrated")) {
        CalibrationRow row;
        row.method = r.at("method").get<std::string>();
        row.strategy = r.at("strategy").get<std::string>();
        row.metrics = metrics_from_json(r.at("metrics"));
        row.alpha = r.at("alpha").get<double>();
        row.eta = r.at("eta").get<std::size_t>();
        row.omega_pos = r.at("omega_pos").get<double>();
        row.omega_neg = r.at("omega_neg").get<double>();
        b.rows.push_back(std::move(row));
    }
    if (const auto& acc = summary.at("relation_threshold_accuracy"); !acc.is_null()) {
        b.relation_threshold_accuracy = acc.get<double>();
    }
    for (const auto& [name, file] : summary.at("reliability_files").items()) {
        b.reliability[name] = read_reliability_csv(dir / file.get<std::string>());
    }
    if (const auto ranks = read_json_file(dir / "ranks.json"); !ranks.is_null()) {
        b.ranks = rank_report_from_json(ranks);
    }
    b.config = read_json_file(dir / "config_echo.json");
    b.timing = summary.at("timing");
    return b;
}

} // namespace kgcal
