#pragma once

#include "kgcal/calibration.hpp"
#include "kgcal/errors.hpp"
#include "kgcal/graph.hpp"
#include "kgcal/metrics.hpp"
#include "kgcal/model.hpp"
#include "kgcal/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kgcal {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr int kReportSchemaVersion = 1;

// Name of the environment variable holding the default output root.
inline constexpr const char* kOutputRootEnv = "KGCAL_OUTPUT_ROOT";

struct EvalOptions {
    std::size_t bins = 10;
    std::vector<std::size_t> hits_at{1, 3, 10};
    TiePolicy ties = TiePolicy::Pessimistic;
    double clip_eps = 1e-15;
    // Filtered ranking metrics on the test positives.
    bool rank = true;
};

struct ExperimentConfig {
    SplitPaths paths;
    DuplicatePolicy train_duplicates = DuplicatePolicy::Reject;
    ModelKind model = ModelKind::transe(2);
    TrainConfig train;
    std::vector<CalibrationMethod> methods{CalibrationMethod::Platt, CalibrationMethod::Isotonic};
    std::vector<NegativeStrategy::Kind> strategies{NegativeStrategy::Kind::GroundTruth,
                                                   NegativeStrategy::Kind::Synthetic};
    // Base rate and corruption rate of the synthetic strategy.
    double alpha = 0.5;
    std::size_t calibration_eta = 20;
    bool filter_calibration_corruptions = false;
    EvalOptions eval;
    std::filesystem::path output_dir;
    // Seeds training, calibration corruptions and sweep sampling.
    std::uint64_t seed = 0;
    // Closed-world negative pool size as a multiple of the test positives.
    double pool_factor = 10.0;
    // Load this checkpoint instead of training.
    std::filesystem::path checkpoint;
    bool reuse_checkpoint = true;
    std::vector<double> sweep_alphas;
    std::vector<std::size_t> sweep_etas{2, 10, 20};
    std::vector<std::size_t> sweep_ks{8, 32};

    // Sets one `key=value` setting; throws ConfigError on unknown keys or bad values.
    void set(std::string_view key, std::string_view value);
    void validate() const;
    nlohmann::json to_json() const;
};

// Flat `key = value` lines; '#' starts a comment.
ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});

// alpha = 0.05, 0.10, ..., 0.95.
std::vector<double> default_sweep_alphas();

// Error raised inside a named pipeline stage.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what) : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

struct ProbabilityMetrics {
    double brier = 0.0;
    double log_loss = 0.0;
    // At the natural threshold 0.5.
    double accuracy = 0.0;

    friend bool operator==(const ProbabilityMetrics&, const ProbabilityMetrics&) = default;
};

struct CalibrationRow {
    std::string method;
    std::string strategy;
    ProbabilityMetrics metrics;
    double alpha = 0.5;
    std::size_t eta = 0;
    double omega_pos = 1.0;
    double omega_neg = 1.0;

    friend bool operator==(const CalibrationRow&, const CalibrationRow&) = default;
};

struct ReportBundle {
    int schema_version = kReportSchemaVersion;
    std::size_t test_size = 0;
    std::size_t test_positives = 0;
    ProbabilityMetrics uncalibrated;
    std::vector<CalibrationRow> rows;
    // Raw-score accuracy with per-relation thresholds learned on validation.
    std::optional<double> relation_threshold_accuracy;
    // Keyed by "uncalibrated" or "<method>_<strategy>".
    std::map<std::string, ReliabilityDiagram> reliability;
    std::optional<RankReport> ranks;
    nlohmann::json config;
    nlohmann::json versions;
    // Wall-clock measurements; the only non-reproducible part of a bundle.
    nlohmann::json timing;

    friend bool operator==(const ReportBundle&, const ReportBundle&) = default;
};

// Content hash of (training data, model kind, training config).
std::uint64_t checkpoint_key(const DatasetSplits& splits, const ModelKind& kind, const TrainConfig& train);

// Loads config.checkpoint, reuses a cached checkpoint under output_dir, or trains
// (writing the checkpoint and train_log.jsonl to output_dir when it is set).
EmbeddingModel obtain_model(const ExperimentConfig& config, const DatasetSplits& splits, nlohmann::json* timing = nullptr);

// Scores for the given rows, plus labels and relations in the same order.
struct ScoredSplit {
    std::vector<double> scores;
    std::vector<bool> labels;
    std::vector<RelationId> relations;
};
ScoredSplit score_split(const EmbeddingModel& model, std::span<const LabeledTriple> rows);

// Fits one calibrator on the validation split.
FittedCalibrator fit_on_validation(const ExperimentConfig& config, const DatasetSplits& splits,
                                   const EmbeddingModel& model, CalibrationMethod method,
                                   NegativeStrategy::Kind strategy, const FilterIndex& filter);

// Train -> calibrate on validation -> evaluate on test. Writes the bundle to
// config.output_dir when it is set.
ReportBundle run_pipeline(const ExperimentConfig& config);
ReportBundle run_pipeline(const ExperimentConfig& config, const DatasetSplits& splits);

struct SweepRow {
    double alpha = 0.0;
    // "platt", "isotonic", "uncalibrated" or "baseline".
    std::string predictor;
    double brier = 0.0;
    double log_loss = 0.0;
    std::size_t positives = 0;
    std::size_t negatives = 0;

    friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

// Closed-world negatives: uniform one-sided corruptions of `positives` not in `filter`,
// deduplicated, at most `cap` of them.
std::vector<Triple> build_negative_pool(std::span<const Triple> positives, const FilterIndex& filter,
                                        std::size_t entity_count, std::size_t cap, std::uint64_t seed);

// Positive and negative counts whose ratio is exactly alpha when alpha is a fraction with
// denominator <= 1000, under the given availability limits.
std::pair<std::size_t, std::size_t> base_rate_counts(double alpha, std::size_t max_positives,
                                                     std::size_t max_negatives);

std::vector<SweepRow> run_base_rate_sweep(const ExperimentConfig& config, const DatasetSplits& splits,
                                          const EmbeddingModel& model, std::span<const double> alphas);

struct SensitivityCell {
    std::size_t eta = 0;
    std::size_t k = 0;
    double brier_uncalibrated = 0.0;
    double brier_platt = 0.0;
    double brier_isotonic = 0.0;
    // Empty on success.
    std::string error;

    friend bool operator==(const SensitivityCell&, const SensitivityCell&) = default;
};

// Trains and calibrates once per distinct (eta, k); the first configured strategy is used.
std::vector<SensitivityCell> run_sensitivity(const ExperimentConfig& config, const DatasetSplits& splits,
                                             std::span<const std::size_t> etas, std::span<const std::size_t> ks);

// summary.json, reliability_<name>.csv, ranks.json, config_echo.json.
void emit_report(const ReportBundle& bundle, const std::filesystem::path& dir);
ReportBundle load_report(const std::filesystem::path& dir);

void write_reliability_csv(const std::filesystem::path& path, const ReliabilityDiagram& diagram);
ReliabilityDiagram read_reliability_csv(const std::filesystem::path& path);
void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);
void write_sensitivity_csv(const std::filesystem::path& path, std::span<const SensitivityCell> cells);

nlohmann::json to_json(const RankReport& report);
RankReport rank_report_from_json(const nlohmann::json& j);

// Shortest round-trip decimal form.
std::string format_double(double v);

} // namespace kgcal
