#pragma once

#include "kgcal/errors.hpp"
#include "kgcal/graph.hpp"
#include "kgcal/model.hpp"
#include "kgcal/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace kgcal {

// Logistic sigmoid 1 / (1 + exp(-x)); the uncalibrated probability of a raw score.
double expit(double x);

// Sample weights that make a synthetic fit sample reproduce the base rate alpha:
// positives get omega_pos = eta, corruptions get omega_neg = 1/alpha - 1.
struct CalibrationWeights {
    double omega_pos = 1.0;
    double omega_neg = 1.0;
    double alpha = 0.5;
    std::size_t eta = 1;
};

CalibrationWeights calibration_weights(double alpha, std::size_t eta);

// q = sigmoid(a * score + b). a >= 0 when higher raw scores mean more probable.
struct PlattCalibrator {
    double a = 1.0;
    double b = 0.0;

    bool increasing() const noexcept { return a >= 0.0; }
    friend bool operator==(const PlattCalibrator&, const PlattCalibrator&) = default;
};

// Non-decreasing step function: values[i] applies on [breakpoints[i], breakpoints[i+1]).
struct IsotonicCalibrator {
    std::vector<double> breakpoints;
    std::vector<double> values;
    // Fitted on a single class; the function is the constant 0 or 1.
    bool degenerate = false;

    friend bool operator==(const IsotonicCalibrator&, const IsotonicCalibrator&) = default;
};

using Calibrator = std::variant<PlattCalibrator, IsotonicCalibrator>;

enum class CalibrationMethod { Platt, Isotonic };

CalibrationMethod parse_calibration_method(std::string_view name);
std::string to_string(CalibrationMethod method);

// Platt's Newton iteration did not reach the gradient tolerance.
class ConvergenceError : public FitError {
public:
    ConvergenceError(const std::string& what, PlattCalibrator last) : FitError(what), last_(last) {}
    const PlattCalibrator& last_iterate() const noexcept { return last_; }

private:
    PlattCalibrator last_;
};

struct PlattFitOptions {
    // On the gradient of the weight-normalized objective.
    double tolerance = 1e-8;
    std::size_t max_iterations = 100;
};

struct PlattFitTrace {
    PlattCalibrator calibrator;
    std::size_t iterations = 0;
    double gradient_norm = 0.0;
    // Objective value before the first and after every accepted step.
    std::vector<double> objective;
};

// Weighted NLL of sigmoid(a*s + b) against the smoothed targets
// t+ = (W+ + 1)/(W+ + 2), t- = 1/(W- + 2), with W+- the total class weights.
PlattFitTrace fit_platt_traced(std::span<const double> scores, const std::vector<bool>& labels,
                               std::span<const double> weights, const PlattFitOptions& options = {});
PlattCalibrator fit_platt(std::span<const double> scores, const std::vector<bool>& labels,
                          std::span<const double> weights, const PlattFitOptions& options = {});

// Weighted pool-adjacent-violators on score-sorted samples, ties pre-pooled.
IsotonicCalibrator fit_isotonic(std::span<const double> scores, const std::vector<bool>& labels,
                                std::span<const double> weights);

double apply_calibrator(const Calibrator& calibrator, double score);
std::vector<double> apply_calibrator(const Calibrator& calibrator, std::span<const double> scores);

struct NegativeStrategy {
    enum class Kind { GroundTruth, Synthetic };

    Kind kind = Kind::GroundTruth;
    std::size_t eta = 20;
    double alpha = 0.5;

    static NegativeStrategy ground_truth() { return {}; }
    static NegativeStrategy synthetic(std::size_t eta, double alpha);

    std::string name() const;
};

NegativeStrategy::Kind parse_strategy_kind(std::string_view name);

// Scores for eta corruptions of every calibration positive, grouped per positive.
using CorruptionScorer = std::function<std::vector<double>(std::size_t eta, std::uint64_t seed)>;

// Corrupts `positives` with sample_corruptions and scores them with `model`. With a
// filter, corruptions that are known positives are redrawn.
CorruptionScorer make_corruption_scorer(const EmbeddingModel& model, std::vector<Triple> positives,
                                        const FilterIndex* filter = nullptr,
                                        CorruptionMode mode = CorruptionMode::UniformEntities);

struct FitSample {
    std::vector<double> scores;
    std::vector<bool> labels;
    std::vector<double> weights;
};

// The exact sample a calibrator is fitted on for the given strategy.
FitSample build_fit_sample(std::span<const double> positive_scores, const NegativeStrategy& strategy,
                           std::span<const double> negative_scores, const CorruptionScorer& corruption_scorer,
                           std::uint64_t seed);

struct CalibratorMetadata {
    std::string strategy = "ground-truth";
    double alpha = 0.5;
    std::size_t eta = 0;
    double omega_pos = 1.0;
    double omega_neg = 1.0;
    std::uint64_t seed = 0;
    std::uint64_t source_split_hash = 0;
    bool filtered_corruptions = false;
    bool degenerate = false;
    std::size_t num_positive = 0;
    std::size_t num_negative = 0;

    friend bool operator==(const CalibratorMetadata&, const CalibratorMetadata&) = default;
};

struct FittedCalibrator {
    Calibrator calibrator;
    CalibratorMetadata metadata;

    CalibrationMethod method() const noexcept
    {
        return std::holds_alternative<PlattCalibrator>(calibrator) ? CalibrationMethod::Platt
                                                                   : CalibrationMethod::Isotonic;
    }
    friend bool operator==(const FittedCalibrator&, const FittedCalibrator&) = default;
};

// GroundTruth: unit weights on positives + negative_scores. Synthetic: eta scored
// corruptions per positive, weighted by calibration_weights(alpha, eta).
FittedCalibrator calibrate(std::span<const double> positive_scores, const NegativeStrategy& strategy,
                           CalibrationMethod method, std::span<const double> negative_scores,
                           const CorruptionScorer& corruption_scorer, std::uint64_t seed);

nlohmann::json to_json(const FittedCalibrator& fitted);
FittedCalibrator calibrator_from_json(const nlohmann::json& j);
void save_calibrator(const std::filesystem::path& path, const FittedCalibrator& fitted);
FittedCalibrator load_calibrator(const std::filesystem::path& path);

// Hash of a sequence of triples, recorded as the calibration source split.
std::uint64_t triples_hash(std::span<const Triple> triples);

} // namespace kgcal
