#include "kgcal/calibration.hpp"

#include "kgcal/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace kgcal {

double expit(double x)
{
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

CalibrationWeights calibration_weights(double alpha, std::size_t eta)
{
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw DomainError("base rate alpha must lie in (0, 1), got " + std::to_string(alpha));
    }
    if (eta < 1) {
        throw DomainError("corruption rate eta must be >= 1");
    }
    return {static_cast<double>(eta), 1.0 / alpha - 1.0, alpha, eta};
}

CalibrationMethod parse_calibration_method(std::string_view name)
{
    if (name == "platt") {
        return CalibrationMethod::Platt;
    }
    if (name == "isotonic") {
        return CalibrationMethod::Isotonic;
    }
    throw ConfigError("unknown calibration method '" + std::string(name) + "'");
}

std::string to_string(CalibrationMethod method)
{
    return method == CalibrationMethod::Platt ? "platt" : "isotonic";
}

namespace {

void check_fit_inputs(std::span<const double> scores, const std::vector<bool>& labels, std::span<const double> weights)
{
    if (scores.size() != labels.size() || scores.size() != weights.size()) {
        throw ContractError("scores, labels and weights must have equal lengths");
    }
    if (scores.empty()) {
        throw ContractError("cannot fit a calibrator on zero samples");
    }
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) {
            throw ContractError("non-finite score at index " + std::to_string(i));
        }
        if (!(weights[i] > 0.0) || !std::isfinite(weights[i])) {
            throw ContractError("sample weights must be finite and > 0");
        }
    }
}

double softplus(double x)
{
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

struct PlattObjective {
    std::span<const double> scores;
    std::vector<double> targets;
    std::span<const double> weights;
    double total_weight = 0.0;

    // Mean weighted cross-entropy; softplus(z) - t*z is -t log s(z) - (1-t) log(1-s(z)).
    double value(double a, double b) const
    {
        double acc = 0.0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const double z = a * scores[i] + b;
            acc += weights[i] * (softplus(z) - targets[i] * z);
        }
        return acc / total_weight;
    }

    void derivatives(double a, double b, double& ga, double& gb, double& haa, double& hab, double& hbb) const
    {
        ga = gb = haa = hab = hbb = 0.0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const double s = scores[i];
            const double p = expit(a * s + b);
            const double r = weights[i] * (p - targets[i]);
            const double c = weights[i] * p * (1.0 - p);
            ga += r * s;
            gb += r;
            haa += c * s * s;
            hab += c * s;
            hbb += c;
        }
        ga /= total_weight;
        gb /= total_weight;
        haa /= total_weight;
        hab /= total_weight;
        hbb /= total_weight;
    }
};

} // namespace

PlattFitTrace fit_platt_traced(std::span<const double> scores, const std::vector<bool>& labels,
                               std::span<const double> weights, const PlattFitOptions& options)
{
    check_fit_inputs(scores, labels, weights);
    double w_pos = 0.0;
    double w_neg = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        (labels[i] ? w_pos : w_neg) += weights[i];
    }
    if (w_pos == 0.0 || w_neg == 0.0) {
        throw FitError("Platt scaling needs both positive and negative samples");
    }

    PlattObjective f{scores, {}, weights, w_pos + w_neg};
    const double t_pos = (w_pos + 1.0) / (w_pos + 2.0);
    const double t_neg = 1.0 / (w_neg + 2.0);
    f.targets.reserve(labels.size());
    for (bool y : labels) {
        f.targets.push_back(y ? t_pos : t_neg);
    }

    PlattFitTrace trace;
    double a = 0.0;
    double b = std::log((w_pos + 1.0) / (w_neg + 1.0));
    double value = f.value(a, b);
    trace.objective.push_back(value);

    for (std::size_t it = 0;; ++it) {
        double ga, gb, haa, hab, hbb;
        f.derivatives(a, b, ga, gb, haa, hab, hbb);
        trace.gradient_norm = std::hypot(ga, gb);
        if (trace.gradient_norm < options.tolerance) {
            trace.calibrator = {a, b};
            trace.iterations = it;
            return trace;
        }
        if (it == options.max_iterations) {
            throw ConvergenceError("Platt fit did not converge in " + std::to_string(it) + " iterations (|g| = " +
                                       std::to_string(trace.gradient_norm) + ")",
                                   {a, b});
        }

        // Ridge keeps the system solvable when all scores coincide.
        const double ridge = 1e-12 * (haa + hbb) + 1e-300;
        const double det = (haa + ridge) * (hbb + ridge) - hab * hab;
        const double da = -((hbb + ridge) * ga - hab * gb) / det;
        const double db = -(-hab * ga + (haa + ridge) * gb) / det;
        const double slope = ga * da + gb * db;

        // Backtracking: halve the Newton step until the Armijo condition holds.
        double step = 1.0;
        bool accepted = false;
        while (step >= 1e-10) {
            const double na = a + step * da;
            const double nb = b + step * db;
            const double nv = f.value(na, nb);
            if (nv <= value + 1e-4 * step * slope) {
                a = na;
                b = nb;
                value = nv;
                accepted = true;
                break;
            }
            step /= 2.0;
        }
        if (!accepted) {
            // The objective is flat to machine precision around (a, b).
            if (trace.gradient_norm < 1e-6) {
                trace.calibrator = {a, b};
                trace.iterations = it;
                return trace;
            }
            throw ConvergenceError("Platt line search failed (|g| = " + std::to_string(trace.gradient_norm) + ")",
                                   {a, b});
        }
        trace.objective.push_back(value);
    }
}

PlattCalibrator fit_platt(std::span<const double> scores, const std::vector<bool>& labels,
                          std::span<const double> weights, const PlattFitOptions& options)
{
    return fit_platt_traced(scores, labels, weights, options).calibrator;
}

IsotonicCalibrator fit_isotonic(std::span<const double> scores, const std::vector<bool>& labels,
                                std::span<const double> weights)
{
    check_fit_inputs(scores, labels, weights);

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });

    struct Block {
        double start;
        double weight;
        double weighted_sum;
        double mean() const { return weighted_sum / weight; }
    };

    // Tied scores form one block before pooling.
    std::vector<Block> tied;
    for (std::size_t idx : order) {
        const double y = labels[idx] ? 1.0 : 0.0;
        if (!tied.empty() && tied.back().start == scores[idx]) {
            tied.back().weight += weights[idx];
            tied.back().weighted_sum += weights[idx] * y;
        } else {
            tied.push_back({scores[idx], weights[idx], weights[idx] * y});
        }
    }

    std::vector<Block> stack;
    stack.reserve(tied.size());
    for (const Block& blk : tied) {
        stack.push_back(blk);
        while (stack.size() > 1 && stack[stack.size() - 2].mean() > stack.back().mean()) {
            Block top = stack.back();
            stack.pop_back();
            stack.back().weight += top.weight;
            stack.back().weighted_sum += top.weighted_sum;
        }
    }

    IsotonicCalibrator iso;
    iso.breakpoints.reserve(stack.size());
    iso.values.reserve(stack.size());
    for (const Block& blk : stack) {
        iso.breakpoints.push_back(blk.start);
        iso.values.push_back(std::clamp(blk.mean(), 0.0, 1.0));
    }
    const bool any_pos = std::find(labels.begin(), labels.end(), true) != labels.end();
    const bool any_neg = std::find(labels.begin(), labels.end(), false) != labels.end();
    iso.degenerate = !(any_pos && any_neg);
    return iso;
}

double apply_calibrator(const Calibrator& calibrator, double score)
{
    return std::visit(
        [score](const auto& c) -> double {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, PlattCalibrator>) {
                return expit(c.a * score + c.b);
            } else {
                if (c.values.empty()) {
                    throw ContractError("isotonic calibrator is not fitted");
                }
                const auto it = std::upper_bound(c.breakpoints.begin(), c.breakpoints.end(), score);
                if (it == c.breakpoints.begin()) {
                    return c.values.front();
                }
                return c.values[static_cast<std::size_t>(it - c.breakpoints.begin()) - 1];
            }
        },
        calibrator);
}

std::vector<double> apply_calibrator(const Calibrator& calibrator, std::span<const double> scores)
{
    std::vector<double> out;
    out.reserve(scores.size());
    for (double s : scores) {
        out.push_back(apply_calibrator(calibrator, s));
    }
    return out;
}

NegativeStrategy NegativeStrategy::synthetic(std::size_t eta, double alpha)
{
    if (eta < 1) {
        throw ConfigError("synthetic strategy requires eta >= 1");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw DomainError("synthetic strategy requires alpha in (0, 1)");
    }
    return {Kind::Synthetic, eta, alpha};
}

std::string NegativeStrategy::name() const
{
    return kind == Kind::GroundTruth ? "ground-truth" : "synthetic";
}

NegativeStrategy::Kind parse_strategy_kind(std::string_view name)
{
    if (name == "ground-truth" || name == "ground_truth") {
        return NegativeStrategy::Kind::GroundTruth;
    }
    if (name == "synthetic") {
        return NegativeStrategy::Kind::Synthetic;
    }
    throw ConfigError("unknown negative strategy '" + std::string(name) + "'");
}

CorruptionScorer make_corruption_scorer(const EmbeddingModel& model, std::vector<Triple> positives,
                                        const FilterIndex* filter, CorruptionMode mode)
{
    return [&model, positives = std::move(positives), filter, mode](std::size_t eta, std::uint64_t seed) {
        auto batch = sample_corruptions(positives, eta, model.num_entities(), seed, mode);
        if (filter != nullptr) {
            for (std::size_t n = 0; n < batch.negatives.size(); ++n) {
                Triple& neg = batch.negatives[n];
                if (!filter->contains(neg)) {
                    continue;
                }
                const Triple& src = positives[n / eta];
                Rng rng(derive_seed(seed, {0xf1, n}));
                for (int attempt = 0; attempt < 100 && filter->contains(neg); ++attempt) {
                    const auto x = static_cast<EntityId>(uniform_index(rng, model.num_entities() - 1));
                    if (batch.corrupted_side[n] == CorruptedSide::Subject) {
                        neg.subject = x >= src.subject ? x + 1 : x;
                    } else {
                        neg.object = x >= src.object ? x + 1 : x;
                    }
                }
            }
        }
        return score_all(model, batch.negatives);
    };
}

FitSample build_fit_sample(std::span<const double> positive_scores, const NegativeStrategy& strategy,
                           std::span<const double> negative_scores, const CorruptionScorer& corruption_scorer,
                           std::uint64_t seed)
{
    if (positive_scores.empty()) {
        throw ConfigError("calibration needs at least one positive score");
    }
    FitSample sample;
    double w_pos = 1.0;
    double w_neg = 1.0;
    std::vector<double> negatives;
    if (strategy.kind == NegativeStrategy::Kind::GroundTruth) {
        if (negative_scores.empty()) {
            throw ConfigError("ground-truth calibration requires labeled negative scores");
        }
        negatives.assign(negative_scores.begin(), negative_scores.end());
    } else {
        if (!corruption_scorer) {
            throw ConfigError("synthetic calibration requires a corruption scorer");
        }
        const auto w = calibration_weights(strategy.alpha, strategy.eta);
        w_pos = w.omega_pos;
        w_neg = w.omega_neg;
        negatives = corruption_scorer(strategy.eta, seed);
        if (negatives.size() != strategy.eta * positive_scores.size()) {
            throw ContractError("corruption scorer returned " + std::to_string(negatives.size()) + " scores, expected " +
                                std::to_string(strategy.eta * positive_scores.size()));
        }
    }
    const std::size_t n = positive_scores.size() + negatives.size();
    sample.scores.reserve(n);
    sample.labels.reserve(n);
    sample.weights.reserve(n);
    for (double s : positive_scores) {
        sample.scores.push_back(s);
        sample.labels.push_back(true);
        sample.weights.push_back(w_pos);
    }
    for (double s : negatives) {
        sample.scores.push_back(s);
        sample.labels.push_back(false);
        sample.weights.push_back(w_neg);
    }
    return sample;
}

FittedCalibrator calibrate(std::span<const double> positive_scores, const NegativeStrategy& strategy,
                           CalibrationMethod method, std::span<const double> negative_scores,
                           const CorruptionScorer& corruption_scorer, std::uint64_t seed)
{
    const auto sample = build_fit_sample(positive_scores, strategy, negative_scores, corruption_scorer, seed);

    FittedCalibrator fitted{PlattCalibrator{}, {}};
    auto& meta = fitted.metadata;
    meta.strategy = strategy.name();
    meta.seed = seed;
    meta.num_positive = positive_scores.size();
    meta.num_negative = sample.scores.size() - positive_scores.size();
    if (strategy.kind == NegativeStrategy::Kind::Synthetic) {
        const auto w = calibration_weights(strategy.alpha, strategy.eta);
        meta.alpha = strategy.alpha;
        meta.eta = strategy.eta;
        meta.omega_pos = w.omega_pos;
        meta.omega_neg = w.omega_neg;
    } else {
        meta.alpha = static_cast<double>(meta.num_positive) / static_cast<double>(sample.scores.size());
    }

    if (method == CalibrationMethod::Platt) {
        fitted.calibrator = fit_platt(sample.scores, sample.labels, sample.weights);
    } else {
        auto iso = fit_isotonic(sample.scores, sample.labels, sample.weights);
        meta.degenerate = iso.degenerate;
        fitted.calibrator = std::move(iso);
    }
    return fitted;
}

namespace {

std::string hex64(std::uint64_t v)
{
    std::ostringstream ss;
    ss << "0x" << std::hex << v;
    return ss.str();
}

std::uint64_t parse_hex64(const std::string& s)
{
    return std::stoull(s, nullptr, 16);
}

} // namespace

nlohmann::json to_json(const FittedCalibrator& fitted)
{
    nlohmann::json j;
    std::visit(
        [&j](const auto& c) {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, PlattCalibrator>) {
                j["method"] = "platt";
                j["a"] = c.a;
                j["b"] = c.b;
            } else {
                j["method"] = "isotonic";
                j["breakpoints"] = c.breakpoints;
                j["values"] = c.values;
            }
        },
        fitted.calibrator);
    const auto& m = fitted.metadata;
    j["metadata"] = {
        {"strategy", m.strategy},
        {"alpha", m.alpha},
        {"eta", m.eta},
        {"omega_pos", m.omega_pos},
        {"omega_neg", m.omega_neg},
        {"seed", m.seed},
        {"source_split_hash", hex64(m.source_split_hash)},
        {"filtered_corruptions", m.filtered_corruptions},
        {"degenerate", m.degenerate},
        {"num_positive", m.num_positive},
        {"num_negative", m.num_negative},
    };
    return j;
}

FittedCalibrator calibrator_from_json(const nlohmann::json& j)
{
    FittedCalibrator fitted{PlattCalibrator{}, {}};
    const auto method = parse_calibration_method(j.at("method").get<std::string>());
    if (method == CalibrationMethod::Platt) {
        fitted.calibrator = PlattCalibrator{j.at("a").get<double>(), j.at("b").get<double>()};
    } else {
        IsotonicCalibrator iso;
        iso.breakpoints = j.at("breakpoints").get<std::vector<double>>();
        iso.values = j.at("values").get<std::vector<double>>();
        if (iso.breakpoints.size() != iso.values.size() || iso.values.empty()) {
            throw ConfigError("isotonic calibrator needs matching, non-empty breakpoints and values");
        }
        iso.degenerate = j.at("metadata").value("degenerate", false);
        fitted.calibrator = std::move(iso);
    }
    const auto& m = j.at("metadata");
    auto& meta = fitted.metadata;
    meta.strategy = m.at("strategy").get<std::string>();
    meta.alpha = m.at("alpha").get<double>();
    meta.eta = m.at("eta").get<std::size_t>();
    meta.omega_pos = m.value("omega_pos", 1.0);
    meta.omega_neg = m.value("omega_neg", 1.0);
    meta.seed = m.at("seed").get<std::uint64_t>();
    meta.source_split_hash = parse_hex64(m.at("source_split_hash").get<std::string>());
    meta.filtered_corruptions = m.value("filtered_corruptions", false);
    meta.degenerate = m.value("degenerate", false);
    meta.num_positive = m.value("num_positive", std::size_t{0});
    meta.num_negative = m.value("num_negative", std::size_t{0});
    return fitted;
}

void save_calibrator(const std::filesystem::path& path, const FittedCalibrator& fitted)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write calibrator " + path.string());
    }
    out << to_json(fitted).dump(2) << '\n';
}

FittedCalibrator load_calibrator(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open calibrator " + path.string());
    }
    return calibrator_from_json(nlohmann::json::parse(in));
}

std::uint64_t triples_hash(std::span<const Triple> triples)
{
    std::uint64_t h = mix64(triples.size());
    for (const auto& t : triples) {
        h = derive_seed(h, {t.subject, t.predicate, t.object});
    }
    return h;
}

} // namespace kgcal
