// kgcal: train knowledge-graph embeddings, calibrate their scores, evaluate.

#include "kgcal/calibration.hpp"
#include "kgcal/experiment.hpp"
#include "kgcal/graph.hpp"
#include "kgcal/metrics.hpp"
#include "kgcal/model.hpp"
#include "kgcal/planted.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace kgcal;

namespace {

struct CommonOptions {
    std::string config_file;
    std::vector<std::string> overrides;
    std::string train, valid, test;
    bool labeled = false;
    std::string out;
    std::string model, loss;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> k, epochs, eta;
    std::optional<double> lr, alpha;
};

void add_common(CLI::App* cmd, CommonOptions& o)
{
    cmd->add_option("-c,--config", o.config_file, "key=value config file");
    cmd->add_option("--set", o.overrides, "override a config key (key=value), repeatable");
    cmd->add_option("--train", o.train, "training triples (TSV)");
    cmd->add_option("--valid", o.valid, "validation triples (TSV)");
    cmd->add_option("--test", o.test, "test triples (TSV)");
    cmd->add_flag("--labeled", o.labeled, "validation/test files carry a 4th label column");
    cmd->add_option("-o,--out", o.out, "output directory (default: $KGCAL_OUTPUT_ROOT or ./kgcal-out)");
    cmd->add_option("--model", o.model, "transe | transe-l1 | distmult | complex | hole");
    cmd->add_option("--loss", o.loss, "pairwise | nll | multiclass-nll | self-adversarial");
    cmd->add_option("--seed", o.seed);
    cmd->add_option("--k", o.k, "embedding dimensionality");
    cmd->add_option("--epochs", o.epochs);
    cmd->add_option("--eta", o.eta, "corruptions per positive (training and synthetic calibration)");
    cmd->add_option("--lr", o.lr, "Adam learning rate");
    cmd->add_option("--alpha", o.alpha, "positive base rate for synthetic calibration");
}

ExperimentConfig resolve_config(const CommonOptions& o)
{
    ExperimentConfig cfg;
    if (!o.config_file.empty()) {
        cfg = load_config(o.config_file);
    }
    for (const auto& kv : o.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        }
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!o.train.empty()) cfg.set("train", o.train);
    if (!o.valid.empty()) cfg.set("valid", o.valid);
    if (!o.test.empty()) cfg.set("test", o.test);
    if (o.labeled) cfg.paths.labeled = true;
    if (!o.model.empty()) cfg.set("model", o.model);
    if (!o.loss.empty()) cfg.set("loss", o.loss);
    if (o.seed) cfg.seed = *o.seed;
    if (o.k) cfg.train.k = *o.k;
    if (o.epochs) cfg.train.epochs = *o.epochs;
    if (o.eta) {
        cfg.train.eta = *o.eta;
        cfg.calibration_eta = *o.eta;
    }
    if (o.lr) cfg.train.learning_rate = *o.lr;
    if (o.alpha) cfg.alpha = *o.alpha;
    if (!o.out.empty()) {
        cfg.output_dir = o.out;
    } else if (cfg.output_dir.empty()) {
        const char* root = std::getenv(kOutputRootEnv);
        cfg.output_dir = root != nullptr && *root != '\0' ? fs::path(root) : fs::path("kgcal-out");
    }
    cfg.validate();
    return cfg;
}

DatasetSplits load(const ExperimentConfig& cfg)
{
    if (cfg.paths.train.empty()) {
        throw ConfigError("--train is required");
    }
    return load_splits(cfg.paths, cfg.train_duplicates);
}

void write_json(const fs::path& path, const nlohmann::json& j)
{
    fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

EmbeddingModel model_for(ExperimentConfig cfg, const DatasetSplits& splits, const std::string& checkpoint)
{
    if (!checkpoint.empty()) {
        cfg.checkpoint = checkpoint;
    } else if (cfg.checkpoint.empty() && fs::exists(cfg.output_dir / "model.ckpt")) {
        cfg.checkpoint = cfg.output_dir / "model.ckpt";
    }
    return obtain_model(cfg, splits);
}

// Runs one subcommand body, tagging failures with the stage name.
int guarded(const std::string& stage, const std::function<void()>& body)
{
    try {
        body();
        return 0;
    } catch (const StageError& e) {
        std::cerr << "kgcal: " << e.what() << '\n';
    } catch (const std::exception& e) {
        std::cerr << "kgcal: [" << stage << "] " << e.what() << '\n';
    }
    return 1;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Knowledge graph embedding calibration toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    CommonOptions common;
    std::string checkpoint;
    std::string method = "isotonic";
    std::string strategy = "synthetic";
    std::string calibrator_out;
    std::vector<std::string> calibrator_files;
    std::string calibrator_file;
    double threshold = 0.5;
    bool raw = false;
    std::vector<double> alphas;
    std::vector<std::size_t> etas, ks;
    PlantedGraphOptions fixture;
    std::string fixture_dir = "fixture";

    auto* train_cmd = app.add_subcommand("train", "train an embedding model and write a checkpoint");
    add_common(train_cmd, common);

    auto* cal_cmd = app.add_subcommand("calibrate", "fit a calibrator on the validation split");
    add_common(cal_cmd, common);
    cal_cmd->add_option("--checkpoint", checkpoint, "model checkpoint (default: <out>/model.ckpt)");
    cal_cmd->add_option("--method", method, "platt | isotonic")->check(CLI::IsMember({"platt", "isotonic"}));
    cal_cmd->add_option("--strategy", strategy, "ground-truth | synthetic")
        ->check(CLI::IsMember({"ground-truth", "synthetic"}));
    cal_cmd->add_option("--output", calibrator_out, "calibrator JSON path");

    auto* evc_cmd = app.add_subcommand("eval-calibration", "Brier, log loss and reliability on the test split");
    add_common(evc_cmd, common);
    evc_cmd->add_option("--checkpoint", checkpoint);
    evc_cmd->add_option("--calibrator", calibrator_files, "calibrator JSON files to evaluate");

    auto* evr_cmd = app.add_subcommand("eval-ranking", "filtered MR / MRR / Hits@N on test positives");
    add_common(evr_cmd, common);
    evr_cmd->add_option("--checkpoint", checkpoint);
    evr_cmd->add_flag("--raw", raw, "do not filter known positives");

    auto* cls_cmd = app.add_subcommand("classify", "triple classification on the test split");
    add_common(cls_cmd, common);
    cls_cmd->add_option("--checkpoint", checkpoint);
    cls_cmd->add_option("--calibrator", calibrator_file,
                        "classify calibrated probabilities; without it, per-relation raw-score thresholds are "
                        "learned on validation");
    cls_cmd->add_option("--threshold", threshold, "probability threshold used with --calibrator");

    auto* sbr_cmd = app.add_subcommand("sweep-base-rate", "synthetic calibration across positive base rates");
    add_common(sbr_cmd, common);
    sbr_cmd->add_option("--checkpoint", checkpoint);
    sbr_cmd->add_option("--alphas", alphas, "base rates (default 0.05..0.95 step 0.05)")->delimiter(',');

    auto* sen_cmd = app.add_subcommand("sweep-sensitivity", "Brier score over an eta x k grid");
    add_common(sen_cmd, common);
    sen_cmd->add_option("--etas", etas)->delimiter(',');
    sen_cmd->add_option("--ks", ks)->delimiter(',');

    auto* rep_cmd = app.add_subcommand("report", "train, calibrate, evaluate and write the report bundle");
    add_common(rep_cmd, common);

    auto* fix_cmd = app.add_subcommand("make-fixture", "write a planted-structure dataset as TSV files");
    fix_cmd->add_option("-o,--out", fixture_dir, "directory for train.tsv, valid.tsv, test.tsv");
    fix_cmd->add_option("--seed", fixture.seed);
    fix_cmd->add_option("--clusters", fixture.clusters);
    fix_cmd->add_option("--cluster-size", fixture.cluster_size);
    fix_cmd->add_option("--relations", fixture.relations);
    fix_cmd->add_option("--train-size", fixture.train_size);
    fix_cmd->add_option("--noise", fixture.noise_fraction, "fraction of unstructured positive facts");

    CLI11_PARSE(app, argc, argv);

    if (*train_cmd) {
        return guarded("train", [&] {
            auto cfg = resolve_config(common);
            const auto splits = load(cfg);
            cfg.reuse_checkpoint = false;
            const auto model = obtain_model(cfg, splits);
            save_checkpoint(cfg.output_dir / "model.ckpt", model, splits.vocab().content_hash());
            std::cout << (cfg.output_dir / "model.ckpt").string() << '\n';
        });
    }
    if (*cal_cmd) {
        return guarded("calibrate", [&] {
            auto cfg = resolve_config(common);
            const auto splits = load(cfg);
            const auto model = model_for(cfg, splits, checkpoint);
            const auto fitted = fit_on_validation(cfg, splits, model, parse_calibration_method(method),
                                                  parse_strategy_kind(strategy), FilterIndex(splits));
            const fs::path out = calibrator_out.empty()
                                     ? cfg.output_dir / ("calibrator_" + method + "_" + strategy + ".json")
                                     : fs::path(calibrator_out);
            save_calibrator(out, fitted);
            std::cout << out.string() << '\n';
        });
    }
    if (*evc_cmd) {
        return guarded("eval-calibration", [&] {
            auto cfg = resolve_config(common);
            const auto splits = load(cfg);
            const auto model = model_for(cfg, splits, checkpoint);
            const auto test = score_split(model, splits.test);
            fs::create_directories(cfg.output_dir);
            nlohmann::json result = nlohmann::json::object();
            auto evaluate = [&](const std::string& name, const std::vector<double>& probs) {
                result[name] = {{"brier", brier_score(probs, test.labels)},
                                {"log_loss", log_loss(probs, test.labels, cfg.eval.clip_eps)},
                                {"accuracy", classify(probs, 0.5, {}, test.labels).accuracy}};
                write_reliability_csv(cfg.output_dir / ("reliability_" + name + ".csv"),
                                      reliability_bins(probs, test.labels, cfg.eval.bins));
            };
            std::vector<double> probs(test.scores.size());
            std::transform(test.scores.begin(), test.scores.end(), probs.begin(), expit);
            evaluate("uncalibrated", probs);
            for (const auto& file : calibrator_files) {
                const auto fitted = load_calibrator(file);
                evaluate(fs::path(file).stem().string(),
                         apply_calibrator(fitted.calibrator, std::span<const double>(test.scores)));
            }
            write_json(cfg.output_dir / "eval_calibration.json", result);
            std::cout << result.dump(2) << '\n';
        });
    }
    if (*evr_cmd) {
        return guarded("eval-ranking", [&] {
            auto cfg = resolve_config(common);
            const auto splits = load(cfg);
            const auto model = model_for(cfg, splits, checkpoint);
            const FilterIndex filter(splits);
            const auto positives = positives_of(splits.test);
            const auto report =
                ranked_eval(model, positives, raw ? nullptr : &filter, cfg.eval.hits_at, cfg.eval.ties);
            write_json(cfg.output_dir / "ranks.json", to_json(report));
            std::cout << to_json(report).dump(2) << '\n';
        });
    }
    if (*cls_cmd) {
        return guarded("classify", [&] {
            auto cfg = resolve_config(common);
            const auto splits = load(cfg);
            const auto model = model_for(cfg, splits, checkpoint);
            const auto test = score_split(model, splits.test);
            nlohmann::json result;
            if (!calibrator_file.empty()) {
                const auto fitted = load_calibrator(calibrator_file);
                const auto probs = apply_calibrator(fitted.calibrator, std::span<const double>(test.scores));
                const auto r = classify(probs, threshold, {}, test.labels);
                result = {{"mode", "calibrated"}, {"threshold", threshold}, {"accuracy", r.accuracy}};
            } else {
                const auto valid = score_split(model, splits.validation);
                const auto table = learn_thresholds(valid.scores, valid.labels, valid.relations);
                const auto r = classify(test.scores, table, test.relations, test.labels);
                nlohmann::json thresholds = nlohmann::json::object();
                for (const auto& [rel, tau] : table.per_relation) {
                    thresholds[splits.vocab().relations.label(rel)] = tau;
                }
                result = {{"mode", "per-relation"},
                          {"accuracy", r.accuracy},
                          {"fallback_count", r.fallback_count},
                          {"global_threshold", table.global},
                          {"thresholds", thresholds}};
            }
            write_json(cfg.output_dir / "classification.json", result);
            std::cout << result.dump(2) << '\n';
        });
    }
    if (*sbr_cmd) {
        return guarded("sweep-base-rate", [&] {
            auto cfg = resolve_config(common);
            const auto splits = load(cfg);
            const auto model = model_for(cfg, splits, checkpoint);
            if (alphas.empty()) {
                alphas = cfg.sweep_alphas.empty() ? default_sweep_alphas() : cfg.sweep_alphas;
            }
            const auto rows = run_base_rate_sweep(cfg, splits, model, alphas);
            fs::create_directories(cfg.output_dir);
            write_sweep_csv(cfg.output_dir / "sweep_base_rate.csv", rows);
            std::cout << (cfg.output_dir / "sweep_base_rate.csv").string() << '\n';
        });
    }
    if (*sen_cmd) {
        return guarded("sweep-sensitivity", [&] {
            auto cfg = resolve_config(common);
            const auto splits = load(cfg);
            if (etas.empty()) etas = cfg.sweep_etas;
            if (ks.empty()) ks = cfg.sweep_ks;
            const auto out = cfg.output_dir;
            // Grid cells train in memory; only the CSV is written.
            cfg.output_dir.clear();
            const auto cells = run_sensitivity(cfg, splits, etas, ks);
            fs::create_directories(out);
            write_sensitivity_csv(out / "sweep_sensitivity.csv", cells);
            std::cout << (out / "sweep_sensitivity.csv").string() << '\n';
        });
    }
    if (*rep_cmd) {
        return guarded("report", [&] {
            const auto cfg = resolve_config(common);
            const auto bundle = run_pipeline(cfg);
            std::cout << (cfg.output_dir / "summary.json").string() << '\n';
        });
    }
    if (*fix_cmd) {
        return guarded("make-fixture", [&] {
            const PlantedGraph graph(fixture);
            const auto& s = graph.splits();
            const fs::path dir(fixture_dir);
            write_positive_tsv(dir / "train.tsv", s.vocab(), s.train.triples);
            write_labeled_tsv(dir / "valid.tsv", s.vocab(), s.validation);
            write_labeled_tsv(dir / "test.tsv", s.vocab(), s.test);
            std::cout << dir.string() << '\n';
        });
    }
    return 0;
}
