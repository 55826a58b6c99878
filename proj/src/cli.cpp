#include "eigmeta/cli.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "toml.hpp"

#include "eigmeta/data.hpp"
#include "eigmeta/errors.hpp"
#include "eigmeta/gradcheck.hpp"
#include "eigmeta/model.hpp"
#include "eigmeta/objective.hpp"
#include "eigmeta/train.hpp"

namespace eigmeta::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out << text;
    if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string provenance_comments(const json& config, std::uint64_t seed) {
    return "# config: " + config.dump() + "\n# seed: " + std::to_string(seed) + "\n";
}

// Run-level settings on top of the training configuration.
struct RunConfig {
    train::TrainConfig train;
    std::string input;
    std::string family;
    std::string label = "label";
    bool normalize = true;
    std::size_t train_tasks = 400;
    std::size_t valid_tasks = 50;
    std::size_t target_tasks = 50;
    std::string manifest;
    std::string checkpoint;
    std::string out;
    std::string split = "target";
    std::size_t episodes = 100;
    std::string ties = "strict";

    json to_json() const {
        json j = train.to_json();
        j["input"] = input;
        j["family"] = family;
        j["label"] = label;
        j["normalize"] = normalize;
        j["train_tasks"] = train_tasks;
        j["valid_tasks"] = valid_tasks;
        j["target_tasks"] = target_tasks;
        j["manifest"] = manifest;
        j["checkpoint"] = checkpoint;
        j["out"] = out;
        j["split"] = split;
        j["episodes"] = episodes;
        j["ties"] = ties;
        return j;
    }

    void apply_json(const json& j) {
        json train_keys = json::object();
        for (const auto& [key, value] : j.items()) {
            auto text = [&](std::string& dst) {
                if (!value.is_string()) throw Error(ErrorKind::Config, "'" + key + "' must be a string");
                dst = value.get<std::string>();
            };
            auto count = [&](std::size_t& dst) {
                if (!value.is_number_integer() || value.get<long long>() < 0) {
                    throw Error(ErrorKind::Config, "'" + key + "' must be a non-negative integer");
                }
                dst = value.get<std::size_t>();
            };
            if (key == "input") text(input);
            else if (key == "family") text(family);
            else if (key == "label") text(label);
            else if (key == "normalize") {
                if (!value.is_boolean()) throw Error(ErrorKind::Config, "'normalize' must be a boolean");
                normalize = value.get<bool>();
            }
            else if (key == "train_tasks") count(train_tasks);
            else if (key == "valid_tasks") count(valid_tasks);
            else if (key == "target_tasks") count(target_tasks);
            else if (key == "manifest") text(manifest);
            else if (key == "checkpoint") text(checkpoint);
            else if (key == "out") text(out);
            else if (key == "split") text(split);
            else if (key == "episodes") count(episodes);
            else if (key == "ties") text(ties);
            else if (train::TrainConfig::is_key(key)) train_keys[key] = value;
            else throw Error(ErrorKind::Config, "unknown configuration key '" + key + "'");
        }
        train.apply_json(train_keys);
    }

    TieMode tie_mode() const {
        if (ties == "strict") return TieMode::Strict;
        if (ties == "half") return TieMode::Half;
        throw Error(ErrorKind::Config, "ties must be 'strict' or 'half', got '" + ties + "'");
    }
};

// Flags collected by CLI11; unset flags leave the file value in place.
struct Overrides {
    std::optional<std::string> config_file;
    json values = json::object();
};

template <typename T>
void add_override(CLI::App& app, Overrides& o, const std::string& flag, const std::string& key,
                  const std::string& help) {
    app.add_option_function<T>(flag, [&o, key](const T& v) { o.values[key] = v; }, help);
}

RunConfig resolve(const Overrides& o) {
    RunConfig cfg;
    if (o.config_file) cfg.apply_json(read_toml(*o.config_file));
    cfg.apply_json(o.values);
    return cfg;
}

void require(const std::string& value, const char* what) {
    if (value.empty()) throw Error(ErrorKind::Config, std::string("missing required setting '") + what + "'");
}

std::string curve_csv(const train::TrainResult& result, const json& config, std::uint64_t seed) {
    std::string out = provenance_comments(config, seed);
    out += "update,loss,validation_auc\n";
    for (const auto& row : result.curve) {
        out += std::to_string(row.update) + "," + format_double(row.loss) + ",";
        if (row.validation_auc) out += format_double(*row.validation_auc);
        out += "\n";
    }
    return out;
}

std::string episodes_csv(const train::EvalResult& result, const json& config, std::uint64_t seed) {
    std::string out = provenance_comments(config, seed);
    out += "task,episode,auc\n";
    for (const auto& e : result.episodes) {
        out += std::to_string(e.task) + "," + std::to_string(e.episode) + "," + format_double(e.auc) + "\n";
    }
    return out;
}

json eval_summary(const train::EvalResult& result, const json& config, std::uint64_t seed,
                  const std::string& split) {
    auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
    return json{{"mean", num(result.mean)},
                {"std", num(result.stddev)},
                {"skipped", result.skipped},
                {"episodes", result.episodes.size()},
                {"split", split},
                {"seed", seed},
                {"config", config}};
}

void log_warnings(const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

int cmd_synth(const RunConfig& cfg) {
    require(cfg.out, "out");
    data::TaskBundle bundle;
    if (!cfg.family.empty()) {
        if (!cfg.input.empty()) throw Error(ErrorKind::Config, "use either 'input' or 'family', not both");
        if (cfg.family != "ring") throw Error(ErrorKind::Config, "unknown task family '" + cfg.family + "'");
        bundle = data::ring_family(cfg.train_tasks, cfg.valid_tasks, cfg.target_tasks, cfg.train.seed);
    } else {
        require(cfg.input, "input");
        std::vector<std::string> warnings;
        const data::LabeledDataset base = data::load_csv(cfg.input, cfg.label, cfg.normalize, &warnings);
        log_warnings(warnings);
        bundle = data::synthesize_tasks(base, cfg.train_tasks, cfg.valid_tasks, cfg.target_tasks,
                                        cfg.train.seed);
    }
    data::write_manifest(cfg.out, bundle, "manifest.json", cfg.to_json().dump());
    std::cout << "wrote " << bundle.tasks.size() << " tasks and "
              << (fs::path(cfg.out) / "manifest.json").string() << "\n";
    return 0;
}

train::TrainResult run_training(const RunConfig& cfg, const data::TaskBundle& bundle) {
    train::TrainResult result = train::train(bundle, cfg.train);
    const fs::path out = cfg.out;
    const json config = cfg.to_json();
    train::save_checkpoint(out / "checkpoint.bin", result.checkpoint);
    write_text(out / "curve.csv", curve_csv(result, config, cfg.train.seed));
    std::cout << "updates " << result.checkpoint.updates << ", best validation AUC "
              << format_double(result.checkpoint.best_validation_auc) << " at update "
              << result.checkpoint.best_update << ", skipped " << result.skipped_episodes << "\n";
    return result;
}

int cmd_train(const RunConfig& cfg) {
    require(cfg.manifest, "manifest");
    require(cfg.out, "out");
    cfg.train.validate();
    const data::TaskBundle bundle = data::load_manifest(cfg.manifest);
    const train::TrainResult result = run_training(cfg, bundle);
    write_json(fs::path(cfg.out) / "train_summary.json",
               json{{"best_validation_auc", result.checkpoint.best_validation_auc},
                    {"best_update", result.checkpoint.best_update},
                    {"updates", result.checkpoint.updates},
                    {"skipped_episodes", result.skipped_episodes},
                    {"seed", cfg.train.seed},
                    {"config", cfg.to_json()}});
    return 0;
}

int evaluate_and_write(const RunConfig& cfg, const train::Checkpoint& checkpoint,
                       const data::TaskBundle& bundle, std::uint64_t seed) {
    const data::Split split = data::parse_split(cfg.split);
    const auto indices = bundle.indices(split);
    if (indices.empty()) {
        throw Error(ErrorKind::InsufficientInstances, "manifest has no '" + cfg.split + "' tasks");
    }
    const train::EvalResult result =
        train::evaluate(checkpoint, bundle, indices, cfg.episodes, seed, cfg.tie_mode());
    // Training fields come from the checkpoint, not from the command line.
    const json full = cfg.to_json();
    json config;
    for (const char* key : {"checkpoint", "manifest", "out", "split", "episodes", "seed", "ties"})
        config[key] = full.at(key);
    config["model"] = checkpoint.config.to_json();
    const fs::path out = cfg.out;
    write_text(out / "episodes.csv", episodes_csv(result, config, seed));
    write_json(out / "summary.json", eval_summary(result, config, seed, cfg.split));
    std::cout << "mean AUC " << format_double(result.mean) << " (std " << format_double(result.stddev)
              << ", " << result.episodes.size() << " episodes, " << result.skipped << " skipped)\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg) {
    require(cfg.checkpoint, "checkpoint");
    require(cfg.manifest, "manifest");
    require(cfg.out, "out");
    const train::Checkpoint checkpoint = train::load_checkpoint(cfg.checkpoint);
    const data::TaskBundle bundle = data::load_manifest(cfg.manifest);
    return evaluate_and_write(cfg, checkpoint, bundle, cfg.train.seed);
}

int cmd_ablate(RunConfig cfg, const std::string& variant) {
    require(cfg.manifest, "manifest");
    require(cfg.out, "out");
    if (variant == "wonn") {
        cfg.train.mode = model::Mode::WoNN;
    } else if (variant == "woproj") {
        cfg.train.mode = model::Mode::WoProj;
    } else if (variant == "woanomaly") {
        cfg.train.mode = model::Mode::NormalOnly;
        cfg.train.sizes.anomaly_support = 0;
    } else {
        throw Error(ErrorKind::Config, "unknown ablation '" + variant + "'");
    }
    cfg.train.validate();
    const data::TaskBundle bundle = data::load_manifest(cfg.manifest);
    const train::TrainResult result = run_training(cfg, bundle);
    return evaluate_and_write(cfg, result.checkpoint, bundle, cfg.train.seed);
}

int cmd_gradcheck(const gradcheck::Options& options, double tolerance) {
    const gradcheck::Report report = gradcheck::run(options);
    char line[256];
    for (const auto& c : report.checks) {
        std::snprintf(line, sizeof(line),
                      "%-30s instances=%zu comparisons=%zu max_rel_error=%.3e tolerance=%.0e "
                      "clamped_gaps=%zu kink_skips=%zu %s\n",
                      c.name.c_str(), c.instances, c.comparisons, c.max_rel_error, c.tolerance,
                      c.clamped_gaps, c.kink_skips, c.passed() ? "ok" : "FAIL");
        std::cout << line;
    }
    const double worst = report.max_rel_error();
    std::snprintf(line, sizeof(line), "max relative error %.3e (limit %.0e)\n", worst, tolerance);
    std::cout << line;
    return worst > tolerance ? 3 : 0;
}

}  // namespace

json read_toml(const fs::path& path) {
    toml::table table;
    try {
        table = toml::parse_file(path.string());
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << path.string() << ":" << e.source().begin.line << ": " << e.description();
        throw Error(ErrorKind::Config, msg.str());
    }
    json out = json::object();
    for (auto&& [key, node] : table) {
        const std::string k(key.str());
        if (auto v = node.value_exact<std::int64_t>()) out[k] = *v;
        else if (auto d = node.value_exact<double>()) out[k] = *d;
        else if (auto b = node.value_exact<bool>()) out[k] = *b;
        else if (auto s = node.value_exact<std::string>()) out[k] = *s;
        else throw Error(ErrorKind::Config, "unsupported value type for key '" + k + "'");
    }
    return out;
}

int run(int argc, const char* const* argv) {
    CLI::App app{"Few-shot anomaly detection by meta-learned generalized eigenproblems"};
    app.require_subcommand(1);

    Overrides synth_o, train_o, eval_o, ablate_o;
    auto common = [](CLI::App& sub, Overrides& o) {
        sub.add_option_function<std::string>(
            "--config", [&o](const std::string& v) { o.config_file = v; }, "TOML configuration file");
        add_override<std::string>(sub, o, "--out", "out", "Output directory");
        add_override<std::uint64_t>(sub, o, "--seed", "seed", "Random seed");
    };
    auto training = [](CLI::App& sub, Overrides& o) {
        add_override<std::string>(sub, o, "--manifest", "manifest", "Task manifest (JSON)");
        add_override<std::size_t>(sub, o, "--max-updates", "max_updates", "Update budget");
        add_override<double>(sub, o, "--learning-rate", "learning_rate", "Adam learning rate");
        add_override<double>(sub, o, "--dropout", "dropout", "Dropout rate");
        add_override<std::size_t>(sub, o, "--validation-interval", "validation_interval",
                                  "Updates between validations");
        add_override<std::size_t>(sub, o, "--validation-episodes", "validation_episodes",
                                  "Episodes per validation");
        add_override<std::size_t>(sub, o, "--patience", "patience", "Validations without improvement");
        add_override<std::size_t>(sub, o, "--hidden", "hidden", "Hidden width");
        add_override<std::size_t>(sub, o, "--embed-dim", "embed_dim", "Embedding dimension J");
        add_override<std::size_t>(sub, o, "--projected-dim", "projected_dim", "Normal-only dimension K");
    };
    auto evaluation = [](CLI::App& sub, Overrides& o) {
        add_override<std::string>(sub, o, "--split", "split", "train, validation or target");
        add_override<std::size_t>(sub, o, "--episodes", "episodes", "Evaluation episodes");
        add_override<std::string>(sub, o, "--ties", "ties", "Tie handling: strict or half");
    };

    CLI::App* synth = app.add_subcommand("synth", "Synthesize tasks and write a manifest");
    common(*synth, synth_o);
    add_override<std::string>(*synth, synth_o, "--input", "input", "Base dataset CSV");
    add_override<std::string>(*synth, synth_o, "--family", "family", "Built-in task family (ring)");
    add_override<std::string>(*synth, synth_o, "--label", "label", "Label column name");
    add_override<bool>(*synth, synth_o, "--normalize", "normalize", "Standardize attributes (true/false)");
    add_override<std::size_t>(*synth, synth_o, "--train", "train_tasks", "Training tasks");
    add_override<std::size_t>(*synth, synth_o, "--valid", "valid_tasks", "Validation tasks");
    add_override<std::size_t>(*synth, synth_o, "--target", "target_tasks", "Target tasks");

    CLI::App* train_cmd = app.add_subcommand("train", "Meta-train and write a checkpoint");
    common(*train_cmd, train_o);
    training(*train_cmd, train_o);
    add_override<std::string>(*train_cmd, train_o, "--mode", "mode", "Adaptation mode");

    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
    common(*eval_cmd, eval_o);
    add_override<std::string>(*eval_cmd, eval_o, "--checkpoint", "checkpoint", "Checkpoint file");
    add_override<std::string>(*eval_cmd, eval_o, "--manifest", "manifest", "Task manifest (JSON)");
    evaluation(*eval_cmd, eval_o);

    CLI::App* ablate = app.add_subcommand("ablate", "Train and evaluate an ablation");
    common(*ablate, ablate_o);
    training(*ablate, ablate_o);
    evaluation(*ablate, ablate_o);
    std::string variant;
    ablate->add_option("--mode", variant, "wonn, woproj or woanomaly")->required();

    CLI::App* grad = app.add_subcommand("gradcheck", "Finite-difference derivative checks");
    gradcheck::Options gc;
    double gc_tolerance = gradcheck::kDegenerateTolerance;
    bool inject_fault = false;
    grad->add_option("--seed", gc.seed, "Random seed");
    grad->add_option("--size", gc.size, "Matrix order / embedding dimension")->check(CLI::Range(2, 64));
    grad->add_option("--instances", gc.instances, "Instances per check")->check(CLI::PositiveNumber);
    grad->add_option("--tolerance", gc_tolerance, "Failure threshold on the max relative error");
    grad->add_flag("--inject-fault", inject_fault, "Corrupt the eigen adjoint (negative control)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*synth) return cmd_synth(resolve(synth_o));
        if (*train_cmd) return cmd_train(resolve(train_o));
        if (*eval_cmd) return cmd_eval(resolve(eval_o));
        if (*ablate) return cmd_ablate(resolve(ablate_o), variant);
        if (*grad) {
            if (inject_fault) gc.fault = gradcheck::Fault::EigenVjp;
            return cmd_gradcheck(gc, gc_tolerance);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace eigmeta::cli
