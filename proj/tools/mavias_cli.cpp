#include "mavias/cli/commands.hpp"

#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <memory>

namespace {

using mavias::cli::RunConfig;
using nlohmann::json;

/// Flags that override config keys; unset flags leave the config untouched.
struct Overrides {
    std::optional<std::string> output_dir;
    std::optional<std::uint64_t> seed;
    /// Each applier copies its flag into the patch if the flag was given.
    std::vector<std::function<void(json&)>> appliers;
};

template <typename T>
void add_override(CLI::App* app, Overrides& ov, const std::string& flag, const std::string& section,
                  const std::string& key, const std::string& help) {
    auto holder = std::make_shared<T>();
    CLI::Option* opt = app->add_option(flag, *holder, help);
    ov.appliers.push_back([opt, holder, section, key](json& j) {
        if (opt->count() > 0) j[section][key] = *holder;
    });
}

void add_common(CLI::App* app, std::string& config_path, Overrides& ov) {
    app->add_option("-c,--config", config_path, "RunConfig JSON file");
    app->add_option("-o,--out", ov.output_dir, "Output directory");
    app->add_option("--seed", ov.seed, "Random seed");
}

RunConfig resolve(const std::string& config_path, const Overrides& ov) {
    json j = config_path.empty() ? json::object() : mavias::cli::read_json_file(config_path);
    if (!j.is_object()) throw mavias::ConfigError("config must be a JSON object");
    if (ov.output_dir) j["output_dir"] = *ov.output_dir;
    if (ov.seed) j["seed"] = *ov.seed;
    for (const auto& apply : ov.appliers) apply(j);
    return mavias::cli::parse_run_config(j);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bias discovery and bias-aware training with logit addition"};
    app.require_subcommand(1);
    std::string config_path;
    Overrides ov;

    auto* synth = app.add_subcommand("synth", "Write synthetic train/test datasets as JSON lines");
    add_common(synth, config_path, ov);
    add_override<std::string>(synth, ov, "--generator", "synth", "generator", "two_moons_3d or biased_blobs");
    add_override<std::size_t>(synth, ov, "--n", "synth", "n", "Training samples");
    add_override<double>(synth, ov, "--align-rate", "synth", "align_rate", "Fraction of bias-aligned samples");
    add_override<double>(synth, ov, "--test-align-rate", "synth", "test_align_rate", "Test split alignment rate");
    add_override<double>(synth, ov, "--distractor-rate", "synth", "distractor_rate", "Rate of distractor tags");

    auto* discover = app.add_subcommand("discover", "Tag, filter and embed irrelevant tags");
    add_common(discover, config_path, ov);
    add_override<std::string>(discover, ov, "--input", "discovery", "input", "Input JSON lines (id, label[, tags])");
    add_override<bool>(discover, ov, "--mock", "discovery", "mock", "Use offline mock clients (true/false)");
    add_override<std::string>(discover, ov, "--mode", "discovery", "mode", "collectively or separately");
    add_override<std::size_t>(discover, ov, "--embedding-dim", "discovery", "embedding_dim", "Embedding length");

    auto* train = app.add_subcommand("train", "Train a vanilla or bias-aware model");
    add_common(train, config_path, ov);
    add_override<std::string>(train, ov, "--dataset", "train", "dataset", "Data records (JSON lines)");
    add_override<std::string>(train, ov, "--embeddings", "train", "embeddings", "Bias embeddings (JSON lines)");
    add_override<std::size_t>(train, ov, "--bias-feature", "train", "bias_feature_index",
                              "Use this feature as the bias embedding");
    add_override<std::string>(train, ov, "--mode", "train", "mode", "vanilla or mavias");
    add_override<double>(train, ov, "--alpha", "train", "alpha", "Alignment-term weight");
    add_override<double>(train, ov, "--lambda", "train", "lambda", "Target norm ratio");
    add_override<std::size_t>(train, ov, "--epochs", "train", "epochs", "Training epochs");
    add_override<double>(train, ov, "--lr", "train", "lr", "Learning rate");
    add_override<std::string>(train, ov, "--optimizer", "train", "optimizer", "sgd or adam");

    auto* evalc = app.add_subcommand("eval", "Open-set and closed-set evaluation");
    add_common(evalc, config_path, ov);
    add_override<std::string>(evalc, ov, "--checkpoint", "eval", "checkpoint", "Model checkpoint");
    add_override<std::string>(evalc, ov, "--dataset", "eval", "dataset", "Data records (JSON lines)");
    add_override<std::string>(evalc, ov, "--tags", "eval", "tags", "Tag records from discover");
    add_override<std::string>(evalc, ov, "--reference", "eval", "reference_checkpoint",
                              "Vanilla checkpoint used to flag biased tags");
    add_override<std::string>(evalc, ov, "--protocol", "eval", "protocol", "open, closed or both");

    auto* diagnose = app.add_subcommand("diagnose", "Gradient and bias-branch diagnostics");
    add_common(diagnose, config_path, ov);
    add_override<std::string>(diagnose, ov, "--checkpoint", "diagnose", "checkpoint", "Model checkpoint");
    add_override<std::string>(diagnose, ov, "--dataset", "diagnose", "dataset", "Data records with aligned flags");
    add_override<std::string>(diagnose, ov, "--embeddings", "diagnose", "embeddings", "Bias embeddings");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        const RunConfig cfg = resolve(config_path, ov);
        if (*synth)
            mavias::cli::cmd_synth(cfg, std::cout);
        else if (*discover)
            mavias::cli::cmd_discover(cfg, std::cout);
        else if (*train)
            mavias::cli::cmd_train(cfg, std::cout);
        else if (*evalc)
            mavias::cli::cmd_eval(cfg, std::cout);
        else if (*diagnose)
            mavias::cli::cmd_diagnose(cfg, std::cout);
        return 0;
    } catch (const mavias::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const mavias::ContractViolation& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const mavias::TransportError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}
