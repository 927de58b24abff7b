// rdml: train, evaluate, sweep and ablate adversarially robust embedding ensembles.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rdml/error.hpp"
#include "rdml/experiment.hpp"

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool attacked = false;
    std::string eps;
    std::optional<std::size_t> iters;
    std::string defense;
    std::optional<std::size_t> models;
    std::string checkpoint;
    std::string data;
    std::string axis = "eps";
    std::vector<std::string> values;
    std::size_t seeds = 5;
};

/// Explicit --config wins; eval otherwise reuses the config stored with the
/// checkpoint; everything else starts from the desk preset.
rdml::ExperimentConfig resolve(const Options& o, const std::string& checkpoint) {
    rdml::ExperimentConfig cfg = rdml::ci_preset();
    if (!o.config.empty()) {
        cfg = rdml::load_config(o.config);
    } else if (!checkpoint.empty()) {
        nlohmann::json manifest;
        rdml::load_checkpoint(checkpoint, &manifest);
        cfg = rdml::config_from_json(manifest.at("config"));
    }
    if (o.seed) cfg.seed = *o.seed;
    if (!o.out.empty()) cfg.out_dir = o.out;
    if (!o.data.empty()) {
        cfg.dataset.kind = rdml::DatasetKind::Csv;
        cfg.dataset.path = o.data;
    }
    if (!o.eps.empty() || o.iters) {
        const double eps = o.eps.empty() ? cfg.attack.epsilon : rdml::parse_budget(o.eps);
        const std::size_t steps = o.iters ? *o.iters : cfg.attack.steps;
        cfg.attack.epsilon = eps;
        cfg.attack.steps = steps;
        cfg.attack.step_size = steps == 0 ? 0.0 : 2.5 * eps / static_cast<double>(steps);
    }
    if (!o.defense.empty()) cfg.train.defense = rdml::parse_defense(o.defense);
    if (o.models) cfg.train.n_models = *o.models;
    cfg.validate();
    return cfg;
}

std::vector<std::uint64_t> seed_list(const rdml::ExperimentConfig& cfg, std::size_t n) {
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < n; ++i) seeds.push_back(cfg.seed + i);
    return seeds;
}

void add_common(CLI::App* cmd, Options& o) {
    cmd->add_option("--config", o.config, "experiment config JSON (default: the 60-epoch desk preset)");
    cmd->add_option("--seed", o.seed, "override the config seed");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--data", o.data, "labelled CSV dataset instead of the synthetic one");
    cmd->add_option("--eps", o.eps, "test attack budget, e.g. 0.03 or 8/255");
    cmd->add_option("--iters", o.iters, "test attack PGD iterations");
    cmd->add_option("--defense", o.defense, "none, at, mixup, iat, trades, naive_ensemble or eat");
    cmd->add_option("--models", o.models, "ensemble size");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adversarial robustness experiments for deep metric learning"};
    app.require_subcommand(1);
    Options o;

    auto* train = app.add_subcommand("train", "train a model or ensemble and write a checkpoint");
    add_common(train, o);

    auto* eval = app.add_subcommand("eval", "clean (and attacked) clustering metrics of a checkpoint");
    add_common(eval, o);
    eval->add_option("--checkpoint", o.checkpoint, "checkpoint directory (default: <out>/checkpoint)");
    eval->add_flag("--attacked", o.attacked, "also report metrics under the configured PGD attack");

    auto* sweep = app.add_subcommand("sweep", "metrics across one axis and several seeds");
    add_common(sweep, o);
    sweep->add_option("--axis", o.axis, "eps, iters, beta or n_models")->capture_default_str();
    sweep->add_option("--values", o.values, "axis values (eps accepts a/b)");
    sweep->add_option("--seeds", o.seeds, "number of consecutive seeds from --seed")->capture_default_str();

    auto* ablate = app.add_subcommand("ablate", "naive ensemble vs EAT without and with the data split");
    add_common(ablate, o);
    ablate->add_option("--seeds", o.seeds, "number of consecutive seeds from --seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        std::string checkpoint;
        if (eval->parsed()) {
            checkpoint = o.checkpoint;
            if (checkpoint.empty()) checkpoint = (o.out.empty() ? rdml::ci_preset().out_dir : o.out) + "/checkpoint";
        }
        const rdml::ExperimentConfig cfg = resolve(o, checkpoint);
        if (train->parsed()) {
            rdml::cmd_train(cfg);
        } else if (eval->parsed()) {
            rdml::cmd_eval(cfg, checkpoint, o.attacked);
        } else if (sweep->parsed()) {
            const auto axis = rdml::parse_axis(o.axis);
            std::vector<double> values;
            for (const auto& v : o.values) values.push_back(rdml::parse_budget(v));
            if (values.empty()) values = rdml::default_axis_values(axis);
            rdml::cmd_sweep(cfg, axis, values, seed_list(cfg, o.seeds));
        } else if (ablate->parsed()) {
            rdml::cmd_ablate(cfg, seed_list(cfg, o.seeds));
        }
    } catch (const rdml::Error& e) {
        std::cerr << "rdml: " << rdml::to_string(e.kind()) << ": " << e.what() << "\n";
        return rdml::exit_code(e.kind());
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "rdml: malformed input: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "rdml: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
