#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rdml/attacks.hpp"
#include "rdml/data.hpp"
#include "rdml/defenses.hpp"
#include "rdml/error.hpp"
#include "rdml/eval.hpp"

namespace rdml {

enum class DatasetKind { Synthetic, Csv };

struct DatasetSpec {
    DatasetKind kind = DatasetKind::Synthetic;
    SyntheticSpec synthetic;
    std::string path;
    double train_fraction = 0.5;
};

struct ExperimentConfig {
    DatasetSpec dataset;
    ModelSpec model;
    TrainConfig train;
    AttackConfig attack = AttackConfig::pgd(8.0 / 255.0, 10);
    std::vector<std::size_t> ks{1, 2, 4, 8};
    std::uint64_t seed = 1;
    std::string out_dir = "rdml-out";

    void validate() const;
};

/// The 60-epoch desk benchmark: 16 classes split 8/8, 40 per class, m=20,
/// sigma=0.03, d=16, everything else at its default.
ExperimentConfig ci_preset();

/// Strict: unknown keys and wrong types raise ErrorKind::Config naming the
/// field. Missing keys take the defaults above. Budgets accept a number or
/// an "a/b" string.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
/// Fully resolved; config_from_json(to_json(c)) reproduces c.
nlohmann::json to_json(const ExperimentConfig& cfg);

/// Parses "0.03", "8/255" or "8".
double parse_budget(const std::string& text);

struct Benchmark {
    Dataset train;
    Dataset test;
};

/// Dataset and class-disjoint split, both drawn from substreams of the seed.
Benchmark make_benchmark(const ExperimentConfig& cfg);

TrainResult run_training(const ExperimentConfig& cfg, const Benchmark& bench);

/// Clean report, followed by the attacked one when `attacked` is set.
std::vector<MetricsReport> run_evaluation(const ExperimentConfig& cfg, const Ensemble& ensemble,
                                          const Dataset& test, bool attacked);

enum class SweepAxis { Eps, Iters, Beta, NModels };
SweepAxis parse_axis(const std::string& name);
const char* to_string(SweepAxis axis);
std::vector<double> default_axis_values(SweepAxis axis);

struct SweepRow {
    double value = 0.0;
    std::uint64_t seed = 0;
    MetricsReport report;
};

/// eps / iters reuse one trained ensemble per seed; beta / n_models retrain.
/// Rows sorted by (value, seed, mode).
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, SweepAxis axis, const std::vector<double>& values,
                                const std::vector<std::uint64_t>& seeds);

struct AblationRow {
    std::string variant;
    TrainConfig train;
    std::uint64_t seed = 0;
    MetricsReport clean;
    MetricsReport attacked;
};

/// naive ensemble, EAT without split, EAT with split; identical seeds.
std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds);

/// FNV-1a of the compact JSON dump without out_dir, as 16 hex digits.
std::string config_digest(const nlohmann::json& resolved);

/// Subcommand bodies. Each writes under cfg.out_dir and returns normally or
/// throws Error.
void cmd_train(const ExperimentConfig& cfg);
void cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_dir, bool attacked);
void cmd_sweep(const ExperimentConfig& cfg, SweepAxis axis, const std::vector<double>& values,
               const std::vector<std::uint64_t>& seeds);
void cmd_ablate(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds);

/// 0 success, 2 config or input error, 3 numeric failure.
int exit_code(ErrorKind kind);

}  // namespace rdml
