#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pasta/config.hpp"
#include "pasta/metrics.hpp"

namespace pasta::eval {

/// One trained model with its cohort and held-out scores.
struct Experiment {
    RunConfig config;
    data::Dataset dataset;
    std::unique_ptr<train::Trainer> trainer;
    pipeline::RunResult run;
    MetricsReport test_metrics;
    MetricsReport baseline_metrics;  // mean training PET predicted for every test subject
};

/// Generates the cohort for `cfg.seed`, trains, and scores EMA samples on the
/// test split. Checkpoints and metrics.jsonl go to `out_dir` when given.
Experiment run_experiment(const RunConfig& cfg, const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                          bool quiet = true);

/// Synthesises PET for every subject of the cohort with the EMA weights.
std::vector<pipeline::Translation> translate_cohort(Experiment& e);

std::vector<std::string> standard_cells();

/// Merge patch for a standard cell name ("full", "no_cyclex", "no_roi",
/// "no_clinical", "m2m", "lambda_task=<x>", "concat", "cond_both",
/// "cond_conditioner"). Unknown names raise ConfigError.
nlohmann::json cell_patch(const std::string& name);

struct AblationRow {
    std::string cell;
    std::vector<MetricsReport> per_seed;
    MetricsReport mean;      // seed-averaged summary (subjects pooled)
    int full_not_worse = 0;  // seeds where the full model's MAE <= this cell's
};

struct AblationTable {
    std::vector<std::uint64_t> seeds;
    std::vector<AblationRow> rows;
    bool has_full = false;
};

using ProgressFn = std::function<void(const std::string& cell, std::uint64_t seed, const MetricsReport&)>;

/// Every cell trained from scratch for every seed at the base budget.
/// `cells` holds names or {"name", "overrides"} objects.
AblationTable run_ablation(const RunConfig& base, const nlohmann::json& cells, const std::vector<std::uint64_t>& seeds,
                           const ProgressFn& progress = {});

nlohmann::json to_json(const AblationTable& t);
std::string format_table(const AblationTable& t);

}  // namespace pasta::eval
