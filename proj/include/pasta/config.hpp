#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "pasta/classify.hpp"
#include "pasta/dataset.hpp"
#include "pasta/network.hpp"
#include "pasta/pipeline.hpp"
#include "pasta/training.hpp"

namespace pasta {

inline constexpr int kConfigVersion = 1;

struct EvalConfig {
    eval::ClassifierConfig classifier;
    int folds = 5;
};

struct AblationConfig {
    /// Standard cell names or {"name": ..., "overrides": {...}} objects.
    nlohmann::json cells = nlohmann::json::array({"full", "no_cyclex"});
    std::vector<std::uint64_t> seeds{0};
};

/// Everything a run needs. Sections: net, train, diffusion, data, sample,
/// eval, ablation; plus version and the master seed.
struct RunConfig {
    int version = kConfigVersion;
    std::uint64_t seed = 0;
    net::NetConfig net;
    train::TrainConfig train;
    int diffusion_steps = 1000;
    /// Phantoms at the network's default slice geometry; data.seed is ignored,
    /// the cohort seed derives from `seed`.
    data::CohortOptions data = [] {
        data::CohortOptions d;
        d.spec.size = {96, 112, 96};
        return d;
    }();
    pipeline::SampleOptions sample;
    EvalConfig eval;
    AblationConfig ablation;

    void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Strict: unknown keys anywhere raise ConfigError; a missing or different
/// version is refused.
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);

/// Applies a JSON merge patch to the resolved config.
RunConfig patched(const RunConfig& base, const nlohmann::json& patch);

/// Small network and budget used for desk-scale phantom runs.
RunConfig desk_scale_config();

/// Named sub-seeds of the master seed.
std::uint64_t cohort_seed(const RunConfig& c);
std::uint64_t trainer_seed(const RunConfig& c);
std::uint64_t sample_seed(const RunConfig& c);
std::uint64_t fold_seed(const RunConfig& c);

}  // namespace pasta
