#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pasta/conditioning.hpp"
#include "pasta/dataset.hpp"
#include "pasta/diffusion.hpp"
#include "pasta/network.hpp"
#include "pasta/training.hpp"
#include "pasta/volumetric.hpp"

namespace pasta::pipeline {

struct SampleOptions {
    int n_steps = 1000;
    std::uint64_t seed = 0;
    double eta = 0.0;
    int axis = 2;
    volumetric::WeightKind weight = volumetric::WeightKind::triangular;
    volumetric::BorderPolicy border = volumetric::BorderPolicy::clamp;
    bool clip = true;  // clamp x0 predictions to [0, 1]
};

/// MRI volume -> synthetic PET: per-slice stacks, conditioner + DDIM chain on
/// the denoiser, then distance-weighted reassembly. Initial noise for slice s
/// is drawn from derive_seed(seed, "slice", s), so the result does not depend
/// on batching. `clinical` is the encoded vector ({clinical_dim}) or undefined.
Volume3D translate_volume(net::DualArmNet& net, const Volume3D& mri, const torch::Tensor& clinical,
                          const diffusion::DiffusionSchedule& sched, const SampleOptions& opts);

struct Translation {
    std::string subject_id;
    Volume3D synthetic;
};

std::vector<Translation> translate_split(net::DualArmNet& net, const data::Dataset& ds, data::Split split,
                                         const conditioning::ClinicalStats& stats,
                                         const diffusion::DiffusionSchedule& sched, const SampleOptions& opts);

/// Mean absolute error over the split's translations against real PET, [0, 1] scale.
double split_mae(const data::Dataset& ds, const std::vector<Translation>& synth);

struct RunOptions {
    std::optional<std::filesystem::path> out_dir;  // checkpoints + metrics.jsonl
    bool validate = true;
    bool quiet = false;
};

struct RunResult {
    std::vector<train::StepLog> logs;
    std::optional<double> final_val_mae;
    std::optional<double> best_val_mae;
    conditioning::ClinicalStats stats;
};

nlohmann::json stats_json(const conditioning::ClinicalStats& s);
conditioning::ClinicalStats stats_from_json(const nlohmann::json& j);

/// Runs `trainer` up to its configured step budget on the train split,
/// validating with EMA weights on the val split.
RunResult run_training(train::Trainer& trainer, const data::Dataset& ds, const RunOptions& opts);

/// Voxelwise mean PET over the training split (the trivial baseline).
Volume3D mean_train_pet(const data::Dataset& ds);

}  // namespace pasta::pipeline
