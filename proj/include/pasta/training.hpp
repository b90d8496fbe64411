#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "pasta/conditioning.hpp"
#include "pasta/dataset.hpp"
#include "pasta/diffusion.hpp"
#include "pasta/network.hpp"
#include "pasta/volumetric.hpp"

namespace pasta::train {

enum class Distance { l1, l2 };
/// Predefined conditioner task: MRI->PET translation or MRI reconstruction.
enum class Task { m2p, m2m };

std::string to_string(Distance d);
Distance distance_from_string(const std::string& s);
std::string to_string(Task t);
Task task_from_string(const std::string& s);

struct LossWeights {
    double lambda_task = 0.1;
    double lambda_diff = 1.0;
    double lambda_cycle = 1.0;
    void validate() const;
};

struct ObjectiveOptions {
    LossWeights weights;
    Distance task_distance = Distance::l1;
    Distance diff_distance = Distance::l1;
    Task task = Task::m2p;
    bool cycle = true;
};

/// Mean distance between two same-shaped tensors.
torch::Tensor distance(const torch::Tensor& a, const torch::Tensor& b, Distance d);

torch::Tensor loss_task(const torch::Tensor& output, const torch::Tensor& target, Distance d = Distance::l1);

/// mean(w * dist(x0_true, x0_pred)); `weights` broadcastable or undefined (uniform).
torch::Tensor loss_diff(const torch::Tensor& x0_true, const torch::Tensor& x0_pred, const torch::Tensor& weights,
                        Distance d = Distance::l1);

/// One mini-batch of paired stacks with its diffusion noise already drawn,
/// so the objective is a deterministic function of the weights.
struct Batch {
    torch::Tensor mri;       // {B, N, H, W}
    torch::Tensor pet;       // {B, N, H, W}
    torch::Tensor clinical;  // {B, clinical_dim} or undefined
    torch::Tensor roi;       // {B, N, H, W} weights or undefined
    torch::Tensor t;         // {B} int64 in [1, T]
    torch::Tensor eps_pet;   // noise for processes that denoise PET
    torch::Tensor eps_mri;   // noise for processes that denoise MRI
    std::vector<std::string> mri_ids, pet_ids;  // optional pairing check

    void check_paired() const;
};

/// Uniform t in [1, T] (one per element, shared by all four processes) and fresh noise.
void draw_noise(Batch& batch, int T, torch::Generator& gen);

struct ArmRole {
    net::Arm arm;
    bool clinical;
};

/// Single-step surrogate translation G(source): the conditioning arm maps the
/// source to a pyramid, the denoising arm predicts x0 from the teacher-forced
/// noisy target. Differentiable w.r.t. both arms.
torch::Tensor generate_surrogate(ArmRole cond, ArmRole den, const torch::Tensor& source,
                                 const torch::Tensor& noisy_target, const torch::Tensor& t,
                                 const torch::Tensor& clinical);

using Translator = std::function<torch::Tensor(const torch::Tensor& source)>;

struct CycleTerms {
    torch::Tensor fwd;  // d(G_m(P_hat), M)
    torch::Tensor bwd;  // d(G_p(G_m(P)), P)
};

/// Exchange-cycle terms for arbitrary per-element translators. `to_mri` sees
/// P_hat and P concatenated along the batch dimension in one call.
CycleTerms exchange_cycle(const Translator& to_mri, const Translator& to_pet, const torch::Tensor& mri,
                          const torch::Tensor& pet, const torch::Tensor& pet_hat);

struct LossBreakdown {
    torch::Tensor total;
    torch::Tensor task;
    torch::Tensor diff;
    torch::Tensor cycle_fwd;
    torch::Tensor cycle_bwd;
};

/// Task + ROI-weighted diffusion + forward/backward exchange-cycle objective.
LossBreakdown cyclex_round(net::DualArmNet& net, const Batch& batch, const diffusion::DiffusionSchedule& sched,
                           const ObjectiveOptions& opts);

struct TrainConfig {
    int steps = 72000;
    int batch_size = 6;
    double lr = 5e-4;
    double weight_decay = 1e-6;
    double ema_decay = 0.999;
    double grad_clip = 1.0;
    int log_every = 100;
    int checkpoint_every = 0;  // 0 -> only at the end
    int val_every = 0;         // 0 -> only at the end
    int val_sample_steps = 20;
    bool use_roi = true;
    double roi_inside = 3.0;
    double roi_outside = 1.0;
    int axis = 2;
    volumetric::BorderPolicy border = volumetric::BorderPolicy::clamp;
    ObjectiveOptions objective;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Stacked training tensors for one split.
struct StackedData {
    std::vector<std::string> subject_ids;
    std::vector<torch::Tensor> mri;  // per subject {S, N, H, W}
    std::vector<torch::Tensor> pet;
    torch::Tensor roi;               // {S, N, H, W} or undefined
    torch::Tensor clinical;          // {num_subjects, clinical_dim}
};

StackedData stack_split(const data::Dataset& ds, data::Split split, const conditioning::ClinicalStats& stats,
                        const TrainConfig& cfg, int n_slices);

struct StepLog {
    std::int64_t step = 0;
    double task = 0, diff = 0, cycle_fwd = 0, cycle_bwd = 0, total = 0;
    double lr = 0;
    std::optional<double> val_mae;
};

/// A module's parameters re-pointed at slices of one contiguous buffer (and
/// their gradients at slices of a second one), so whole-model updates are
/// single tensor ops.
class FlatParams {
public:
    FlatParams() = default;
    FlatParams(std::vector<torch::Tensor> params, bool with_grad);

    torch::Tensor& data() { return data_; }
    torch::Tensor& grad() { return grad_; }
    /// Re-packs after something (e.g. deserialisation) replaced parameter storage.
    void rebind();

private:
    std::vector<torch::Tensor> params_;
    torch::Tensor data_, grad_;
    bool with_grad_ = false;
};

/// Owns the mutable training state: both arms, their EMA shadow, optimiser
/// moments, RNG streams and the step counter.
class Trainer {
public:
    Trainer(net::NetConfig net_cfg, TrainConfig cfg, int diffusion_steps, std::uint64_t seed);

    StepLog step(const StackedData& data);
    void ema_update();
    /// Clipped AdamW update on the flat parameter buffer.
    void optimizer_step();

    net::DualArmNet& model() { return net_; }
    net::DualArmNet& ema() { return ema_; }
    const diffusion::DiffusionSchedule& schedule() const { return sched_; }
    std::int64_t step_count() const { return step_; }
    const TrainConfig& config() const { return cfg_; }
    const net::NetConfig& net_config() const { return net_cfg_; }
    std::uint64_t seed() const { return seed_; }

    /// The config echo stored in checkpoints.
    nlohmann::json config_json() const;

    /// Free-form data saved alongside the weights (e.g. clinical statistics).
    void set_metadata(nlohmann::json m) { metadata_ = std::move(m); }
    const nlohmann::json& metadata() const { return metadata_; }

    void save(const std::filesystem::path& path) const;
    /// Restores the full state; refuses when the stored config differs from
    /// this trainer's, listing the differing fields.
    void load(const std::filesystem::path& path);

private:
    net::NetConfig net_cfg_;
    TrainConfig cfg_;
    std::uint64_t seed_;
    diffusion::DiffusionSchedule sched_;
    net::DualArmNet net_{nullptr};
    net::DualArmNet ema_{nullptr};
    FlatParams flat_, ema_flat_;
    torch::Tensor adam_m_, adam_v_;
    std::int64_t adam_t_ = 0;
    std::mt19937_64 data_rng_;
    torch::Generator noise_gen_;
    std::int64_t step_ = 0;
    nlohmann::json metadata_ = nlohmann::json::object();
};

/// Copies parameters and buffers from `src` into `dst` (same structure).
void copy_weights(torch::nn::Module& dst, const torch::nn::Module& src);

/// Reads only the config echo from a checkpoint.
nlohmann::json read_checkpoint_config(const std::filesystem::path& path);

/// Rebuilds a trainer (weights, EMA, optimiser, RNG) from a checkpoint alone.
std::unique_ptr<Trainer> trainer_from_checkpoint(const std::filesystem::path& path);

/// Fields that differ between two JSON objects, as dotted paths.
std::vector<std::string> json_diff(const nlohmann::json& a, const nlohmann::json& b, const std::string& prefix = "");

}  // namespace pasta::train
