#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace pasta::diffusion {

enum class ScheduleKind { cosine };

/// Precomputed tables for a T-step diffusion process, indexed 0..T.
/// Stored in double precision; callers cast at use sites.
struct DiffusionSchedule {
    int T = 0;
    ScheduleKind kind = ScheduleKind::cosine;
    std::vector<double> alpha_bar;  // cumulative signal coefficient
    std::vector<double> alpha;      // sqrt(alpha_bar)
    std::vector<double> sigma;      // sqrt(1 - alpha_bar)
};

/// Cosine schedule: alpha_bar(t) = f(t/T)/f(0), f(u) = cos^2((u+s)/(1+s) * pi/2),
/// with per-step beta clamped to <= 0.999. Requires T >= 2 and 0 < s < 1.
DiffusionSchedule build_cosine_schedule(int T, double s = 0.008);

struct NoisySample {
    torch::Tensor x_t;
    int t = 0;
    torch::Tensor eps;
};

/// x_t = alpha[t] * x0 + sigma[t] * eps. At t = 0 the result is x0 itself.
NoisySample forward_diffuse(const torch::Tensor& x0, int t, const torch::Tensor& eps,
                            const DiffusionSchedule& sched);

/// Batched variant: one timestep per leading-dimension element.
torch::Tensor forward_diffuse_batch(const torch::Tensor& x0, const torch::Tensor& t,
                                    const torch::Tensor& eps, const DiffusionSchedule& sched);

/// Noise implied by an x0 prediction at step t.
torch::Tensor implied_noise(const torch::Tensor& x_t, const torch::Tensor& x0_pred, int t,
                            const DiffusionSchedule& sched);

/// One DDIM update from t to t_prev for an x0-predicting model. With eta > 0
/// a generator must be supplied for the fresh noise term.
torch::Tensor ddim_step(const torch::Tensor& x_t, const torch::Tensor& x0_pred, int t, int t_prev,
                        const DiffusionSchedule& sched, double eta = 0.0,
                        std::optional<torch::Generator> gen = std::nullopt);

/// Denoiser callback: (x_t, t) -> x0 prediction. Conditioning is captured by the closure.
using X0Predictor = std::function<torch::Tensor(const torch::Tensor& x_t, int t)>;

/// Decreasing timestep sequence T = t_0 > t_1 > ... > t_n = 0 with n_steps transitions.
std::vector<int> sampling_timesteps(int T, int n_steps);

struct ChainOptions {
    int n_steps = 1000;
    std::uint64_t seed = 0;
    double eta = 0.0;
    torch::Dtype dtype = torch::kFloat32;
};

/// Reverse chain from a given x_T down to an x0 estimate.
torch::Tensor run_chain(const X0Predictor& denoiser, torch::Tensor x_T, const DiffusionSchedule& sched, int n_steps,
                        double eta = 0.0, std::optional<torch::Generator> gen = std::nullopt);

/// Runs the reverse chain from pure noise at t = T down to an x0 estimate.
torch::Tensor sample_chain(const X0Predictor& denoiser, torch::IntArrayRef shape,
                           const DiffusionSchedule& sched, const ChainOptions& opts);

}  // namespace pasta::diffusion
