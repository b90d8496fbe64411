#include "pasta/diffusion.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <numbers>
#include <sstream>
#include <string>

#include "pasta/errors.hpp"

namespace pasta::diffusion {

namespace {

constexpr double kMaxBeta = 0.999;

void check_step(const DiffusionSchedule& sched, int t, const char* what) {
    if (t < 0 || t > sched.T) {
        throw ContractViolation(std::string(what) + " = " + std::to_string(t) + " outside [0, " +
                                std::to_string(sched.T) + "]");
    }
}

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.sizes() != b.sizes()) {
        std::ostringstream os;
        os << what << ": shape mismatch " << a.sizes() << " vs " << b.sizes();
        throw ContractViolation(os.str());
    }
}

}  // namespace

DiffusionSchedule build_cosine_schedule(int T, double s) {
    if (T < 2) {
        // With the beta clamp, T = 1 gives alpha_bar[T] = 1e-3 exactly, violating alpha_bar[T] < 1e-3.
        throw ConfigError("cosine schedule needs T >= 2, got " + std::to_string(T));
    }
    if (!(s > 0.0 && s < 1.0)) {
        throw ConfigError("cosine schedule offset s must lie in (0, 1), got " + std::to_string(s));
    }
    auto f = [s](double u) {
        const double c = std::cos((u + s) / (1.0 + s) * std::numbers::pi / 2.0);
        return c * c;
    };
    const double f0 = f(0.0);

    DiffusionSchedule sched;
    sched.T = T;
    sched.kind = ScheduleKind::cosine;
    sched.alpha_bar.resize(T + 1);
    sched.alpha_bar[0] = 1.0;
    bool clamped = false;
    for (int t = 1; t <= T; ++t) {
        const double prev = f(static_cast<double>(t - 1) / T);
        const double cur = f(static_cast<double>(t) / T);
        const double beta = 1.0 - cur / prev;
        if (beta > kMaxBeta || clamped) {
            clamped = clamped || beta > kMaxBeta;
            sched.alpha_bar[t] = sched.alpha_bar[t - 1] * (1.0 - std::min(beta, kMaxBeta));
        } else {
            sched.alpha_bar[t] = cur / f0;
        }
    }
    sched.alpha.resize(T + 1);
    sched.sigma.resize(T + 1);
    for (int t = 0; t <= T; ++t) {
        sched.alpha[t] = std::sqrt(sched.alpha_bar[t]);
        sched.sigma[t] = std::sqrt(1.0 - sched.alpha_bar[t]);
    }
    return sched;
}

NoisySample forward_diffuse(const torch::Tensor& x0, int t, const torch::Tensor& eps,
                            const DiffusionSchedule& sched) {
    check_same_shape(x0, eps, "forward_diffuse");
    check_step(sched, t, "t");
    NoisySample out;
    out.t = t;
    out.eps = eps;
    out.x_t = t == 0 ? x0.clone() : x0 * sched.alpha[t] + eps * sched.sigma[t];
    return out;
}

torch::Tensor forward_diffuse_batch(const torch::Tensor& x0, const torch::Tensor& t,
                                    const torch::Tensor& eps, const DiffusionSchedule& sched) {
    check_same_shape(x0, eps, "forward_diffuse_batch");
    if (t.dim() != 1 || t.size(0) != x0.size(0)) {
        throw ContractViolation("forward_diffuse_batch: need one timestep per batch element");
    }
    auto tl = t.to(torch::kLong);
    if (tl.min().item<std::int64_t>() < 0 || tl.max().item<std::int64_t>() > sched.T) {
        throw ContractViolation("forward_diffuse_batch: timestep outside [0, T]");
    }
    auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    auto a_tab = torch::tensor(sched.alpha, opts);
    auto s_tab = torch::tensor(sched.sigma, opts);
    std::vector<std::int64_t> bshape(x0.dim(), 1);
    bshape[0] = x0.size(0);
    auto a = a_tab.index_select(0, tl).to(x0.scalar_type()).view(bshape);
    auto s = s_tab.index_select(0, tl).to(x0.scalar_type()).view(bshape);
    return a * x0 + s * eps;
}

torch::Tensor implied_noise(const torch::Tensor& x_t, const torch::Tensor& x0_pred, int t,
                            const DiffusionSchedule& sched) {
    check_step(sched, t, "t");
    if (sched.sigma[t] == 0.0) {
        throw NumericalError("implied noise undefined at t = " + std::to_string(t) + " (sigma = 0)");
    }
    return (x_t - x0_pred * sched.alpha[t]) / sched.sigma[t];
}

torch::Tensor ddim_step(const torch::Tensor& x_t, const torch::Tensor& x0_pred, int t, int t_prev,
                        const DiffusionSchedule& sched, double eta,
                        std::optional<torch::Generator> gen) {
    check_same_shape(x_t, x0_pred, "ddim_step");
    check_step(sched, t, "t");
    check_step(sched, t_prev, "t_prev");
    if (t_prev >= t) {
        throw ContractViolation("ddim_step requires t_prev < t");
    }
    if (!(eta >= 0.0 && eta <= 1.0)) {
        throw ConfigError("ddim eta must lie in [0, 1]");
    }
    if (sched.sigma[t] == 0.0) {
        throw NumericalError("ddim_step: sigma vanishes at t = " + std::to_string(t));
    }
    if (t_prev == 0) {
        return x0_pred.clone();
    }
    auto eps = implied_noise(x_t, x0_pred, t, sched);
    const double ab_t = sched.alpha_bar[t];
    const double ab_p = sched.alpha_bar[t_prev];
    double noise_scale = 0.0;
    if (eta > 0.0) {
        noise_scale = eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_p);
    }
    const double dir_scale = std::sqrt(std::max(0.0, 1.0 - ab_p - noise_scale * noise_scale));
    auto x_prev = x0_pred * sched.alpha[t_prev] + eps * dir_scale;
    if (noise_scale > 0.0) {
        if (!gen) {
            throw ContractViolation("ddim_step with eta > 0 needs a generator");
        }
        x_prev = x_prev + torch::randn(x_t.sizes(), *gen, x_t.options()) * noise_scale;
    }
    return x_prev;
}

std::vector<int> sampling_timesteps(int T, int n_steps) {
    if (n_steps < 1 || n_steps > T) {
        throw ConfigError("sampling steps must lie in [1, T], got " + std::to_string(n_steps));
    }
    std::vector<int> ts(n_steps + 1);
    for (int i = 0; i <= n_steps; ++i) {
        ts[i] = static_cast<int>(std::llround(static_cast<double>(T) * (n_steps - i) / n_steps));
    }
    return ts;
}

torch::Tensor run_chain(const X0Predictor& denoiser, torch::Tensor x_T, const DiffusionSchedule& sched, int n_steps,
                        double eta, std::optional<torch::Generator> gen) {
    auto x = std::move(x_T);
    const auto ts = sampling_timesteps(sched.T, n_steps);
    for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
        auto x0 = denoiser(x, ts[i]);
        if (x0.sizes() != x.sizes()) {
            throw ContractViolation("denoiser returned a prediction of the wrong shape");
        }
        x = ddim_step(x, x0, ts[i], ts[i + 1], sched, eta, gen);
    }
    return x;
}

torch::Tensor sample_chain(const X0Predictor& denoiser, torch::IntArrayRef shape,
                           const DiffusionSchedule& sched, const ChainOptions& opts) {
    torch::Generator gen = at::make_generator<at::CPUGeneratorImpl>(opts.seed);
    auto x = torch::randn(shape, gen, torch::TensorOptions().dtype(opts.dtype));
    return run_chain(denoiser, x, sched, opts.n_steps, opts.eta, gen);
}

}  // namespace pasta::diffusion
