#include "pasta/training.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <sstream>

#include "pasta/errors.hpp"
#include "pasta/volume.hpp"
#include "pasta/rng.hpp"

namespace pasta::train {

std::string to_string(Distance d) { return d == Distance::l1 ? "l1" : "l2"; }

Distance distance_from_string(const std::string& s) {
    if (s == "l1" || s == "mae") return Distance::l1;
    if (s == "l2" || s == "mse") return Distance::l2;
    throw ConfigError("unknown distance '" + s + "'");
}

std::string to_string(Task t) { return t == Task::m2p ? "m2p" : "m2m"; }

Task task_from_string(const std::string& s) {
    if (s == "m2p") return Task::m2p;
    if (s == "m2m") return Task::m2m;
    throw ConfigError("unknown predefined task '" + s + "'");
}

void LossWeights::validate() const {
    if (lambda_task < 0 || lambda_diff < 0 || lambda_cycle < 0) {
        throw ConfigError("loss weights must be non-negative");
    }
}

namespace {

void check_shapes(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.sizes() != b.sizes()) {
        std::ostringstream os;
        os << what << ": shape mismatch " << a.sizes() << " vs " << b.sizes();
        throw ContractViolation(os.str());
    }
}

}  // namespace

torch::Tensor distance(const torch::Tensor& a, const torch::Tensor& b, Distance d) {
    check_shapes(a, b, "distance");
    auto diff = a - b;
    return d == Distance::l1 ? diff.abs().mean() : diff.square().mean();
}

torch::Tensor loss_task(const torch::Tensor& output, const torch::Tensor& target, Distance d) {
    check_shapes(output, target, "loss_task");
    return distance(output, target, d);
}

torch::Tensor loss_diff(const torch::Tensor& x0_true, const torch::Tensor& x0_pred, const torch::Tensor& weights,
                        Distance d) {
    check_shapes(x0_true, x0_pred, "loss_diff");
    auto diff = x0_pred - x0_true;
    auto per_voxel = d == Distance::l1 ? diff.abs() : diff.square();
    if (!weights.defined()) return per_voxel.mean();
    if ((weights < 0).any().item<bool>()) throw ContractViolation("loss_diff: negative weights");
    return (per_voxel * weights.to(per_voxel.scalar_type())).mean();
}

void Batch::check_paired() const {
    if (!mri.defined() || !pet.defined()) throw ContractViolation("batch: missing stacks");
    if (mri.sizes() != pet.sizes()) throw ContractViolation("unpaired batch: MRI and PET stacks differ in shape");
    if (mri_ids != pet_ids) throw ContractViolation("unpaired batch: subject/slice ids differ between MRI and PET");
    const auto b = mri.size(0);
    if (!t.defined() || t.numel() != b) throw ContractViolation("batch: need one timestep per element");
    if (!eps_pet.defined() || eps_pet.sizes() != pet.sizes()) throw ContractViolation("batch: bad PET noise");
    if (!eps_mri.defined() || eps_mri.sizes() != mri.sizes()) throw ContractViolation("batch: bad MRI noise");
    if (clinical.defined() && clinical.size(0) != b) throw ContractViolation("batch: clinical batch size");
    if (roi.defined() && roi.sizes() != pet.sizes()) throw ContractViolation("batch: roi weights shape");
}

void draw_noise(Batch& batch, int T, torch::Generator& gen) {
    const auto b = batch.pet.size(0);
    batch.t = torch::randint(1, T + 1, {b}, gen, torch::kLong);
    batch.eps_pet = torch::randn(batch.pet.sizes(), gen, batch.pet.options());
    batch.eps_mri = torch::randn(batch.mri.sizes(), gen, batch.mri.options());
}

torch::Tensor generate_surrogate(ArmRole cond, ArmRole den, const torch::Tensor& source,
                                 const torch::Tensor& noisy_target, const torch::Tensor& t,
                                 const torch::Tensor& clinical) {
    auto h = cond.arm->forward(source, t, clinical, nullptr, cond.clinical).pyramid;
    return den.arm->forward(noisy_target, t, clinical, &h, den.clinical).out;
}

CycleTerms exchange_cycle(const Translator& to_mri, const Translator& to_pet, const torch::Tensor& mri,
                          const torch::Tensor& pet, const torch::Tensor& pet_hat) {
    // G_m(P_hat) and G_m(P) share arms and noisy target, so they run as one double-size batch.
    const auto b = mri.size(0);
    auto both = to_mri(torch::cat({pet_hat, pet}));
    CycleTerms out;
    out.fwd = distance(both.narrow(0, 0, b), mri, Distance::l1);
    out.bwd = distance(to_pet(both.narrow(0, b, b)), pet, Distance::l1);
    return out;
}

LossBreakdown cyclex_round(net::DualArmNet& net, const Batch& batch, const diffusion::DiffusionSchedule& sched,
                           const ObjectiveOptions& opts) {
    batch.check_paired();
    opts.weights.validate();
    auto phi = net->conditioner;
    auto x_theta = net->denoiser;
    const bool clin_cond = net->clinical_in_role(false);
    const bool clin_den = net->clinical_in_role(true);
    const auto& t = batch.t;
    const auto& c = batch.clinical;

    LossBreakdown out;
    // Predefined task on the conditioner arm; its pyramid conditions the denoiser.
    auto cond_pass = phi->forward(batch.mri, t, c, nullptr, clin_cond);
    out.task = loss_task(cond_pass.out, opts.task == Task::m2p ? batch.pet : batch.mri, opts.task_distance);

    // G_p(M): x0 prediction of PET from its noised version, conditioned on h_m.
    auto noisy_pet = diffusion::forward_diffuse_batch(batch.pet, t, batch.eps_pet, sched);
    auto pet_hat = x_theta->forward(noisy_pet, t, c, &cond_pass.pyramid, clin_den).out;
    out.diff = loss_diff(batch.pet, pet_hat, batch.roi, opts.diff_distance);

    out.total = out.task * opts.weights.lambda_task + out.diff * opts.weights.lambda_diff;
    if (!opts.cycle) {
        out.cycle_fwd = torch::zeros({}, out.total.options());
        out.cycle_bwd = torch::zeros({}, out.total.options());
        return out;
    }
    // Exchanged arms: x_theta conditions, phi denoises MRI.
    auto noisy_mri = diffusion::forward_diffuse_batch(batch.mri, t, batch.eps_mri, sched);
    const ArmRole theta_as_cond{x_theta, clin_cond};
    const ArmRole phi_as_den{phi, clin_den};
    const ArmRole phi_as_cond{phi, clin_cond};
    const ArmRole theta_as_den{x_theta, clin_den};

    const auto b = batch.mri.size(0);
    auto tile = [&](const torch::Tensor& x, std::int64_t reps) {
        return x.defined() && reps > 1 ? torch::cat(std::vector<torch::Tensor>(reps, x)) : x;
    };
    auto to_mri = [&](const torch::Tensor& src) {
        const auto reps = src.size(0) / b;
        return generate_surrogate(theta_as_cond, phi_as_den, src, tile(noisy_mri, reps), tile(t, reps), tile(c, reps));
    };
    auto to_pet = [&](const torch::Tensor& src) {
        return generate_surrogate(phi_as_cond, theta_as_den, src, noisy_pet, t, c);
    };
    auto cyc = exchange_cycle(to_mri, to_pet, batch.mri, batch.pet, pet_hat);
    out.cycle_fwd = cyc.fwd;
    out.cycle_bwd = cyc.bwd;

    out.total = out.total + (out.cycle_fwd + out.cycle_bwd) * opts.weights.lambda_cycle;
    return out;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"steps", c.steps},
                       {"batch_size", c.batch_size},
                       {"lr", c.lr},
                       {"weight_decay", c.weight_decay},
                       {"ema_decay", c.ema_decay},
                       {"grad_clip", c.grad_clip},
                       {"log_every", c.log_every},
                       {"checkpoint_every", c.checkpoint_every},
                       {"val_every", c.val_every},
                       {"val_sample_steps", c.val_sample_steps},
                       {"use_roi", c.use_roi},
                       {"roi_inside", c.roi_inside},
                       {"roi_outside", c.roi_outside},
                       {"axis", c.axis},
                       {"border", volumetric::to_string(c.border)},
                       {"lambda_task", c.objective.weights.lambda_task},
                       {"lambda_diff", c.objective.weights.lambda_diff},
                       {"lambda_cycle", c.objective.weights.lambda_cycle},
                       {"task_distance", to_string(c.objective.task_distance)},
                       {"diff_distance", to_string(c.objective.diff_distance)},
                       {"task", to_string(c.objective.task)},
                       {"cycle", c.objective.cycle}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& k = it.key();
        const auto& v = it.value();
        if (k == "steps") c.steps = v.get<int>();
        else if (k == "batch_size") c.batch_size = v.get<int>();
        else if (k == "lr") c.lr = v.get<double>();
        else if (k == "weight_decay") c.weight_decay = v.get<double>();
        else if (k == "ema_decay") c.ema_decay = v.get<double>();
        else if (k == "grad_clip") c.grad_clip = v.get<double>();
        else if (k == "log_every") c.log_every = v.get<int>();
        else if (k == "checkpoint_every") c.checkpoint_every = v.get<int>();
        else if (k == "val_every") c.val_every = v.get<int>();
        else if (k == "val_sample_steps") c.val_sample_steps = v.get<int>();
        else if (k == "use_roi") c.use_roi = v.get<bool>();
        else if (k == "roi_inside") c.roi_inside = v.get<double>();
        else if (k == "roi_outside") c.roi_outside = v.get<double>();
        else if (k == "axis") c.axis = v.get<int>();
        else if (k == "border") c.border = volumetric::border_policy_from_string(v.get<std::string>());
        else if (k == "lambda_task") c.objective.weights.lambda_task = v.get<double>();
        else if (k == "lambda_diff") c.objective.weights.lambda_diff = v.get<double>();
        else if (k == "lambda_cycle") c.objective.weights.lambda_cycle = v.get<double>();
        else if (k == "task_distance") c.objective.task_distance = distance_from_string(v.get<std::string>());
        else if (k == "diff_distance") c.objective.diff_distance = distance_from_string(v.get<std::string>());
        else if (k == "task") c.objective.task = task_from_string(v.get<std::string>());
        else if (k == "cycle") c.objective.cycle = v.get<bool>();
        else throw ConfigError("unknown train config key '" + k + "'");
    }
    if (c.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (c.steps < 0) throw ConfigError("train.steps must be >= 0");
    if (c.lr < 0) throw ConfigError("train.lr must be >= 0");
    if (!(c.ema_decay >= 0 && c.ema_decay < 1)) throw ConfigError("train.ema_decay must lie in [0, 1)");
    c.objective.weights.validate();
}

StackedData stack_split(const data::Dataset& ds, data::Split split, const conditioning::ClinicalStats& stats,
                        const TrainConfig& cfg, int n_slices) {
    StackedData out;
    std::vector<conditioning::ClinicalRecord> recs;
    for (const auto* s : ds.in_split(split)) {
        out.subject_ids.push_back(s->id);
        out.mri.push_back(volumetric::extract_all(s->mri.data, cfg.axis, n_slices, cfg.border));
        out.pet.push_back(volumetric::extract_all(s->pet.data, cfg.axis, n_slices, cfg.border));
        recs.push_back(s->record);
    }
    out.clinical = conditioning::encode_batch(recs, stats);
    if (cfg.use_roi) {
        auto map = conditioning::build_roi_weight_map(ds.roi_mask, cfg.roi_inside, cfg.roi_outside);
        out.roi = volumetric::extract_all(map.weights, cfg.axis, n_slices, cfg.border).to(torch::kFloat32);
    }
    return out;
}

Trainer::Trainer(net::NetConfig net_cfg, TrainConfig cfg, int diffusion_steps, std::uint64_t seed)
    : net_cfg_(std::move(net_cfg)),
      cfg_(std::move(cfg)),
      seed_(seed),
      sched_(diffusion::build_cosine_schedule(diffusion_steps)),
      data_rng_(derive_seed(seed, "data")),
      noise_gen_(at::make_generator<at::CPUGeneratorImpl>(derive_seed(seed, "noise"))) {
    net_ = net::build_dual_arm(net_cfg_, derive_seed(seed, "init"));
    ema_ = net::DualArmNet(net_cfg_);
    copy_weights(*ema_, *net_);
    for (auto& p : ema_->parameters()) p.set_requires_grad(false);
    flat_ = FlatParams(net_->parameters(), true);
    ema_flat_ = FlatParams(ema_->parameters(), false);
    adam_m_ = torch::zeros_like(flat_.data());
    adam_v_ = torch::zeros_like(flat_.data());
}

FlatParams::FlatParams(std::vector<torch::Tensor> params, bool with_grad)
    : params_(std::move(params)), with_grad_(with_grad) {
    rebind();
}

void FlatParams::rebind() {
    torch::NoGradGuard ng;
    std::vector<torch::Tensor> parts;
    for (const auto& p : params_) parts.push_back(p.detach().reshape({-1}));
    data_ = torch::cat(parts);
    if (with_grad_) grad_ = torch::zeros_like(data_);
    std::int64_t off = 0;
    for (auto& p : params_) {
        const auto n = p.numel();
        p.set_data(data_.narrow(0, off, n).view(p.sizes()));
        // Autograd accumulates in place into an existing gradient, keeping the view.
        if (with_grad_) p.mutable_grad() = grad_.narrow(0, off, n).view(p.sizes());
        off += n;
    }
}

void Trainer::optimizer_step() {
    torch::NoGradGuard ng;
    auto& g = flat_.grad();
    if (cfg_.grad_clip > 0) {
        const double norm = g.norm().item<double>();
        const double coef = cfg_.grad_clip / (norm + 1e-6);
        if (coef < 1.0) g.mul_(coef);
    }
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++adam_t_;
    auto& w = flat_.data();
    w.mul_(1.0 - cfg_.lr * cfg_.weight_decay);
    adam_m_.lerp_(g, 1.0 - b1);
    adam_v_.mul_(b2).addcmul_(g, g, 1.0 - b2);
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(adam_t_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(adam_t_));
    auto denom = (adam_v_.sqrt() / std::sqrt(bc2)).add_(eps);
    w.addcdiv_(adam_m_, denom, -cfg_.lr / bc1);
}

StepLog Trainer::step(const StackedData& data) {
    if (data.mri.empty()) throw DataError("training split is empty");
    const int b = cfg_.batch_size;
    std::uniform_int_distribution<std::size_t> pick_subject(0, data.mri.size() - 1);
    std::vector<torch::Tensor> m, p, r, c;
    Batch batch;
    for (int i = 0; i < b; ++i) {
        const auto s = pick_subject(data_rng_);
        std::uniform_int_distribution<std::int64_t> pick_slice(0, data.mri[s].size(0) - 1);
        const auto k = pick_slice(data_rng_);
        m.push_back(data.mri[s][k]);
        p.push_back(data.pet[s][k]);
        if (data.roi.defined()) r.push_back(data.roi[k]);
        c.push_back(data.clinical[static_cast<std::int64_t>(s)]);
        const auto tag = data.subject_ids[s] + "#" + std::to_string(k);
        batch.mri_ids.push_back(tag);
        batch.pet_ids.push_back(tag);
    }
    batch.mri = torch::stack(m);
    batch.pet = torch::stack(p);
    if (!r.empty()) batch.roi = torch::stack(r);
    batch.clinical = torch::stack(c);
    draw_noise(batch, sched_.T, noise_gen_);

    net_->train();
    flat_.grad().zero_();
    auto losses = cyclex_round(net_, batch, sched_, cfg_.objective);
    if (!std::isfinite(losses.total.item<double>())) {
        std::ostringstream os;
        os << "non-finite loss at step " << step_ << " (task " << losses.task.item<double>() << ", diff "
           << losses.diff.item<double>() << ", cycle " << losses.cycle_fwd.item<double>() << "/"
           << losses.cycle_bwd.item<double>() << ")";
        throw NumericalError(os.str());
    }
    losses.total.backward();
    optimizer_step();
    ema_update();
    ++step_;

    StepLog log;
    log.step = step_;
    log.task = losses.task.item<double>();
    log.diff = losses.diff.item<double>();
    log.cycle_fwd = losses.cycle_fwd.item<double>();
    log.cycle_bwd = losses.cycle_bwd.item<double>();
    log.total = losses.total.item<double>();
    log.lr = cfg_.lr;
    return log;
}

void Trainer::ema_update() {
    torch::NoGradGuard ng;
    ema_flat_.data().lerp_(flat_.data(), 1.0 - cfg_.ema_decay);
}

nlohmann::json Trainer::config_json() const {
    return nlohmann::json{{"net", net_cfg_},
                          {"train", cfg_},
                          {"diffusion_steps", sched_.T},
                          {"seed", seed_}};
}

void Trainer::save(const std::filesystem::path& path) const {
    torch::serialize::OutputArchive ar;
    ar.write("config", c10::IValue(config_json().dump()));
    ar.write("step", c10::IValue(step_));
    torch::serialize::OutputArchive model_ar, ema_ar, opt_ar;
    net_->save(model_ar);
    ema_->save(ema_ar);
    opt_ar.write("m", adam_m_);
    opt_ar.write("v", adam_v_);
    opt_ar.write("t", c10::IValue(adam_t_));
    ar.write("model", model_ar);
    ar.write("ema", ema_ar);
    ar.write("optimizer", opt_ar);
    std::ostringstream rs;
    rs << data_rng_;
    ar.write("data_rng", c10::IValue(rs.str()));
    ar.write("noise_rng", noise_gen_.get_state());
    ar.write("metadata", c10::IValue(metadata_.dump()));
    std::ostringstream bytes;
    ar.save_to(bytes);
    io::atomic_write(path, bytes.str());
}

nlohmann::json read_checkpoint_config(const std::filesystem::path& path) {
    torch::serialize::InputArchive ar;
    try {
        ar.load_from(path.string());
    } catch (const c10::Error& e) {
        throw DataError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
    }
    c10::IValue cfg;
    ar.read("config", cfg);
    return nlohmann::json::parse(cfg.toStringRef());
}

std::vector<std::string> json_diff(const nlohmann::json& a, const nlohmann::json& b, const std::string& prefix) {
    std::vector<std::string> out;
    if (a.is_object() && b.is_object()) {
        for (auto it = a.begin(); it != a.end(); ++it) {
            const auto key = prefix.empty() ? it.key() : prefix + "." + it.key();
            if (!b.contains(it.key())) {
                out.push_back(key + " (missing on one side)");
                continue;
            }
            auto sub = json_diff(it.value(), b.at(it.key()), key);
            out.insert(out.end(), sub.begin(), sub.end());
        }
        for (auto it = b.begin(); it != b.end(); ++it) {
            if (!a.contains(it.key())) out.push_back((prefix.empty() ? it.key() : prefix + "." + it.key()) + " (missing on one side)");
        }
        return out;
    }
    if (a != b) out.push_back(prefix + ": " + a.dump() + " vs " + b.dump());
    return out;
}

void Trainer::load(const std::filesystem::path& path) {
    torch::serialize::InputArchive ar;
    try {
        ar.load_from(path.string());
    } catch (const c10::Error& e) {
        throw DataError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
    }
    c10::IValue cfg;
    ar.read("config", cfg);
    const auto stored = nlohmann::json::parse(cfg.toStringRef());
    const auto diffs = json_diff(stored, config_json());
    if (!diffs.empty()) {
        std::string msg = "checkpoint/config mismatch:";
        for (const auto& d : diffs) msg += "\n  " + d;
        throw ConfigError(msg);
    }
    c10::IValue step;
    ar.read("step", step);
    step_ = step.toInt();
    torch::serialize::InputArchive model_ar, ema_ar, opt_ar;
    ar.read("model", model_ar);
    ar.read("ema", ema_ar);
    ar.read("optimizer", opt_ar);
    net_->load(model_ar);
    ema_->load(ema_ar);
    flat_.rebind();
    ema_flat_.rebind();
    opt_ar.read("m", adam_m_);
    opt_ar.read("v", adam_v_);
    c10::IValue adam_t;
    opt_ar.read("t", adam_t);
    adam_t_ = adam_t.toInt();
    if (adam_m_.sizes() != flat_.data().sizes() || adam_v_.sizes() != flat_.data().sizes())
        throw DataError("checkpoint optimiser state does not match the model size");
    c10::IValue rng;
    ar.read("data_rng", rng);
    std::istringstream rs(rng.toStringRef());
    rs >> data_rng_;
    torch::Tensor gen_state;
    ar.read("noise_rng", gen_state);
    noise_gen_.set_state(gen_state);
    c10::IValue meta;
    ar.read("metadata", meta);
    metadata_ = nlohmann::json::parse(meta.toStringRef());
}

std::unique_ptr<Trainer> trainer_from_checkpoint(const std::filesystem::path& path) {
    const auto cfg = read_checkpoint_config(path);
    try {
        auto trainer = std::make_unique<Trainer>(cfg.at("net").get<net::NetConfig>(), cfg.at("train").get<TrainConfig>(),
                                                 cfg.at("diffusion_steps").get<int>(), cfg.at("seed").get<std::uint64_t>());
        trainer->load(path);
        return trainer;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed checkpoint config in " + path.string() + ": " + e.what());
    }
}

void copy_weights(torch::nn::Module& dst, const torch::nn::Module& src) {
    torch::NoGradGuard ng;
    auto sp = src.named_parameters(true);
    auto dp = dst.named_parameters(true);
    for (const auto& item : sp) dp[item.key()].copy_(item.value());
    auto sb = src.named_buffers(true);
    auto db = dst.named_buffers(true);
    for (const auto& item : sb) db[item.key()].copy_(item.value());
}

}  // namespace pasta::train
