#include "pasta/pipeline.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <fstream>
#include <iomanip>
#include <sstream>

#include "pasta/errors.hpp"
#include "pasta/log.hpp"
#include "pasta/rng.hpp"

namespace pasta::pipeline {

Volume3D translate_volume(net::DualArmNet& net, const Volume3D& mri, const torch::Tensor& clinical,
                          const diffusion::DiffusionSchedule& sched, const SampleOptions& opts) {
    torch::NoGradGuard ng;
    const auto& cfg = net->config();
    auto stacks = volumetric::extract_all(mri.data, opts.axis, cfg.in_slices, opts.border);
    const auto s = stacks.size(0);
    if (stacks.size(2) != cfg.image_h || stacks.size(3) != cfg.image_w) {
        std::ostringstream os;
        os << "volume slices " << stacks.size(2) << "x" << stacks.size(3) << " do not match the network image size "
           << cfg.image_h << "x" << cfg.image_w;
        throw ContractViolation(os.str());
    }
    std::vector<torch::Tensor> init;
    init.reserve(static_cast<std::size_t>(s));
    for (std::int64_t k = 0; k < s; ++k) {
        torch::Generator gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(opts.seed, "slice", static_cast<std::uint64_t>(k)));
        init.push_back(torch::randn({cfg.in_slices, cfg.image_h, cfg.image_w}, gen, torch::kFloat32));
    }
    torch::Tensor c;
    if (clinical.defined()) c = clinical.reshape({1, -1}).expand({s, clinical.numel()}).contiguous();

    const bool clin_cond = net->clinical_in_role(false);
    const bool clin_den = net->clinical_in_role(true);
    auto predictor = [&](const torch::Tensor& x, int t) {
        auto tt = torch::full({s}, t, torch::kLong);
        auto h = net->conditioner->forward(stacks, tt, c, nullptr, clin_cond).pyramid;
        auto x0 = net->denoiser->forward(x, tt, c, &h, clin_den).out;
        return opts.clip ? x0.clamp(0.0, 1.0) : x0;
    };
    std::optional<torch::Generator> eta_gen;
    if (opts.eta > 0) eta_gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(opts.seed, "eta"));
    auto out = diffusion::run_chain(predictor, torch::stack(init), sched, opts.n_steps, opts.eta, eta_gen);
    auto vol = volumetric::assemble(out, opts.axis, opts.weight);
    if (opts.clip) vol = vol.clamp(0.0, 1.0);
    return Volume3D(vol, Modality::pet);
}

std::vector<Translation> translate_split(net::DualArmNet& net, const data::Dataset& ds, data::Split split,
                                         const conditioning::ClinicalStats& stats,
                                         const diffusion::DiffusionSchedule& sched, const SampleOptions& opts) {
    std::vector<Translation> out;
    for (const auto* sub : ds.in_split(split)) {
        auto c = torch::tensor(conditioning::encode_clinical(sub->record, stats));
        SampleOptions o = opts;
        o.seed = derive_seed(opts.seed, sub->id);
        out.push_back({sub->id, translate_volume(net, sub->mri, c, sched, o)});
    }
    return out;
}

double split_mae(const data::Dataset& ds, const std::vector<Translation>& synth) {
    if (synth.empty()) throw ContractViolation("split_mae: nothing to score");
    double total = 0.0;
    for (const auto& tr : synth) {
        const data::Subject* sub = nullptr;
        for (const auto& s : ds.subjects)
            if (s.id == tr.subject_id) sub = &s;
        if (!sub) throw ContractViolation("split_mae: unknown subject " + tr.subject_id);
        total += (sub->pet.data.to(torch::kFloat64) - tr.synthetic.data.to(torch::kFloat64)).abs().mean().item<double>();
    }
    return total / static_cast<double>(synth.size());
}

nlohmann::json stats_json(const conditioning::ClinicalStats& s) {
    return {{"mean", s.mean}, {"stddev", s.stddev}};
}

conditioning::ClinicalStats stats_from_json(const nlohmann::json& j) {
    conditioning::ClinicalStats s;
    s.mean = j.at("mean").get<std::array<double, 4>>();
    s.stddev = j.at("stddev").get<std::array<double, 4>>();
    return s;
}

namespace {

std::string log_line(const train::StepLog& l) {
    nlohmann::json j{{"step", l.step},          {"l_task", l.task},   {"l_diff", l.diff},
                     {"l_cycle_fwd", l.cycle_fwd}, {"l_cycle_bwd", l.cycle_bwd}, {"total", l.total},
                     {"lr", l.lr}};
    j["val_mae"] = l.val_mae ? nlohmann::json(*l.val_mae) : nlohmann::json(nullptr);
    return j.dump();
}

std::string checkpoint_name(std::int64_t step) {
    std::ostringstream os;
    os << "ckpt-" << std::setw(8) << std::setfill('0') << step << ".pt";
    return os.str();
}

}  // namespace

RunResult run_training(train::Trainer& trainer, const data::Dataset& ds, const RunOptions& opts) {
    namespace fs = std::filesystem;
    const auto& cfg = trainer.config();
    RunResult res;
    res.stats = conditioning::compute_stats(ds.records(data::Split::train));
    trainer.set_metadata({{"clinical_stats", stats_json(res.stats)}});
    const int n_slices = trainer.net_config().in_slices;
    const auto train_data = train::stack_split(ds, data::Split::train, res.stats, cfg, n_slices);
    const bool can_validate = opts.validate && !ds.in_split(data::Split::val).empty();

    std::ofstream metrics;
    if (opts.out_dir) {
        fs::create_directories(*opts.out_dir);
        metrics.open(*opts.out_dir / "metrics.jsonl", std::ios::app);
    }
    SampleOptions val_opts;
    val_opts.n_steps = std::min(cfg.val_sample_steps, trainer.schedule().T);
    val_opts.seed = derive_seed(trainer.seed(), "validation");
    val_opts.axis = cfg.axis;
    val_opts.border = cfg.border;

    auto validate = [&]() {
        auto synth = translate_split(trainer.ema(), ds, data::Split::val, res.stats, trainer.schedule(), val_opts);
        return split_mae(ds, synth);
    };
    auto save = [&](const std::string& name) {
        if (opts.out_dir) trainer.save(*opts.out_dir / name);
    };

    while (trainer.step_count() < cfg.steps) {
        train::StepLog log;
        try {
            log = trainer.step(train_data);
        } catch (const NumericalError&) {
            save("nan-snapshot.pt");
            throw;
        }
        const auto step = log.step;
        const bool last = step == cfg.steps;
        if (can_validate && ((cfg.val_every > 0 && step % cfg.val_every == 0) || last)) {
            log.val_mae = validate();
            res.final_val_mae = log.val_mae;
            if (!res.best_val_mae || *log.val_mae < *res.best_val_mae) {
                res.best_val_mae = log.val_mae;
                save("best.pt");
            }
        }
        const bool log_now = log.val_mae || last || (cfg.log_every > 0 && step % cfg.log_every == 0);
        if (log_now) {
            res.logs.push_back(log);
            if (metrics) metrics << log_line(log) << '\n' << std::flush;
            if (!opts.quiet) {
                log::info("step ", step, " total ", log.total, " task ", log.task, " diff ", log.diff, " cyc ",
                          log.cycle_fwd, "/", log.cycle_bwd,
                          log.val_mae ? " val_mae " + std::to_string(*log.val_mae) : std::string());
            }
        }
        if ((cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) || last) save(checkpoint_name(step));
    }
    return res;
}

Volume3D mean_train_pet(const data::Dataset& ds) {
    auto train = ds.in_split(data::Split::train);
    if (train.empty()) throw DataError("mean_train_pet: empty training split");
    auto acc = torch::zeros_like(train.front()->pet.data, torch::kFloat64);
    for (const auto* s : train) acc += s->pet.data.to(torch::kFloat64);
    return Volume3D(acc / static_cast<double>(train.size()), Modality::pet);
}

}  // namespace pasta::pipeline
