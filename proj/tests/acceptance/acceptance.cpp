// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <torch/torch.h>

#include <ATen/CPUGeneratorImpl.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pasta/ablation.hpp"
#include "pasta/classify.hpp"
#include "pasta/config.hpp"
#include "pasta/diffusion.hpp"
#include "pasta/errors.hpp"
#include "pasta/log.hpp"
#include "pasta/metrics.hpp"
#include "pasta/network.hpp"
#include "pasta/phantom.hpp"
#include "pasta/pipeline.hpp"
#include "pasta/stats.hpp"
#include "pasta/training.hpp"
#include "pasta/volumetric.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pasta;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    return os.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------- 1
Outcome schedule_suite() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    bool ok = true;
    for (int T : {4, 100, 1000}) {
        const auto s = diffusion::build_cosine_schedule(T);
        ok = ok && s.alpha_bar[0] == 1.0 && s.alpha_bar[T] < 1e-3;
        for (int t = 1; t <= T; ++t) ok = ok && s.alpha_bar[t] < s.alpha_bar[t - 1];
        for (int t = 0; t <= T; ++t)
            worst = std::max(worst, std::abs(s.alpha[t] * s.alpha[t] + s.sigma[t] * s.sigma[t] - 1.0));
    }
    const double secs = seconds_since(t0);
    return {ok && worst <= 1e-12 && secs < 1.0,
            "max |a^2+s^2-1| " + fmt(worst) + ", " + fmt(secs, 3) + " s"};
}

// ---------------------------------------------------------------- 2
Outcome oracle_ddim() {
    const auto t0 = Clock::now();
    const auto sched = diffusion::build_cosine_schedule(1000);
    double worst = 0.0;
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto x0 = torch::rand({16, 16}, at::make_generator<at::CPUGeneratorImpl>(seed), torch::kFloat64);
        diffusion::X0Predictor oracle = [&](const torch::Tensor& x, int) { return x0.to(x.scalar_type()); };
        for (int n : {50, 1000}) {
            diffusion::ChainOptions o;
            o.n_steps = n;
            o.seed = seed + 100;
            o.dtype = torch::kFloat64;
            auto out = diffusion::sample_chain(oracle, {16, 16}, sched, o);
            worst = std::max(worst, (out - x0).abs().max().item<double>());
        }
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-5 && secs < 10.0, "max |x0_hat - x0| " + fmt(worst) + ", " + fmt(secs, 3) + " s"};
}

// ---------------------------------------------------------------- 3
Outcome adagn_identity() {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(5);
    auto h = torch::randn({3, 16, 6, 7}, gen, torch::kFloat64) * 2.5 - 1.0;
    auto normed = torch::group_norm(h, 4);
    auto ones = torch::ones({3, 16}, torch::kFloat64);
    auto out = net::adagn(normed, ones, torch::zeros({3, 16}, torch::kFloat64), ones, torch::ones_like(h));
    const double dev = (out - normed).abs().max().item<double>();
    auto grouped = out.reshape({3, 4, -1});
    const double mean_dev = grouped.mean(-1).abs().max().item<double>();
    const double var_dev = (grouped.var(-1, false) - 1.0).abs().max().item<double>();
    // Layer-level: zero projections give identity modulation, whatever the embeddings and pyramid.
    net::AdaGN layer(16, 4, 8, 8, net::Fusion::adagn);
    torch::NoGradGuard ng;
    layer->time_proj->weight.zero_();
    layer->time_proj->bias.zero_();
    auto hf = h.to(torch::kFloat32);
    auto lay = layer->forward(hf, torch::randn({3, 8}, gen), torch::randn({3, 8}, gen), torch::randn_like(hf));
    auto ref = torch::group_norm(hf, 4, layer->norm->weight, layer->norm->bias, 1e-5);
    const double layer_dev = (lay - ref).abs().max().item<double>();
    const bool ok = dev <= 1e-6 && mean_dev <= 1e-5 && var_dev <= 1e-5 && layer_dev <= 1e-6;
    return {ok, "modulation " + fmt(dev) + ", group mean " + fmt(mean_dev) + ", group var " + fmt(var_dev) +
                    ", layer " + fmt(layer_dev)};
}

// ---------------------------------------------------------------- 4
net::NetConfig gradcheck_net() {
    net::NetConfig c;
    c.base_channels = 2;
    c.depth = 2;
    c.channel_multipliers = {1, 2};
    c.attention_resolutions = {};
    c.in_slices = 3;
    c.image_h = 8;
    c.image_w = 8;
    c.group_norm_groups = 2;
    c.res_blocks = 1;
    c.time_embed_dim = 4;
    c.clinical_embed_dim = 4;
    return c;
}

Outcome gradient_check() {
    const auto t0 = Clock::now();
    auto model = net::build_dual_arm(gradcheck_net(), 3);
    model->to(torch::kFloat64);
    const auto n_params = net::parameter_count(*model);
    auto sched = diffusion::build_cosine_schedule(20);
    auto gen = at::make_generator<at::CPUGeneratorImpl>(8);
    train::Batch b;
    b.mri = torch::rand({2, 3, 8, 8}, gen, torch::kFloat64);
    b.pet = torch::rand({2, 3, 8, 8}, gen, torch::kFloat64);
    b.clinical = torch::randn({2, 15}, gen, torch::kFloat64);
    b.roi = torch::rand({2, 3, 8, 8}, gen, torch::kFloat64) * 2 + 0.5;
    train::draw_noise(b, 20, gen);
    train::ObjectiveOptions opts;  // task, diffusion and both cycle processes
    opts.task_distance = train::Distance::l2;
    opts.diff_distance = train::Distance::l2;

    auto total = train::cyclex_round(model, b, sched, opts);
    const bool all_active = total.cycle_fwd.item<double>() > 0 && total.cycle_bwd.item<double>() > 0 &&
                            total.task.item<double>() > 0 && total.diff.item<double>() > 0;
    total.total.backward();
    std::mt19937_64 rng(1);
    double worst = 0.0;
    int checked = 0;
    for (auto& p : model->parameters()) {
        if (!p.grad().defined()) continue;
        auto flat = p.view({-1});
        auto g = p.grad().view({-1});
        for (int k = 0; k < 3; ++k) {
            const auto idx = static_cast<std::int64_t>(rng() % flat.numel());
            const double h = 1e-5;
            torch::NoGradGuard ng;
            const double orig = flat[idx].item<double>();
            flat[idx].fill_(orig + h);
            const double lp = train::cyclex_round(model, b, sched, opts).total.item<double>();
            flat[idx].fill_(orig - h);
            const double lm = train::cyclex_round(model, b, sched, opts).total.item<double>();
            flat[idx].fill_(orig);
            const double fd = (lp - lm) / (2 * h);
            const double an = g[idx].item<double>();
            worst = std::max(worst, std::abs(fd - an) / std::max(1e-6, std::abs(fd) + std::abs(an)));
            ++checked;
        }
    }
    const double secs = seconds_since(t0);
    return {all_active && n_params <= 10000 && worst <= 1e-4 && secs < 120.0,
            std::to_string(n_params) + " params, " + std::to_string(checked) + " coords, worst rel err " +
                fmt(worst) + ", " + fmt(secs, 3) + " s"};
}

// ---------------------------------------------------------------- 5
Outcome round_trip() {
    double worst = 0.0;
    for (std::uint64_t seed : {1, 2})
        for (int n : {1, 3, 15})
            for (int axis : {0, 1, 2}) {
                auto v = torch::rand({16, 16, 16}, at::make_generator<at::CPUGeneratorImpl>(seed));
                auto back = volumetric::assemble(volumetric::extract_all(v, axis, n), axis);
                worst = std::max(worst, (back - v).abs().max().item<double>());
            }
    auto gen = at::make_generator<at::CPUGeneratorImpl>(9);
    auto s1 = torch::rand({16, 5, 16, 16}, gen);
    auto s2 = torch::rand({16, 5, 16, 16}, gen);
    const double lin = (volumetric::assemble(s1 * 1.5 - s2 * 0.5, 1) -
                        (volumetric::assemble(s1, 1) * 1.5 - volumetric::assemble(s2, 1) * 0.5))
                           .abs()
                           .max()
                           .item<double>();
    return {worst <= 1e-6 && lin <= 1e-6, "round trip " + fmt(worst) + ", linearity " + fmt(lin)};
}

// ---------------------------------------------------------------- 6
Outcome cyclex_structure() {
    auto cfg = gradcheck_net();
    train::TrainConfig tc;
    tc.objective.cycle = false;
    train::Trainer off(cfg, tc, 50, 1);
    tc.objective.cycle = true;
    train::Trainer on(cfg, tc, 50, 1);
    const auto d_params = net::parameter_count(*on.model()) - net::parameter_count(*off.model());

    // Oracle inverse pair built from the phantom transfer.
    const double k = 3.0, scale = 0.95 / (1.0 - std::exp(-3.0));
    auto gen = at::make_generator<at::CPUGeneratorImpl>(4);
    auto roi = (torch::rand({3, 8, 8}, gen, torch::kFloat64) > 0.6).to(torch::kFloat64) * 0.15;
    train::Translator to_pet = [&](const torch::Tensor& m) { return (1.0 - torch::exp(-k * m)) * scale - roi; };
    train::Translator to_mri = [&](const torch::Tensor& p) { return -torch::log(1.0 - (p + roi) / scale) / k; };
    auto mri = torch::rand({4, 3, 8, 8}, gen, torch::kFloat64) * 0.8 + 0.1;
    auto pet = to_pet(mri);
    auto cyc = train::exchange_cycle(to_mri, to_pet, mri, pet, pet);
    const double l_cycle = cyc.fwd.item<double>() + cyc.bwd.item<double>();

    auto model = net::build_dual_arm(cfg, 2);
    auto sched = diffusion::build_cosine_schedule(50);
    train::Batch b;
    b.mri = torch::rand({2, 3, 8, 8}, gen);
    b.pet = torch::rand({2, 3, 8, 8}, gen);
    b.clinical = torch::randn({2, 15}, gen);
    train::draw_noise(b, 50, gen);
    train::ObjectiveOptions zero;
    zero.weights.lambda_cycle = 0.0;
    train::ObjectiveOptions none = zero;
    none.cycle = false;
    const float a = train::cyclex_round(model, b, sched, zero).total.item<float>();
    const float c = train::cyclex_round(model, b, sched, none).total.item<float>();
    const bool bit_exact = std::memcmp(&a, &c, sizeof(float)) == 0;
    return {d_params == 0 && l_cycle <= 1e-12 && bit_exact,
            "param delta " + std::to_string(d_params) + ", oracle L_cycle " + fmt(l_cycle) +
                ", lambda_cycle=0 bit-exact " + (bit_exact ? "yes" : "no")};
}

// ---------------------------------------------------------------- 7
Outcome metrics_oracle() {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(3);
    // Dyadic values on [0, 0.75]; the float32 offset then differs from 0.1 by rounding only.
    auto grid = torch::randint(0, 769, {16, 16, 16}, gen).to(torch::kFloat64) / 1024.0;
    Volume3D base(grid, Modality::pet);
    Volume3D shifted(grid + 0.1, Modality::pet);
    auto m = eval::image_metrics(base, shifted);
    auto same = eval::image_metrics(base, base);
    const bool ok = std::abs(m.mae_pct - 10.0) <= 1e-6 && std::abs(m.mse_pct - 1.0) <= 1e-6 &&
                    std::abs(m.psnr_db - 20.0) <= 1e-6 && std::abs(same.ssim_pct - 100.0) <= 1e-9;
    return {ok, "MAE% " + fmt(m.mae_pct, 10) + ", MSE% " + fmt(m.mse_pct, 10) + ", PSNR " + fmt(m.psnr_db, 10) +
                    ", SSIM(identical) " + fmt(same.ssim_pct, 10)};
}

// ---------------------------------------------------------------- 8, 9, 10
struct SeedResult {
    std::uint64_t seed = 0;
    double mae = 0, baseline = 0, mae_no_cycle = 0;
    double minutes = 0;
    double bacc_pet = 0, bacc_synth = 0, bacc_mri = 0;
};

json to_json(const SeedResult& r) {
    return {{"seed", r.seed},       {"mae", r.mae},           {"baseline", r.baseline},
            {"mae_no_cycle", r.mae_no_cycle}, {"minutes", r.minutes}, {"bacc_pet", r.bacc_pet},
            {"bacc_synth", r.bacc_synth}, {"bacc_mri", r.bacc_mri}};
}

SeedResult seed_from_json(const json& j) {
    SeedResult r;
    r.seed = j.at("seed");
    r.mae = j.at("mae");
    r.baseline = j.at("baseline");
    r.mae_no_cycle = j.at("mae_no_cycle");
    r.minutes = j.at("minutes");
    r.bacc_pet = j.at("bacc_pet");
    r.bacc_synth = j.at("bacc_synth");
    r.bacc_mri = j.at("bacc_mri");
    return r;
}

double cv_bacc(const RunConfig& cfg, const data::Dataset& ds,
               const std::function<torch::Tensor(std::size_t)>& volume_of) {
    std::vector<torch::Tensor> vols;
    std::vector<int> labels;
    for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
        const auto& d = ds.subjects[i].record.diagnosis;
        if (!d || *d == conditioning::Diagnosis::mci) continue;
        labels.push_back(*d == conditioning::Diagnosis::ad ? 1 : 0);
        vols.push_back(volume_of(i));
    }
    return eval::classify_cv(vols, labels, cfg.eval.folds, cfg.eval.classifier, fold_seed(cfg)).bacc.mean;
}

SeedResult run_seed(std::uint64_t seed, const fs::path& work) {
    SeedResult r;
    r.seed = seed;
    auto cfg = desk_scale_config();
    cfg.seed = seed;

    const auto t0 = Clock::now();
    auto full = eval::run_experiment(cfg, work / ("seed" + std::to_string(seed)) / "full");
    r.mae = full.test_metrics.mae_pct / 100.0;
    r.baseline = full.baseline_metrics.mae_pct / 100.0;
    r.minutes = seconds_since(t0) / 60.0;
    std::cout << "  seed " << seed << ": full MAE " << fmt(r.mae) << " vs baseline " << fmt(r.baseline) << " ("
              << fmt(r.minutes, 3) << " min)" << std::endl;

    const auto synth = eval::translate_cohort(full);
    std::map<std::string, const Volume3D*> by_id;
    for (const auto& t : synth) by_id[t.subject_id] = &t.synthetic;
    const auto& ds = full.dataset;
    r.bacc_pet = cv_bacc(cfg, ds, [&](std::size_t i) { return ds.subjects[i].pet.data; });
    r.bacc_synth = cv_bacc(cfg, ds, [&](std::size_t i) { return by_id.at(ds.subjects[i].id)->data; });
    r.bacc_mri = cv_bacc(cfg, ds, [&](std::size_t i) { return ds.subjects[i].mri.data; });
    std::cout << "  seed " << seed << ": BACC pet " << fmt(100 * r.bacc_pet) << ", synth " << fmt(100 * r.bacc_synth)
              << ", mri " << fmt(100 * r.bacc_mri) << std::endl;

    auto ablated = eval::run_experiment(patched(cfg, eval::cell_patch("no_cyclex")),
                                        work / ("seed" + std::to_string(seed)) / "no_cyclex");
    r.mae_no_cycle = ablated.test_metrics.mae_pct / 100.0;
    std::cout << "  seed " << seed << ": no-CycleEx MAE " << fmt(r.mae_no_cycle) << std::endl;
    return r;
}

// ---------------------------------------------------------------- 11
Outcome fairness_stats() {
    // Hand tables: C(4,2) = 6 equally likely rank splits.
    auto a = eval::rank_sum_test({1, 2}, {3, 4});    // W = 3, only {1,2} and {3,4} as extreme -> 2/6
    auto b = eval::rank_sum_test({1, 3}, {2, 4});    // W = 4, sums {3,4,5,5,6,7}: |W-5| >= 1 -> 4/6
    auto c = eval::rank_sum_test({1, 4}, {2, 3});    // W = 5, the centre -> 6/6
    auto t = eval::rank_sum_test({1, 2}, {2, 3});    // ties: midranks {1, 2.5, 2.5, 4}, W = 3.5 -> 4/6
    auto same = eval::rank_sum_test({0.3, 0.7, 0.1, 0.9}, {0.3, 0.7, 0.1, 0.9});
    const bool exact_ok = a.exact && std::abs(a.p - 2.0 / 6) < 1e-12 && std::abs(b.p - 4.0 / 6) < 1e-12 &&
                          std::abs(c.p - 1.0) < 1e-12 && std::abs(t.p - 4.0 / 6) < 1e-12 && a.rank_sum == 3 &&
                          b.rank_sum == 4 && c.rank_sum == 5 && t.rank_sum == 3.5;
    const bool bonf_ok = eval::bonferroni(0.02, 9) == 0.02 * 9 && eval::bonferroni(0.3, 4) == 1.0 &&
                         eval::bonferroni(0.0125, 4) == 0.0125 * 4;
    const bool same_ok = std::abs(same.p - 1.0) < 1e-12;
    return {exact_ok && bonf_ok && same_ok, "p = " + fmt(a.p) + ", " + fmt(b.p) + ", " + fmt(c.p) + ", ties " +
                                                fmt(t.p) + "; identical groups p = " + fmt(same.p)};
}

// ---------------------------------------------------------------- 12
Outcome reproducibility(const std::string& cli_arg, const fs::path& work) {
    if (cli_arg.empty()) return {false, "no --cli given"};
    const auto cli = fs::absolute(cli_arg).string();
    const auto root = fs::absolute(work / "repro");
    fs::remove_all(root);
    const json tiny = {
        {"version", 1},
        {"seed", 12},
        {"net",
         {{"base_channels", 8}, {"depth", 2}, {"channel_multipliers", {1, 2}}, {"attention_resolutions", json::array()},
          {"in_slices", 3}, {"image_size", {8, 8}}, {"group_norm_groups", 4}, {"res_blocks", 1}}},
        {"train", {{"steps", 20}, {"batch_size", 3}, {"log_every", 10}, {"checkpoint_every", 10}, {"val_every", 10}}},
        {"diffusion", {{"steps", 100}}},
        {"data", {{"count", 12}, {"phantom", {{"size", {8, 8, 8}}}}}},
        {"eval", {{"folds", 2}, {"classifier", {{"channels", {4}}, {"epochs", 3}, {"batch_size", 4}}}}}};
    std::vector<std::string> steps{
        "gen-data --config tiny.json --out data",
        "train --config tiny.json --data data --out run --quiet",
        "sample --ckpt run/best.pt --mri data/mri --clinical data/clinical.csv --steps 5 --out synth",
        "eval --real-dir data/pet --synth-dir synth --clinical data/clinical.csv --json eval.json",
        "classify --dataset data --source synth --synth-dir synth --config tiny.json --json classify.json"};
    for (const char* name : {"a", "b"}) {
        const auto dir = root / name;
        fs::create_directories(dir);
        std::ofstream(dir / "tiny.json") << tiny.dump(2);
        for (const auto& s : steps) {
            const std::string cmd = "cd '" + dir.string() + "' && '" + cli + "' --workers 1 --log-level warn " + s +
                                    " > /dev/null 2>> log.txt";
            if (std::system(cmd.c_str()) != 0) return {false, std::string("run ") + name + " failed at: " + s};
        }
    }
    int compared = 0;
    std::vector<std::string> differing;
    std::set<std::string> kinds;
    for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
        if (!e.is_regular_file() || e.path().filename() == "log.txt") continue;
        const auto rel = fs::relative(e.path(), root / "a");
        const auto ext = rel.extension().string();
        kinds.insert(ext);
        ++compared;
        if (slurp(e.path()) != slurp(root / "b" / rel)) differing.push_back(rel.string());
    }
    const bool covered = kinds.count(".pt") && kinds.count(".pvol") && kinds.count(".json");
    std::string detail = std::to_string(compared) + " files compared";
    if (!differing.empty()) detail += ", differing: " + differing.front() + (differing.size() > 1 ? " ..." : "");
    if (differing.empty()) fs::remove_all(root);
    return {covered && differing.empty() && compared > 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::string work = "acceptance_work";
    std::string cli;
    std::vector<int> only;
    int n_seeds = 5;
    bool reuse = false;
    app.add_option("--work", work, "Scratch directory");
    app.add_option("--cli", cli, "Path to the pasta executable");
    app.add_option("--only", only, "Run only these criteria");
    app.add_option("--seeds", n_seeds, "Seeds for the desk-scale experiment");
    app.add_flag("--reuse", reuse, "Reuse per-seed results already in the work directory");
    CLI11_PARSE(app, argc, argv);

    torch::set_num_threads(1);
    log::set_level(log::Level::warn);
    fs::create_directories(work);
    const auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

    int failures = 0;
    json summary = json::object();
    const auto report = [&](int id, const std::string& name, const Outcome& o) {
        std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << std::setw(2) << id << "] " << name << ": " << o.detail
                  << std::endl;
        summary[std::to_string(id)] = {{"name", name}, {"pass", o.pass}, {"detail", o.detail}};
        if (!o.pass) ++failures;
    };
    const auto guarded = [&](int id, const std::string& name, const std::function<Outcome()>& f) {
        if (!wanted(id)) return;
        try {
            report(id, name, f());
        } catch (const std::exception& e) {
            report(id, name, {false, std::string("exception: ") + e.what()});
        }
    };

    guarded(1, "cosine schedule invariants", schedule_suite);
    guarded(2, "oracle DDIM chain", oracle_ddim);
    guarded(3, "AdaGN identity", adagn_identity);
    guarded(4, "objective gradient check", gradient_check);
    guarded(5, "2.5D round trip", round_trip);
    guarded(6, "CycleEx structure", cyclex_structure);
    guarded(7, "metrics oracle", metrics_oracle);

    if (wanted(8) || wanted(9) || wanted(10)) {
        std::vector<SeedResult> seeds;
        std::string error;
        try {
            for (int s = 0; s < n_seeds; ++s) {
                const auto cache = fs::path(work) / ("seed" + std::to_string(s) + ".json");
                if (reuse && fs::exists(cache)) {
                    seeds.push_back(seed_from_json(json::parse(slurp(cache))));
                    continue;
                }
                seeds.push_back(run_seed(static_cast<std::uint64_t>(s), work));
                std::ofstream(cache) << to_json(seeds.back()).dump(2);
            }
        } catch (const std::exception& e) {
            error = std::string("exception: ") + e.what();
        }
        const auto n = static_cast<double>(seeds.size());
        if (wanted(8)) {
            int beat = 0;
            double slowest = 0;
            std::ostringstream os;
            for (const auto& r : seeds) {
                const double rel = 1.0 - r.mae / r.baseline;
                if (rel >= 0.30) ++beat;
                slowest = std::max(slowest, r.minutes);
                os << " " << fmt(100 * rel, 3) << "%";
            }
            const bool quality = beat >= 4;
            const bool fast = slowest <= 45.0;
            report(8, "desk-scale end-to-end",
                   {error.empty() && quality && fast,
                    error.empty() ? std::to_string(beat) + "/" + std::to_string(seeds.size()) +
                                        " seeds beat the baseline by >=30% (gains" + os.str() + "), slowest seed " +
                                        fmt(slowest, 3) + " min (limit 45)"
                                  : error});
        }
        if (wanted(9)) {
            double pet = 0, synth = 0, mri = 0;
            for (const auto& r : seeds) {
                pet += 100 * r.bacc_pet / n;
                synth += 100 * r.bacc_synth / n;
                mri += 100 * r.bacc_mri / n;
            }
            const bool ok = error.empty() && seeds.size() == static_cast<std::size_t>(n_seeds) && pet > synth &&
                            synth > mri && synth - mri >= 3.0;
            report(9, "pathology transfer ordering",
                   {ok, error.empty() ? "mean BACC GT PET " + fmt(pet) + " > synth " + fmt(synth) + " > MRI " + fmt(mri)
                                      : error});
        }
        if (wanted(10)) {
            int not_worse = 0;
            std::ostringstream os;
            for (const auto& r : seeds) {
                if (r.mae <= r.mae_no_cycle) ++not_worse;
                os << " " << fmt(r.mae) << "/" << fmt(r.mae_no_cycle);
            }
            report(10, "CycleEx ablation direction",
                   {error.empty() && not_worse >= 4,
                    error.empty() ? std::to_string(not_worse) + "/" + std::to_string(seeds.size()) +
                                        " seeds full <= no-CycleEx (MAE full/ablated" + os.str() + ")"
                                  : error});
        }
    }

    guarded(11, "rank-sum and Bonferroni", fairness_stats);
    guarded(12, "byte reproducibility", [&] { return reproducibility(cli, work); });

    std::ofstream(fs::path(work) / "acceptance.json") << summary.dump(2);
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
