// pasta: phantom data generation, training, sampling and evaluation.

#include <torch/torch.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "pasta/ablation.hpp"
#include "pasta/classify.hpp"
#include "pasta/config.hpp"
#include "pasta/errors.hpp"
#include "pasta/log.hpp"
#include "pasta/metrics.hpp"
#include "pasta/pipeline.hpp"
#include "pasta/rng.hpp"
#include "pasta/stats.hpp"
#include "pasta/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pasta;

namespace {

void write_json(const fs::path& path, const json& j) { io::atomic_write(path, j.dump(2) + "\n"); }

json echo(const RunConfig& cfg) {
    json j = cfg;
    return {{"pasta_version", kVersion}, {"config", j}};
}

/// Refuses a non-empty output directory unless `force`; creates it otherwise.
void prepare_out_dir(const fs::path& dir, bool force) {
    if (fs::exists(dir) && !fs::is_directory(dir)) throw ConfigError(dir.string() + " exists and is not a directory");
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!force) throw ConfigError(dir.string() + " is not empty (use --force to overwrite)");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
}

RunConfig config_or_default(const std::string& path) {
    return path.empty() ? desk_scale_config() : load_run_config(path);
}

std::map<std::string, fs::path> volumes_in(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError(dir.string() + " is not a directory");
    std::map<std::string, fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".pvol") out[e.path().stem().string()] = e.path();
    return out;
}

int cmd_gen_data(const std::string& config, const std::string& spec, std::optional<int> count,
                 std::optional<std::uint64_t> seed, const std::string& out, bool force) {
    auto cfg = config_or_default(config);
    if (!spec.empty()) {
        std::ifstream in(spec);
        if (!in) throw ConfigError("cannot open phantom spec " + spec);
        from_json(json::parse(in), cfg.data.spec);
    }
    if (count) cfg.data.count = *count;
    if (seed) cfg.seed = *seed;
    if (cfg.data.count == 0) log::warn("gen-data: --count 0 writes an empty cohort");
    prepare_out_dir(out, force);
    auto cohort = cfg.data;
    cohort.seed = cohort_seed(cfg);
    const auto ds = data::generate_cohort(cohort);
    data::write_dataset(ds, out, cfg.seed);
    write_json(fs::path(out) / "config.json", echo(cfg));
    std::map<std::string, int> strata;
    for (const auto& s : ds.subjects)
        strata[s.record.diagnosis ? conditioning::to_string(*s.record.diagnosis) : "?"]++;
    std::cout << "wrote " << ds.subjects.size() << " subjects to " << out;
    for (const auto& [k, n] : strata) std::cout << "  " << k << "=" << n;
    std::cout << '\n';
    return 0;
}

int cmd_train(const std::string& config, const std::string& data_dir, const std::string& out,
              const std::string& resume, bool force, bool quiet) {
    auto cfg = config_or_default(config);
    const auto ds = data::load_dataset(data_dir);
    if (resume.empty()) prepare_out_dir(out, force);
    else fs::create_directories(out);
    train::Trainer trainer(cfg.net, cfg.train, cfg.diffusion_steps, trainer_seed(cfg));
    if (!resume.empty()) {
        trainer.load(resume);
        log::info("resumed from ", resume, " at step ", trainer.step_count());
    }
    write_json(fs::path(out) / "config.json", echo(cfg));
    log::info("training ", net::parameter_count(*trainer.model()), " parameters for ", cfg.train.steps, " steps");
    pipeline::RunOptions ro;
    ro.out_dir = fs::path(out);
    ro.quiet = quiet;
    const auto res = pipeline::run_training(trainer, ds, ro);
    json summary{{"steps", trainer.step_count()}};
    summary["final_val_mae"] = res.final_val_mae ? json(*res.final_val_mae) : json(nullptr);
    summary["best_val_mae"] = res.best_val_mae ? json(*res.best_val_mae) : json(nullptr);
    write_json(fs::path(out) / "summary.json", summary);
    std::cout << summary.dump() << '\n';
    return 0;
}

int cmd_sample(const std::string& ckpt, const std::string& mri, const std::string& out, const std::string& clinical,
               std::optional<std::uint64_t> seed, int steps, double eta, bool raw_weights) {
    auto trainer = train::trainer_from_checkpoint(ckpt);
    const auto& meta = trainer->metadata();
    conditioning::ClinicalStats stats;
    if (meta.contains("clinical_stats")) stats = pipeline::stats_from_json(meta.at("clinical_stats"));
    std::map<std::string, conditioning::ClinicalRecord> records;
    if (!clinical.empty())
        for (auto& r : conditioning::read_clinical_csv(clinical)) records[r.subject_id] = r;

    pipeline::SampleOptions opts;
    opts.n_steps = steps;
    opts.eta = eta;
    opts.axis = trainer->config().axis;
    opts.border = trainer->config().border;
    const std::uint64_t base_seed = seed ? *seed : derive_seed(trainer->seed(), "sample");
    auto& net = raw_weights ? trainer->model() : trainer->ema();

    std::map<std::string, fs::path> inputs;
    const bool many = fs::is_directory(mri);
    if (many) inputs = volumes_in(mri);
    else inputs[fs::path(mri).stem().string()] = mri;
    if (many) fs::create_directories(out);
    for (const auto& [id, path] : inputs) {
        const auto vol = io::read_volume(path);
        conditioning::ClinicalRecord rec;
        if (auto it = records.find(id); it != records.end()) rec = it->second;
        else if (!records.empty()) log::warn("no clinical row for ", id, "; sampling with all fields missing");
        opts.seed = derive_seed(base_seed, id);
        const auto c = torch::tensor(conditioning::encode_clinical(rec, stats));
        const auto pet = pipeline::translate_volume(net, vol, c, trainer->schedule(), opts);
        const fs::path dest = many ? fs::path(out) / (id + ".pvol") : fs::path(out);
        io::write_volume(pet, dest);
        std::cout << "wrote " << dest.string() << '\n';
    }
    json echo_j{{"pasta_version", kVersion},
                {"checkpoint", ckpt},
                {"checkpoint_config", train::read_checkpoint_config(ckpt)},
                {"sample", {{"n_steps", steps}, {"eta", eta}, {"seed", base_seed}, {"weights", raw_weights ? "raw" : "ema"}}}};
    const fs::path echo_path = many ? fs::path(out) / "sample.json" : fs::path(fs::path(out).string() + ".json");
    write_json(echo_path, echo_j);
    return 0;
}

int cmd_eval(const std::string& real_dir, const std::string& synth_dir, const std::string& clinical,
             const std::string& json_out) {
    const auto real = volumes_in(real_dir);
    const auto synth = volumes_in(synth_dir);
    std::vector<eval::SubjectMetrics> rows;
    for (const auto& [id, path] : synth) {
        auto it = real.find(id);
        if (it == real.end()) throw DataError("no real volume for synthetic " + path.string());
        rows.push_back(eval::image_metrics(io::read_volume(it->second), io::read_volume(path), id));
    }
    if (rows.empty()) throw DataError("no .pvol files in " + synth_dir);
    const auto report = eval::summarize(rows);
    std::cout << eval::format_table(report);
    json j{{"pasta_version", kVersion}, {"metrics", eval::to_json(report)}};
    if (!clinical.empty()) {
        std::map<std::string, conditioning::ClinicalRecord> recs;
        for (auto& r : conditioning::read_clinical_csv(clinical)) recs[r.subject_id] = r;
        std::vector<double> errs;
        std::map<std::string, std::vector<std::string>> groups;
        for (const auto& row : rows) {
            auto it = recs.find(row.subject_id);
            if (it == recs.end()) throw DataError("no clinical row for " + row.subject_id);
            const auto& r = it->second;
            errs.push_back(row.mae_pct);
            groups["age"].push_back(r.age ? data::age_bin(*r.age) : "unknown");
            groups["sex"].push_back(r.sex ? conditioning::to_string(*r.sex) : "unknown");
            groups["diagnosis"].push_back(r.diagnosis ? conditioning::to_string(*r.diagnosis) : "unknown");
        }
        const auto fair = eval::fairness_report(errs, groups);
        std::cout << '\n' << eval::format_table(fair);
        j["fairness"] = eval::to_json(fair);
    }
    if (!json_out.empty()) write_json(json_out, j);
    return 0;
}

int cmd_classify(const std::string& dataset, const std::string& source, const std::string& synth_dir,
                 const std::string& config, std::optional<std::uint64_t> seed, const std::string& json_out) {
    auto cfg = config_or_default(config);
    if (seed) cfg.seed = *seed;
    const auto ds = data::load_dataset(dataset);
    std::map<std::string, fs::path> synth;
    if (source == "synth") {
        if (synth_dir.empty()) throw ConfigError("--source synth needs --synth-dir");
        synth = volumes_in(synth_dir);
    }
    std::vector<torch::Tensor> vols;
    std::vector<int> labels;
    for (const auto& s : ds.subjects) {
        if (!s.record.diagnosis || *s.record.diagnosis == conditioning::Diagnosis::mci) continue;
        labels.push_back(*s.record.diagnosis == conditioning::Diagnosis::ad ? 1 : 0);
        if (source == "mri") vols.push_back(s.mri.data);
        else if (source == "pet") vols.push_back(s.pet.data);
        else {
            auto it = synth.find(s.id);
            if (it == synth.end()) throw DataError("no synthetic volume for " + s.id + " in " + synth_dir);
            vols.push_back(io::read_volume(it->second).data);
        }
    }
    const auto rep = eval::classify_cv(vols, labels, cfg.eval.folds, cfg.eval.classifier, fold_seed(cfg));
    std::cout << eval::format_table(rep, source);
    if (!json_out.empty())
        write_json(json_out, {{"pasta_version", kVersion}, {"source", source}, {"config", json(cfg)},
                              {"report", eval::to_json(rep)}});
    return 0;
}

int cmd_ablate(const std::string& grid, const std::string& out, bool force) {
    const auto cfg = load_run_config(grid);
    if (!out.empty()) {
        prepare_out_dir(out, force);
        write_json(fs::path(out) / "config.json", echo(cfg));
    }
    const auto table = eval::run_ablation(cfg, cfg.ablation.cells, cfg.ablation.seeds,
                                          [](const std::string& cell, std::uint64_t seed, const eval::MetricsReport& m) {
                                              log::info("cell ", cell, " seed ", seed, " MAE% ", m.mae_pct);
                                          });
    std::cout << eval::format_table(table);
    if (!out.empty()) write_json(fs::path(out) / "ablation.json", eval::to_json(table));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pathology-aware MRI-to-PET translation on phantom cohorts"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);
    int workers = 1;
    std::string log_level = "info";
    app.add_option("--workers", workers, "Intra-op threads (1 = bit-exact reproducible)")->check(CLI::PositiveNumber);
    app.add_option("--log-level", log_level, "debug, info, warn")->check(CLI::IsMember({"debug", "info", "warn"}));

    std::string config, spec, out, data_dir, resume, ckpt, mri, clinical, real_dir, synth_dir, json_out, dataset,
        source, grid;
    std::optional<int> count;
    std::optional<std::uint64_t> seed;
    bool force = false, quiet = false, raw = false;
    int steps = 1000;
    double eta = 0.0;

    auto* gen = app.add_subcommand("gen-data", "Generate a phantom cohort");
    gen->add_option("--config", config, "Run config (JSON)")->check(CLI::ExistingFile);
    gen->add_option("--spec", spec, "Phantom spec (JSON), overrides the config's")->check(CLI::ExistingFile);
    gen->add_option("--count", count, "Number of subjects")->check(CLI::NonNegativeNumber);
    gen->add_option("--seed", seed, "Master seed");
    gen->add_option("--out", out, "Output dataset directory")->required();
    gen->add_flag("--force", force, "Replace a non-empty output directory");

    auto* trn = app.add_subcommand("train", "Train on a dataset directory");
    trn->add_option("--config", config, "Run config (JSON)")->check(CLI::ExistingFile);
    trn->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    trn->add_option("--out", out, "Run directory")->required();
    trn->add_option("--resume", resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
    trn->add_flag("--force", force, "Replace a non-empty run directory");
    trn->add_flag("--quiet", quiet, "No per-step log lines");

    auto* smp = app.add_subcommand("sample", "Synthesise PET from MRI");
    smp->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    smp->add_option("--mri", mri, "MRI volume (.pvol) or directory of volumes")->required()->check(CLI::ExistingPath);
    smp->add_option("--out", out, "Output volume, or directory when --mri is a directory")->required();
    smp->add_option("--clinical", clinical, "Clinical CSV keyed by file stem")->check(CLI::ExistingFile);
    smp->add_option("--seed", seed, "Sampling seed");
    smp->add_option("--steps", steps, "DDIM steps")->check(CLI::PositiveNumber);
    smp->add_option("--eta", eta, "DDIM eta (0 = deterministic)")->check(CLI::NonNegativeNumber);
    smp->add_flag("--raw-weights", raw, "Use the raw instead of the EMA weights");

    auto* evl = app.add_subcommand("eval", "Image metrics of synthetic against real volumes");
    evl->add_option("--real-dir", real_dir, "Directory of real PET volumes")->required();
    evl->add_option("--synth-dir", synth_dir, "Directory of synthetic volumes (same file names)")->required();
    evl->add_option("--clinical", clinical, "Clinical CSV for the fairness table")->check(CLI::ExistingFile);
    evl->add_option("--json", json_out, "Write the report as JSON");

    auto* cls = app.add_subcommand("classify", "5-fold CN vs AD classification");
    cls->add_option("--dataset", dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    cls->add_option("--source", source, "mri, pet or synth")->required()->check(CLI::IsMember({"mri", "pet", "synth"}));
    cls->add_option("--synth-dir", synth_dir, "Synthetic PET directory for --source synth");
    cls->add_option("--config", config, "Run config (JSON)")->check(CLI::ExistingFile);
    cls->add_option("--seed", seed, "Master seed");
    cls->add_option("--json", json_out, "Write the report as JSON");

    auto* abl = app.add_subcommand("ablate", "Train and score every cell of an ablation grid");
    abl->add_option("--grid", grid, "Run config with an 'ablation' section")->required()->check(CLI::ExistingFile);
    abl->add_option("--out", out, "Report directory");
    abl->add_flag("--force", force, "Replace a non-empty report directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    torch::set_num_threads(workers);
    if (workers == 1) torch::set_num_interop_threads(1);
    log::set_level(log_level == "debug" ? log::Level::debug : log_level == "warn" ? log::Level::warn : log::Level::info);

    try {
        if (*gen) return cmd_gen_data(config, spec, count, seed, out, force);
        if (*trn) return cmd_train(config, data_dir, out, resume, force, quiet);
        if (*smp) return cmd_sample(ckpt, mri, out, clinical, seed, steps, eta, raw);
        if (*evl) return cmd_eval(real_dir, synth_dir, clinical, json_out);
        if (*cls) return cmd_classify(dataset, source, synth_dir, config, seed, json_out);
        if (*abl) return cmd_ablate(grid, out, force);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
