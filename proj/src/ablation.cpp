#include "pasta/ablation.hpp"

#include <iomanip>
#include <sstream>

#include "pasta/errors.hpp"

namespace pasta::eval {

Experiment run_experiment(const RunConfig& cfg, const std::optional<std::filesystem::path>& out_dir, bool quiet) {
    cfg.validate();
    Experiment e;
    e.config = cfg;
    auto cohort = cfg.data;
    cohort.seed = cohort_seed(cfg);
    e.dataset = data::generate_cohort(cohort);
    e.trainer = std::make_unique<train::Trainer>(cfg.net, cfg.train, cfg.diffusion_steps, trainer_seed(cfg));
    pipeline::RunOptions ro;
    ro.out_dir = out_dir;
    ro.quiet = quiet;
    e.run = pipeline::run_training(*e.trainer, e.dataset, ro);

    auto opts = cfg.sample;
    opts.seed = sample_seed(cfg);
    opts.axis = cfg.train.axis;
    const auto synth = pipeline::translate_split(e.trainer->ema(), e.dataset, data::Split::test, e.run.stats,
                                                 e.trainer->schedule(), opts);
    const auto mean_pet = pipeline::mean_train_pet(e.dataset);
    std::vector<SubjectMetrics> rows, base_rows;
    for (const auto& tr : synth) {
        for (const auto& s : e.dataset.subjects) {
            if (s.id != tr.subject_id) continue;
            rows.push_back(image_metrics(s.pet, tr.synthetic, s.id));
            base_rows.push_back(image_metrics(s.pet, mean_pet, s.id));
        }
    }
    e.test_metrics = summarize(std::move(rows));
    e.baseline_metrics = summarize(std::move(base_rows));
    return e;
}

std::vector<pipeline::Translation> translate_cohort(Experiment& e) {
    auto opts = e.config.sample;
    opts.seed = sample_seed(e.config);
    opts.axis = e.config.train.axis;
    std::vector<pipeline::Translation> out;
    for (auto split : {data::Split::train, data::Split::val, data::Split::test}) {
        auto part = pipeline::translate_split(e.trainer->ema(), e.dataset, split, e.run.stats, e.trainer->schedule(), opts);
        for (auto& t : part) out.push_back(std::move(t));
    }
    return out;
}

std::vector<std::string> standard_cells() {
    return {"full",          "no_cyclex",       "no_roi",          "no_clinical",   "m2m",    "lambda_task=0.01",
            "lambda_task=0.1", "lambda_task=1", "lambda_task=10", "concat", "cond_both", "cond_conditioner"};
}

nlohmann::json cell_patch(const std::string& name) {
    using nlohmann::json;
    if (name == "full") return json::object();
    if (name == "no_cyclex") return {{"train", {{"cycle", false}}}};
    if (name == "no_roi") return {{"train", {{"use_roi", false}}}};
    if (name == "no_clinical") return {{"net", {{"clinical_placement", "none"}}}};
    if (name == "m2m") return {{"train", {{"task", "m2m"}}}};
    if (name == "concat") return {{"net", {{"fusion", "concat"}}}};
    if (name == "cond_both") return {{"net", {{"clinical_placement", "both"}}}};
    if (name == "cond_conditioner") return {{"net", {{"clinical_placement", "conditioner"}}}};
    const std::string prefix = "lambda_task=";
    if (name.rfind(prefix, 0) == 0) {
        try {
            std::size_t used = 0;
            const double v = std::stod(name.substr(prefix.size()), &used);
            if (used == name.size() - prefix.size()) return {{"train", {{"lambda_task", v}}}};
        } catch (const std::exception&) {
        }
    }
    throw ConfigError("unknown ablation cell '" + name + "'");
}

AblationTable run_ablation(const RunConfig& base, const nlohmann::json& cells, const std::vector<std::uint64_t>& seeds,
                           const ProgressFn& progress) {
    if (!cells.is_array() || cells.empty()) throw ConfigError("ablation.cells must be a non-empty array");
    if (seeds.empty()) throw ConfigError("ablation.seeds must not be empty");
    // Resolve every cell before training anything so config errors surface early.
    std::vector<std::pair<std::string, RunConfig>> resolved;
    for (const auto& cell : cells) {
        if (cell.is_string()) {
            resolved.emplace_back(cell.get<std::string>(), patched(base, cell_patch(cell.get<std::string>())));
        } else if (cell.is_object() && cell.contains("name")) {
            for (auto it = cell.begin(); it != cell.end(); ++it)
                if (it.key() != "name" && it.key() != "overrides")
                    throw ConfigError("unknown ablation cell key '" + it.key() + "'");
            resolved.emplace_back(cell.at("name").get<std::string>(),
                                  patched(base, cell.value("overrides", nlohmann::json::object())));
        } else {
            throw ConfigError("ablation cell must be a name or an object with 'name'");
        }
    }
    AblationTable table;
    table.seeds = seeds;
    for (auto& [name, cfg] : resolved) {
        AblationRow row;
        row.cell = name;
        std::vector<SubjectMetrics> pooled;
        for (auto seed : seeds) {
            cfg.seed = seed;
            auto e = run_experiment(cfg);
            if (progress) progress(name, seed, e.test_metrics);
            pooled.insert(pooled.end(), e.test_metrics.subjects.begin(), e.test_metrics.subjects.end());
            row.per_seed.push_back(std::move(e.test_metrics));
        }
        row.mean = summarize(std::move(pooled));
        table.rows.push_back(std::move(row));
    }
    const AblationRow* full = nullptr;
    for (const auto& r : table.rows)
        if (r.cell == "full") full = &r;
    table.has_full = full != nullptr;
    if (full) {
        for (auto& r : table.rows)
            for (std::size_t i = 0; i < seeds.size(); ++i)
                r.full_not_worse += full->per_seed[i].mae_pct <= r.per_seed[i].mae_pct;
    }
    return table;
}

nlohmann::json to_json(const AblationTable& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : t.rows) {
        nlohmann::json per_seed = nlohmann::json::array();
        for (std::size_t i = 0; i < r.per_seed.size(); ++i) {
            const auto& m = r.per_seed[i];
            per_seed.push_back({{"seed", t.seeds[i]},
                                {"mae_pct", m.mae_pct},
                                {"mse_pct", m.mse_pct},
                                {"psnr_db", m.psnr_db},
                                {"ssim_pct", m.ssim_pct}});
        }
        nlohmann::json row{{"cell", r.cell},
                           {"mae_pct", r.mean.mae_pct},
                           {"mse_pct", r.mean.mse_pct},
                           {"psnr_db", r.mean.psnr_db},
                           {"ssim_pct", r.mean.ssim_pct},
                           {"per_seed", per_seed}};
        if (t.has_full) row["full_not_worse_seeds"] = r.full_not_worse;
        rows.push_back(row);
    }
    return {{"seeds", t.seeds}, {"rows", rows}};
}

std::string format_table(const AblationTable& t) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3);
    os << std::left << std::setw(20) << "cell" << std::right << std::setw(10) << "MAE%" << std::setw(10) << "MSE%"
       << std::setw(10) << "PSNR" << std::setw(10) << "SSIM%";
    if (t.has_full) os << std::setw(16) << "full<=cell";
    os << '\n';
    for (const auto& r : t.rows) {
        os << std::left << std::setw(20) << r.cell << std::right << std::setw(10) << r.mean.mae_pct << std::setw(10)
           << r.mean.mse_pct << std::setw(10) << r.mean.psnr_db << std::setw(10) << r.mean.ssim_pct;
        if (t.has_full) os << std::setw(12) << r.full_not_worse << "/" << t.seeds.size();
        os << '\n';
    }
    return os.str();
}

}  // namespace pasta::eval
