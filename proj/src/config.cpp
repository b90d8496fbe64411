#include "pasta/config.hpp"

#include <fstream>

#include "pasta/errors.hpp"
#include "pasta/rng.hpp"

namespace pasta {

namespace {

nlohmann::json sample_json(const pipeline::SampleOptions& s) {
    return {{"n_steps", s.n_steps},
            {"eta", s.eta},
            {"weight", volumetric::to_string(s.weight)},
            {"border", volumetric::to_string(s.border)},
            {"clip", s.clip}};
}

void sample_from_json(const nlohmann::json& j, pipeline::SampleOptions& s) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& k = it.key();
        const auto& v = it.value();
        if (k == "n_steps") s.n_steps = v.get<int>();
        else if (k == "eta") s.eta = v.get<double>();
        else if (k == "weight") s.weight = volumetric::weight_kind_from_string(v.get<std::string>());
        else if (k == "border") s.border = volumetric::border_policy_from_string(v.get<std::string>());
        else if (k == "clip") s.clip = v.get<bool>();
        else throw ConfigError("unknown sample config key '" + k + "'");
    }
}

nlohmann::json data_json(const data::CohortOptions& d) {
    return {{"count", d.count},
            {"severity_jitter", d.severity_jitter},
            {"split", {{"train", d.ratios.train}, {"val", d.ratios.val}, {"test", d.ratios.test}}},
            {"phantom", d.spec}};
}

void data_from_json(const nlohmann::json& j, data::CohortOptions& d) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& k = it.key();
        const auto& v = it.value();
        if (k == "count") d.count = v.get<int>();
        else if (k == "severity_jitter") d.severity_jitter = v.get<double>();
        else if (k == "phantom") from_json(v, d.spec);
        else if (k == "split") {
            for (auto s = v.begin(); s != v.end(); ++s) {
                if (s.key() == "train") d.ratios.train = s.value().get<double>();
                else if (s.key() == "val") d.ratios.val = s.value().get<double>();
                else if (s.key() == "test") d.ratios.test = s.value().get<double>();
                else throw ConfigError("unknown data.split key '" + s.key() + "'");
            }
        } else throw ConfigError("unknown data config key '" + k + "'");
    }
}

}  // namespace

void RunConfig::validate() const {
    if (version != kConfigVersion)
        throw ConfigError("config version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kConfigVersion) + ")");
    net.validate();
    train.objective.weights.validate();
    data.spec.validate();
    if (diffusion_steps < 2) throw ConfigError("diffusion.steps must be >= 2");
    if (sample.n_steps < 1) throw ConfigError("sample.n_steps must be >= 1");
    if (sample.eta < 0) throw ConfigError("sample.eta must be >= 0");
    if (data.count < 0) throw ConfigError("data.count must be >= 0");
    if (train.axis < 0 || train.axis > 2) throw ConfigError("train.axis must be 0, 1 or 2");
    std::vector<std::int64_t> plane;
    for (int a = 0; a < 3; ++a)
        if (a != train.axis) plane.push_back(data.spec.size[static_cast<std::size_t>(a)]);
    if (plane[0] != net.image_h || plane[1] != net.image_w)
        throw ConfigError("data.phantom.size slices along axis " + std::to_string(train.axis) + " are " +
                          std::to_string(plane[0]) + "x" + std::to_string(plane[1]) + " but net.image_size is " +
                          std::to_string(net.image_h) + "x" + std::to_string(net.image_w));
    if (eval.folds < 2) throw ConfigError("eval.folds must be >= 2");
}

void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{{"version", c.version},
                       {"seed", c.seed},
                       {"net", c.net},
                       {"train", c.train},
                       {"diffusion", {{"steps", c.diffusion_steps}, {"schedule", "cosine"}}},
                       {"data", data_json(c.data)},
                       {"sample", sample_json(c.sample)},
                       {"eval", {{"folds", c.eval.folds}, {"classifier", c.eval.classifier}}},
                       {"ablation", {{"cells", c.ablation.cells}, {"seeds", c.ablation.seeds}}}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    if (!j.contains("version")) throw ConfigError("config has no 'version' field");
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const auto& k = it.key();
            const auto& v = it.value();
            if (k == "version") c.version = v.get<int>();
            else if (k == "seed") c.seed = v.get<std::uint64_t>();
            else if (k == "net") from_json(v, c.net);
            else if (k == "train") from_json(v, c.train);
            else if (k == "diffusion") {
                for (auto d = v.begin(); d != v.end(); ++d) {
                    if (d.key() == "steps") c.diffusion_steps = d.value().get<int>();
                    else if (d.key() == "schedule") {
                        if (d.value().get<std::string>() != "cosine")
                            throw ConfigError("diffusion.schedule: only 'cosine' is implemented");
                    } else throw ConfigError("unknown diffusion config key '" + d.key() + "'");
                }
            } else if (k == "data") data_from_json(v, c.data);
            else if (k == "sample") sample_from_json(v, c.sample);
            else if (k == "eval") {
                for (auto e = v.begin(); e != v.end(); ++e) {
                    if (e.key() == "folds") c.eval.folds = e.value().get<int>();
                    else if (e.key() == "classifier") from_json(e.value(), c.eval.classifier);
                    else throw ConfigError("unknown eval config key '" + e.key() + "'");
                }
            } else if (k == "ablation") {
                for (auto a = v.begin(); a != v.end(); ++a) {
                    if (a.key() == "cells") c.ablation.cells = a.value();
                    else if (a.key() == "seeds") c.ablation.seeds = a.value().get<std::vector<std::uint64_t>>();
                    else throw ConfigError("unknown ablation config key '" + a.key() + "'");
                }
            } else throw ConfigError("unknown config key '" + k + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    c.validate();
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return j.get<RunConfig>();
}

RunConfig patched(const RunConfig& base, const nlohmann::json& patch) {
    nlohmann::json j = base;
    j.merge_patch(patch);
    return j.get<RunConfig>();
}

RunConfig desk_scale_config() {
    RunConfig c;
    c.net.base_channels = 16;
    c.net.depth = 2;
    c.net.channel_multipliers = {1, 2};
    c.net.attention_resolutions = {};
    c.net.in_slices = 5;
    c.net.image_h = 16;
    c.net.image_w = 16;
    c.net.group_norm_groups = 8;
    c.net.res_blocks = 1;
    c.data.spec.size = {16, 16, 16};
    c.train.steps = 5000;
    c.train.log_every = 500;
    c.sample.n_steps = 20;
    return c;
}

std::uint64_t cohort_seed(const RunConfig& c) { return derive_seed(c.seed, "data"); }
std::uint64_t trainer_seed(const RunConfig& c) { return derive_seed(c.seed, "train"); }
std::uint64_t sample_seed(const RunConfig& c) { return derive_seed(c.seed, "sample"); }
std::uint64_t fold_seed(const RunConfig& c) { return derive_seed(c.seed, "folds"); }

}  // namespace pasta
