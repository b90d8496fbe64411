#include "pasta/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "pasta/errors.hpp"
#include "pasta/log.hpp"
#include "pasta/rng.hpp"

namespace pasta::data {

using conditioning::ClinicalRecord;
using conditioning::Diagnosis;
using conditioning::Sex;

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw DataError("unknown split '" + s + "'");
}

std::string age_bin(double age) {
    if (age < 60.0) return "<60";
    if (age < 70.0) return "60-70";
    if (age < 80.0) return "70-80";
    return ">80";
}

namespace {

std::string stratum_key(const ClinicalRecord& r, const std::vector<BalanceKey>& keys) {
    std::string k;
    for (auto key : keys) {
        switch (key) {
            case BalanceKey::diagnosis: k += r.diagnosis ? conditioning::to_string(*r.diagnosis) : "?"; break;
            case BalanceKey::age_bin: k += r.age ? age_bin(*r.age) : "?"; break;
            case BalanceKey::sex: k += r.sex ? conditioning::to_string(*r.sex) : "?"; break;
        }
        k += '|';
    }
    return k;
}

/// Largest-remainder apportionment of n items over the given ratios.
std::array<std::int64_t, 3> apportion(std::int64_t n, const std::array<double, 3>& ratio) {
    std::array<std::int64_t, 3> out{};
    std::array<double, 3> rem{};
    std::int64_t used = 0;
    for (int j = 0; j < 3; ++j) {
        const double exact = ratio[j] * static_cast<double>(n);
        out[j] = static_cast<std::int64_t>(std::floor(exact + 1e-9));
        rem[j] = exact - static_cast<double>(out[j]);
        used += out[j];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
    for (int i = 0; used < n; ++i, ++used) out[order[i % 3]] += 1;
    return out;
}

}  // namespace

SplitResult split_dataset(const std::vector<ClinicalRecord>& records, const SplitRatios& ratios,
                          const std::vector<BalanceKey>& balance_keys, std::uint64_t seed) {
    const std::array<double, 3> ratio{ratios.train, ratios.val, ratios.test};
    const double total = ratio[0] + ratio[1] + ratio[2];
    if (std::abs(total - 1.0) > 1e-9 || *std::min_element(ratio.begin(), ratio.end()) < 0.0) {
        throw ConfigError("split ratios must be non-negative and sum to 1");
    }
    {
        std::vector<std::string> ids;
        for (const auto& r : records) ids.push_back(r.subject_id);
        std::sort(ids.begin(), ids.end());
        if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
            throw DataError("split_dataset: duplicate subject ids");
        }
    }
    const int active = static_cast<int>(std::count_if(ratio.begin(), ratio.end(), [](double r) { return r > 0; }));

    // Strata in a canonical order, members sorted by id, then shuffled per stratum.
    std::map<std::string, std::vector<std::string>> strata;
    for (const auto& r : records) strata[stratum_key(r, balance_keys)].push_back(r.subject_id);
    SplitResult res;
    std::vector<std::string> pooled;
    for (auto it = strata.begin(); it != strata.end();) {
        if (static_cast<int>(it->second.size()) < active) {
            pooled.insert(pooled.end(), it->second.begin(), it->second.end());
            it = strata.erase(it);
            res.merged_strata = true;
        } else {
            ++it;
        }
    }
    if (res.merged_strata) {
        log::warn("split_dataset: strata smaller than ", active, " splits were merged (", pooled.size(), " subjects)");
        strata["~merged"] = pooled;
    }
    std::vector<std::vector<std::string>> groups;
    std::mt19937_64 rng(derive_seed(seed, "split"));
    for (auto& [key, ids] : strata) {
        std::sort(ids.begin(), ids.end());
        std::shuffle(ids.begin(), ids.end(), rng);
        groups.push_back(ids);
    }

    const auto n = static_cast<std::int64_t>(records.size());
    const auto target = apportion(n, ratio);
    std::vector<std::array<std::int64_t, 3>> alloc(groups.size());
    std::vector<std::array<double, 3>> rem(groups.size());
    std::vector<std::int64_t> left(groups.size());
    std::array<std::int64_t, 3> extra = target;
    for (std::size_t s = 0; s < groups.size(); ++s) {
        const auto size = static_cast<std::int64_t>(groups[s].size());
        left[s] = size;
        for (int j = 0; j < 3; ++j) {
            const double exact = ratio[j] * static_cast<double>(size);
            alloc[s][j] = static_cast<std::int64_t>(std::floor(exact + 1e-9));
            rem[s][j] = exact - static_cast<double>(alloc[s][j]);
            left[s] -= alloc[s][j];
            extra[j] -= alloc[s][j];
        }
    }
    // Hand out the leftover units, at most one extra per (stratum, split). Filling
    // splits in order of demand from the strata with the most units left always
    // succeeds when such a 0-1 assignment exists; remainders break ties.
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return extra[a] > extra[b]; });
    for (int j : order) {
        if (ratio[j] <= 0) continue;
        std::vector<std::size_t> idx(groups.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            if (left[a] != left[b]) return left[a] > left[b];
            return rem[a][j] > rem[b][j] + 1e-12;
        });
        for (auto s : idx) {
            if (extra[j] == 0) break;
            if (left[s] == 0) continue;
            ++alloc[s][j];
            --left[s];
            --extra[j];
        }
    }
    // Infeasible corner cases: place remaining units wherever a split still needs them.
    for (std::size_t s = 0; s < groups.size(); ++s) {
        for (int j = 0; j < 3 && left[s] > 0; ++j) {
            while (left[s] > 0 && extra[j] > 0) {
                ++alloc[s][j];
                --left[s];
                --extra[j];
            }
        }
    }

    std::array<std::vector<std::string>*, 3> outs{&res.train, &res.val, &res.test};
    for (std::size_t s = 0; s < groups.size(); ++s) {
        std::size_t pos = 0;
        for (int j = 0; j < 3; ++j) {
            for (std::int64_t k = 0; k < alloc[s][j]; ++k) outs[j]->push_back(groups[s][pos++]);
        }
    }
    for (auto* v : outs) std::sort(v->begin(), v->end());
    return res;
}

std::vector<const Subject*> Dataset::in_split(Split s) const {
    std::vector<const Subject*> out;
    for (const auto& sub : subjects)
        if (sub.split == s) out.push_back(&sub);
    return out;
}

std::vector<ClinicalRecord> Dataset::records(Split s) const {
    std::vector<ClinicalRecord> out;
    for (const auto& sub : subjects)
        if (sub.split == s) out.push_back(sub.record);
    return out;
}

Dataset generate_cohort(const CohortOptions& opts) {
    if (opts.count < 0) throw ConfigError("cohort count must be non-negative");
    opts.spec.validate();
    Dataset ds;
    ds.spec = opts.spec;
    ds.roi_mask = phantom::roi_mask(opts.spec);
    if (opts.count == 0) {
        log::warn("generate_cohort: count 0, emitting an empty cohort");
        return ds;
    }
    const std::array<Diagnosis, 3> dx{Diagnosis::cn, Diagnosis::mci, Diagnosis::ad};
    std::array<int, 3> per_dx{0, 0, 0};
    for (int i = 0; i < opts.count; ++i) {
        const int d = i % 3;
        const int k = per_dx[d]++;
        phantom::PhantomSpec spec = opts.spec;
        spec.diagnosis = dx[d];
        spec.sex = k % 2 == 0 ? Sex::male : Sex::female;
        std::mt19937_64 srng(derive_seed(opts.seed, "severity", static_cast<std::uint64_t>(i)));
        std::normal_distribution<double> jitter(0.0, opts.severity_jitter);
        spec.severity = std::clamp(phantom::nominal_severity(dx[d]) + jitter(srng), 0.0, 1.0);
        auto pair = phantom::generate_phantom_pair(spec, derive_seed(opts.seed, "subject", static_cast<std::uint64_t>(i)));
        Subject sub;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "sub-%04d", i);
        sub.id = buf;
        sub.mri = std::move(pair.mri);
        sub.pet = std::move(pair.pet);
        sub.record = std::move(pair.record);
        sub.record.subject_id = sub.id;
        sub.severity = spec.severity;
        ds.subjects.push_back(std::move(sub));
    }
    std::vector<ClinicalRecord> recs;
    for (const auto& s : ds.subjects) recs.push_back(s.record);
    auto split = split_dataset(recs, opts.ratios, {BalanceKey::diagnosis, BalanceKey::sex}, opts.seed);
    auto assign = [&](const std::vector<std::string>& ids, Split which) {
        for (const auto& id : ids)
            for (auto& s : ds.subjects)
                if (s.id == id) s.split = which;
    };
    assign(split.train, Split::train);
    assign(split.val, Split::val);
    assign(split.test, Split::test);
    return ds;
}

nlohmann::json manifest_json(const Dataset& ds, std::uint64_t seed) {
    nlohmann::json j;
    j["format"] = "pasta-dataset";
    j["version"] = 1;
    j["seed"] = seed;
    j["spec"] = ds.spec;
    j["roi_mask"] = "roi_mask.pvol";
    j["clinical_csv"] = "clinical.csv";
    j["subjects"] = nlohmann::json::array();
    for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
        const auto& s = ds.subjects[i];
        j["subjects"].push_back({{"subject_id", s.id},
                                 {"mri", "mri/" + s.id + ".pvol"},
                                 {"pet", "pet/" + s.id + ".pvol"},
                                 {"clinical_row", i},
                                 {"split", to_string(s.split)},
                                 {"severity", s.severity}});
    }
    return j;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& dir, std::uint64_t seed) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "mri");
    fs::create_directories(dir / "pet");
    io::write_volume(ds.roi_mask, dir / "roi_mask.pvol");
    std::vector<ClinicalRecord> recs;
    for (const auto& s : ds.subjects) {
        io::write_volume(s.mri, dir / "mri" / (s.id + ".pvol"));
        io::write_volume(s.pet, dir / "pet" / (s.id + ".pvol"));
        recs.push_back(s.record);
    }
    conditioning::write_clinical_csv(recs, dir / "clinical.csv");
    io::atomic_write(dir / "manifest.json", manifest_json(ds, seed).dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw DataError("no manifest.json in " + dir.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed manifest: ") + e.what());
    }
    if (j.value("format", "") != "pasta-dataset") throw DataError("not a pasta dataset manifest");
    Dataset ds;
    ds.spec = j.at("spec").get<phantom::PhantomSpec>();
    ds.roi_mask = io::read_volume(dir / j.at("roi_mask").get<std::string>());
    const auto recs = conditioning::read_clinical_csv(dir / j.at("clinical_csv").get<std::string>());
    for (const auto& e : j.at("subjects")) {
        Subject s;
        s.id = e.at("subject_id").get<std::string>();
        s.mri = io::read_volume(dir / e.at("mri").get<std::string>());
        s.pet = io::read_volume(dir / e.at("pet").get<std::string>());
        const auto row = e.at("clinical_row").get<std::size_t>();
        if (row >= recs.size() || recs[row].subject_id != s.id) {
            throw DataError("manifest clinical_row mismatch for " + s.id);
        }
        s.record = recs[row];
        s.split = split_from_string(e.at("split").get<std::string>());
        s.severity = e.value("severity", 0.0);
        ds.subjects.push_back(std::move(s));
    }
    return ds;
}

}  // namespace pasta::data
