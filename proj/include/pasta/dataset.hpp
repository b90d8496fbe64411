#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "pasta/conditioning.hpp"
#include "pasta/phantom.hpp"
#include "pasta/volume.hpp"

namespace pasta::data {

enum class Split { train, val, test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

/// Age bins used for stratification and fairness: <60, 60-70, 70-80, >=80.
std::string age_bin(double age);

struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

struct SplitResult {
    std::vector<std::string> train, val, test;
    bool merged_strata = false;
};

enum class BalanceKey { diagnosis, age_bin, sex };

/// Subject-disjoint stratified split. Each stratum's share of every split
/// deviates by at most one subject from the exact ratio; global sizes follow
/// the largest-remainder rule. Strata smaller than the number of splits are
/// pooled together (with a warning).
SplitResult split_dataset(const std::vector<conditioning::ClinicalRecord>& records, const SplitRatios& ratios,
                          const std::vector<BalanceKey>& balance_keys, std::uint64_t seed);

struct CohortOptions {
    phantom::PhantomSpec spec;
    int count = 60;
    double severity_jitter = 0.2;  // std of the per-subject severity around the diagnosis nominal value
    SplitRatios ratios{2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0};
    std::uint64_t seed = 0;
};

struct Subject {
    std::string id;
    Volume3D mri;
    Volume3D pet;
    conditioning::ClinicalRecord record;
    double severity = 0.0;
    Split split = Split::train;
};

struct Dataset {
    phantom::PhantomSpec spec;
    Volume3D roi_mask;
    std::vector<Subject> subjects;

    std::vector<const Subject*> in_split(Split s) const;
    std::vector<conditioning::ClinicalRecord> records(Split s) const;
};

/// Diagnoses assigned round-robin (CN, MCI, AD), sex alternating within
/// each diagnosis, so a count divisible by 6 is exactly balanced.
Dataset generate_cohort(const CohortOptions& opts);

/// Writes volumes (PVOL), clinical.csv, roi_mask.pvol and manifest.json.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir, std::uint64_t seed);
Dataset load_dataset(const std::filesystem::path& dir);

nlohmann::json manifest_json(const Dataset& ds, std::uint64_t seed);

}  // namespace pasta::data
