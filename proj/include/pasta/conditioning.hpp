#pragma once

#include <torch/torch.h>

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pasta/volume.hpp"

namespace pasta::conditioning {

enum class Sex { male, female };
enum class Diagnosis { cn, mci, ad };

std::string to_string(Sex s);
std::string to_string(Diagnosis d);
Sex sex_from_string(const std::string& s);
Diagnosis diagnosis_from_string(const std::string& s);

/// Per-subject clinical condition. Missing values stay std::nullopt.
struct ClinicalRecord {
    std::string subject_id;
    std::optional<double> age;
    std::optional<Sex> sex;
    std::optional<double> education;
    std::optional<int> mmse;
    std::optional<double> adas13;
    std::optional<int> apoe4;
    std::optional<Diagnosis> diagnosis;

    /// Throws DataError if a present field is out of its documented range.
    void validate() const;
};

/// Training-split statistics for the continuous fields (age, education, mmse, adas13).
struct ClinicalStats {
    std::array<double, 4> mean{0, 0, 0, 0};
    std::array<double, 4> stddev{1, 1, 1, 1};
};

ClinicalStats compute_stats(const std::vector<ClinicalRecord>& train_records);

/// Encoded layout, fixed for the schema:
///   [0..3]  z-scored age, education, mmse, adas13 (missing -> 0)
///   [4..5]  sex one-hot (M, F)
///   [6..8]  apoe4 one-hot (0, 1, 2)
///   [9..14] missing bits for age, sex, education, mmse, adas13, apoe4
/// Diagnosis is the classification label and is deliberately not encoded.
constexpr std::size_t kEncodedDim = 15;

std::vector<float> encode_clinical(const ClinicalRecord& record, const ClinicalStats& stats);
torch::Tensor encode_batch(const std::vector<ClinicalRecord>& records, const ClinicalStats& stats);

/// CSV with header subject_id,age,sex,education,mmse,adas13,apoe4,diagnosis.
/// Empty cells are missing values.
std::vector<ClinicalRecord> read_clinical_csv(const std::filesystem::path& path);
void write_clinical_csv(const std::vector<ClinicalRecord>& records, const std::filesystem::path& path);
std::string format_clinical_csv(const std::vector<ClinicalRecord>& records);

/// Loss weighting map over a volume; mean exactly 1, all entries > 0.
struct RoiWeightMap {
    torch::Tensor weights;  // kFloat64, same shape as the mask
    double inside_weight = 1.0;
    double outside_weight = 1.0;
    bool degenerate = false;  // empty or full mask -> uniform ones
};

RoiWeightMap build_roi_weight_map(const Volume3D& mask, double inside = 3.0, double outside = 1.0);

}  // namespace pasta::conditioning
