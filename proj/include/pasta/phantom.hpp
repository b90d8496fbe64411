#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "json.hpp"

#include "pasta/conditioning.hpp"
#include "pasta/volume.hpp"

namespace pasta::phantom {

/// Synthetic paired MRI/PET subject. PET is a fixed monotone transfer of MRI
/// plus an ROI hypometabolism drop three times the MRI atrophy contrast.
struct PhantomSpec {
    std::array<std::int64_t, 3> size{16, 16, 16};
    int n_blobs = 10;
    double blob_amplitude = 0.3;
    std::array<double, 3> roi_center{0.3, -0.25, 0.1};  // normalised [-1, 1] coordinates
    double roi_radius = 0.35;
    double severity = 0.0;  // [0, 1]
    double delta_mri = 0.05;
    double pet_contrast_ratio = 3.0;  // delta_pet = ratio * delta_mri
    double noise_level = 0.005;       // PET noise standard deviation
    std::optional<conditioning::Diagnosis> diagnosis;
    std::optional<conditioning::Sex> sex;

    double delta_pet() const { return pet_contrast_ratio * delta_mri; }
    void validate() const;
};

void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

/// Monotone MRI -> PET intensity transfer, g(0) = 0.
double mri_to_pet(double m);
torch::Tensor mri_to_pet(const torch::Tensor& m);

/// Nominal severity per diagnosis: CN 0, MCI 0.5, AD 1.
double nominal_severity(conditioning::Diagnosis d);

struct PhantomPair {
    Volume3D mri;
    Volume3D pet;
    Volume3D roi_mask;   // binary
    Volume3D pet_clean;  // PET before noise
    conditioning::ClinicalRecord record;
};

PhantomPair generate_phantom_pair(const PhantomSpec& spec, std::uint64_t seed);

/// The ROI mask depends only on geometry, not on the subject.
Volume3D roi_mask(const PhantomSpec& spec);

/// Ground-truth translator: mri_to_pet plus the severity-scaled ROI drop.
Volume3D oracle_translate(const Volume3D& mri, const Volume3D& mask, const PhantomSpec& spec);

}  // namespace pasta::phantom
