#include "pasta/phantom.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <random>

#include "pasta/errors.hpp"
#include "pasta/rng.hpp"

namespace pasta::phantom {

using conditioning::Diagnosis;
using conditioning::Sex;

void PhantomSpec::validate() const {
    for (auto e : size) {
        if (e < 1) throw ConfigError("phantom size must be positive");
    }
    if (!(severity >= 0.0 && severity <= 1.0)) throw ConfigError("phantom severity must lie in [0, 1]");
    if (delta_mri < 0.0 || noise_level < 0.0 || pet_contrast_ratio < 0.0) {
        throw ConfigError("phantom contrasts and noise must be non-negative");
    }
    if (roi_radius <= 0.0) throw ConfigError("phantom roi_radius must be positive");
    if (n_blobs < 0) throw ConfigError("phantom n_blobs must be non-negative");
}

void to_json(nlohmann::json& j, const PhantomSpec& s) {
    j = nlohmann::json{{"size", s.size},
                       {"n_blobs", s.n_blobs},
                       {"blob_amplitude", s.blob_amplitude},
                       {"roi_center", s.roi_center},
                       {"roi_radius", s.roi_radius},
                       {"delta_mri", s.delta_mri},
                       {"pet_contrast_ratio", s.pet_contrast_ratio},
                       {"noise_level", s.noise_level}};
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
    static const std::vector<std::string> known{"size",      "n_blobs",            "blob_amplitude", "roi_center",
                                                "roi_radius", "delta_mri", "pet_contrast_ratio", "noise_level"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
            throw ConfigError("unknown phantom spec key '" + it.key() + "'");
        }
    }
    if (j.contains("size")) s.size = j.at("size").get<std::array<std::int64_t, 3>>();
    if (j.contains("n_blobs")) s.n_blobs = j.at("n_blobs").get<int>();
    if (j.contains("blob_amplitude")) s.blob_amplitude = j.at("blob_amplitude").get<double>();
    if (j.contains("roi_center")) s.roi_center = j.at("roi_center").get<std::array<double, 3>>();
    if (j.contains("roi_radius")) s.roi_radius = j.at("roi_radius").get<double>();
    if (j.contains("delta_mri")) s.delta_mri = j.at("delta_mri").get<double>();
    if (j.contains("pet_contrast_ratio")) s.pet_contrast_ratio = j.at("pet_contrast_ratio").get<double>();
    if (j.contains("noise_level")) s.noise_level = j.at("noise_level").get<double>();
}

namespace {

constexpr double kTransferRate = 3.0;

struct Grid {
    torch::Tensor x, y, z;  // normalised coordinates, float64 {H, W, D}
};

Grid make_grid(const std::array<std::int64_t, 3>& size) {
    auto axis = [](std::int64_t n) {
        return (torch::arange(n, torch::kFloat64) + 0.5) * (2.0 / static_cast<double>(n)) - 1.0;
    };
    auto mesh = torch::meshgrid({axis(size[0]), axis(size[1]), axis(size[2])}, "ij");
    return {mesh[0], mesh[1], mesh[2]};
}

torch::Tensor ellipsoid_radius(const Grid& g, std::array<double, 3> c, std::array<double, 3> r) {
    return torch::sqrt(((g.x - c[0]) / r[0]).square() + ((g.y - c[1]) / r[1]).square() +
                       ((g.z - c[2]) / r[2]).square());
}

torch::Tensor brain_envelope(const Grid& g) {
    auto r = ellipsoid_radius(g, {0.0, 0.0, 0.0}, {0.82, 0.88, 0.8});
    return torch::sigmoid((1.0 - r) / 0.06);
}

torch::Tensor hard_roi(const Grid& g, const PhantomSpec& spec, const torch::Tensor& brain) {
    auto d = ellipsoid_radius(g, spec.roi_center, {spec.roi_radius, spec.roi_radius, spec.roi_radius});
    return ((d < 1.0).logical_and(brain > 0.5)).to(torch::kFloat64);
}

Diagnosis nearest_diagnosis(double severity) {
    if (severity < 0.25) return Diagnosis::cn;
    if (severity < 0.75) return Diagnosis::mci;
    return Diagnosis::ad;
}

}  // namespace

double mri_to_pet(double m) {
    return 0.95 * (1.0 - std::exp(-kTransferRate * m)) / (1.0 - std::exp(-kTransferRate));
}

torch::Tensor mri_to_pet(const torch::Tensor& m) {
    return (1.0 - torch::exp(m * -kTransferRate)) * (0.95 / (1.0 - std::exp(-kTransferRate)));
}

double nominal_severity(Diagnosis d) {
    switch (d) {
        case Diagnosis::cn: return 0.0;
        case Diagnosis::mci: return 0.5;
        case Diagnosis::ad: return 1.0;
    }
    return 0.0;
}

Volume3D roi_mask(const PhantomSpec& spec) {
    spec.validate();
    auto g = make_grid(spec.size);
    return Volume3D(hard_roi(g, spec, brain_envelope(g)), Modality::mask);
}

PhantomPair generate_phantom_pair(const PhantomSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(derive_seed(seed, "phantom-scalars"));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    const auto g = make_grid(spec.size);
    const auto brain = brain_envelope(g);

    // Shared template: bright cortical rim, dark ventricles, two deep grey blobs.
    const auto r_brain = ellipsoid_radius(g, {0.0, 0.0, 0.0}, {0.82, 0.88, 0.8});
    auto tissue = torch::full_like(brain, 0.55);
    tissue = tissue + 0.15 * torch::exp(-((r_brain - 0.85) / 0.1).square());
    tissue = tissue - 0.22 * torch::sigmoid((1.0 - ellipsoid_radius(g, {0.0, 0.0, 0.0}, {0.16, 0.3, 0.2})) / 0.08);
    for (double side : {-1.0, 1.0}) {
        auto d = ellipsoid_radius(g, {0.3 * side, 0.1, 0.0}, {0.15, 0.2, 0.15});
        tissue = tissue + 0.1 * torch::exp(-0.5 * d.square());
    }
    // Subject-specific anatomy.
    for (int b = 0; b < spec.n_blobs; ++b) {
        const std::array<double, 3> c{-0.6 + 1.2 * unit(rng), -0.6 + 1.2 * unit(rng), -0.6 + 1.2 * unit(rng)};
        const double radius = 0.15 + 0.2 * unit(rng);
        const double amp = spec.blob_amplitude * (2.0 * unit(rng) - 1.0);
        auto d = ellipsoid_radius(g, c, {radius, radius, radius});
        tissue = tissue + amp * torch::exp(-0.5 * d.square());
    }
    const auto anatomy = (brain * tissue).clamp(0.0, 1.0);
    const auto roi = hard_roi(g, spec, brain);

    const auto mri = (anatomy - spec.severity * spec.delta_mri * roi).clamp(0.0, 1.0);
    const auto pet_clean = mri_to_pet(mri) - spec.severity * spec.delta_pet() * roi;

    auto gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(seed, "phantom-noise"));
    auto noise = torch::randn(mri.sizes(), gen, torch::kFloat64) * spec.noise_level;
    const auto pet = (pet_clean + noise * (brain > 0.5).to(torch::kFloat64)).clamp(0.0, 1.0);

    PhantomPair out{Volume3D(mri, Modality::mri), Volume3D(pet, Modality::pet), Volume3D(roi, Modality::mask),
                    Volume3D(pet_clean, Modality::pet), {}};

    // Clinical record drawn around the severity so that c carries pathology signal.
    const double s = spec.severity;
    auto& rec = out.record;
    rec.age = std::clamp(68.0 + 8.0 * s + 6.0 * normal(rng), 50.0, 95.0);
    rec.sex = spec.sex ? *spec.sex : (unit(rng) < 0.5 ? Sex::male : Sex::female);
    rec.education = std::clamp(16.0 - 2.0 * s + 2.5 * normal(rng), 6.0, 22.0);
    rec.mmse = static_cast<int>(std::clamp(std::round(29.0 - 7.0 * s + 1.5 * normal(rng)), 0.0, 30.0));
    rec.adas13 = std::max(0.0, 9.0 + 20.0 * s + 4.0 * normal(rng));
    const double p_carrier = 0.25 + 0.45 * s;
    const double u = unit(rng);
    rec.apoe4 = u < p_carrier * p_carrier * 0.5 ? 2 : (u < p_carrier ? 1 : 0);
    rec.diagnosis = spec.diagnosis ? *spec.diagnosis : nearest_diagnosis(s);
    return out;
}

Volume3D oracle_translate(const Volume3D& mri, const Volume3D& mask, const PhantomSpec& spec) {
    auto m = mri.data.to(torch::kFloat64);
    auto p = mri_to_pet(m) - spec.severity * spec.delta_pet() * (mask.data.to(torch::kFloat64) > 0.5).to(torch::kFloat64);
    return Volume3D(p.clamp(0.0, 1.0), Modality::pet);
}

}  // namespace pasta::phantom
