#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

namespace pasta {

enum class Modality : std::uint8_t { mri = 0, pet = 1, mask = 2, other = 3 };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

/// H x W x D float32 grid, row-major (last index fastest).
struct Volume3D {
    torch::Tensor data;  // kFloat32, shape {H, W, D}, contiguous
    Modality modality = Modality::other;

    Volume3D() = default;
    Volume3D(torch::Tensor d, Modality m);

    static Volume3D zeros(std::array<std::int64_t, 3> dims, Modality m = Modality::other);

    std::array<std::int64_t, 3> dims() const;
    std::int64_t numel() const { return data.numel(); }
    std::int64_t extent(int axis) const { return data.size(axis); }
    bool bitwise_equal(const Volume3D& other) const;
};

namespace io {

constexpr std::uint16_t kPvolVersion = 1;
constexpr std::size_t kPvolHeaderBytes = 4 + 2 + 12 + 1;

/// PVOL: "PVOL", u16 version, 3 x u32 dims, u8 modality, little-endian f32 voxels.
void write_volume(const Volume3D& vol, const std::filesystem::path& path);
Volume3D read_volume(const std::filesystem::path& path);

std::string encode_volume(const Volume3D& vol);
Volume3D decode_volume(const std::string& bytes);

/// Writes `bytes` to a sibling temp file and renames it over `path`.
void atomic_write(const std::filesystem::path& path, const std::string& bytes);

}  // namespace io

/// Per-volume percentile min-max to [0, 1] (0.5th/99.5th), clipped.
/// A constant volume maps to 0.5 everywhere with a warning.
Volume3D normalize_volume(const Volume3D& raw, double lo_pct = 0.5, double hi_pct = 99.5);

/// Linear-interpolated percentile of a flattened tensor (numpy "linear" rule).
double percentile(const torch::Tensor& values, double pct);

}  // namespace pasta
