#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pasta/volume.hpp"

namespace pasta::volumetric {

enum class BorderPolicy { clamp, reflect };
enum class WeightKind { triangular, uniform, gaussian };

WeightKind weight_kind_from_string(const std::string& s);
std::string to_string(WeightKind k);
BorderPolicy border_policy_from_string(const std::string& s);
std::string to_string(BorderPolicy p);

/// N neighbouring slices around `center` along `axis`; channel k holds source
/// slice center + (k - K), K = (N - 1) / 2, with out-of-range indices folded
/// back by the border policy.
struct SliceStack {
    torch::Tensor data;  // {N, A, B}: the two non-sliced axes in volume order
    int axis = 2;
    std::int64_t center = 0;
    int n = 1;
    std::int64_t extent = 0;  // length of the source axis; 0 if unknown

    int half_width() const { return (n - 1) / 2; }
};

/// Source index for neighbour offset `offset` around `center` in a length-`extent` axis.
std::int64_t neighbour_index(std::int64_t center, int offset, std::int64_t extent, BorderPolicy policy);

/// Contribution weight as a function of |k| for half-width K.
double neighbour_weight(WeightKind kind, int distance, int half_width);

/// Single slice `index` along `axis`, shape {A, B}.
torch::Tensor slice_of(const torch::Tensor& volume, int axis, std::int64_t index);

SliceStack extract_stack(const Volume3D& volume, int axis, std::int64_t index, int n,
                         BorderPolicy policy = BorderPolicy::clamp);

/// All stacks along an axis, batched into {S, N, A, B}.
torch::Tensor extract_all(const torch::Tensor& volume, int axis, int n,
                          BorderPolicy policy = BorderPolicy::clamp);

/// Distance-weighted reassembly. `stacks` is {S, N, A, B}: one stack per
/// center index 0..S-1 along `axis`. Output slice s averages every channel
/// that lands on s, weighted by w(|k|).
torch::Tensor assemble(const torch::Tensor& stacks, int axis, WeightKind kind = WeightKind::triangular);

Volume3D assemble_volume(const std::vector<SliceStack>& stacks, WeightKind kind = WeightKind::triangular,
                         Modality modality = Modality::other);

}  // namespace pasta::volumetric
