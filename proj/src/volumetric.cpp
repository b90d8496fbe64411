#include "pasta/volumetric.hpp"

#include <cmath>

#include "pasta/errors.hpp"

namespace pasta::volumetric {

WeightKind weight_kind_from_string(const std::string& s) {
    if (s == "triangular") return WeightKind::triangular;
    if (s == "uniform") return WeightKind::uniform;
    if (s == "gaussian") return WeightKind::gaussian;
    throw ConfigError("unknown assembly weight '" + s + "'");
}

std::string to_string(WeightKind k) {
    switch (k) {
        case WeightKind::triangular: return "triangular";
        case WeightKind::uniform: return "uniform";
        case WeightKind::gaussian: return "gaussian";
    }
    return "?";
}

BorderPolicy border_policy_from_string(const std::string& s) {
    if (s == "clamp") return BorderPolicy::clamp;
    if (s == "reflect") return BorderPolicy::reflect;
    throw ConfigError("unknown border policy '" + s + "'");
}

std::string to_string(BorderPolicy p) { return p == BorderPolicy::clamp ? "clamp" : "reflect"; }

std::int64_t neighbour_index(std::int64_t center, int offset, std::int64_t extent, BorderPolicy policy) {
    std::int64_t i = center + offset;
    if (policy == BorderPolicy::clamp || extent == 1) {
        return std::clamp<std::int64_t>(i, 0, extent - 1);
    }
    // reflect without repeating the edge: -1 -> 1, extent -> extent - 2
    const std::int64_t period = 2 * (extent - 1);
    i = ((i % period) + period) % period;
    return i < extent ? i : period - i;
}

double neighbour_weight(WeightKind kind, int distance, int half_width) {
    switch (kind) {
        case WeightKind::triangular: return static_cast<double>(half_width + 1 - distance);
        case WeightKind::uniform: return 1.0;
        case WeightKind::gaussian: {
            if (half_width == 0) return 1.0;
            const double sigma = half_width / 2.0;
            return std::exp(-0.5 * distance * distance / (sigma * sigma));
        }
    }
    return 1.0;
}

torch::Tensor slice_of(const torch::Tensor& volume, int axis, std::int64_t index) {
    return volume.select(axis, index);
}

namespace {

void check_axis_n(int axis, int n) {
    if (axis < 0 || axis > 2) throw ConfigError("slicing axis must be 0, 1 or 2");
    if (n < 1 || n % 2 == 0) throw ConfigError("neighbour count N must be odd and positive, got " + std::to_string(n));
}

torch::Tensor stack_indices(std::int64_t center, int n, std::int64_t extent, BorderPolicy policy) {
    const int k = (n - 1) / 2;
    std::vector<std::int64_t> idx(n);
    for (int c = 0; c < n; ++c) idx[c] = neighbour_index(center, c - k, extent, policy);
    return torch::tensor(idx, torch::kLong);
}

}  // namespace

SliceStack extract_stack(const Volume3D& volume, int axis, std::int64_t index, int n, BorderPolicy policy) {
    check_axis_n(axis, n);
    const auto extent = volume.extent(axis);
    if (index < 0 || index >= extent) {
        throw ContractViolation("slice index " + std::to_string(index) + " outside axis extent " +
                                std::to_string(extent));
    }
    SliceStack s;
    s.axis = axis;
    s.center = index;
    s.n = n;
    s.extent = extent;
    auto picked = volume.data.index_select(axis, stack_indices(index, n, extent, policy));
    s.data = picked.movedim(axis, 0).contiguous();
    return s;
}

torch::Tensor extract_all(const torch::Tensor& volume, int axis, int n, BorderPolicy policy) {
    check_axis_n(axis, n);
    const auto extent = volume.size(axis);
    const int k = (n - 1) / 2;
    std::vector<std::int64_t> idx;
    idx.reserve(static_cast<std::size_t>(extent * n));
    for (std::int64_t c = 0; c < extent; ++c)
        for (int j = 0; j < n; ++j) idx.push_back(neighbour_index(c, j - k, extent, policy));
    auto moved = volume.movedim(axis, 0);  // {E, A, B}
    auto gathered = moved.index_select(0, torch::tensor(idx, torch::kLong));
    return gathered.view({extent, n, moved.size(1), moved.size(2)}).contiguous();
}

torch::Tensor assemble(const torch::Tensor& stacks, int axis, WeightKind kind) {
    if (stacks.dim() != 4) throw ContractViolation("assemble expects {S, N, A, B} stacks");
    const auto extent = stacks.size(0);
    const int n = static_cast<int>(stacks.size(1));
    check_axis_n(axis, n);
    const int k = (n - 1) / 2;
    auto opts = stacks.options();
    auto acc = torch::zeros({extent, stacks.size(2), stacks.size(3)}, opts.dtype(torch::kFloat64));
    std::vector<double> wsum(static_cast<std::size_t>(extent), 0.0);
    auto src = stacks.to(torch::kFloat64);
    // Reduction order is fixed (by center, then channel) so results do not depend on
    // how the stacks were produced.
    for (std::int64_t c = 0; c < extent; ++c) {
        for (int j = 0; j < n; ++j) {
            const std::int64_t s = c + (j - k);
            if (s < 0 || s >= extent) continue;
            const double w = neighbour_weight(kind, std::abs(j - k), k);
            acc[s].add_(src[c][j], w);
            wsum[static_cast<std::size_t>(s)] += w;
        }
    }
    for (std::int64_t s = 0; s < extent; ++s) {
        if (wsum[static_cast<std::size_t>(s)] <= 0.0) {
            throw ContractViolation("assembly left slice " + std::to_string(s) + " uncovered");
        }
        acc[s].div_(wsum[static_cast<std::size_t>(s)]);
    }
    return acc.to(stacks.scalar_type()).movedim(0, axis).contiguous();
}

Volume3D assemble_volume(const std::vector<SliceStack>& stacks, WeightKind kind, Modality modality) {
    if (stacks.empty()) throw ContractViolation("assemble_volume: no stacks");
    const int axis = stacks.front().axis;
    const int n = stacks.front().n;
    const auto extent = stacks.front().extent > 0 ? stacks.front().extent : static_cast<std::int64_t>(stacks.size());
    std::vector<torch::Tensor> ordered(static_cast<std::size_t>(extent));
    for (const auto& s : stacks) {
        if (s.axis != axis || s.n != n || (s.extent > 0 && s.extent != extent))
            throw ContractViolation("assemble_volume: inconsistent stacks");
        if (s.center < 0 || s.center >= extent || ordered[static_cast<std::size_t>(s.center)].defined()) {
            throw ContractViolation("assemble_volume: incomplete coverage (center " + std::to_string(s.center) +
                                    " out of range or duplicated)");
        }
        ordered[static_cast<std::size_t>(s.center)] = s.data;
    }
    for (std::size_t i = 0; i < ordered.size(); ++i) {
        if (!ordered[i].defined()) {
            throw ContractViolation("assemble_volume: incomplete coverage, missing center " + std::to_string(i));
        }
    }
    return Volume3D(assemble(torch::stack(ordered), axis, kind), modality);
}

}  // namespace pasta::volumetric
