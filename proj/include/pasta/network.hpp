#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace pasta::net {

/// How a denoiser block fuses its matching conditioner feature map.
enum class Fusion {
    adagn,   // multiplicative (1 + proj(h_m)) inside AdaGN
    concat,  // 1x1 conv over [modulated h, h_m]
};

/// Which role receives the clinical scale c_s.
enum class ClinicalPlacement { denoiser, conditioner, both, none };

std::string to_string(Fusion f);
std::string to_string(ClinicalPlacement p);
Fusion fusion_from_string(const std::string& s);
ClinicalPlacement placement_from_string(const std::string& s);

struct NetConfig {
    int base_channels = 64;
    int depth = 4;
    std::vector<int> channel_multipliers{1, 2, 3, 4};
    /// Downsampling factors (1, 2, 4, ...) at which self-attention runs.
    std::vector<int> attention_resolutions{16, 8, 4};
    int attention_heads = 4;
    int in_slices = 15;
    std::int64_t image_h = 96;
    std::int64_t image_w = 112;
    int group_norm_groups = 32;
    int res_blocks = 4;  // per encoder level; decoder levels use res_blocks + 1
    int clinical_dim = 15;
    int time_embed_dim = 0;      // 0 -> 4 * base_channels
    int clinical_embed_dim = 0;  // 0 -> 4 * base_channels
    Fusion fusion = Fusion::adagn;
    ClinicalPlacement clinical_placement = ClinicalPlacement::denoiser;

    int time_dim() const { return time_embed_dim > 0 ? time_embed_dim : 4 * base_channels; }
    int clinical_embed() const { return clinical_embed_dim > 0 ? clinical_embed_dim : 4 * base_channels; }

    /// Throws ConfigError on inconsistent settings.
    void validate() const;
};

void to_json(nlohmann::json& j, const NetConfig& c);
/// Strict: unknown keys raise ConfigError. Missing keys keep `c`'s values.
void from_json(const nlohmann::json& j, NetConfig& c);

/// Multi-scale conditioner representation: one map per residual block, forward order.
using FeaturePyramid = std::vector<torch::Tensor>;

/// Interleaved sinusoidal encoding: out[2i] = sin(t w_i), out[2i+1] = cos(t w_i),
/// w_i = base^(-2i/dim). `dim` must be even.
std::vector<double> sinusoidal_encode(double t, int dim, double base = 10000.0);
torch::Tensor sinusoidal_encode(const torch::Tensor& t, int dim, double base = 10000.0);

/// GroupNorm group count: largest divisor of `channels` not above min(requested, channels).
int group_count(int channels, int requested);

/// Pure AdaGN: c_s * (hm_factor * (t_s * normed + t_b)). Channel vectors are
/// {B, C}; `hm_factor` is {B, C, H, W} or undefined (no conditioning).
torch::Tensor adagn(const torch::Tensor& normed, const torch::Tensor& t_scale, const torch::Tensor& t_shift,
                    const torch::Tensor& c_scale, const torch::Tensor& hm_factor);

/// Adaptive group normalisation layer with learned timestep, clinical and
/// feature-map projections.
class AdaGNImpl : public torch::nn::Module {
public:
    AdaGNImpl(int channels, int groups, int time_dim, int clinical_dim, Fusion fusion);

    /// `temb` and `cemb` are already SiLU-activated embeddings; `cemb` may be
    /// undefined to skip clinical scaling; `hm` may be undefined.
    torch::Tensor forward(const torch::Tensor& h, const torch::Tensor& temb, const torch::Tensor& cemb,
                          const torch::Tensor& hm);

    torch::nn::GroupNorm norm{nullptr};
    torch::nn::Linear time_proj{nullptr};
    torch::nn::Linear clinical_proj{nullptr};
    torch::nn::Conv2d feature_proj{nullptr};
    int channels;
    Fusion fusion;
};
TORCH_MODULE(AdaGN);

class ResBlockImpl : public torch::nn::Module {
public:
    ResBlockImpl(int in_ch, int out_ch, const NetConfig& cfg);

    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb, const torch::Tensor& cemb,
                          const torch::Tensor& hm);

    int in_channels, out_channels;
    torch::nn::GroupNorm in_norm{nullptr};
    torch::nn::Conv2d in_conv{nullptr};
    AdaGN ada{nullptr};
    torch::nn::Conv2d out_conv{nullptr};
    torch::nn::Conv2d skip{nullptr};
};
TORCH_MODULE(ResBlock);

class AttentionBlockImpl : public torch::nn::Module {
public:
    AttentionBlockImpl(int channels, int heads, int groups);
    torch::Tensor forward(const torch::Tensor& x);

    int channels, heads;
    torch::nn::GroupNorm norm{nullptr};
    torch::nn::Conv2d qkv{nullptr};
    torch::nn::Conv2d proj{nullptr};
};
TORCH_MODULE(AttentionBlock);

/// (channels, height, width) of one residual block's output.
struct BlockTrace {
    int channels;
    std::int64_t height;
    std::int64_t width;
    bool operator==(const BlockTrace&) const = default;
};

struct ArmOutput {
    torch::Tensor out;       // {B, N, H, W}
    FeaturePyramid pyramid;  // one entry per residual block
};

/// One U-Net arm. Both arms share this structure; the role (conditioner or
/// denoiser) is decided by whether a pyramid from the other arm is supplied.
class ArmImpl : public torch::nn::Module {
public:
    explicit ArmImpl(const NetConfig& cfg);

    /// x: {B, N, H, W}; t: {B} timesteps; c: {B, clinical_dim} or undefined;
    /// cond: pyramid from the other arm, or nullptr for an unconditioned pass.
    ArmOutput forward(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& c,
                      const FeaturePyramid* cond = nullptr, bool use_clinical = true);

    std::size_t block_count() const { return blocks_.size(); }
    std::vector<BlockTrace> block_trace() const;
    const NetConfig& config() const { return cfg_; }

private:
    struct Step {
        enum Kind { input, res, attn, down, up } kind;
        std::size_t index;  // into blocks_/attn_/down_/up_
        bool push_skip = false;
        bool pop_skip = false;
    };

    NetConfig cfg_;
    torch::nn::Sequential time_mlp{nullptr};
    torch::nn::Sequential clinical_mlp{nullptr};
    torch::nn::Conv2d input_conv{nullptr};
    std::vector<ResBlock> blocks_;
    std::vector<AttentionBlock> attn_;
    std::vector<torch::nn::Conv2d> down_;
    std::vector<torch::nn::Conv2d> up_;
    torch::nn::GroupNorm out_norm{nullptr};
    torch::nn::Conv2d out_conv{nullptr};
    std::vector<Step> plan_;
    std::vector<BlockTrace> trace_;
};
TORCH_MODULE(Arm);

/// The symmetric conditioner/denoiser pair.
class DualArmNetImpl : public torch::nn::Module {
public:
    explicit DualArmNetImpl(const NetConfig& cfg);

    Arm conditioner{nullptr};
    Arm denoiser{nullptr};
    const NetConfig& config() const { return cfg_; }

    /// Whether the clinical scale is applied to an arm acting in the given role.
    bool clinical_in_role(bool denoising_role) const;

private:
    NetConfig cfg_;
};
TORCH_MODULE(DualArmNet);

DualArmNet build_dual_arm(const NetConfig& cfg, std::uint64_t init_seed = 0);

std::int64_t parameter_count(const torch::nn::Module& m);

/// Zeroes every feature-map projection so the denoiser ignores the pyramid.
void zero_feature_projections(torch::nn::Module& m);

}  // namespace pasta::net
