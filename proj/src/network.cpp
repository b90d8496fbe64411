#include "pasta/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pasta/errors.hpp"

namespace pasta::net {

std::string to_string(Fusion f) { return f == Fusion::adagn ? "adagn" : "concat"; }

std::string to_string(ClinicalPlacement p) {
    switch (p) {
        case ClinicalPlacement::denoiser: return "denoiser";
        case ClinicalPlacement::conditioner: return "conditioner";
        case ClinicalPlacement::both: return "both";
        case ClinicalPlacement::none: return "none";
    }
    return "?";
}

Fusion fusion_from_string(const std::string& s) {
    if (s == "adagn") return Fusion::adagn;
    if (s == "concat") return Fusion::concat;
    throw ConfigError("unknown fusion '" + s + "'");
}

ClinicalPlacement placement_from_string(const std::string& s) {
    if (s == "denoiser") return ClinicalPlacement::denoiser;
    if (s == "conditioner") return ClinicalPlacement::conditioner;
    if (s == "both") return ClinicalPlacement::both;
    if (s == "none") return ClinicalPlacement::none;
    throw ConfigError("unknown clinical placement '" + s + "'");
}

void NetConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("net config: " + msg); };
    if (base_channels < 1 || base_channels % 2 != 0) fail("base_channels must be positive and even");
    if (depth < 1) fail("depth must be >= 1");
    if (static_cast<int>(channel_multipliers.size()) != depth) fail("len(channel_multipliers) must equal depth");
    for (int m : channel_multipliers)
        if (m < 1) fail("channel multipliers must be positive");
    if (in_slices < 1 || in_slices % 2 == 0) fail("in_slices must be odd and positive");
    if (res_blocks < 1) fail("res_blocks must be >= 1");
    if (attention_heads < 1) fail("attention_heads must be >= 1");
    if (group_norm_groups < 1) fail("group_norm_groups must be >= 1");
    if (clinical_dim < 1) fail("clinical_dim must be >= 1");
    const std::int64_t factor = std::int64_t{1} << (depth - 1);
    if (image_h < 1 || image_w < 1 || image_h % factor != 0 || image_w % factor != 0) {
        fail("image size " + std::to_string(image_h) + "x" + std::to_string(image_w) + " not divisible by " +
             std::to_string(factor) + " for depth " + std::to_string(depth));
    }
    for (int r : attention_resolutions) {
        if (r < 1 || (r & (r - 1)) != 0) fail("attention resolutions must be powers of two");
        if (r <= factor && (image_h % r != 0 || image_w % r != 0)) fail("attention resolution does not divide image");
    }
    for (int l = 0; l < depth; ++l) {
        const int ds = 1 << l;
        const bool has_attn =
            std::find(attention_resolutions.begin(), attention_resolutions.end(), ds) != attention_resolutions.end();
        if (has_attn && (base_channels * channel_multipliers[l]) % attention_heads != 0) {
            fail("attention channels not divisible by heads at level " + std::to_string(l));
        }
    }
    if ((base_channels * channel_multipliers.back()) % attention_heads != 0) {
        fail("middle attention channels not divisible by heads");
    }
}

void to_json(nlohmann::json& j, const NetConfig& c) {
    j = nlohmann::json{{"base_channels", c.base_channels},
                       {"depth", c.depth},
                       {"channel_multipliers", c.channel_multipliers},
                       {"attention_resolutions", c.attention_resolutions},
                       {"attention_heads", c.attention_heads},
                       {"in_slices", c.in_slices},
                       {"image_size", {c.image_h, c.image_w}},
                       {"group_norm_groups", c.group_norm_groups},
                       {"res_blocks", c.res_blocks},
                       {"clinical_dim", c.clinical_dim},
                       {"time_embed_dim", c.time_embed_dim},
                       {"clinical_embed_dim", c.clinical_embed_dim},
                       {"fusion", to_string(c.fusion)},
                       {"clinical_placement", to_string(c.clinical_placement)}};
}

void from_json(const nlohmann::json& j, NetConfig& c) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& k = it.key();
        const auto& v = it.value();
        if (k == "base_channels") c.base_channels = v.get<int>();
        else if (k == "depth") c.depth = v.get<int>();
        else if (k == "channel_multipliers") c.channel_multipliers = v.get<std::vector<int>>();
        else if (k == "attention_resolutions") c.attention_resolutions = v.get<std::vector<int>>();
        else if (k == "attention_heads") c.attention_heads = v.get<int>();
        else if (k == "in_slices") c.in_slices = v.get<int>();
        else if (k == "image_size") {
            auto hw = v.get<std::vector<std::int64_t>>();
            if (hw.size() != 2) throw ConfigError("net.image_size must be [H, W]");
            c.image_h = hw[0];
            c.image_w = hw[1];
        } else if (k == "group_norm_groups") c.group_norm_groups = v.get<int>();
        else if (k == "res_blocks") c.res_blocks = v.get<int>();
        else if (k == "clinical_dim") c.clinical_dim = v.get<int>();
        else if (k == "time_embed_dim") c.time_embed_dim = v.get<int>();
        else if (k == "clinical_embed_dim") c.clinical_embed_dim = v.get<int>();
        else if (k == "fusion") c.fusion = fusion_from_string(v.get<std::string>());
        else if (k == "clinical_placement") c.clinical_placement = placement_from_string(v.get<std::string>());
        else throw ConfigError("unknown net config key '" + k + "'");
    }
}

std::vector<double> sinusoidal_encode(double t, int dim, double base) {
    if (dim <= 0 || dim % 2 != 0) throw ConfigError("sinusoidal encoding dim must be even and positive");
    std::vector<double> out(static_cast<std::size_t>(dim));
    for (int i = 0; i < dim / 2; ++i) {
        const double w = std::pow(base, -2.0 * i / dim);
        out[2 * i] = std::sin(t * w);
        out[2 * i + 1] = std::cos(t * w);
    }
    return out;
}

torch::Tensor sinusoidal_encode(const torch::Tensor& t, int dim, double base) {
    if (dim <= 0 || dim % 2 != 0) throw ConfigError("sinusoidal encoding dim must be even and positive");
    auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    auto i = torch::arange(dim / 2, opts);
    auto freqs = torch::pow(torch::full({}, base, opts), i * (-2.0 / dim));
    auto args = t.to(torch::kFloat64).reshape({-1, 1}) * freqs.reshape({1, -1});
    // interleave: [sin0, cos0, sin1, cos1, ...]
    auto enc = torch::stack({torch::sin(args), torch::cos(args)}, 2).reshape({t.numel(), dim});
    return enc;
}

int group_count(int channels, int requested) {
    int g = std::min(requested, channels);
    while (channels % g != 0) --g;
    return g;
}

torch::Tensor adagn(const torch::Tensor& normed, const torch::Tensor& t_scale, const torch::Tensor& t_shift,
                    const torch::Tensor& c_scale, const torch::Tensor& hm_factor) {
    const auto b = normed.size(0);
    const auto c = normed.size(1);
    auto check_vec = [&](const torch::Tensor& v, const char* name) {
        if (v.dim() != 2 || v.size(0) != b || v.size(1) != c) {
            std::ostringstream os;
            os << "adagn: " << name << " has shape " << v.sizes() << ", expected [" << b << ", " << c << "]";
            throw ContractViolation(os.str());
        }
    };
    check_vec(t_scale, "t_scale");
    check_vec(t_shift, "t_shift");
    auto out = normed * t_scale.view({b, c, 1, 1}) + t_shift.view({b, c, 1, 1});
    if (hm_factor.defined()) {
        if (hm_factor.sizes() != normed.sizes()) {
            std::ostringstream os;
            os << "adagn: feature-map factor " << hm_factor.sizes() << " does not match features " << normed.sizes();
            throw ContractViolation(os.str());
        }
        out = out * hm_factor;
    }
    if (c_scale.defined()) {
        check_vec(c_scale, "c_scale");
        out = out * c_scale.view({b, c, 1, 1});
    }
    return out;
}

AdaGNImpl::AdaGNImpl(int ch, int groups, int time_dim, int clinical_dim, Fusion f) : channels(ch), fusion(f) {
    norm = register_module("norm", torch::nn::GroupNorm(torch::nn::GroupNormOptions(group_count(ch, groups), ch)));
    time_proj = register_module("time_proj", torch::nn::Linear(time_dim, 2 * ch));
    clinical_proj = register_module("clinical_proj", torch::nn::Linear(clinical_dim, ch));
    const int fin = f == Fusion::adagn ? ch : 2 * ch;
    feature_proj = register_module("feature_proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(fin, ch, 1)));
    torch::NoGradGuard ng;
    // Identity modulation at init: c_s = 1 + 0, feature factor = 1 + 0 (or [I | 0] for concat).
    clinical_proj->weight.zero_();
    clinical_proj->bias.zero_();
    feature_proj->weight.zero_();
    feature_proj->bias.zero_();
    if (f == Fusion::concat) {
        for (int i = 0; i < ch; ++i) feature_proj->weight[i][i][0][0] = 1.0;
    }
}

torch::Tensor AdaGNImpl::forward(const torch::Tensor& h, const torch::Tensor& temb, const torch::Tensor& cemb,
                                 const torch::Tensor& hm) {
    auto normed = norm(h);
    auto st = time_proj(temb).chunk(2, 1);
    auto t_scale = st[0] + 1.0;
    auto t_shift = st[1];
    torch::Tensor c_scale;
    if (cemb.defined()) c_scale = clinical_proj(cemb) + 1.0;
    if (hm.defined() && hm.sizes() != h.sizes()) {
        std::ostringstream os;
        os << "pyramid level " << hm.sizes() << " does not match block features " << h.sizes();
        throw ContractViolation(os.str());
    }
    if (fusion == Fusion::adagn) {
        torch::Tensor factor;
        if (hm.defined()) factor = feature_proj(hm) + 1.0;
        return adagn(normed, t_scale, t_shift, c_scale, factor);
    }
    auto out = adagn(normed, t_scale, t_shift, torch::Tensor(), torch::Tensor());
    if (hm.defined()) out = feature_proj(torch::cat({out, hm}, 1));
    if (c_scale.defined()) out = out * c_scale.view({h.size(0), channels, 1, 1});
    return out;
}

ResBlockImpl::ResBlockImpl(int in_ch, int out_ch, const NetConfig& cfg) : in_channels(in_ch), out_channels(out_ch) {
    using namespace torch::nn;
    in_norm = register_module("in_norm", GroupNorm(GroupNormOptions(group_count(in_ch, cfg.group_norm_groups), in_ch)));
    in_conv = register_module("in_conv", Conv2d(Conv2dOptions(in_ch, out_ch, 3).padding(1)));
    ada = register_module("ada", AdaGN(out_ch, cfg.group_norm_groups, cfg.time_dim(), cfg.clinical_embed(), cfg.fusion));
    out_conv = register_module("out_conv", Conv2d(Conv2dOptions(out_ch, out_ch, 3).padding(1)));
    if (in_ch != out_ch) skip = register_module("skip", Conv2d(Conv2dOptions(in_ch, out_ch, 1)));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb, const torch::Tensor& cemb,
                                    const torch::Tensor& hm) {
    auto h = in_conv(torch::silu(in_norm(x)));
    h = ada(h, temb, cemb, hm);
    h = out_conv(torch::silu(h));
    return (skip ? skip(x) : x) + h;
}

AttentionBlockImpl::AttentionBlockImpl(int ch, int n_heads, int groups) : channels(ch), heads(n_heads) {
    using namespace torch::nn;
    norm = register_module("norm", GroupNorm(GroupNormOptions(group_count(ch, groups), ch)));
    qkv = register_module("qkv", Conv2d(Conv2dOptions(ch, 3 * ch, 1)));
    proj = register_module("proj", Conv2d(Conv2dOptions(ch, ch, 1)));
}

torch::Tensor AttentionBlockImpl::forward(const torch::Tensor& x) {
    const auto b = x.size(0);
    const auto hw = x.size(2) * x.size(3);
    const auto d = channels / heads;
    auto qkv_t = qkv(norm(x)).reshape({b * heads, 3 * d, hw});
    auto parts = qkv_t.chunk(3, 1);
    const double scale = 1.0 / std::sqrt(std::sqrt(static_cast<double>(d)));
    auto weight = torch::einsum("bct,bcs->bts", {parts[0] * scale, parts[1] * scale});
    weight = torch::softmax(weight, -1);
    auto a = torch::einsum("bts,bcs->bct", {weight, parts[2]}).reshape({b, channels, x.size(2), x.size(3)});
    return x + proj(a);
}

ArmImpl::ArmImpl(const NetConfig& cfg) : cfg_(cfg) {
    using namespace torch::nn;
    cfg_.validate();
    const int base = cfg_.base_channels;
    const int tdim = cfg_.time_dim();
    const int cdim = cfg_.clinical_embed();
    time_mlp = register_module("time_mlp", Sequential(Linear(base, tdim), SiLU(), Linear(tdim, tdim)));
    clinical_mlp = register_module("clinical_mlp", Sequential(Linear(cfg_.clinical_dim, cdim), SiLU(), Linear(cdim, cdim)));

    auto has_attn = [&](int ds) {
        return std::find(cfg_.attention_resolutions.begin(), cfg_.attention_resolutions.end(), ds) !=
               cfg_.attention_resolutions.end();
    };
    auto add_block = [&](int in_ch, int out_ch, int ds, bool push, bool pop) {
        blocks_.push_back(register_module("block" + std::to_string(blocks_.size()), ResBlock(in_ch, out_ch, cfg_)));
        plan_.push_back({Step::res, blocks_.size() - 1, push, pop});
        trace_.push_back({out_ch, cfg_.image_h / ds, cfg_.image_w / ds});
    };
    auto add_attn = [&](int ch) {
        attn_.push_back(register_module("attn" + std::to_string(attn_.size()),
                                        AttentionBlock(ch, cfg_.attention_heads, cfg_.group_norm_groups)));
        plan_.push_back({Step::attn, attn_.size() - 1});
    };

    int ch = base * cfg_.channel_multipliers[0];
    input_conv = register_module("input_conv", Conv2d(Conv2dOptions(cfg_.in_slices, ch, 3).padding(1)));
    plan_.push_back({Step::input, 0, true, false});
    std::vector<int> skip_ch{ch};
    int ds = 1;
    for (int l = 0; l < cfg_.depth; ++l) {
        const int out = base * cfg_.channel_multipliers[l];
        for (int r = 0; r < cfg_.res_blocks; ++r) {
            add_block(ch, out, ds, false, false);
            ch = out;
            if (has_attn(ds)) add_attn(ch);
            plan_.back().push_skip = true;
            skip_ch.push_back(ch);
        }
        if (l + 1 < cfg_.depth) {
            down_.push_back(register_module("down" + std::to_string(down_.size()),
                                            Conv2d(Conv2dOptions(ch, ch, 3).stride(2).padding(1))));
            plan_.push_back({Step::down, down_.size() - 1, true, false});
            skip_ch.push_back(ch);
            ds *= 2;
        }
    }
    add_block(ch, ch, ds, false, false);
    add_attn(ch);
    add_block(ch, ch, ds, false, false);
    for (int l = cfg_.depth - 1; l >= 0; --l) {
        const int out = base * cfg_.channel_multipliers[l];
        for (int r = 0; r <= cfg_.res_blocks; ++r) {
            const int sc = skip_ch.back();
            skip_ch.pop_back();
            add_block(ch + sc, out, ds, false, true);
            ch = out;
            if (has_attn(ds)) add_attn(ch);
            if (l > 0 && r == cfg_.res_blocks) {
                up_.push_back(register_module("up" + std::to_string(up_.size()),
                                              Conv2d(Conv2dOptions(ch, ch, 3).padding(1))));
                plan_.push_back({Step::up, up_.size() - 1});
                ds /= 2;
            }
        }
    }
    out_norm = register_module("out_norm", GroupNorm(GroupNormOptions(group_count(ch, cfg_.group_norm_groups), ch)));
    out_conv = register_module("out_conv", Conv2d(Conv2dOptions(ch, cfg_.in_slices, 3).padding(1)));
}

std::vector<BlockTrace> ArmImpl::block_trace() const { return trace_; }

ArmOutput ArmImpl::forward(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& c,
                           const FeaturePyramid* cond, bool use_clinical) {
    if (x.dim() != 4 || x.size(1) != cfg_.in_slices || x.size(2) != cfg_.image_h || x.size(3) != cfg_.image_w) {
        std::ostringstream os;
        os << "arm input " << x.sizes() << " does not match [B, " << cfg_.in_slices << ", " << cfg_.image_h << ", "
           << cfg_.image_w << "]";
        throw ContractViolation(os.str());
    }
    if (t.numel() != x.size(0)) throw ContractViolation("arm: need one timestep per batch element");
    if (cond && cond->size() != blocks_.size()) {
        throw ContractViolation("pyramid has " + std::to_string(cond->size()) + " levels, arm has " +
                                std::to_string(blocks_.size()) + " residual blocks");
    }
    auto temb = torch::silu(time_mlp->forward(sinusoidal_encode(t, cfg_.base_channels).to(x.scalar_type())));
    torch::Tensor cemb;
    if (use_clinical && c.defined()) {
        if (c.dim() != 2 || c.size(0) != x.size(0) || c.size(1) != cfg_.clinical_dim) {
            throw ContractViolation("arm: clinical vector must be [B, clinical_dim]");
        }
        cemb = torch::silu(clinical_mlp->forward(c.to(x.scalar_type())));
    }

    ArmOutput result;
    result.pyramid.reserve(blocks_.size());
    std::vector<torch::Tensor> skips;
    torch::Tensor h;
    for (const auto& step : plan_) {
        switch (step.kind) {
            case Step::input: h = input_conv(x); break;
            case Step::res: {
                if (step.pop_skip) {
                    h = torch::cat({h, skips.back()}, 1);
                    skips.pop_back();
                }
                torch::Tensor hm = cond ? (*cond)[step.index] : torch::Tensor();
                h = blocks_[step.index](h, temb, cemb, hm);
                result.pyramid.push_back(h);
                break;
            }
            case Step::attn: h = attn_[step.index](h); break;
            case Step::down: h = down_[step.index](h); break;
            case Step::up:
                h = up_[step.index](torch::upsample_nearest2d(h, {h.size(2) * 2, h.size(3) * 2}));
                break;
        }
        if (step.push_skip) skips.push_back(h);
    }
    result.out = out_conv(torch::silu(out_norm(h)));
    return result;
}

DualArmNetImpl::DualArmNetImpl(const NetConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    conditioner = register_module("conditioner", Arm(cfg_));
    denoiser = register_module("denoiser", Arm(cfg_));
}

bool DualArmNetImpl::clinical_in_role(bool denoising_role) const {
    switch (cfg_.clinical_placement) {
        case ClinicalPlacement::both: return true;
        case ClinicalPlacement::none: return false;
        case ClinicalPlacement::denoiser: return denoising_role;
        case ClinicalPlacement::conditioner: return !denoising_role;
    }
    return false;
}

DualArmNet build_dual_arm(const NetConfig& cfg, std::uint64_t init_seed) {
    cfg.validate();
    torch::manual_seed(init_seed);
    return DualArmNet(cfg);
}

std::int64_t parameter_count(const torch::nn::Module& m) {
    std::int64_t n = 0;
    for (const auto& p : m.parameters()) n += p.numel();
    return n;
}

void zero_feature_projections(torch::nn::Module& m) {
    torch::NoGradGuard ng;
    for (auto& child : m.modules(/*include_self=*/true)) {
        if (auto* ada = child->as<AdaGNImpl>()) {
            if (ada->fusion == Fusion::adagn) {
                ada->feature_proj->weight.zero_();
                ada->feature_proj->bias.zero_();
            } else {
                ada->feature_proj->weight.narrow(1, ada->channels, ada->channels).zero_();
            }
        }
    }
}

}  // namespace pasta::net
