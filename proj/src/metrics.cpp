#include "pasta/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "pasta/errors.hpp"

namespace pasta::eval {

namespace {

torch::Tensor gaussian_window(int size, double sigma) {
    auto x = torch::arange(size, torch::kFloat64) - (size - 1) / 2.0;
    auto g = torch::exp(-x.square() / (2.0 * sigma * sigma));
    g = g / g.sum();
    return torch::outer(g, g).reshape({1, 1, size, size});
}

void check_unit_range(const torch::Tensor& t, const char* name) {
    const double lo = t.min().item<double>();
    const double hi = t.max().item<double>();
    if (lo < 0.0 || hi > 1.0 || !std::isfinite(lo) || !std::isfinite(hi)) {
        std::ostringstream os;
        os << name << " volume leaves [0, 1] (min " << lo << ", max " << hi << ")";
        throw ContractViolation(os.str());
    }
}

}  // namespace

double ssim(const torch::Tensor& a, const torch::Tensor& b, int axis) {
    if (a.sizes() != b.sizes() || a.dim() != 3) throw ContractViolation("ssim: need two volumes of one shape");
    if (axis < 0 || axis > 2) throw ContractViolation("ssim: axis must be 0, 1 or 2");
    // Slices along `axis` become a batch of 2D images.
    auto to_batch = [&](const torch::Tensor& v) {
        return v.to(torch::kFloat64).movedim(axis, 0).unsqueeze(1).contiguous();
    };
    const auto x = to_batch(a);
    const auto y = to_batch(b);
    int win = 11;
    const auto smallest = std::min(x.size(2), x.size(3));
    if (smallest < win) win = static_cast<int>(smallest % 2 == 1 ? smallest : smallest - 1);
    const auto w = gaussian_window(win, 1.5);
    auto filt = [&](const torch::Tensor& t) { return torch::conv2d(t, w); };
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const auto mx = filt(x);
    const auto my = filt(y);
    const auto vx = filt(x * x) - mx * mx;
    const auto vy = filt(y * y) - my * my;
    const auto cxy = filt(x * y) - mx * my;
    const auto map = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    return map.mean({1, 2, 3}).mean().item<double>();
}

SubjectMetrics image_metrics(const Volume3D& real, const Volume3D& synth, const std::string& subject_id) {
    if (real.data.sizes() != synth.data.sizes()) {
        std::ostringstream os;
        os << "image_metrics: shape mismatch " << real.data.sizes() << " vs " << synth.data.sizes();
        throw ContractViolation(os.str());
    }
    check_unit_range(real.data, "real");
    check_unit_range(synth.data, "synthetic");
    const auto d = real.data.to(torch::kFloat64) - synth.data.to(torch::kFloat64);
    const double mae = d.abs().mean().item<double>();
    const double mse = d.square().mean().item<double>();
    SubjectMetrics m;
    m.subject_id = subject_id;
    m.mae_pct = 100.0 * mae;
    m.mse_pct = 100.0 * mse;
    m.psnr_db = mse > 0 ? std::min(kPsnrCap, -10.0 * std::log10(mse)) : kPsnrCap;
    m.ssim_pct = 100.0 * ssim(real.data, synth.data, 2);
    return m;
}

MetricsReport summarize(std::vector<SubjectMetrics> rows) {
    MetricsReport r;
    r.subjects = std::move(rows);
    if (r.subjects.empty()) return r;
    for (const auto& s : r.subjects) {
        r.mae_pct += s.mae_pct;
        r.mse_pct += s.mse_pct;
        r.psnr_db += s.psnr_db;
        r.ssim_pct += s.ssim_pct;
    }
    const auto n = static_cast<double>(r.subjects.size());
    r.mae_pct /= n;
    r.mse_pct /= n;
    r.psnr_db /= n;
    r.ssim_pct /= n;
    return r;
}

nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json subjects = nlohmann::json::array();
    for (const auto& s : r.subjects)
        subjects.push_back({{"subject_id", s.subject_id},
                            {"mae_pct", s.mae_pct},
                            {"mse_pct", s.mse_pct},
                            {"psnr_db", s.psnr_db},
                            {"ssim_pct", s.ssim_pct}});
    return {{"mae_pct", r.mae_pct},
            {"mse_pct", r.mse_pct},
            {"psnr_db", r.psnr_db},
            {"ssim_pct", r.ssim_pct},
            {"n_subjects", r.subjects.size()},
            {"subjects", subjects}};
}

std::string format_table(const MetricsReport& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3);
    os << std::left << std::setw(14) << "subject" << std::right << std::setw(10) << "MAE%" << std::setw(10) << "MSE%"
       << std::setw(10) << "PSNR" << std::setw(10) << "SSIM%" << '\n';
    auto row = [&](const std::string& name, double a, double b, double c, double d) {
        os << std::left << std::setw(14) << name << std::right << std::setw(10) << a << std::setw(10) << b
           << std::setw(10) << c << std::setw(10) << d << '\n';
    };
    for (const auto& s : r.subjects) row(s.subject_id, s.mae_pct, s.mse_pct, s.psnr_db, s.ssim_pct);
    row("mean", r.mae_pct, r.mse_pct, r.psnr_db, r.ssim_pct);
    return os.str();
}

}  // namespace pasta::eval
