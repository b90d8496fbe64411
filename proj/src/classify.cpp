#include "pasta/classify.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "pasta/errors.hpp"
#include "pasta/rng.hpp"

namespace pasta::eval {

void to_json(nlohmann::json& j, const ClassifierConfig& c) {
    j = nlohmann::json{{"channels", c.channels},         {"epochs", c.epochs}, {"patience", c.patience},
                       {"batch_size", c.batch_size},     {"lr", c.lr},         {"weight_decay", c.weight_decay},
                       {"val_fraction", c.val_fraction}};
}

void from_json(const nlohmann::json& j, ClassifierConfig& c) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& k = it.key();
        const auto& v = it.value();
        if (k == "channels") c.channels = v.get<std::vector<int>>();
        else if (k == "epochs") c.epochs = v.get<int>();
        else if (k == "patience") c.patience = v.get<int>();
        else if (k == "batch_size") c.batch_size = v.get<int>();
        else if (k == "lr") c.lr = v.get<double>();
        else if (k == "weight_decay") c.weight_decay = v.get<double>();
        else if (k == "val_fraction") c.val_fraction = v.get<double>();
        else throw ConfigError("unknown classifier config key '" + k + "'");
    }
    if (c.channels.empty()) throw ConfigError("classifier.channels must not be empty");
    if (c.epochs < 1 || c.batch_size < 1) throw ConfigError("classifier.epochs and batch_size must be >= 1");
    if (!(c.val_fraction > 0 && c.val_fraction < 1)) throw ConfigError("classifier.val_fraction must lie in (0, 1)");
}

namespace {

struct BlockImpl : torch::nn::Module {
    BlockImpl(int in, int out, int stride) {
        using namespace torch::nn;
        conv1 = register_module("conv1", Conv3d(Conv3dOptions(in, out, 3).stride(stride).padding(1)));
        norm1 = register_module("norm1", GroupNorm(GroupNormOptions(std::min(4, out), out)));
        conv2 = register_module("conv2", Conv3d(Conv3dOptions(out, out, 3).padding(1)));
        norm2 = register_module("norm2", GroupNorm(GroupNormOptions(std::min(4, out), out)));
        if (in != out || stride != 1) skip = register_module("skip", Conv3d(Conv3dOptions(in, out, 1).stride(stride)));
    }
    torch::Tensor forward(const torch::Tensor& x) {
        auto h = torch::relu(norm1(conv1(x)));
        h = norm2(conv2(h));
        return torch::relu(h + (skip ? skip(x) : x));
    }
    torch::nn::Conv3d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
    torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
};
TORCH_MODULE(Block);

}  // namespace

ResNet3DImpl::ResNet3DImpl(const ClassifierConfig& cfg, std::vector<std::int64_t> size, int n_classes) {
    if (size.size() != 3) throw ContractViolation("ResNet3D: volume size needs three dimensions");
    stem = register_module("stem", torch::nn::Conv3d(torch::nn::Conv3dOptions(1, cfg.channels[0], 3).padding(1)));
    stages = register_module("stages", torch::nn::ModuleList());
    int in = cfg.channels[0];
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
        const int stride = i == 0 ? 1 : 2;
        stages->push_back(Block(in, cfg.channels[i], stride));
        in = cfg.channels[i];
        if (stride == 2)
            for (auto& s : size) s = (s + 1) / 2;
    }
    head = register_module("head", torch::nn::Linear(in * size[0] * size[1] * size[2], n_classes));
}

torch::Tensor ResNet3DImpl::forward(const torch::Tensor& x) {
    auto h = torch::relu(stem(x));
    for (auto& s : *stages) h = s->as<BlockImpl>()->forward(h);
    return head(h.flatten(1));
}

double balanced_accuracy(const std::vector<int>& truth, const std::vector<int>& pred) {
    double tp = 0, tn = 0, p = 0, n = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] == 1) {
            ++p;
            tp += pred[i] == 1;
        } else {
            ++n;
            tn += pred[i] == 0;
        }
    }
    if (p == 0 || n == 0) throw ContractViolation("balanced_accuracy: both classes must be present");
    return 0.5 * (tp / p + tn / n);
}

double f1_score(const std::vector<int>& truth, const std::vector<int>& pred) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        tp += truth[i] == 1 && pred[i] == 1;
        fp += truth[i] == 0 && pred[i] == 1;
        fn += truth[i] == 1 && pred[i] == 0;
    }
    return tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
}

double roc_auc(const std::vector<int>& truth, const std::vector<double>& score) {
    double hits = 0, pairs = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] != 1) continue;
        for (std::size_t j = 0; j < truth.size(); ++j) {
            if (truth[j] != 0) continue;
            pairs += 1;
            hits += score[i] > score[j] ? 1.0 : (score[i] == score[j] ? 0.5 : 0.0);
        }
    }
    if (pairs == 0) throw ContractViolation("roc_auc: both classes must be present");
    return hits / pairs;
}

std::vector<int> stratified_folds(const std::vector<int>& labels, int k, std::uint64_t seed) {
    if (k < 2) throw ContractViolation("stratified_folds: need k >= 2");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    std::vector<int> fold(labels.size(), -1);
    std::mt19937_64 rng(derive_seed(seed, "folds"));
    int offset = 0;
    for (auto& [label, idx] : by_class) {
        if (static_cast<int>(idx.size()) < k)
            throw DataError("stratification error: class " + std::to_string(label) + " has " +
                            std::to_string(idx.size()) + " subjects for " + std::to_string(k) + " folds");
        std::shuffle(idx.begin(), idx.end(), rng);
        // Continue the round robin across classes so fold sizes stay balanced.
        for (std::size_t i = 0; i < idx.size(); ++i) fold[idx[i]] = static_cast<int>((i + static_cast<std::size_t>(offset)) % static_cast<std::size_t>(k));
        offset = static_cast<int>((offset + idx.size()) % static_cast<std::size_t>(k));
    }
    return fold;
}

namespace {

Summary summarize(const std::vector<double>& v) {
    Summary s;
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    return s;
}

torch::Tensor gather(const std::vector<torch::Tensor>& vols, const std::vector<std::size_t>& idx) {
    std::vector<torch::Tensor> parts;
    for (auto i : idx) parts.push_back(vols[i].to(torch::kFloat32));
    return torch::stack(parts).unsqueeze(1);
}

// Positive-class probabilities in evaluation mode.
std::vector<double> predict(ResNet3D& net, const torch::Tensor& x) {
    torch::NoGradGuard ng;
    net->eval();
    auto p = torch::softmax(net->forward(x), 1).select(1, 1).to(torch::kFloat64).contiguous();
    return {p.data_ptr<double>(), p.data_ptr<double>() + p.numel()};
}

std::vector<int> threshold(const std::vector<double>& p) {
    std::vector<int> out;
    for (double v : p) out.push_back(v > 0.5 ? 1 : 0);
    return out;
}

struct Trained {
    ResNet3D net{nullptr};
    int epochs = 0;
};

Trained train_one(const std::vector<torch::Tensor>& vols, const std::vector<int>& labels,
                  const std::vector<std::size_t>& train_idx, const ClassifierConfig& cfg, std::uint64_t seed) {
    // Stratified inner validation split for early stopping.
    std::vector<std::size_t> fit, val;
    {
        std::map<int, std::vector<std::size_t>> by_class;
        for (auto i : train_idx) by_class[labels[i]].push_back(i);
        std::mt19937_64 rng(derive_seed(seed, "inner-split"));
        for (auto& [label, idx] : by_class) {
            std::shuffle(idx.begin(), idx.end(), rng);
            auto n_val = static_cast<std::size_t>(std::lround(cfg.val_fraction * static_cast<double>(idx.size())));
            n_val = std::clamp<std::size_t>(n_val, 1, idx.size() - 1);
            val.insert(val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
            fit.insert(fit.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
        }
    }
    const auto size = vols.front().sizes().vec();
    torch::manual_seed(derive_seed(seed, "classifier-init"));
    ResNet3D net(cfg, size);
    torch::optim::AdamW opt(net->parameters(), torch::optim::AdamWOptions(cfg.lr).weight_decay(cfg.weight_decay));

    const auto x_val = gather(vols, val);
    std::vector<int> y_val;
    for (auto i : val) y_val.push_back(labels[i]);

    std::mt19937_64 rng(derive_seed(seed, "batches"));
    double best = -1.0;
    double best_nll = 0.0;
    int since_best = 0;
    int epoch = 0;
    std::vector<torch::Tensor> best_state;
    for (; epoch < cfg.epochs && since_best < cfg.patience; ++epoch) {
        std::shuffle(fit.begin(), fit.end(), rng);
        net->train();
        for (std::size_t start = 0; start < fit.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const auto end = std::min(fit.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<std::size_t> bi(fit.begin() + static_cast<std::ptrdiff_t>(start),
                                        fit.begin() + static_cast<std::ptrdiff_t>(end));
            std::vector<std::int64_t> y;
            for (auto i : bi) y.push_back(labels[i]);
            opt.zero_grad();
            auto loss = torch::cross_entropy_loss(net->forward(gather(vols, bi)), torch::tensor(y));
            loss.backward();
            opt.step();
        }
        const auto p_val = predict(net, x_val);
        const double score = balanced_accuracy(y_val, threshold(p_val));
        double nll = 0;
        for (std::size_t i = 0; i < p_val.size(); ++i)
            nll -= std::log(std::clamp(y_val[i] == 1 ? p_val[i] : 1.0 - p_val[i], 1e-12, 1.0));
        // Equal BACC on a small validation set: prefer the better-calibrated epoch.
        if (score > best || (score == best && nll < best_nll)) {
            best = score;
            best_nll = nll;
            since_best = 0;
            best_state.clear();
            for (const auto& p : net->parameters()) best_state.push_back(p.detach().clone());
        } else {
            ++since_best;
        }
    }
    {
        torch::NoGradGuard ng;
        auto params = net->parameters();
        for (std::size_t i = 0; i < params.size(); ++i) params[i].copy_(best_state[i]);
    }
    return {net, epoch};
}

}  // namespace

ClassificationReport classify_cv(const std::vector<torch::Tensor>& volumes, const std::vector<int>& labels, int k,
                                 const ClassifierConfig& cfg, std::uint64_t seed) {
    if (volumes.size() != labels.size()) throw ContractViolation("classify_cv: volumes and labels differ in count");
    if (volumes.empty()) throw DataError("classify_cv: no subjects");
    for (int l : labels)
        if (l != 0 && l != 1) throw ContractViolation("classify_cv: labels must be 0 or 1");
    for (const auto& v : volumes)
        if (v.dim() != 3 || v.sizes() != volumes.front().sizes())
            throw ContractViolation("classify_cv: volumes must be 3D and share a shape");

    const auto fold = stratified_folds(labels, k, seed);
    ClassificationReport rep;
    rep.n_folds = k;
    std::vector<double> bacc, f1, auc;
    for (int f = 0; f < k; ++f) {
        std::vector<std::size_t> tr, te;
        for (std::size_t i = 0; i < labels.size(); ++i) (fold[i] == f ? te : tr).push_back(i);
        auto model = train_one(volumes, labels, tr, cfg, derive_seed(seed, "fold", static_cast<std::uint64_t>(f)));
        const auto p = predict(model.net, gather(volumes, te));
        std::vector<int> y;
        for (auto i : te) y.push_back(labels[i]);
        FoldResult r;
        r.test_indices = te;
        r.bacc = balanced_accuracy(y, threshold(p));
        r.f1 = f1_score(y, threshold(p));
        r.auc = roc_auc(y, p);
        r.epochs_run = model.epochs;
        bacc.push_back(r.bacc);
        f1.push_back(r.f1);
        auc.push_back(r.auc);
        rep.folds.push_back(std::move(r));
    }
    rep.bacc = summarize(bacc);
    rep.f1 = summarize(f1);
    rep.auc = summarize(auc);
    return rep;
}

nlohmann::json to_json(const ClassificationReport& r) {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : r.folds)
        folds.push_back({{"bacc", 100 * f.bacc}, {"f1", 100 * f.f1}, {"auc", 100 * f.auc},
                         {"n_test", f.test_indices.size()}, {"epochs", f.epochs_run}});
    auto ms = [](const Summary& s) { return nlohmann::json{{"mean", 100 * s.mean}, {"std", 100 * s.stddev}}; };
    return {{"n_folds", r.n_folds}, {"bacc", ms(r.bacc)}, {"f1", ms(r.f1)}, {"auc", ms(r.auc)}, {"folds", folds}};
}

std::string format_table(const ClassificationReport& r, const std::string& source) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    auto cell = [&](const Summary& s) {
        std::ostringstream c;
        c << std::fixed << std::setprecision(2) << 100 * s.mean << " +- " << 100 * s.stddev;
        return c.str();
    };
    os << std::left << std::setw(12) << "source" << std::setw(18) << "BACC" << std::setw(18) << "F1" << std::setw(18)
       << "AUC" << '\n';
    os << std::left << std::setw(12) << source << std::setw(18) << cell(r.bacc) << std::setw(18) << cell(r.f1)
       << std::setw(18) << cell(r.auc) << '\n';
    return os.str();
}

}  // namespace pasta::eval
