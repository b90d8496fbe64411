#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace pasta::eval {

struct ClassifierConfig {
    std::vector<int> channels{8, 16, 32};  // one residual stage each; stride 2 between stages
    int epochs = 60;
    int patience = 15;      // epochs without validation BACC gain before stopping
    int batch_size = 8;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double val_fraction = 0.2;  // of each training fold, stratified
};

void to_json(nlohmann::json& j, const ClassifierConfig& c);
void from_json(const nlohmann::json& j, ClassifierConfig& c);

/// Small 3D residual CNN; a linear head over the flattened last stage keeps
/// spatial position available.
class ResNet3DImpl : public torch::nn::Module {
public:
    ResNet3DImpl(const ClassifierConfig& cfg, std::vector<std::int64_t> volume_size, int n_classes = 2);
    torch::Tensor forward(const torch::Tensor& x);  // {B, 1, H, W, D} -> logits {B, n_classes}

private:
    torch::nn::Conv3d stem{nullptr};
    torch::nn::ModuleList stages;
    torch::nn::Linear head{nullptr};
};
TORCH_MODULE(ResNet3D);

struct FoldResult {
    std::vector<std::size_t> test_indices;
    double bacc = 0, f1 = 0, auc = 0;
    int epochs_run = 0;
};

struct Summary {
    double mean = 0, stddev = 0;
};

/// Fold metrics are on [0, 1]; formatting multiplies by 100.
struct ClassificationReport {
    std::vector<FoldResult> folds;
    Summary bacc, f1, auc;
    int n_folds = 0;
};

/// Balanced accuracy for binary labels/predictions.
double balanced_accuracy(const std::vector<int>& truth, const std::vector<int>& pred);
/// F1 of the positive class.
double f1_score(const std::vector<int>& truth, const std::vector<int>& pred);
/// ROC AUC via the rank statistic; ties count half.
double roc_auc(const std::vector<int>& truth, const std::vector<double>& score);

/// Subject-level stratified k-fold assignment: fold index per subject. Throws
/// DataError when a class has fewer members than folds.
std::vector<int> stratified_folds(const std::vector<int>& labels, int k, std::uint64_t seed);

/// k-fold cross-validation of a freshly initialised classifier per fold on
/// binary labels (0/1). Volumes are {H, W, D}, all the same size.
ClassificationReport classify_cv(const std::vector<torch::Tensor>& volumes, const std::vector<int>& labels, int k,
                                 const ClassifierConfig& cfg, std::uint64_t seed);

nlohmann::json to_json(const ClassificationReport& r);
std::string format_table(const ClassificationReport& r, const std::string& source);

}  // namespace pasta::eval
