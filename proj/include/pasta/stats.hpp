#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace pasta::eval {

struct RankSumResult {
    double u = 0;          // Mann-Whitney U of the first sample
    double rank_sum = 0;   // sum of the first sample's (mid)ranks
    double z = 0;          // 0 for the exact test
    double p = 1;          // two-sided
    bool exact = false;
};

/// Sample sizes at or below this total use exact enumeration.
inline constexpr std::size_t kExactRankSumLimit = 20;

/// Two-sided Wilcoxon rank-sum test. Ties get midranks. Exact permutation
/// distribution for small totals, otherwise the normal approximation with
/// tie and continuity corrections.
RankSumResult rank_sum_test(const std::vector<double>& x, const std::vector<double>& y);

/// min(1, p * comparisons).
double bonferroni(double p, int comparisons);

struct GroupRow {
    std::string attribute;
    std::string group;
    int n = 0;
    double mean = 0, stddev = 0;
    double p_raw = 1, p_adjusted = 1;
    bool significant = false;
};

struct FairnessReport {
    std::vector<GroupRow> rows;
    std::vector<std::string> notes;  // excluded groups
    int comparisons = 0;
    double alpha = 0.05;
};

/// Each group of each attribute against its complement. `attributes` maps an
/// attribute name to one label per subject, aligned with `errors`.
FairnessReport fairness_report(const std::vector<double>& errors,
                               const std::map<std::string, std::vector<std::string>>& attributes, double alpha = 0.05);

nlohmann::json to_json(const FairnessReport& r);
std::string format_table(const FairnessReport& r);

}  // namespace pasta::eval
