#include "pasta/stats.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "pasta/errors.hpp"

namespace pasta::eval {

namespace {

// Midranks (1-based) of the pooled sample.
std::vector<double> midranks(const std::vector<double>& pooled) {
    std::vector<std::size_t> order(pooled.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return pooled[a] < pooled[b]; });
    std::vector<double> ranks(pooled.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && pooled[order[j + 1]] == pooled[order[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

// P(|S - E| >= |s_obs - E|) under random assignment of n1 of the pooled
// ranks to the first sample. Ranks are doubled to stay integral.
double exact_p(const std::vector<double>& ranks, std::size_t n1, double observed) {
    std::vector<int> r2;
    for (double r : ranks) r2.push_back(static_cast<int>(std::lround(2.0 * r)));
    const int max_sum = std::accumulate(r2.begin(), r2.end(), 0);
    // ways[k][s]: subsets of size k with doubled rank sum s.
    std::vector<std::vector<double>> ways(n1 + 1, std::vector<double>(static_cast<std::size_t>(max_sum) + 1, 0.0));
    ways[0][0] = 1.0;
    for (int v : r2) {
        for (std::size_t k = n1; k >= 1; --k)
            for (int s = max_sum; s >= v; --s) ways[k][static_cast<std::size_t>(s)] += ways[k - 1][static_cast<std::size_t>(s - v)];
    }
    const double total = std::accumulate(ways[n1].begin(), ways[n1].end(), 0.0);
    const double expected2 = 2.0 * static_cast<double>(n1) * (static_cast<double>(ranks.size()) + 1.0) / 2.0;
    const double dev = std::abs(2.0 * observed - expected2);
    double hit = 0.0;
    for (int s = 0; s <= max_sum; ++s)
        if (std::abs(s - expected2) >= dev - 1e-9) hit += ways[n1][static_cast<std::size_t>(s)];
    return std::min(1.0, hit / total);
}

}  // namespace

RankSumResult rank_sum_test(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.empty() || y.empty()) throw ContractViolation("rank_sum_test: both samples must be non-empty");
    std::vector<double> pooled(x);
    pooled.insert(pooled.end(), y.begin(), y.end());
    for (double v : pooled)
        if (!std::isfinite(v)) throw ContractViolation("rank_sum_test: non-finite value");
    const auto ranks = midranks(pooled);
    const auto n1 = static_cast<double>(x.size());
    const auto n2 = static_cast<double>(y.size());
    const double n = n1 + n2;

    RankSumResult r;
    r.rank_sum = std::accumulate(ranks.begin(), ranks.begin() + static_cast<std::ptrdiff_t>(x.size()), 0.0);
    r.u = r.rank_sum - n1 * (n1 + 1.0) / 2.0;
    if (pooled.size() <= kExactRankSumLimit) {
        r.exact = true;
        r.p = exact_p(ranks, x.size(), r.rank_sum);
        return r;
    }
    // Tie correction: sum over tie groups of (t^3 - t).
    std::vector<double> sorted(ranks);
    std::sort(sorted.begin(), sorted.end());
    double ties = 0.0;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
        const double t = static_cast<double>(j - i);
        ties += t * t * t - t;
        i = j;
    }
    const double mean_u = n1 * n2 / 2.0;
    const double var_u = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if (var_u <= 0) return r;  // every value tied: p = 1
    const double dev = std::max(0.0, std::abs(r.u - mean_u) - 0.5);
    r.z = dev / std::sqrt(var_u);
    r.p = std::min(1.0, std::erfc(r.z / std::sqrt(2.0)));
    return r;
}

double bonferroni(double p, int comparisons) {
    if (comparisons < 1) throw ContractViolation("bonferroni: need at least one comparison");
    if (!(p >= 0.0 && p <= 1.0)) throw ContractViolation("bonferroni: p outside [0, 1]");
    return std::min(1.0, p * comparisons);
}

FairnessReport fairness_report(const std::vector<double>& errors,
                               const std::map<std::string, std::vector<std::string>>& attributes, double alpha) {
    FairnessReport rep;
    rep.alpha = alpha;
    for (const auto& [attr, labels] : attributes) {
        if (labels.size() != errors.size())
            throw ContractViolation("fairness_report: attribute '" + attr + "' has " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(errors.size()) + " subjects");
        std::map<std::string, std::vector<double>> in;
        for (std::size_t i = 0; i < labels.size(); ++i) in[labels[i]].push_back(errors[i]);
        for (const auto& [group, vals] : in) {
            std::vector<double> rest;
            for (std::size_t i = 0; i < labels.size(); ++i)
                if (labels[i] != group) rest.push_back(errors[i]);
            if (vals.size() < 2 || rest.size() < 2) {
                rep.notes.push_back(attr + "=" + group + " excluded (" + std::to_string(vals.size()) + " in group, " +
                                    std::to_string(rest.size()) + " in complement)");
                continue;
            }
            GroupRow row;
            row.attribute = attr;
            row.group = group;
            row.n = static_cast<int>(vals.size());
            row.mean = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
            double ss = 0.0;
            for (double v : vals) ss += (v - row.mean) * (v - row.mean);
            row.stddev = std::sqrt(ss / static_cast<double>(vals.size() - 1));
            row.p_raw = rank_sum_test(vals, rest).p;
            rep.rows.push_back(row);
        }
    }
    rep.comparisons = static_cast<int>(rep.rows.size());
    for (auto& row : rep.rows) {
        row.p_adjusted = bonferroni(row.p_raw, rep.comparisons);
        row.significant = row.p_adjusted < alpha;
    }
    return rep;
}

nlohmann::json to_json(const FairnessReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& g : r.rows)
        rows.push_back({{"attribute", g.attribute},
                        {"group", g.group},
                        {"n", g.n},
                        {"mean", g.mean},
                        {"std", g.stddev},
                        {"p_raw", g.p_raw},
                        {"p_adjusted", g.p_adjusted},
                        {"significant", g.significant}});
    return {{"comparisons", r.comparisons}, {"alpha", r.alpha}, {"groups", rows}, {"notes", r.notes}};
}

std::string format_table(const FairnessReport& r) {
    std::ostringstream os;
    os << std::left << std::setw(12) << "attribute" << std::setw(10) << "group" << std::right << std::setw(5) << "n"
       << std::setw(18) << "MAE mean+-std" << std::setw(10) << "p" << std::setw(10) << "p_adj" << "  sig\n";
    for (const auto& g : r.rows) {
        std::ostringstream ms;
        ms << std::fixed << std::setprecision(3) << g.mean << "+-" << g.stddev;
        os << std::left << std::setw(12) << g.attribute << std::setw(10) << g.group << std::right << std::setw(5) << g.n
           << std::setw(18) << ms.str() << std::setw(10) << std::setprecision(4) << g.p_raw << std::setw(10)
           << g.p_adjusted << (g.significant ? "  *" : "") << '\n';
    }
    for (const auto& n : r.notes) os << "note: " << n << '\n';
    return os.str();
}

}  // namespace pasta::eval
