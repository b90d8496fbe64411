#include "pasta/conditioning.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "pasta/errors.hpp"
#include "pasta/log.hpp"

namespace pasta::conditioning {

std::string to_string(Sex s) { return s == Sex::male ? "M" : "F"; }

std::string to_string(Diagnosis d) {
    switch (d) {
        case Diagnosis::cn: return "CN";
        case Diagnosis::mci: return "MCI";
        case Diagnosis::ad: return "AD";
    }
    return "?";
}

Sex sex_from_string(const std::string& s) {
    if (s == "M") return Sex::male;
    if (s == "F") return Sex::female;
    throw DataError("unknown sex level '" + s + "'");
}

Diagnosis diagnosis_from_string(const std::string& s) {
    if (s == "CN") return Diagnosis::cn;
    if (s == "MCI") return Diagnosis::mci;
    if (s == "AD") return Diagnosis::ad;
    throw DataError("unknown diagnosis level '" + s + "'");
}

void ClinicalRecord::validate() const {
    if (mmse && (*mmse < 0 || *mmse > 30)) {
        throw DataError(subject_id + ": mmse " + std::to_string(*mmse) + " outside [0, 30]");
    }
    if (apoe4 && (*apoe4 < 0 || *apoe4 > 2)) {
        throw DataError(subject_id + ": apoe4 " + std::to_string(*apoe4) + " not in {0, 1, 2}");
    }
    if (adas13 && *adas13 < 0) throw DataError(subject_id + ": negative adas13");
    if (age && !(std::isfinite(*age) && *age >= 0)) throw DataError(subject_id + ": invalid age");
    if (education && !(std::isfinite(*education) && *education >= 0)) {
        throw DataError(subject_id + ": invalid education");
    }
}

namespace {

std::array<std::optional<double>, 4> continuous(const ClinicalRecord& r) {
    return {r.age, r.education, r.mmse ? std::optional<double>(*r.mmse) : std::nullopt, r.adas13};
}

}  // namespace

ClinicalStats compute_stats(const std::vector<ClinicalRecord>& train_records) {
    ClinicalStats st;
    for (std::size_t f = 0; f < 4; ++f) {
        double sum = 0.0, sq = 0.0;
        std::size_t n = 0;
        for (const auto& r : train_records) {
            if (auto v = continuous(r)[f]) {
                sum += *v;
                sq += *v * *v;
                ++n;
            }
        }
        if (n == 0) continue;
        const double mean = sum / static_cast<double>(n);
        const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
        st.mean[f] = mean;
        st.stddev[f] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
    return st;
}

std::vector<float> encode_clinical(const ClinicalRecord& record, const ClinicalStats& stats) {
    record.validate();
    std::vector<float> out(kEncodedDim, 0.0f);
    const auto cont = continuous(record);
    const std::array<std::size_t, 4> missing_slot{9, 11, 12, 13};
    for (std::size_t f = 0; f < 4; ++f) {
        if (cont[f]) {
            out[f] = static_cast<float>((*cont[f] - stats.mean[f]) / stats.stddev[f]);
        } else {
            out[missing_slot[f]] = 1.0f;  // imputed with the mean: z-score 0
        }
    }
    if (record.sex) {
        out[*record.sex == Sex::male ? 4 : 5] = 1.0f;
    } else {
        out[10] = 1.0f;
    }
    if (record.apoe4) {
        out[6 + static_cast<std::size_t>(*record.apoe4)] = 1.0f;
    } else {
        out[14] = 1.0f;
    }
    return out;
}

torch::Tensor encode_batch(const std::vector<ClinicalRecord>& records, const ClinicalStats& stats) {
    auto t = torch::zeros({static_cast<std::int64_t>(records.size()), static_cast<std::int64_t>(kEncodedDim)});
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto v = encode_clinical(records[i], stats);
        t[static_cast<std::int64_t>(i)] = torch::tensor(v);
    }
    return t;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    cells.push_back(cur);
    return cells;
}

const char* kHeader = "subject_id,age,sex,education,mmse,adas13,apoe4,diagnosis";

double parse_double(const std::string& s, const std::string& field, std::size_t line) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("clinical csv line " + std::to_string(line) + ": bad " + field + " '" + s + "'");
    }
}

int parse_int(const std::string& s, const std::string& field, std::size_t line) {
    const double v = parse_double(s, field, line);
    if (v != std::floor(v)) {
        throw DataError("clinical csv line " + std::to_string(line) + ": " + field + " must be an integer");
    }
    return static_cast<int>(v);
}

std::string fmt_num(const std::optional<double>& v) {
    if (!v) return "";
    std::ostringstream os;
    os << std::setprecision(17) << *v;
    return os.str();
}

}  // namespace

std::vector<ClinicalRecord> read_clinical_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open clinical csv " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw DataError("empty clinical csv " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kHeader) throw DataError("clinical csv header mismatch: '" + line + "'");
    std::vector<ClinicalRecord> out;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto c = split_csv_line(line);
        if (c.size() != 8) {
            throw DataError("clinical csv line " + std::to_string(lineno) + ": expected 8 cells, got " +
                            std::to_string(c.size()));
        }
        ClinicalRecord r;
        r.subject_id = c[0];
        if (!c[1].empty()) r.age = parse_double(c[1], "age", lineno);
        if (!c[2].empty()) r.sex = sex_from_string(c[2]);
        if (!c[3].empty()) r.education = parse_double(c[3], "education", lineno);
        if (!c[4].empty()) r.mmse = parse_int(c[4], "mmse", lineno);
        if (!c[5].empty()) r.adas13 = parse_double(c[5], "adas13", lineno);
        if (!c[6].empty()) r.apoe4 = parse_int(c[6], "apoe4", lineno);
        if (!c[7].empty()) r.diagnosis = diagnosis_from_string(c[7]);
        r.validate();
        out.push_back(std::move(r));
    }
    return out;
}

std::string format_clinical_csv(const std::vector<ClinicalRecord>& records) {
    std::ostringstream os;
    os << kHeader << '\n';
    for (const auto& r : records) {
        os << r.subject_id << ',' << fmt_num(r.age) << ',' << (r.sex ? to_string(*r.sex) : "") << ','
           << fmt_num(r.education) << ',' << (r.mmse ? std::to_string(*r.mmse) : "") << ','
           << fmt_num(r.adas13) << ',' << (r.apoe4 ? std::to_string(*r.apoe4) : "") << ','
           << (r.diagnosis ? to_string(*r.diagnosis) : "") << '\n';
    }
    return os.str();
}

void write_clinical_csv(const std::vector<ClinicalRecord>& records, const std::filesystem::path& path) {
    io::atomic_write(path, format_clinical_csv(records));
}

RoiWeightMap build_roi_weight_map(const Volume3D& mask, double inside, double outside) {
    if (!(inside > outside && outside > 0.0)) {
        throw ConfigError("roi weights need inside > outside > 0");
    }
    RoiWeightMap m;
    m.inside_weight = inside;
    m.outside_weight = outside;
    auto binary = mask.data.to(torch::kFloat64) > 0.5;
    const auto count = binary.sum().item<std::int64_t>();
    if (count == 0 || count == mask.numel()) {
        log::warn("roi weight map: degenerate mask (", count, " of ", mask.numel(), " voxels), using uniform ones");
        m.degenerate = true;
        m.weights = torch::ones(mask.data.sizes(), torch::kFloat64);
        return m;
    }
    auto raw = torch::where(binary, torch::full({}, inside, torch::kFloat64), torch::full({}, outside, torch::kFloat64));
    const double mean = (static_cast<double>(count) * inside +
                         static_cast<double>(mask.numel() - count) * outside) /
                        static_cast<double>(mask.numel());
    m.weights = raw / mean;
    return m;
}

}  // namespace pasta::conditioning
