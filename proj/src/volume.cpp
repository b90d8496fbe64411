#include "pasta/volume.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pasta/errors.hpp"
#include "pasta/log.hpp"

static_assert(std::endian::native == std::endian::little, "PVOL IO assumes a little-endian host");

namespace pasta {

std::string to_string(Modality m) {
    switch (m) {
        case Modality::mri: return "mri";
        case Modality::pet: return "pet";
        case Modality::mask: return "mask";
        default: return "other";
    }
}

Modality modality_from_string(const std::string& s) {
    if (s == "mri") return Modality::mri;
    if (s == "pet") return Modality::pet;
    if (s == "mask") return Modality::mask;
    if (s == "other") return Modality::other;
    throw DataError("unknown modality '" + s + "'");
}

Volume3D::Volume3D(torch::Tensor d, Modality m) : data(std::move(d)), modality(m) {
    if (data.dim() != 3) {
        throw ContractViolation("Volume3D needs a 3-d tensor");
    }
    data = data.to(torch::kFloat32).contiguous();
}

Volume3D Volume3D::zeros(std::array<std::int64_t, 3> dims, Modality m) {
    return Volume3D(torch::zeros({dims[0], dims[1], dims[2]}, torch::kFloat32), m);
}

std::array<std::int64_t, 3> Volume3D::dims() const {
    return {data.size(0), data.size(1), data.size(2)};
}

bool Volume3D::bitwise_equal(const Volume3D& other) const {
    if (modality != other.modality || dims() != other.dims()) return false;
    auto a = data.contiguous();
    auto b = other.data.contiguous();
    return std::memcmp(a.data_ptr<float>(), b.data_ptr<float>(),
                       static_cast<std::size_t>(a.numel()) * sizeof(float)) == 0;
}

namespace io {

namespace {

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t offset) {
    T v;
    std::memcpy(&v, in.data() + offset, sizeof(T));
    return v;
}

}  // namespace

std::string encode_volume(const Volume3D& vol) {
    auto d = vol.dims();
    std::string out;
    out.reserve(kPvolHeaderBytes + static_cast<std::size_t>(vol.numel()) * 4);
    out.append("PVOL", 4);
    put<std::uint16_t>(out, kPvolVersion);
    for (auto e : d) put<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(vol.modality));
    auto data = vol.data.contiguous();
    out.append(reinterpret_cast<const char*>(data.data_ptr<float>()),
               static_cast<std::size_t>(data.numel()) * sizeof(float));
    return out;
}

Volume3D decode_volume(const std::string& bytes) {
    if (bytes.size() < 4) {
        throw FormatError("truncated PVOL header: expected " + std::to_string(kPvolHeaderBytes) +
                              " bytes, got " + std::to_string(bytes.size()),
                          bytes.size());
    }
    if (bytes.compare(0, 4, "PVOL") != 0) {
        throw FormatError("bad magic, expected 'PVOL'", 0);
    }
    if (bytes.size() < kPvolHeaderBytes) {
        throw FormatError("truncated PVOL header: expected " + std::to_string(kPvolHeaderBytes) +
                              " bytes, got " + std::to_string(bytes.size()),
                          bytes.size());
    }
    const auto version = get<std::uint16_t>(bytes, 4);
    if (version != kPvolVersion) {
        throw FormatError("unsupported PVOL version " + std::to_string(version), 4);
    }
    std::array<std::int64_t, 3> dims{};
    for (int i = 0; i < 3; ++i) dims[i] = get<std::uint32_t>(bytes, 6 + 4 * i);
    const auto tag = get<std::uint8_t>(bytes, 18);
    if (tag > static_cast<std::uint8_t>(Modality::other)) {
        throw FormatError("unknown modality tag " + std::to_string(tag), 18);
    }
    const std::uint64_t count = static_cast<std::uint64_t>(dims[0]) * dims[1] * dims[2];
    const std::uint64_t expected = kPvolHeaderBytes + count * 4;
    if (bytes.size() != expected) {
        throw FormatError("PVOL size mismatch: expected " + std::to_string(expected) +
                              " bytes, got " + std::to_string(bytes.size()),
                          std::min<std::uint64_t>(bytes.size(), expected));
    }
    auto t = torch::empty({dims[0], dims[1], dims[2]}, torch::kFloat32);
    std::memcpy(t.data_ptr<float>(), bytes.data() + kPvolHeaderBytes, count * 4);
    return Volume3D(t, static_cast<Modality>(tag));
}

void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("cannot open " + tmp.string() + " for writing");
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!os) throw DataError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void write_volume(const Volume3D& vol, const std::filesystem::path& path) {
    atomic_write(path, encode_volume(vol));
}

Volume3D read_volume(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open volume " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    try {
        return decode_volume(ss.str());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
}

}  // namespace io

double percentile(const torch::Tensor& values, double pct) {
    auto flat = values.reshape({-1}).to(torch::kFloat64);
    auto sorted = std::get<0>(flat.sort());
    const auto n = sorted.numel();
    if (n == 0) throw ContractViolation("percentile of an empty tensor");
    const double pos = pct / 100.0 * static_cast<double>(n - 1);
    const auto lo = static_cast<std::int64_t>(std::floor(pos));
    const auto hi = std::min<std::int64_t>(lo + 1, n - 1);
    const double frac = pos - static_cast<double>(lo);
    auto acc = sorted.accessor<double, 1>();
    return acc[lo] + (acc[hi] - acc[lo]) * frac;
}

Volume3D normalize_volume(const Volume3D& raw, double lo_pct, double hi_pct) {
    if (!torch::isfinite(raw.data).all().item<bool>()) {
        throw DataError("normalize_volume: non-finite voxels");
    }
    const double lo = percentile(raw.data, lo_pct);
    const double hi = percentile(raw.data, hi_pct);
    if (!(hi > lo)) {
        log::warn("normalize_volume: constant volume, emitting uniform 0.5");
        return Volume3D(torch::full_like(raw.data, 0.5), raw.modality);
    }
    auto scaled = ((raw.data.to(torch::kFloat64) - lo) / (hi - lo)).clamp(0.0, 1.0);
    return Volume3D(scaled.to(torch::kFloat32), raw.modality);
}

}  // namespace pasta
