#include "gigp/volume.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

namespace gigp::data {

namespace {

static_assert(std::endian::native == std::endian::little, "volume IO assumes a little-endian host");

std::string dims_str(const std::array<int, 3>& d) {
    return std::to_string(d[0]) + "x" + std::to_string(d[1]) + "x" + std::to_string(d[2]);
}

// Trilinear sample of a scalar field at continuous index coordinates.
double sample_trilinear(const std::vector<double>& field, const std::array<int, 3>& dims, double x, double y,
                        double z) {
    const std::array<double, 3> c{x, y, z};
    std::array<int, 3> lo{};
    std::array<int, 3> hi{};
    std::array<double, 3> fr{};
    for (int a = 0; a < 3; ++a) {
        const double s = std::clamp(c[a], 0.0, static_cast<double>(dims[a] - 1));
        int l = static_cast<int>(std::floor(s));
        l = std::clamp(l, 0, std::max(dims[a] - 2, 0));
        lo[a] = l;
        hi[a] = std::min(l + 1, dims[a] - 1);
        fr[a] = s - l;
    }
    double acc = 0.0;
    for (int corner = 0; corner < 8; ++corner) {
        const int bx = corner & 1;
        const int by = (corner >> 1) & 1;
        const int bz = (corner >> 2) & 1;
        const double w = (bx ? fr[0] : 1 - fr[0]) * (by ? fr[1] : 1 - fr[1]) * (bz ? fr[2] : 1 - fr[2]);
        if (w == 0.0) continue;
        const std::size_t off = (static_cast<std::size_t>(bz ? hi[2] : lo[2]) * dims[1] + (by ? hi[1] : lo[1])) * dims[0] +
                                (bx ? hi[0] : lo[0]);
        acc += w * field[off];
    }
    return acc;
}

template <typename Fn>
Volume remap(const Volume& v, const std::array<int, 3>& out_dims, Fn source) {
    Volume out;
    out.dims = out_dims;
    out.spacing = v.spacing;
    out.id = v.id;
    out.intensities.resize(static_cast<std::size_t>(out_dims[0]) * out_dims[1] * out_dims[2]);
    if (v.label) out.label.emplace(out.intensities.size());
    std::size_t i = 0;
    for (int z = 0; z < out_dims[2]; ++z) {
        for (int y = 0; y < out_dims[1]; ++y) {
            for (int x = 0; x < out_dims[0]; ++x, ++i) {
                const std::array<int, 3> s = source(x, y, z);
                const std::size_t src = v.offset(s[0], s[1], s[2]);
                out.intensities[i] = v.intensities[src];
                if (v.label) (*out.label)[i] = (*v.label)[src];
            }
        }
    }
    return out;
}

}  // namespace

std::size_t Volume::voxels() const { return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]; }

std::size_t Volume::offset(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
}

void Volume::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (dims[a] < 1) throw std::invalid_argument("volume '" + id + "' has non-positive extent " + dims_str(dims));
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
            throw std::invalid_argument("volume '" + id + "' has non-positive spacing");
        }
    }
    if (intensities.size() != voxels()) {
        throw std::invalid_argument("volume '" + id + "' intensity count " + std::to_string(intensities.size()) +
                                    " does not match dims " + dims_str(dims));
    }
    if (label && label->size() != voxels()) {
        throw std::invalid_argument("volume '" + id + "' label size does not match its intensities");
    }
}

Tensor Volume::to_tensor() const {
    validate();
    return Tensor::from_values({1, 1, dims[2], dims[1], dims[0]}, intensities);
}

metrics::BinaryMask Volume::label_mask() const {
    if (!label) throw std::invalid_argument("volume '" + id + "' has no label");
    metrics::BinaryMask mask({dims[2], dims[1], dims[0]}, {spacing[2], spacing[1], spacing[0]});
    for (std::size_t i = 0; i < mask.data.size(); ++i) mask.data[i] = (*label)[i] ? 1 : 0;
    return mask;
}

void normalize_intensities(Volume& volume) {
    volume.validate();
    const double n = static_cast<double>(volume.voxels());
    const double mean = std::accumulate(volume.intensities.begin(), volume.intensities.end(), 0.0) / n;
    double var = 0.0;
    for (double& v : volume.intensities) {
        v -= mean;
        var += v * v;
    }
    var /= n;
    if (var <= 0.0) {
        std::fill(volume.intensities.begin(), volume.intensities.end(), 0.0);
        return;
    }
    const double inv = 1.0 / std::sqrt(var);
    for (double& v : volume.intensities) v *= inv;
    // One refinement pass removes the rounding residue of the first.
    const double mean2 = std::accumulate(volume.intensities.begin(), volume.intensities.end(), 0.0) / n;
    for (double& v : volume.intensities) v -= mean2;
}

std::string encode_volume(const Volume& volume) {
    volume.validate();
    nlohmann::ordered_json header;
    header["magic"] = kVolumeMagic;
    header["dims"] = volume.dims;
    header["spacing"] = volume.spacing;
    header["has_label"] = volume.label.has_value();
    header["id"] = volume.id;
    std::string out = header.dump() + "\n";
    const std::size_t n = volume.voxels();
    const std::size_t start = out.size();
    out.resize(start + n * sizeof(float));
    for (std::size_t i = 0; i < n; ++i) {
        const float f = static_cast<float>(volume.intensities[i]);
        std::memcpy(out.data() + start + i * sizeof(float), &f, sizeof(float));
    }
    if (volume.label) {
        for (std::uint8_t v : *volume.label) out.push_back(static_cast<char>(v ? 1 : 0));
    }
    return out;
}

Volume decode_volume(const std::string& bytes) {
    const std::size_t nl = bytes.find('\n');
    if (nl == std::string::npos) throw VolumeFormatError("volume header line is not newline-terminated");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(0, nl));
    } catch (const nlohmann::json::exception& e) {
        throw VolumeFormatError(std::string("volume header is not valid JSON: expected magic \"") + kVolumeMagic +
                                "\" header (" + e.what() + ")");
    }
    if (!header.is_object() || !header.contains("magic") || !header["magic"].is_string() ||
        header["magic"].get<std::string>() != kVolumeMagic) {
        throw VolumeFormatError(std::string("bad volume magic: expected \"") + kVolumeMagic + "\"");
    }
    Volume v;
    try {
        v.dims = header.at("dims").get<std::array<int, 3>>();
        v.spacing = header.at("spacing").get<std::array<double, 3>>();
        v.id = header.at("id").get<std::string>();
        const bool has_label = header.at("has_label").get<bool>();
        if (has_label) v.label.emplace();
    } catch (const nlohmann::json::exception& e) {
        throw VolumeFormatError(std::string("volume header field error: ") + e.what());
    }
    for (int a = 0; a < 3; ++a) {
        if (v.dims[a] < 1) throw VolumeFormatError("volume header dims must be positive, got " + dims_str(v.dims));
    }
    const std::size_t n = v.voxels();
    const std::size_t expected = n * sizeof(float) + (v.label ? n : 0);
    const std::size_t have = bytes.size() - nl - 1;
    if (have != expected) {
        std::ostringstream os;
        os << "volume payload length mismatch: header dims " << dims_str(v.dims) << (v.label ? " with label" : "")
           << " imply " << expected << " bytes (" << n << " float32 values" << (v.label ? " + label bytes" : "")
           << ") but " << have << " bytes follow";
        throw VolumeFormatError(os.str());
    }
    v.intensities.resize(n);
    const char* p = bytes.data() + nl + 1;
    for (std::size_t i = 0; i < n; ++i) {
        float f;
        std::memcpy(&f, p + i * sizeof(float), sizeof(float));
        v.intensities[i] = f;
    }
    if (v.label) {
        v.label->resize(n);
        const char* lp = p + n * sizeof(float);
        for (std::size_t i = 0; i < n; ++i) {
            const auto b = static_cast<std::uint8_t>(lp[i]);
            if (b > 1) throw VolumeFormatError("volume label byte " + std::to_string(i) + " is not 0 or 1");
            (*v.label)[i] = b;
        }
    }
    return v;
}

void save_volume(const Volume& volume, const std::filesystem::path& path) {
    const std::string bytes = encode_volume(volume);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw VolumeFormatError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw VolumeFormatError("failed writing '" + path.string() + "'");
}

Volume load_volume(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw VolumeFormatError("cannot open volume '" + path.string() + "'");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_volume(bytes);
    } catch (const VolumeFormatError& e) {
        throw VolumeFormatError(path.string() + ": " + e.what());
    }
}

DatasetSplit split_dataset(std::size_t total, const SplitSizes& sizes, int num_labeled, std::uint64_t seed) {
    if (sizes.train < 1 || sizes.validation < 0 || sizes.test < 0) {
        throw std::invalid_argument("split sizes must have train >= 1 and non-negative validation/test counts");
    }
    const std::size_t needed = static_cast<std::size_t>(sizes.train) + sizes.validation + sizes.test;
    if (total < needed) {
        throw std::invalid_argument("split needs " + std::to_string(needed) + " volumes but only " +
                                    std::to_string(total) + " are available");
    }
    if (num_labeled < 1 || num_labeled > sizes.train) {
        throw std::invalid_argument("num_labeled must be in [1, " + std::to_string(sizes.train) + "], got " +
                                    std::to_string(num_labeled));
    }
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    DatasetSplit split;
    std::size_t i = 0;
    for (int k = 0; k < sizes.train; ++k, ++i) {
        (k < num_labeled ? split.labeled : split.unlabeled).push_back(order[i]);
    }
    for (int k = 0; k < sizes.validation; ++k, ++i) split.validation.push_back(order[i]);
    for (int k = 0; k < sizes.test; ++k, ++i) split.test.push_back(order[i]);
    if (split.unlabeled.empty()) split.warning = "every training volume is labeled; the unlabeled set is empty";
    return split;
}

Volume flip(const Volume& volume, int axis) {
    if (axis < 0 || axis > 2) throw std::invalid_argument("flip axis must be 0, 1 or 2");
    const auto d = volume.dims;
    return remap(volume, d, [&](int x, int y, int z) {
        std::array<int, 3> s{x, y, z};
        s[axis] = d[axis] - 1 - s[axis];
        return s;
    });
}

Volume rotate90(const Volume& volume, int fixed_axis, int quarter_turns) {
    if (fixed_axis < 0 || fixed_axis > 2) throw std::invalid_argument("rotation axis must be 0, 1 or 2");
    const int p = fixed_axis == 0 ? 1 : 0;
    const int q = fixed_axis == 2 ? 1 : 2;
    if (volume.dims[p] != volume.dims[q]) {
        throw std::invalid_argument("rotation plane extents differ (" + dims_str(volume.dims) + ")");
    }
    const int turns = ((quarter_turns % 4) + 4) % 4;
    Volume out = volume;
    const int n = volume.dims[p];
    for (int t = 0; t < turns; ++t) {
        out = remap(out, out.dims, [&](int x, int y, int z) {
            const std::array<int, 3> o{x, y, z};
            std::array<int, 3> s = o;
            s[p] = o[q];
            s[q] = n - 1 - o[p];
            return s;
        });
    }
    return out;
}

AugmentDraw identity_draw(const Volume& volume, const AugmentOptions& options) {
    AugmentDraw draw;
    for (int a = 0; a < 3; ++a) draw.crop_origin[a] = (volume.dims[a] - options.crop[a]) / 2;
    return draw;
}

AugmentDraw draw_augment(const Volume& volume, const AugmentOptions& options, std::mt19937_64& rng) {
    AugmentDraw draw;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (options.flips) {
        for (int a = 0; a < 3; ++a) draw.flip[a] = unit(rng) < 0.5;
    }
    if (options.rotations) {
        std::vector<int> planes;
        for (int fixed = 0; fixed < 3; ++fixed) {
            const int p = fixed == 0 ? 1 : 0;
            const int q = fixed == 2 ? 1 : 2;
            if (volume.dims[p] == volume.dims[q]) planes.push_back(fixed);
        }
        if (!planes.empty()) {
            draw.rotation_plane = planes[static_cast<std::size_t>(unit(rng) * planes.size()) % planes.size()];
            draw.quarter_turns = static_cast<int>(unit(rng) * 4.0) % 4;
        }
    }
    if (options.scale_jitter > 0.0) draw.scale = 1.0 - options.scale_jitter + 2.0 * options.scale_jitter * unit(rng);
    for (int a = 0; a < 3; ++a) {
        const int room = volume.dims[a] - options.crop[a];
        if (room < 0) throw std::invalid_argument("crop larger than volume " + dims_str(volume.dims));
        draw.crop_origin[a] = static_cast<int>(unit(rng) * (room + 1)) % (room + 1);
    }
    return draw;
}

Volume apply_augment(const Volume& volume, const AugmentDraw& draw, const AugmentOptions& options) {
    volume.validate();
    for (int a = 0; a < 3; ++a) {
        if (options.crop[a] < 1 || options.crop[a] > volume.dims[a]) {
            throw std::invalid_argument("invalid crop " + dims_str(options.crop) + " for volume " +
                                        dims_str(volume.dims));
        }
        if (draw.crop_origin[a] < 0 || draw.crop_origin[a] + options.crop[a] > volume.dims[a]) {
            throw std::invalid_argument("crop origin out of range for volume " + dims_str(volume.dims));
        }
    }
    if (!(draw.scale > 0.0)) throw std::invalid_argument("augmentation scale must be positive");
    Volume v = volume;
    for (int a = 0; a < 3; ++a) {
        if (draw.flip[a]) v = flip(v, a);
    }
    if (draw.rotation_plane >= 0 && draw.quarter_turns % 4 != 0) v = rotate90(v, draw.rotation_plane, draw.quarter_turns);
    if (draw.scale != 1.0) {
        const auto d = v.dims;
        std::vector<double> lab;
        if (v.label) lab.assign(v.label->begin(), v.label->end());
        Volume z = v;
        std::size_t i = 0;
        for (int zz = 0; zz < d[2]; ++zz) {
            for (int yy = 0; yy < d[1]; ++yy) {
                for (int xx = 0; xx < d[0]; ++xx, ++i) {
                    const std::array<int, 3> idx{xx, yy, zz};
                    std::array<double, 3> src{};
                    for (int a = 0; a < 3; ++a) {
                        const double c = 0.5 * (d[a] - 1);
                        src[a] = c + (idx[a] - c) / draw.scale;
                    }
                    z.intensities[i] = sample_trilinear(v.intensities, d, src[0], src[1], src[2]);
                    if (v.label) (*z.label)[i] = sample_trilinear(lab, d, src[0], src[1], src[2]) >= 0.5 ? 1 : 0;
                }
            }
        }
        v = std::move(z);
    }
    const auto o = draw.crop_origin;
    if (options.crop != v.dims) {
        v = remap(v, options.crop, [&](int x, int y, int z) { return std::array<int, 3>{x + o[0], y + o[1], z + o[2]}; });
    }
    return v;
}

Volume augment(const Volume& volume, const AugmentOptions& options, std::mt19937_64& rng) {
    return apply_augment(volume, draw_augment(volume, options, rng), options);
}

int connected_components(const metrics::BinaryMask& mask) {
    mask.validate();
    const auto& s = mask.shape;
    std::vector<std::uint8_t> seen(mask.size(), 0);
    std::vector<std::size_t> stack;
    int count = 0;
    for (std::size_t start = 0; start < mask.size(); ++start) {
        if (!mask.data[start] || seen[start]) continue;
        ++count;
        seen[start] = 1;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t cur = stack.back();
            stack.pop_back();
            const int x = static_cast<int>(cur % s[2]);
            const int y = static_cast<int>((cur / s[2]) % s[1]);
            const int z = static_cast<int>(cur / (static_cast<std::size_t>(s[2]) * s[1]));
            const int nb[6][3] = {{z - 1, y, x}, {z + 1, y, x}, {z, y - 1, x}, {z, y + 1, x}, {z, y, x - 1}, {z, y, x + 1}};
            for (const auto& n : nb) {
                if (n[0] < 0 || n[1] < 0 || n[2] < 0 || n[0] >= s[0] || n[1] >= s[1] || n[2] >= s[2]) continue;
                const std::size_t off = (static_cast<std::size_t>(n[0]) * s[1] + n[1]) * s[2] + n[2];
                if (mask.data[off] && !seen[off]) {
                    seen[off] = 1;
                    stack.push_back(off);
                }
            }
        }
    }
    return count;
}

}  // namespace gigp::data
