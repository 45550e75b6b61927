#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "segvae/errors.hpp"
#include "segvae/volume.hpp"

namespace segvae {

// ---------------------------------------------------------------------------
// NIfTI-1 subset
// ---------------------------------------------------------------------------
//
// Single-file .nii only, little-endian, 3D, datatypes uint8/int16/int32/
// float32. Header offsets follow the NIfTI-1 standard: sizeof_hdr at 0,
// dim at 40, datatype at 70, bitpix at 72, pixdim at 76, vox_offset at 108,
// scl_slope at 112, scl_inter at 116, qoffset_{x,y,z} at 268, magic at 344.
// Orientation fields (qform/sform) pass through as opaque bytes; the pipeline
// assumes co-registered inputs.

namespace nifti_detail {

constexpr int header_size = 348;
constexpr int dt_uint8 = 2;
constexpr int dt_int16 = 4;
constexpr int dt_int32 = 8;
constexpr int dt_float32 = 16;

template <typename T>
T read_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
    T v;
    std::memcpy(&v, bytes.data() + offset, sizeof(T));
    return v;
}

template <typename T>
void write_le(std::vector<std::uint8_t>& bytes, std::size_t offset, T v) {
    std::memcpy(bytes.data() + offset, &v, sizeof(T));
}

struct ParsedHeader {
    Index3 shape;
    Float3 spacing;
    Float3 origin;
    int datatype = 0;
    std::int64_t vox_offset = 0;
    float scl_slope = 0.0f;
    float scl_inter = 0.0f;
    std::array<char, 348> raw{};
};

inline ParsedHeader parse_header(std::span<const std::uint8_t> bytes) {
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b)
        throw UnsupportedError("nifti: gzip-compressed input, decompress to .nii first");
    if (bytes.size() < header_size) throw FormatError("nifti: file shorter than the 348-byte header");

    ParsedHeader h;
    std::memcpy(h.raw.data(), bytes.data(), header_size);

    const auto sizeof_hdr = read_le<std::int32_t>(bytes, 0);
    if (sizeof_hdr != header_size)
        throw FormatError("nifti: sizeof_hdr is " + std::to_string(sizeof_hdr) + ", expected 348");

    const char* magic = reinterpret_cast<const char*>(bytes.data()) + 344;
    if (std::memcmp(magic, "n+1\0", 4) != 0 && std::memcmp(magic, "ni1\0", 4) != 0)
        throw FormatError("nifti: bad magic, expected \"n+1\" or \"ni1\"");

    std::array<std::int16_t, 8> dim{};
    for (int i = 0; i < 8; ++i) dim[i] = read_le<std::int16_t>(bytes, 40 + 2 * i);
    if (dim[0] != 3) throw FormatError("nifti: dim[0] is " + std::to_string(dim[0]) + ", only 3D supported");
    for (int a = 1; a <= 3; ++a) {
        if (dim[a] <= 0) throw FormatError("nifti: dim[" + std::to_string(a) + "] must be positive");
    }
    h.shape = {dim[1], dim[2], dim[3]};

    h.datatype = read_le<std::int16_t>(bytes, 70);
    if (h.datatype != dt_uint8 && h.datatype != dt_int16 && h.datatype != dt_int32 &&
        h.datatype != dt_float32) {
        throw UnsupportedError("nifti: datatype " + std::to_string(h.datatype) +
                               " (supported: 2 uint8, 4 int16, 8 int32, 16 float32)");
    }

    for (int a = 0; a < 3; ++a) {
        const float p = read_le<float>(bytes, 76 + 4 * (a + 1));
        if (!(p > 0.0f) || !std::isfinite(p))
            throw FormatError("nifti: pixdim[" + std::to_string(a + 1) + "] must be positive");
        h.spacing[a] = p;
    }

    const float vox_offset = read_le<float>(bytes, 108);
    if (!(vox_offset >= header_size))
        throw FormatError("nifti: vox_offset " + std::to_string(vox_offset) + " before header end");
    h.vox_offset = static_cast<std::int64_t>(vox_offset);

    h.scl_slope = read_le<float>(bytes, 112);
    h.scl_inter = read_le<float>(bytes, 116);
    for (int a = 0; a < 3; ++a) h.origin[a] = read_le<float>(bytes, 268 + 4 * a);
    return h;
}

inline int bitpix_of(int datatype) {
    switch (datatype) {
        case dt_uint8: return 8;
        case dt_int16: return 16;
        case dt_int32: return 32;
        case dt_float32: return 32;
        default: return 0;
    }
}

inline void check_payload(std::span<const std::uint8_t> bytes, const ParsedHeader& h) {
    const std::int64_t need = h.vox_offset + voxel_count(h.shape) * (bitpix_of(h.datatype) / 8);
    if (static_cast<std::int64_t>(bytes.size()) < need)
        throw FormatError("nifti: payload truncated, need " + std::to_string(need) + " bytes, have " +
                          std::to_string(bytes.size()));
}

/// Reads one voxel as double before scaling.
template <typename T>
double raw_at(std::span<const std::uint8_t> bytes, std::int64_t vox_offset, std::int64_t i) {
    T v;
    std::memcpy(&v, bytes.data() + vox_offset + i * static_cast<std::int64_t>(sizeof(T)), sizeof(T));
    return static_cast<double>(v);
}

}  // namespace nifti_detail

/// Parses a NIfTI-1 byte stream into a float32 Volume, applying
/// scl_slope/scl_inter when scl_slope is nonzero.
[[nodiscard]] inline Volume read_nifti_volume(std::span<const std::uint8_t> bytes) {
    using namespace nifti_detail;
    const ParsedHeader h = parse_header(bytes);
    check_payload(bytes, h);

    Volume v(h.shape, h.spacing, h.origin);
    v.raw_header = h.raw;
    float* dst = v.data();
    const std::int64_t n = v.size();
    const bool scale = h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f);

    if (h.datatype == dt_float32 && !scale) {
        std::memcpy(dst, bytes.data() + h.vox_offset, static_cast<std::size_t>(n) * 4);
    } else {
        for (std::int64_t i = 0; i < n; ++i) {
            double raw;
            switch (h.datatype) {
                case dt_uint8: raw = raw_at<std::uint8_t>(bytes, h.vox_offset, i); break;
                case dt_int16: raw = raw_at<std::int16_t>(bytes, h.vox_offset, i); break;
                case dt_int32: raw = raw_at<std::int32_t>(bytes, h.vox_offset, i); break;
                default: raw = raw_at<float>(bytes, h.vox_offset, i); break;
            }
            dst[i] = static_cast<float>(scale ? h.scl_slope * raw + h.scl_inter : raw);
        }
    }
    for (std::int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(dst[i])) throw DataError("nifti: non-finite voxel at index " + std::to_string(i));
    }
    return v;
}

/// Parses a NIfTI-1 byte stream into a LabelVolume; every voxel must land
/// exactly on a legal label value {0, 1, 2, 4}.
[[nodiscard]] inline LabelVolume read_nifti_labels(std::span<const std::uint8_t> bytes) {
    using namespace nifti_detail;
    const ParsedHeader h = parse_header(bytes);
    check_payload(bytes, h);

    LabelVolume lv(h.shape, h.spacing, h.origin);
    lv.raw_header = h.raw;
    std::uint8_t* dst = lv.data();
    const std::int64_t n = lv.size();
    const bool scale = h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f);

    for (std::int64_t i = 0; i < n; ++i) {
        double raw;
        switch (h.datatype) {
            case dt_uint8: raw = raw_at<std::uint8_t>(bytes, h.vox_offset, i); break;
            case dt_int16: raw = raw_at<std::int16_t>(bytes, h.vox_offset, i); break;
            case dt_int32: raw = raw_at<std::int32_t>(bytes, h.vox_offset, i); break;
            default: raw = raw_at<float>(bytes, h.vox_offset, i); break;
        }
        if (scale) raw = h.scl_slope * raw + h.scl_inter;
        const auto v = static_cast<std::int64_t>(std::llround(raw));
        if (static_cast<double>(v) != raw || v < 0 || v > 255 || !is_legal_label(static_cast<std::uint8_t>(v)))
            throw DataError("nifti: illegal label value " + std::to_string(raw) + " at index " +
                            std::to_string(i) + " (legal: 0, 1, 2, 4)");
        dst[i] = static_cast<std::uint8_t>(v);
    }
    return lv;
}

namespace nifti_detail {

inline std::vector<std::uint8_t> make_bytes(const ParsedHeader* base, Index3 shape, Float3 spacing,
                                            Float3 origin, int datatype, std::int64_t payload_bytes,
                                            const std::optional<std::array<char, 348>>& raw) {
    std::vector<std::uint8_t> out(352 + static_cast<std::size_t>(payload_bytes), 0);
    (void)base;
    if (raw) std::memcpy(out.data(), raw->data(), header_size);

    write_le<std::int32_t>(out, 0, header_size);
    std::array<std::int16_t, 8> dim = {3, static_cast<std::int16_t>(shape[0]),
                                       static_cast<std::int16_t>(shape[1]),
                                       static_cast<std::int16_t>(shape[2]), 1, 1, 1, 1};
    for (int i = 0; i < 8; ++i) write_le<std::int16_t>(out, 40 + 2 * i, dim[i]);
    write_le<std::int16_t>(out, 70, static_cast<std::int16_t>(datatype));
    write_le<std::int16_t>(out, 72, static_cast<std::int16_t>(bitpix_of(datatype)));
    if (!raw) write_le<float>(out, 76, 1.0f);  // qfac
    for (int a = 0; a < 3; ++a) write_le<float>(out, 76 + 4 * (a + 1), spacing[a]);
    write_le<float>(out, 108, 352.0f);
    write_le<float>(out, 112, 1.0f);
    write_le<float>(out, 116, 0.0f);
    for (int a = 0; a < 3; ++a) write_le<float>(out, 268 + 4 * a, origin[a]);
    std::memcpy(out.data() + 344, "n+1\0", 4);
    // Bytes 348..352 are the extension flag, all zero (no extensions).
    out[348] = out[349] = out[350] = out[351] = 0;
    return out;
}

}  // namespace nifti_detail

/// Serializes a Volume as float32 with scl_slope 1 / scl_inter 0; the payload
/// round-trips bit-exactly through read_nifti_volume.
[[nodiscard]] inline std::vector<std::uint8_t> write_nifti(const Volume& v) {
    using namespace nifti_detail;
    auto out = make_bytes(nullptr, v.shape(), v.spacing_mm(), v.origin_mm(), dt_float32, v.size() * 4,
                          v.raw_header);
    std::memcpy(out.data() + 352, v.data(), static_cast<std::size_t>(v.size()) * 4);
    return out;
}

/// Serializes a LabelVolume as uint8.
[[nodiscard]] inline std::vector<std::uint8_t> write_nifti(const LabelVolume& lv) {
    using namespace nifti_detail;
    auto out = make_bytes(nullptr, lv.shape(), lv.spacing_mm(), lv.origin_mm(), dt_uint8, lv.size(),
                          lv.raw_header);
    std::memcpy(out.data() + 352, lv.data(), static_cast<std::size_t>(lv.size()));
    return out;
}

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

[[nodiscard]] inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    f.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(f.tellg());
    f.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(size);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!f) throw IoError("cannot read " + path.string());
    return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("cannot write " + path.string());
}

[[nodiscard]] inline Volume read_volume_file(const std::filesystem::path& path) {
    return read_nifti_volume(read_file_bytes(path));
}

[[nodiscard]] inline LabelVolume read_labels_file(const std::filesystem::path& path) {
    return read_nifti_labels(read_file_bytes(path));
}

inline void write_volume_file(const std::filesystem::path& path, const Volume& v) {
    const auto bytes = write_nifti(v);
    write_file_bytes(path, bytes);
}

inline void write_labels_file(const std::filesystem::path& path, const LabelVolume& lv) {
    const auto bytes = write_nifti(lv);
    write_file_bytes(path, bytes);
}

}  // namespace segvae
