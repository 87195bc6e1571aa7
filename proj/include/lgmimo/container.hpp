// SPDX-License-Identifier: Apache-2.0
//
// lgmimo: deep MIMO detection and learngene transfer workbench
// ------------------------------------------------------------------------
//
// Manifest + flat binary container. `<path>` holds a JSON manifest and
// `<path>.bin` holds the arrays it describes, concatenated, little-endian.

#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgmimo/error.hpp"
#include "lgmimo/rng.hpp"

namespace lgmimo::io {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "binary containers assume a little-endian host");

inline std::string hex64(std::uint64_t v)
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return s;
}

/// Shortest-safe decimal text of a double (17 significant digits), used for
/// every number written to CSV so files round-trip and compare byte-wise.
inline std::string num(double v)
{
    char buf[40];
    const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf, static_cast<std::size_t>(n));
}

inline std::uint64_t hash_bytes(std::string_view bytes) { return fnv1a64(bytes); }

inline std::string blob_path(const std::filesystem::path& manifest) { return manifest.string() + ".bin"; }

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out)
        fail(ErrorKind::IoError, "cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out)
        fail(ErrorKind::IoError, "write failed for '" + path.string() + "'");
}

inline std::string read_text(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorKind::IoError, "cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Encodes doubles (float64) or floats (float32) into a byte string.
template <typename T>
void append_le(std::string& bytes, std::span<const double> values)
{
    const std::size_t start = bytes.size();
    bytes.resize(start + values.size() * sizeof(T));
    for (std::size_t i = 0; i < values.size(); ++i) {
        const T v = static_cast<T>(values[i]);
        std::memcpy(bytes.data() + start + i * sizeof(T), &v, sizeof(T));
    }
}

template <typename T>
std::vector<double> decode_le(std::string_view bytes)
{
    std::vector<double> out(bytes.size() / sizeof(T));
    for (std::size_t i = 0; i < out.size(); ++i) {
        T v;
        std::memcpy(&v, bytes.data() + i * sizeof(T), sizeof(T));
        out[i] = static_cast<double>(v);
    }
    return out;
}

/// Writes manifest and blob. The manifest gains a "blob" section recording the
/// file name, dtype, byte count and FNV-1a hash of the blob.
inline void write_container(const std::filesystem::path& path, json manifest, const std::string& blob,
                            std::string_view dtype)
{
    const std::filesystem::path bin = blob_path(path);
    manifest["blob"] = {{"file", bin.filename().string()},
                        {"dtype", dtype},
                        {"bytes", blob.size()},
                        {"fnv1a64", hex64(hash_bytes(blob))}};
    write_text(path, manifest.dump(2) + "\n");
    write_text(bin, blob);
}

struct Container {
    json manifest;
    std::string blob;
};

/// Reads and validates a container. `format` and `version` must match the
/// manifest; blob length and hash are checked.
inline Container read_container(const std::filesystem::path& path, std::string_view format, int version)
{
    Container c;
    try {
        c.manifest = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        fail(ErrorKind::FormatVersionMismatch, "manifest '" + path.string() + "' is not valid JSON: " + e.what());
    }
    const auto& m = c.manifest;
    if (!m.contains("format") || m["format"] != format)
        fail(ErrorKind::FormatVersionMismatch, "'" + path.string() + "' is not a " + std::string(format) + " manifest");
    if (!m.contains("format_version") || m["format_version"] != version)
        fail(ErrorKind::FormatVersionMismatch, "unsupported format_version in '" + path.string() + "'");
    if (!m.contains("blob"))
        fail(ErrorKind::CorruptBlob, "manifest has no blob section");
    const auto bin = path.parent_path() / m["blob"]["file"].get<std::string>();
    c.blob = read_text(bin);
    if (c.blob.size() != m["blob"]["bytes"].get<std::size_t>())
        fail(ErrorKind::CorruptBlob, "blob '" + bin.string() + "' has " + std::to_string(c.blob.size()) +
                                         " bytes, manifest declares " + std::to_string(m["blob"]["bytes"].get<std::size_t>()));
    if (hex64(hash_bytes(c.blob)) != m["blob"]["fnv1a64"].get<std::string>())
        fail(ErrorKind::CorruptBlob, "blob '" + bin.string() + "' hash mismatch");
    return c;
}

} // namespace lgmimo::io
