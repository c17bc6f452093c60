#pragma once

// Native little-endian binary container shared by meshes, snapshot sets,
// bases and network checkpoints.
//
// Layout: "CVXR" | u8 version | 4-byte kind tag | payload.
// Matrices are written as u64 rows, u64 cols, u8 dtype (0 = f64), then
// column-major values.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvxrom/types.hpp"

namespace cvxrom::io {

inline constexpr std::uint8_t kFormatVersion = 1;

class BinaryWriter {
public:
    BinaryWriter(std::ostream& out, std::string_view kind);

    void u8(std::uint8_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    void string(std::string_view s);
    void json(const nlohmann::json& j);
    void matrix(const Mat& m);
    void vector(const Vec& v);
    void indices(const std::vector<int>& v);

private:
    void raw(const void* data, std::size_t n);
    std::ostream& out_;
};

class BinaryReader {
public:
    /// Throws ParseError when the magic, version or kind tag does not match.
    BinaryReader(std::istream& in, std::string_view expected_kind);

    std::uint8_t version() const noexcept { return version_; }

    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    std::string string();
    nlohmann::json json();
    Mat matrix();
    Vec vector();
    std::vector<int> indices();

private:
    void raw(void* data, std::size_t n);
    std::istream& in_;
    std::uint8_t version_ = 0;
};

/// Peeks the 4-byte kind tag of a native file without consuming a reader.
std::string peek_kind(const std::string& path);

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed = 14695981039346656037ull);

} // namespace cvxrom::io
