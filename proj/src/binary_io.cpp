#include "cvxrom/binary_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "cvxrom/errors.hpp"

namespace cvxrom::io {

namespace {

constexpr std::array<char, 4> kMagic{'C', 'V', 'X', 'R'};

// Everything on disk is little-endian.
template <typename T>
void to_le(T& v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto* b = reinterpret_cast<unsigned char*>(&v);
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    }
}

std::string normalize_kind(std::string_view kind) {
    std::string k(kind.substr(0, 4));
    k.resize(4, ' ');
    return k;
}

} // namespace

BinaryWriter::BinaryWriter(std::ostream& out, std::string_view kind) : out_(out) {
    raw(kMagic.data(), kMagic.size());
    u8(kFormatVersion);
    const std::string k = normalize_kind(kind);
    raw(k.data(), 4);
}

void BinaryWriter::raw(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) throw Error("write failed");
}

void BinaryWriter::u8(std::uint8_t v) { raw(&v, 1); }
void BinaryWriter::u32(std::uint32_t v) { to_le(v); raw(&v, 4); }
void BinaryWriter::u64(std::uint64_t v) { to_le(v); raw(&v, 8); }
void BinaryWriter::f64(double v) { to_le(v); raw(&v, 8); }

void BinaryWriter::string(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
}

void BinaryWriter::json(const nlohmann::json& j) { string(j.dump()); }

void BinaryWriter::matrix(const Mat& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    u8(0);
    for (Index c = 0; c < m.cols(); ++c)
        for (Index r = 0; r < m.rows(); ++r) f64(m(r, c));
}

void BinaryWriter::vector(const Vec& v) { matrix(Mat(v)); }

void BinaryWriter::indices(const std::vector<int>& v) {
    u64(v.size());
    for (int i : v) u32(static_cast<std::uint32_t>(i));
}

BinaryReader::BinaryReader(std::istream& in, std::string_view expected_kind) : in_(in) {
    std::array<char, 4> magic{};
    raw(magic.data(), 4);
    if (magic != kMagic) throw ParseError("not a native binary file (bad magic)");
    version_ = u8();
    if (version_ == 0 || version_ > kFormatVersion)
        throw ParseError("unsupported format version " + std::to_string(version_));
    std::string kind(4, ' ');
    raw(kind.data(), 4);
    if (kind != normalize_kind(expected_kind))
        throw ParseError("expected a '" + std::string(expected_kind) + "' file, found '" + kind + "'");
}

void BinaryReader::raw(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n)) throw ParseError("unexpected end of file");
}

std::uint8_t BinaryReader::u8() { std::uint8_t v; raw(&v, 1); return v; }
std::uint32_t BinaryReader::u32() { std::uint32_t v; raw(&v, 4); to_le(v); return v; }
std::uint64_t BinaryReader::u64() { std::uint64_t v; raw(&v, 8); to_le(v); return v; }
double BinaryReader::f64() { double v; raw(&v, 8); to_le(v); return v; }

std::string BinaryReader::string() {
    const auto n = u32();
    if (n > (1u << 30)) throw ParseError("string length out of range");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
}

nlohmann::json BinaryReader::json() {
    try {
        return nlohmann::json::parse(string());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad metadata blob: ") + e.what());
    }
}

Mat BinaryReader::matrix() {
    const auto rows = u64();
    const auto cols = u64();
    if (u8() != 0) throw ParseError("unsupported matrix dtype");
    if (rows > (1ull << 32) || cols > (1ull << 32) || rows * cols > (1ull << 34))
        throw ParseError("matrix dimensions out of range");
    Mat m(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index c = 0; c < m.cols(); ++c)
        for (Index r = 0; r < m.rows(); ++r) m(r, c) = f64();
    return m;
}

Vec BinaryReader::vector() {
    Mat m = matrix();
    if (m.cols() != 1 && m.size() != 0) throw ParseError("expected a column vector");
    return Eigen::Map<Vec>(m.data(), m.rows());
}

std::vector<int> BinaryReader::indices() {
    const auto n = u64();
    if (n > (1ull << 32)) throw ParseError("index list out of range");
    std::vector<int> v(n);
    for (auto& i : v) i = static_cast<int>(u32());
    return v;
}

std::string peek_kind(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::array<char, 9> head{};
    in.read(head.data(), 9);
    if (in.gcount() != 9 || !std::equal(kMagic.begin(), kMagic.end(), head.begin())) return {};
    return std::string(head.data() + 5, 4);
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace cvxrom::io
