#include "ithroat/common.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

namespace ithroat {

const char* errc_name(Errc c) {
    switch (c) {
        case Errc::invalid_argument: return "invalid-argument";
        case Errc::empty_input: return "empty-input";
        case Errc::channel_not_found: return "channel-not-found";
        case Errc::invalid_annotations: return "invalid-annotations";
        case Errc::shape_error: return "shape-error";
        case Errc::not_in_vocabulary: return "not-in-vocabulary";
        case Errc::too_short: return "too-short";
        case Errc::format_error: return "format-error";
        case Errc::corrupt_file: return "corrupt-file";
        case Errc::config_error: return "config-error";
        case Errc::divergence_error: return "divergence-error";
        case Errc::invalid_label: return "invalid-label";
        case Errc::insufficient_data: return "insufficient-data";
        case Errc::budget_error: return "budget-error";
        case Errc::offline_error: return "offline-error";
        case Errc::transport_error: return "transport-error";
        case Errc::protocol_error: return "protocol-error";
        case Errc::empty_reference: return "empty-reference";
        case Errc::length_mismatch: return "length-mismatch";
        case Errc::unsupported_model: return "unsupported-model";
        case Errc::io_error: return "io-error";
    }
    return "unknown-error";
}

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& s : s_) s = splitmix64(sm);
}

static inline std::uint64_t rotl64(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl64(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl64(s_[3], 45);
    return result;
}

double Rng::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform01();
}

double Rng::normal(double mean, double stddev) {
    // u1 in (0,1] so log() stays finite
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = uniform01();
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    return mean + stddev * z;
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) fail(Errc::invalid_argument, "Rng::below(0)");
    // rejection sampling to keep the draw unbiased
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

std::uint64_t mix_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t state = master ^ (0xA0761D6478BD642FULL * (index + 1));
    std::uint64_t a = splitmix64(state);
    std::uint64_t b = splitmix64(state);
    return a ^ rotl64(b, 29);
}

// ---------------------------------------------------------------------------

static std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320U ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t crc) {
    static const auto table = make_crc_table();
    const auto* p = static_cast<const std::uint8_t*>(data);
    crc ^= 0xFFFFFFFFU;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xFF] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFU;
}

// ---------------------------------------------------------------------------

void ByteWriter::u8(std::uint8_t v) { buf_.push_back(v); }
void ByteWriter::u16(std::uint16_t v) {
    buf_.push_back(static_cast<std::uint8_t>(v));
    buf_.push_back(static_cast<std::uint8_t>(v >> 8));
}
void ByteWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void ByteWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void ByteWriter::f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
}
void ByteWriter::bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
}
void ByteWriter::str(const std::string& s) { bytes(s.data(), s.size()); }

std::uint8_t ByteReader::u8() {
    require(pos_ + 1 <= buf_.size(), Errc::corrupt_file, "truncated file");
    return buf_[pos_++];
}
std::uint16_t ByteReader::u16() {
    require(pos_ + 2 <= buf_.size(), Errc::corrupt_file, "truncated file");
    std::uint16_t v = static_cast<std::uint16_t>(buf_[pos_] | (buf_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
}
std::uint32_t ByteReader::u32() {
    require(pos_ + 4 <= buf_.size(), Errc::corrupt_file, "truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
}
std::uint64_t ByteReader::u64() {
    require(pos_ + 8 <= buf_.size(), Errc::corrupt_file, "truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
}
float ByteReader::f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}
void ByteReader::bytes(void* out, std::size_t n) {
    require(pos_ + n <= buf_.size(), Errc::corrupt_file, "truncated file");
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
}
std::string ByteReader::str(std::size_t n) {
    require(pos_ + n <= buf_.size(), Errc::corrupt_file, "truncated file");
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Errc::io_error, "cannot open " + path.string());
    in.seekg(0, std::ios::end);
    auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<std::uint8_t> data(size);
    if (size > 0) in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(size));
    require(in.good(), Errc::io_error, "cannot read " + path.string());
    return data;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), Errc::io_error, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    out.flush();
    require(out.good(), Errc::io_error, "cannot write " + path.string());
}

}  // namespace ithroat
