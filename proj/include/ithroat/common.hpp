#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace ithroat {

// Error codes shared by all modules. Operations throw `Error` with the
// code named in their contract; callers (CLI, bindings) map codes to
// exit codes / python exceptions.
enum class Errc {
    invalid_argument,
    empty_input,
    channel_not_found,
    invalid_annotations,
    shape_error,
    not_in_vocabulary,
    too_short,
    format_error,
    corrupt_file,
    config_error,
    divergence_error,
    invalid_label,
    insufficient_data,
    budget_error,
    offline_error,
    transport_error,
    protocol_error,
    empty_reference,
    length_mismatch,
    unsupported_model,
    io_error,
};

const char* errc_name(Errc c);

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& msg)
        : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}
    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, Errc code, const std::string& msg) {
    if (!cond) fail(code, msg);
}

// ---------------------------------------------------------------------------
// Deterministic RNG. xoshiro256++ seeded via splitmix64; identical streams on
// every platform (we never use <random> distributions, which are
// implementation-defined).

std::uint64_t splitmix64(std::uint64_t& state);

class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    // [0, 1) with 53 bits
    double uniform01();
    double uniform(double lo, double hi);
    // Box-Muller; consumes exactly two draws per call
    double normal(double mean, double stddev);
    // [0, n)
    std::uint64_t below(std::uint64_t n);

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t s_[4];
};

// Stable derivation of per-item seeds from a master seed; generation order
// of items never changes the streams they see.
std::uint64_t mix_seed(std::uint64_t master, std::uint64_t index);

// ---------------------------------------------------------------------------
// CRC32 (IEEE, reflected, poly 0xEDB88320), as used by the .itss/.itds/.itnn
// file footers.
std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t crc = 0);

// ---------------------------------------------------------------------------
// Little-endian binary buffers for the file formats.

class ByteWriter {
public:
    void u8(std::uint8_t v);
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void bytes(const void* p, std::size_t n);
    void str(const std::string& s);  // raw bytes, no length prefix

    const std::vector<std::uint8_t>& buffer() const { return buf_; }
    std::size_t size() const { return buf_.size(); }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<std::uint8_t> data) : buf_(std::move(data)) {}

    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    void bytes(void* out, std::size_t n);
    std::string str(std::size_t n);
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }
    const std::vector<std::uint8_t>& buffer() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& data);

}  // namespace ithroat
