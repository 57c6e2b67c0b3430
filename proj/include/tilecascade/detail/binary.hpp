#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tilecascade/error.hpp"

namespace tilecascade::detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

// Little-endian byte sink used by the SCNR and CNNC writers.
class ByteWriter {
public:
    void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }

    void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }

    void u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i) {
            bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
        }
    }

    void u64(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i) {
            bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
        }
    }

    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

    void f32s(std::span<const float> values)
    {
        bytes_.reserve(bytes_.size() + values.size() * 4);
        for (float v : values) {
            f32(v);
        }
    }

    void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

    const std::string& bytes() const noexcept { return bytes_; }

private:
    std::string bytes_;
};

// Bounds-checked little-endian reader. Running off the end is a
// CorruptionError: the file was truncated.
class ByteReader {
public:
    ByteReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

    std::string_view take(std::size_t n)
    {
        if (n > data_.size() - pos_) {
            throw CorruptionError(what_ + ": truncated (needed " + std::to_string(n) + " bytes at offset "
                                  + std::to_string(pos_) + ", file has " + std::to_string(data_.size()) + ")");
        }
        auto out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }

    std::uint32_t u32()
    {
        auto s = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
        }
        return v;
    }

    std::uint64_t u64()
    {
        auto s = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
        }
        return v;
    }

    float f32() { return std::bit_cast<float>(u32()); }

    std::size_t remaining() const noexcept { return data_.size() - pos_; }
    std::size_t offset() const noexcept { return pos_; }

private:
    std::string_view data_;
    std::size_t pos_ = 0;
    std::string what_;
};

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw IoError("read failed: " + path.string());
    }
    return data;
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

}  // namespace tilecascade::detail
