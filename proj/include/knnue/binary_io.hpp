#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "knnue/core.hpp"

namespace knnue::io {

// Little-endian binary writer. All multi-byte values go out LE regardless of host order.
class Writer {
public:
    explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        require(out_.good(), ErrorKind::io, "cannot open for writing: " + path);
    }

    void magic(const char (&tag)[5]) { out_.write(tag, 4); }

    template <typename T>
        requires std::is_arithmetic_v<T>
    void scalar(T value) {
        std::array<unsigned char, sizeof(T)> bytes;
        std::memcpy(bytes.data(), &value, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
        out_.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    void array(std::span<const T> values) {
        if constexpr (std::endian::native == std::endian::little) {
            out_.write(reinterpret_cast<const char*>(values.data()),
                       static_cast<std::streamsize>(values.size_bytes()));
        } else {
            for (T v : values) scalar(v);
        }
    }

    void finish() {
        out_.flush();
        require(out_.good(), ErrorKind::io, "write failed: " + path_);
    }

private:
    std::string path_;
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        require(in_.good(), ErrorKind::io, "cannot open for reading: " + path);
        in_.seekg(0, std::ios::end);
        size_ = static_cast<std::uint64_t>(in_.tellg());
        in_.seekg(0, std::ios::beg);
    }

    void expect_magic(const char (&tag)[5]) {
        char got[4] = {};
        raw(got, 4);
        require(std::memcmp(got, tag, 4) == 0, ErrorKind::bad_magic,
                path_ + ": expected '" + std::string(tag, 4) + "'");
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    T scalar() {
        std::array<unsigned char, sizeof(T)> bytes;
        raw(reinterpret_cast<char*>(bytes.data()), sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
        T value;
        std::memcpy(&value, bytes.data(), sizeof(T));
        return value;
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    std::vector<T> array(std::uint64_t count) {
        // Check before allocating so a corrupt header cannot request a huge buffer.
        require(count <= remaining() / sizeof(T), ErrorKind::truncated,
                path_ + ": needs " + std::to_string(count * sizeof(T)) + " bytes, " +
                    std::to_string(remaining()) + " left");
        std::vector<T> values(count);
        if constexpr (std::endian::native == std::endian::little) {
            raw(reinterpret_cast<char*>(values.data()), count * sizeof(T));
        } else {
            for (auto& v : values) v = scalar<T>();
        }
        return values;
    }

    /// rows * cols, failing as truncated when the product overflows (a corrupt header).
    std::uint64_t count(std::uint64_t rows, std::uint64_t cols) const {
        require(cols == 0 || rows <= std::numeric_limits<std::uint64_t>::max() / cols, ErrorKind::truncated,
                path_ + ": header sizes overflow");
        return rows * cols;
    }

    std::uint64_t remaining() const { return size_ - offset_; }
    const std::string& path() const { return path_; }

private:
    void raw(char* dst, std::uint64_t n) {
        require(n <= remaining(), ErrorKind::truncated, path_ + ": unexpected end of file");
        in_.read(dst, static_cast<std::streamsize>(n));
        require(in_.good(), ErrorKind::io, path_ + ": read failed");
        offset_ += n;
    }

    std::string path_;
    std::ifstream in_;
    std::uint64_t size_ = 0;
    std::uint64_t offset_ = 0;
};

}  // namespace knnue::io
