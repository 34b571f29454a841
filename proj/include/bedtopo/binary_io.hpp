#pragma once

// Little-endian byte encoding shared by the BTG1 / BTF1 / BTCK containers.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bedtopo::io {

class ByteWriter {
public:
    void magic(std::string_view tag);
    void u8(std::uint8_t v);
    void u32(std::uint32_t v);
    void f64(double v);
    void bytes(std::string_view s);

    const std::vector<std::uint8_t>& data() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

// Reads from an in-memory buffer; every overrun raises TruncationError.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    // Throws FormatError if the next 4 bytes differ from `tag`.
    void expect_magic(std::string_view tag, std::string_view what);
    std::uint8_t u8();
    std::uint32_t u32();
    double f64();
    std::string bytes(std::size_t n);

    std::size_t remaining() const { return data_.size() - pos_; }
    // Throws TruncationError when unread bytes remain.
    void expect_end(std::string_view what) const;

private:
    void need(std::size_t n) const;

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);

}  // namespace bedtopo::io
