#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "resetedit/tensor.hpp"

namespace resetedit::io {

enum class DType : std::uint8_t { float32 = 0, uint8 = 1 };

/// Decoded tensor file: float payloads land in `floats`, byte payloads in `bytes`.
struct TensorRecord {
    DType dtype = DType::float32;
    Shape shape;
    std::vector<float> floats;
    std::vector<std::uint8_t> bytes;
};

// Byte layout: "RSTE", version u8 (=1), dtype u8, rank u8, rank x u32 LE dims,
// row-major little-endian payload.
std::vector<std::uint8_t> encode_tensor(const Tensor& t);
std::vector<std::uint8_t> encode_bytes(const Shape& shape, std::span<const std::uint8_t> data);
TensorRecord decode_tensor(std::span<const std::uint8_t> blob);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
void save_bytes(const std::filesystem::path& path, const Shape& shape, std::span<const std::uint8_t> data);
// Reads a float32 file; FormatError on any malformed or non-float input.
Tensor load_tensor(const std::filesystem::path& path);
TensorRecord load_record(const std::filesystem::path& path);

// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> data);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

std::string sha256_hex(std::span<const std::uint8_t> data);
std::string sha256_hex(const std::string& text);

// Binary PPM (P6) of a [3,H,W] image in [0,1], 8 bits per channel.
void save_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor load_ppm(const std::filesystem::path& path);

}  // namespace resetedit::io
