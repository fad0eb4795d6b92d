#pragma once

// File formats: binary PGM (P5, maxval 255) for images and masks, and the
// FDM1 float grid (4-byte magic "FDM1", uint32 height, uint32 width, then
// height*width little-endian IEEE-754 doubles in row-major order).

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdseg/grid.hpp"

namespace fdseg {

enum class IoErrorKind {
  kOpenFailed,
  kWrongMagic,
  kUnsupportedFormat,
  kMalformedHeader,
  kUnsupportedDepth,
  kTruncatedPayload,
};

class IoError : public std::runtime_error {
 public:
  IoError(IoErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  IoErrorKind kind() const { return kind_; }

 private:
  IoErrorKind kind_;
};

Grid<std::uint8_t> read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Grid<std::uint8_t>& pixels);

/// Gray image scaled to [0, 1] by 1/255.
ScalarGrid load_grayscale(const std::filesystem::path& path);

/// Pixels above 127 are foreground.
BinaryMask load_mask(const std::filesystem::path& path);

/// [0, 1] grid to 8-bit, rounded and clamped.
Grid<std::uint8_t> to_bytes(const ScalarGrid& unit);
void save_grayscale(const std::filesystem::path& path, const ScalarGrid& unit);
void save_mask(const std::filesystem::path& path, const BinaryMask& mask);

std::vector<std::uint8_t> encode_fdm(const ScalarGrid& grid);
ScalarGrid decode_fdm(const std::vector<std::uint8_t>& bytes);
void write_fdm(const std::filesystem::path& path, const ScalarGrid& grid);
ScalarGrid read_fdm(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

namespace le {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void put_f64(std::vector<std::uint8_t>& out, double v);
std::uint32_t get_u32(const std::uint8_t* p);
std::uint64_t get_u64(const std::uint8_t* p);
double get_f64(const std::uint8_t* p);

}  // namespace le

}  // namespace fdseg
