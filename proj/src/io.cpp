#include "fdseg/io.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fdseg {

namespace le {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

double get_f64(const std::uint8_t* p) { return std::bit_cast<double>(get_u64(p)); }

}  // namespace le

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorKind::kOpenFailed, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(IoErrorKind::kOpenFailed, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(IoErrorKind::kOpenFailed, "write failed for " + path.string());
}

namespace {

class HeaderReader {
 public:
  HeaderReader(const std::vector<std::uint8_t>& bytes, const std::string& name)
      : bytes_(bytes), name_(name) {}

  long next_int() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_]))
      throw IoError(IoErrorKind::kMalformedHeader, name_ + ": malformed PGM header");
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > 1'000'000'000) throw IoError(IoErrorKind::kMalformedHeader, name_ + ": header value too large");
    }
    return v;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t payload_start() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_]))
      throw IoError(IoErrorKind::kMalformedHeader, name_ + ": missing separator before raster");
    return pos_ + 1;
  }

  void skip(std::size_t n) { pos_ += n; }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace

Grid<std::uint8_t> read_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::string name = path.string();
  if (bytes.size() < 2 || bytes[0] != 'P')
    throw IoError(IoErrorKind::kWrongMagic, name + ": not a PNM file");
  if (bytes[1] != '5') {
    if (bytes[1] >= '1' && bytes[1] <= '7')
      throw IoError(IoErrorKind::kUnsupportedFormat,
                    name + ": only binary PGM (P5) is supported, got P" + static_cast<char>(bytes[1]));
    throw IoError(IoErrorKind::kWrongMagic, name + ": not a PNM file");
  }
  HeaderReader header(bytes, name);
  header.skip(2);
  const long w = header.next_int();
  const long h = header.next_int();
  const long maxval = header.next_int();
  if (w <= 0 || h <= 0) throw IoError(IoErrorKind::kMalformedHeader, name + ": zero image dimension");
  if (maxval != 255)
    throw IoError(IoErrorKind::kUnsupportedDepth, name + ": maxval " + std::to_string(maxval) + " unsupported (need 255)");
  const std::size_t start = header.payload_start();
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() < start + need)
    throw IoError(IoErrorKind::kTruncatedPayload, name + ": truncated raster");
  Grid<std::uint8_t> out(h, w);
  std::memcpy(out.data(), bytes.data() + start, need);
  return out;
}

void write_pgm(const std::filesystem::path& path, const Grid<std::uint8_t>& pixels) {
  const std::string header = "P5\n" + std::to_string(pixels.cols()) + " " +
                             std::to_string(pixels.rows()) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), pixels.data(), pixels.data() + pixels.size());
  write_file(path, bytes);
}

ScalarGrid load_grayscale(const std::filesystem::path& path) {
  return read_pgm(path).cast<double>() / 255.0;
}

BinaryMask load_mask(const std::filesystem::path& path) {
  return (read_pgm(path) > 127).cast<std::uint8_t>();
}

Grid<std::uint8_t> to_bytes(const ScalarGrid& unit) {
  return (unit * 255.0).round().max(0.0).min(255.0).cast<std::uint8_t>();
}

void save_grayscale(const std::filesystem::path& path, const ScalarGrid& unit) {
  write_pgm(path, to_bytes(unit));
}

void save_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  write_pgm(path, (mask * 255).cast<std::uint8_t>());
}

std::vector<std::uint8_t> encode_fdm(const ScalarGrid& grid) {
  std::vector<std::uint8_t> out{'F', 'D', 'M', '1'};
  out.reserve(12 + 8 * static_cast<std::size_t>(grid.size()));
  le::put_u32(out, static_cast<std::uint32_t>(grid.rows()));
  le::put_u32(out, static_cast<std::uint32_t>(grid.cols()));
  for (Index i = 0; i < grid.size(); ++i) le::put_f64(out, grid.data()[i]);
  return out;
}

ScalarGrid decode_fdm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "FDM1", 4) != 0)
    throw IoError(IoErrorKind::kWrongMagic, "not an FDM1 grid");
  const std::uint32_t h = le::get_u32(bytes.data() + 4);
  const std::uint32_t w = le::get_u32(bytes.data() + 8);
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (h == 0 || w == 0) throw IoError(IoErrorKind::kMalformedHeader, "FDM1: zero dimension");
  if (bytes.size() != 12 + 8 * n) throw IoError(IoErrorKind::kTruncatedPayload, "FDM1: payload size mismatch");
  ScalarGrid out(h, w);
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = le::get_f64(bytes.data() + 12 + 8 * i);
  return out;
}

void write_fdm(const std::filesystem::path& path, const ScalarGrid& grid) {
  write_file(path, encode_fdm(grid));
}

ScalarGrid read_fdm(const std::filesystem::path& path) { return decode_fdm(read_file(path)); }

}  // namespace fdseg
