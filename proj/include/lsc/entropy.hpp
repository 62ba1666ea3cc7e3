#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lsc/common.hpp"

// Range coder and bitstream container. All arithmetic is exact-integer so
// encoder and decoder stay in lockstep; probability models are 16-bit
// quantized CDFs over a symmetric symbol support with an escape for outliers.
namespace lsc::ent {

inline constexpr int kCdfPrecision = 16;
inline constexpr uint32_t kCdfTotal = 1u << kCdfPrecision;
inline constexpr int kSupportRadius = 24;
inline constexpr double kSigmaFloor = 0.05;
inline constexpr double kSigmaCeil = 64.0;
inline constexpr int kSigmaGridSize = 64;

// Standard normal CDF via a fixed rational erf/erfc approximation, so CDF
// tables do not depend on libm's erf.
double norm_cdf(double x);

// Logarithmic sigma grid shared by encoder and decoder; values are compile
// time constants so both sides agree bit-exactly.
const double* sigma_grid();
// Index of the grid value nearest in log scale (geometric-midpoint rule).
int snap_sigma(double sigma);

struct CdfTable {
  int symbol_offset = -kSupportRadius;          // value of the first in-range symbol
  std::vector<uint32_t> cumulative;             // size = symbols + 1, last = 2^16
  int num_symbols() const { return int(cumulative.size()) - 1; }
  int escape_index() const { return num_symbols() - 1; }
};

// Interval probabilities of a zero-mean Gaussian over [-r, r] plus one tail
// symbol, quantized to 2^16 with every count >= 1; remainder goes to the
// largest-probability symbols first (ties to the lowest index).
CdfTable build_cdf(double sigma, int support_radius = kSupportRadius);

// Tables for every grid sigma, built once and shared.
const std::vector<CdfTable>& grid_tables();

class RangeEncoder {
 public:
  void encode(uint32_t start, uint32_t size, uint32_t total);
  std::vector<uint8_t> finish();

 private:
  void shift_low();
  uint64_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint8_t cache_ = 0;
  uint64_t cache_size_ = 1;
  std::vector<uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(const uint8_t* data, size_t size);
  // Returns the scaled cumulative frequency in [0, total); caller maps it to a
  // symbol and confirms with consume().
  uint32_t decode_target(uint32_t total);
  void consume(uint32_t start, uint32_t size);
  size_t bytes_read() const { return pos_; }

 private:
  uint8_t next_byte();
  const uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint32_t code_ = 0;
};

// Symbol-sequence coding: values[i] is coded with tables[table_index[i]] from
// grid_tables(). Out-of-support values use the escape symbol followed by the
// raw 32-bit two's-complement value as four uniform bytes.
std::vector<uint8_t> encode_symbols(const std::vector<int32_t>& values,
                                    const std::vector<int>& table_index);
std::vector<int32_t> decode_symbols(const uint8_t* data, size_t size, size_t count,
                                    const std::vector<int>& table_index);

struct BitstreamHeader {
  uint8_t format_version = 1;
  uint8_t quality_index = 0;
  uint32_t true_height = 0;
  uint32_t true_width = 0;
  uint16_t latent_channels = 0;
  uint16_t hyper_channels = 0;
  uint32_t z_length = 0;
  uint32_t y_length = 0;
};

inline constexpr size_t kHeaderSize = 26;  // magic(4)+ver+quality+h+w+ch(2x2)+len(2x4)
inline constexpr size_t kChecksumSize = 4;

// Header fields little-endian; a CRC-32 over both payloads trails the stream.
std::vector<uint8_t> serialize(const BitstreamHeader& h, const std::vector<uint8_t>& z_payload,
                               const std::vector<uint8_t>& y_payload);
struct ParsedStream {
  BitstreamHeader header;
  std::vector<uint8_t> z_payload;
  std::vector<uint8_t> y_payload;
};
ParsedStream parse(const uint8_t* data, size_t size);

}  // namespace lsc::ent
