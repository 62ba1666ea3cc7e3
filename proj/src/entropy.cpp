#include "lsc/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include <zlib.h>

namespace lsc::ent {

namespace {

// Rational erfc approximation (Cody-style three-region scheme) evaluated in a
// fixed operation order, so tables depend only on IEEE double arithmetic and
// std::exp, not on libm's erf.
double erf_small(double x) {
  static const double a[5] = {3.16112374387056560e+00, 1.13864154151050156e+02,
                              3.77485237685302021e+02, 3.20937758913846947e+03,
                              1.85777706184603153e-01};
  static const double b[4] = {2.36012909523441209e+01, 2.44024637934444173e+02,
                              1.28261652607737228e+03, 2.84423683343917062e+03};
  const double z = x * x;
  double num = a[4] * z;
  double den = z;
  for (int i = 0; i < 3; ++i) {
    num = (num + a[i]) * z;
    den = (den + b[i]) * z;
  }
  return x * (num + a[3]) / (den + b[3]);
}

double exp_windowed(double y, double poly) {
  // exp(-y^2) split to preserve precision for large y, per Cody.
  const double ysq = std::floor(y * 16.0) / 16.0;
  const double del = (y - ysq) * (y + ysq);
  return std::exp(-ysq * ysq) * std::exp(-del) * poly;
}

double erfc_mid(double y) {
  static const double c[9] = {5.64188496988670089e-01, 8.88314979438837594e+00,
                              6.61191906371416295e+01, 2.98635138197400131e+02,
                              8.81952221241769090e+02, 1.71204761263407058e+03,
                              2.05107837782607147e+03, 1.23033935479799725e+03,
                              2.15311535474403846e-08};
  static const double d[8] = {1.57449261107098347e+01, 1.17693950891312499e+02,
                              5.37181101862009858e+02, 1.62138957456669019e+03,
                              3.29079923573345963e+03, 4.36261909014324716e+03,
                              3.43936767414372164e+03, 1.23033935480374942e+03};
  double num = c[8] * y;
  double den = y;
  for (int i = 0; i < 7; ++i) {
    num = (num + c[i]) * y;
    den = (den + d[i]) * y;
  }
  return exp_windowed(y, (num + c[7]) / (den + d[7]));
}

double erfc_large(double y) {
  static const double p[6] = {3.05326634961232344e-01, 3.60344899949804439e-01,
                              1.25781726111229246e-01, 1.60837851487422766e-02,
                              6.58749161529837803e-04, 1.63153871373020978e-02};
  static const double q[5] = {2.56852019228982242e+00, 1.87295284992346047e+00,
                              5.27905102951428412e-01, 6.05183413124413191e-02,
                              2.33520497626869185e-03};
  if (y >= 26.5) return 0.0;
  const double z = 1.0 / (y * y);
  double num = p[5] * z;
  double den = z;
  for (int i = 0; i < 4; ++i) {
    num = (num + p[i]) * z;
    den = (den + q[i]) * z;
  }
  double r = z * (num + p[4]) / (den + q[4]);
  r = (5.6418958354775628695e-01 - r) / y;
  return exp_windowed(y, r);
}

double erfc_pos(double y) {  // y >= 0
  if (y <= 0.46875) return 1.0 - erf_small(y);
  if (y <= 4.0) return erfc_mid(y);
  return erfc_large(y);
}

double my_erfc(double x) { return x < 0.0 ? 2.0 - erfc_pos(-x) : erfc_pos(x); }

constexpr uint32_t kTopValue = 1u << 24;
constexpr uint32_t kRawTotal = 256;

}  // namespace

double norm_cdf(double x) { return 0.5 * my_erfc(-x * 0.70710678118654752440); }

const double* sigma_grid() {
  // exp-spaced over [0.05, 64]; hex literals pin the exact doubles.
  static const double grid[kSigmaGridSize] = {
      0x1.999999999999bp-5, 0x1.cadc4e602ce90p-5, 0x1.0105d1e22a5f4p-4, 0x1.1feeffbd941e1p-4,
      0x1.428fdb6c75fafp-4, 0x1.695ad91703cb7p-4, 0x1.94d030ae7b9b6p-4, 0x1.c57f85b6f1e11p-4,
      0x1.fc09c208a60bfp-4, 0x1.1c9194d504806p-3, 0x1.3ecad7502b1c6p-3, 0x1.6521c63404c2bp-3,
      0x1.901519d9a8d45p-3, 0x1.c032c80af8ebbp-3, 0x1.f619d9379f5d7p-3, 0x1.193e3b0bf745fp-2,
      0x1.3b111a437b55dp-2, 0x1.60f555970c357p-2, 0x1.8b682a433647ap-2, 0x1.baf5e55d485c0p-2,
      0x1.f03bb38c9563ep-2, 0x1.15f4d44462725p-1, 0x1.376282891d16ep-1, 0x1.5cd561740d025p-1,
      0x1.86c9379365f1dp-1, 0x1.b5c8ae3e7dc02p-1, 0x1.ea6f1be3b8e3fp-1, 0x1.12b542ba56566p+0,
      0x1.33beeec8b72eap+0, 0x1.58c1c4700e190p+0, 0x1.823817f127524p+0, 0x1.b0aaf3cd204bdp+0,
      0x1.e4b3ddb835789p+0, 0x1.0f7f6902f0004p+1, 0x1.30263e0db2d0cp+1, 0x1.54ba599fd82e3p+1,
      0x1.7db4a2009c6e7p+1, 0x1.ab9c87b3f8482p+1, 0x1.df09c52255f25p+1, 0x1.0c532a0b4ed2fp+2,
      0x1.2c984fc611214p+2, 0x1.50befc86a7625p+2, 0x1.793eace1a3427p+2, 0x1.a69d3c286b778p+2,
      0x1.d9709ed5ae452p+2, 0x1.093069178d379p+3, 0x1.291503c1443d2p+3, 0x1.4ccf8914e0d23p+3,
      0x1.74d6102e63963p+3, 0x1.a1ace3e8de66ep+3, 0x1.d3e8381f4af9ap+3, 0x1.061709c1bc678p+4,
      0x1.259c3a2f0bb7fp+4, 0x1.48ebdba6cc029p+4, 0x1.707aa3f9e1206p+4, 0x1.9ccb523b1a8fep+4,
      0x1.ce705ee3e6045p+4, 0x1.0306eff8e33b5p+5, 0x1.222dd39e547c9p+5, 0x1.4513d103501dap+5,
      0x1.6c2c40ce91f38p+5, 0x1.97f85aeab94a6p+5, 0x1.c908e19e21026p+5, 0x1.0000000000002p+6,
  };
  return grid;
}

int snap_sigma(double sigma) {
  const double* g = sigma_grid();
  if (!(sigma > g[0])) return 0;
  if (sigma >= g[kSigmaGridSize - 1]) return kSigmaGridSize - 1;
  // Nearest in log scale: sigma belongs to i if sigma^2 <= g[i]*g[i+1].
  for (int i = 0; i < kSigmaGridSize - 1; ++i)
    if (sigma * sigma <= g[i] * g[i + 1]) return i;
  return kSigmaGridSize - 1;
}

CdfTable build_cdf(double sigma, int support_radius) {
  if (sigma < kSigmaFloor) sigma = kSigmaFloor;
  const int r = support_radius;
  const int nsym = 2 * r + 2;  // in-range symbols plus the tail escape
  std::vector<double> p(nsym);
  for (int k = -r; k <= r; ++k)
    p[k + r] = norm_cdf((k + 0.5) / sigma) - norm_cdf((k - 0.5) / sigma);
  double tail = norm_cdf((-r - 0.5) / sigma) + (1.0 - norm_cdf((r + 0.5) / sigma));
  p[nsym - 1] = std::max(tail, 0.0);
  const double total_p = std::accumulate(p.begin(), p.end(), 0.0);
  for (double& v : p) v /= total_p;

  const uint32_t budget = kCdfTotal - uint32_t(nsym);
  std::vector<uint32_t> counts(nsym);
  uint32_t assigned = 0;
  for (int i = 0; i < nsym; ++i) {
    counts[i] = uint32_t(std::floor(p[i] * budget)) + 1;
    assigned += counts[i];
  }
  std::vector<int> order(nsym);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return p[a] > p[b]; });
  int64_t remainder = int64_t(kCdfTotal) - int64_t(assigned);
  for (int j = 0; remainder > 0; j = (j + 1) % nsym, --remainder) counts[order[j]] += 1;
  for (int j = 0; remainder < 0; j = (j + 1) % nsym) {
    if (counts[order[j]] > 1) {
      counts[order[j]] -= 1;
      ++remainder;
    }
  }

  CdfTable t;
  t.symbol_offset = -r;
  t.cumulative.resize(nsym + 1);
  t.cumulative[0] = 0;
  for (int i = 0; i < nsym; ++i) t.cumulative[i + 1] = t.cumulative[i] + counts[i];
  return t;
}

const std::vector<CdfTable>& grid_tables() {
  static const std::vector<CdfTable> tables = [] {
    std::vector<CdfTable> v;
    v.reserve(kSigmaGridSize);
    for (int i = 0; i < kSigmaGridSize; ++i) v.push_back(build_cdf(sigma_grid()[i]));
    return v;
  }();
  return tables;
}

void RangeEncoder::shift_low() {
  if (uint32_t(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    uint8_t carry = uint8_t(low_ >> 32);
    uint8_t b = cache_;
    do {
      out_.push_back(uint8_t(b + carry));
      b = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = uint8_t(low_ >> 24);
  }
  ++cache_size_;
  // 32-bit shift: the byte moved into cache_ must not survive as a phantom
  // carry, so bits 24..31 are dropped rather than shifted into 32..39.
  low_ = uint32_t(uint32_t(low_) << 8);
}

void RangeEncoder::encode(uint32_t start, uint32_t size, uint32_t total) {
  range_ /= total;
  low_ += uint64_t(start) * range_;
  range_ *= size;
  while (range_ < kTopValue) {
    range_ <<= 8;
    shift_low();
  }
}

std::vector<uint8_t> RangeEncoder::finish() {
  for (int i = 0; i < 5; ++i) shift_low();
  return std::move(out_);
}

RangeDecoder::RangeDecoder(const uint8_t* data, size_t size) : data_(data), size_(size) {
  next_byte();  // leading byte emitted by the encoder's initial cache
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

uint8_t RangeDecoder::next_byte() {
  if (pos_ >= size_)
    throw StreamError(StreamError::Kind::truncated, "range decoder ran past end of payload");
  return data_[pos_++];
}

uint32_t RangeDecoder::decode_target(uint32_t total) {
  range_ /= total;
  const uint32_t v = code_ / range_;
  return v >= total ? total - 1 : v;
}

void RangeDecoder::consume(uint32_t start, uint32_t size) {
  code_ -= start * range_;
  range_ *= size;
  while (range_ < kTopValue) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
}

std::vector<uint8_t> encode_symbols(const std::vector<int32_t>& values,
                                    const std::vector<int>& table_index) {
  if (values.size() != table_index.size())
    throw Error("encode_symbols: values and table indices differ in length");
  const std::vector<CdfTable>& tables = grid_tables();
  RangeEncoder enc;
  for (size_t i = 0; i < values.size(); ++i) {
    const CdfTable& t = tables.at(size_t(table_index[i]));
    const int32_t v = values[i];
    if (v >= t.symbol_offset && v <= -t.symbol_offset) {
      const int s = int(v - t.symbol_offset);
      enc.encode(t.cumulative[s], t.cumulative[s + 1] - t.cumulative[s], kCdfTotal);
    } else {
      const int s = t.escape_index();
      enc.encode(t.cumulative[s], t.cumulative[s + 1] - t.cumulative[s], kCdfTotal);
      const uint32_t u = uint32_t(v);
      for (int b = 0; b < 4; ++b) enc.encode((u >> (8 * b)) & 0xFF, 1, kRawTotal);
    }
  }
  return enc.finish();
}

std::vector<int32_t> decode_symbols(const uint8_t* data, size_t size, size_t count,
                                    const std::vector<int>& table_index) {
  if (count != table_index.size())
    throw Error("decode_symbols: count and table indices differ in length");
  const std::vector<CdfTable>& tables = grid_tables();
  RangeDecoder dec(data, size);
  std::vector<int32_t> out(count);
  for (size_t i = 0; i < count; ++i) {
    const CdfTable& t = tables.at(size_t(table_index[i]));
    const uint32_t target = dec.decode_target(kCdfTotal);
    const auto it = std::upper_bound(t.cumulative.begin(), t.cumulative.end(), target);
    const int s = int(it - t.cumulative.begin()) - 1;
    dec.consume(t.cumulative[s], t.cumulative[s + 1] - t.cumulative[s]);
    if (s == t.escape_index()) {
      uint32_t u = 0;
      for (int b = 0; b < 4; ++b) {
        const uint32_t byte = dec.decode_target(kRawTotal);
        dec.consume(byte, 1);
        u |= byte << (8 * b);
      }
      out[i] = int32_t(u);
    } else {
      out[i] = int32_t(s + t.symbol_offset);
    }
  }
  return out;
}

namespace {
void put_u16(std::vector<uint8_t>& v, uint16_t x) {
  v.push_back(uint8_t(x));
  v.push_back(uint8_t(x >> 8));
}
void put_u32(std::vector<uint8_t>& v, uint32_t x) {
  for (int i = 0; i < 4; ++i) v.push_back(uint8_t(x >> (8 * i)));
}
uint16_t get_u16(const uint8_t* p) { return uint16_t(p[0] | (p[1] << 8)); }
uint32_t get_u32(const uint8_t* p) {
  return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) |
         (uint32_t(p[3]) << 24);
}
constexpr uint8_t kMagic[4] = {'L', 'S', 'C', '1'};

uint32_t payload_crc(const std::vector<uint8_t>& z, const std::vector<uint8_t>& y) {
  uLong crc = crc32(0L, Z_NULL, 0);
  if (!z.empty()) crc = crc32(crc, z.data(), uInt(z.size()));
  if (!y.empty()) crc = crc32(crc, y.data(), uInt(y.size()));
  return uint32_t(crc);
}
}  // namespace

std::vector<uint8_t> serialize(const BitstreamHeader& h, const std::vector<uint8_t>& z_payload,
                               const std::vector<uint8_t>& y_payload) {
  if (h.z_length != z_payload.size() || h.y_length != y_payload.size())
    throw Error("serialize: header segment lengths disagree with payload sizes");
  std::vector<uint8_t> out;
  out.reserve(kHeaderSize + z_payload.size() + y_payload.size() + kChecksumSize);
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(h.format_version);
  out.push_back(h.quality_index);
  put_u32(out, h.true_height);
  put_u32(out, h.true_width);
  put_u16(out, h.latent_channels);
  put_u16(out, h.hyper_channels);
  put_u32(out, h.z_length);
  put_u32(out, h.y_length);
  out.insert(out.end(), z_payload.begin(), z_payload.end());
  out.insert(out.end(), y_payload.begin(), y_payload.end());
  put_u32(out, payload_crc(z_payload, y_payload));
  return out;
}

ParsedStream parse(const uint8_t* data, size_t size) {
  if (size < kHeaderSize + kChecksumSize)
    throw StreamError(StreamError::Kind::truncated, "stream shorter than fixed header");
  if (std::memcmp(data, kMagic, 4) != 0)
    throw StreamError(StreamError::Kind::bad_magic, "stream magic mismatch");
  ParsedStream ps;
  BitstreamHeader& h = ps.header;
  h.format_version = data[4];
  if (h.format_version != 1)
    throw StreamError(StreamError::Kind::bad_version,
                      "unsupported format version " + std::to_string(h.format_version));
  h.quality_index = data[5];
  h.true_height = get_u32(data + 6);
  h.true_width = get_u32(data + 10);
  h.latent_channels = get_u16(data + 14);
  h.hyper_channels = get_u16(data + 16);
  h.z_length = get_u32(data + 18);
  h.y_length = get_u32(data + 22);
  const uint64_t expect = uint64_t(kHeaderSize) + h.z_length + h.y_length + kChecksumSize;
  if (size != expect)
    throw StreamError(StreamError::Kind::truncated,
                      "stream length " + std::to_string(size) + " != expected " +
                          std::to_string(expect));
  ps.z_payload.assign(data + kHeaderSize, data + kHeaderSize + h.z_length);
  ps.y_payload.assign(data + kHeaderSize + h.z_length,
                      data + kHeaderSize + h.z_length + h.y_length);
  const uint32_t stored = get_u32(data + size - 4);
  if (stored != payload_crc(ps.z_payload, ps.y_payload))
    throw StreamError(StreamError::Kind::bad_checksum, "payload checksum mismatch");
  return ps;
}

}  // namespace lsc::ent
