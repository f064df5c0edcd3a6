#include "spcg/entropy.h"

#include "spcg/byte_io.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace spcg {

namespace {

constexpr uint32_t kTop = 1u << 24;
constexpr int kPadBytes = 4;
constexpr double kLn2 = 0.6931471805599453;

uint32_t scaled(uint32_t range, uint32_t bound)
{
  return uint32_t((uint64_t(range) * bound) >> kProbBits);
}

}  // namespace

double clamp_probability(double p)
{
  if (std::isnan(p))
    throw std::invalid_argument("probability is NaN");
  return std::clamp(p, kProbClamp, 1.0 - kProbClamp);
}

uint32_t quantize_probability(double p)
{
  const double q = std::round(clamp_probability(p) * double(kProbOne));
  return uint32_t(std::clamp(q, 1.0, double(kProbOne - 1)));
}

// ---------------------------------------------------------------------------

void RangeEncoder::shift_low()
{
  if (uint32_t(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const uint8_t carry = uint8_t(low_ >> 32);
    uint8_t temp = cache_;
    do {
      if (skip_first_)
        skip_first_ = false;
      else
        out_.push_back(uint8_t(temp + carry));
      temp = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = uint8_t(uint32_t(low_) >> 24);
  }
  ++cache_size_;
  low_ = uint64_t(uint32_t(low_) << 8);
}

void RangeEncoder::encode_interval(uint32_t lo, uint32_t hi)
{
  if (lo >= hi || hi > kProbOne)
    throw std::invalid_argument("range coder: empty or invalid interval");
  const uint32_t a = scaled(range_, lo);
  const uint32_t b = hi == kProbOne ? range_ : scaled(range_, hi);
  low_ += a;
  range_ = b - a;
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

void RangeEncoder::encode_bit(bool bit, uint32_t p1)
{
  if (p1 == 0 || p1 >= kProbOne)
    throw std::invalid_argument("range coder: probability outside (0,1)");
  if (bit)
    encode_interval(0, p1);
  else
    encode_interval(p1, kProbOne);
}

void RangeEncoder::encode_bypass(uint32_t value, int bits)
{
  for (int i = bits - 1; i >= 0; --i)
    encode_bit((value >> i) & 1u, kProbOne / 2);
}

std::vector<uint8_t> RangeEncoder::finish()
{
  // Settle on the value in [low, low + range) with the most trailing zero
  // bits; the decoder supplies up to kPadBytes zero bytes past the end.
  for (int k = 32; k > 0; --k) {
    const uint64_t mask = (uint64_t(1) << k) - 1;
    const uint64_t v = (low_ + mask) & ~mask;
    if (v < low_ + range_) {
      low_ = v;
      break;
    }
  }
  for (int i = 0; i < 5; ++i)
    shift_low();
  for (int i = 0; i < kPadBytes && !out_.empty() && out_.back() == 0; ++i)
    out_.pop_back();
  return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const uint8_t> payload) : data_(payload)
{
  for (int i = 0; i < 4; ++i)
    code_ = (code_ << 8) | next_byte();
}

uint8_t RangeDecoder::next_byte()
{
  if (pos_ >= data_.size() + kPadBytes)
    throw FormatError("truncated arithmetic-coded payload");
  return pos_ < data_.size() ? data_[pos_++] : (++pos_, uint8_t(0));
}

void RangeDecoder::normalize()
{
  while (range_ < kTop) {
    range_ <<= 8;
    code_ = (code_ << 8) | next_byte();
  }
}

void RangeDecoder::consume(uint32_t lo_scaled, uint32_t hi_scaled)
{
  code_ -= lo_scaled;
  range_ = hi_scaled - lo_scaled;
  normalize();
}

bool RangeDecoder::decode_bit(uint32_t p1)
{
  if (p1 == 0 || p1 >= kProbOne)
    throw std::invalid_argument("range coder: probability outside (0,1)");
  const uint32_t bound = scaled(range_, p1);
  if (code_ < bound) {
    consume(0, bound);
    return true;
  }
  consume(bound, range_);
  return false;
}

size_t RangeDecoder::decode_symbol(std::span<const uint32_t> cum)
{
  // Largest s with scaled(cum[s]) <= code.
  size_t lo = 0;
  size_t hi = cum.size() - 1;
  while (hi - lo > 1) {
    const size_t mid = (lo + hi) / 2;
    if (scaled(range_, cum[mid]) <= code_)
      lo = mid;
    else
      hi = mid;
  }
  const uint32_t a = scaled(range_, cum[lo]);
  const uint32_t b = cum[lo + 1] == kProbOne ? range_ : scaled(range_, cum[lo + 1]);
  if (code_ >= b)
    throw FormatError("corrupt arithmetic-coded payload");
  consume(a, b);
  return lo;
}

uint32_t RangeDecoder::decode_bypass(int bits)
{
  uint32_t v = 0;
  for (int i = 0; i < bits; ++i)
    v = (v << 1) | (decode_bit(kProbOne / 2) ? 1u : 0u);
  return v;
}

// ---------------------------------------------------------------------------

double ideal_bits(const BinarySymbolStream& stream)
{
  if (stream.symbols.size() != stream.probs.size())
    throw std::invalid_argument("symbol and probability counts differ");
  double bits = 0.0;
  for (size_t j = 0; j < stream.symbols.size(); ++j) {
    const double p = clamp_probability(stream.probs[j]);
    bits -= std::log2(stream.symbols[j] ? p : 1.0 - p);
  }
  return bits;
}

std::vector<uint8_t> ac_encode(const BinarySymbolStream& stream)
{
  if (stream.symbols.size() != stream.probs.size())
    throw std::invalid_argument("symbol and probability counts differ");
  RangeEncoder enc;
  for (size_t j = 0; j < stream.symbols.size(); ++j)
    enc.encode_bit(stream.symbols[j] != 0, quantize_probability(stream.probs[j]));
  return enc.finish();
}

std::vector<uint8_t> ac_decode(std::span<const uint8_t> payload,
                               const std::function<double(size_t)>& prob,
                               size_t count)
{
  RangeDecoder dec(payload);
  std::vector<uint8_t> bits(count);
  for (size_t j = 0; j < count; ++j)
    bits[j] = dec.decode_bit(quantize_probability(prob(j))) ? 1 : 0;
  return bits;
}

// ---------------------------------------------------------------------------

double laplace_mass(double q, double b)
{
  if (!(b > 0))
    throw std::invalid_argument("Laplace scale must be positive");
  const double t = std::abs(q);
  const double a = t - 0.5;
  const double c = t + 0.5;
  if (a >= 0)
    return 0.5 * std::exp(-a / b) * -std::expm1(-1.0 / b);
  return 1.0 - 0.5 * (std::exp(a / b) + std::exp(-c / b));
}

double factorized_rate(double q, double b)
{
  return factorized_rate_gradient(q, b).rate;
}

RateGradient factorized_rate_gradient(double q, double b)
{
  if (!(b > 0))
    throw std::invalid_argument("Laplace scale must be positive");
  const double t = std::abs(q);
  const double sign = q < 0 ? -1.0 : 1.0;
  const double a = t - 0.5;
  const double c = t + 0.5;
  RateGradient g{};
  if (a >= 0) {
    const double e = std::exp(-1.0 / b);
    const double tail = -std::expm1(-1.0 / b);
    g.rate = 1.0 + a / (b * kLn2) - std::log2(tail);
    g.d_q = sign / (b * kLn2);
    g.d_b = -a / (b * b * kLn2) + e / (b * b * tail * kLn2);
  } else {
    const double ea = std::exp(a / b);
    const double ec = std::exp(-c / b);
    const double mass = 1.0 - 0.5 * (ea + ec);
    const double dmass_dt = 0.5 / b * (ec - ea);
    const double dmass_db = 0.5 / (b * b) * (a * ea - c * ec);
    g.rate = -std::log2(mass);
    g.d_q = sign * -dmass_dt / (mass * kLn2);
    g.d_b = -dmass_db / (mass * kLn2);
  }
  return g;
}

FactorizedModel::FactorizedModel(std::vector<double> scales)
  : scales_(std::move(scales))
{
  for (double b : scales_) {
    if (!(b > 0) || !std::isfinite(b))
      throw std::invalid_argument("Laplace scale must be positive and finite");
    Table t;
    t.support = int32_t(std::clamp(std::ceil(12.0 * b), 8.0, 8192.0));
    const size_t n = size_t(2 * t.support + 2);
    const double budget = double(kProbOne - n);
    std::vector<uint32_t> freq(n);
    uint64_t total = 0;
    for (int32_t v = -t.support; v <= t.support; ++v) {
      const size_t i = size_t(v + t.support);
      freq[i] = 1 + uint32_t(std::floor(laplace_mass(double(v), b) * budget));
      total += freq[i];
    }
    const double escape = std::exp(-(double(t.support) + 0.5) / b);
    freq[n - 1] = 1 + uint32_t(std::floor(escape * budget));
    total += freq[n - 1];
    if (total > kProbOne)
      throw std::logic_error("factorized frequency table overflow");
    freq[size_t(t.support)] += uint32_t(kProbOne - total);
    t.cum.resize(n + 1);
    t.cum[0] = 0;
    for (size_t i = 0; i < n; ++i)
      t.cum[i + 1] = t.cum[i] + freq[i];
    tables_.push_back(std::move(t));
  }
}

FactorizedModel FactorizedModel::from_log_scales(std::span<const double> log_scales)
{
  std::vector<double> b;
  b.reserve(log_scales.size());
  for (double s : log_scales)
    b.push_back(std::exp(std::clamp(s, kMinLogScale, kMaxLogScale)));
  return FactorizedModel(std::move(b));
}

namespace {

// Exp-Golomb order 0 split into (prefix length, value).
int eg0_length(uint32_t v)
{
  int n = 0;
  while ((uint64_t(v) + 1) >> (n + 1))
    ++n;
  return n;
}

}  // namespace

double FactorizedModel::cost_bits(int32_t q, size_t c) const
{
  const auto& t = tables_[c];
  const int32_t L = t.support;
  auto table_bits = [&](size_t i) {
    return -std::log2(double(t.cum[i + 1] - t.cum[i]) / double(kProbOne));
  };
  if (q >= -L && q <= L)
    return table_bits(size_t(q + L));
  const uint32_t mag = uint32_t(std::abs(int64_t(q)) - L - 1);
  return table_bits(size_t(2 * L + 1)) + 1.0 + double(2 * eg0_length(mag) + 1);
}

std::vector<uint8_t> factorized_encode(std::span<const int32_t> values,
                                       const FactorizedModel& model)
{
  if (model.channels() == 0)
    throw std::invalid_argument("factorized model without channels");
  RangeEncoder enc;
  for (size_t i = 0; i < values.size(); ++i) {
    const size_t c = i % model.channels();
    const int32_t L = model.support(c);
    const auto cum = model.cdf(c);
    const int32_t q = values[i];
    if (q >= -L && q <= L) {
      const size_t s = size_t(q + L);
      enc.encode_interval(cum[s], cum[s + 1]);
      continue;
    }
    const size_t esc = cum.size() - 2;
    enc.encode_interval(cum[esc], cum[esc + 1]);
    enc.encode_bypass(q < 0 ? 1 : 0, 1);
    const uint32_t mag = uint32_t(std::abs(int64_t(q)) - L - 1);
    const int n = eg0_length(mag);
    for (int k = 0; k < n; ++k)
      enc.encode_bypass(1, 1);
    enc.encode_bypass(0, 1);
    enc.encode_bypass(uint32_t(uint64_t(mag) + 1 - (uint64_t(1) << n)), n);
  }
  return enc.finish();
}

std::vector<int32_t> factorized_decode(std::span<const uint8_t> payload,
                                       const FactorizedModel& model,
                                       size_t count)
{
  if (model.channels() == 0)
    throw std::invalid_argument("factorized model without channels");
  RangeDecoder dec(payload);
  std::vector<int32_t> out(count);
  for (size_t i = 0; i < count; ++i) {
    const size_t c = i % model.channels();
    const int32_t L = model.support(c);
    const auto cum = model.cdf(c);
    const size_t s = dec.decode_symbol(cum);
    if (s + 2 < cum.size()) {
      out[i] = int32_t(s) - L;
      continue;
    }
    const bool negative = dec.decode_bypass(1) != 0;
    int n = 0;
    while (dec.decode_bypass(1) != 0) {
      if (++n > 31)
        throw FormatError("corrupt escape code");
    }
    const uint64_t mag = (uint64_t(1) << n) + dec.decode_bypass(n) - 1;
    const int64_t v = int64_t(mag) + L + 1;
    if (v > INT32_MAX)
      throw FormatError("corrupt escape code");
    out[i] = int32_t(negative ? -v : v);
  }
  return out;
}

double factorized_ideal_bits(std::span<const int32_t> values,
                             const FactorizedModel& model)
{
  double bits = 0.0;
  for (size_t i = 0; i < values.size(); ++i)
    bits += model.cost_bits(values[i], i % model.channels());
  return bits;
}

}  // namespace spcg
