#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace spcg {

// Probabilities reaching the coder are clamped to [kProbClamp, 1-kProbClamp]
// and then quantised to kProbBits bits. The clamp is the smallest
// representable probability, so the extremes are coded exactly.
inline constexpr int kProbBits = 16;
inline constexpr uint32_t kProbOne = 1u << kProbBits;
inline constexpr double kProbClamp = 1.0 / double(kProbOne);

double clamp_probability(double p);
// Probability of symbol 1 as an integer in [1, kProbOne - 1].
uint32_t quantize_probability(double p);

// Carry-propagating range coder (32-bit range, byte-wise renormalisation)
// coding sub-intervals of a 2^16 total. The interval split multiplies the
// full range, so the only rounding is a floor per symbol.
class RangeEncoder {
public:
  // Codes [lo, hi) of [0, kProbOne).
  void encode_interval(uint32_t lo, uint32_t hi);
  // Symbol 1 owns [0, p1), symbol 0 owns [p1, kProbOne).
  void encode_bit(bool bit, uint32_t p1);
  void encode_bypass(uint32_t value, int bits);
  std::vector<uint8_t> finish();

private:
  void shift_low();

  uint64_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint8_t cache_ = 0;
  uint64_t cache_size_ = 1;
  bool skip_first_ = true;
  std::vector<uint8_t> out_;
};

class RangeDecoder {
public:
  explicit RangeDecoder(std::span<const uint8_t> payload);

  bool decode_bit(uint32_t p1);
  // `cum` holds n+1 increasing bounds with cum[0] = 0 and cum[n] = kProbOne.
  size_t decode_symbol(std::span<const uint32_t> cum);
  uint32_t decode_bypass(int bits);

  size_t consumed() const { return pos_; }

private:
  uint8_t next_byte();
  void consume(uint32_t lo_scaled, uint32_t hi_scaled);
  void normalize();

  std::span<const uint8_t> data_;
  size_t pos_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint32_t code_ = 0;
};

// Occupancy bits with their model probabilities P(bit = 1).
struct BinarySymbolStream {
  std::vector<uint8_t> symbols;
  std::vector<double> probs;
};

// Sum over j of -log2 q_j with q_j the (clamped) probability of the coded bit.
double ideal_bits(const BinarySymbolStream& stream);

std::vector<uint8_t> ac_encode(const BinarySymbolStream& stream);
std::vector<uint8_t> ac_decode(std::span<const uint8_t> payload,
                               const std::function<double(size_t)>& prob,
                               size_t count);

// ---------------------------------------------------------------------------
// Factorized (per-channel zero-mean Laplace) model for quantised features.

// Mass of the unit interval centred at q under Laplace(0, b).
double laplace_mass(double q, double b);
// -log2 laplace_mass(q, b); q may be non-integer (noisy training values).
double factorized_rate(double q, double b);

struct RateGradient {
  double rate;
  double d_q;
  double d_b;
};
RateGradient factorized_rate_gradient(double q, double b);

class FactorizedModel {
public:
  explicit FactorizedModel(std::vector<double> scales);
  // b_c = exp(s_c) with s_c clamped to [kMinLogScale, kMaxLogScale].
  static FactorizedModel from_log_scales(std::span<const double> log_scales);
  static constexpr double kMinLogScale = -7.0;
  static constexpr double kMaxLogScale = 8.0;

  size_t channels() const { return scales_.size(); }
  double scale(size_t c) const { return scales_[c]; }
  // Symbols in [-support, support] are modelled directly, others escape.
  int32_t support(size_t c) const { return tables_[c].support; }
  // Cumulative bounds over symbols -L..L followed by the escape symbol.
  std::span<const uint32_t> cdf(size_t c) const { return tables_[c].cum; }

  // Ideal cost of value q on channel c under the quantised table, including
  // escape costs.
  double cost_bits(int32_t q, size_t c) const;

private:
  struct Table {
    int32_t support;
    std::vector<uint32_t> cum;
  };
  std::vector<double> scales_;
  std::vector<Table> tables_;
};

// Values are laid out row-major: value i belongs to channel i % channels.
std::vector<uint8_t> factorized_encode(std::span<const int32_t> values,
                                       const FactorizedModel& model);
std::vector<int32_t> factorized_decode(std::span<const uint8_t> payload,
                                       const FactorizedModel& model,
                                       size_t count);
double factorized_ideal_bits(std::span<const int32_t> values,
                             const FactorizedModel& model);

}  // namespace spcg
