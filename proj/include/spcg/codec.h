#pragma once

#include "spcg/byte_io.h"
#include "spcg/network.h"
#include "spcg/point_cloud.h"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace spcg {

enum class CodecMode : uint8_t { Lossless = 0, LossyDense = 1, LossySparse = 2 };

// SOPA used for the losslessly coded scales.
enum class LosslessArch : uint8_t {
  OneStage = 0,
  MultiStage3 = 1,
  MultiStage8 = 2,
  SlneOneStage = 3,
};

std::string_view mode_name(CodecMode mode);
std::optional<CodecMode> parse_mode(std::string_view name);
std::string_view lossless_arch_name(LosslessArch arch);
std::optional<LosslessArch> parse_lossless_arch(std::string_view name);

inline constexpr int kMaxPrecision = 18;
inline constexpr uint8_t kBitstreamVersion = 1;

struct CodecConfig {
  CodecMode mode = CodecMode::Lossless;
  int precision = 0;  // N
  int m = 0;          // last losslessly coded scale in lossy modes
  LosslessArch lossless_arch = LosslessArch::MultiStage8;

  // Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

class ModelMismatch : public std::runtime_error {
public:
  ModelMismatch() : std::runtime_error("model mismatch") {}
};

// Trained networks, at most one per architecture.
class ModelSet {
public:
  void add(NetworkParams net);
  const NetworkParams* find(ArchId arch) const;
  // Throws std::invalid_argument naming the missing architecture.
  const NetworkParams& get(ArchId arch) const;
  bool empty() const { return nets_.empty(); }

  // Architectures a configuration needs, in checksum order.
  static std::vector<ArchId> required(CodecMode mode, LosslessArch arch);
  // Combined checksum over the required models (arch, k, C, parameters).
  uint64_t checksum(CodecMode mode, LosslessArch arch) const;

private:
  std::map<ArchId, NetworkParams> nets_;
};

enum class ChunkKind : uint8_t { Occupancy = 0, Features = 1, Offsets = 2, Count = 3 };

struct Chunk {
  int scale = 0;
  ChunkKind kind = ChunkKind::Occupancy;
  std::optional<uint64_t> count;
  std::vector<uint8_t> payload;
};

struct BitstreamHeader {
  uint8_t version = kBitstreamVersion;
  CodecConfig cfg;
  uint64_t original_count = 0;
  uint64_t model_checksum = 0;
};

struct Bitstream {
  BitstreamHeader header;
  std::vector<Chunk> chunks;
};

std::vector<uint8_t> write_bitstream(const Bitstream& bs);
// Verifies the content checksum and the framing; throws FormatError.
Bitstream read_bitstream(std::span<const uint8_t> bytes);

// Coder accounting of one chunk.
struct ChunkStats {
  int scale = 0;
  ChunkKind kind = ChunkKind::Occupancy;
  size_t symbols = 0;       // coded binary symbols or integer values
  double ideal_bits = 0.0;  // sum of -log2 q under the model
  size_t payload_bits = 0;
};

struct EncodeResult {
  std::vector<uint8_t> bytes;
  std::vector<ChunkStats> stats;
};

// The cloud must be non-empty, in range for cfg.precision and deduplicated
// (use PointCloud::canonicalize).
EncodeResult encode(const PointCloud& cloud, const CodecConfig& cfg,
                    const ModelSet& models);
PointCloud decode(std::span<const uint8_t> bytes, const ModelSet& models);

struct RateReport {
  std::map<int, uint64_t> scale_bits;  // chunk bits including framing
  uint64_t header_bits = 0;            // header, chunk count and checksum
  uint64_t total_bits = 0;
  uint64_t original_count = 0;
  double bpp = 0.0;
};

RateReport rate_report(std::span<const uint8_t> bytes);

// Bits per point if every MP-POV were coded at p = 0.5.
double uniform_baseline_bpp(const PointCloud& cloud);

// Morton-ordered occupied voxels at every scale 0..N of a canonical cloud.
std::vector<CoordSetPtr> build_pyramid(const PointCloud& cloud);

}  // namespace spcg
