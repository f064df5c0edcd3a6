#pragma once

#include "spcg/entropy.h"
#include "spcg/network.h"
#include "spcg/point_cloud.h"
#include "spcg/rng.h"

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace spcg {

// ---------------------------------------------------------------------------
// Synthetic data

enum class CloudKind : uint8_t { SphereShell, BoxSurface, PlanePatch, LineScan, Union };

std::string_view cloud_kind_name(CloudKind kind);
std::optional<CloudKind> parse_cloud_kind(std::string_view name);

// Deterministic for a fixed seed; N in [4, 10]. Shapes are randomised in
// size, position and orientation from the seed.
PointCloud synth_cloud(CloudKind kind, int precision, uint64_t seed);

// Surface samples of one sphere; every point lies within 1 voxel of the
// exact shell.
PointCloud sphere_shell(int precision, std::array<double, 3> centre, double radius, Rng& rng);

// Scales by s ~ U(0.5, 1), rounds and deduplicates.
PointCloud augment(const PointCloud& cloud, Rng& rng);
PointCloud scale_cloud(const PointCloud& cloud, double s);

// ---------------------------------------------------------------------------
// Losses (bits for the rate terms)

struct LossValue {
  double total = 0.0;
  double bce = 0.0;
  double feature_rate = 0.0;
  double mse = 0.0;
};

// Sum of binary cross-entropy in bits; probabilities are clamped.
double loss_bce(std::span<const double> probs, std::span<const uint8_t> symbols);

// BCE + w * R_F, R_F = sum_j factorized_rate(q_j, b_channel(j)) with q
// row-major over the model's channels.
LossValue loss_combined(std::span<const double> probs, std::span<const uint8_t> symbols,
                        std::span<const double> q, const FactorizedModel& model, double w);

// Mean squared distance between paired points.
double loss_mse(std::span<const std::array<double, 3>> adjusted,
                std::span<const std::array<double, 3>> truth);

// ---------------------------------------------------------------------------
// Dataset manifest: one "kind N seed" record per line, '#' comments.

struct ManifestEntry {
  CloudKind kind = CloudKind::SphereShell;
  int precision = 7;
  uint64_t seed = 0;
};

std::vector<ManifestEntry> parse_manifest(std::string_view text);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
std::vector<PointCloud> synthesize(std::span<const ManifestEntry> entries);

// ---------------------------------------------------------------------------
// Training

struct Schedule {
  double lr_start = 8e-4;
  double lr_end = 2e-5;
  int epochs = 5;
  int batch = 8;
  uint64_t seed = 1;
  bool augment = true;
  bool eval_initial = true;  // log an epoch-0 row with the initial weights
};

// Cosine decay from lr_start to lr_end over total steps.
double schedule_lr(const Schedule& s, int64_t step, int64_t total_steps);
// Weight of the feature rate: 0 -> 1 linearly over the first third.
double rate_weight(int64_t step, int64_t total_steps);

struct TrainOptions {
  int kernel_size = 3;
  int channels = 8;
  uint64_t init_seed = 1;
  int position_gap = 2;  // N - m for SOPA(Position)
  int min_scale = 2;     // lowest target scale used for occupancy losses
};

struct EpochLog {
  int epoch = 0;
  LossValue loss;  // per-symbol (or per-point) means
  double lr = 0.0;
};

struct TrainResult {
  // One network, or encoder then decoder for SLNE.
  std::vector<NetworkParams> nets;
  std::vector<EpochLog> log;
};

class DivergenceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Trains `arch` (SlneEncoder or SlneDecoder train the pair jointly).
// Throws DivergenceError on a non-finite loss.
TrainResult train(ArchId arch, std::span<const PointCloud> data, const Schedule& schedule,
                  const TrainOptions& options);

// Mean loss of fixed networks over a dataset, without augmentation.
LossValue evaluate_loss(ArchId arch, std::span<const NetworkParams> nets,
                        std::span<const PointCloud> data, const TrainOptions& options);

// Laplace scales of the position offsets fitted to the rounded outputs.
void fit_position_scales(NetworkParams& net, std::span<const PointCloud> data, int gap);

// Per-channel Laplace scales of an SLNE encoder fitted to its rounded
// features over every scale of `data`.
void fit_feature_scales(NetworkParams& enc, std::span<const PointCloud> data);

void write_training_log(const std::filesystem::path& path, std::span<const EpochLog> log);

}  // namespace spcg
