// spcgc: encode, decode, train, eval and sweep from the command line.
//
// Exit codes: 0 ok, 2 usage (bad flags, missing model, invalid settings),
// 3 runtime failure (I/O, corrupt input, divergence).

#include "spcg/codec.h"
#include "spcg/metrics.h"
#include "spcg/training.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using namespace spcg;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<uint8_t> read_file(const fs::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::span<const uint8_t> bytes)
{
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
}

bool is_model_file(const fs::path& path)
{
  std::ifstream in(path, std::ios::binary);
  char magic[4] = {};
  return in.read(magic, 4) && std::string_view(magic, 4) == "SPNW";
}

// Each entry is a model file or a directory of them.
ModelSet load_models(const std::vector<std::string>& paths)
{
  ModelSet set;
  for (const auto& p : paths) {
    const fs::path path(p);
    if (fs::is_directory(path)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(path))
        if (e.is_regular_file() && is_model_file(e.path()))
          files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files)
        set.add(load_model(f));
    } else if (fs::is_regular_file(path)) {
      set.add(load_model(path));
    } else {
      throw UsageError("model not found: " + p);
    }
  }
  return set;
}

// Throws UsageError when the set lacks a network the configuration needs.
void require_models(const ModelSet& models, const CodecConfig& cfg)
{
  for (ArchId a : ModelSet::required(cfg.mode, cfg.lossless_arch))
    if (!models.find(a))
      throw UsageError("model not found: no " + std::string(arch_name(a)) + " network given");
}

PointCloud load_cloud(const fs::path& path, int precision)
{
  if (!fs::exists(path))
    throw UsageError("input not found: " + path.string());
  return to_point_cloud(read_ply(path), precision);
}

int worker_count()
{
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const char* env = std::getenv("SPCG_THREADS");
  if (!env || !*env)
    return int(hw);
  int n = 0;
  const auto* end = env + std::strlen(env);
  auto [ptr, ec] = std::from_chars(env, end, n);
  if (ec != std::errc() || ptr != end || n < 1)
    throw UsageError("SPCG_THREADS must be a positive integer");
  return n;
}

nlohmann::json rate_json(const RateReport& r)
{
  nlohmann::json scales = nlohmann::json::object();
  for (const auto& [s, bits] : r.scale_bits)
    scales[std::to_string(s)] = bits;
  return {{"bpp", r.bpp},
          {"total_bits", r.total_bits},
          {"header_bits", r.header_bits},
          {"original_points", r.original_count},
          {"scale_bits", scales}};
}

CodecConfig make_config(const std::string& mode, int precision, int m, const std::string& arch)
{
  CodecConfig cfg;
  auto pm = parse_mode(mode);
  if (!pm)
    throw UsageError("unknown mode: " + mode);
  auto pa = parse_lossless_arch(arch);
  if (!pa)
    throw UsageError("unknown lossless architecture: " + arch);
  cfg.mode = *pm;
  cfg.precision = precision;
  cfg.m = cfg.mode == CodecMode::Lossless ? 0 : m;
  cfg.lossless_arch = *pa;
  if (cfg.mode != CodecMode::Lossless && (m < 1 || m >= precision))
    throw UsageError("--m must satisfy 1 <= m < N in lossy modes");
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

struct SweepRow {
  int m = 0;
  RateReport rate;
  QualityReport quality;
};

SweepRow sweep_point(const PointCloud& cloud, CodecConfig cfg, const ModelSet& models)
{
  auto enc = encode(cloud, cfg, models);
  auto dec = decode(enc.bytes, models);
  SweepRow row{cfg.m, rate_report(enc.bytes), {}};
  row.quality = evaluate(cloud, dec, row.rate.bpp);
  return row;
}

std::string psnr_cell(const DistortionResult& d)
{
  if (d.identical)
    return "inf";
  std::ostringstream s;
  s.precision(6);
  s << std::fixed << d.psnr;
  return s.str();
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Learned point cloud geometry codec"};
  app.require_subcommand(1);

  std::string input, output, mode = "lossless", arch = "multi-stage-8";
  std::vector<std::string> model_paths;
  int precision = 0, m = 0;

  auto* enc = app.add_subcommand("encode", "Compress a PLY file");
  enc->add_option("--input", input, "PLY file")->required();
  enc->add_option("--model", model_paths, "Model file or directory (repeatable)")->required();
  enc->add_option("--mode", mode, "lossless | lossy-dense | lossy-sparse");
  enc->add_option("--precision", precision, "Geometry precision N")->required();
  enc->add_option("--m", m, "Last losslessly coded scale (lossy modes)");
  enc->add_option("--arch", arch, "Lossless SOPA: one-stage | multi-stage-3 | multi-stage-8 | slne-one-stage");
  enc->add_option("--output", output, "Bitstream path")->required();

  bool ascii = false;
  auto* dec = app.add_subcommand("decode", "Decompress a bitstream to PLY");
  dec->add_option("--input", input, "Bitstream")->required();
  dec->add_option("--model", model_paths, "Model file or directory (repeatable)")->required();
  dec->add_option("--output", output, "PLY path")->required();
  dec->add_flag("--ascii", ascii, "Write ASCII PLY");

  std::string train_arch, manifest;
  Schedule sched;
  TrainOptions topt;
  int kernel = 0;
  std::string log_path;
  bool no_augment = false;
  auto* trn = app.add_subcommand("train", "Train a network on a synthetic dataset");
  trn->add_option("--arch", train_arch,
                  "one_stage_sopa | multistage_sopa_3 | multistage_sopa_8 | slne_encoder | slne_decoder | sopa_position")
      ->required();
  trn->add_option("--dataset", manifest, "Manifest of 'kind N seed' lines")->required();
  trn->add_option("--epochs", sched.epochs, "Epochs")->check(CLI::NonNegativeNumber);
  trn->add_option("--seed", sched.seed, "Shuffle, augmentation and init seed");
  trn->add_option("--out", output, "Model path")->required();
  trn->add_option("--lr", sched.lr_start, "Initial learning rate");
  trn->add_option("--lr-end", sched.lr_end, "Final learning rate");
  trn->add_option("--batch", sched.batch, "Clouds per step")->check(CLI::PositiveNumber);
  trn->add_option("--channels", topt.channels, "Feature channels");
  trn->add_option("--kernel", kernel, "Kernel size (default 3, 5 for sopa_position)");
  trn->add_option("--gap", topt.position_gap, "N - m for sopa_position");
  trn->add_option("--log", log_path, "Training log CSV (default <out>.csv)");
  trn->add_flag("--no-augment", no_augment, "Disable random scaling");

  std::string reference, decoded;
  double bpp = 0.0;
  bool table = false;
  auto* evl = app.add_subcommand("eval", "D1/D2 quality of a decoded cloud");
  evl->add_option("--reference", reference, "Reference PLY")->required();
  evl->add_option("--decoded", decoded, "Decoded PLY")->required();
  evl->add_option("--precision", precision, "Geometry precision N")->required();
  evl->add_option("--bpp", bpp, "Rate to report alongside");
  evl->add_flag("--table", table, "Print an aligned table instead of JSON");

  std::vector<int> m_list;
  auto* swp = app.add_subcommand("sweep", "Rate-distortion sweep over m");
  swp->add_option("--input", input, "PLY file")->required();
  swp->add_option("--models", model_paths, "Model directory or files")->required();
  swp->add_option("--mode", mode, "lossy-dense | lossy-sparse")->required();
  swp->add_option("--precision", precision, "Geometry precision N")->required();
  swp->add_option("--m-list", m_list, "Comma separated scales")->delimiter(',')->required();
  swp->add_option("--arch", arch, "Lossless SOPA for scales <= m");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*enc) {
      const auto cfg = make_config(mode, precision, m, arch);
      const auto models = load_models(model_paths);
      require_models(models, cfg);
      const auto cloud = load_cloud(input, precision);
      auto result = encode(cloud, cfg, models);
      write_file(output, result.bytes);
      auto j = rate_json(rate_report(result.bytes));
      j["mode"] = mode_name(cfg.mode);
      std::cout << j.dump() << '\n';
    } else if (*dec) {
      const auto models = load_models(model_paths);
      const auto bytes = read_file(input);
      auto cloud = decode(bytes, models);
      write_ply(output, cloud, ascii ? PlyFormat::Ascii : PlyFormat::BinaryLE);
      nlohmann::json j{{"points", cloud.points.size()}, {"precision", cloud.precision}};
      std::cout << j.dump() << '\n';
    } else if (*trn) {
      auto a = parse_arch(train_arch);
      if (!a)
        throw UsageError("unknown arch: " + train_arch);
      topt.kernel_size = kernel > 0 ? kernel : (*a == ArchId::SopaPosition ? 5 : 3);
      topt.init_seed = sched.seed;
      sched.augment = !no_augment;
      if (!fs::exists(manifest))
        throw UsageError("dataset manifest not found: " + manifest);
      std::vector<PointCloud> data;
      try {
        data = synthesize(read_manifest(manifest));
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      if (data.empty())
        throw UsageError("dataset manifest is empty");
      auto result = train(*a, data, sched, topt);

      const fs::path out(output);
      nlohmann::json files = nlohmann::json::array();
      for (const auto& net : result.nets) {
        fs::path path = out;
        if (result.nets.size() > 1)
          path = out.parent_path()
                 / (out.stem().string() + "." + std::string(arch_name(net.arch))
                    + out.extension().string());
        save_model(net, path);
        files.push_back(path.string());
      }
      const fs::path log = log_path.empty() ? fs::path(output + ".csv") : fs::path(log_path);
      write_training_log(log, result.log);
      nlohmann::json j{{"models", files}, {"log", log.string()}};
      if (!result.log.empty())
        j["final_loss"] = result.log.back().loss.total;
      std::cout << j.dump() << '\n';
    } else if (*evl) {
      const auto ref = load_cloud(reference, precision);
      const auto got = load_cloud(decoded, precision);
      const auto report = evaluate(ref, got, bpp);
      std::cout << (table ? report.to_table() : report.to_json()) << '\n';
    } else if (*swp) {
      if (m_list.empty())
        throw UsageError("--m-list needs at least one value");
      if (mode == "lossless")
        throw UsageError("sweep needs a lossy mode");
      std::vector<CodecConfig> cfgs;
      for (int mm : m_list)
        cfgs.push_back(make_config(mode, precision, mm, arch));
      std::sort(cfgs.begin(), cfgs.end(), [](auto& x, auto& y) { return x.m > y.m; });
      const auto models = load_models(model_paths);
      require_models(models, cfgs.front());
      const auto cloud = load_cloud(input, precision);

      // One session per worker; rows are written in descending m order.
      std::vector<SweepRow> rows(cfgs.size());
      std::vector<std::exception_ptr> errors(cfgs.size());
      const size_t workers = std::min(cfgs.size(), size_t(worker_count()));
      std::vector<std::thread> pool;
      for (size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          for (size_t k = w; k < cfgs.size(); k += workers) {
            try {
              rows[k] = sweep_point(cloud, cfgs[k], models);
            } catch (...) {
              errors[k] = std::current_exception();
            }
          }
        });
      for (auto& t : pool)
        t.join();
      for (auto& e : errors)
        if (e)
          std::rethrow_exception(e);

      std::cout << "m,bpp,d1_mse,d1_psnr,d2_mse,d2_psnr,points\n";
      for (const auto& r : rows) {
        std::cout << r.m << ',' << r.rate.bpp << ',' << r.quality.d1.mse << ','
                  << psnr_cell(r.quality.d1) << ',';
        if (r.quality.d2)
          std::cout << r.quality.d2->mse << ',' << psnr_cell(*r.quality.d2);
        else
          std::cout << ',';
        std::cout << ',' << r.quality.decoded_points << '\n';
      }
    }
  } catch (const UsageError& e) {
    std::cerr << "spcgc: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "spcgc: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
