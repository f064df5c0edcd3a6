#include "spcg/network.h"

#include "spcg/byte_io.h"
#include "spcg/rng.h"

#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace spcg {

namespace {

constexpr uint8_t kModelVersion = 1;
constexpr char kModelMagic[4] = {'S', 'P', 'N', 'W'};

struct ArchEntry {
  ArchId id;
  std::string_view name;
};

constexpr std::array<ArchEntry, 6> kArchNames = {{
  {ArchId::OneStageSopa, "one_stage_sopa"},
  {ArchId::MultiStageSopa3, "multistage_sopa_3"},
  {ArchId::MultiStageSopa8, "multistage_sopa_8"},
  {ArchId::SlneEncoder, "slne_encoder"},
  {ArchId::SlneDecoder, "slne_decoder"},
  {ArchId::SopaPosition, "sopa_position"},
}};

// Hands out layer indices. In build mode it appends zero layers; in bind
// mode it checks that the existing layer at the cursor has the same shape.
class LayerAllocator {
public:
  explicit LayerAllocator(std::vector<ConvLayerParams>& layers)
    : build_(&layers), bind_(nullptr)
  {
  }
  explicit LayerAllocator(const std::vector<ConvLayerParams>& layers)
    : build_(nullptr), bind_(&layers)
  {
  }

  int add(Stride stride, int kernel_size, int in_channels, int out_channels)
  {
    const int index = next_++;
    if (build_) {
      build_->push_back(
        ConvLayerParams::zeros(stride, kernel_size, in_channels, out_channels));
      return index;
    }
    if (size_t(index) >= bind_->size())
      throw FormatError("model has too few layers for its architecture");
    const ConvLayerParams& l = (*bind_)[index];
    const size_t expect_offsets = stride == Stride::None
      ? size_t(kernel_size) * kernel_size * kernel_size
      : 8;
    if (l.stride != stride || l.offsets.size() != expect_offsets
        || l.in_channels() != in_channels || l.out_channels() != out_channels)
      throw FormatError("layer " + std::to_string(index)
                        + " does not match the architecture");
    return index;
  }

  size_t count() const { return size_t(next_); }

private:
  std::vector<ConvLayerParams>* build_;
  const std::vector<ConvLayerParams>* bind_;
  int next_ = 0;
};

DfaLayout layout_dfa(LayerAllocator& a, int k, int c)
{
  DfaLayout d{};
  for (auto& u : d) {
    u.branch_a = a.add(Stride::None, k, c, c / 2);
    u.branch_b_reduce = a.add(Stride::None, 1, c, c / 2);
    u.branch_b_conv = a.add(Stride::None, k, c / 2, c / 2);
    u.merge = a.add(Stride::None, 1, c, c);
  }
  return d;
}

OolLayout layout_ool(LayerAllocator& a, int k, int c, OolMode mode)
{
  OolLayout o{};
  o.conv1 = a.add(Stride::None, k, c, c);
  o.conv2 = a.add(Stride::None, k, c, c / 2);
  o.head = a.add(Stride::None, 1, c / 2, mode == OolMode::Probability ? 1 : 3);
  o.mode = mode;
  return o;
}

OneStageLayout layout_one_stage(LayerAllocator& a, int k, int c, int in)
{
  OneStageLayout l{};
  l.stem = a.add(Stride::None, k, in, c);
  l.dfa_parent = layout_dfa(a, k, c);
  l.upsample = a.add(Stride::Up2, 2, c, c);
  l.dfa_child = layout_dfa(a, k, c);
  l.ool = layout_ool(a, k, c, OolMode::Probability);
  return l;
}

MultiStageLayout layout_multi_stage(LayerAllocator& a, int k, int c, int stages)
{
  MultiStageLayout l{};
  l.stem = a.add(Stride::None, k, 1, c);
  l.dfa_parent = layout_dfa(a, k, c);
  l.upsample = a.add(Stride::Up2, 2, c, c);
  for (int s = 0; s < stages; ++s) {
    StageLayout st{};
    st.dfa = layout_dfa(a, k, c);
    st.ool = layout_ool(a, k, c, OolMode::Probability);
    l.stages.push_back(st);
  }
  return l;
}

SlneEncoderLayout layout_slne_encoder(LayerAllocator& a, int k, int c)
{
  SlneEncoderLayout l{};
  l.stem = a.add(Stride::None, k, 1, c);
  l.dfa1 = layout_dfa(a, k, c);
  l.down1 = a.add(Stride::Down2, 2, c, c);
  l.dfa2 = layout_dfa(a, k, c);
  l.down2 = a.add(Stride::Down2, 2, c, c);
  l.dfa3 = layout_dfa(a, k, c);
  l.head = a.add(Stride::None, 1, c, c);
  return l;
}

SlneDecoderLayout layout_slne_decoder(LayerAllocator& a, int k, int c)
{
  SlneDecoderLayout l{};
  l.upsample = a.add(Stride::Up2, 2, c, c);
  l.dfa = layout_dfa(a, k, c);
  l.sopa = layout_one_stage(a, k, c, c + 1);
  return l;
}

PositionLayout layout_position(LayerAllocator& a, int k, int c)
{
  PositionLayout l{};
  l.stem = a.add(Stride::None, k, 1, c);
  l.dfa = layout_dfa(a, k, c);
  l.ool = layout_ool(a, k, c, OolMode::Offset);
  return l;
}

// Runs the layout function of `arch` against an allocator.
void declare(ArchId arch, LayerAllocator& a, int k, int c)
{
  switch (arch) {
  case ArchId::OneStageSopa: layout_one_stage(a, k, c, 1); break;
  case ArchId::MultiStageSopa3: layout_multi_stage(a, k, c, 3); break;
  case ArchId::MultiStageSopa8: layout_multi_stage(a, k, c, 8); break;
  case ArchId::SlneEncoder: layout_slne_encoder(a, k, c); break;
  case ArchId::SlneDecoder: layout_slne_decoder(a, k, c); break;
  case ArchId::SopaPosition: layout_position(a, k, c); break;
  }
}

size_t entropy_channels(ArchId arch, int c)
{
  switch (arch) {
  case ArchId::SlneEncoder: return size_t(c);
  case ArchId::SopaPosition: return 3;
  default: return 0;
  }
}

void check_arch(const NetworkParams& net, std::initializer_list<ArchId> allowed)
{
  for (ArchId a : allowed)
    if (net.arch == a)
      return;
  throw std::invalid_argument("network architecture "
                              + std::string(arch_name(net.arch))
                              + " cannot be used here");
}

void validate_shape(const NetworkParams& net)
{
  if (net.kernel_size < 1 || net.kernel_size % 2 == 0)
    throw FormatError("kernel size must be odd");
  if (net.channels < 2 || net.channels % 2 != 0)
    throw std::invalid_argument("channel count must be even and at least 2");
  LayerAllocator bind(static_cast<const std::vector<ConvLayerParams>&>(net.layers));
  declare(net.arch, bind, net.kernel_size, net.channels);
  if (bind.count() != net.layers.size())
    throw FormatError("model has extra layers for its architecture");
  if (net.entropy_log_scales.size() != entropy_channels(net.arch, net.channels))
    throw FormatError("model entropy parameters do not match architecture");
}

}  // namespace

std::string_view arch_name(ArchId arch)
{
  for (const auto& e : kArchNames)
    if (e.id == arch)
      return e.name;
  return "unknown";
}

std::optional<ArchId> parse_arch(std::string_view name)
{
  for (const auto& e : kArchNames)
    if (e.name == name)
      return e.id;
  return std::nullopt;
}

size_t NetworkParams::parameter_count() const
{
  size_t n = entropy_log_scales.size();
  for (const auto& l : layers)
    n += l.parameter_count();
  return n;
}

uint64_t NetworkParams::checksum() const
{
  Fnv1a64 h;
  for (const auto& l : layers) {
    for (const auto& w : l.weights)
      for (Eigen::Index i = 0; i < w.size(); ++i)
        h.update_double(w.data()[i]);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i)
      h.update_double(l.bias[i]);
  }
  for (double s : entropy_log_scales)
    h.update_double(s);
  return h.digest();
}

NetworkParams make_network(ArchId arch, int kernel_size, int channels)
{
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw std::invalid_argument("kernel size must be odd");
  if (channels < 2 || channels % 2 != 0)
    throw std::invalid_argument("channel count must be even and at least 2");
  NetworkParams net;
  net.arch = arch;
  net.kernel_size = kernel_size;
  net.channels = channels;
  LayerAllocator build(net.layers);
  declare(arch, build, kernel_size, channels);
  net.entropy_log_scales.assign(entropy_channels(arch, channels), 0.0);
  return net;
}

void init_he_uniform(NetworkParams& net, uint64_t seed)
{
  Rng rng(seed);
  for (auto& l : net.layers) {
    const double fan_in = double(l.in_channels()) * double(l.offsets.size());
    const double bound = std::sqrt(6.0 / fan_in);
    for (auto& w : l.weights)
      for (Eigen::Index i = 0; i < w.size(); ++i)
        w.data()[i] = rng.uniform(-bound, bound);
    l.bias.setZero();
  }
  for (double& s : net.entropy_log_scales)
    s = 0.0;
}

NetworkParams zeros_like(const NetworkParams& net)
{
  NetworkParams z = net;
  for (auto& l : z.layers)
    l.set_zero();
  for (double& s : z.entropy_log_scales)
    s = 0.0;
  return z;
}

std::vector<std::span<double>> parameter_blocks(NetworkParams& net)
{
  std::vector<std::span<double>> blocks;
  for (auto& l : net.layers) {
    for (auto& w : l.weights)
      blocks.emplace_back(w.data(), size_t(w.size()));
    blocks.emplace_back(l.bias.data(), size_t(l.bias.size()));
  }
  if (!net.entropy_log_scales.empty())
    blocks.emplace_back(net.entropy_log_scales);
  return blocks;
}

std::vector<uint8_t> serialize_model(const NetworkParams& net)
{
  ByteWriter w;
  w.put_bytes({reinterpret_cast<const uint8_t*>(kModelMagic), 4});
  w.put_u8(kModelVersion);
  w.put_u64(net.checksum());
  w.put_string(arch_name(net.arch));
  w.put_u8(uint8_t(net.kernel_size));
  w.put_u32(uint32_t(net.channels));
  w.put_u32(uint32_t(net.layers.size()));
  for (const auto& l : net.layers) {
    w.put_u8(uint8_t(l.stride));
    w.put_u32(uint32_t(l.offsets.size()));
    w.put_u32(uint32_t(l.in_channels()));
    w.put_u32(uint32_t(l.out_channels()));
    for (const auto& o : l.offsets) {
      w.put_u8(uint8_t(int8_t(o.x)));
      w.put_u8(uint8_t(int8_t(o.y)));
      w.put_u8(uint8_t(int8_t(o.z)));
    }
    for (const auto& m : l.weights)
      for (Eigen::Index i = 0; i < m.size(); ++i)
        w.put_f64(m.data()[i]);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i)
      w.put_f64(l.bias[i]);
  }
  w.put_u32(uint32_t(net.entropy_log_scales.size()));
  for (double s : net.entropy_log_scales)
    w.put_f64(s);
  return w.take();
}

NetworkParams deserialize_model(std::span<const uint8_t> bytes)
{
  ByteReader r(bytes);
  auto magic = r.get_bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kModelMagic))
    throw FormatError("not a model file (bad magic)");
  const uint8_t version = r.get_u8();
  if (version != kModelVersion)
    throw FormatError("unsupported model version " + std::to_string(version));
  const uint64_t stored_checksum = r.get_u64();

  NetworkParams net;
  const std::string name = r.get_string();
  auto arch = parse_arch(name);
  if (!arch)
    throw FormatError("unknown architecture '" + name + "'");
  net.arch = *arch;
  net.kernel_size = r.get_u8();
  net.channels = int(r.get_u32());
  const uint32_t layer_count = r.get_u32();
  if (layer_count > 100000)
    throw FormatError("implausible layer count");
  for (uint32_t i = 0; i < layer_count; ++i) {
    ConvLayerParams l;
    const uint8_t stride = r.get_u8();
    if (stride > 2)
      throw FormatError("bad layer stride");
    l.stride = Stride(stride);
    const uint32_t n_off = r.get_u32();
    const uint32_t cin = r.get_u32();
    const uint32_t cout = r.get_u32();
    if (n_off == 0 || n_off > 729 || cin == 0 || cout == 0 || cin > 4096
        || cout > 4096)
      throw FormatError("bad layer shape");
    for (uint32_t k = 0; k < n_off; ++k) {
      Coord3 o;
      o.x = int8_t(r.get_u8());
      o.y = int8_t(r.get_u8());
      o.z = int8_t(r.get_u8());
      l.offsets.push_back(o);
    }
    for (uint32_t k = 0; k < n_off; ++k) {
      Matrix m(cin, cout);
      for (Eigen::Index j = 0; j < m.size(); ++j)
        m.data()[j] = r.get_f64();
      l.weights.push_back(std::move(m));
    }
    l.bias.resize(cout);
    for (uint32_t j = 0; j < cout; ++j)
      l.bias[j] = r.get_f64();
    net.layers.push_back(std::move(l));
  }
  const uint32_t n_scales = r.get_u32();
  for (uint32_t i = 0; i < n_scales; ++i)
    net.entropy_log_scales.push_back(r.get_f64());
  if (r.remaining() != 0)
    throw FormatError("trailing bytes after model");

  validate_shape(net);
  for (const auto& l : net.layers) {
    const auto expect = l.stride == Stride::None
      ? cube_offsets(l.kernel_size())
      : std::vector<Coord3>(child_offsets().begin(), child_offsets().end());
    if (l.offsets != expect)
      throw FormatError("unexpected kernel offsets");
  }
  if (net.checksum() != stored_checksum)
    throw FormatError("model checksum mismatch");
  return net;
}

void save_model(const NetworkParams& net, const std::filesystem::path& path)
{
  auto bytes = serialize_model(net);
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            std::streamsize(bytes.size()));
  if (!out)
    throw std::runtime_error("failed writing " + path.string());
}

NetworkParams load_model(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("model not found: " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

OneStageLayout one_stage_layout(const NetworkParams& net)
{
  check_arch(net, {ArchId::OneStageSopa});
  LayerAllocator a(static_cast<const std::vector<ConvLayerParams>&>(net.layers));
  return layout_one_stage(a, net.kernel_size, net.channels, 1);
}

MultiStageLayout multi_stage_layout(const NetworkParams& net)
{
  check_arch(net, {ArchId::MultiStageSopa3, ArchId::MultiStageSopa8});
  LayerAllocator a(static_cast<const std::vector<ConvLayerParams>&>(net.layers));
  return layout_multi_stage(a, net.kernel_size, net.channels,
                            net.arch == ArchId::MultiStageSopa3 ? 3 : 8);
}

SlneEncoderLayout slne_encoder_layout(const NetworkParams& net)
{
  check_arch(net, {ArchId::SlneEncoder});
  LayerAllocator a(static_cast<const std::vector<ConvLayerParams>&>(net.layers));
  return layout_slne_encoder(a, net.kernel_size, net.channels);
}

SlneDecoderLayout slne_decoder_layout(const NetworkParams& net)
{
  check_arch(net, {ArchId::SlneDecoder});
  LayerAllocator a(static_cast<const std::vector<ConvLayerParams>&>(net.layers));
  return layout_slne_decoder(a, net.kernel_size, net.channels);
}

PositionLayout position_layout(const NetworkParams& net)
{
  check_arch(net, {ArchId::SopaPosition});
  LayerAllocator a(static_cast<const std::vector<ConvLayerParams>&>(net.layers));
  return layout_position(a, net.kernel_size, net.channels);
}

// ---------------------------------------------------------------------------

NetEval::NetEval(Tape& tape, const NetworkParams& net, NetworkParams* grads)
  : tape_(tape), net_(net), grads_(grads)
{
  if (grads_ && grads_->layers.size() != net_.layers.size())
    throw std::invalid_argument("gradient buffer does not match network");
}

ConvLayerParams* NetEval::grad_of(int layer)
{
  return grads_ ? &grads_->layers[size_t(layer)] : nullptr;
}

TensorVar NetEval::input(const SparseTensor& t, bool requires_grad)
{
  return {tape_.input(t.features(), requires_grad), t.coord_set(), t.scale()};
}

TensorVar NetEval::conv(const TensorVar& x, int layer)
{
  const ConvLayerParams& p = net_.layers[size_t(layer)];
  switch (p.stride) {
  case Stride::None: {
    const int k = p.kernel_size();
    auto map = k == 1
      ? std::make_shared<const KernelMap>(build_identity_map(x.coords->size()))
      : x.coords->submanifold_map(k);
    return {tape_.conv(x.var, std::move(map), p, grad_of(layer)), x.coords,
            x.scale};
  }
  case Stride::Down2: {
    auto parents = parents_of(*x.coords);
    auto map =
      std::make_shared<const KernelMap>(build_down2_map(*x.coords, *parents));
    return {tape_.conv(x.var, std::move(map), p, grad_of(layer)), parents,
            x.scale - 1};
  }
  case Stride::Up2:
    return up2_onto(x, layer, children_of(*x.coords));
  }
  throw std::logic_error("bad stride");
}

TensorVar NetEval::up2_onto(const TensorVar& x, int layer, CoordSetPtr target)
{
  const ConvLayerParams& p = net_.layers[size_t(layer)];
  if (p.stride != Stride::Up2)
    throw std::invalid_argument("layer is not an up2 convolution");
  auto map = std::make_shared<const KernelMap>(build_up2_map(*x.coords, *target));
  return {tape_.conv(x.var, std::move(map), p, grad_of(layer)), std::move(target),
          x.scale + 1};
}

TensorVar NetEval::relu(const TensorVar& x)
{
  return {tape_.relu(x.var), x.coords, x.scale};
}

TensorVar NetEval::irn_unit(const TensorVar& x, const IrnUnitLayout& l)
{
  TensorVar a = relu(conv(x, l.branch_a));
  TensorVar b = relu(conv(x, l.branch_b_reduce));
  b = conv(b, l.branch_b_conv);
  TensorVar cat{tape_.concat(a.var, b.var), x.coords, x.scale};
  TensorVar merged = conv(cat, l.merge);
  return {tape_.add(merged.var, x.var), x.coords, x.scale};
}

TensorVar NetEval::dfa(const TensorVar& x, const DfaLayout& l)
{
  TensorVar h = x;
  for (const auto& unit : l)
    h = irn_unit(h, unit);
  return h;
}

Tape::Var NetEval::ool(const TensorVar& x, const OolLayout& l,
                       const std::vector<int32_t>* rows)
{
  TensorVar h = relu(conv(x, l.conv1));
  h = relu(conv(h, l.conv2));
  Tape::Var sel = rows ? tape_.gather(h.var, *rows) : h.var;
  const size_t n = size_t(tape_.value(sel).rows());
  auto map = std::make_shared<const KernelMap>(build_identity_map(n));
  Tape::Var out = tape_.conv(sel, std::move(map), net_.layers[size_t(l.head)],
                             grad_of(l.head));
  if (l.mode == OolMode::Probability)
    out = tape_.sigmoid(out);
  return out;
}

SparseTensor irn_block_forward(const SparseTensor& t, const NetworkParams& net,
                               const DfaLayout& layout)
{
  if (t.channels() % 2 != 0)
    throw std::invalid_argument("IRN block requires an even channel count");
  Tape tape;
  NetEval ev(tape, net, nullptr);
  TensorVar out = ev.dfa(ev.input(t), layout);
  return SparseTensor(t.scale(), t.coord_set(), tape.value(out.var), t.role());
}

Matrix ool_forward(const SparseTensor& t, const NetworkParams& net,
                   const OolLayout& layout)
{
  Tape tape;
  NetEval ev(tape, net, nullptr);
  return tape.value(ev.ool(ev.input(t), layout));
}

}  // namespace spcg
