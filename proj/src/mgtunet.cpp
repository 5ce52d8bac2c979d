#include "nucleiquant/mgtunet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "nucleiquant/error.hpp"
#include "nucleiquant/labeling.hpp"
#include "nucleiquant/rng.hpp"

namespace nucleiquant {

namespace {

constexpr std::size_t kStages = 4;
constexpr std::size_t kDownsample = 16;

void init_uniform(Rng& rng, std::span<double> values, double bound) {
  for (double& v : values) v = rng.uniform(-bound, bound);
}

}  // namespace

std::string_view to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::kConvBlock: return "conv_block";
    case BlockKind::kConvPool: return "conv_pool";
    case BlockKind::kTranspConvBlock: return "transp_conv_block";
    case BlockKind::kFinalConv: return "final_conv";
  }
  return "?";
}

std::vector<BlockSpec> block_plan(const NetConfig& config) {
  const std::size_t b = config.base_width;
  const bool skips = config.skip_connections;
  std::vector<BlockSpec> plan;
  std::size_t in = config.input_channels;
  for (std::size_t k = 0; k < kStages; ++k) {
    const std::size_t width = b << k;
    const std::string stage = "enc" + std::to_string(k);
    plan.push_back({BlockKind::kConvBlock, in, width, stage + ".block", skips, false});
    plan.push_back({BlockKind::kConvPool, width, 2 * width, stage + ".pool"});
    in = 2 * width;
  }
  std::size_t channels = in;
  for (std::size_t j = 0; j < kStages; ++j) {
    const std::size_t width = b << (kStages - 1 - j);
    plan.push_back({BlockKind::kTranspConvBlock, channels, width,
                    "dec" + std::to_string(j) + ".up", false, skips});
    channels = skips ? 2 * width : width;
    if (config.layout == DecoderLayout::kInterleaved && (j == 1 || j == 3)) {
      plan.push_back({BlockKind::kConvBlock, channels, width,
                      j == 1 ? "dec.block0" : "dec.block1"});
      channels = width;
    }
  }
  if (config.layout == DecoderLayout::kStacked) {
    plan.push_back({BlockKind::kConvBlock, channels, b, "dec.block0"});
    plan.push_back({BlockKind::kConvBlock, b, b, "dec.block1"});
    channels = b;
  }
  plan.push_back({BlockKind::kFinalConv, channels, config.output_channels(), "head"});
  return plan;
}

std::size_t parameter_count(const BlockSpec& block) {
  const std::size_t in = block.in_channels, out = block.out_channels;
  switch (block.kind) {
    case BlockKind::kConvBlock:
      // Two conv3x3 (+bias) units, each followed by GroupNorm (gamma, beta).
      return (9 * in * out + 3 * out) + (9 * out * out + 3 * out);
    case BlockKind::kConvPool:
      return 9 * in * out + 3 * out;
    case BlockKind::kTranspConvBlock:
      return 4 * in * out + 3 * out;
    case BlockKind::kFinalConv:
      return in * out + out;
  }
  return 0;
}

Network::Network(const NetConfig& config) : config_(config) {
  if (config_.groups == 0 || config_.base_width < config_.groups ||
      config_.base_width % config_.groups != 0) {
    throw Error(ErrorKind::kConfigError,
                "base_width " + std::to_string(config_.base_width) +
                    " must be a positive multiple of groups " +
                    std::to_string(config_.groups));
  }
  if (config_.num_classes < 1) {
    throw Error(ErrorKind::kConfigError, "num_classes must be >= 1");
  }
  if (config_.input_channels == 0) {
    throw Error(ErrorKind::kConfigError, "input_channels must be >= 1");
  }
  if (config_.input_height % kDownsample != 0 ||
      config_.input_width % kDownsample != 0) {
    throw Error(ErrorKind::kConfigError,
                "input extents " + std::to_string(config_.input_height) + "x" +
                    std::to_string(config_.input_width) +
                    " are not divisible by 16");
  }

  plan_ = block_plan(config_);
  Rng rng(config_.seed);
  auto make_layer = [&](const std::string& path, std::size_t in, std::size_t out,
                        std::size_t f, std::size_t stride, std::size_t pad,
                        bool transposed, bool activation, bool normalized) {
    Layer layer;
    layer.path = path;
    layer.transposed = transposed;
    layer.activation = activation;
    layer.normalized = normalized;
    layer.conv.weights = transposed ? Tensor4({in, out, f, f}) : Tensor4({out, in, f, f});
    layer.conv.bias.assign(out, 0.0);
    layer.conv.stride = stride;
    layer.conv.padding = pad;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * f * f));
    init_uniform(rng, layer.conv.weights.data(), bound);
    init_uniform(rng, layer.conv.bias, bound);
    if (normalized) {
      layer.norm = GroupNormParams::identity(out, config_.groups, config_.gn_epsilon);
    }
    return layer;
  };

  for (const BlockSpec& spec : plan_) {
    Block block{spec, {}};
    const std::size_t in = spec.in_channels, out = spec.out_channels;
    switch (spec.kind) {
      case BlockKind::kConvBlock:
        block.layers.push_back(
            make_layer(spec.name + ".unit1", in, out, 3, 1, 1, false, true, true));
        block.layers.push_back(
            make_layer(spec.name + ".unit2", out, out, 3, 1, 1, false, true, true));
        break;
      case BlockKind::kConvPool:
        block.layers.push_back(
            make_layer(spec.name + ".unit", in, out, 3, 2, 1, false, true, true));
        break;
      case BlockKind::kTranspConvBlock:
        block.layers.push_back(
            make_layer(spec.name + ".unit", in, out, 2, 2, 0, true, false, true));
        break;
      case BlockKind::kFinalConv:
        block.layers.push_back(
            make_layer(spec.name, in, out, 1, 1, 0, false, false, false));
        break;
    }
    blocks_.push_back(std::move(block));
  }
  for (Block& block : blocks_) {
    for (Layer& layer : block.layers) {
      layer.dweights = Tensor4(layer.conv.weights.shape());
      layer.dbias.assign(layer.conv.bias.size(), 0.0);
      layer.dgamma.assign(layer.norm.gamma.size(), 0.0);
      layer.dbeta.assign(layer.norm.beta.size(), 0.0);
    }
  }
}

void Network::check_input(const Tensor4& x) const {
  const Shape4 s = x.shape();
  if (s.c != config_.input_channels) {
    throw Error(ErrorKind::kShapeError,
                "network expects " + std::to_string(config_.input_channels) +
                    " input channels, got " + std::to_string(s.c));
  }
  if (s.h == 0 || s.w == 0 || s.h % kDownsample != 0 || s.w % kDownsample != 0) {
    throw Error(ErrorKind::kShapeError, "input extents " + std::to_string(s.h) + "x" +
                                            std::to_string(s.w) +
                                            " are not positive multiples of 16");
  }
}

Tensor4 Network::run_layer(const Layer& layer, const Tensor4& x, LayerTape* tape) {
  Tensor4 z = layer.transposed ? transp_conv2d_forward(x, layer.conv)
                               : conv2d_forward(x, layer.conv);
  if (tape != nullptr) tape->input = x;
  if (layer.activation) {
    Tensor4 a = mish_forward(z);
    if (tape != nullptr) tape->pre_activation = std::move(z);
    z = std::move(a);
  }
  if (!layer.normalized) return z;
  GroupNormResult r = groupnorm_forward(z, layer.norm);
  if (tape != nullptr) tape->norm = std::move(r.cache);
  return std::move(r.y);
}

Tensor4 Network::backprop_layer(Layer& layer, const LayerTape& tape,
                                const Tensor4& upstream) {
  Tensor4 g = upstream;
  if (layer.normalized) {
    GroupNormGrads ng = groupnorm_backward(tape.norm, g);
    layer.dgamma = std::move(ng.dgamma);
    layer.dbeta = std::move(ng.dbeta);
    g = std::move(ng.dx);
  }
  if (layer.activation) g = mish_backward(tape.pre_activation, g);
  Conv2dGrads cg = layer.transposed ? transp_conv2d_backward(tape.input, layer.conv, g)
                                    : conv2d_backward(tape.input, layer.conv, g);
  layer.dweights = std::move(cg.dweights);
  layer.dbias = std::move(cg.dbias);
  return std::move(cg.dx);
}

Tensor4 Network::run(const Tensor4& x, std::vector<LayerTape>* tape) const {
  check_input(x);
  std::vector<Tensor4> skips;
  std::size_t index = 0;
  Tensor4 h = x;
  for (const Block& block : blocks_) {
    for (const Layer& layer : block.layers) {
      h = run_layer(layer, h, tape != nullptr ? &(*tape)[index] : nullptr);
      ++index;
    }
    if (block.spec.saves_skip) skips.push_back(h);
    if (block.spec.concat_skip) {
      h = concat_channels(h, skips.back());
      skips.pop_back();
    }
  }
  return h;
}

Tensor4 Network::forward(const Tensor4& x) const { return run(x, nullptr); }

Tensor4 Network::forward_train(const Tensor4& x) {
  std::size_t layers = 0;
  for (const Block& block : blocks_) layers += block.layers.size();
  tape_.assign(layers, LayerTape{});
  return run(x, &tape_);
}

Tensor4 Network::backward(const Tensor4& upstream) {
  if (tape_.empty()) {
    throw Error(ErrorKind::kShapeError, "backward() without forward_train()");
  }
  zero_grad();
  std::size_t index = tape_.size();
  std::vector<Tensor4> skip_grads;
  Tensor4 g = upstream;
  for (auto block = blocks_.rbegin(); block != blocks_.rend(); ++block) {
    if (block->spec.concat_skip) {
      auto [main, skip] = split_channels(g, block->spec.out_channels);
      g = std::move(main);
      skip_grads.push_back(std::move(skip));
    }
    if (block->spec.saves_skip) {
      const Tensor4& extra = skip_grads.back();
      for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += extra.data()[i];
      skip_grads.pop_back();
    }
    for (auto layer = block->layers.rbegin(); layer != block->layers.rend(); ++layer) {
      g = backprop_layer(*layer, tape_[--index], g);
    }
  }
  return g;
}

std::vector<ParamView> Network::parameters() {
  std::vector<ParamView> out;
  for (Block& block : blocks_) {
    for (Layer& layer : block.layers) {
      const Shape4 ws = layer.conv.weights.shape();
      out.push_back({layer.path + ".conv.weight", {ws.n, ws.c, ws.h, ws.w},
                     layer.conv.weights.data(), layer.dweights.data()});
      out.push_back({layer.path + ".conv.bias", {layer.conv.bias.size()},
                     layer.conv.bias, layer.dbias});
      if (layer.normalized) {
        out.push_back({layer.path + ".norm.gamma", {layer.norm.gamma.size()},
                       layer.norm.gamma, layer.dgamma});
        out.push_back({layer.path + ".norm.beta", {layer.norm.beta.size()},
                       layer.norm.beta, layer.dbeta});
      }
    }
  }
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t total = 0;
  for (const Block& block : blocks_) {
    for (const Layer& layer : block.layers) {
      total += layer.conv.weights.size() + layer.conv.bias.size() +
               layer.norm.gamma.size() + layer.norm.beta.size();
    }
  }
  return total;
}

void Network::zero_grad() {
  for (Block& block : blocks_) {
    for (Layer& layer : block.layers) {
      std::fill(layer.dweights.data().begin(), layer.dweights.data().end(), 0.0);
      std::fill(layer.dbias.begin(), layer.dbias.end(), 0.0);
      std::fill(layer.dgamma.begin(), layer.dgamma.end(), 0.0);
      std::fill(layer.dbeta.begin(), layer.dbeta.end(), 0.0);
    }
  }
}

Network build(const NetConfig& config) { return Network(config); }

Tensor4 images_to_tensor(std::span<const ImagePatch> images) {
  if (images.empty()) return Tensor4();
  const std::size_t h = images.front().height, w = images.front().width;
  const std::size_t c = images.front().channels;
  Tensor4 out({images.size(), c, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const ImagePatch& image = images[n];
    if (image.height != h || image.width != w || image.channels != c) {
      throw Error(ErrorKind::kShapeMismatch, "images differ in extent");
    }
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          out(n, ch, y, x) = image.pixels[(y * w + x) * c + ch] / 255.0;
        }
      }
    }
  }
  return out;
}

Tensor4 targets_from_labels(const LabelMap& labels, int num_classes) {
  validate_labels(labels, num_classes);
  Tensor4 out({1, static_cast<std::size_t>(num_classes) + 1, labels.height,
               labels.width});
  for (std::size_t y = 0; y < labels.height; ++y) {
    for (std::size_t x = 0; x < labels.width; ++x) {
      out(0, labels.cls[y * labels.width + x], y, x) = 1.0;
    }
  }
  return out;
}

Tensor4 targets_from_labels(std::span<const LabelMap> labels, int num_classes) {
  std::vector<Tensor4> parts;
  parts.reserve(labels.size());
  for (const LabelMap& map : labels) parts.push_back(targets_from_labels(map, num_classes));
  return stack_batch(parts);
}

LabelMap decode_instances(const Tensor4& logits, std::size_t sample,
                          std::size_t min_size) {
  const Shape4 s = logits.shape();
  if (sample >= s.n || s.c < 2) {
    throw Error(ErrorKind::kShapeError, "decode needs >= 2 channels and a valid sample");
  }
  std::vector<std::uint32_t> class_map(s.h * s.w, 0);
  for (std::size_t y = 0; y < s.h; ++y) {
    for (std::size_t x = 0; x < s.w; ++x) {
      std::uint32_t best = 0;
      double best_value = logits(sample, 0, y, x);
      for (std::size_t c = 1; c < s.c; ++c) {
        if (logits(sample, c, y, x) > best_value) {
          best_value = logits(sample, c, y, x);
          best = static_cast<std::uint32_t>(c);
        }
      }
      class_map[y * s.w + x] = best;
    }
  }
  return label_components(class_map, s.h, s.w, min_size);
}

std::vector<LabelMap> decode_instances(const Tensor4& logits, std::size_t min_size) {
  std::vector<LabelMap> out;
  out.reserve(logits.shape().n);
  for (std::size_t n = 0; n < logits.shape().n; ++n) {
    out.push_back(decode_instances(logits, n, min_size));
  }
  return out;
}

double train_step(Network& net, const Tensor4& images, const Tensor4& targets,
                  Optimizer& optimizer) {
  const Tensor4 out = net.forward_train(images);
  const LossResult loss = smooth_l1(out, targets);
  net.backward(loss.dpred);
  std::vector<ParamView> views = net.parameters();
  std::vector<std::span<double>> params;
  std::vector<std::span<const double>> grads;
  params.reserve(views.size());
  grads.reserve(views.size());
  for (const ParamView& v : views) {
    params.push_back(v.value);
    grads.push_back(v.grad);
  }
  optimizer.step(params, grads);
  return loss.loss;
}

// ------------------------------------------------------------ weights

namespace {

constexpr char kWeightMagic[4] = {'M', 'G', 'T', 'W'};
constexpr const char* kConfigPath = "config";

template <class T>
void put(std::vector<std::byte>& out, T value) {
  const auto* p = reinterpret_cast<const std::byte*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  template <class T>
  T get() {
    T value;
    need(sizeof(T));
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::span<const std::byte> take(std::size_t n) {
    need(n);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorKind::kParse, "weight file truncated at byte " + std::to_string(pos_));
    }
  }

  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

WeightRecord config_record(const NetConfig& c) {
  return {kConfigPath,
          {7},
          {static_cast<double>(c.base_width), static_cast<double>(c.num_classes),
           static_cast<double>(c.input_channels), static_cast<double>(c.groups),
           c.skip_connections ? 1.0 : 0.0,
           c.layout == DecoderLayout::kInterleaved ? 1.0 : 0.0, c.gn_epsilon}};
}

NetConfig config_from_record(const WeightRecord& r) {
  if (r.path != kConfigPath || r.data.size() != 7) {
    throw Error(ErrorKind::kPathMismatch, "first record must be the network config");
  }
  auto count = [](double v) {
    if (!(v >= 0.0) || v != std::floor(v) || v > 1e9) {
      throw Error(ErrorKind::kParse, "bad config value");
    }
    return static_cast<std::size_t>(v);
  };
  NetConfig c;
  c.base_width = count(r.data[0]);
  c.num_classes = static_cast<int>(count(r.data[1]));
  c.input_channels = count(r.data[2]);
  c.groups = count(r.data[3]);
  c.skip_connections = r.data[4] != 0.0;
  c.layout = r.data[5] != 0.0 ? DecoderLayout::kInterleaved : DecoderLayout::kStacked;
  c.gn_epsilon = r.data[6];
  return c;
}

}  // namespace

std::vector<std::byte> WeightStore::serialize() const {
  std::vector<std::byte> out;
  for (char c : kWeightMagic) out.push_back(static_cast<std::byte>(c));
  put<std::uint32_t>(out, kWeightFormatVersion);
  for (const WeightRecord& r : records) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.path.size()));
    for (char c : r.path) out.push_back(static_cast<std::byte>(c));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (std::uint64_t e : r.shape) put<std::uint64_t>(out, e);
    for (double v : r.data) put<double>(out, v);
  }
  return out;
}

WeightStore WeightStore::parse(std::span<const std::byte> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kWeightMagic, 4) != 0) {
    throw Error(ErrorKind::kVersionMismatch, "not an MGTW weight file");
  }
  if (bytes.size() < 8) throw Error(ErrorKind::kParse, "truncated weight header");
  Reader reader(bytes.subspan(4));
  const auto version = reader.get<std::uint32_t>();
  if (version != kWeightFormatVersion) {
    throw Error(ErrorKind::kVersionMismatch,
                "weight format version " + std::to_string(version) + ", expected " +
                    std::to_string(kWeightFormatVersion));
  }
  WeightStore store;
  while (!reader.done()) {
    WeightRecord r;
    const auto path_len = reader.get<std::uint32_t>();
    const auto path = reader.take(path_len);
    r.path.assign(reinterpret_cast<const char*>(path.data()), path.size());
    const auto rank = reader.get<std::uint32_t>();
    if (rank > 8) throw Error(ErrorKind::kParse, "implausible rank for " + r.path);
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      r.shape.push_back(reader.get<std::uint64_t>());
      count *= r.shape.back();
    }
    const auto payload = reader.take(count * sizeof(double));
    r.data.resize(count);
    if (count > 0) std::memcpy(r.data.data(), payload.data(), payload.size());
    store.records.push_back(std::move(r));
  }
  return store;
}

std::vector<std::byte> save_weights(Network& net) {
  WeightStore store;
  store.records.push_back(config_record(net.config()));
  for (const ParamView& v : net.parameters()) {
    store.records.push_back({v.path,
                             {v.shape.begin(), v.shape.end()},
                             {v.value.begin(), v.value.end()}});
  }
  return store.serialize();
}

Network load_weights(std::span<const std::byte> bytes) {
  const WeightStore store = WeightStore::parse(bytes);
  if (store.records.empty()) throw Error(ErrorKind::kParse, "weight file has no records");
  Network net(config_from_record(store.records.front()));
  std::vector<ParamView> views = net.parameters();
  if (store.records.size() != views.size() + 1) {
    throw Error(ErrorKind::kPathMismatch,
                "weight file has " + std::to_string(store.records.size() - 1) +
                    " tensors, network needs " + std::to_string(views.size()));
  }
  for (std::size_t i = 0; i < views.size(); ++i) {
    const WeightRecord& r = store.records[i + 1];
    const std::vector<std::uint64_t> expected(views[i].shape.begin(), views[i].shape.end());
    if (r.path != views[i].path || r.shape != expected) {
      throw Error(ErrorKind::kPathMismatch,
                  "record '" + r.path + "' does not match layer '" + views[i].path + "'");
    }
    std::copy(r.data.begin(), r.data.end(), views[i].value.begin());
  }
  return net;
}

GradCheckProblem network_problem(const NetConfig& config, Shape4 input,
                                 std::uint64_t seed) {
  struct State {
    explicit State(const NetConfig& c) : net(c) {}
    Network net;
    Tensor4 x, u;
  };
  auto state = std::make_shared<State>(config);
  Rng rng(seed);
  state->x = Tensor4(input);
  for (double& v : state->x.data()) v = rng.uniform();
  const Tensor4 probe = state->net.forward(state->x);
  state->u = Tensor4(probe.shape());
  for (double& v : state->u.data()) v = rng.normal();

  GradCheckProblem p;
  for (const ParamView& v : state->net.parameters()) p.params.push_back({v.path, v.value});
  p.params.push_back({"input", state->x.data()});
  p.objective = [s = state.get()] { return dot(s->net.forward(s->x), s->u); };
  p.gradient = [s = state.get()] {
    s->net.forward_train(s->x);
    const Tensor4 dx = s->net.backward(s->u);
    std::vector<std::vector<double>> out;
    for (const ParamView& v : s->net.parameters()) out.emplace_back(v.grad.begin(), v.grad.end());
    out.emplace_back(dx.data().begin(), dx.data().end());
    return out;
  };
  p.storage = state;
  return p;
}

}  // namespace nucleiquant
