#pragma once

// MGTUNet assembled from the kernels in kernels.hpp.
//
// Encoder: four stages of ConvBlock -> ConvPool. A ConvBlock is two
// [conv3x3 s1 p1 -> Mish -> GroupNorm] units, a ConvPool one
// [conv3x3 s2 p1 -> Mish -> GroupNorm] unit that doubles the width.
// Decoder: four TranspConvBlocks [transposed conv 2x2 s2 -> GroupNorm], each
// optionally followed by concatenation of the matching encoder ConvBlock
// output, two ConvBlocks and a 1x1 conv head with num_classes + 1 channels
// (channel 0 is background).

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nucleiquant/dataset.hpp"
#include "nucleiquant/gradcheck.hpp"
#include "nucleiquant/kernels.hpp"
#include "nucleiquant/optimizer.hpp"
#include "nucleiquant/tensor.hpp"

namespace nucleiquant {

// Where the decoder's two ConvBlocks sit: both after the fourth
// TranspConvBlock, or one after the second and one after the fourth.
enum class DecoderLayout { kStacked, kInterleaved };

struct NetConfig {
  std::size_t base_width = 32;
  int num_classes = 6;
  std::size_t input_channels = 3;
  std::size_t groups = 8;
  bool skip_connections = true;
  DecoderLayout layout = DecoderLayout::kStacked;
  double gn_epsilon = 1e-5;
  std::uint64_t seed = 0;
  // Optional expected input extents, checked by build(); 0 means unchecked.
  std::size_t input_height = 0;
  std::size_t input_width = 0;

  std::size_t output_channels() const {
    return static_cast<std::size_t>(num_classes) + 1;
  }
};

enum class BlockKind { kConvBlock, kConvPool, kTranspConvBlock, kFinalConv };

std::string_view to_string(BlockKind kind);

struct BlockSpec {
  BlockKind kind;
  std::size_t in_channels;
  std::size_t out_channels;
  std::string name;
  bool saves_skip = false;    // output is kept for a decoder concatenation
  bool concat_skip = false;   // output is concatenated with a saved skip
};

// Blocks in execution order.
std::vector<BlockSpec> block_plan(const NetConfig& config);

// Closed-form learnable parameter count of one block.
std::size_t parameter_count(const BlockSpec& block);

struct ParamView {
  std::string path;
  std::vector<std::size_t> shape;
  std::span<double> value;
  std::span<double> grad;
};

class Network {
 public:
  // Throws Error(kConfigError) when base_width < groups, groups does not
  // divide base_width, num_classes < 1, or the optional input extents are
  // not multiples of 16.
  explicit Network(const NetConfig& config);

  const NetConfig& config() const { return config_; }
  const std::vector<BlockSpec>& plan() const { return plan_; }

  // Deterministic inference. Throws Error(kShapeError) for a wrong channel
  // count or extents not divisible by 16.
  Tensor4 forward(const Tensor4& x) const;

  // Forward that records what backward() needs.
  Tensor4 forward_train(const Tensor4& x);
  // Gradient of <output, upstream>; overwrites parameter gradients and
  // returns the input gradient. Requires a preceding forward_train.
  Tensor4 backward(const Tensor4& upstream);

  std::vector<ParamView> parameters();
  std::size_t parameter_count() const;
  void zero_grad();

 private:
  struct Layer {
    Conv2dParams conv;
    bool transposed = false;
    bool activation = false;
    bool normalized = false;
    GroupNormParams norm;
    Tensor4 dweights;
    std::vector<double> dbias, dgamma, dbeta;
    std::string path;
  };
  struct Block {
    BlockSpec spec;
    std::vector<Layer> layers;
  };
  struct LayerTape {
    Tensor4 input;
    Tensor4 pre_activation;
    GroupNormCache norm;
  };

  static Tensor4 run_layer(const Layer& layer, const Tensor4& x, LayerTape* tape);
  static Tensor4 backprop_layer(Layer& layer, const LayerTape& tape,
                                const Tensor4& upstream);
  Tensor4 run(const Tensor4& x, std::vector<LayerTape>* tape) const;
  void check_input(const Tensor4& x) const;

  NetConfig config_;
  std::vector<BlockSpec> plan_;
  std::vector<Block> blocks_;
  std::vector<LayerTape> tape_;
};

Network build(const NetConfig& config);

// (n, 3, H, W) in [0, 1] from u8 patches.
Tensor4 images_to_tensor(std::span<const ImagePatch> images);

// (1, C + 1, H, W) one-hot per-class maps; channel 0 marks background.
// Throws Error(kLabelInconsistency) on invalid labels.
Tensor4 targets_from_labels(const LabelMap& labels, int num_classes);
Tensor4 targets_from_labels(std::span<const LabelMap> labels, int num_classes);

// Per-pixel argmax (ties resolve to the lowest channel), then connected
// components per class; see label_components.
LabelMap decode_instances(const Tensor4& logits, std::size_t sample,
                          std::size_t min_size);
std::vector<LabelMap> decode_instances(const Tensor4& logits, std::size_t min_size);

// One forward, SmoothL1 against targets, full backward and one optimizer
// step. Returns the loss before the step.
double train_step(Network& net, const Tensor4& images, const Tensor4& targets,
                  Optimizer& optimizer);

// Weight files: "MGTW", u32 version, then records of
// (u32 path length, path bytes, u32 rank, u64 extents, f64 payload), all
// little-endian. The first record, "config", carries the NetConfig.
inline constexpr std::uint32_t kWeightFormatVersion = 1;

struct WeightRecord {
  std::string path;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;

  friend bool operator==(const WeightRecord&, const WeightRecord&) = default;
};

struct WeightStore {
  std::vector<WeightRecord> records;

  std::vector<std::byte> serialize() const;
  // Throws Error(kVersionMismatch) for a wrong magic or version and
  // Error(kParse) for truncated or malformed records.
  static WeightStore parse(std::span<const std::byte> bytes);

  friend bool operator==(const WeightStore&, const WeightStore&) = default;
};

std::vector<std::byte> save_weights(Network& net);
// Throws Error(kPathMismatch) when the stored layers do not match the
// network the stored config builds.
Network load_weights(std::span<const std::byte> bytes);

// <forward(x), u> over every parameter group plus the input.
GradCheckProblem network_problem(const NetConfig& config, Shape4 input,
                                 std::uint64_t seed);

}  // namespace nucleiquant
