// nucleiquant: evaluation, counting, gradient checks, toy training and
// inference over lizard-format NPY files.
//
// Exit codes: 0 ok, 1 usage, 2 parse, 3 validation, 4 shape mismatch,
// 5 gradient check failure, 6 non-finite loss, 7 weight/config mismatch.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "nucleiquant/dataset.hpp"
#include "nucleiquant/error.hpp"
#include "nucleiquant/gradcheck_suite.hpp"
#include "nucleiquant/metrics.hpp"
#include "nucleiquant/mgtunet.hpp"
#include "nucleiquant/npy.hpp"
#include "nucleiquant/optimizer.hpp"
#include "nucleiquant/parallel.hpp"
#include "nucleiquant/synthetic.hpp"

namespace nq = nucleiquant;

namespace {

enum ExitCode {
  kOk = 0,
  kUsage = 1,
  kParse = 2,
  kValidation = 3,
  kShape = 4,
  kGradCheck = 5,
  kNonFinite = 6,
  kWeights = 7,
};

struct Failure {
  int code;
  std::string message;
};

bool is_parse_kind(nq::ErrorKind kind) {
  return kind == nq::ErrorKind::kParse || kind == nq::ErrorKind::kBadMagic ||
         kind == nq::ErrorKind::kUnsupportedDtype ||
         kind == nq::ErrorKind::kHeaderShapeMismatch;
}

nq::NpyArray read_array(const std::string& path) {
  try {
    return nq::load_npy_file(path);
  } catch (const nq::Error& e) {
    throw Failure{kParse, path + ": " + e.what()};
  }
}

std::string shape_text(const std::vector<std::size_t>& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ", ";
    out += std::to_string(shape[i]);
  }
  if (shape.size() == 1) out += ",";
  return out + ")";
}

std::vector<nq::LabelMap> read_labels(const std::string& path, int classes,
                                      nq::NpyArray* raw = nullptr) {
  nq::NpyArray array = read_array(path);
  try {
    auto maps = nq::labels_from_array(array, classes);
    if (raw != nullptr) *raw = std::move(array);
    return maps;
  } catch (const nq::Error& e) {
    throw Failure{is_parse_kind(e.kind()) ? kParse : kValidation, path + ": " + e.what()};
  }
}

std::vector<nq::ImagePatch> read_images(const std::string& path) {
  const nq::NpyArray array = read_array(path);
  try {
    return nq::images_from_array(array);
  } catch (const nq::Error& e) {
    throw Failure{kValidation, path + ": " + e.what()};
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Failure{kParse, "cannot write " + path};
  out << text;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// ------------------------------------------------------------ evaluate

struct EvaluateArgs {
  std::string gt, pred, out, format;
  int classes = 6;
  bool per_image = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
  nq::NpyArray gt_raw, pred_raw;
  const auto gt = read_labels(a.gt, a.classes, &gt_raw);
  const auto pred = read_labels(a.pred, a.classes, &pred_raw);
  if (gt_raw.shape() != pred_raw.shape()) {
    throw Failure{kShape, "shape mismatch: gt " + shape_text(gt_raw.shape()) +
                              " vs pred " + shape_text(pred_raw.shape())};
  }
  nq::EvaluateOptions options;
  options.aggregation = a.per_image ? nq::Aggregation::kPerImage : nq::Aggregation::kDataset;
  options.threads = nq::worker_count();
  const nq::MetricsReport report = nq::evaluate(gt, pred, a.classes, options);

  const bool csv = a.format == "csv" || (a.format.empty() && ends_with(a.out, ".csv"));
  write_text(a.out, csv ? report.to_csv() : report.to_json().dump(2) + "\n");
  return kOk;
}

// --------------------------------------------------------------- count

int cmd_count(const std::string& labels_path, int classes, const std::string& out) {
  const auto labels = read_labels(labels_path, classes);
  std::vector<std::vector<std::size_t>> counts;
  counts.reserve(labels.size());
  for (const auto& map : labels) counts.push_back(nq::class_counts(map, classes));
  write_text(out, nq::counts_csv(counts, classes));
  return kOk;
}

// ----------------------------------------------------------- gradcheck

int cmd_gradcheck(double tol, std::uint64_t seed, const std::string& out) {
  nq::GradCheckOptions options;
  options.tolerance = tol;
  options.seed = seed;
  const auto reports = nq::run_gradcheck_suite(options);
  bool pass = true;
  nlohmann::json all = nlohmann::json::array();
  for (const auto& r : reports) {
    std::printf("%s %-28s %-10s max_rel_err %.3e (tol %.0e)\n", r.pass ? "PASS" : "FAIL",
                r.op.c_str(), r.shape.c_str(), r.max_rel_error(), r.tolerance);
    pass = pass && r.pass;
    all.push_back(r.to_json());
  }
  if (!out.empty()) write_text(out, all.dump(2) + "\n");
  std::printf("%s\n", pass ? "gradcheck: PASS" : "gradcheck: FAIL");
  return pass ? kOk : kGradCheck;
}

// ----------------------------------------------------------- train-toy

struct TrainArgs {
  std::string images, labels, save, optimizer = "ranger", layout = "stacked";
  std::size_t steps = 50, batch = 8, base_width = 8, groups = 8;
  double lr = 1e-3;
  std::uint64_t seed = 7;
  int classes = 6;
  bool no_skip = false;
  bool augment = false;
  std::size_t decay_every = 0;
};

nq::DecoderLayout parse_layout(const std::string& name) {
  if (name == "stacked") return nq::DecoderLayout::kStacked;
  if (name == "interleaved") return nq::DecoderLayout::kInterleaved;
  throw Failure{kUsage, "unknown layout '" + name + "'"};
}

int cmd_train_toy(const TrainArgs& a) {
  const nq::NpyArray image_array = read_array(a.images);
  const nq::NpyArray label_array = read_array(a.labels);
  std::vector<nq::ImagePatch> images;
  std::vector<nq::LabelMap> labels;
  try {
    const nq::LabeledPatchSet set(image_array, label_array, a.classes);
    for (std::size_t i = 0; i < set.size(); ++i) {
      images.push_back(set.image(i));
      labels.push_back(set.label(i));
    }
  } catch (const nq::Error& e) {
    throw Failure{kValidation, e.what()};
  }
  if (images.empty()) throw Failure{kValidation, "dataset is empty"};

  nq::NetConfig config;
  config.base_width = a.base_width;
  config.groups = a.groups;
  config.num_classes = a.classes;
  config.skip_connections = !a.no_skip;
  config.layout = parse_layout(a.layout);
  config.seed = a.seed;
  config.input_height = images.front().height;
  config.input_width = images.front().width;
  std::optional<nq::Network> net;
  try {
    net.emplace(config);
  } catch (const nq::Error& e) {
    throw Failure{kWeights, e.what()};
  }

  nq::OptimizerConfig opt;
  opt.kind = nq::parse_optimizer_kind(a.optimizer);
  opt.lr = a.lr;
  opt.decay_every = a.decay_every;
  nq::Optimizer optimizer(opt);
  nq::Rng rng(a.seed);

  std::size_t cursor = 0;
  auto next_batch = [&] {
    std::vector<nq::ImagePatch> bi;
    std::vector<nq::LabelMap> bl;
    for (std::size_t j = 0; j < a.batch; ++j) {
      const std::size_t index = cursor++ % images.size();
      if (a.augment) {
        const auto op = nq::kAllAugmentOps[rng.below(std::size(nq::kAllAugmentOps))];
        auto [img, lab] = nq::augment(images[index], labels[index], op);
        bi.push_back(std::move(img));
        bl.push_back(std::move(lab));
      } else {
        bi.push_back(images[index]);
        bl.push_back(labels[index]);
      }
    }
    return std::pair{nq::images_to_tensor(bi), nq::targets_from_labels(bl, a.classes)};
  };
  auto check_finite = [](double loss, std::size_t step) {
    if (!std::isfinite(loss)) {
      throw Failure{kNonFinite, "non-finite loss at step " + std::to_string(step)};
    }
  };

  std::vector<double> trace;
  if (a.steps == 0) {
    const auto [x, t] = next_batch();
    const double loss = nq::smooth_l1(net->forward(x), t).loss;
    check_finite(loss, 0);
    std::printf("step 0 loss %.17g\n", loss);
    trace.push_back(loss);
  }
  for (std::size_t step = 1; step <= a.steps; ++step) {
    const auto [x, t] = next_batch();
    const double loss = nq::train_step(*net, x, t, optimizer);
    check_finite(loss, step);
    std::printf("step %zu loss %.17g\n", step, loss);
    trace.push_back(loss);
    if (trace.size() >= 5) {
      const auto last = std::span(trace).last(5);
      const auto [lo, hi] = std::minmax_element(last.begin(), last.end());
      if (*hi - *lo < 1e-9) {
        std::printf("early stop at step %zu: loss constant over 5 steps\n", step);
        break;
      }
    }
  }
  if (a.steps > 0) {
    cursor = 0;
    const auto [x, t] = next_batch();
    const double final_loss = nq::smooth_l1(net->forward(x), t).loss;
    check_finite(final_loss, a.steps);
    std::printf("initial_loss %.17g\nfinal_loss %.17g\n", trace.front(), final_loss);
  }
  if (!a.save.empty()) {
    nq::write_file_bytes(a.save, nq::save_weights(*net));
  }
  return kOk;
}

// ------------------------------------------------------------- forward

int cmd_forward(const std::string& weights, const std::string& images_path,
                const std::string& out, std::size_t min_size) {
  std::optional<nq::Network> net;
  try {
    net.emplace(nq::load_weights(nq::read_file_bytes(weights)));
  } catch (const nq::Error& e) {
    throw Failure{e.kind() == nq::ErrorKind::kParse ? kParse : kWeights,
                  weights + ": " + e.what()};
  }
  const auto images = read_images(images_path);
  std::vector<nq::LabelMap> predictions;
  predictions.reserve(images.size());
  for (const auto& image : images) {
    nq::Tensor4 logits;
    try {
      logits = net->forward(nq::images_to_tensor(std::span(&image, 1)));
    } catch (const nq::Error& e) {
      throw Failure{kWeights, std::string("network/config mismatch: ") + e.what()};
    }
    predictions.push_back(nq::decode_instances(logits, 0, min_size));
  }
  if (images.empty()) {
    const auto shape = nq::load_npy_file(images_path).shape();
    nq::save_npy_file(out, nq::NpyArray({0, shape[1], shape[2], 2},
                                        std::vector<std::uint16_t>{}));
    return kOk;
  }
  nq::save_npy_file(out, nq::labels_to_array(predictions));
  return kOk;
}

// ------------------------------------------------------------- inspect

int cmd_inspect(const std::string& path) {
  const nq::NpyArray array = read_array(path);
  std::printf("dtype: %s\n", std::string(nq::descr(array.dtype())).c_str());
  std::printf("shape: %s\n", shape_text(array.shape()).c_str());
  std::printf("fortran_order: %s\n", array.fortran_order() ? "True" : "False");
  const auto& shape = array.shape();
  const std::size_t channels = shape.size() >= 3 ? shape.back() : 1;
  const std::size_t count = array.element_count();
  for (std::size_t c = 0; c < channels && count > 0; ++c) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = c; i < count; i += channels) {
      const double v = array.as_double(i);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    std::printf("channel %zu: min %.17g max %.17g\n", c, lo, hi);
  }
  return kOk;
}

// --------------------------------------------------------------- synth

int cmd_synth(const nq::SyntheticSpec& spec, const std::string& images,
              const std::string& labels) {
  const nq::SyntheticSet set = nq::make_synthetic_set(spec);
  nq::save_npy_file(images, nq::images_to_array(set.images));
  nq::save_npy_file(labels, nq::labels_to_array(set.labels));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nuclei instance-segmentation metrics and MGTUNet toolkit"};
  app.require_subcommand(1);

  EvaluateArgs eval;
  auto* evaluate = app.add_subcommand("evaluate", "PQ / mPQ / R2 report for two label files");
  evaluate->add_option("--gt", eval.gt, "Ground-truth labels.npy")->required();
  evaluate->add_option("--pred", eval.pred, "Predicted labels.npy")->required();
  evaluate->add_option("--classes", eval.classes, "Number of nucleus classes")
      ->capture_default_str()->check(CLI::PositiveNumber);
  evaluate->add_flag("--per-image", eval.per_image, "Average PQ per image instead of pooling");
  evaluate->add_option("--out", eval.out, "Report path (stdout when omitted)");
  evaluate->add_option("--format", eval.format, "json or csv (default: from --out extension, else json)")
      ->check(CLI::IsMember({"json", "csv"}));

  std::string count_labels, count_out;
  int count_classes = 6;
  auto* count = app.add_subcommand("count", "Per-patch nucleus counts per class");
  count->add_option("--labels", count_labels, "labels.npy")->required();
  count->add_option("--classes", count_classes, "Number of nucleus classes")
      ->capture_default_str()->check(CLI::PositiveNumber);
  count->add_option("--out", count_out, "CSV path (stdout when omitted)");

  double tol = 1e-5;
  std::uint64_t gc_seed = 1;
  std::string gc_out;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every kernel");
  gradcheck->add_option("--tol", tol, "Relative tolerance for kernels (x10 end-to-end)")
      ->capture_default_str();
  gradcheck->add_option("--seed", gc_seed, "Seed")->capture_default_str();
  gradcheck->add_option("--out", gc_out, "Write JSON reports here");

  TrainArgs train;
  auto* train_toy = app.add_subcommand("train-toy", "Train a small MGTUNet on a toy dataset");
  train_toy->add_option("--images", train.images, "images.npy (u8 [N,H,W,3])")->required();
  train_toy->add_option("--labels", train.labels, "labels.npy (u16 [N,H,W,2])")->required();
  train_toy->add_option("--steps", train.steps, "Optimizer steps")->capture_default_str();
  train_toy->add_option("--optimizer", train.optimizer, "sgd or ranger")
      ->capture_default_str()->check(CLI::IsMember({"sgd", "ranger"}));
  train_toy->add_option("--lr", train.lr, "Learning rate")->capture_default_str();
  train_toy->add_option("--decay-every", train.decay_every, "Multiply lr by 0.1 every N steps (0: never)")
      ->capture_default_str();
  train_toy->add_option("--batch", train.batch, "Batch size")->capture_default_str()
      ->check(CLI::PositiveNumber);
  train_toy->add_option("--seed", train.seed, "Seed")->capture_default_str();
  train_toy->add_option("--classes", train.classes, "Number of nucleus classes")
      ->capture_default_str()->check(CLI::PositiveNumber);
  train_toy->add_option("--base-width", train.base_width, "Channels of the first ConvBlock")
      ->capture_default_str();
  train_toy->add_option("--groups", train.groups, "GroupNorm groups")->capture_default_str();
  train_toy->add_option("--layout", train.layout, "Decoder layout: stacked or interleaved")
      ->capture_default_str();
  train_toy->add_flag("--no-skip", train.no_skip, "Disable skip connections");
  train_toy->add_flag("--augment", train.augment, "Random flips/rotations per sample");
  train_toy->add_option("--save", train.save, "Write weights (.mgtw) here");

  std::string fw_weights, fw_images, fw_out;
  std::size_t min_size = 3;
  auto* forward = app.add_subcommand("forward", "Predict instance/class maps");
  forward->add_option("--weights", fw_weights, "Weight file (.mgtw)")->required();
  forward->add_option("--images", fw_images, "images.npy")->required();
  forward->add_option("--out", fw_out, "Output labels.npy")->required();
  forward->add_option("--min-size", min_size, "Smallest kept component in pixels")
      ->capture_default_str();

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "Print dtype, shape and per-channel range");
  inspect->add_option("--file", inspect_path, "Any .npy file")->required();

  nq::SyntheticSpec synth_spec;
  std::string synth_images, synth_labels;
  std::size_t synth_size = 32;
  auto* synth = app.add_subcommand("synth", "Write a seeded synthetic dataset");
  synth->add_option("--images", synth_images, "Output images.npy")->required();
  synth->add_option("--labels", synth_labels, "Output labels.npy")->required();
  synth->add_option("--count", synth_spec.count, "Patches")->capture_default_str();
  synth->add_option("--size", synth_size, "Patch height and width")->capture_default_str();
  synth->add_option("--classes", synth_spec.num_classes, "Number of nucleus classes")
      ->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--max-nuclei", synth_spec.max_nuclei, "Nuclei per patch, at most")
      ->capture_default_str();
  synth->add_option("--seed", synth_spec.seed, "Seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*evaluate) return cmd_evaluate(eval);
    if (*count) return cmd_count(count_labels, count_classes, count_out);
    if (*gradcheck) return cmd_gradcheck(tol, gc_seed, gc_out);
    if (*train_toy) return cmd_train_toy(train);
    if (*forward) return cmd_forward(fw_weights, fw_images, fw_out, min_size);
    if (*inspect) return cmd_inspect(inspect_path);
    if (*synth) {
      synth_spec.height = synth_spec.width = synth_size;
      return cmd_synth(synth_spec, synth_images, synth_labels);
    }
  } catch (const Failure& f) {
    std::fprintf(stderr, "error: %s\n", f.message.c_str());
    return f.code;
  } catch (const nq::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    switch (e.kind()) {
      case nq::ErrorKind::kShapeMismatch: return kShape;
      case nq::ErrorKind::kVersionMismatch:
      case nq::ErrorKind::kPathMismatch:
      case nq::ErrorKind::kConfigError: return kWeights;
      default: return is_parse_kind(e.kind()) ? kParse : kValidation;
    }
  }
  return kUsage;
}
