#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace nucleiquant {

enum class OptimizerKind { kSgd, kRanger };

OptimizerKind parse_optimizer_kind(std::string_view name);
std::string_view to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kRanger;
  double lr = 1e-3;
  // RAdam inner step.
  double beta1 = 0.95;
  double beta2 = 0.999;
  double epsilon = 1e-5;
  double sma_threshold = 5.0;
  // Lookahead.
  std::size_t lookahead_k = 6;
  double lookahead_alpha = 0.5;
  // Step decay: lr *= decay_factor every decay_every steps; 0 disables.
  std::size_t decay_every = 0;
  double decay_factor = 0.1;
};

// Plain SGD, or Ranger: RAdam followed every k steps by a lookahead blend
// slow += alpha * (fast - slow); fast = slow.
class Optimizer {
 public:
  // Throws Error(kConfigError) for lr < 0, alpha outside (0, 1], or k == 0.
  explicit Optimizer(OptimizerConfig config);

  // params[i] and grads[i] must keep the same sizes across calls.
  void step(std::span<const std::span<double>> params,
            std::span<const std::span<const double>> grads);

  const OptimizerConfig& config() const { return config_; }
  std::uint64_t steps() const { return step_; }
  double current_lr() const;

 private:
  struct Slot {
    std::vector<double> exp_avg;
    std::vector<double> exp_avg_sq;
    std::vector<double> slow;
  };

  OptimizerConfig config_;
  std::uint64_t step_ = 0;
  std::vector<Slot> slots_;
};

}  // namespace nucleiquant
