#include "nucleiquant/optimizer.hpp"

#include <cmath>
#include <string>

#include "nucleiquant/error.hpp"

namespace nucleiquant {

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "ranger") return OptimizerKind::kRanger;
  throw Error(ErrorKind::kConfigError, "unknown optimizer '" + std::string(name) + "'");
}

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "ranger";
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) {
  if (!(config_.lr >= 0.0)) throw Error(ErrorKind::kConfigError, "lr must be >= 0");
  if (!(config_.lookahead_alpha > 0.0 && config_.lookahead_alpha <= 1.0)) {
    throw Error(ErrorKind::kConfigError, "lookahead alpha must lie in (0, 1]");
  }
  if (config_.lookahead_k == 0) {
    throw Error(ErrorKind::kConfigError, "lookahead k must be >= 1");
  }
}

double Optimizer::current_lr() const {
  if (config_.decay_every == 0) return config_.lr;
  const auto drops = static_cast<double>(step_ / config_.decay_every);
  return config_.lr * std::pow(config_.decay_factor, drops);
}

void Optimizer::step(std::span<const std::span<double>> params,
                     std::span<const std::span<const double>> grads) {
  if (params.size() != grads.size()) {
    throw Error(ErrorKind::kShapeError, "params/grads count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != grads[i].size()) {
      throw Error(ErrorKind::kShapeError, "param/grad size mismatch");
    }
  }
  const double lr = current_lr();
  ++step_;

  if (config_.kind == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (std::size_t j = 0; j < params[i].size(); ++j) {
        params[i][j] -= lr * grads[i][j];
      }
    }
    return;
  }

  if (slots_.empty()) {
    slots_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      slots_[i].exp_avg.assign(params[i].size(), 0.0);
      slots_[i].exp_avg_sq.assign(params[i].size(), 0.0);
      slots_[i].slow.assign(params[i].begin(), params[i].end());
    }
  } else if (slots_.size() != params.size()) {
    throw Error(ErrorKind::kShapeError, "parameter list changed between steps");
  }

  const double b1 = config_.beta1, b2 = config_.beta2;
  const auto t = static_cast<double>(step_);
  const double b2t = std::pow(b2, t);
  const double sma_max = 2.0 / (1.0 - b2) - 1.0;
  const double sma = sma_max - 2.0 * t * b2t / (1.0 - b2t);
  const bool rectified = sma > config_.sma_threshold;
  double step_size = 1.0 / (1.0 - std::pow(b1, t));
  if (rectified) {
    step_size *= std::sqrt((1.0 - b2t) * (sma - 4.0) / (sma_max - 4.0) *
                           (sma - 2.0) / sma * sma_max / (sma_max - 2.0));
  }
  const bool sync = step_ % config_.lookahead_k == 0;

  for (std::size_t i = 0; i < params.size(); ++i) {
    Slot& slot = slots_[i];
    if (slot.exp_avg.size() != params[i].size()) {
      throw Error(ErrorKind::kShapeError, "parameter size changed between steps");
    }
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      const double g = grads[i][j];
      slot.exp_avg_sq[j] = b2 * slot.exp_avg_sq[j] + (1.0 - b2) * g * g;
      slot.exp_avg[j] = b1 * slot.exp_avg[j] + (1.0 - b1) * g;
      const double update =
          rectified ? slot.exp_avg[j] / (std::sqrt(slot.exp_avg_sq[j]) + config_.epsilon)
                    : slot.exp_avg[j];
      params[i][j] -= lr * step_size * update;
      if (sync) {
        slot.slow[j] += config_.lookahead_alpha * (params[i][j] - slot.slow[j]);
        params[i][j] = slot.slow[j];
      }
    }
  }
}

}  // namespace nucleiquant
