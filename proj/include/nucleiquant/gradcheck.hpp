#pragma once

// Finite-difference verification of hand-written backward passes.
//
// A problem is a scalar objective over named parameter groups plus the
// analytic gradient of that objective. For every group the harness compares
// central differences along seeded random unit directions and along a few
// single coordinates against the analytic directional derivative.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nucleiquant/tensor.hpp"

namespace nucleiquant {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  std::size_t directions = 3;
  std::size_t coordinates = 6;
  std::uint64_t seed = 1;
};

struct GradCheckParam {
  std::string name;
  std::span<double> values;
};

struct GradCheckProblem {
  std::vector<GradCheckParam> params;
  std::function<double()> objective;
  // One vector per entry of params, same sizes.
  std::function<std::vector<std::vector<double>>()> gradient;
  // Keeps the buffers behind `params` alive.
  std::shared_ptr<void> storage;
};

struct GradCheckGroup {
  std::string name;
  std::size_t size = 0;
  double max_rel_error = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::string op;
  std::string shape;
  double step = 0.0;
  double tolerance = 0.0;
  std::vector<GradCheckGroup> groups;
  bool pass = false;

  double max_rel_error() const;
  nlohmann::json to_json() const;
};

GradCheckReport grad_check(const std::string& op, const GradCheckProblem& problem,
                           const GradCheckOptions& options);

// Seeded problems for each kernel. The objective is <op(inputs), u> for a
// fixed random u, except smooth_l1 whose loss is already scalar; its inputs
// keep |target - pred| at least 0.2 away from the kink at 1.
GradCheckProblem mish_problem(Shape4 shape, std::uint64_t seed);
GradCheckProblem groupnorm_problem(Shape4 shape, std::size_t groups,
                                   std::uint64_t seed);
GradCheckProblem conv2d_problem(Shape4 input, std::size_t out_channels,
                                std::size_t kernel, std::size_t stride,
                                std::size_t padding, std::uint64_t seed);
GradCheckProblem transp_conv2d_problem(Shape4 input, std::size_t out_channels,
                                       std::size_t kernel, std::size_t stride,
                                       std::size_t padding, std::uint64_t seed);
GradCheckProblem smooth_l1_problem(Shape4 shape, std::uint64_t seed);

std::string to_string(const Shape4& shape);

}  // namespace nucleiquant
