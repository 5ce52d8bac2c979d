#include "nucleiquant/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "nucleiquant/error.hpp"
#include "nucleiquant/kernels.hpp"
#include "nucleiquant/rng.hpp"

namespace nucleiquant {

namespace {

double directional(std::span<const double> grad, std::span<const double> dir) {
  double sum = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) sum += grad[i] * dir[i];
  return sum;
}

// Central difference of the objective along `dir` for one parameter group.
double central_difference(const GradCheckProblem& problem, std::span<double> values,
                          std::span<const double> dir, double h) {
  const std::vector<double> saved(values.begin(), values.end());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = saved[i] + h * dir[i];
  const double plus = problem.objective();
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = saved[i] - h * dir[i];
  const double minus = problem.objective();
  std::copy(saved.begin(), saved.end(), values.begin());
  return (plus - minus) / (2.0 * h);
}

void fill_normal(Rng& rng, std::span<double> out, double scale = 1.0) {
  for (double& v : out) v = scale * rng.normal();
}

Tensor4 random_tensor(Rng& rng, Shape4 shape, double scale = 1.0) {
  Tensor4 t(shape);
  fill_normal(rng, t.data(), scale);
  return t;
}

}  // namespace

std::string to_string(const Shape4& s) {
  return std::to_string(s.n) + "x" + std::to_string(s.c) + "x" +
         std::to_string(s.h) + "x" + std::to_string(s.w);
}

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& g : groups) worst = std::max(worst, g.max_rel_error);
  return worst;
}

nlohmann::json GradCheckReport::to_json() const {
  nlohmann::json groups_json = nlohmann::json::array();
  for (const auto& g : groups) {
    groups_json.push_back({{"name", g.name},
                           {"size", g.size},
                           {"max_rel_error", g.max_rel_error},
                           {"pass", g.pass}});
  }
  return {{"op", op},
          {"shape", shape},
          {"step", step},
          {"tolerance", tolerance},
          {"max_rel_error", max_rel_error()},
          {"pass", pass},
          {"groups", groups_json}};
}

GradCheckReport grad_check(const std::string& op, const GradCheckProblem& problem,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  report.op = op;
  report.step = options.step;
  report.tolerance = options.tolerance;
  report.pass = true;

  const std::vector<std::vector<double>> analytic = problem.gradient();
  if (analytic.size() != problem.params.size()) {
    throw Error(ErrorKind::kShapeError, "gradient group count mismatch");
  }
  // Derivatives far below the largest one anywhere in the problem are
  // judged against that scale. Exactly-cancelling parameters (a bias feeding
  // a one-channel norm group) otherwise compare round-off against round-off.
  double scale = 0.0;
  for (const auto& g : analytic) {
    for (double v : g) scale = std::max(scale, std::abs(v));
  }
  const double floor = 1e-3 * scale + 1e-12;
  Rng rng(options.seed);
  for (std::size_t gi = 0; gi < problem.params.size(); ++gi) {
    const GradCheckParam& param = problem.params[gi];
    const std::vector<double>& grad = analytic[gi];
    if (grad.size() != param.values.size()) {
      throw Error(ErrorKind::kShapeError, "gradient size mismatch for " + param.name);
    }
    GradCheckGroup group{param.name, grad.size(), 0.0, true};
    auto record = [&](double numeric, double exact) {
      const double denom = std::max({std::abs(numeric), std::abs(exact), floor});
      group.max_rel_error = std::max(group.max_rel_error,
                                     std::abs(numeric - exact) / denom);
    };

    std::vector<double> dir(grad.size());
    for (std::size_t k = 0; k < options.directions && !dir.empty(); ++k) {
      fill_normal(rng, dir);
      double norm = 0.0;
      for (double v : dir) norm += v * v;
      norm = std::sqrt(norm);
      for (double& v : dir) v /= norm;
      record(central_difference(problem, param.values, dir, options.step),
             directional(grad, dir));
    }
    for (std::size_t k = 0; k < options.coordinates && !dir.empty(); ++k) {
      std::fill(dir.begin(), dir.end(), 0.0);
      const std::size_t index = rng.below(dir.size());
      dir[index] = 1.0;
      record(central_difference(problem, param.values, dir, options.step),
             grad[index]);
    }
    group.pass = group.max_rel_error <= options.tolerance;
    report.pass = report.pass && group.pass;
    report.groups.push_back(group);
  }
  return report;
}

GradCheckProblem mish_problem(Shape4 shape, std::uint64_t seed) {
  struct State {
    Tensor4 x, u;
  };
  Rng rng(seed);
  auto state = std::make_shared<State>(State{random_tensor(rng, shape, 2.0),
                                             random_tensor(rng, shape)});
  GradCheckProblem p;
  p.params = {{"x", state->x.data()}};
  p.objective = [s = state.get()] { return dot(mish_forward(s->x), s->u); };
  p.gradient = [s = state.get()] {
    const Tensor4 dx = mish_backward(s->x, s->u);
    return std::vector<std::vector<double>>{{dx.data().begin(), dx.data().end()}};
  };
  p.storage = state;
  return p;
}

GradCheckProblem groupnorm_problem(Shape4 shape, std::size_t groups,
                                   std::uint64_t seed) {
  struct State {
    Tensor4 x, u;
    GroupNormParams params;
  };
  Rng rng(seed);
  auto state = std::make_shared<State>();
  state->x = random_tensor(rng, shape);
  state->u = random_tensor(rng, shape);
  state->params = GroupNormParams::identity(shape.c, groups);
  for (double& g : state->params.gamma) g = rng.uniform(0.5, 1.5);
  for (double& b : state->params.beta) b = rng.uniform(-0.5, 0.5);

  GradCheckProblem p;
  p.params = {{"x", state->x.data()},
              {"gamma", state->params.gamma},
              {"beta", state->params.beta}};
  p.objective = [s = state.get()] {
    return dot(groupnorm_forward(s->x, s->params).y, s->u);
  };
  p.gradient = [s = state.get()] {
    const auto fwd = groupnorm_forward(s->x, s->params);
    const auto g = groupnorm_backward(fwd.cache, s->u);
    return std::vector<std::vector<double>>{
        {g.dx.data().begin(), g.dx.data().end()}, g.dgamma, g.dbeta};
  };
  p.storage = state;
  return p;
}

namespace {

struct ConvState {
  Tensor4 x, u;
  Conv2dParams params;
};

GradCheckProblem conv_like_problem(std::shared_ptr<ConvState> state,
                                   bool transposed) {
  GradCheckProblem p;
  p.params = {{"x", state->x.data()},
              {"weights", state->params.weights.data()},
              {"bias", state->params.bias}};
  p.objective = [s = state.get(), transposed] {
    const Tensor4 y = transposed ? transp_conv2d_forward(s->x, s->params)
                                 : conv2d_forward(s->x, s->params);
    return dot(y, s->u);
  };
  p.gradient = [s = state.get(), transposed] {
    const Conv2dGrads g = transposed ? transp_conv2d_backward(s->x, s->params, s->u)
                                     : conv2d_backward(s->x, s->params, s->u);
    return std::vector<std::vector<double>>{
        {g.dx.data().begin(), g.dx.data().end()},
        {g.dweights.data().begin(), g.dweights.data().end()},
        g.dbias};
  };
  p.storage = state;
  return p;
}

}  // namespace

GradCheckProblem conv2d_problem(Shape4 input, std::size_t out_channels,
                                std::size_t kernel, std::size_t stride,
                                std::size_t padding, std::uint64_t seed) {
  Rng rng(seed);
  auto state = std::make_shared<ConvState>();
  state->x = random_tensor(rng, input);
  state->params.weights = random_tensor(rng, {out_channels, input.c, kernel, kernel}, 0.5);
  state->params.bias.resize(out_channels);
  fill_normal(rng, state->params.bias, 0.1);
  state->params.stride = stride;
  state->params.padding = padding;
  const std::size_t oh = conv_output_extent(input.h, kernel, padding, stride);
  const std::size_t ow = conv_output_extent(input.w, kernel, padding, stride);
  state->u = random_tensor(rng, {input.n, out_channels, oh, ow});
  return conv_like_problem(state, false);
}

GradCheckProblem transp_conv2d_problem(Shape4 input, std::size_t out_channels,
                                       std::size_t kernel, std::size_t stride,
                                       std::size_t padding, std::uint64_t seed) {
  Rng rng(seed);
  auto state = std::make_shared<ConvState>();
  state->x = random_tensor(rng, input);
  state->params.weights = random_tensor(rng, {input.c, out_channels, kernel, kernel}, 0.5);
  state->params.bias.resize(out_channels);
  fill_normal(rng, state->params.bias, 0.1);
  state->params.stride = stride;
  state->params.padding = padding;
  const std::size_t oh = transp_conv_output_extent(input.h, kernel, padding, stride);
  const std::size_t ow = transp_conv_output_extent(input.w, kernel, padding, stride);
  state->u = random_tensor(rng, {input.n, out_channels, oh, ow});
  return conv_like_problem(state, true);
}

GradCheckProblem smooth_l1_problem(Shape4 shape, std::uint64_t seed) {
  struct State {
    Tensor4 pred, target;
  };
  Rng rng(seed);
  auto state = std::make_shared<State>();
  state->pred = random_tensor(rng, shape);
  state->target = Tensor4(shape);
  for (std::size_t i = 0; i < shape.size(); ++i) {
    // |d| in [0.05, 0.8] or [1.2, 3.0], either sign.
    const bool quadratic = rng.uniform() < 0.5;
    const double magnitude = quadratic ? rng.uniform(0.05, 0.8) : rng.uniform(1.2, 3.0);
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    state->target.data()[i] = state->pred.data()[i] + sign * magnitude;
  }
  GradCheckProblem p;
  p.params = {{"pred", state->pred.data()}};
  p.objective = [s = state.get()] { return smooth_l1(s->pred, s->target).loss; };
  p.gradient = [s = state.get()] {
    const LossResult r = smooth_l1(s->pred, s->target);
    return std::vector<std::vector<double>>{{r.dpred.data().begin(), r.dpred.data().end()}};
  };
  p.storage = state;
  return p;
}

}  // namespace nucleiquant
