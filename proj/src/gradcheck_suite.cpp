#include "nucleiquant/gradcheck_suite.hpp"

#include "nucleiquant/mgtunet.hpp"

namespace nucleiquant {

std::vector<GradCheckReport> run_gradcheck_suite(const GradCheckOptions& options) {
  std::vector<GradCheckReport> out;
  const std::uint64_t seed = options.seed;
  auto add = [&](const std::string& op, const Shape4& shape,
                 const GradCheckProblem& problem, const GradCheckOptions& opts) {
    GradCheckReport r = grad_check(op, problem, opts);
    r.shape = to_string(shape);
    out.push_back(std::move(r));
  };

  for (const Shape4 s : {Shape4{2, 3, 4, 4}, Shape4{1, 2, 5, 5}, Shape4{3, 1, 3, 7}}) {
    add("mish", s, mish_problem(s, seed), options);
  }
  for (const std::size_t g : {1u, 2u, 4u}) {
    const Shape4 s{2, 4, 3, 3};
    add("groupnorm/G=" + std::to_string(g), s, groupnorm_problem(s, g, seed + g), options);
  }
  add("groupnorm/G=8", {1, 8, 4, 4}, groupnorm_problem({1, 8, 4, 4}, 8, seed), options);

  struct ConvCase {
    Shape4 input;
    std::size_t out, f, s, p;
  };
  const ConvCase conv_cases[] = {{{1, 2, 5, 5}, 3, 3, 1, 1},
                                 {{2, 3, 6, 6}, 2, 3, 2, 1},
                                 {{1, 2, 4, 4}, 2, 2, 1, 0},
                                 {{1, 1, 5, 5}, 2, 1, 1, 0}};
  for (const ConvCase& c : conv_cases) {
    add("conv2d/f=" + std::to_string(c.f) + ",s=" + std::to_string(c.s) +
            ",p=" + std::to_string(c.p),
        c.input, conv2d_problem(c.input, c.out, c.f, c.s, c.p, seed), options);
  }
  const ConvCase transp_cases[] = {{{1, 2, 3, 3}, 3, 2, 2, 0},
                                   {{2, 2, 4, 4}, 2, 3, 2, 1},
                                   {{1, 3, 2, 2}, 2, 2, 1, 0}};
  for (const ConvCase& c : transp_cases) {
    add("transp_conv2d/f=" + std::to_string(c.f) + ",s=" + std::to_string(c.s) +
            ",p=" + std::to_string(c.p),
        c.input, transp_conv2d_problem(c.input, c.out, c.f, c.s, c.p, seed), options);
  }
  for (const Shape4 s : {Shape4{2, 3, 4, 4}, Shape4{1, 1, 5, 5}, Shape4{3, 2, 2, 2}}) {
    add("smooth_l1", s, smooth_l1_problem(s, seed), options);
  }

  GradCheckOptions net_options = options;
  net_options.tolerance = options.tolerance * 10.0;
  struct NetCase {
    const char* name;
    DecoderLayout layout;
    bool skips;
    Shape4 input;
  };
  const NetCase net_cases[] = {
      {"mgtunet/stacked", DecoderLayout::kStacked, true, {1, 3, 16, 16}},
      {"mgtunet/interleaved", DecoderLayout::kInterleaved, true, {1, 3, 16, 16}},
      {"mgtunet/no-skip", DecoderLayout::kStacked, false, {2, 3, 16, 16}}};
  for (const NetCase& c : net_cases) {
    NetConfig config;
    config.base_width = 8;
    config.groups = 8;
    config.layout = c.layout;
    config.skip_connections = c.skips;
    config.seed = seed;
    add(c.name, c.input, network_problem(config, c.input, seed), net_options);
  }
  return out;
}

}  // namespace nucleiquant
