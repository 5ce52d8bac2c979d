#pragma once

// Forward and hand-written backward passes for the network primitives.
// Everything is f64; backward functions take the forward inputs explicitly
// (or a cache) and return gradients without touching shared state.

#include <cstddef>
#include <vector>

#include "nucleiquant/tensor.hpp"

namespace nucleiquant {

// ---------------------------------------------------------------- Mish

double softplus(double x);
double mish(double x);
double mish_derivative(double x);

Tensor4 mish_forward(const Tensor4& x);
Tensor4 mish_backward(const Tensor4& x, const Tensor4& upstream);

// ----------------------------------------------------------- GroupNorm

struct GroupNormParams {
  std::size_t groups = 8;
  std::vector<double> gamma;
  std::vector<double> beta;
  double epsilon = 1e-5;

  // gamma = 1, beta = 0.
  static GroupNormParams identity(std::size_t channels, std::size_t groups,
                                  double epsilon = 1e-5);
};

struct GroupNormCache {
  Tensor4 normalized;            // pre-affine values
  std::vector<double> mean;      // per (sample, group)
  std::vector<double> variance;  // biased, per (sample, group)
  std::vector<double> gamma;
  std::size_t groups = 1;
  double epsilon = 1e-5;
};

struct GroupNormResult {
  Tensor4 y;
  GroupNormCache cache;
};

struct GroupNormGrads {
  Tensor4 dx;
  std::vector<double> dgamma;
  std::vector<double> dbeta;
};

// Throws Error(kGroupMismatch) unless groups divides the channel count.
GroupNormResult groupnorm_forward(const Tensor4& x, const GroupNormParams& p);
GroupNormGrads groupnorm_backward(const GroupNormCache& cache,
                                  const Tensor4& upstream);

// -------------------------------------------------- (transposed) conv

// For conv2d the weights are (c_out, c_in, f, f). For the transposed conv
// the same container holds (c_in, c_out, f, f), i.e. the kernel of the conv
// it is the adjoint of, and bias has c_out entries.
struct Conv2dParams {
  Tensor4 weights;
  std::vector<double> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t kernel() const { return weights.shape().h; }
};

struct Conv2dGrads {
  Tensor4 dx;
  Tensor4 dweights;
  std::vector<double> dbias;
};

// o = floor((i - f + 2p) / s) + 1. Throws Error(kShapeError) when
// i - f + 2p < 0 or s == 0.
std::size_t conv_output_extent(std::size_t i, std::size_t f, std::size_t p,
                               std::size_t s);
// o = s (i - 1) + f - 2p. Throws Error(kShapeError) unless positive.
std::size_t transp_conv_output_extent(std::size_t i, std::size_t f,
                                      std::size_t p, std::size_t s);

Tensor4 conv2d_forward(const Tensor4& x, const Conv2dParams& p);
Conv2dGrads conv2d_backward(const Tensor4& x, const Conv2dParams& p,
                            const Tensor4& upstream);

// Zero-insertion form: dilate the input by the stride, pad by f - 1 - p,
// flip the kernel and run a stride-1 convolution.
Tensor4 transp_conv2d_forward(const Tensor4& x, const Conv2dParams& p);
Conv2dGrads transp_conv2d_backward(const Tensor4& x, const Conv2dParams& p,
                                   const Tensor4& upstream);

// ------------------------------------------------------------ SmoothL1

struct LossResult {
  double loss = 0.0;
  Tensor4 dpred;
};

// Mean over all elements of 0.5 d^2 (|d| < 1) or |d| - 0.5, d = target - pred.
// At |d| == 1 the gradient takes the linear branch.
LossResult smooth_l1(const Tensor4& pred, const Tensor4& target);

}  // namespace nucleiquant
