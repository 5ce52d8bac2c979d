#include "nucleiquant/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nucleiquant/error.hpp"

namespace nucleiquant {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_same_shape(const Tensor4& a, const Tensor4& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::kShapeError, std::string(what) + ": shape mismatch");
  }
}

std::ptrdiff_t ceil_div(std::ptrdiff_t a, std::ptrdiff_t b) {
  return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

std::ptrdiff_t floor_div(std::ptrdiff_t a, std::ptrdiff_t b) {
  return a >= 0 ? a / b : -((-a + b - 1) / b);
}

// Output positions o in [lo, hi) whose input index o*s + k - pad lies in
// [0, extent).
struct Range {
  std::ptrdiff_t lo, hi;
};

Range valid_outputs(std::ptrdiff_t extent, std::ptrdiff_t out_extent,
                    std::ptrdiff_t k, std::ptrdiff_t pad, std::ptrdiff_t s) {
  std::ptrdiff_t lo = ceil_div(pad - k, s);
  std::ptrdiff_t hi = floor_div(extent - 1 + pad - k, s) + 1;
  lo = std::max<std::ptrdiff_t>(lo, 0);
  hi = std::min<std::ptrdiff_t>(hi, out_extent);
  return {lo, std::max(lo, hi)};
}

// out[n, co] += sum_{ci, ky, kx} kernel[co, ci, ky, kx] *
//               x[n, ci, oy*s + ky - pad, ox*s + kx - pad]
// Padding may be negative (a crop). `out` must already have its extents.
void correlate_accumulate(const Tensor4& x, const Tensor4& kernel,
                          std::ptrdiff_t stride, std::ptrdiff_t pad,
                          Tensor4& out) {
  const Shape4 xs = x.shape();
  const Shape4 ks = kernel.shape();
  const Shape4 os = out.shape();
  const auto ih = static_cast<std::ptrdiff_t>(xs.h);
  const auto iw = static_cast<std::ptrdiff_t>(xs.w);
  const auto oh = static_cast<std::ptrdiff_t>(os.h);
  const auto ow = static_cast<std::ptrdiff_t>(os.w);
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t co = 0; co < ks.n; ++co) {
      double* dst = out.plane(n, co).data();
      for (std::size_t ci = 0; ci < ks.c; ++ci) {
        const double* src = x.plane(n, ci).data();
        for (std::size_t ky = 0; ky < ks.h; ++ky) {
          const Range rows = valid_outputs(ih, oh, static_cast<std::ptrdiff_t>(ky),
                                           pad, stride);
          for (std::size_t kx = 0; kx < ks.w; ++kx) {
            const double wv = kernel(co, ci, ky, kx);
            const Range cols = valid_outputs(
                iw, ow, static_cast<std::ptrdiff_t>(kx), pad, stride);
            for (std::ptrdiff_t oy = rows.lo; oy < rows.hi; ++oy) {
              const std::ptrdiff_t iy = oy * stride + static_cast<std::ptrdiff_t>(ky) - pad;
              const double* in_row = src + iy * iw;
              double* out_row = dst + oy * ow;
              std::ptrdiff_t ix = cols.lo * stride + static_cast<std::ptrdiff_t>(kx) - pad;
              for (std::ptrdiff_t ox = cols.lo; ox < cols.hi; ++ox, ix += stride) {
                out_row[ox] += wv * in_row[ix];
              }
            }
          }
        }
      }
    }
  }
}

void add_bias(Tensor4& out, const std::vector<double>& bias) {
  const Shape4 s = out.shape();
  if (bias.empty()) return;
  if (bias.size() != s.c) throw Error(ErrorKind::kShapeError, "bias length mismatch");
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (double& v : out.plane(n, c)) v += bias[c];
    }
  }
}

std::vector<double> channel_sums(const Tensor4& t) {
  const Shape4 s = t.shape();
  std::vector<double> out(s.c, 0.0);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (double v : t.plane(n, c)) out[c] += v;
    }
  }
  return out;
}

void check_conv_params(const Conv2dParams& p) {
  const Shape4 ws = p.weights.shape();
  if (ws.h == 0 || ws.h != ws.w) {
    throw Error(ErrorKind::kShapeError, "kernel must be square with f >= 1");
  }
  if (p.stride == 0) throw Error(ErrorKind::kShapeError, "stride must be positive");
}

}  // namespace

// ---------------------------------------------------------------- Mish

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double mish(double x) { return x * std::tanh(softplus(x)); }

double mish_derivative(double x) {
  const double t = std::tanh(softplus(x));
  return t + x * (1.0 - t * t) * sigmoid(x);
}

Tensor4 mish_forward(const Tensor4& x) {
  Tensor4 y(x.shape());
  std::transform(x.data().begin(), x.data().end(), y.data().begin(), mish);
  return y;
}

Tensor4 mish_backward(const Tensor4& x, const Tensor4& upstream) {
  check_same_shape(x, upstream, "mish_backward");
  Tensor4 dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    dx.data()[i] = upstream.data()[i] * mish_derivative(x.data()[i]);
  }
  return dx;
}

// ----------------------------------------------------------- GroupNorm

GroupNormParams GroupNormParams::identity(std::size_t channels,
                                          std::size_t groups, double epsilon) {
  return GroupNormParams{groups, std::vector<double>(channels, 1.0),
                         std::vector<double>(channels, 0.0), epsilon};
}

GroupNormResult groupnorm_forward(const Tensor4& x, const GroupNormParams& p) {
  const Shape4 s = x.shape();
  if (p.groups == 0 || s.c % p.groups != 0) {
    throw Error(ErrorKind::kGroupMismatch,
                std::to_string(p.groups) + " groups do not divide " +
                    std::to_string(s.c) + " channels");
  }
  if (p.gamma.size() != s.c || p.beta.size() != s.c) {
    throw Error(ErrorKind::kShapeError, "gamma/beta length must equal channels");
  }
  if (!(p.epsilon > 0.0)) throw Error(ErrorKind::kConfigError, "epsilon must be positive");

  const std::size_t per_group = s.c / p.groups;
  const std::size_t group_size = per_group * s.h * s.w;
  GroupNormResult r;
  r.y = Tensor4(s);
  r.cache.normalized = Tensor4(s);
  r.cache.mean.resize(s.n * p.groups);
  r.cache.variance.resize(s.n * p.groups);
  r.cache.gamma = p.gamma;
  r.cache.groups = p.groups;
  r.cache.epsilon = p.epsilon;

  const std::span<const double> in = x.data();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t g = 0; g < p.groups; ++g) {
      const std::size_t offset = (n * s.c + g * per_group) * s.h * s.w;
      const auto values = in.subspan(offset, group_size);
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= static_cast<double>(group_size);
      double var = 0.0;
      for (double v : values) var += (v - mean) * (v - mean);
      var /= static_cast<double>(group_size);
      r.cache.mean[n * p.groups + g] = mean;
      r.cache.variance[n * p.groups + g] = var;

      const double inv_std = 1.0 / std::sqrt(var + p.epsilon);
      for (std::size_t cc = 0; cc < per_group; ++cc) {
        const std::size_t c = g * per_group + cc;
        auto xn = r.cache.normalized.plane(n, c);
        auto y = r.y.plane(n, c);
        const auto src = x.plane(n, c);
        for (std::size_t i = 0; i < src.size(); ++i) {
          xn[i] = (src[i] - mean) * inv_std;
          y[i] = xn[i] * p.gamma[c] + p.beta[c];
        }
      }
    }
  }
  return r;
}

GroupNormGrads groupnorm_backward(const GroupNormCache& cache,
                                  const Tensor4& upstream) {
  check_same_shape(cache.normalized, upstream, "groupnorm_backward");
  const Shape4 s = upstream.shape();
  const std::size_t per_group = s.c / cache.groups;
  const auto group_size = static_cast<double>(per_group * s.h * s.w);

  GroupNormGrads g;
  g.dx = Tensor4(s);
  g.dgamma.assign(s.c, 0.0);
  g.dbeta.assign(s.c, 0.0);

  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t grp = 0; grp < cache.groups; ++grp) {
      const double inv_std =
          1.0 / std::sqrt(cache.variance[n * cache.groups + grp] + cache.epsilon);
      // Means of dxhat and dxhat * xhat over the group.
      double sum_d = 0.0, sum_dx = 0.0;
      for (std::size_t cc = 0; cc < per_group; ++cc) {
        const std::size_t c = grp * per_group + cc;
        const auto up = upstream.plane(n, c);
        const auto xn = cache.normalized.plane(n, c);
        for (std::size_t i = 0; i < up.size(); ++i) {
          const double d = up[i] * cache.gamma[c];
          sum_d += d;
          sum_dx += d * xn[i];
          g.dgamma[c] += up[i] * xn[i];
          g.dbeta[c] += up[i];
        }
      }
      const double mean_d = sum_d / group_size;
      const double mean_dx = sum_dx / group_size;
      for (std::size_t cc = 0; cc < per_group; ++cc) {
        const std::size_t c = grp * per_group + cc;
        const auto up = upstream.plane(n, c);
        const auto xn = cache.normalized.plane(n, c);
        auto dx = g.dx.plane(n, c);
        for (std::size_t i = 0; i < up.size(); ++i) {
          dx[i] = inv_std * (up[i] * cache.gamma[c] - mean_d - xn[i] * mean_dx);
        }
      }
    }
  }
  return g;
}

// -------------------------------------------------- (transposed) conv

std::size_t conv_output_extent(std::size_t i, std::size_t f, std::size_t p,
                               std::size_t s) {
  if (s == 0) throw Error(ErrorKind::kShapeError, "stride must be positive");
  if (i + 2 * p < f) {
    throw Error(ErrorKind::kShapeError,
                "i - f + 2p < 0 for i=" + std::to_string(i) + " f=" +
                    std::to_string(f) + " p=" + std::to_string(p));
  }
  return (i + 2 * p - f) / s + 1;
}

std::size_t transp_conv_output_extent(std::size_t i, std::size_t f,
                                      std::size_t p, std::size_t s) {
  if (s == 0 || i == 0 || f == 0) {
    throw Error(ErrorKind::kShapeError, "transposed conv needs i, f, s >= 1");
  }
  const std::size_t full = s * (i - 1) + f;
  if (full <= 2 * p) {
    throw Error(ErrorKind::kShapeError, "transposed conv padding consumes output");
  }
  return full - 2 * p;
}

Tensor4 conv2d_forward(const Tensor4& x, const Conv2dParams& p) {
  check_conv_params(p);
  const Shape4 xs = x.shape();
  const Shape4 ws = p.weights.shape();
  if (ws.c != xs.c) {
    throw Error(ErrorKind::kShapeError,
                "conv expects " + std::to_string(ws.c) + " input channels, got " +
                    std::to_string(xs.c));
  }
  const std::size_t f = p.kernel();
  Tensor4 out({xs.n, ws.n, conv_output_extent(xs.h, f, p.padding, p.stride),
               conv_output_extent(xs.w, f, p.padding, p.stride)});
  add_bias(out, p.bias);
  correlate_accumulate(x, p.weights, static_cast<std::ptrdiff_t>(p.stride),
                       static_cast<std::ptrdiff_t>(p.padding), out);
  return out;
}

Conv2dGrads conv2d_backward(const Tensor4& x, const Conv2dParams& p,
                            const Tensor4& upstream) {
  check_conv_params(p);
  const Shape4 xs = x.shape();
  const Shape4 ws = p.weights.shape();
  const Shape4 us = upstream.shape();
  const std::size_t f = p.kernel();
  if (ws.c != xs.c || us.n != xs.n || us.c != ws.n ||
      us.h != conv_output_extent(xs.h, f, p.padding, p.stride) ||
      us.w != conv_output_extent(xs.w, f, p.padding, p.stride)) {
    throw Error(ErrorKind::kShapeError, "conv2d_backward: inconsistent shapes");
  }
  const auto s = static_cast<std::ptrdiff_t>(p.stride);
  const auto pad = static_cast<std::ptrdiff_t>(p.padding);
  const auto ih = static_cast<std::ptrdiff_t>(xs.h);
  const auto iw = static_cast<std::ptrdiff_t>(xs.w);
  const auto oh = static_cast<std::ptrdiff_t>(us.h);
  const auto ow = static_cast<std::ptrdiff_t>(us.w);

  Conv2dGrads g;
  g.dx = Tensor4(xs);
  g.dweights = Tensor4(ws);
  g.dbias = channel_sums(upstream);

  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t co = 0; co < ws.n; ++co) {
      const double* up = upstream.plane(n, co).data();
      for (std::size_t ci = 0; ci < ws.c; ++ci) {
        const double* src = x.plane(n, ci).data();
        double* dsrc = g.dx.plane(n, ci).data();
        for (std::size_t ky = 0; ky < f; ++ky) {
          const Range rows =
              valid_outputs(ih, oh, static_cast<std::ptrdiff_t>(ky), pad, s);
          for (std::size_t kx = 0; kx < f; ++kx) {
            const Range cols =
                valid_outputs(iw, ow, static_cast<std::ptrdiff_t>(kx), pad, s);
            const double wv = p.weights(co, ci, ky, kx);
            double dw = 0.0;
            for (std::ptrdiff_t oy = rows.lo; oy < rows.hi; ++oy) {
              const std::ptrdiff_t iy = oy * s + static_cast<std::ptrdiff_t>(ky) - pad;
              const double* up_row = up + oy * ow;
              const double* in_row = src + iy * iw;
              double* din_row = dsrc + iy * iw;
              std::ptrdiff_t ix = cols.lo * s + static_cast<std::ptrdiff_t>(kx) - pad;
              for (std::ptrdiff_t ox = cols.lo; ox < cols.hi; ++ox, ix += s) {
                dw += up_row[ox] * in_row[ix];
                din_row[ix] += wv * up_row[ox];
              }
            }
            g.dweights(co, ci, ky, kx) += dw;
          }
        }
      }
    }
  }
  return g;
}

Tensor4 transp_conv2d_forward(const Tensor4& x, const Conv2dParams& p) {
  check_conv_params(p);
  const Shape4 xs = x.shape();
  const Shape4 ws = p.weights.shape();
  if (ws.n != xs.c) {
    throw Error(ErrorKind::kShapeError,
                "transposed conv expects " + std::to_string(ws.n) +
                    " input channels, got " + std::to_string(xs.c));
  }
  const std::size_t f = p.kernel();
  const std::size_t s = p.stride;
  const std::size_t oh = transp_conv_output_extent(xs.h, f, p.padding, s);
  const std::size_t ow = transp_conv_output_extent(xs.w, f, p.padding, s);

  // Insert s - 1 zeros between neighbouring input elements.
  Tensor4 dilated({xs.n, xs.c, (xs.h - 1) * s + 1, (xs.w - 1) * s + 1});
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      for (std::size_t y = 0; y < xs.h; ++y) {
        for (std::size_t xx = 0; xx < xs.w; ++xx) {
          dilated(n, c, y * s, xx * s) = x(n, c, y, xx);
        }
      }
    }
  }
  // Swap in/out channel roles and rotate the kernel by 180 degrees.
  Tensor4 flipped({ws.c, ws.n, f, f});
  for (std::size_t a = 0; a < ws.n; ++a) {
    for (std::size_t b = 0; b < ws.c; ++b) {
      for (std::size_t ky = 0; ky < f; ++ky) {
        for (std::size_t kx = 0; kx < f; ++kx) {
          flipped(b, a, ky, kx) = p.weights(a, b, f - 1 - ky, f - 1 - kx);
        }
      }
    }
  }
  Tensor4 out({xs.n, ws.c, oh, ow});
  add_bias(out, p.bias);
  const auto border = static_cast<std::ptrdiff_t>(f) - 1 -
                      static_cast<std::ptrdiff_t>(p.padding);
  correlate_accumulate(dilated, flipped, 1, border, out);
  return out;
}

Conv2dGrads transp_conv2d_backward(const Tensor4& x, const Conv2dParams& p,
                                   const Tensor4& upstream) {
  check_conv_params(p);
  const Shape4 xs = x.shape();
  const Shape4 ws = p.weights.shape();
  const Shape4 us = upstream.shape();
  const std::size_t f = p.kernel();
  if (ws.n != xs.c || us.n != xs.n || us.c != ws.c ||
      us.h != transp_conv_output_extent(xs.h, f, p.padding, p.stride) ||
      us.w != transp_conv_output_extent(xs.w, f, p.padding, p.stride)) {
    throw Error(ErrorKind::kShapeError,
                "transp_conv2d_backward: inconsistent shapes");
  }
  const auto s = static_cast<std::ptrdiff_t>(p.stride);
  const auto pad = static_cast<std::ptrdiff_t>(p.padding);

  Conv2dGrads g;
  // The input gradient is the strided convolution of upstream with the
  // weights read as (out = c_in, in = c_out).
  g.dx = Tensor4(xs);
  correlate_accumulate(upstream, p.weights, s, pad, g.dx);
  g.dbias = channel_sums(upstream);

  g.dweights = Tensor4(ws);
  const auto uh = static_cast<std::ptrdiff_t>(us.h);
  const auto uw = static_cast<std::ptrdiff_t>(us.w);
  const auto xh = static_cast<std::ptrdiff_t>(xs.h);
  const auto xw = static_cast<std::ptrdiff_t>(xs.w);
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t a = 0; a < ws.n; ++a) {
      const double* src = x.plane(n, a).data();
      for (std::size_t b = 0; b < ws.c; ++b) {
        const double* up = upstream.plane(n, b).data();
        for (std::size_t ky = 0; ky < f; ++ky) {
          const Range rows =
              valid_outputs(uh, xh, static_cast<std::ptrdiff_t>(ky), pad, s);
          for (std::size_t kx = 0; kx < f; ++kx) {
            const Range cols =
                valid_outputs(uw, xw, static_cast<std::ptrdiff_t>(kx), pad, s);
            double acc = 0.0;
            for (std::ptrdiff_t oy = rows.lo; oy < rows.hi; ++oy) {
              const std::ptrdiff_t uy = oy * s + static_cast<std::ptrdiff_t>(ky) - pad;
              for (std::ptrdiff_t ox = cols.lo; ox < cols.hi; ++ox) {
                const std::ptrdiff_t ux = ox * s + static_cast<std::ptrdiff_t>(kx) - pad;
                acc += src[oy * xw + ox] * up[uy * uw + ux];
              }
            }
            g.dweights(a, b, ky, kx) += acc;
          }
        }
      }
    }
  }
  return g;
}

// ------------------------------------------------------------ SmoothL1

LossResult smooth_l1(const Tensor4& pred, const Tensor4& target) {
  if (pred.shape() != target.shape()) {
    throw Error(ErrorKind::kShapeMismatch, "smooth_l1: pred and target differ");
  }
  LossResult r;
  r.dpred = Tensor4(pred.shape());
  const std::size_t count = pred.size();
  if (count == 0) return r;
  const double inv_n = 1.0 / static_cast<double>(count);
  double sum = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = target.data()[i] - pred.data()[i];
    const double ad = std::abs(d);
    if (ad < 1.0) {
      sum += 0.5 * d * d;
      r.dpred.data()[i] = -d * inv_n;
    } else {
      sum += ad - 0.5;
      r.dpred.data()[i] = (d > 0.0 ? -1.0 : 1.0) * inv_n;
    }
  }
  r.loss = sum * inv_n;
  return r;
}

}  // namespace nucleiquant
