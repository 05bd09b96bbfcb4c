#include "layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>

#include "error.hpp"
#include "threadpool.hpp"

namespace attenlab {

using detail::Node;

using detail::make_op_node;

namespace {

struct ConvDims {
  int n, h, w, c_in;          // input
  int kh, kw, c_out;          // kernel
  int ho, wo;                 // output
  int pad_top, pad_left;
  bool batched;
};

ConvDims resolve_conv(const Tensor& input, const ConvParams& p, int stride, Padding padding) {
  if (input.rank() != 3 && input.rank() != 4) {
    throw DimensionError("conv2d: input must be (h,w,c) or (n,h,w,c), got " +
                         shape_str(input.shape()));
  }
  if (p.kernel.rank() != 4) {
    throw DimensionError("conv2d: kernel must be (kh,kw,c_in,c_out), got " +
                         shape_str(p.kernel.shape()));
  }
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  ConvDims d;
  d.batched = input.rank() == 4;
  d.n = d.batched ? input.dim(0) : 1;
  d.h = input.dim(d.batched ? 1 : 0);
  d.w = input.dim(d.batched ? 2 : 1);
  d.c_in = input.dim(d.batched ? 3 : 2);
  d.kh = p.kernel.dim(0);
  d.kw = p.kernel.dim(1);
  d.c_out = p.kernel.dim(3);
  if (p.kernel.dim(2) != d.c_in) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(p.kernel.dim(2)) +
                         " input channels, input has " + std::to_string(d.c_in));
  }
  if (p.bias.rank() != 1 || p.bias.dim(0) != d.c_out) {
    throw DimensionError("conv2d: bias must be (" + std::to_string(d.c_out) + ")");
  }
  if (padding == Padding::kSame) {
    d.ho = (d.h + stride - 1) / stride;
    d.wo = (d.w + stride - 1) / stride;
    const int pad_h = std::max((d.ho - 1) * stride + d.kh - d.h, 0);
    const int pad_w = std::max((d.wo - 1) * stride + d.kw - d.w, 0);
    d.pad_top = pad_h / 2;
    d.pad_left = pad_w / 2;
  } else {
    if (d.kh > d.h || d.kw > d.w) {
      throw DimensionError("conv2d: " + std::to_string(d.kh) + "x" + std::to_string(d.kw) +
                           " kernel larger than " + std::to_string(d.h) + "x" +
                           std::to_string(d.w) + " input");
    }
    d.ho = (d.h - d.kh) / stride + 1;
    d.wo = (d.w - d.kw) / stride + 1;
    d.pad_top = 0;
    d.pad_left = 0;
  }
  return d;
}

}  // namespace

ConvParams make_conv_params(int kh, int kw, int c_in, int c_out) {
  if (kh < 1 || kw < 1) throw DimensionError("conv kernel extents must be >= 1");
  return ConvParams{Tensor::zeros({kh, kw, c_in, c_out}, true), Tensor::zeros({c_out}, true)};
}

DenseParams make_dense_params(int in, int out) {
  return DenseParams{Tensor::zeros({in, out}, true), Tensor::zeros({out}, true)};
}

BatchNormParams make_batchnorm_params(int channels) {
  BatchNormParams p;
  p.gamma = Tensor::full({channels}, 1.0, true);
  p.beta = Tensor::zeros({channels}, true);
  p.running_mean = Tensor::zeros({channels});
  p.running_var = Tensor::full({channels}, 1.0);
  return p;
}

void fill_he_normal(Tensor& t, int fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / fan_in);
  for (double& v : t.values_mut()) v = rng.normal(0.0, stddev);
}

void fill_glorot_uniform(Tensor& t, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : t.values_mut()) v = rng.uniform(-limit, limit);
}

Tensor conv2d(const Tensor& input, const ConvParams& params, int stride, Padding padding) {
  const ConvDims d = resolve_conv(input, params, stride, padding);
  const double* in = input.values().data();
  const double* ker = params.kernel.values().data();
  const double* bias = params.bias.values().data();

  const int64_t in_plane = static_cast<int64_t>(d.h) * d.w * d.c_in;
  const int64_t out_plane = static_cast<int64_t>(d.ho) * d.wo * d.c_out;
  std::vector<double> out(static_cast<size_t>(d.n) * out_plane);

  auto conv_sample = [&](int64_t s0, int64_t s1) {
    std::vector<double> acc(d.c_out);
    for (int64_t s = s0; s < s1; ++s) {
      const double* ip = in + s * in_plane;
      double* op = out.data() + s * out_plane;
      for (int y = 0; y < d.ho; ++y) {
        for (int x = 0; x < d.wo; ++x) {
          std::memcpy(acc.data(), bias, sizeof(double) * d.c_out);
          const int iy0 = y * stride - d.pad_top;
          const int ix0 = x * stride - d.pad_left;
          for (int dy = 0; dy < d.kh; ++dy) {
            const int iy = iy0 + dy;
            if (iy < 0 || iy >= d.h) continue;
            for (int dx = 0; dx < d.kw; ++dx) {
              const int ix = ix0 + dx;
              if (ix < 0 || ix >= d.w) continue;
              const double* irow = ip + (static_cast<int64_t>(iy) * d.w + ix) * d.c_in;
              const double* krow = ker + ((static_cast<int64_t>(dy) * d.kw + dx) * d.c_in) * d.c_out;
              for (int ci = 0; ci < d.c_in; ++ci) {
                const double a = irow[ci];
                const double* kc = krow + static_cast<int64_t>(ci) * d.c_out;
                for (int co = 0; co < d.c_out; ++co) acc[co] += a * kc[co];
              }
            }
          }
          std::memcpy(op + (static_cast<int64_t>(y) * d.wo + x) * d.c_out, acc.data(),
                      sizeof(double) * d.c_out);
        }
      }
    }
  };
  parallel_for_ranges(d.n, conv_sample);

  Shape out_shape = d.batched ? Shape{d.n, d.ho, d.wo, d.c_out} : Shape{d.ho, d.wo, d.c_out};
  auto node = make_op_node(out_shape, std::move(out),
                           {input.node(), params.kernel.node(), params.bias.node()}, "conv2d");
  check_finite(Tensor(node), "conv2d");

  if (!node->is_leaf) {
    auto in_node = input.node();
    auto ker_node = params.kernel.node();
    auto bias_node = params.bias.node();
    node->backward_fn = [in_node, ker_node, bias_node, d, stride, in_plane,
                         out_plane](Node& self) {
      const double* g = self.grad.data();
      const int64_t ker_size = static_cast<int64_t>(ker_node->value.size());

      if (bias_node->requires_grad) {
        bias_node->ensure_grad();
        double* db = bias_node->grad.data();
        const int64_t pixels = static_cast<int64_t>(d.n) * d.ho * d.wo;
        for (int64_t px = 0; px < pixels; ++px) {
          const double* grow = g + px * d.c_out;
          for (int co = 0; co < d.c_out; ++co) db[co] += grow[co];
        }
      }

      if (in_node->requires_grad) {
        // Transposed kernel (kh,kw,c_out,c_in) keeps the inner loop contiguous.
        std::vector<double> kt(ker_size);
        const double* kv = ker_node->value.data();
        for (int dy = 0; dy < d.kh; ++dy) {
          for (int dx = 0; dx < d.kw; ++dx) {
            const int64_t base = (static_cast<int64_t>(dy) * d.kw + dx) * d.c_in * d.c_out;
            for (int ci = 0; ci < d.c_in; ++ci) {
              for (int co = 0; co < d.c_out; ++co) {
                kt[base + static_cast<int64_t>(co) * d.c_in + ci] =
                    kv[base + static_cast<int64_t>(ci) * d.c_out + co];
              }
            }
          }
        }
        in_node->ensure_grad();
        double* din = in_node->grad.data();
        parallel_for_ranges(d.n, [&](int64_t s0, int64_t s1) {
          for (int64_t s = s0; s < s1; ++s) {
            double* dip = din + s * in_plane;
            const double* gp = g + s * out_plane;
            for (int y = 0; y < d.ho; ++y) {
              for (int x = 0; x < d.wo; ++x) {
                const double* grow = gp + (static_cast<int64_t>(y) * d.wo + x) * d.c_out;
                const int iy0 = y * stride - d.pad_top;
                const int ix0 = x * stride - d.pad_left;
                for (int dy = 0; dy < d.kh; ++dy) {
                  const int iy = iy0 + dy;
                  if (iy < 0 || iy >= d.h) continue;
                  for (int dx = 0; dx < d.kw; ++dx) {
                    const int ix = ix0 + dx;
                    if (ix < 0 || ix >= d.w) continue;
                    double* dirow = dip + (static_cast<int64_t>(iy) * d.w + ix) * d.c_in;
                    const double* ktrow =
                        kt.data() + ((static_cast<int64_t>(dy) * d.kw + dx) * d.c_out) * d.c_in;
                    for (int co = 0; co < d.c_out; ++co) {
                      const double gv = grow[co];
                      const double* kc = ktrow + static_cast<int64_t>(co) * d.c_in;
                      for (int ci = 0; ci < d.c_in; ++ci) dirow[ci] += gv * kc[ci];
                    }
                  }
                }
              }
            }
          }
        });
      }

      if (ker_node->requires_grad) {
        // Accumulate per contiguous sample chunk, then reduce in chunk order.
        const int chunks = std::max(1, std::min<int>(worker_count(), d.n));
        const int64_t per = (d.n + chunks - 1) / chunks;
        std::vector<std::vector<double>> partial(chunks);
        parallel_for(chunks, [&](int64_t ci) {
          const int64_t s0 = ci * per;
          const int64_t s1 = std::min<int64_t>(d.n, s0 + per);
          auto& buf = partial[ci];
          buf.assign(ker_size, 0.0);
          const double* in = in_node->value.data();
          for (int64_t s = s0; s < s1; ++s) {
            const double* ip = in + s * in_plane;
            const double* gp = g + s * out_plane;
            for (int y = 0; y < d.ho; ++y) {
              for (int x = 0; x < d.wo; ++x) {
                const double* grow = gp + (static_cast<int64_t>(y) * d.wo + x) * d.c_out;
                const int iy0 = y * stride - d.pad_top;
                const int ix0 = x * stride - d.pad_left;
                for (int dy = 0; dy < d.kh; ++dy) {
                  const int iy = iy0 + dy;
                  if (iy < 0 || iy >= d.h) continue;
                  for (int dx = 0; dx < d.kw; ++dx) {
                    const int ix = ix0 + dx;
                    if (ix < 0 || ix >= d.w) continue;
                    const double* irow = ip + (static_cast<int64_t>(iy) * d.w + ix) * d.c_in;
                    double* dkrow =
                        buf.data() + ((static_cast<int64_t>(dy) * d.kw + dx) * d.c_in) * d.c_out;
                    for (int ci2 = 0; ci2 < d.c_in; ++ci2) {
                      const double a = irow[ci2];
                      double* dkc = dkrow + static_cast<int64_t>(ci2) * d.c_out;
                      for (int co = 0; co < d.c_out; ++co) dkc[co] += a * grow[co];
                    }
                  }
                }
              }
            }
          }
        });
        ker_node->ensure_grad();
        double* dk = ker_node->grad.data();
        for (const auto& buf : partial) {
          for (int64_t i = 0; i < ker_size; ++i) dk[i] += buf[i];
        }
      }
    };
  }
  return Tensor(node);
}

Tensor maxpool2d(const Tensor& input, int window, int stride) {
  if (window < 1 || stride < 1) throw ContractError("maxpool2d: window/stride must be >= 1");
  if (input.rank() != 3 && input.rank() != 4) {
    throw DimensionError("maxpool2d: input must be (h,w,c) or (n,h,w,c), got " +
                         shape_str(input.shape()));
  }
  const bool batched = input.rank() == 4;
  const int n = batched ? input.dim(0) : 1;
  const int h = input.dim(batched ? 1 : 0);
  const int w = input.dim(batched ? 2 : 1);
  const int c = input.dim(batched ? 3 : 2);
  const int ho = (h - window) / stride + 1;
  const int wo = (w - window) / stride + 1;
  if (h < window || w < window || ho < 1 || wo < 1) {
    throw DimensionError("maxpool2d: window " + std::to_string(window) + " yields empty output on " +
                         shape_str(input.shape()));
  }

  const double* in = input.values().data();
  const int64_t in_plane = static_cast<int64_t>(h) * w * c;
  const int64_t out_plane = static_cast<int64_t>(ho) * wo * c;
  std::vector<double> out(static_cast<size_t>(n) * out_plane);
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  for (int s = 0; s < n; ++s) {
    const double* ip = in + s * in_plane;
    for (int y = 0; y < ho; ++y) {
      for (int x = 0; x < wo; ++x) {
        for (int ch = 0; ch < c; ++ch) {
          double best = -std::numeric_limits<double>::infinity();
          int64_t best_idx = -1;
          for (int dy = 0; dy < window; ++dy) {
            for (int dx = 0; dx < window; ++dx) {
              const int64_t idx =
                  (static_cast<int64_t>(y * stride + dy) * w + (x * stride + dx)) * c + ch;
              if (ip[idx] > best) {
                best = ip[idx];
                best_idx = idx;
              }
            }
          }
          const int64_t oidx = (static_cast<int64_t>(y) * wo + x) * c + ch;
          out[s * out_plane + oidx] = best;
          (*argmax)[s * out_plane + oidx] = s * in_plane + best_idx;
        }
      }
    }
  }

  Shape out_shape = batched ? Shape{n, ho, wo, c} : Shape{ho, wo, c};
  auto node = make_op_node(out_shape, std::move(out), {input.node()}, "maxpool2d");
  if (!node->is_leaf) {
    auto in_node = input.node();
    node->backward_fn = [in_node, argmax](Node& self) {
      in_node->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        in_node->grad[(*argmax)[i]] += self.grad[i];
      }
    };
  }
  return Tensor(node);
}

Tensor maxpool_rows(const Tensor& input, int window, int stride) {
  if (window < 1 || stride < 1) throw ContractError("maxpool_rows: window/stride must be >= 1");
  if (input.rank() != 2) {
    throw DimensionError("maxpool_rows: input must be rank 2, got " + shape_str(input.shape()));
  }
  const int rows = input.dim(0), c = input.dim(1);
  const int out_rows = rows < window ? 0 : (rows - window) / stride + 1;
  if (out_rows < 1) {
    throw DimensionError("maxpool_rows: window " + std::to_string(window) +
                         " yields empty output on " + shape_str(input.shape()));
  }
  const double* in = input.values().data();
  std::vector<double> out(static_cast<size_t>(out_rows) * c);
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  for (int r = 0; r < out_rows; ++r) {
    for (int ch = 0; ch < c; ++ch) {
      double best = -std::numeric_limits<double>::infinity();
      int64_t best_idx = -1;
      for (int dr = 0; dr < window; ++dr) {
        const int64_t idx = static_cast<int64_t>(r * stride + dr) * c + ch;
        if (in[idx] > best) {
          best = in[idx];
          best_idx = idx;
        }
      }
      out[static_cast<int64_t>(r) * c + ch] = best;
      (*argmax)[static_cast<int64_t>(r) * c + ch] = best_idx;
    }
  }
  auto node = make_op_node({out_rows, c}, std::move(out), {input.node()}, "maxpool_rows");
  if (!node->is_leaf) {
    auto in_node = input.node();
    node->backward_fn = [in_node, argmax](Node& self) {
      in_node->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        in_node->grad[(*argmax)[i]] += self.grad[i];
      }
    };
  }
  return Tensor(node);
}

Tensor dense(const Tensor& x, const DenseParams& params) {
  if (params.weight.rank() != 2) {
    throw DimensionError("dense: weight must be rank 2, got " + shape_str(params.weight.shape()));
  }
  const int in = params.weight.dim(0);
  if (x.rank() == 1) {
    if (x.dim(0) != in) {
      throw DimensionError("dense: input " + shape_str(x.shape()) + " vs weight " +
                           shape_str(params.weight.shape()));
    }
    Tensor row = reshape(x, {1, in});
    Tensor y = add(matmul(row, params.weight), params.bias);
    return reshape(y, {params.weight.dim(1)});
  }
  if (x.rank() == 2) {
    if (x.dim(1) != in) {
      throw DimensionError("dense: input " + shape_str(x.shape()) + " vs weight " +
                           shape_str(params.weight.shape()));
    }
    return add(matmul(x, params.weight), params.bias);
  }
  throw DimensionError("dense: input must be rank 1 or 2, got " + shape_str(x.shape()));
}

Tensor batchnorm(const Tensor& x, BatchNormParams& params, Mode mode) {
  if (x.rank() < 2) {
    throw DimensionError("batchnorm: input must have a channel axis, got " +
                         shape_str(x.shape()));
  }
  const int c = x.shape().back();
  if (params.gamma.dim(0) != c) {
    throw DimensionError("batchnorm: params carry " + std::to_string(params.gamma.dim(0)) +
                         " channels, input has " + std::to_string(c));
  }
  const int64_t total = x.size();
  const int64_t m = total / c;  // reduce count per channel
  const double* xv = x.values().data();
  const double* gv = params.gamma.values().data();
  const double* bv = params.beta.values().data();
  const double eps = params.eps;

  std::vector<double> mean(c, 0.0), var(c, 0.0);
  if (mode == Mode::kTrain) {
    for (int64_t i = 0; i < total; ++i) mean[i % c] += xv[i];
    for (int ch = 0; ch < c; ++ch) mean[ch] /= static_cast<double>(m);
    for (int64_t i = 0; i < total; ++i) {
      const double d = xv[i] - mean[i % c];
      var[i % c] += d * d;
    }
    for (int ch = 0; ch < c; ++ch) var[ch] /= static_cast<double>(m);
    // running <- momentum * running + (1 - momentum) * batch
    auto& rm = params.running_mean.values_mut();
    auto& rv = params.running_var.values_mut();
    for (int ch = 0; ch < c; ++ch) {
      rm[ch] = params.momentum * rm[ch] + (1.0 - params.momentum) * mean[ch];
      rv[ch] = params.momentum * rv[ch] + (1.0 - params.momentum) * var[ch];
    }
  } else {
    mean.assign(params.running_mean.values().begin(), params.running_mean.values().end());
    var.assign(params.running_var.values().begin(), params.running_var.values().end());
  }

  auto inv_sigma = std::make_shared<std::vector<double>>(c);
  for (int ch = 0; ch < c; ++ch) (*inv_sigma)[ch] = 1.0 / std::sqrt(var[ch] + eps);
  auto xhat = std::make_shared<std::vector<double>>(total);
  std::vector<double> out(total);
  for (int64_t i = 0; i < total; ++i) {
    const int ch = static_cast<int>(i % c);
    (*xhat)[i] = (xv[i] - mean[ch]) * (*inv_sigma)[ch];
    out[i] = gv[ch] * (*xhat)[i] + bv[ch];
  }

  auto node = make_op_node(x.shape(), std::move(out),
                           {x.node(), params.gamma.node(), params.beta.node()}, "batchnorm");
  check_finite(Tensor(node), "batchnorm");
  if (!node->is_leaf) {
    auto x_node = x.node();
    auto gamma_node = params.gamma.node();
    auto beta_node = params.beta.node();
    const bool train = mode == Mode::kTrain;
    node->backward_fn = [x_node, gamma_node, beta_node, xhat, inv_sigma, c, m, total,
                         train](Node& self) {
      const double* g = self.grad.data();
      std::vector<double> dbeta(c, 0.0), dgamma(c, 0.0);
      for (int64_t i = 0; i < total; ++i) {
        const int ch = static_cast<int>(i % c);
        dbeta[ch] += g[i];
        dgamma[ch] += g[i] * (*xhat)[i];
      }
      if (gamma_node->requires_grad) {
        gamma_node->ensure_grad();
        for (int ch = 0; ch < c; ++ch) gamma_node->grad[ch] += dgamma[ch];
      }
      if (beta_node->requires_grad) {
        beta_node->ensure_grad();
        for (int ch = 0; ch < c; ++ch) beta_node->grad[ch] += dbeta[ch];
      }
      if (x_node->requires_grad) {
        x_node->ensure_grad();
        const double* gamma = gamma_node->value.data();
        if (train) {
          // dx = gamma/sigma * (dy - mean(dy) - xhat * mean(dy*xhat))
          const double inv_m = 1.0 / static_cast<double>(m);
          for (int64_t i = 0; i < total; ++i) {
            const int ch = static_cast<int>(i % c);
            x_node->grad[i] += gamma[ch] * (*inv_sigma)[ch] *
                               (g[i] - dbeta[ch] * inv_m - (*xhat)[i] * dgamma[ch] * inv_m);
          }
        } else {
          for (int64_t i = 0; i < total; ++i) {
            const int ch = static_cast<int>(i % c);
            x_node->grad[i] += gamma[ch] * (*inv_sigma)[ch] * g[i];
          }
        }
      }
    };
  }
  return Tensor(node);
}

Tensor gap(const Tensor& map) {
  if (map.rank() != 3 && map.rank() != 4) {
    throw DimensionError("gap: input must be (h,w,c) or (n,h,w,c), got " + shape_str(map.shape()));
  }
  const bool batched = map.rank() == 4;
  const int n = batched ? map.dim(0) : 1;
  const int c = map.shape().back();
  const int64_t spatial = map.size() / (static_cast<int64_t>(n) * c);
  const double* mv = map.values().data();
  std::vector<double> out(static_cast<size_t>(n) * c, 0.0);
  for (int s = 0; s < n; ++s) {
    const double* plane = mv + s * spatial * c;
    double* orow = out.data() + static_cast<int64_t>(s) * c;
    for (int64_t p = 0; p < spatial; ++p) {
      for (int ch = 0; ch < c; ++ch) orow[ch] += plane[p * c + ch];
    }
    for (int ch = 0; ch < c; ++ch) orow[ch] /= static_cast<double>(spatial);
  }
  Shape out_shape = batched ? Shape{n, c} : Shape{c};
  auto node = make_op_node(out_shape, std::move(out), {map.node()}, "gap");
  if (!node->is_leaf) {
    auto m_node = map.node();
    node->backward_fn = [m_node, n, c, spatial](Node& self) {
      m_node->ensure_grad();
      const double inv = 1.0 / static_cast<double>(spatial);
      for (int s = 0; s < n; ++s) {
        const double* grow = self.grad.data() + static_cast<int64_t>(s) * c;
        double* dplane = m_node->grad.data() + static_cast<int64_t>(s) * spatial * c;
        for (int64_t p = 0; p < spatial; ++p) {
          for (int ch = 0; ch < c; ++ch) dplane[p * c + ch] += grow[ch] * inv;
        }
      }
    };
  }
  return Tensor(node);
}

Tensor flatten(const Tensor& map) {
  if (map.rank() == 3) return reshape(map, {static_cast<int>(map.size())});
  if (map.rank() == 4) {
    const int n = map.dim(0);
    return reshape(map, {n, static_cast<int>(map.size() / n)});
  }
  throw DimensionError("flatten: input must be (h,w,c) or (n,h,w,c), got " +
                       shape_str(map.shape()));
}

Tensor scale_channels(const Tensor& map, const Tensor& gate) {
  const bool batched = map.rank() == 4;
  if (!batched && map.rank() != 3) {
    throw DimensionError("scale_channels: map must be (h,w,c) or (n,h,w,c), got " +
                         shape_str(map.shape()));
  }
  const int n = batched ? map.dim(0) : 1;
  const int c = map.shape().back();
  if (batched) {
    if (gate.rank() != 2 || gate.dim(0) != n || gate.dim(1) != c) {
      throw DimensionError("scale_channels: gate " + shape_str(gate.shape()) +
                           " does not match map " + shape_str(map.shape()));
    }
  } else if (gate.rank() != 1 || gate.dim(0) != c) {
    throw DimensionError("scale_channels: gate " + shape_str(gate.shape()) +
                         " does not match map " + shape_str(map.shape()));
  }
  const int64_t spatial = map.size() / (static_cast<int64_t>(n) * c);
  const double* mv = map.values().data();
  const double* gv = gate.values().data();
  std::vector<double> out(map.size());
  for (int s = 0; s < n; ++s) {
    const double* grow = gv + static_cast<int64_t>(s) * c;
    const double* plane = mv + s * spatial * c;
    double* oplane = out.data() + s * spatial * c;
    for (int64_t p = 0; p < spatial; ++p) {
      for (int ch = 0; ch < c; ++ch) oplane[p * c + ch] = plane[p * c + ch] * grow[ch];
    }
  }
  auto node = make_op_node(map.shape(), std::move(out), {map.node(), gate.node()},
                           "scale_channels");
  if (!node->is_leaf) {
    auto m_node = map.node();
    auto g_node = gate.node();
    node->backward_fn = [m_node, g_node, n, c, spatial](Node& self) {
      const double* g = self.grad.data();
      if (m_node->requires_grad) {
        m_node->ensure_grad();
        for (int s = 0; s < n; ++s) {
          const double* grow = g_node->value.data() + static_cast<int64_t>(s) * c;
          const double* gplane = g + s * spatial * c;
          double* dplane = m_node->grad.data() + s * spatial * c;
          for (int64_t p = 0; p < spatial; ++p) {
            for (int ch = 0; ch < c; ++ch) dplane[p * c + ch] += gplane[p * c + ch] * grow[ch];
          }
        }
      }
      if (g_node->requires_grad) {
        g_node->ensure_grad();
        for (int s = 0; s < n; ++s) {
          const double* mplane = m_node->value.data() + s * spatial * c;
          const double* gplane = g + s * spatial * c;
          double* dgrow = g_node->grad.data() + static_cast<int64_t>(s) * c;
          for (int64_t p = 0; p < spatial; ++p) {
            for (int ch = 0; ch < c; ++ch) dgrow[ch] += mplane[p * c + ch] * gplane[p * c + ch];
          }
        }
      }
    };
  }
  return Tensor(node);
}

Tensor cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
  if (probs.rank() != 2) {
    throw DimensionError("cross_entropy: probs must be (batch, classes), got " +
                         shape_str(probs.shape()));
  }
  const int n = probs.dim(0), k = probs.dim(1);
  if (static_cast<int>(labels.size()) != n) {
    throw ContractError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                        std::to_string(n));
  }
  const double* pv = probs.values().data();
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= k) {
      throw ContractError("cross_entropy: label " + std::to_string(labels[i]) +
                          " outside 0.." + std::to_string(k - 1));
    }
    double row = 0.0;
    for (int j = 0; j < k; ++j) row += pv[static_cast<int64_t>(i) * k + j];
    if (std::fabs(row - 1.0) > 1e-6) {
      throw ContractError("cross_entropy: probability row " + std::to_string(i) +
                          " sums to " + std::to_string(row));
    }
  }
  constexpr double kClamp = 1e-12;
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    loss -= std::log(std::max(pv[static_cast<int64_t>(i) * k + labels[i]], kClamp));
  }
  loss /= n;

  auto node = make_op_node({1}, {loss}, {probs.node()}, "cross_entropy");
  check_finite(Tensor(node), "cross_entropy");
  if (!node->is_leaf) {
    auto p_node = probs.node();
    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    node->backward_fn = [p_node, labels_copy, n, k](Node& self) {
      p_node->ensure_grad();
      const double g = self.grad[0];
      for (int i = 0; i < n; ++i) {
        const int64_t idx = static_cast<int64_t>(i) * k + (*labels_copy)[i];
        const double p = p_node->value[idx];
        if (p > kClamp) p_node->grad[idx] -= g / (p * n);
      }
    };
  }
  return Tensor(node);
}

}  // namespace attenlab
