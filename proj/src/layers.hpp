#pragma once

#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace attenlab {

// Maps are (h, w, c); a leading batch axis is accepted everywhere it makes
// sense and is required for batch statistics.
enum class Mode { kTrain, kInfer };
enum class Padding { kSame, kValid };

struct ConvParams {
  Tensor kernel;  // (kh, kw, c_in, c_out)
  Tensor bias;    // (c_out)
};

struct DenseParams {
  Tensor weight;  // (in, out)
  Tensor bias;    // (out)
};

struct BatchNormParams {
  Tensor gamma;         // (c), trainable
  Tensor beta;          // (c), trainable
  Tensor running_mean;  // (c), updated in train mode, used in infer mode
  Tensor running_var;   // (c)
  double momentum = 0.99;
  double eps = 1e-5;
};

ConvParams make_conv_params(int kh, int kw, int c_in, int c_out);
DenseParams make_dense_params(int in, int out);
BatchNormParams make_batchnorm_params(int channels);

void fill_he_normal(Tensor& t, int fan_in, Rng& rng);
void fill_glorot_uniform(Tensor& t, int fan_in, int fan_out, Rng& rng);

// Cross-correlation plus bias. Input (h,w,c_in) or (n,h,w,c_in); "same"
// zero-pads so the spatial output is ceil(extent/stride).
Tensor conv2d(const Tensor& input, const ConvParams& params, int stride, Padding padding);

// Spatial max pooling over (h, w). Gradient flows to the argmax, first index
// winning ties.
Tensor maxpool2d(const Tensor& input, int window, int stride);

// Max pooling along axis 0 of a (rows, c) matrix; trailing rows that do not
// fill a window are dropped.
Tensor maxpool_rows(const Tensor& input, int window, int stride);

// x (in) or (batch, in) against weight (in, out): x*W + b.
Tensor dense(const Tensor& x, const DenseParams& params);

// Per-channel batch normalization over every non-channel axis. Train mode
// normalizes with batch statistics and updates the running buffers in place;
// infer mode is a fixed affine map using the running buffers.
Tensor batchnorm(const Tensor& x, BatchNormParams& params, Mode mode);

Tensor gap(const Tensor& map);      // per-channel spatial mean
Tensor flatten(const Tensor& map);  // row-major unroll (keeps batch axis)

// map (h,w,c) scaled by gate (c), or (n,h,w,c) by (n,c).
Tensor scale_channels(const Tensor& map, const Tensor& gate);

// Mean over the batch of -ln(probs[label]); probabilities are clamped at
// 1e-12 before the log. Rows must already sum to 1 within 1e-6.
Tensor cross_entropy(const Tensor& probs, const std::vector<int>& labels);

}  // namespace attenlab
