#pragma once

#include <vector>

#include "layers.hpp"
#include "tensor.hpp"

namespace attenlab {

// Non-local mixing across spatial positions. Three 1x1 convolutions produce
// keys, queries and values; queries and values are halved along the position
// axis by a window-2/stride-2 max pool, row-softmaxed key/query scores weight
// the values, and a final 1x1 convolution plus batch norm restores the input
// shape.
struct PositionAttentionParams {
  ConvParams key_conv;    // c -> c
  ConvParams query_conv;  // c -> c
  ConvParams value_conv;  // c -> c
  ConvParams out_conv;    // c -> c
  BatchNormParams bn;
};

// Channel gate: squeeze with global average pooling, excite with a two-layer
// bottleneck, scale each channel of the input by the sigmoid gate.
struct ChannelAttentionParams {
  DenseParams fc1;  // c -> ceil(c / reduction)
  DenseParams fc2;  // ceil(c / reduction) -> c
  int reduction = 4;
};

PositionAttentionParams make_position_attention_params(int channels);
ChannelAttentionParams make_channel_attention_params(int channels, int reduction);

// Input (h,w,c) or (n,h,w,c); output has the same shape. Requires h*w >= 2
// (the position pool must keep at least one row).
Tensor position_attention(const Tensor& map, PositionAttentionParams& params, Mode mode);

// Input (h,w,c) or (n,h,w,c); output has the same shape.
Tensor channel_attention(const Tensor& map, const ChannelAttentionParams& params);

struct FusedFeatures {
  Tensor map;         // channel concat of the input maps
  Tensor pooled;      // gap(map)
  Tensor head_input;  // concat(gap(map), flatten(map))
};

// Maps must share shape; concatenates along the channel axis and builds the
// classifier-head input vector.
FusedFeatures fuse_maps(const std::vector<Tensor>& maps);

}  // namespace attenlab
