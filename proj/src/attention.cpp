#include "attention.hpp"

#include <string>

#include "error.hpp"

namespace attenlab {

namespace {

// Single-sample core of the position block, everything before batch norm.
Tensor position_mix(const Tensor& map, PositionAttentionParams& params) {
  const int h = map.dim(0), w = map.dim(1), c = map.dim(2);
  const int positions = h * w;
  if (positions < 2) {
    throw DimensionError("position_attention: needs at least 2 spatial positions, got " +
                         shape_str(map.shape()));
  }
  Tensor keys = reshape(conv2d(map, params.key_conv, 1, Padding::kSame), {positions, c});
  Tensor queries = maxpool_rows(
      reshape(conv2d(map, params.query_conv, 1, Padding::kSame), {positions, c}), 2, 2);
  Tensor values = maxpool_rows(
      reshape(conv2d(map, params.value_conv, 1, Padding::kSame), {positions, c}), 2, 2);
  Tensor weights = softmax(matmul(keys, transpose(queries)), 1);
  Tensor mixed = reshape(matmul(weights, values), {h, w, c});
  return conv2d(mixed, params.out_conv, 1, Padding::kSame);
}

}  // namespace

PositionAttentionParams make_position_attention_params(int channels) {
  PositionAttentionParams p;
  p.key_conv = make_conv_params(1, 1, channels, channels);
  p.query_conv = make_conv_params(1, 1, channels, channels);
  p.value_conv = make_conv_params(1, 1, channels, channels);
  p.out_conv = make_conv_params(1, 1, channels, channels);
  p.bn = make_batchnorm_params(channels);
  return p;
}

ChannelAttentionParams make_channel_attention_params(int channels, int reduction) {
  if (reduction < 1) throw ContractError("channel_attention: reduction must be >= 1");
  ChannelAttentionParams p;
  const int hidden = (channels + reduction - 1) / reduction;
  p.fc1 = make_dense_params(channels, hidden);
  p.fc2 = make_dense_params(hidden, channels);
  p.reduction = reduction;
  return p;
}

Tensor position_attention(const Tensor& map, PositionAttentionParams& params, Mode mode) {
  if (map.rank() == 3) {
    return batchnorm(position_mix(map, params), params.bn, mode);
  }
  if (map.rank() == 4) {
    std::vector<Tensor> per_sample;
    per_sample.reserve(map.dim(0));
    for (int s = 0; s < map.dim(0); ++s) {
      per_sample.push_back(position_mix(select(map, s), params));
    }
    return batchnorm(stack(per_sample), params.bn, mode);
  }
  throw DimensionError("position_attention: input must be (h,w,c) or (n,h,w,c), got " +
                       shape_str(map.shape()));
}

Tensor channel_attention(const Tensor& map, const ChannelAttentionParams& params) {
  if (map.rank() != 3 && map.rank() != 4) {
    throw DimensionError("channel_attention: input must be (h,w,c) or (n,h,w,c), got " +
                         shape_str(map.shape()));
  }
  Tensor squeezed = gap(map);
  Tensor gate = sigmoid(dense(relu(dense(squeezed, params.fc1)), params.fc2));
  return scale_channels(map, gate);
}

FusedFeatures fuse_maps(const std::vector<Tensor>& maps) {
  if (maps.empty()) throw ContractError("fuse_maps: no feature maps");
  for (const Tensor& m : maps) {
    if (m.shape() != maps[0].shape()) {
      throw DimensionError("fuse_maps: map shapes disagree: " + shape_str(maps[0].shape()) +
                           " vs " + shape_str(m.shape()));
    }
  }
  const int rank = maps[0].rank();
  if (rank != 3 && rank != 4) {
    throw DimensionError("fuse_maps: maps must be (h,w,c) or (n,h,w,c), got " +
                         shape_str(maps[0].shape()));
  }
  FusedFeatures out;
  out.map = maps.size() == 1 ? maps[0] : concat(maps, rank - 1);
  out.pooled = gap(out.map);
  out.head_input = concat({out.pooled, flatten(out.map)}, rank == 4 ? 1 : 0);
  return out;
}

}  // namespace attenlab
