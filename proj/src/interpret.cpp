#include "interpret.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"
#include "training.hpp"

namespace attenlab {

namespace {

void minmax_normalize(std::vector<double>& values) {
  double lo = values[0], hi = values[0];
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi <= lo) {
    std::fill(values.begin(), values.end(), 0.0);
    return;
  }
  const double span = hi - lo;
  for (double& v : values) v = (v - lo) / span;
}

Tensor class_logit(const ForwardResult& r, int target_class) {
  return select(select(r.logits, 0), target_class);
}

void check_target(const Model& model, int target_class) {
  if (target_class < 0 || target_class >= model.config.classes) {
    throw ContractError("saliency: class " + std::to_string(target_class) + " outside 0.." +
                        std::to_string(model.config.classes - 1));
  }
}

}  // namespace

Heatmap cam(Model& model, const Image& image, int target_class) {
  check_target(model, target_class);
  const int size = model.config.input_size;
  Tensor batch = reshape(preprocess(image, size), {1, size, size, 3});
  ForwardResult r = forward(model, batch, Mode::kInfer);
  check_finite(r.logits, "cam logits");
  backward(class_logit(r, target_class));
  if (!r.fused_map.has_grad()) throw NumericError("cam: no gradient reached the fused features");

  // Per-cell weighting: the logit gradient with respect to the fused map,
  // taken elementwise against the activations. The head reads the map both
  // pooled and flattened; position-resolved gradients keep the flattened
  // pathway's evidence localized, and for a pure-GAP head (spatially constant
  // gradient) this is exactly the classic channel-weighted map.
  const std::vector<double>& dmap = r.fused_map.grad();
  const Shape& ms = r.fused_map.shape();  // (1, h, w, channels)
  const int h = ms[1], w = ms[2], channels = ms[3];
  const double* map = r.fused_map.values().data();
  for (double v : dmap) {
    if (!std::isfinite(v)) throw NumericError("cam: non-finite feature gradients");
  }

  std::vector<double> heat(static_cast<size_t>(h) * w, 0.0);
  for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) acc += dmap[p * channels + c] * map[p * channels + c];
    heat[p] = std::max(acc, 0.0);  // keep positive evidence
  }
  minmax_normalize(heat);

  Heatmap out;
  out.height = size;
  out.width = size;
  out.values = resize_bilinear(heat, h, w, 1, size, size);
  // bilinear interpolation stays inside [min, max], so the range is intact
  out.source = "cam";
  out.target_class = target_class;
  return out;
}

Heatmap guided_backprop(Model& model, const Image& image, int target_class) {
  check_target(model, target_class);
  const int size = model.config.input_size;
  Tensor pre = preprocess(image, size);
  Tensor batch = Tensor::from_data({1, size, size, 3}, pre.values(), true);
  ForwardResult r = forward(model, batch, Mode::kInfer);
  check_finite(r.logits, "guided_backprop logits");
  {
    GuidedReluGuard guided;
    backward(class_logit(r, target_class));
  }
  if (!batch.has_grad()) throw NumericError("guided_backprop: no input gradient");
  const std::vector<double>& grad = batch.grad();

  Heatmap out;
  out.height = size;
  out.width = size;
  out.values.resize(static_cast<size_t>(size) * size);
  for (int64_t p = 0; p < static_cast<int64_t>(size) * size; ++p) {
    double best = 0.0;
    for (int c = 0; c < 3; ++c) best = std::max(best, std::fabs(grad[p * 3 + c]));
    out.values[p] = best;
  }
  minmax_normalize(out.values);
  out.source = "gb";
  out.target_class = target_class;
  return out;
}

GrayImage render_gray(const Heatmap& heatmap) {
  GrayImage out;
  out.height = heatmap.height;
  out.width = heatmap.width;
  out.pixels.resize(heatmap.values.size());
  for (size_t i = 0; i < heatmap.values.size(); ++i) {
    out.pixels[i] = static_cast<uint8_t>(std::lround(std::clamp(heatmap.values[i], 0.0, 1.0) * 255.0));
  }
  return out;
}

namespace {

// t in [0,1] across navy -> blue -> green -> yellow -> red
void ramp_color(double t, double rgb[3]) {
  static const double stops[5][3] = {
      {0, 0, 128}, {0, 0, 255}, {0, 255, 0}, {255, 255, 0}, {255, 0, 0}};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const int seg = std::min(static_cast<int>(t), 3);
  const double f = t - seg;
  for (int c = 0; c < 3; ++c) rgb[c] = stops[seg][c] * (1.0 - f) + stops[seg + 1][c] * f;
}

}  // namespace

Image render_overlay(const Heatmap& heatmap, const Image& base) {
  if (base.empty()) throw DimensionError("render_overlay: empty base image");
  if (heatmap.values.empty()) throw DimensionError("render_overlay: empty heatmap");
  const std::vector<double> scaled =
      resize_bilinear(heatmap.values, heatmap.height, heatmap.width, 1, base.height, base.width);
  Image out;
  out.height = base.height;
  out.width = base.width;
  out.rgb.resize(base.rgb.size());
  for (int64_t p = 0; p < static_cast<int64_t>(base.height) * base.width; ++p) {
    double rgb[3];
    ramp_color(scaled[p], rgb);
    for (int c = 0; c < 3; ++c) {
      const double blended = 0.5 * base.rgb[p * 3 + c] + 0.5 * rgb[c];
      out.rgb[p * 3 + c] = static_cast<uint8_t>(std::lround(blended));
    }
  }
  return out;
}

}  // namespace attenlab
