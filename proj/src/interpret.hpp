#pragma once

#include <string>
#include <vector>

#include "image.hpp"
#include "model.hpp"

namespace attenlab {

// Saliency map over the model input, min-max normalized to [0,1] (all zeros
// when the raw map is constant).
struct Heatmap {
  int height = 0;
  int width = 0;
  std::vector<double> values;
  std::string source;  // "cam" or "gb"
  int target_class = 0;
};

// Class activation map over the fused feature map: the class logit's
// gradient with respect to the map, elementwise against the activations,
// relu-clipped, normalized and bilinearly upsampled to the model input
// resolution. Equals the classic GAP-weighted map whenever the gradient is
// spatially constant (a pure-GAP head).
Heatmap cam(Model& model, const Image& image, int target_class);

// Gradient of the class logit with respect to the input pixels where every
// relu backward also drops negative incoming gradients; channels collapse by
// max absolute value.
Heatmap guided_backprop(Model& model, const Image& image, int target_class);

GrayImage render_gray(const Heatmap& heatmap);

// Fixed blue->green->red ramp blended over the base image at alpha 0.5; the
// heatmap is bilinearly upsampled to the base dimensions first.
Image render_overlay(const Heatmap& heatmap, const Image& base);

}  // namespace attenlab
