#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "error.hpp"
#include "interpret.hpp"
#include "layers.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "training.hpp"

using namespace attenlab;

namespace {

Image random_image(int h, int w, Rng& rng) {
  Image img;
  img.height = h;
  img.width = w;
  img.rgb.resize(static_cast<size_t>(h) * w * 3);
  for (auto& b : img.rgb) b = static_cast<uint8_t>(rng.below(256));
  return img;
}

// single-channel backbone, no attention, all head weights positive
Model single_channel_model() {
  ModelConfig mc;
  mc.input_size = 8;
  mc.stages = {{1, 1}};
  mc.position_attention = false;
  mc.channel_attention = false;
  mc.head1 = 3;
  mc.head2 = 3;
  mc.classes = 2;
  mc.seed = 23;
  Model m = build_model(mc);
  for (double& v : m.fc1.weight.values_mut()) v = 0.4;
  for (double& v : m.fc1.bias.values_mut()) v = 1.0;
  for (double& v : m.fc2.weight.values_mut()) v = 0.4;
  for (double& v : m.fc2.bias.values_mut()) v = 1.0;
  for (double& v : m.fc3.weight.values_mut()) v = 0.0;
  m.fc3.weight.values_mut()[0] = 1.0;  // class 0 reads the head positively
  m.fc3.weight.values_mut()[2] = 1.0;
  m.fc3.weight.values_mut()[4] = 1.0;
  return m;
}

ModelConfig small_config() {
  ModelConfig mc;
  mc.input_size = 16;
  mc.stages = {{1, 4}, {1, 6}};
  mc.head1 = 16;
  mc.head2 = 8;
  mc.classes = 4;
  mc.gate_reduction = 2;
  mc.seed = 29;
  return mc;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
  return worst;
}

}  // namespace

TEST_CASE("single positive-weight channel makes cam the normalized channel itself") {
  Model m = single_channel_model();
  Rng rng(601);
  Image img = random_image(8, 8, rng);

  Heatmap map = cam(m, img, 0);
  CHECK(map.height == 8);
  CHECK(map.width == 8);

  // recompute the lone fused channel and normalize it independently
  Tensor batch = reshape(preprocess(img, 8), {1, 8, 8, 3});
  NoGradGuard no_grad;
  ForwardResult r = forward(m, batch, Mode::kInfer);
  std::vector<double> channel = r.fused_map.values();  // (1,4,4,1)
  double lo = channel[0], hi = channel[0];
  for (double v : channel) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double& v : channel) v = (v - lo) / (hi - lo);
  const std::vector<double> upsampled = resize_bilinear(channel, 4, 4, 1, 8, 8);
  CHECK(max_abs_diff(map.values, upsampled) <= 1e-9);
}

TEST_CASE("a zeroed head yields all-zero saliency maps") {
  Model m = build_model(small_config());
  for (double& v : m.fc3.weight.values_mut()) v = 0.0;
  for (double& v : m.fc3.bias.values_mut()) v = 0.0;
  Rng rng(603);
  Image img = random_image(16, 16, rng);

  Heatmap c = cam(m, img, 1);
  for (double v : c.values) CHECK(v == 0.0);
  Heatmap g = guided_backprop(m, img, 1);
  for (double v : g.values) CHECK(v == 0.0);
}

TEST_CASE("saliency is invariant to positive rescaling of the class logit") {
  Model m = build_model(small_config());
  Rng rng(605);
  Image img = random_image(16, 16, rng);
  Heatmap cam_before = cam(m, img, 2);
  Heatmap gb_before = guided_backprop(m, img, 2);

  for (double& v : m.fc3.weight.values_mut()) v *= 2.0;
  for (double& v : m.fc3.bias.values_mut()) v *= 2.0;
  Heatmap cam_after = cam(m, img, 2);
  Heatmap gb_after = guided_backprop(m, img, 2);
  CHECK(max_abs_diff(cam_before.values, cam_after.values) <= 1e-9);
  CHECK(max_abs_diff(gb_before.values, gb_after.values) <= 1e-9);
}

TEST_CASE("cam ignores the parameters of unrelated classes") {
  Model m = build_model(small_config());
  Rng rng(607);
  Image img = random_image(16, 16, rng);
  Heatmap before = cam(m, img, 0);

  // zero every head column except class 0
  const int out = m.fc3.weight.dim(1);
  auto& w = m.fc3.weight.values_mut();
  for (int i = 0; i < m.fc3.weight.dim(0); ++i) {
    for (int j = 1; j < out; ++j) w[i * out + j] = 0.0;
  }
  for (int j = 1; j < out; ++j) m.fc3.bias.values_mut()[j] = 0.0;
  Heatmap after = cam(m, img, 0);
  CHECK(max_abs_diff(before.values, after.values) <= 1e-12);
}

TEST_CASE("guided backprop equals plain backprop when no relu is crossed") {
  Rng rng(609);
  DenseParams d1 = make_dense_params(6, 5);
  DenseParams d2 = make_dense_params(5, 1);
  for (double& v : d1.weight.values_mut()) v = rng.uniform(-1, 1);
  for (double& v : d2.weight.values_mut()) v = rng.uniform(-1, 1);
  std::vector<double> xv(6);
  for (double& v : xv) v = rng.uniform(-1, 1);

  Tensor x1 = Tensor::from_data({6}, xv, true);
  backward(sum(dense(sigmoid(dense(x1, d1)), d2)));
  Tensor x2 = Tensor::from_data({6}, xv, true);
  {
    GuidedReluGuard guided;
    backward(sum(dense(sigmoid(dense(x2, d1)), d2)));
  }
  CHECK(max_abs_diff(x1.grad(), x2.grad()) == 0.0);
}

TEST_CASE("guided backprop masks exactly the negative upstream gradients at relus") {
  Rng rng(611);
  const int in = 8, mid = 6;
  DenseParams d1 = make_dense_params(in, mid);
  DenseParams d2 = make_dense_params(mid, 1);
  for (double& v : d1.weight.values_mut()) v = rng.uniform(-1, 1);
  for (double& v : d1.bias.values_mut()) v = rng.uniform(-0.3, 0.3);
  for (double& v : d2.weight.values_mut()) v = rng.uniform(-1, 1);
  std::vector<double> xv(in);
  for (double& v : xv) v = rng.uniform(-1, 1);

  // library result under the guided rule
  Tensor x = Tensor::from_data({in}, xv, true);
  Tensor hidden = dense(x, d1);
  Tensor y = dense(relu(hidden), d2);
  {
    GuidedReluGuard guided;
    backward(sum(y));
  }

  // manual recomputation: mask = (pre-activation > 0) AND (upstream grad > 0)
  std::vector<double> pre(mid, 0.0), upstream(mid);
  for (int j = 0; j < mid; ++j) {
    pre[j] = d1.bias.values()[j];
    for (int i = 0; i < in; ++i) pre[j] += xv[i] * d1.weight.values()[i * mid + j];
    upstream[j] = d2.weight.values()[j];  // d sum(y) / d relu_j
  }
  std::vector<double> expect(in, 0.0);
  for (int j = 0; j < mid; ++j) {
    if (pre[j] > 0.0 && upstream[j] > 0.0) {
      for (int i = 0; i < in; ++i) expect[i] += upstream[j] * d1.weight.values()[i * mid + j];
    }
  }
  CHECK(max_abs_diff(x.grad(), expect) <= 1e-12);

  // and it genuinely differs from the vanilla gradient when negatives exist
  bool has_negative_upstream = false;
  for (int j = 0; j < mid; ++j) has_negative_upstream |= (pre[j] > 0.0 && upstream[j] < 0.0);
  if (has_negative_upstream) {
    Tensor x_plain = Tensor::from_data({in}, xv, true);
    backward(sum(dense(relu(dense(x_plain, d1)), d2)));
    CHECK(max_abs_diff(x_plain.grad(), expect) > 1e-12);
  }
}

TEST_CASE("guided backprop maps are non-negative and rendered sizes line up") {
  Model m = build_model(small_config());
  Rng rng(613);
  Image img = random_image(20, 24, rng);  // non-square, resized on the way in
  Heatmap g = guided_backprop(m, img, 3);
  for (double v : g.values) CHECK(v >= 0.0);
  CHECK(g.height == 16);

  GrayImage gray = render_gray(g);
  CHECK(gray.height == 16);
  CHECK(gray.width == 16);

  Image overlay = render_overlay(g, img);
  CHECK(overlay.height == img.height);
  CHECK(overlay.width == img.width);
}

TEST_CASE("render extremes: black for zero maps, ramp-max blend for ones") {
  Heatmap zero;
  zero.height = 4;
  zero.width = 4;
  zero.values.assign(16, 0.0);
  GrayImage black = render_gray(zero);
  for (uint8_t p : black.pixels) CHECK(static_cast<int>(p) == 0);

  Heatmap one = zero;
  one.values.assign(16, 1.0);
  Image base;
  base.height = 4;
  base.width = 4;
  base.rgb.assign(48, 100);
  Image blend = render_overlay(one, base);
  for (int p = 0; p < 16; ++p) {
    CHECK(static_cast<int>(blend.rgb[p * 3]) == 178);    // 0.5*100 + 0.5*255, rounded
    CHECK(static_cast<int>(blend.rgb[p * 3 + 1]) == 50); // 0.5*100
    CHECK(static_cast<int>(blend.rgb[p * 3 + 2]) == 50);
  }
  CHECK_THROWS_AS(render_overlay(one, Image{}), DimensionError);
}

TEST_CASE("saliency rejects invalid classes") {
  Model m = build_model(small_config());
  Rng rng(617);
  Image img = random_image(16, 16, rng);
  CHECK_THROWS_AS(cam(m, img, 4), ContractError);
  CHECK_THROWS_AS(guided_backprop(m, img, -1), ContractError);
}
