#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "error.hpp"
#include "model.hpp"
#include "rng.hpp"

using namespace attenlab;
namespace fs = std::filesystem;

namespace {

Tensor random_batch(int n, int size, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(n) * size * size * 3);
  for (double& x : v) x = rng.uniform(-1.5, 1.5);
  return Tensor::from_data({n, size, size, 3}, std::move(v));
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.input_size = 16;
  c.stages = {{1, 4}, {1, 6}};
  c.head1 = 24;
  c.head2 = 12;
  c.classes = 4;
  c.gate_reduction = 2;
  c.seed = 5;
  return c;
}

std::string temp_file(const char* name) {
  return (fs::temp_directory_path() / (std::string("attenlab_model_") + name)).string();
}

}  // namespace

TEST_CASE("presets resolve and bad presets are refused") {
  ModelConfig mini = preset_config("hienet-mini");
  CHECK(mini.input_size == 64);
  CHECK(mini.stages.size() == 3);
  CHECK(mini.stages[2].channels == 64);
  ModelConfig full = preset_config("hienet-full");
  CHECK(full.input_size == 224);
  CHECK(full.stages.size() == 5);
  CHECK(full.head1 == 4096);
  CHECK_THROWS_AS(preset_config("hienet-maxi"), ConfigError);
}

TEST_CASE("config json round trips and preset overrides work") {
  ModelConfig c = tiny_config();
  c.position_attention = false;
  ModelConfig back = config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));
  CHECK(config_hash(back) == config_hash(c));

  ModelConfig overridden = config_from_json(R"({"preset":"hienet-mini","classes":2,"seed":9})");
  CHECK(overridden.input_size == 64);
  CHECK(overridden.classes == 2);
  CHECK(overridden.seed == 9);
  CHECK(config_hash(overridden) != config_hash(preset_config("hienet-mini")));

  CHECK_THROWS_AS(config_from_json("not json"), ConfigError);
}

TEST_CASE("invalid configurations are rejected at build time") {
  ModelConfig c = tiny_config();
  c.classes = 1;
  CHECK_THROWS_AS(build_model(c), ConfigError);

  ModelConfig pools = tiny_config();
  pools.input_size = 2;  // second stage would pool a 1x1 map
  CHECK_THROWS_AS(build_model(pools), ConfigError);

  ModelConfig attn = tiny_config();
  attn.input_size = 4;  // final map is 1x1, position attention impossible
  CHECK_THROWS_AS(build_model(attn), ConfigError);
  attn.position_attention = false;
  CHECK_NOTHROW(build_model(attn));
}

TEST_CASE("same seed builds bit-identical parameters") {
  ModelConfig c = tiny_config();
  Model a = build_model(c);
  Model b = build_model(c);
  auto ta = state_tensors(a);
  auto tb = state_tensors(b);
  REQUIRE(ta.size() == tb.size());
  for (size_t i = 0; i < ta.size(); ++i) {
    CHECK(ta[i].name == tb[i].name);
    CHECK(ta[i].tensor.values() == tb[i].tensor.values());
  }
  c.seed = 6;
  Model other = build_model(c);
  CHECK(state_tensors(other)[0].tensor.values() != ta[0].tensor.values());
}

TEST_CASE("hienet-mini forward emits a probability row per sample") {
  Model m = build_model(preset_config("hienet-mini"));
  Rng rng(301);
  Tensor batch = random_batch(2, 64, rng);
  NoGradGuard no_grad;
  ForwardResult r = forward(m, batch, Mode::kInfer);
  CHECK(r.probs.shape() == Shape{2, 4});
  for (int i = 0; i < 2; ++i) {
    double row = 0;
    int arg = 0;
    double best = -1;
    for (int j = 0; j < 4; ++j) {
      const double p = r.probs.at({i, j});
      row += p;
      if (p > best) {
        best = p;
        arg = j;
      }
    }
    CHECK(row == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(arg >= 0);
    CHECK(arg <= 3);
  }
  CHECK(r.fused_map.shape() == Shape{2, 8, 8, 192});
  CHECK(r.fused_gap.shape() == Shape{2, 192});
}

TEST_CASE("infer mode is pure: same input, same output, no state change") {
  Model m = build_model(tiny_config());
  Rng rng(303);
  Tensor batch = random_batch(3, 16, rng);
  NoGradGuard no_grad;
  ForwardResult r1 = forward(m, batch, Mode::kInfer);
  ForwardResult r2 = forward(m, batch, Mode::kInfer);
  CHECK(r1.probs.values() == r2.probs.values());

  // train mode does update BN running stats
  const std::vector<double> before = m.stages[0][0].bn.running_mean.values();
  forward(m, batch, Mode::kTrain);
  CHECK(m.stages[0][0].bn.running_mean.values() != before);
}

TEST_CASE("forward rejects wrong input sizes") {
  Model m = build_model(tiny_config());
  CHECK_THROWS_AS(forward(m, Tensor::zeros({1, 8, 8, 3}), Mode::kInfer), DimensionError);
  CHECK_THROWS_AS(forward(m, Tensor::zeros({16, 16, 3}), Mode::kInfer), DimensionError);
}

TEST_CASE("disabling both attention blocks leaves the backbone-only path") {
  ModelConfig c = tiny_config();
  c.position_attention = false;
  c.channel_attention = false;
  Model m = build_model(c);
  CHECK_FALSE(m.position.has_value());
  CHECK_FALSE(m.channel.has_value());
  Rng rng(305);
  Tensor batch = random_batch(1, 16, rng);
  NoGradGuard no_grad;
  ForwardResult r = forward(m, batch, Mode::kInfer);
  CHECK(r.fused_map.values() == r.backbone.values());
  CHECK(r.probs.shape() == Shape{1, 4});
  // head input shrinks to one map's worth
  CHECK(m.fc1.weight.dim(0) == 6 * (1 + 4 * 4));
}

TEST_CASE("checkpoint round trip equals the binary32-quantized original") {
  Model m = build_model(tiny_config());
  Rng rng(307);
  Tensor batch = random_batch(2, 16, rng);
  // move BN stats off their defaults so running buffers are exercised
  forward(m, batch, Mode::kTrain);

  const std::string path = temp_file("roundtrip.ckpt");
  save_checkpoint(m, path);
  Model loaded = load_checkpoint(path);

  for (NamedTensor& nt : state_tensors(m)) {
    for (double& v : nt.tensor.values_mut()) v = static_cast<double>(static_cast<float>(v));
  }
  NoGradGuard no_grad;
  ForwardResult expect = forward(m, batch, Mode::kInfer);
  ForwardResult got = forward(loaded, batch, Mode::kInfer);
  CHECK(got.probs.values() == expect.probs.values());  // bitwise

  // a second save is byte-identical
  const std::string path2 = temp_file("roundtrip2.ckpt");
  save_checkpoint(loaded, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  fs::remove(path);
  fs::remove(path2);
}

TEST_CASE("truncated checkpoints fail cleanly") {
  Model m = build_model(tiny_config());
  const std::string path = temp_file("trunc.ckpt");
  save_checkpoint(m, path);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();

  for (size_t cut : {size_t(3), size_t(40), bytes.size() - 17}) {
    const std::string cut_path = temp_file("cut.ckpt");
    std::ofstream out(cut_path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(cut));
    out.close();
    CHECK_THROWS_AS(load_checkpoint(cut_path), FormatError);
    fs::remove(cut_path);
  }
  fs::remove(path);
}

TEST_CASE("checkpoints guard against manifest tampering") {
  ModelConfig c = tiny_config();
  Model m = build_model(c);
  const std::string path = temp_file("tamper.ckpt");
  save_checkpoint(m, path);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();

  const std::string needle = "\"classes\":4";
  const size_t at = bytes.find(needle);
  REQUIRE(at != std::string::npos);
  bytes[at + needle.size() - 1] = '2';  // config edited without rehashing
  const std::string bad_path = temp_file("tampered.ckpt");
  std::ofstream out(bad_path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  try {
    load_checkpoint(bad_path);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("config_hash") != std::string::npos);
  }
  fs::remove(path);
  fs::remove(bad_path);
}

TEST_CASE("full composite forward passes grad_check at 8x8 input") {
  // Two stages keep the attention pool meaningful at this input size.
  ModelConfig c;
  c.input_size = 8;
  c.stages = {{1, 4}, {1, 6}};
  c.head1 = 16;
  c.head2 = 8;
  c.classes = 3;
  c.gate_reduction = 2;
  c.seed = 11;
  Model m = build_model(c);

  Rng rng(311);
  std::vector<double> v(8 * 8 * 3);
  for (double& x : v) x = rng.uniform(-1.2, 1.2);
  Tensor probe = Tensor::from_data({8, 8, 3}, std::move(v));

  auto f = [&](const Tensor& t) {
    Tensor batch = reshape(t, {1, 8, 8, 3});
    ForwardResult r = forward(m, batch, Mode::kInfer);
    return cross_entropy(r.probs, {1});
  };
  CHECK(grad_check(f, probe) <= 1e-3);
}
