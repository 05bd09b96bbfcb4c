#include "model.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstring>
#include <fstream>

#include "error.hpp"
#include "rng.hpp"

namespace attenlab {

using nlohmann::json;

ModelConfig preset_config(const std::string& name) {
  if (name == "hienet-mini") return ModelConfig{};
  if (name == "hienet-full") {
    ModelConfig c;
    c.input_size = 224;
    c.stages = {{2, 64}, {2, 128}, {3, 256}, {3, 512}, {3, 512}};
    c.head1 = 4096;
    c.head2 = 1024;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (expected hienet-mini or hienet-full)");
}

std::string config_to_json(const ModelConfig& c) {
  json stages = json::array();
  for (const StageSpec& s : c.stages) stages.push_back({s.convs, s.channels});
  const json j{{"input_size", c.input_size},
               {"stages", stages},
               {"position_attention", c.position_attention},
               {"channel_attention", c.channel_attention},
               {"head1", c.head1},
               {"head2", c.head2},
               {"classes", c.classes},
               {"gate_reduction", c.gate_reduction},
               {"seed", c.seed}};
  return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config JSON: expected an object");
  ModelConfig c;
  if (j.contains("preset")) c = preset_config(j.at("preset").get<std::string>());
  try {
    if (j.contains("input_size")) c.input_size = j.at("input_size").get<int>();
    if (j.contains("stages")) {
      c.stages.clear();
      for (const auto& s : j.at("stages")) {
        c.stages.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
      }
    }
    if (j.contains("position_attention")) c.position_attention = j.at("position_attention").get<bool>();
    if (j.contains("channel_attention")) c.channel_attention = j.at("channel_attention").get<bool>();
    if (j.contains("head1")) c.head1 = j.at("head1").get<int>();
    if (j.contains("head2")) c.head2 = j.at("head2").get<int>();
    if (j.contains("classes")) c.classes = j.at("classes").get<int>();
    if (j.contains("gate_reduction")) c.gate_reduction = j.at("gate_reduction").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config JSON: ") + e.what());
  }
  return c;
}

uint64_t config_hash(const ModelConfig& config) {
  const std::string text = config_to_json(config);
  uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

struct MapDims {
  int h = 0, w = 0, c = 0;
};

MapDims validate_config(const ModelConfig& c) {
  if (c.classes < 2) throw ConfigError("config: classes must be >= 2");
  if (c.stages.empty()) throw ConfigError("config: at least one backbone stage required");
  if (c.head1 < 1 || c.head2 < 1) throw ConfigError("config: head widths must be >= 1");
  if (c.gate_reduction < 1) throw ConfigError("config: gate_reduction must be >= 1");
  if (c.input_size < 1) throw ConfigError("config: input_size must be >= 1");
  MapDims d{c.input_size, c.input_size, 3};
  for (size_t i = 0; i < c.stages.size(); ++i) {
    if (c.stages[i].convs < 1 || c.stages[i].channels < 1) {
      throw ConfigError("config: stage " + std::to_string(i) + " is degenerate");
    }
    if (d.h < 2 || d.w < 2) {
      throw ConfigError("config: stage " + std::to_string(i) + " pools a map of " +
                        std::to_string(d.h) + "x" + std::to_string(d.w));
    }
    d.c = c.stages[i].channels;
    d.h /= 2;
    d.w /= 2;
  }
  if (c.position_attention && d.h * d.w < 2) {
    throw ConfigError("config: position attention needs >= 2 spatial positions, map is " +
                      std::to_string(d.h) + "x" + std::to_string(d.w));
  }
  return d;
}

}  // namespace

Model build_model(const ModelConfig& config) {
  const MapDims feat = validate_config(config);
  Model m;
  m.config = config;
  Rng rng(derive_seed(config.seed, 0x6d6f64656cULL));

  int c_in = 3;
  for (const StageSpec& stage : config.stages) {
    std::vector<ConvBlock> blocks;
    for (int i = 0; i < stage.convs; ++i) {
      ConvBlock b;
      b.conv = make_conv_params(3, 3, c_in, stage.channels);
      fill_he_normal(b.conv.kernel, 3 * 3 * c_in, rng);
      b.bn = make_batchnorm_params(stage.channels);
      blocks.push_back(std::move(b));
      c_in = stage.channels;
    }
    m.stages.push_back(std::move(blocks));
  }

  const int c = feat.c;
  if (config.position_attention) {
    PositionAttentionParams p = make_position_attention_params(c);
    for (ConvParams* conv : {&p.key_conv, &p.query_conv, &p.value_conv, &p.out_conv}) {
      fill_glorot_uniform(conv->kernel, c, c, rng);
    }
    m.position = std::move(p);
  }
  if (config.channel_attention) {
    ChannelAttentionParams p = make_channel_attention_params(c, config.gate_reduction);
    fill_glorot_uniform(p.fc1.weight, p.fc1.weight.dim(0), p.fc1.weight.dim(1), rng);
    fill_glorot_uniform(p.fc2.weight, p.fc2.weight.dim(0), p.fc2.weight.dim(1), rng);
    m.channel = std::move(p);
  }

  const int map_count = 1 + (config.position_attention ? 1 : 0) +
                        (config.channel_attention ? 1 : 0);
  const int head_in = map_count * c * (1 + feat.h * feat.w);
  m.fc1 = make_dense_params(head_in, config.head1);
  fill_he_normal(m.fc1.weight, head_in, rng);
  m.fc2 = make_dense_params(config.head1, config.head2);
  fill_he_normal(m.fc2.weight, config.head1, rng);
  // the logit layer starts at zero: uniform class probabilities at step one
  // keep the hot Adam rate from saturating the softmax before the backbone
  // has seen any data
  m.fc3 = make_dense_params(config.head2, config.classes);
  return m;
}

std::vector<NamedTensor> trainable_parameters(Model& m) {
  std::vector<NamedTensor> out;
  auto conv = [&out](const std::string& name, ConvParams& p) {
    out.push_back({name + ".kernel", p.kernel});
    out.push_back({name + ".bias", p.bias});
  };
  auto bn = [&out](const std::string& name, BatchNormParams& p) {
    out.push_back({name + ".gamma", p.gamma});
    out.push_back({name + ".beta", p.beta});
  };
  auto fc = [&out](const std::string& name, DenseParams& p) {
    out.push_back({name + ".weight", p.weight});
    out.push_back({name + ".bias", p.bias});
  };
  for (size_t s = 0; s < m.stages.size(); ++s) {
    for (size_t b = 0; b < m.stages[s].size(); ++b) {
      const std::string base = "stage" + std::to_string(s) + ".block" + std::to_string(b);
      conv(base + ".conv", m.stages[s][b].conv);
      bn(base + ".bn", m.stages[s][b].bn);
    }
  }
  if (m.position) {
    conv("position.key", m.position->key_conv);
    conv("position.query", m.position->query_conv);
    conv("position.value", m.position->value_conv);
    conv("position.out", m.position->out_conv);
    bn("position.bn", m.position->bn);
  }
  if (m.channel) {
    fc("channel.fc1", m.channel->fc1);
    fc("channel.fc2", m.channel->fc2);
  }
  fc("head.fc1", m.fc1);
  fc("head.fc2", m.fc2);
  fc("head.fc3", m.fc3);
  return out;
}

std::vector<NamedTensor> state_tensors(Model& m) {
  std::vector<NamedTensor> out = trainable_parameters(m);
  auto running = [&out](const std::string& name, BatchNormParams& p) {
    out.push_back({name + ".running_mean", p.running_mean});
    out.push_back({name + ".running_var", p.running_var});
  };
  for (size_t s = 0; s < m.stages.size(); ++s) {
    for (size_t b = 0; b < m.stages[s].size(); ++b) {
      running("stage" + std::to_string(s) + ".block" + std::to_string(b) + ".bn",
              m.stages[s][b].bn);
    }
  }
  if (m.position) running("position.bn", m.position->bn);
  return out;
}

ForwardResult forward(Model& m, const Tensor& batch, Mode mode) {
  const int size = m.config.input_size;
  if (batch.rank() != 4 || batch.dim(1) != size || batch.dim(2) != size || batch.dim(3) != 3) {
    throw DimensionError("forward: expected (n," + std::to_string(size) + "," +
                         std::to_string(size) + ",3), got " + shape_str(batch.shape()));
  }
  ForwardResult r;
  r.input = batch;
  Tensor x = batch;
  for (auto& stage : m.stages) {
    for (ConvBlock& block : stage) {
      x = relu(batchnorm(conv2d(x, block.conv, 1, Padding::kSame), block.bn, mode));
    }
    x = maxpool2d(x, 2, 2);
  }
  r.backbone = x;

  std::vector<Tensor> maps{x};
  if (m.position) {
    r.pos_map = position_attention(x, *m.position, mode);
    maps.push_back(r.pos_map);
  }
  if (m.channel) {
    r.chan_map = channel_attention(x, *m.channel);
    maps.push_back(r.chan_map);
  }
  FusedFeatures fused = fuse_maps(maps);
  r.fused_map = fused.map;
  r.fused_gap = fused.pooled;

  Tensor h1 = relu(dense(fused.head_input, m.fc1));
  Tensor h2 = relu(dense(h1, m.fc2));
  r.logits = dense(h2, m.fc3);
  r.probs = softmax(r.logits, 1);
  return r;
}

namespace {

constexpr char kMagic[6] = {'H', 'I', 'E', 'N', '1', '\n'};

void append_f32_le(std::vector<uint8_t>& out, double v) {
  const float f = static_cast<float>(v);
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  out.push_back(uint8_t(bits));
  out.push_back(uint8_t(bits >> 8));
  out.push_back(uint8_t(bits >> 16));
  out.push_back(uint8_t(bits >> 24));
}

double read_f32_le(const uint8_t* p) {
  const uint32_t bits = uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) |
                        (uint32_t(p[3]) << 24);
  float f;
  std::memcpy(&f, &bits, 4);
  return static_cast<double>(f);
}

}  // namespace

void save_checkpoint(Model& m, const std::string& path) {
  const std::vector<NamedTensor> tensors = state_tensors(m);
  json manifest_tensors = json::array();
  std::vector<uint8_t> blob;
  for (const NamedTensor& nt : tensors) {
    manifest_tensors.push_back({{"name", nt.name},
                                {"shape", nt.tensor.shape()},
                                {"offset", blob.size()}});
    for (double v : nt.tensor.values()) append_f32_le(blob, v);
  }
  char hash_hex[17];
  std::snprintf(hash_hex, sizeof hash_hex, "%016llx",
                static_cast<unsigned long long>(config_hash(m.config)));
  const json manifest{{"config", json::parse(config_to_json(m.config))},
                      {"config_hash", hash_hex},
                      {"tensors", manifest_tensors}};

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(kMagic, sizeof kMagic);
  const std::string manifest_text = manifest.dump();
  out.write(manifest_text.data(), static_cast<std::streamsize>(manifest_text.size()));
  out.put('\n');
  out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("short write to checkpoint " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());

  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic (field: magic)");
  }
  if (bytes[4] != '1') {
    throw FormatError("checkpoint: unknown version '" + std::string(1, char(bytes[4])) +
                      "' (field: version)");
  }
  if (bytes[5] != '\n') throw FormatError("checkpoint: bad header (field: magic)");

  size_t manifest_end = sizeof kMagic;
  while (manifest_end < bytes.size() && bytes[manifest_end] != '\n') ++manifest_end;
  if (manifest_end >= bytes.size()) {
    throw FormatError("checkpoint: truncated manifest (field: manifest)");
  }
  const std::string manifest_text(bytes.begin() + sizeof kMagic, bytes.begin() + manifest_end);
  json manifest;
  try {
    manifest = json::parse(manifest_text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: manifest JSON: ") + e.what() +
                      " (field: manifest)");
  }

  ModelConfig config;
  try {
    config = config_from_json(manifest.at("config").dump());
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint: ") + e.what() + " (field: config)");
  }
  char expect_hash[17];
  std::snprintf(expect_hash, sizeof expect_hash, "%016llx",
                static_cast<unsigned long long>(config_hash(config)));
  if (manifest.value("config_hash", "") != expect_hash) {
    throw FormatError("checkpoint: config hash mismatch (field: config_hash)");
  }

  Model model = build_model(config);
  std::vector<NamedTensor> tensors = state_tensors(model);
  const auto& manifest_tensors = manifest.at("tensors");
  if (manifest_tensors.size() != tensors.size()) {
    throw FormatError("checkpoint: expected " + std::to_string(tensors.size()) +
                      " tensors, manifest lists " + std::to_string(manifest_tensors.size()) +
                      " (field: tensors)");
  }

  const uint8_t* blob = bytes.data() + manifest_end + 1;
  const size_t blob_size = bytes.size() - manifest_end - 1;
  size_t expected_size = 0;
  for (size_t i = 0; i < tensors.size(); ++i) {
    const auto& entry = manifest_tensors[i];
    const std::string name = entry.at("name").get<std::string>();
    if (name != tensors[i].name) {
      throw FormatError("checkpoint: tensor " + std::to_string(i) + " is '" + name +
                        "', expected '" + tensors[i].name + "' (field: tensors[" +
                        std::to_string(i) + "].name)");
    }
    const Shape shape = entry.at("shape").get<Shape>();
    if (shape != tensors[i].tensor.shape()) {
      throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) +
                        ", expected " + shape_str(tensors[i].tensor.shape()) + " (field: tensors[" +
                        std::to_string(i) + "].shape)");
    }
    const size_t offset = entry.at("offset").get<size_t>();
    if (offset != expected_size) {
      throw FormatError("checkpoint: tensor '" + name + "' offset " + std::to_string(offset) +
                        ", expected " + std::to_string(expected_size) + " (field: tensors[" +
                        std::to_string(i) + "].offset)");
    }
    expected_size += tensors[i].tensor.size() * 4;
  }
  if (blob_size != expected_size) {
    throw FormatError("checkpoint: blob holds " + std::to_string(blob_size) + " bytes, expected " +
                      std::to_string(expected_size) + " (field: blob)");
  }

  size_t cursor = 0;
  for (NamedTensor& nt : tensors) {
    auto& values = nt.tensor.values_mut();
    for (double& v : values) {
      v = read_f32_le(blob + cursor);
      cursor += 4;
    }
  }
  return model;
}

}  // namespace attenlab
