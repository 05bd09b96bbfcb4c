#include "training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "error.hpp"
#include "layers.hpp"

namespace attenlab {

using nlohmann::json;

std::string train_config_to_json(const TrainConfig& c) {
  const json j{{"learning_rate", c.learning_rate}, {"decay_factor", c.decay_factor},
               {"patience", c.patience},           {"beta1", c.beta1},
               {"beta2", c.beta2},                 {"epsilon", c.epsilon},
               {"batch_size", c.batch_size},       {"epochs", c.epochs},
               {"seed", c.seed}};
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("train config JSON: expected an object");
  TrainConfig c;
  try {
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("decay_factor")) c.decay_factor = j.at("decay_factor").get<double>();
    if (j.contains("patience")) c.patience = j.at("patience").get<int>();
    if (j.contains("beta1")) c.beta1 = j.at("beta1").get<double>();
    if (j.contains("beta2")) c.beta2 = j.at("beta2").get<double>();
    if (j.contains("epsilon")) c.epsilon = j.at("epsilon").get<double>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config JSON: ") + e.what());
  }
  if (c.learning_rate <= 0) throw ConfigError("train config: learning_rate must be > 0");
  if (c.beta1 < 0 || c.beta1 >= 1 || c.beta2 < 0 || c.beta2 >= 1) {
    throw ConfigError("train config: betas must be in [0, 1)");
  }
  if (c.patience < 1) throw ConfigError("train config: patience must be >= 1");
  if (c.batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (c.epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  return c;
}

Tensor preprocess(const Image& image, int target_size) {
  if (image.empty()) throw InputError("preprocess: zero-area image");
  std::vector<double> pixels(image.rgb.size());
  for (size_t i = 0; i < image.rgb.size(); ++i) pixels[i] = static_cast<double>(image.rgb[i]);
  if (image.height != target_size || image.width != target_size) {
    pixels = resize_bilinear(pixels, image.height, image.width, 3, target_size, target_size);
  }
  const int64_t count = static_cast<int64_t>(target_size) * target_size;
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (int64_t p = 0; p < count; ++p) mean += pixels[p * 3 + c];
    mean /= static_cast<double>(count);
    double var = 0.0;
    for (int64_t p = 0; p < count; ++p) {
      const double d = pixels[p * 3 + c] - mean;
      var += d * d;
    }
    const double stddev = std::max(std::sqrt(var / static_cast<double>(count)), 1e-6);
    for (int64_t p = 0; p < count; ++p) pixels[p * 3 + c] = (pixels[p * 3 + c] - mean) / stddev;
  }
  return Tensor::from_data({target_size, target_size, 3}, std::move(pixels));
}

Image augment(const Image& image, Rng& rng) {
  const bool horizontal = rng.bernoulli(0.5);
  const bool vertical = rng.bernoulli(0.5);
  if (!horizontal && !vertical) return image;
  Image out;
  out.height = image.height;
  out.width = image.width;
  out.rgb.resize(image.rgb.size());
  for (int y = 0; y < image.height; ++y) {
    const int sy = vertical ? image.height - 1 - y : y;
    for (int x = 0; x < image.width; ++x) {
      const int sx = horizontal ? image.width - 1 - x : x;
      const uint8_t* src = image.pixel(sy, sx);
      uint8_t* dst = out.pixel(y, x);
      dst[0] = src[0];
      dst[1] = src[1];
      dst[2] = src[2];
    }
  }
  return out;
}

AdamState::AdamState(const std::vector<NamedTensor>& params) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const NamedTensor& p : params) {
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

void AdamState::step(std::vector<NamedTensor>& params, const TrainConfig& config, double lr) {
  if (params.size() != m_.size()) {
    throw ContractError("adam: parameter list size changed under the optimizer");
  }
  for (const NamedTensor& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("adam: non-finite gradient in " + p.name + ", step aborted");
      }
    }
  }
  t_ += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& theta = params[i].tensor.values_mut();
    const double* grad = params[i].tensor.has_grad() ? params[i].tensor.grad().data() : nullptr;
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < theta.size(); ++j) {
      const double g = grad ? grad[j] : 0.0;
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      theta[j] -= lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

void LrScheduler::observe(double accuracy) {
  if (accuracy > best_) {
    best_ = accuracy;
    stale_ = 0;
    return;
  }
  if (++stale_ >= patience_) {
    lr_ *= factor_;
    reductions_ += 1;
    stale_ = 0;
  }
}

TrainHistory train_model(Model& model, const Dataset& dataset, const TrainConfig& config) {
  if (dataset.images.empty()) throw InputError("train: empty dataset");
  for (const LabeledImage& li : dataset.images) {
    if (li.label < 0 || li.label >= model.config.classes) {
      throw ContractError("train: label " + std::to_string(li.label) + " of image '" + li.id +
                          "' outside the model's " + std::to_string(model.config.classes) +
                          " classes");
    }
  }

  const int n = static_cast<int>(dataset.images.size());
  const int size = model.config.input_size;
  std::vector<NamedTensor> params = trainable_parameters(model);
  AdamState adam(params);
  LrScheduler scheduler(config.learning_rate, config.patience, config.decay_factor);
  TrainHistory history;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed, 0x73687566ULL + epoch));
    Rng augment_rng(derive_seed(config.seed, 0x61756700ULL + epoch));
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);

    const double lr = scheduler.lr();
    double loss_sum = 0.0;
    int correct = 0;

    for (int start = 0; start < n; start += config.batch_size) {
      const int bs = std::min(config.batch_size, n - start);
      std::vector<double> buffer(static_cast<size_t>(bs) * size * size * 3);
      std::vector<int> labels(bs);
      for (int b = 0; b < bs; ++b) {
        const LabeledImage& li = dataset.images[order[start + b]];
        const Tensor pre = preprocess(augment(li.image, augment_rng), size);
        std::copy(pre.values().begin(), pre.values().end(),
                  buffer.begin() + static_cast<int64_t>(b) * size * size * 3);
        labels[b] = li.label;
      }
      Tensor batch = Tensor::from_data({bs, size, size, 3}, std::move(buffer));
      ForwardResult r = forward(model, batch, Mode::kTrain);
      Tensor loss = cross_entropy(r.probs, labels);

      loss_sum += loss.item() * bs;
      for (int b = 0; b < bs; ++b) {
        int arg = 0;
        double best = -1.0;
        for (int k = 0; k < model.config.classes; ++k) {
          const double p = r.probs.at({b, k});
          if (p > best) {
            best = p;
            arg = k;
          }
        }
        correct += arg == labels[b];
      }

      for (NamedTensor& p : params) p.tensor.zero_grad();
      backward(loss);
      adam.step(params, config, lr);
    }

    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.lr = lr;
    stats.loss = loss_sum / n;
    stats.accuracy = static_cast<double>(correct) / n;
    history.push_back(stats);
    scheduler.observe(stats.accuracy);
  }
  return history;
}

void write_history_csv(const TrainHistory& history, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write history csv " + path);
  out << "epoch,lr,train_loss,train_acc\n";
  char line[128];
  for (const EpochStats& e : history) {
    std::snprintf(line, sizeof line, "%d,%.10g,%.6f,%.6f\n", e.epoch, e.lr, e.loss, e.accuracy);
    out << line;
  }
  if (!out) throw IoError("short write to history csv " + path);
}

}  // namespace attenlab
