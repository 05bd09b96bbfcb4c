#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "data.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace attenlab {

struct TrainConfig {
  double learning_rate = 0.005;
  double decay_factor = 0.5;
  int patience = 3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 32;
  int epochs = 20;
  uint64_t seed = 42;
};

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& json_text);

struct EpochStats {
  int epoch = 0;       // 1-based
  double lr = 0.0;     // rate in effect during the epoch
  double loss = 0.0;   // mean cross-entropy over the epoch
  double accuracy = 0.0;
};
using TrainHistory = std::vector<EpochStats>;

// Bilinear resize to target_size, then per-image per-channel z-score with the
// standard deviation floored at 1e-6. Returns (target, target, 3).
Tensor preprocess(const Image& image, int target_size);

// Independent 50% horizontal and vertical flips.
Image augment(const Image& image, Rng& rng);

// Adam moment buffers for a fixed parameter list. step() validates gradient
// finiteness before touching anything; a bad gradient aborts the whole step.
class AdamState {
public:
  explicit AdamState(const std::vector<NamedTensor>& params);
  void step(std::vector<NamedTensor>& params, const TrainConfig& config, double lr);
  int64_t steps() const { return t_; }

private:
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
};

// Halves the rate after `patience` consecutive epochs without a strict
// improvement of the best-seen accuracy; the stall counter resets on both
// improvement and reduction.
class LrScheduler {
public:
  LrScheduler(double lr, int patience, double factor)
      : lr_(lr), patience_(patience), factor_(factor) {}
  void observe(double accuracy);
  double lr() const { return lr_; }
  int reductions() const { return reductions_; }

private:
  double lr_;
  int patience_;
  double factor_;
  double best_ = -1.0;
  int stale_ = 0;
  int reductions_ = 0;
};

// Shuffled minibatch epochs of augment -> preprocess -> forward(train) ->
// cross-entropy -> backward -> Adam, with the plateau schedule applied on
// train accuracy after every epoch. Deterministic given (model, dataset,
// config) in single-threaded mode.
TrainHistory train_model(Model& model, const Dataset& dataset, const TrainConfig& config);

void write_history_csv(const TrainHistory& history, const std::string& path);

}  // namespace attenlab
