#include "attenlab.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include "codec.hpp"
#include "data.hpp"
#include "error.hpp"
#include "evaluation.hpp"
#include "interpret.hpp"
#include "model.hpp"
#include "training.hpp"

namespace fs = std::filesystem;

struct atl_dataset {
  attenlab::Dataset data;
  std::string warnings;
};

struct atl_model {
  attenlab::Model model;
};

namespace {

thread_local std::string g_last_error;

template <typename Fn>
atl_status wrap(Fn&& fn) {
  g_last_error.clear();  // callbacks may leave non-fatal notes here
  try {
    fn();
    return ATL_OK;
  } catch (const attenlab::DimensionError& e) {
    g_last_error = e.what();
    return ATL_E_DIMENSION;
  } catch (const attenlab::ContractError& e) {
    g_last_error = e.what();
    return ATL_E_INVALID_ARG;
  } catch (const attenlab::ConfigError& e) {
    g_last_error = e.what();
    return ATL_E_CONFIG;
  } catch (const attenlab::FormatError& e) {
    g_last_error = e.what();
    return ATL_E_FORMAT;
  } catch (const attenlab::NumericError& e) {
    g_last_error = e.what();
    return ATL_E_NUMERIC;
  } catch (const attenlab::InputError& e) {
    g_last_error = e.what();
    return ATL_E_INPUT;
  } catch (const attenlab::IoError& e) {
    g_last_error = e.what();
    return ATL_E_IO;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return ATL_E_UNKNOWN;
  } catch (...) {
    g_last_error = "unknown failure";
    return ATL_E_UNKNOWN;
  }
}

atl_status require(bool ok, const char* what) {
  if (ok) return ATL_OK;
  g_last_error = what;
  return ATL_E_INVALID_ARG;
}

std::string join_warnings(const attenlab::LoadReport& report) {
  std::string out;
  for (const std::string& w : report.warnings) {
    if (!out.empty()) out += '\n';
    out += w;
  }
  return out;
}

int predict_class(attenlab::Model& model, const attenlab::Image& image) {
  attenlab::NoGradGuard no_grad;
  const int size = model.config.input_size;
  attenlab::Tensor batch =
      attenlab::reshape(attenlab::preprocess(image, size), {1, size, size, 3});
  const attenlab::ForwardResult r = attenlab::forward(model, batch, attenlab::Mode::kInfer);
  int arg = 0;
  double best = -1.0;
  for (int k = 0; k < model.config.classes; ++k) {
    const double p = r.probs.at({0, k});
    if (p > best) {
      best = p;
      arg = k;
    }
  }
  return arg;
}

}  // namespace

extern "C" {

const char* atl_version(void) { return "1.0.0"; }

const char* atl_last_error(void) { return g_last_error.c_str(); }

atl_status atl_dataset_synth(int n_per_class, int size, uint64_t seed, atl_dataset** out) {
  if (atl_status s = require(out != nullptr, "atl_dataset_synth: out is null")) return s;
  return wrap([&] {
    auto handle = std::make_unique<atl_dataset>();
    handle->data = attenlab::synth_generate(n_per_class, size == 0 ? 64 : size, seed);
    *out = handle.release();
  });
}

atl_status atl_dataset_open(const char* root, atl_dataset** out) {
  if (atl_status s = require(root && out, "atl_dataset_open: null argument")) return s;
  return wrap([&] {
    auto handle = std::make_unique<atl_dataset>();
    attenlab::LoadReport report;
    handle->data = attenlab::load_dataset(root, &report);
    handle->warnings = join_warnings(report);
    *out = handle.release();
  });
}

atl_status atl_dataset_export(const atl_dataset* ds, const char* root) {
  if (atl_status s = require(ds && root, "atl_dataset_export: null argument")) return s;
  return wrap([&] { attenlab::export_dataset(ds->data, root); });
}

int atl_dataset_size(const atl_dataset* ds) {
  return ds ? static_cast<int>(ds->data.images.size()) : 0;
}

const char* atl_dataset_warnings(const atl_dataset* ds) {
  return ds ? ds->warnings.c_str() : "";
}

void atl_dataset_close(atl_dataset* ds) { delete ds; }

atl_status atl_model_create(const char* config_json, atl_model** out) {
  if (atl_status s = require(config_json && out, "atl_model_create: null argument")) return s;
  return wrap([&] {
    auto handle = std::make_unique<atl_model>();
    handle->model = attenlab::build_model(attenlab::config_from_json(config_json));
    *out = handle.release();
  });
}

atl_status atl_model_save(const atl_model* model, const char* path) {
  if (atl_status s = require(model && path, "atl_model_save: null argument")) return s;
  return wrap([&] { attenlab::save_checkpoint(const_cast<atl_model*>(model)->model, path); });
}

atl_status atl_model_load(const char* path, atl_model** out) {
  if (atl_status s = require(path && out, "atl_model_load: null argument")) return s;
  return wrap([&] {
    auto handle = std::make_unique<atl_model>();
    handle->model = attenlab::load_checkpoint(path);
    *out = handle.release();
  });
}

atl_status atl_model_config(const atl_model* model, char* buf, size_t buf_size) {
  if (atl_status s = require(model && buf, "atl_model_config: null argument")) return s;
  return wrap([&] {
    const std::string text = attenlab::config_to_json(model->model.config);
    if (text.size() + 1 > buf_size) {
      throw attenlab::ContractError("atl_model_config: buffer of " + std::to_string(buf_size) +
                                    " bytes cannot hold " + std::to_string(text.size() + 1));
    }
    std::copy(text.begin(), text.end(), buf);
    buf[text.size()] = '\0';
  });
}

void atl_model_close(atl_model* model) { delete model; }

atl_status atl_train(atl_model* model, const atl_dataset* ds, const char* train_json,
                     const char* history_csv_path) {
  if (atl_status s = require(model && ds, "atl_train: null argument")) return s;
  return wrap([&] {
    const attenlab::TrainConfig tc =
        train_json ? attenlab::train_config_from_json(train_json) : attenlab::TrainConfig{};
    const attenlab::TrainHistory history = attenlab::train_model(model->model, ds->data, tc);
    if (history_csv_path) attenlab::write_history_csv(history, history_csv_path);
  });
}

atl_status atl_evaluate(atl_model* model, const atl_dataset* ds, int binary_task,
                        const char* metrics_csv_path, const char* roc_csv_path) {
  if (atl_status s = require(model && ds, "atl_evaluate: null argument")) return s;
  return wrap([&] {
    const attenlab::EvalMetrics metrics = attenlab::evaluate_model(model->model, ds->data);
    if (metrics_csv_path) {
      attenlab::write_eval_csv(metrics, binary_task != 0, metrics_csv_path);
    }
    if (binary_task && roc_csv_path) {
      attenlab::write_roc_csv(metrics.roc, roc_csv_path);
    }
  });
}

atl_status atl_crossval(const atl_dataset* ds, const char* model_json, const char* train_json,
                        int folds, uint64_t seed, int jobs, int stratified,
                        const char* out_dir) {
  if (atl_status s = require(ds && out_dir, "atl_crossval: null argument")) return s;
  return wrap([&] {
    const attenlab::ModelConfig mc =
        model_json ? attenlab::config_from_json(model_json) : attenlab::ModelConfig{};
    const attenlab::TrainConfig tc =
        train_json ? attenlab::train_config_from_json(train_json) : attenlab::TrainConfig{};
    const attenlab::CrossValReport report = attenlab::cross_validate(
        ds->data, mc, tc, folds, seed, std::max(jobs, 1), stratified != 0);
    fs::create_directories(out_dir);
    attenlab::write_metrics_csv(report, (fs::path(out_dir) / "metrics.csv").string());
    for (const attenlab::FoldMetrics& f : report.folds) {
      attenlab::write_roc_csv(
          f.metrics.roc,
          (fs::path(out_dir) / ("roc_fold" + std::to_string(f.fold) + ".csv")).string());
    }
    if (!report.warnings.empty()) {
      std::string joined;
      for (const std::string& w : report.warnings) joined += w + '\n';
      g_last_error = joined;  // surfaced as a non-fatal note
    }
  });
}

atl_status atl_saliency(atl_model* model, const atl_dataset* ds, const char* kind,
                        int target_class, const char* mode, const char* out_dir) {
  if (atl_status s = require(model && ds && kind && mode && out_dir,
                             "atl_saliency: null argument")) {
    return s;
  }
  const std::string kind_s = kind, mode_s = mode;
  if (atl_status s = require(kind_s == "cam" || kind_s == "gb",
                             "atl_saliency: kind must be 'cam' or 'gb'")) {
    return s;
  }
  if (atl_status s = require(mode_s == "gray" || mode_s == "overlay",
                             "atl_saliency: mode must be 'gray' or 'overlay'")) {
    return s;
  }
  return wrap([&] {
    fs::create_directories(out_dir);
    for (const attenlab::LabeledImage& li : ds->data.images) {
      int cls = target_class;
      if (cls < 0) cls = predict_class(model->model, li.image);
      const attenlab::Heatmap heat = kind_s == "cam"
                                         ? attenlab::cam(model->model, li.image, cls)
                                         : attenlab::guided_backprop(model->model, li.image, cls);
      const std::string cls_name = cls < static_cast<int>(ds->data.classes.size())
                                       ? ds->data.classes[cls]
                                       : std::to_string(cls);
      const fs::path out_path =
          fs::path(out_dir) / (li.id + "." + kind_s + "." + cls_name + ".png");
      std::vector<uint8_t> bytes;
      if (mode_s == "gray") {
        bytes = attenlab::encode_png_gray(attenlab::render_gray(heat));
      } else {
        bytes = attenlab::encode_png(attenlab::render_overlay(heat, li.image));
      }
      std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
      if (!out) throw attenlab::IoError("cannot write " + out_path.string());
      out.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
    }
  });
}

}  // extern "C"
