// Command-line front end over the attenlab C API. Every subcommand resolves
// its options from flags plus an optional JSON config file (flags win), and
// prints the resolved seed so a run can be reproduced verbatim.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <random>
#include <string>

#include "attenlab.h"

namespace {

using nlohmann::json;

constexpr uint64_t kDefaultSeed = 42;

// --seed 0 asks for OS entropy; the resolved value is always printed.
uint64_t resolve_seed(uint64_t seed) {
  if (seed != 0) return seed;
  std::random_device rd;
  uint64_t v = (static_cast<uint64_t>(rd()) << 32) ^ rd();
  if (v == 0) v = 1;
  return v;
}

// Applies config-file values to options the user did not set on the command
// line. JSON keys mirror long flag names with '-' replaced by '_'.
void apply_config_file(CLI::App* cmd, const std::string& path) {
  if (path.empty()) return;
  std::ifstream in(path);
  if (!in) throw CLI::ValidationError("--config", "cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw CLI::ValidationError("--config", e.what());
  }
  if (!j.is_object()) throw CLI::ValidationError("--config", "expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    std::string flag = key;
    for (char& c : flag) {
      if (c == '_') c = '-';
    }
    CLI::Option* opt = cmd->get_option_no_throw("--" + flag);
    if (opt == nullptr) {
      throw CLI::ValidationError("--config", "unknown key '" + key + "'");
    }
    if (opt->count() > 0) continue;  // explicit flags win
    const std::string text = value.is_string() ? value.get<std::string>() : value.dump();
    opt->add_result(text);
    opt->run_callback();
  }
}

int fail_runtime(const char* what) {
  std::fprintf(stderr, "error: %s: %s\n", what, atl_last_error());
  return 2;
}

struct DatasetHandle {
  atl_dataset* ptr = nullptr;
  DatasetHandle() = default;
  explicit DatasetHandle(atl_dataset* p) : ptr(p) {}
  ~DatasetHandle() { atl_dataset_close(ptr); }
  DatasetHandle(const DatasetHandle&) = delete;
  DatasetHandle& operator=(const DatasetHandle&) = delete;
};

struct ModelHandle {
  atl_model* ptr = nullptr;
  ~ModelHandle() { atl_model_close(ptr); }
};

int open_dataset(const std::string& path, DatasetHandle& ds) {
  if (atl_dataset_open(path.c_str(), &ds.ptr) != ATL_OK) return fail_runtime("loading dataset");
  const char* warnings = atl_dataset_warnings(ds.ptr);
  if (warnings && warnings[0]) std::fprintf(stderr, "%s\n", warnings);
  std::printf("dataset: %d images from %s\n", atl_dataset_size(ds.ptr), path.c_str());
  return 0;
}

std::string model_json(const std::string& preset, bool no_position, bool no_channel,
                       uint64_t seed) {
  json j{{"preset", preset}, {"seed", seed}};
  if (no_position) j["position_attention"] = false;
  if (no_channel) j["channel_attention"] = false;
  return j.dump();
}

std::string train_json(double lr, int epochs, int batch_size, uint64_t seed) {
  const json j{{"learning_rate", lr}, {"epochs", epochs}, {"batch_size", batch_size},
               {"seed", seed}};
  return j.dump();
}

struct SaliencyOptions {
  std::string checkpoint, data, out_dir, config_path;
  std::string mode = "overlay";
  int target_class = -1;
  uint64_t seed = kDefaultSeed;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attention-augmented histology image classification toolkit"};
  app.require_subcommand(1);

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "generate the synthetic motif dataset");
  std::string synth_out, synth_config;
  int synth_n = 50, synth_size = 64;
  uint64_t synth_seed = kDefaultSeed;
  synth->add_option("--out", synth_out, "output dataset directory")->required();
  synth->add_option("--n", synth_n, "images per class");
  synth->add_option("--size", synth_size, "square image side in pixels");
  synth->add_option("--seed", synth_seed, "generator seed (0 = OS entropy)");
  synth->add_option("--config", synth_config, "JSON config file mirroring these flags");

  // ---- train ----
  auto* train = app.add_subcommand("train", "train one model and write a checkpoint");
  std::string train_data, train_ckpt = "model.ckpt", train_history = "history.csv";
  std::string train_preset = "hienet-mini", train_config_path;
  double train_lr = 0.005;
  int train_epochs = 20, train_batch = 32;
  uint64_t train_seed = kDefaultSeed;
  bool train_no_pos = false, train_no_chan = false;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--preset", train_preset, "hienet-mini or hienet-full");
  train->add_option("--epochs", train_epochs, "training epochs");
  train->add_option("--batch-size", train_batch, "minibatch size");
  train->add_option("--lr", train_lr, "initial learning rate");
  train->add_option("--seed", train_seed, "run seed (0 = OS entropy)");
  train->add_option("--out", train_ckpt, "checkpoint output path");
  train->add_option("--history", train_history, "training history CSV path");
  train->add_flag("--no-position-attention", train_no_pos, "ablate the position block");
  train->add_flag("--no-channel-attention", train_no_chan, "ablate the channel block");
  train->add_option("--config", train_config_path, "JSON config file mirroring these flags");

  // ---- crossval ----
  auto* crossval = app.add_subcommand("crossval", "k-fold cross-validation report");
  std::string cv_data, cv_out_dir, cv_preset = "hienet-mini", cv_config_path;
  double cv_lr = 0.005;
  int cv_folds = 10, cv_epochs = 20, cv_batch = 32, cv_jobs = 1;
  uint64_t cv_seed = kDefaultSeed;
  bool cv_stratified = false, cv_no_pos = false, cv_no_chan = false;
  crossval->add_option("--data", cv_data, "dataset directory")->required();
  crossval->add_option("--out-dir", cv_out_dir, "report output directory")->required();
  crossval->add_option("--folds", cv_folds, "fold count");
  crossval->add_option("--preset", cv_preset, "hienet-mini or hienet-full");
  crossval->add_option("--epochs", cv_epochs, "training epochs per fold");
  crossval->add_option("--batch-size", cv_batch, "minibatch size");
  crossval->add_option("--lr", cv_lr, "initial learning rate");
  crossval->add_option("--seed", cv_seed, "run seed (0 = OS entropy)");
  crossval->add_option("--jobs", cv_jobs, "concurrent folds");
  crossval->add_flag("--stratified", cv_stratified, "class-stratified folds");
  crossval->add_flag("--no-position-attention", cv_no_pos, "ablate the position block");
  crossval->add_flag("--no-channel-attention", cv_no_chan, "ablate the channel block");
  crossval->add_option("--config", cv_config_path, "JSON config file mirroring these flags");

  // ---- eval ----
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string eval_ckpt, eval_data, eval_metrics = "metrics.csv", eval_roc = "roc.csv";
  std::string eval_config_path;
  bool eval_binary = false;
  uint64_t eval_seed = kDefaultSeed;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_flag("--binary", eval_binary, "also report the benign/malignant task");
  eval->add_option("--metrics", eval_metrics, "metrics CSV output path");
  eval->add_option("--roc", eval_roc, "ROC CSV output path (with --binary)");
  eval->add_option("--seed", eval_seed, "printed for provenance only");
  eval->add_option("--config", eval_config_path, "JSON config file mirroring these flags");

  // ---- cam / gb ----
  SaliencyOptions cam_opts, gb_opts;
  auto add_saliency = [&app](const char* name, const char* help, SaliencyOptions& o) {
    auto* cmd = app.add_subcommand(name, help);
    cmd->add_option("--checkpoint", o.checkpoint, "checkpoint path")->required();
    cmd->add_option("--data", o.data, "dataset directory")->required();
    cmd->add_option("--out-dir", o.out_dir, "heatmap output directory")->required();
    cmd->add_option("--class", o.target_class, "target class index (-1 = predicted)");
    cmd->add_option("--mode", o.mode, "gray or overlay")->check(CLI::IsMember({"gray", "overlay"}));
    cmd->add_option("--seed", o.seed, "printed for provenance only");
    cmd->add_option("--config", o.config_path, "JSON config file mirroring these flags");
    return cmd;
  };
  CLI::App* cam_cmd = add_saliency("cam", "class activation maps as PNG heatmaps", cam_opts);
  CLI::App* gb_cmd = add_saliency("gb", "guided backpropagation PNG heatmaps", gb_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) apply_config_file(synth, synth_config);
    if (train->parsed()) apply_config_file(train, train_config_path);
    if (crossval->parsed()) apply_config_file(crossval, cv_config_path);
    if (eval->parsed()) apply_config_file(eval, eval_config_path);
    if (cam_cmd->parsed()) apply_config_file(cam_cmd, cam_opts.config_path);
    if (gb_cmd->parsed()) apply_config_file(gb_cmd, gb_opts.config_path);
  } catch (const CLI::Error& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 1;
  }

  if (synth->parsed()) {
    const uint64_t seed = resolve_seed(synth_seed);
    std::printf("seed: %llu\n", static_cast<unsigned long long>(seed));
    atl_dataset* raw = nullptr;
    if (atl_dataset_synth(synth_n, synth_size, seed, &raw) != ATL_OK) {
      return fail_runtime("generating dataset");
    }
    DatasetHandle ds(raw);
    if (atl_dataset_export(ds.ptr, synth_out.c_str()) != ATL_OK) {
      return fail_runtime("writing dataset");
    }
    std::printf("wrote %d images under %s\n", atl_dataset_size(ds.ptr), synth_out.c_str());
    return 0;
  }

  if (train->parsed()) {
    const uint64_t seed = resolve_seed(train_seed);
    std::printf("seed: %llu\n", static_cast<unsigned long long>(seed));
    DatasetHandle ds;
    if (int rc = open_dataset(train_data, ds)) return rc;
    ModelHandle model;
    const std::string mj = model_json(train_preset, train_no_pos, train_no_chan, seed);
    if (atl_model_create(mj.c_str(), &model.ptr) != ATL_OK) {
      return fail_runtime("building model");
    }
    const std::string tj = train_json(train_lr, train_epochs, train_batch, seed);
    if (atl_train(model.ptr, ds.ptr, tj.c_str(), train_history.c_str()) != ATL_OK) {
      return fail_runtime("training");
    }
    if (atl_model_save(model.ptr, train_ckpt.c_str()) != ATL_OK) {
      return fail_runtime("saving checkpoint");
    }
    std::printf("checkpoint: %s\nhistory: %s\n", train_ckpt.c_str(), train_history.c_str());
    return 0;
  }

  if (crossval->parsed()) {
    const uint64_t seed = resolve_seed(cv_seed);
    std::printf("seed: %llu\n", static_cast<unsigned long long>(seed));
    DatasetHandle ds;
    if (int rc = open_dataset(cv_data, ds)) return rc;
    const std::string mj = model_json(cv_preset, cv_no_pos, cv_no_chan, seed);
    const std::string tj = train_json(cv_lr, cv_epochs, cv_batch, seed);
    if (atl_crossval(ds.ptr, mj.c_str(), tj.c_str(), cv_folds, seed, cv_jobs,
                     cv_stratified ? 1 : 0, cv_out_dir.c_str()) != ATL_OK) {
      return fail_runtime("cross-validation");
    }
    const char* notes = atl_last_error();
    if (notes && notes[0]) std::fprintf(stderr, "%s", notes);
    std::printf("report: %s/metrics.csv\n", cv_out_dir.c_str());
    return 0;
  }

  if (eval->parsed()) {
    std::printf("seed: %llu\n", static_cast<unsigned long long>(resolve_seed(eval_seed)));
    DatasetHandle ds;
    if (int rc = open_dataset(eval_data, ds)) return rc;
    ModelHandle model;
    if (atl_model_load(eval_ckpt.c_str(), &model.ptr) != ATL_OK) {
      return fail_runtime("loading checkpoint");
    }
    if (atl_evaluate(model.ptr, ds.ptr, eval_binary ? 1 : 0, eval_metrics.c_str(),
                     eval_binary ? eval_roc.c_str() : nullptr) != ATL_OK) {
      return fail_runtime("evaluating");
    }
    std::printf("metrics: %s\n", eval_metrics.c_str());
    if (eval_binary) std::printf("roc: %s\n", eval_roc.c_str());
    return 0;
  }

  for (auto& [cmd, opts] : {std::pair<CLI::App*, SaliencyOptions*>{cam_cmd, &cam_opts},
                            std::pair<CLI::App*, SaliencyOptions*>{gb_cmd, &gb_opts}}) {
    if (!cmd->parsed()) continue;
    std::printf("seed: %llu\n", static_cast<unsigned long long>(resolve_seed(opts->seed)));
    DatasetHandle ds;
    if (int rc = open_dataset(opts->data, ds)) return rc;
    ModelHandle model;
    if (atl_model_load(opts->checkpoint.c_str(), &model.ptr) != ATL_OK) {
      return fail_runtime("loading checkpoint");
    }
    const char* kind = cmd->get_name() == "cam" ? "cam" : "gb";
    if (atl_saliency(model.ptr, ds.ptr, kind, opts->target_class, opts->mode.c_str(),
                     opts->out_dir.c_str()) != ATL_OK) {
      return fail_runtime("rendering saliency maps");
    }
    std::printf("heatmaps under %s\n", opts->out_dir.c_str());
    return 0;
  }
  return 1;
}
