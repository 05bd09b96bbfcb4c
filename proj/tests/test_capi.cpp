#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "attenlab.h"

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const char* tag) {
    path = fs::temp_directory_path() / (std::string("attenlab_capi_") + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// tiny model so the whole API flow runs in seconds
const char* kModelJson =
    R"({"input_size":16,"stages":[[1,4],[1,6]],"head1":16,"head2":8,"classes":4,)"
    R"("gate_reduction":2,"seed":7})";
const char* kTrainJson = R"({"epochs":2,"batch_size":8,"seed":11})";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("version and error strings are always valid") {
  CHECK(atl_version() != nullptr);
  CHECK(atl_last_error() != nullptr);
}

TEST_CASE("null arguments are rejected with messages") {
  CHECK(atl_dataset_synth(4, 16, 1, nullptr) == ATL_E_INVALID_ARG);
  CHECK(std::string(atl_last_error()).find("null") != std::string::npos);
  CHECK(atl_model_create(nullptr, nullptr) == ATL_E_INVALID_ARG);
  CHECK(atl_dataset_size(nullptr) == 0);
  atl_dataset_close(nullptr);  // must be a no-op
  atl_model_close(nullptr);
}

TEST_CASE("dataset synth, export, and reopen") {
  TempDir tmp("synth");
  atl_dataset* ds = nullptr;
  REQUIRE(atl_dataset_synth(3, 16, 5, &ds) == ATL_OK);
  CHECK(atl_dataset_size(ds) == 12);
  const fs::path tree = tmp.path / "data";
  REQUIRE(atl_dataset_export(ds, tree.string().c_str()) == ATL_OK);
  atl_dataset_close(ds);

  CHECK(fs::is_directory(tree / "NE"));
  CHECK(fs::is_directory(tree / "masks"));

  atl_dataset* reopened = nullptr;
  REQUIRE(atl_dataset_open(tree.string().c_str(), &reopened) == ATL_OK);
  CHECK(atl_dataset_size(reopened) == 12);
  CHECK(std::string(atl_dataset_warnings(reopened)).empty());
  atl_dataset_close(reopened);

  atl_dataset* missing = nullptr;
  CHECK(atl_dataset_open((tmp.path / "nope").string().c_str(), &missing) == ATL_E_CONFIG);
  CHECK(missing == nullptr);
  CHECK(std::string(atl_last_error()).find("missing class directory") != std::string::npos);
}

TEST_CASE("model creation validates its json") {
  atl_model* m = nullptr;
  CHECK(atl_model_create("{\"preset\":\"nope\"}", &m) == ATL_E_CONFIG);
  CHECK(atl_model_create("not json", &m) == ATL_E_CONFIG);
  REQUIRE(atl_model_create(kModelJson, &m) == ATL_OK);
  char buf[512];
  REQUIRE(atl_model_config(m, buf, sizeof buf) == ATL_OK);
  CHECK(std::string(buf).find("\"input_size\":16") != std::string::npos);
  CHECK(atl_model_config(m, buf, 4) == ATL_E_INVALID_ARG);
  atl_model_close(m);
}

TEST_CASE("train, save, load, evaluate, and saliency through the C surface") {
  TempDir tmp("flow");
  atl_dataset* ds = nullptr;
  REQUIRE(atl_dataset_synth(4, 16, 21, &ds) == ATL_OK);

  atl_model* model = nullptr;
  REQUIRE(atl_model_create(kModelJson, &model) == ATL_OK);

  const fs::path history = tmp.path / "history.csv";
  REQUIRE(atl_train(model, ds, kTrainJson, history.string().c_str()) == ATL_OK);
  {
    std::ifstream in(history);
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,lr,train_loss,train_acc");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 2);
  }

  const fs::path ckpt = tmp.path / "model.ckpt";
  REQUIRE(atl_model_save(model, ckpt.string().c_str()) == ATL_OK);

  atl_model* loaded = nullptr;
  REQUIRE(atl_model_load(ckpt.string().c_str(), &loaded) == ATL_OK);

  const fs::path metrics = tmp.path / "metrics.csv";
  const fs::path roc = tmp.path / "roc.csv";
  REQUIRE(atl_evaluate(loaded, ds, 1, metrics.string().c_str(), roc.string().c_str()) == ATL_OK);
  {
    const std::string text = slurp(metrics);
    CHECK(text.find("fold,task,accuracy") != std::string::npos);
    CHECK(text.find("0,fourclass,") != std::string::npos);
    CHECK(text.find("0,binary,") != std::string::npos);
    const std::string roc_text = slurp(roc);
    CHECK(roc_text.find("threshold,fpr,tpr") != std::string::npos);
  }

  const fs::path cam_dir = tmp.path / "cam";
  REQUIRE(atl_saliency(loaded, ds, "cam", 3, "gray", cam_dir.string().c_str()) == ATL_OK);
  CHECK(fs::is_regular_file(cam_dir / "EA_00000.cam.EA.png"));
  CHECK(fs::is_regular_file(cam_dir / "NE_00001.cam.EA.png"));

  const fs::path gb_dir = tmp.path / "gb";
  REQUIRE(atl_saliency(loaded, ds, "gb", -1, "overlay", gb_dir.string().c_str()) == ATL_OK);
  int gb_files = 0;
  for (const auto& entry : fs::directory_iterator(gb_dir)) {
    ++gb_files;
    CHECK(entry.path().extension() == ".png");
    CHECK(entry.path().filename().string().find(".gb.") != std::string::npos);
  }
  CHECK(gb_files == 16);

  CHECK(atl_saliency(loaded, ds, "grad", 0, "gray", cam_dir.string().c_str()) ==
        ATL_E_INVALID_ARG);
  CHECK(atl_saliency(loaded, ds, "cam", 9, "gray", cam_dir.string().c_str()) ==
        ATL_E_INVALID_ARG);

  atl_model_close(loaded);
  atl_model_close(model);
  atl_dataset_close(ds);
}

TEST_CASE("checkpoint io failures map to io/format statuses") {
  atl_model* m = nullptr;
  CHECK(atl_model_load("/definitely/not/here.ckpt", &m) == ATL_E_IO);

  TempDir tmp("badckpt");
  const fs::path bad = tmp.path / "bad.ckpt";
  std::ofstream out(bad, std::ios::binary);
  out << "JUNKJUNKJUNK";
  out.close();
  CHECK(atl_model_load(bad.string().c_str(), &m) == ATL_E_FORMAT);
  CHECK(std::string(atl_last_error()).find("magic") != std::string::npos);
}

TEST_CASE("crossval writes its report tree deterministically") {
  TempDir tmp("cv");
  atl_dataset* ds = nullptr;
  REQUIRE(atl_dataset_synth(6, 16, 33, &ds) == ATL_OK);  // 24 images

  const char* tj = R"({"epochs":1,"batch_size":8,"seed":3})";
  const fs::path out1 = tmp.path / "r1";
  const fs::path out2 = tmp.path / "r2";
  REQUIRE(atl_crossval(ds, kModelJson, tj, 3, 17, 1, 0, out1.string().c_str()) == ATL_OK);
  REQUIRE(atl_crossval(ds, kModelJson, tj, 3, 17, 1, 0, out2.string().c_str()) == ATL_OK);

  for (const char* name : {"metrics.csv", "roc_fold1.csv", "roc_fold2.csv", "roc_fold3.csv"}) {
    CAPTURE(name);
    const std::string a = slurp(out1 / name);
    const std::string b = slurp(out2 / name);
    CHECK(!a.empty());
    CHECK(a == b);
  }
  atl_dataset_close(ds);
}
