#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "image.hpp"

namespace attenlab {

// Class indices are fixed: 0=NE, 1=EP, 2=EH, 3=EA. EA alone is the malignant
// class; {NE, EP, EH} aggregate to benign.
inline constexpr int kClassCount = 4;
inline constexpr int kMalignantClass = 3;
const std::vector<std::string>& class_names();

struct LabeledImage {
  Image image;
  int label = 0;
  std::string id;
  std::vector<uint8_t> mask;  // 0/1 per pixel; empty when absent
};

struct LoadReport {
  int loaded = 0;
  int skipped = 0;
  std::vector<std::string> warnings;
};

struct Dataset {
  std::vector<LabeledImage> images;
  std::vector<std::string> classes;
  std::string provenance;  // "real" or "synthetic"
  uint64_t seed = 0;
};

// Loads <root>/{NE,EP,EH,EA}/*.{png,jpg,jpeg} with labels from the directory
// names, ordered lexicographically by relative path. Undecodable files are
// skipped with a warning in the report. Masks are attached from
// <root>/masks/<id>.png when present.
Dataset load_dataset(const std::string& root, LoadReport* report = nullptr);

// Procedural four-class motif dataset with per-image ground-truth masks.
// Pure function of (n_per_class, size, seed).
Dataset synth_generate(int n_per_class, int size, uint64_t seed);

// Writes the dataset as the directory layout load_dataset reads, plus
// <root>/masks/<id>.png for images that carry masks.
void export_dataset(const Dataset& ds, const std::string& root);

}  // namespace attenlab
