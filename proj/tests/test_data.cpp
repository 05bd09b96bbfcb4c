#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "codec.hpp"
#include "data.hpp"
#include "error.hpp"
#include "rng.hpp"

using namespace attenlab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const char* tag) {
    path = fs::temp_directory_path() / (std::string("attenlab_") + tag + "_" +
                                        std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_bytes(const fs::path& p, const std::vector<uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void push_chunk(std::vector<uint8_t>& png, const char type[4], const std::vector<uint8_t>& data) {
  auto be32 = [&](uint32_t v) {
    png.push_back(uint8_t(v >> 24));
    png.push_back(uint8_t(v >> 16));
    png.push_back(uint8_t(v >> 8));
    png.push_back(uint8_t(v));
  };
  be32(static_cast<uint32_t>(data.size()));
  const size_t at = png.size();
  png.insert(png.end(), type, type + 4);
  png.insert(png.end(), data.begin(), data.end());
  uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, &png[at], static_cast<uInt>(4 + data.size()));
  be32(crc);
}

// Hand-assembled 1x1 white RGB PNG with a stored-mode zlib stream.
std::vector<uint8_t> white_pixel_png() {
  std::vector<uint8_t> png{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  push_chunk(png, "IHDR", {0, 0, 0, 1, 0, 0, 0, 1, 8, 2, 0, 0, 0});
  push_chunk(png, "IDAT", {0x78, 0x01, 0x01, 0x04, 0x00, 0xFB, 0xFF, 0x00, 0xFF, 0xFF, 0xFF,
                           0x05, 0xFE, 0x02, 0xFE});
  push_chunk(png, "IEND", {});
  return png;
}

// Minimal baseline JPEG: one 8x8 luma block, solid white. Huffman tables are
// single-entry (code "0"), the DC value 127 lands in category 7.
std::vector<uint8_t> white_jpeg() {
  std::vector<uint8_t> j{0xFF, 0xD8};
  // DQT, all entries 8
  j.insert(j.end(), {0xFF, 0xDB, 0x00, 0x43, 0x00});
  for (int i = 0; i < 64; ++i) j.push_back(8);
  // SOF0: 8-bit, 8x8, one component, 1x1 sampling
  j.insert(j.end(), {0xFF, 0xC0, 0x00, 0x0B, 0x08, 0x00, 0x08, 0x00, 0x08, 0x01, 0x01, 0x11,
                     0x00});
  // DHT DC0: one length-1 code for category 7
  j.insert(j.end(), {0xFF, 0xC4, 0x00, 0x14, 0x00, 0x01});
  for (int i = 0; i < 15; ++i) j.push_back(0);
  j.push_back(0x07);
  // DHT AC0: one length-1 code for EOB
  j.insert(j.end(), {0xFF, 0xC4, 0x00, 0x14, 0x10, 0x01});
  for (int i = 0; i < 15; ++i) j.push_back(0);
  j.push_back(0x00);
  // SOS + entropy bits: DC code 0 + 1111111 (=127), AC EOB, padded with 1s
  j.insert(j.end(), {0xFF, 0xDA, 0x00, 0x08, 0x01, 0x01, 0x00, 0x00, 0x3F, 0x00});
  j.insert(j.end(), {0x7F, 0x7F});
  j.insert(j.end(), {0xFF, 0xD9});
  return j;
}

// Three-component 4:4:4 solid mid-gray (all DC diffs zero).
std::vector<uint8_t> gray_color_jpeg() {
  std::vector<uint8_t> j{0xFF, 0xD8};
  j.insert(j.end(), {0xFF, 0xDB, 0x00, 0x43, 0x00});
  for (int i = 0; i < 64; ++i) j.push_back(4);
  j.insert(j.end(), {0xFF, 0xC0, 0x00, 0x11, 0x08, 0x00, 0x08, 0x00, 0x08, 0x03, 0x01, 0x11,
                     0x00, 0x02, 0x11, 0x00, 0x03, 0x11, 0x00});
  j.insert(j.end(), {0xFF, 0xC4, 0x00, 0x14, 0x00, 0x01});
  for (int i = 0; i < 15; ++i) j.push_back(0);
  j.push_back(0x00);  // DC category 0
  j.insert(j.end(), {0xFF, 0xC4, 0x00, 0x14, 0x10, 0x01});
  for (int i = 0; i < 15; ++i) j.push_back(0);
  j.push_back(0x00);  // EOB
  j.insert(j.end(), {0xFF, 0xDA, 0x00, 0x0C, 0x03, 0x01, 0x00, 0x02, 0x00, 0x03, 0x00, 0x00,
                     0x3F, 0x00});
  j.push_back(0x03);  // six zero bits + pad
  j.insert(j.end(), {0xFF, 0xD9});
  return j;
}

Image random_image(int h, int w, Rng& rng) {
  Image img;
  img.height = h;
  img.width = w;
  img.rgb.resize(static_cast<size_t>(h) * w * 3);
  for (auto& b : img.rgb) b = static_cast<uint8_t>(rng.below(256));
  return img;
}

}  // namespace

TEST_CASE("png encode/decode round trip is lossless") {
  Rng rng(211);
  Image img = random_image(13, 7, rng);
  Image back = decode_raster(encode_png(img));
  CHECK(back.height == img.height);
  CHECK(back.width == img.width);
  CHECK(back.rgb == img.rgb);

  GrayImage g;
  g.height = 5;
  g.width = 9;
  g.pixels.resize(45);
  for (auto& b : g.pixels) b = static_cast<uint8_t>(rng.below(256));
  Image gback = decode_raster(encode_png_gray(g));
  for (int i = 0; i < 45; ++i) {
    CHECK(gback.rgb[i * 3] == g.pixels[i]);
    CHECK(gback.rgb[i * 3 + 1] == g.pixels[i]);
  }
}

TEST_CASE("hand-assembled 1x1 white png decodes to (255,255,255)") {
  Image img = decode_raster(white_pixel_png());
  CHECK(img.height == 1);
  CHECK(img.width == 1);
  CHECK(img.rgb == std::vector<uint8_t>{255, 255, 255});
}

TEST_CASE("malformed png is rejected with a byte offset") {
  std::vector<uint8_t> png = white_pixel_png();
  png.resize(20);  // cut inside the IHDR chunk
  try {
    decode_raster(png);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("at byte") != std::string::npos);
  }

  std::vector<uint8_t> bad_crc = white_pixel_png();
  bad_crc[20] ^= 0xFF;  // corrupt IHDR payload
  CHECK_THROWS_AS(decode_raster(bad_crc), FormatError);
}

TEST_CASE("baseline jpeg fixtures decode exactly") {
  Image white = decode_raster(white_jpeg());
  CHECK(white.height == 8);
  CHECK(white.width == 8);
  for (uint8_t b : white.rgb) CHECK(static_cast<int>(b) == 255);

  Image gray = decode_raster(gray_color_jpeg());
  CHECK(gray.height == 8);
  for (uint8_t b : gray.rgb) CHECK(static_cast<int>(b) == 128);
}

TEST_CASE("truncated jpeg raises a format error, no crash") {
  std::vector<uint8_t> j = white_jpeg();
  j.resize(j.size() / 2);
  try {
    decode_raster(j);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("at byte") != std::string::npos);
  }
  CHECK_THROWS_AS(decode_raster(std::vector<uint8_t>{1, 2, 3}), FormatError);
}

TEST_CASE("progressive jpeg is refused") {
  std::vector<uint8_t> j = white_jpeg();
  // rewrite SOF0 marker to SOF2
  for (size_t i = 0; i + 1 < j.size(); ++i) {
    if (j[i] == 0xFF && j[i + 1] == 0xC0) {
      j[i + 1] = 0xC2;
      break;
    }
  }
  CHECK_THROWS_AS(decode_raster(j), FormatError);
}

TEST_CASE("synthetic generation is a pure function of its seed") {
  Dataset a = synth_generate(3, 64, 99);
  Dataset b = synth_generate(3, 64, 99);
  REQUIRE(a.images.size() == 12);
  for (size_t i = 0; i < a.images.size(); ++i) {
    CHECK(a.images[i].image.rgb == b.images[i].image.rgb);
    CHECK(a.images[i].mask == b.images[i].mask);
    CHECK(a.images[i].id == b.images[i].id);
  }
  Dataset c = synth_generate(3, 64, 100);
  CHECK(a.images[0].image.rgb != c.images[0].image.rgb);
}

TEST_CASE("synthetic masks are non-empty, in bounds, and overlap ink") {
  Dataset ds = synth_generate(4, 64, 31);
  for (const auto& li : ds.images) {
    REQUIRE(li.mask.size() == static_cast<size_t>(64 * 64));
    int64_t area = 0;
    for (uint8_t m : li.mask) area += m;
    CHECK(area > 0);
    CHECK(area < 64 * 64);  // never the whole canvas

    // mask pixels must cover the darkest (inked) pixel
    int64_t darkest = -1;
    int best = 1 << 20;
    for (int p = 0; p < 64 * 64; ++p) {
      const int lum = li.image.rgb[p * 3] + li.image.rgb[p * 3 + 1] + li.image.rgb[p * 3 + 2];
      if (lum < best) {
        best = lum;
        darkest = p;
      }
    }
    CHECK(li.mask[darkest] == 1);
  }
}

TEST_CASE("export then load round trips the synthetic tree") {
  TempDir tmp("roundtrip");
  Dataset ds = synth_generate(2, 64, 7);
  export_dataset(ds, tmp.path.string());
  LoadReport report;
  Dataset back = load_dataset(tmp.path.string(), &report);
  REQUIRE(back.images.size() == ds.images.size());
  CHECK(report.skipped == 0);

  // loaded ordering is lexicographic by relative path; compare per id
  for (const auto& orig : ds.images) {
    bool found = false;
    for (const auto& li : back.images) {
      if (li.id == orig.id) {
        found = true;
        CHECK(li.label == orig.label);
        CHECK(li.image.rgb == orig.image.rgb);
        CHECK(li.mask == orig.mask);
      }
    }
    CHECK(found);
  }

  Dataset again = load_dataset(tmp.path.string());
  for (size_t i = 0; i < back.images.size(); ++i) CHECK(again.images[i].id == back.images[i].id);
}

TEST_CASE("load_dataset flags empty class dirs, skips junk, needs all four dirs") {
  TempDir tmp("tree");
  for (const char* cls : {"NE", "EP", "EH"}) fs::create_directories(tmp.path / cls);
  CHECK_THROWS_AS(load_dataset(tmp.path.string()), ConfigError);

  fs::create_directories(tmp.path / "EA");
  Dataset mini = synth_generate(1, 64, 3);
  write_bytes(tmp.path / "EP" / "b.png", encode_png(mini.images[1].image));
  write_bytes(tmp.path / "EH" / "c.png", encode_png(mini.images[2].image));
  write_bytes(tmp.path / "EA" / "d.png", encode_png(mini.images[3].image));
  write_bytes(tmp.path / "EA" / "broken.png", {1, 2, 3, 4});

  LoadReport report;
  Dataset ds = load_dataset(tmp.path.string(), &report);
  CHECK(ds.images.size() == 3);
  CHECK(report.skipped == 1);
  bool ne_warning = false;
  for (const auto& w : report.warnings) {
    if (w.find("NE") != std::string::npos) ne_warning = true;
  }
  CHECK(ne_warning);
  CHECK(ds.images[0].label == 3);  // EA sorts first
  CHECK(ds.images[0].id == "d");
}

TEST_CASE("pixel statistics alone cannot separate the synthetic classes") {
  // mean/std features per channel feed a multinomial logistic model; the
  // motifs differ by shape, so this stays near chance while the CNN does not.
  const int per_class = 90;
  Dataset ds = synth_generate(per_class, 64, 2024);
  const int n = static_cast<int>(ds.images.size());
  const int dim = 6;
  std::vector<std::array<double, dim>> feats(n);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    const auto& img = ds.images[i].image;
    for (int c = 0; c < 3; ++c) {
      double mean = 0, var = 0;
      const int64_t pixels = static_cast<int64_t>(img.height) * img.width;
      for (int64_t p = 0; p < pixels; ++p) mean += img.rgb[p * 3 + c];
      mean /= static_cast<double>(pixels);
      for (int64_t p = 0; p < pixels; ++p) {
        const double d = img.rgb[p * 3 + c] - mean;
        var += d * d;
      }
      feats[i][c * 2] = mean / 255.0;
      feats[i][c * 2 + 1] = std::sqrt(var / static_cast<double>(pixels)) / 255.0;
    }
    labels[i] = ds.images[i].label;
  }

  // deterministic split: every third sample held out
  std::vector<int> train_idx, test_idx;
  for (int i = 0; i < n; ++i) (i % 3 == 2 ? test_idx : train_idx).push_back(i);

  // multinomial logistic regression by plain gradient descent
  std::array<std::array<double, dim + 1>, 4> w{};
  for (int it = 0; it < 4000; ++it) {
    std::array<std::array<double, dim + 1>, 4> grad{};
    for (int i : train_idx) {
      double z[4];
      double zmax = -1e300;
      for (int k = 0; k < 4; ++k) {
        z[k] = w[k][dim];
        for (int d = 0; d < dim; ++d) z[k] += w[k][d] * feats[i][d];
        zmax = std::max(zmax, z[k]);
      }
      double denom = 0;
      for (int k = 0; k < 4; ++k) denom += std::exp(z[k] - zmax);
      for (int k = 0; k < 4; ++k) {
        const double p = std::exp(z[k] - zmax) / denom;
        const double err = p - (labels[i] == k ? 1.0 : 0.0);
        for (int d = 0; d < dim; ++d) grad[k][d] += err * feats[i][d];
        grad[k][dim] += err;
      }
    }
    for (int k = 0; k < 4; ++k)
      for (int d = 0; d <= dim; ++d) w[k][d] -= 0.5 / train_idx.size() * grad[k][d];
  }
  int correct = 0;
  for (int i : test_idx) {
    double best = -1e300;
    int arg = 0;
    for (int k = 0; k < 4; ++k) {
      double z = w[k][dim];
      for (int d = 0; d < dim; ++d) z += w[k][d] * feats[i][d];
      if (z > best) {
        best = z;
        arg = k;
      }
    }
    correct += arg == labels[i];
  }
  const double acc = static_cast<double>(correct) / test_idx.size();
  MESSAGE("pixel-statistics classifier accuracy: " << acc);
  CHECK(acc < 0.60);
}
