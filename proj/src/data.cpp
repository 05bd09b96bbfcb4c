#include "data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "codec.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace fs = std::filesystem;

namespace attenlab {

const std::vector<std::string>& class_names() {
  static const std::vector<std::string> names{"NE", "EP", "EH", "EA"};
  return names;
}

namespace {

std::vector<uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in),
                              std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

bool has_raster_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

// ------------------------------------------------------------ synthesis ----

struct Canvas {
  int size;
  std::vector<double> rgb;          // size*size*3
  std::vector<uint8_t> mask;        // size*size
  double ink[3];

  explicit Canvas(int n) : size(n), rgb(static_cast<size_t>(n) * n * 3), mask(n * n, 0) {}

  void blend(int y, int x, double coverage) {
    if (y < 0 || y >= size || x < 0 || x >= size || coverage <= 0.0) return;
    const double a = std::min(coverage, 1.0) * 0.85;
    double* px = rgb.data() + (static_cast<size_t>(y) * size + x) * 3;
    for (int c = 0; c < 3; ++c) px[c] = px[c] * (1.0 - a) + ink[c] * a;
  }

  void mark(int y, int x) {
    if (y < 0 || y >= size || x < 0 || x >= size) return;
    mask[static_cast<size_t>(y) * size + x] = 1;
  }
};

// Annulus of radius r and the given stroke width; the mask records the whole
// filled disk plus a small margin so low-resolution saliency maps can land
// anywhere over the structure.
void draw_ring(Canvas& canvas, double cy, double cx, double r, double stroke) {
  const double reach = r + stroke + 2.0;
  const int y0 = static_cast<int>(std::floor(cy - reach)), y1 = static_cast<int>(std::ceil(cy + reach));
  const int x0 = static_cast<int>(std::floor(cx - reach)), x1 = static_cast<int>(std::ceil(cx + reach));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double d = std::hypot(y - cy, x - cx);
      canvas.blend(y, x, stroke * 0.5 + 0.5 - std::fabs(d - r));
      if (d <= r + stroke * 0.5 + 4.0) canvas.mark(y, x);
    }
  }
}

// Ring whose radius is modulated around the circle: a serrated contour.
void draw_serrated_ring(Canvas& canvas, double cy, double cx, double r, double stroke,
                        int teeth, double depth, double phase) {
  const double reach = r * (1.0 + depth) + stroke + 2.0;
  const int y0 = static_cast<int>(std::floor(cy - reach)), y1 = static_cast<int>(std::ceil(cy + reach));
  const int x0 = static_cast<int>(std::floor(cx - reach)), x1 = static_cast<int>(std::ceil(cx + reach));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dy = y - cy, dx = x - cx;
      const double d = std::hypot(dy, dx);
      const double theta = std::atan2(dy, dx);
      const double local_r = r * (1.0 + depth * std::sin(teeth * theta + phase));
      canvas.blend(y, x, stroke * 0.5 + 0.5 - std::fabs(d - local_r));
      if (d <= local_r + stroke * 0.5 + 4.0) canvas.mark(y, x);
    }
  }
}

void draw_ellipse_ring(Canvas& canvas, double cy, double cx, double a, double b, double theta,
                       double stroke) {
  const double reach = std::max(a, b) + stroke + 2.0;
  const int y0 = static_cast<int>(std::floor(cy - reach)), y1 = static_cast<int>(std::ceil(cy + reach));
  const int x0 = static_cast<int>(std::floor(cx - reach)), x1 = static_cast<int>(std::ceil(cx + reach));
  const double ct = std::cos(theta), st = std::sin(theta);
  const double scale = std::min(a, b);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dy = y - cy, dx = x - cx;
      const double u = (dx * ct + dy * st) / a;
      const double v = (-dx * st + dy * ct) / b;
      const double rd = std::sqrt(u * u + v * v);
      const double dist = (rd - 1.0) * scale;  // approx signed distance
      canvas.blend(y, x, stroke * 0.5 + 0.5 - std::fabs(dist));
      if (dist <= stroke * 0.5 + 4.0) canvas.mark(y, x);
    }
  }
}

void paint_background(Canvas& canvas, Rng& rng) {
  const int n = canvas.size;
  const double base[3] = {232.0 + rng.uniform(-8, 8), 206.0 + rng.uniform(-9, 9),
                          218.0 + rng.uniform(-8, 8)};
  const double brightness = rng.uniform(-12, 12);

  // low-frequency blotches from an upsampled coarse grid
  const int cells = 9;
  std::vector<double> grid(cells * cells);
  for (double& g : grid) g = rng.uniform(-10, 10);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double gy = static_cast<double>(y) / (n - 1) * (cells - 1);
      const double gx = static_cast<double>(x) / (n - 1) * (cells - 1);
      const double low = bilinear_sample(grid.data(), cells, cells, 1, gy, gx);
      const double speckle = rng.uniform(-12, 12);
      double* px = canvas.rgb.data() + (static_cast<size_t>(y) * n + x) * 3;
      for (int c = 0; c < 3; ++c) {
        px[c] = base[c] + brightness + low + speckle + rng.uniform(-4, 4);
      }
    }
  }
}

void pick_ink(Canvas& canvas, Rng& rng) {
  canvas.ink[0] = 118.0 + rng.uniform(-16, 16);
  canvas.ink[1] = 78.0 + rng.uniform(-12, 12);
  canvas.ink[2] = 142.0 + rng.uniform(-14, 14);
}

// Morphological closing with a circular element: fills the gaps between the
// elements of one planted structure so the mask is the motif's footprint.
void close_mask(std::vector<uint8_t>& mask, int n, int radius) {
  auto sweep = [&](const std::vector<uint8_t>& src, uint8_t probe, uint8_t inside,
                   uint8_t outside) {
    std::vector<uint8_t> out(src.size());
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        bool hit = false;
        for (int dy = -radius; dy <= radius && !hit; ++dy) {
          const int yy = y + dy;
          if (yy < 0 || yy >= n) continue;
          for (int dx = -radius; dx <= radius && !hit; ++dx) {
            if (dy * dy + dx * dx > radius * radius) continue;
            const int xx = x + dx;
            if (xx < 0 || xx >= n) continue;
            hit = src[static_cast<size_t>(yy) * n + xx] == probe;
          }
        }
        out[static_cast<size_t>(y) * n + x] = hit ? inside : outside;
      }
    }
    return out;
  };
  const std::vector<uint8_t> dilated = sweep(mask, 1, 1, 0);
  mask = sweep(dilated, 0, 0, 1);  // erode = complement-dilate
}

// Every class lays down roughly the same amount of ink: stroke widths are
// derived from the planned perimeter so that pixel statistics stay flat
// across classes and only the arrangement separates them.
double stroke_for(double target_ink, double perimeter) {
  return std::clamp(target_ink / perimeter, 1.0, 2.8);
}

// class 0: a few well-separated glands with serrated contours
void motif_sparse_rings(Canvas& canvas, Rng& rng, double s, double target_ink) {
  const int count = 3 + static_cast<int>(rng.below(2));
  std::vector<double> radii;
  double perimeter = 0.0;
  for (int i = 0; i < count; ++i) {
    radii.push_back(rng.uniform(6.0, 9.0) * s);
    perimeter += 2.0 * 3.14159265358979 * radii.back() * 1.15;  // serration overhead
  }
  const double stroke = stroke_for(target_ink, perimeter);
  std::vector<std::array<double, 3>> placed;  // cy, cx, r
  for (double r : radii) {
    double cy = 0, cx = 0;
    for (int attempt = 0; attempt < 60; ++attempt) {
      cy = rng.uniform(r * 1.15 + 3, canvas.size - r * 1.15 - 3);
      cx = rng.uniform(r * 1.15 + 3, canvas.size - r * 1.15 - 3);
      bool ok = true;
      for (const auto& p : placed) {
        if (std::hypot(cy - p[0], cx - p[1]) < r + p[2] + 5.0 * s) ok = false;
      }
      if (ok) break;
    }
    placed.push_back({cy, cx, r});
    draw_serrated_ring(canvas, cy, cx, r, stroke, 7 + static_cast<int>(rng.below(3)),
                       rng.uniform(0.10, 0.15), rng.uniform(0.0, 6.283185307179586));
  }
}

// Straight stroke between two points, same coverage falloff as the rings.
void draw_segment(Canvas& canvas, double y0, double x0, double y1, double x1, double stroke) {
  const int lo_y = static_cast<int>(std::floor(std::min(y0, y1) - stroke - 1));
  const int hi_y = static_cast<int>(std::ceil(std::max(y0, y1) + stroke + 1));
  const int lo_x = static_cast<int>(std::floor(std::min(x0, x1) - stroke - 1));
  const int hi_x = static_cast<int>(std::ceil(std::max(x0, x1) + stroke + 1));
  const double dy = y1 - y0, dx = x1 - x0;
  const double len2 = dy * dy + dx * dx;
  for (int y = lo_y; y <= hi_y; ++y) {
    for (int x = lo_x; x <= hi_x; ++x) {
      const double t = len2 > 0 ? std::clamp(((y - y0) * dy + (x - x0) * dx) / len2, 0.0, 1.0) : 0.0;
      const double d = std::hypot(y - (y0 + t * dy), x - (x0 + t * dx));
      canvas.blend(y, x, stroke * 0.5 + 0.5 - d);
    }
  }
}

// class 1: a few small thick-walled vessels, double ring plus radial spokes
void motif_spoked_vessels(Canvas& canvas, Rng& rng, double s, double target_ink) {
  const int count = 3 + static_cast<int>(rng.below(2));
  std::vector<double> radii;
  std::vector<int> spoke_counts;
  double perimeter = 0.0;
  for (int i = 0; i < count; ++i) {
    radii.push_back(rng.uniform(4.5, 6.5) * s);
    spoke_counts.push_back(5 + static_cast<int>(rng.below(2)));
    const double inner = radii.back() * 0.55;
    perimeter += 2.0 * 3.14159265358979 * (radii.back() + inner) +
                 spoke_counts.back() * (radii.back() - inner);
  }
  const double stroke = stroke_for(target_ink, perimeter);
  std::vector<std::array<double, 3>> placed;
  for (int i = 0; i < count; ++i) {
    const double r = radii[i];
    double cy = 0, cx = 0;
    for (int attempt = 0; attempt < 60; ++attempt) {
      cy = rng.uniform(r + 3, canvas.size - r - 3);
      cx = rng.uniform(r + 3, canvas.size - r - 3);
      bool ok = true;
      for (const auto& p : placed) {
        if (std::hypot(cy - p[0], cx - p[1]) < r + p[2] + 5.0 * s) ok = false;
      }
      if (ok) break;
    }
    placed.push_back({cy, cx, r});
    const double inner = r * 0.55;
    draw_ring(canvas, cy, cx, r, stroke);
    draw_ring(canvas, cy, cx, inner, stroke);
    double angle = rng.uniform(0.0, 6.283185307179586);
    for (int sp = 0; sp < spoke_counts[i]; ++sp) {
      angle += 6.283185307179586 / spoke_counts[i] * rng.uniform(0.8, 1.2);
      const double ca = std::cos(angle), sa = std::sin(angle);
      draw_segment(canvas, cy + sa * inner, cx + ca * inner, cy + sa * r, cx + ca * r, stroke);
    }
  }
}

// class 2: a crowded cluster of small rings
void motif_crowded_rings(Canvas& canvas, Rng& rng, double s, double target_ink) {
  const int count = 8 + static_cast<int>(rng.below(3));
  std::vector<double> radii;
  double perimeter = 0.0;
  for (int i = 0; i < count; ++i) {
    radii.push_back(rng.uniform(3.0, 4.5) * s);
    perimeter += 2.0 * 3.14159265358979 * radii.back();
  }
  const double stroke = stroke_for(target_ink, perimeter);
  const double spread = rng.uniform(8.0, 11.0) * s;
  const double lo = spread + 7.0 * s, hi = canvas.size - spread - 7.0 * s;
  const double cy = rng.uniform(lo, hi);
  const double cx = rng.uniform(lo, hi);
  for (double r : radii) {
    const double y = std::clamp(cy + rng.normal(0.0, spread * 0.55), r + 2.0,
                                canvas.size - r - 2.0);
    const double x = std::clamp(cx + rng.normal(0.0, spread * 0.55), r + 2.0,
                                canvas.size - r - 2.0);
    draw_ring(canvas, y, x, r, stroke);
  }
}

// class 3: a chain of overlapping tangent ellipses
void motif_tangent_ellipses(Canvas& canvas, Rng& rng, double s, double target_ink) {
  const int count = 5 + static_cast<int>(rng.below(2));
  std::vector<std::array<double, 2>> axes;
  double perimeter = 0.0;
  for (int i = 0; i < count; ++i) {
    axes.push_back({rng.uniform(5.5, 7.5) * s, rng.uniform(2.8, 3.8) * s});
    perimeter += 3.14159265358979 * (axes.back()[0] + axes.back()[1]);
  }
  const double stroke = stroke_for(target_ink, perimeter);
  double cy = rng.uniform(14.0 * s, canvas.size - 14.0 * s);
  double cx = rng.uniform(14.0 * s, canvas.size - 14.0 * s);
  double heading = rng.uniform(0.0, 6.283185307179586);
  double prev_a = 0.0;
  for (int i = 0; i < count; ++i) {
    const double a = axes[i][0], b = axes[i][1];
    if (i > 0) {
      heading += rng.uniform(-0.7, 0.7);
      const double step = (prev_a + a) * rng.uniform(0.65, 0.85);
      cy = std::clamp(cy + std::sin(heading) * step, a + 3.0, canvas.size - a - 3.0);
      cx = std::clamp(cx + std::cos(heading) * step, a + 3.0, canvas.size - a - 3.0);
    }
    draw_ellipse_ring(canvas, cy, cx, a, b, rng.uniform(0.0, 3.141592653589793), stroke);
    prev_a = a;
  }
}

LabeledImage synth_image(int label, int index, int size, uint64_t seed) {
  Rng rng(derive_seed(seed, static_cast<uint64_t>(label) * 1000003ULL + index));
  Canvas canvas(size);
  paint_background(canvas, rng);
  pick_ink(canvas, rng);
  const double s = static_cast<double>(size) / 64.0;
  // the budget jitter is far wider than any between-class residual, so
  // global intensity statistics carry no label information
  const double target_ink = 280.0 * s * s * rng.uniform(0.72, 1.28);
  switch (label) {
    case 0: motif_sparse_rings(canvas, rng, s, target_ink); break;
    case 1: motif_spoked_vessels(canvas, rng, s, target_ink); break;
    case 2: motif_crowded_rings(canvas, rng, s, target_ink); break;
    default: motif_tangent_ellipses(canvas, rng, s, target_ink); break;
  }
  close_mask(canvas.mask, size, std::max(3, static_cast<int>(std::lround(5.0 * s))));

  LabeledImage out;
  out.label = label;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05d", class_names()[label].c_str(), index);
  out.id = buf;
  out.image.height = size;
  out.image.width = size;
  out.image.rgb.resize(canvas.rgb.size());
  for (size_t i = 0; i < canvas.rgb.size(); ++i) {
    out.image.rgb[i] = static_cast<uint8_t>(std::clamp(std::lround(canvas.rgb[i]), 0L, 255L));
  }
  out.mask = std::move(canvas.mask);
  return out;
}

}  // namespace

Dataset synth_generate(int n_per_class, int size, uint64_t seed) {
  if (n_per_class < 1) throw ContractError("synth_generate: n_per_class must be >= 1");
  if (size < 16) throw ContractError("synth_generate: size must be >= 16");
  Dataset ds;
  ds.classes = class_names();
  ds.provenance = "synthetic";
  ds.seed = seed;
  ds.images.reserve(static_cast<size_t>(n_per_class) * kClassCount);
  for (int label = 0; label < kClassCount; ++label) {
    for (int i = 0; i < n_per_class; ++i) {
      ds.images.push_back(synth_image(label, i, size, seed));
    }
  }
  return ds;
}

Dataset load_dataset(const std::string& root, LoadReport* report) {
  LoadReport local;
  LoadReport& rep = report ? *report : local;

  const fs::path base(root);
  for (const std::string& cls : class_names()) {
    if (!fs::is_directory(base / cls)) {
      throw ConfigError("load_dataset: missing class directory " + (base / cls).string());
    }
  }

  Dataset ds;
  ds.classes = class_names();
  ds.provenance = "real";

  std::vector<std::pair<std::string, int>> files;  // relative path, label
  for (int label = 0; label < kClassCount; ++label) {
    const fs::path dir = base / class_names()[label];
    int count = 0;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file() || !has_raster_extension(entry.path())) continue;
      files.emplace_back(class_names()[label] + "/" + entry.path().filename().string(), label);
      ++count;
    }
    if (count == 0) {
      rep.warnings.push_back("class directory " + dir.string() + " holds no images");
    }
  }
  std::sort(files.begin(), files.end());

  std::set<std::string> taken_ids;
  for (const auto& [rel, label] : files) {
    const fs::path path = base / rel;
    LabeledImage li;
    try {
      li.image = decode_raster(read_file(path));
    } catch (const Error& e) {
      rep.warnings.push_back("skipping " + rel + ": " + e.what());
      rep.skipped++;
      continue;
    }
    li.label = label;
    // ids keep the bare stem (so exported trees round trip); collisions get
    // the class directory as a prefix, then a counter.
    std::string id = fs::path(rel).stem().string();
    std::replace(id.begin(), id.end(), '/', '_');
    if (taken_ids.count(id)) id = class_names()[label] + "_" + id;
    int suffix = 2;
    while (taken_ids.count(id)) id = id + "_" + std::to_string(suffix++);
    taken_ids.insert(id);
    li.id = id;

    const fs::path mask_path = base / "masks" / (id + ".png");
    if (fs::is_regular_file(mask_path)) {
      try {
        const Image m = decode_raster(read_file(mask_path));
        if (m.height == li.image.height && m.width == li.image.width) {
          li.mask.resize(static_cast<size_t>(m.height) * m.width);
          for (size_t p = 0; p < li.mask.size(); ++p) li.mask[p] = m.rgb[p * 3] > 127 ? 1 : 0;
        } else {
          rep.warnings.push_back("mask size mismatch for " + id + "; ignored");
        }
      } catch (const Error& e) {
        rep.warnings.push_back("unreadable mask for " + id + ": " + e.what());
      }
    }
    ds.images.push_back(std::move(li));
    rep.loaded++;
  }
  if (ds.images.empty()) throw InputError("load_dataset: no decodable images under " + root);
  return ds;
}

void export_dataset(const Dataset& ds, const std::string& root) {
  const fs::path base(root);
  for (const std::string& cls : class_names()) fs::create_directories(base / cls);
  bool any_mask = false;
  for (const LabeledImage& li : ds.images) {
    if (!li.mask.empty()) any_mask = true;
  }
  if (any_mask) fs::create_directories(base / "masks");

  for (const LabeledImage& li : ds.images) {
    write_file(base / ds.classes[li.label] / (li.id + ".png"), encode_png(li.image));
    if (!li.mask.empty()) {
      GrayImage g;
      g.height = li.image.height;
      g.width = li.image.width;
      g.pixels.resize(li.mask.size());
      for (size_t p = 0; p < li.mask.size(); ++p) g.pixels[p] = li.mask[p] ? 255 : 0;
      write_file(base / "masks" / (li.id + ".png"), encode_png_gray(g));
    }
  }
}

}  // namespace attenlab
