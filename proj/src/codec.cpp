#include "codec.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <string>

#include "error.hpp"

namespace attenlab {

namespace {

[[noreturn]] void fail(const char* codec, size_t offset, const std::string& what) {
  throw FormatError(std::string(codec) + ": " + what + " at byte " + std::to_string(offset));
}

uint32_t read_be32(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void put_be32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(uint8_t(v >> 24));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v));
}

// ---------------------------------------------------------------- PNG ----

constexpr uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

int png_samples_per_pixel(int color_type, size_t offset) {
  switch (color_type) {
    case 0: return 1;  // gray
    case 2: return 3;  // rgb
    case 3: return 1;  // palette index
    case 4: return 2;  // gray+alpha
    case 6: return 4;  // rgba
    default: fail("png", offset, "unsupported color type " + std::to_string(color_type));
  }
}

uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return uint8_t(a);
  if (pb <= pc) return uint8_t(b);
  return uint8_t(c);
}

Image decode_png(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSignature, 8) != 0) {
    fail("png", 0, "bad signature");
  }
  size_t pos = 8;
  int width = 0, height = 0, color_type = -1;
  std::vector<uint8_t> palette;      // rgb triples
  std::vector<uint8_t> compressed;   // concatenated IDAT payloads
  bool saw_ihdr = false, saw_iend = false;

  while (pos < bytes.size()) {
    if (pos + 8 > bytes.size()) fail("png", pos, "truncated chunk header");
    const uint32_t len = read_be32(&bytes[pos]);
    const char type[5] = {char(bytes[pos + 4]), char(bytes[pos + 5]), char(bytes[pos + 6]),
                          char(bytes[pos + 7]), 0};
    if (pos + 12 + static_cast<size_t>(len) > bytes.size()) fail("png", pos, "truncated chunk");
    const uint8_t* data = &bytes[pos + 8];
    const uint32_t expect_crc = read_be32(&bytes[pos + 8 + len]);
    uint32_t crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, &bytes[pos + 4], len + 4);
    if (crc != expect_crc) fail("png", pos + 8 + len, std::string("bad crc in ") + type);

    if (std::strcmp(type, "IHDR") == 0) {
      if (len != 13) fail("png", pos, "IHDR length");
      width = static_cast<int>(read_be32(data));
      height = static_cast<int>(read_be32(data + 4));
      const int bit_depth = data[8];
      color_type = data[9];
      if (width <= 0 || height <= 0) fail("png", pos + 8, "zero-area image");
      if (bit_depth != 8) fail("png", pos + 16, "only 8-bit depth supported");
      png_samples_per_pixel(color_type, pos + 17);
      if (data[12] != 0) fail("png", pos + 20, "interlaced images not supported");
      saw_ihdr = true;
    } else if (std::strcmp(type, "PLTE") == 0) {
      if (len % 3 != 0) fail("png", pos, "PLTE length");
      palette.assign(data, data + len);
    } else if (std::strcmp(type, "IDAT") == 0) {
      compressed.insert(compressed.end(), data, data + len);
    } else if (std::strcmp(type, "IEND") == 0) {
      saw_iend = true;
      pos += 12 + len;
      break;
    }
    pos += 12 + static_cast<size_t>(len);
  }
  if (!saw_ihdr) fail("png", pos, "missing IHDR");
  if (!saw_iend) fail("png", pos, "missing IEND");
  if (compressed.empty()) fail("png", pos, "missing IDAT");

  const int spp = png_samples_per_pixel(color_type, 0);
  const size_t row_bytes = static_cast<size_t>(width) * spp;
  const size_t raw_size = (row_bytes + 1) * height;
  std::vector<uint8_t> raw(raw_size);
  uLongf dest_len = raw_size;
  const int zrc = uncompress(raw.data(), &dest_len, compressed.data(), compressed.size());
  if (zrc != Z_OK || dest_len != raw_size) fail("png", 8, "corrupt IDAT stream");

  // Undo per-row filters in place (output shifted forward by one per row).
  std::vector<uint8_t> pixels(row_bytes * height);
  for (int y = 0; y < height; ++y) {
    const uint8_t filter = raw[(row_bytes + 1) * y];
    const uint8_t* src = &raw[(row_bytes + 1) * y + 1];
    uint8_t* dst = &pixels[row_bytes * y];
    const uint8_t* prev = y > 0 ? &pixels[row_bytes * (y - 1)] : nullptr;
    for (size_t i = 0; i < row_bytes; ++i) {
      const int left = i >= static_cast<size_t>(spp) ? dst[i - spp] : 0;
      const int up = prev ? prev[i] : 0;
      const int ul = (prev && i >= static_cast<size_t>(spp)) ? prev[i - spp] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += left; break;
        case 2: v += up; break;
        case 3: v += (left + up) / 2; break;
        case 4: v += paeth(left, up, ul); break;
        default: fail("png", (row_bytes + 1) * y + 8, "unknown filter " + std::to_string(filter));
      }
      dst[i] = uint8_t(v);
    }
  }

  Image img;
  img.height = height;
  img.width = width;
  img.rgb.resize(static_cast<size_t>(height) * width * 3);
  for (int64_t p = 0; p < static_cast<int64_t>(height) * width; ++p) {
    const uint8_t* s = &pixels[p * spp];
    uint8_t r, g, b;
    switch (color_type) {
      case 0: r = g = b = s[0]; break;
      case 2: r = s[0]; g = s[1]; b = s[2]; break;
      case 3: {
        const size_t idx = static_cast<size_t>(s[0]) * 3;
        if (idx + 2 >= palette.size()) fail("png", 8, "palette index out of range");
        r = palette[idx]; g = palette[idx + 1]; b = palette[idx + 2];
        break;
      }
      case 4: r = g = b = s[0]; break;
      default: r = s[0]; g = s[1]; b = s[2]; break;  // rgba
    }
    img.rgb[p * 3] = r;
    img.rgb[p * 3 + 1] = g;
    img.rgb[p * 3 + 2] = b;
  }
  return img;
}

void append_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
  put_be32(out, static_cast<uint32_t>(data.size()));
  const size_t type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, &out[type_at], static_cast<uInt>(4 + data.size()));
  put_be32(out, crc);
}

std::vector<uint8_t> encode_png_impl(int height, int width, int channels, const uint8_t* pixels) {
  if (height < 1 || width < 1) throw InputError("png encode: zero-area image");
  const size_t row_bytes = static_cast<size_t>(width) * channels;
  std::vector<uint8_t> raw((row_bytes + 1) * height);
  for (int y = 0; y < height; ++y) {
    raw[(row_bytes + 1) * y] = 0;  // filter: none
    std::memcpy(&raw[(row_bytes + 1) * y + 1], pixels + row_bytes * y, row_bytes);
  }
  uLongf bound = compressBound(raw.size());
  std::vector<uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), raw.size(), 6) != Z_OK) {
    throw FormatError("png encode: deflate failed");
  }
  compressed.resize(bound);

  std::vector<uint8_t> out(kPngSignature, kPngSignature + 8);
  std::vector<uint8_t> ihdr(13, 0);
  ihdr[0] = uint8_t(width >> 24); ihdr[1] = uint8_t(width >> 16);
  ihdr[2] = uint8_t(width >> 8); ihdr[3] = uint8_t(width);
  ihdr[4] = uint8_t(height >> 24); ihdr[5] = uint8_t(height >> 16);
  ihdr[6] = uint8_t(height >> 8); ihdr[7] = uint8_t(height);
  ihdr[8] = 8;                                  // bit depth
  ihdr[9] = channels == 3 ? 2 : 0;              // rgb or gray
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", compressed);
  append_chunk(out, "IEND", {});
  return out;
}

// --------------------------------------------------------------- JPEG ----

constexpr int kZigzag[64] = {
    0,  1,  8,  16, 9,  2,  3,  10, 17, 24, 32, 25, 18, 11, 4,  5,
    12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6,  7,  14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63};

struct HuffTable {
  bool present = false;
  // canonical code bounds per length, plus symbol lookup
  std::array<int32_t, 17> min_code{};
  std::array<int32_t, 17> max_code{};  // -1 where no codes of that length
  std::array<int32_t, 17> val_offset{};
  std::vector<uint8_t> symbols;
};

struct JpegComponent {
  int id = 0;
  int h = 1, v = 1;
  int quant_id = 0;
  int dc_table = 0, ac_table = 0;
  int dc_pred = 0;
  std::vector<double> plane;  // padded to whole MCUs at sampled resolution
  int plane_w = 0, plane_h = 0;
};

class JpegDecoder {
public:
  explicit JpegDecoder(const std::vector<uint8_t>& bytes) : bytes_(bytes) {}

  Image decode() {
    expect_marker(0xD8, "SOI");
    for (;;) {
      const int marker = next_marker();
      switch (marker) {
        case 0xC0:  // baseline SOF
          parse_sof();
          break;
        case 0xC1: case 0xC2: case 0xC3: case 0xC5: case 0xC6: case 0xC7:
        case 0xC9: case 0xCA: case 0xCB: case 0xCD: case 0xCE: case 0xCF:
          fail("jpeg", pos_ - 2, "only baseline (SOF0) encoding supported");
        case 0xC4:
          parse_dht();
          break;
        case 0xDB:
          parse_dqt();
          break;
        case 0xDD: {
          const size_t len = read_segment_length();
          if (len != 4) fail("jpeg", pos_, "bad DRI length");
          restart_interval_ = read_u16();
          break;
        }
        case 0xDA:
          parse_sos();
          decode_scan();
          return assemble();
        case 0xD9:
          fail("jpeg", pos_ - 2, "EOI before any scan");
        default:
          skip_segment();  // APPn, COM, and anything else with a length
          break;
      }
    }
  }

private:
  const std::vector<uint8_t>& bytes_;
  size_t pos_ = 0;
  int width_ = 0, height_ = 0;
  int hmax_ = 1, vmax_ = 1;
  int restart_interval_ = 0;
  std::array<std::array<uint16_t, 64>, 4> quant_{};
  std::array<bool, 4> quant_present_{};
  std::array<HuffTable, 4> dc_tables_;
  std::array<HuffTable, 4> ac_tables_;
  std::vector<JpegComponent> components_;
  std::vector<int> scan_order_;  // component indices in scan order
  // bit reader state
  uint32_t bit_buffer_ = 0;
  int bit_count_ = 0;

  uint8_t read_u8() {
    if (pos_ >= bytes_.size()) fail("jpeg", pos_, "unexpected end of stream");
    return bytes_[pos_++];
  }
  int read_u16() {
    const int hi = read_u8();
    return (hi << 8) | read_u8();
  }
  void expect_marker(int code, const char* name) {
    if (read_u8() != 0xFF || read_u8() != code) {
      fail("jpeg", pos_ - 2, std::string("missing ") + name + " marker");
    }
  }
  int next_marker() {
    // markers may be preceded by fill bytes (0xFF)
    uint8_t b = read_u8();
    while (b != 0xFF) b = read_u8();
    uint8_t code = read_u8();
    while (code == 0xFF) code = read_u8();
    return code;
  }
  size_t read_segment_length() {
    const int len = read_u16();
    if (len < 2) fail("jpeg", pos_ - 2, "bad segment length");
    return static_cast<size_t>(len);
  }
  void skip_segment() {
    const size_t len = read_segment_length();
    if (pos_ + len - 2 > bytes_.size()) fail("jpeg", pos_, "truncated segment");
    pos_ += len - 2;
  }

  void parse_dqt() {
    size_t remaining = read_segment_length() - 2;
    while (remaining > 0) {
      const uint8_t pq_tq = read_u8();
      const int precision = pq_tq >> 4;
      const int id = pq_tq & 15;
      if (id > 3) fail("jpeg", pos_ - 1, "bad quant table id");
      for (int i = 0; i < 64; ++i) {
        quant_[id][i] = precision ? static_cast<uint16_t>(read_u16())
                                  : static_cast<uint16_t>(read_u8());
      }
      quant_present_[id] = true;
      remaining -= 1 + (precision ? 128 : 64);
    }
  }

  void parse_dht() {
    size_t remaining = read_segment_length() - 2;
    while (remaining > 0) {
      const uint8_t tc_th = read_u8();
      const int cls = tc_th >> 4;
      const int id = tc_th & 15;
      if (cls > 1 || id > 3) fail("jpeg", pos_ - 1, "bad huffman table spec");
      std::array<int, 17> counts{};
      int total = 0;
      for (int l = 1; l <= 16; ++l) {
        counts[l] = read_u8();
        total += counts[l];
      }
      HuffTable table;
      table.present = true;
      table.symbols.resize(total);
      for (int i = 0; i < total; ++i) table.symbols[i] = read_u8();
      int code = 0, offset = 0;
      for (int l = 1; l <= 16; ++l) {
        table.val_offset[l] = offset - code;
        table.min_code[l] = counts[l] ? code : 0;
        table.max_code[l] = counts[l] ? code + counts[l] - 1 : -1;
        offset += counts[l];
        code = (code + counts[l]) << 1;
      }
      (cls == 0 ? dc_tables_ : ac_tables_)[id] = std::move(table);
      remaining -= 17 + total;
    }
  }

  void parse_sof() {
    read_segment_length();
    const int precision = read_u8();
    if (precision != 8) fail("jpeg", pos_ - 1, "only 8-bit precision supported");
    height_ = read_u16();
    width_ = read_u16();
    if (height_ <= 0 || width_ <= 0) fail("jpeg", pos_ - 4, "zero-area image");
    const int ncomp = read_u8();
    if (ncomp != 1 && ncomp != 3) {
      fail("jpeg", pos_ - 1, std::to_string(ncomp) + "-component images not supported");
    }
    components_.resize(ncomp);
    for (auto& comp : components_) {
      comp.id = read_u8();
      const uint8_t hv = read_u8();
      comp.h = hv >> 4;
      comp.v = hv & 15;
      comp.quant_id = read_u8();
      if (comp.h < 1 || comp.h > 2 || comp.v < 1 || comp.v > 2) {
        fail("jpeg", pos_ - 2, "unsupported sampling factors");
      }
      hmax_ = std::max(hmax_, comp.h);
      vmax_ = std::max(vmax_, comp.v);
    }
  }

  void parse_sos() {
    if (components_.empty()) fail("jpeg", pos_, "SOS before SOF");
    read_segment_length();
    const int ncomp = read_u8();
    if (ncomp != static_cast<int>(components_.size())) {
      fail("jpeg", pos_ - 1, "scan does not cover all components");
    }
    scan_order_.clear();
    for (int i = 0; i < ncomp; ++i) {
      const int id = read_u8();
      const uint8_t tables = read_u8();
      bool found = false;
      for (size_t c = 0; c < components_.size(); ++c) {
        if (components_[c].id == id) {
          components_[c].dc_table = tables >> 4;
          components_[c].ac_table = tables & 15;
          scan_order_.push_back(static_cast<int>(c));
          found = true;
        }
      }
      if (!found) fail("jpeg", pos_ - 2, "scan names unknown component");
    }
    read_u8();  // spectral start
    read_u8();  // spectral end
    read_u8();  // approximation
  }

  int read_bit() {
    if (bit_count_ == 0) {
      uint8_t b = read_u8();
      if (b == 0xFF) {
        const uint8_t next = read_u8();
        if (next != 0x00) fail("jpeg", pos_ - 1, "marker inside entropy data");
      }
      bit_buffer_ = b;
      bit_count_ = 8;
    }
    bit_count_--;
    return (bit_buffer_ >> bit_count_) & 1;
  }

  int read_bits(int n) {
    int v = 0;
    for (int i = 0; i < n; ++i) v = (v << 1) | read_bit();
    return v;
  }

  int decode_symbol(const HuffTable& table) {
    if (!table.present) fail("jpeg", pos_, "scan references missing huffman table");
    int code = 0;
    for (int l = 1; l <= 16; ++l) {
      code = (code << 1) | read_bit();
      if (table.max_code[l] >= 0 && code <= table.max_code[l] && code >= table.min_code[l]) {
        return table.symbols[table.val_offset[l] + code];
      }
    }
    fail("jpeg", pos_, "invalid huffman code");
  }

  static int extend(int v, int bits) {
    if (bits == 0) return 0;
    return v < (1 << (bits - 1)) ? v - (1 << bits) + 1 : v;
  }

  void decode_block(JpegComponent& comp, double* out8x8, int stride) {
    if (!quant_present_[comp.quant_id]) fail("jpeg", pos_, "missing quant table");
    const auto& qt = quant_[comp.quant_id];
    std::array<double, 64> coef{};
    const int dc_bits = decode_symbol(dc_tables_[comp.dc_table]);
    if (dc_bits > 11) fail("jpeg", pos_, "bad DC category");
    comp.dc_pred += extend(read_bits(dc_bits), dc_bits);
    coef[0] = static_cast<double>(comp.dc_pred) * qt[0];
    for (int k = 1; k < 64;) {
      const int rs = decode_symbol(ac_tables_[comp.ac_table]);
      const int run = rs >> 4, size = rs & 15;
      if (size == 0) {
        if (run == 15) {
          k += 16;
          continue;
        }
        break;  // end of block
      }
      k += run;
      if (k > 63) fail("jpeg", pos_, "AC run beyond block");
      coef[kZigzag[k]] = static_cast<double>(extend(read_bits(size), size)) * qt[k];
      ++k;
    }
    idct8x8(coef.data(), out8x8, stride);
  }

  static void idct8x8(const double* coef, double* out, int stride) {
    static const std::array<std::array<double, 8>, 8> cos_table = [] {
      std::array<std::array<double, 8>, 8> t{};
      for (int x = 0; x < 8; ++x) {
        for (int u = 0; u < 8; ++u) {
          const double cu = u == 0 ? 1.0 / std::sqrt(2.0) : 1.0;
          t[x][u] = cu * std::cos((2 * x + 1) * u * 3.14159265358979323846 / 16.0);
        }
      }
      return t;
    }();
    double tmp[64];
    for (int v = 0; v < 8; ++v) {
      for (int x = 0; x < 8; ++x) {
        double acc = 0.0;
        for (int u = 0; u < 8; ++u) acc += coef[v * 8 + u] * cos_table[x][u];
        tmp[v * 8 + x] = acc;
      }
    }
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        double acc = 0.0;
        for (int v = 0; v < 8; ++v) acc += tmp[v * 8 + x] * cos_table[y][v];
        out[y * stride + x] = acc / 4.0 + 128.0;
      }
    }
  }

  void decode_scan() {
    const int mcus_x = (width_ + 8 * hmax_ - 1) / (8 * hmax_);
    const int mcus_y = (height_ + 8 * vmax_ - 1) / (8 * vmax_);
    for (auto& comp : components_) {
      comp.plane_w = mcus_x * comp.h * 8;
      comp.plane_h = mcus_y * comp.v * 8;
      comp.plane.assign(static_cast<size_t>(comp.plane_w) * comp.plane_h, 0.0);
      comp.dc_pred = 0;
    }
    int mcus_until_restart = restart_interval_;
    int restart_index = 0;
    for (int my = 0; my < mcus_y; ++my) {
      for (int mx = 0; mx < mcus_x; ++mx) {
        if (restart_interval_ > 0 && mcus_until_restart == 0) {
          bit_count_ = 0;  // byte align
          const int marker = next_marker();
          if (marker != 0xD0 + restart_index) fail("jpeg", pos_ - 1, "bad restart marker");
          restart_index = (restart_index + 1) & 7;
          for (auto& comp : components_) comp.dc_pred = 0;
          mcus_until_restart = restart_interval_;
        }
        for (int ci : scan_order_) {
          JpegComponent& comp = components_[ci];
          for (int by = 0; by < comp.v; ++by) {
            for (int bx = 0; bx < comp.h; ++bx) {
              const int px = (mx * comp.h + bx) * 8;
              const int py = (my * comp.v + by) * 8;
              decode_block(comp, comp.plane.data() + static_cast<int64_t>(py) * comp.plane_w + px,
                           comp.plane_w);
            }
          }
        }
        if (restart_interval_ > 0) --mcus_until_restart;
      }
    }
  }

  Image assemble() {
    Image img;
    img.height = height_;
    img.width = width_;
    img.rgb.resize(static_cast<size_t>(height_) * width_ * 3);
    auto clamp8 = [](double v) {
      return static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    };
    auto sample = [&](const JpegComponent& comp, int y, int x) {
      const int sy = std::min(y * comp.v / vmax_, comp.plane_h - 1);
      const int sx = std::min(x * comp.h / hmax_, comp.plane_w - 1);
      return comp.plane[static_cast<int64_t>(sy) * comp.plane_w + sx];
    };
    for (int y = 0; y < height_; ++y) {
      for (int x = 0; x < width_; ++x) {
        uint8_t* px = img.pixel(y, x);
        if (components_.size() == 1) {
          px[0] = px[1] = px[2] = clamp8(sample(components_[0], y, x));
        } else {
          const double Y = sample(components_[0], y, x);
          const double cb = sample(components_[1], y, x) - 128.0;
          const double cr = sample(components_[2], y, x) - 128.0;
          px[0] = clamp8(Y + 1.402 * cr);
          px[1] = clamp8(Y - 0.344136 * cb - 0.714136 * cr);
          px[2] = clamp8(Y + 1.772 * cb);
        }
      }
    }
    return img;
  }
};

}  // namespace

bool looks_like_png(const std::vector<uint8_t>& bytes) {
  return bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSignature, 8) == 0;
}

bool looks_like_jpeg(const std::vector<uint8_t>& bytes) {
  return bytes.size() >= 2 && bytes[0] == 0xFF && bytes[1] == 0xD8;
}

Image decode_raster(const std::vector<uint8_t>& bytes) {
  if (looks_like_png(bytes)) return decode_png(bytes);
  if (looks_like_jpeg(bytes)) return JpegDecoder(bytes).decode();
  throw FormatError("decode_raster: unrecognized container at byte 0");
}

std::vector<uint8_t> encode_png(const Image& image) {
  return encode_png_impl(image.height, image.width, 3, image.rgb.data());
}

std::vector<uint8_t> encode_png_gray(const GrayImage& image) {
  return encode_png_impl(image.height, image.width, 1, image.pixels.data());
}

}  // namespace attenlab
