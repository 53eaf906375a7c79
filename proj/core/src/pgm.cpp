#include "ocra/pgm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ocra/error.hpp"

namespace ocra {

namespace {

// Rows top to bottom, 3 bits each, most significant bit leftmost.
const std::array<uint8_t, 5>* glyph(char c) {
  static const std::array<std::array<uint8_t, 5>, 10> digits = {{
      {7, 5, 5, 5, 7},  // 0
      {2, 6, 2, 2, 7},  // 1
      {7, 1, 7, 4, 7},  // 2
      {7, 1, 7, 1, 7},  // 3
      {5, 5, 7, 1, 1},  // 4
      {7, 4, 7, 1, 7},  // 5
      {7, 4, 7, 5, 7},  // 6
      {7, 1, 1, 1, 1},  // 7
      {7, 5, 7, 5, 7},  // 8
      {7, 5, 7, 1, 7},  // 9
  }};
  static const std::array<uint8_t, 5> dot = {0, 0, 0, 0, 2};
  static const std::array<uint8_t, 5> dash = {0, 0, 7, 0, 0};
  static const std::array<uint8_t, 5> b = {4, 4, 7, 5, 7};
  static const std::array<uint8_t, 5> blank = {0, 0, 0, 0, 0};
  if (c >= '0' && c <= '9') return &digits[static_cast<size_t>(c - '0')];
  if (c == '.') return &dot;
  if (c == '-') return &dash;
  if (c == 'b') return &b;
  if (c == ' ') return &blank;
  return nullptr;
}

void skip_space_and_comments(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

int read_int(std::istream& in, const std::string& path) {
  skip_space_and_comments(in);
  int v = -1;
  if (!(in >> v) || v < 0) throw FormatError(path + ": malformed PGM header");
  return v;
}

}  // namespace

GrayImage::GrayImage(int w, int h, uint8_t fill)
    : width(w), height(h), pixels(static_cast<size_t>(w) * h, fill) {}

void GrayImage::set(int x, int y, uint8_t v) {
  if (x >= 0 && y >= 0 && x < width && y < height) pixels[static_cast<size_t>(y * width + x)] = v;
}

void write_pgm(const GrayImage& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("error writing " + path);
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[2];
  if (!in.read(magic, 2) || magic[0] != 'P' || magic[1] != '5') {
    throw FormatError(path + ": not a binary PGM (magic P5)");
  }
  const int w = read_int(in, path), h = read_int(in, path), maxval = read_int(in, path);
  if (maxval != 255) throw FormatError(path + ": only 8-bit PGM is supported");
  if (!std::isspace(in.get())) throw FormatError(path + ": malformed PGM header");
  GrayImage img(w, h);
  if (!in.read(reinterpret_cast<char*>(img.pixels.data()),
               static_cast<std::streamsize>(img.pixels.size()))) {
    throw FormatError(path + ": truncated PGM raster");
  }
  return img;
}

void paste(GrayImage& dst, const std::vector<float>& src, int src_w, int src_h, int x, int y,
           int zoom) {
  for (int sy = 0; sy < src_h; ++sy) {
    for (int sx = 0; sx < src_w; ++sx) {
      const float v = std::clamp(src[static_cast<size_t>(sy * src_w + sx)], 0.0f, 1.0f);
      const auto g = static_cast<uint8_t>(std::lround(v * 255.0f));
      for (int dy = 0; dy < zoom; ++dy) {
        for (int dx = 0; dx < zoom; ++dx) dst.set(x + sx * zoom + dx, y + sy * zoom + dy, g);
      }
    }
  }
}

void draw_rect(GrayImage& dst, int x0, int y0, int x1, int y1, uint8_t value) {
  if (x0 > x1) std::swap(x0, x1);
  if (y0 > y1) std::swap(y0, y1);
  for (int x = x0; x <= x1; ++x) {
    dst.set(x, y0, value);
    dst.set(x, y1, value);
  }
  for (int y = y0; y <= y1; ++y) {
    dst.set(x0, y, value);
    dst.set(x1, y, value);
  }
}

int text_width(const std::string& text, int scale) {
  return text.empty() ? 0 : static_cast<int>(text.size()) * 4 * scale - scale;
}

void draw_text(GrayImage& dst, const std::string& text, int x, int y, int scale, uint8_t value) {
  for (size_t i = 0; i < text.size(); ++i) {
    const auto* g = glyph(text[i]);
    if (!g) continue;
    const int gx = x + static_cast<int>(i) * 4 * scale;
    for (int row = 0; row < 5; ++row) {
      for (int col = 0; col < 3; ++col) {
        if (!((*g)[static_cast<size_t>(row)] & (4 >> col))) continue;
        for (int dy = 0; dy < scale; ++dy) {
          for (int dx = 0; dx < scale; ++dx) dst.set(gx + col * scale + dx, y + row * scale + dy, value);
        }
      }
    }
  }
}

}  // namespace ocra
