#pragma once

// Binary PGM (P5) images and a small raster for composing figure grids.

#include <cstdint>
#include <string>
#include <vector>

namespace ocra {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // row-major

  GrayImage() = default;
  GrayImage(int w, int h, uint8_t fill = 0);
  uint8_t at(int x, int y) const { return pixels[static_cast<size_t>(y * width + x)]; }
  void set(int x, int y, uint8_t v);  // ignores out-of-range coordinates
  bool operator==(const GrayImage&) const = default;
};

void write_pgm(const GrayImage& image, const std::string& path);
GrayImage read_pgm(const std::string& path);

// Copies a [0,1] float image scaled by `zoom` (nearest neighbour) with its
// top-left corner at (x, y). Values are clamped.
void paste(GrayImage& dst, const std::vector<float>& src, int src_w, int src_h, int x, int y,
           int zoom);

// Outline of the rectangle with corners (x0,y0), (x1,y1), inclusive, clipped to the image.
void draw_rect(GrayImage& dst, int x0, int y0, int x1, int y1, uint8_t value);

// 3x5 glyphs for digits, '.', '-', 'b' and space; `scale` multiplies glyph size.
void draw_text(GrayImage& dst, const std::string& text, int x, int y, int scale, uint8_t value);
int text_width(const std::string& text, int scale);

}  // namespace ocra
