#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace rmn {

// 8-bit single-channel raster, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

// 8-bit interleaved RGB raster, row-major.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

/// Reads binary PGM (P5) or PPM (P6) with maxval 255. Colour images are
/// reduced to luma with weights 0.299, 0.587, 0.114.
GrayImage read_pnm(const std::filesystem::path& path);
void write_pgm(const GrayImage& image, const std::filesystem::path& path);
void write_ppm(const RgbImage& image, const std::filesystem::path& path);

/// Bilinear resize with half-pixel centres: destination pixel d samples
/// source coordinate (d + 0.5) * in / out - 0.5, clamped to the image.
/// Values stay in the 0-255 range as doubles.
std::vector<double> resize_bilinear(std::span<const double> src, int src_w, int src_h, int dst_w,
                                    int dst_h);

/// Counter-clockwise rotation (as displayed, y down) about the image
/// centre. Bilinear resampling; taps outside the image read as zero.
/// Results are rounded to the nearest integer.
GrayImage rotate(const GrayImage& image, double degrees);
GrayImage flip_horizontal(const GrayImage& image);

}  // namespace rmn
