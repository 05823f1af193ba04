#include "rmn/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include "rmn/errors.hpp"

namespace rmn {

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in, const std::string& file) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw IoError(file + ": truncated header");
  return tok;
}

int header_int(std::istream& in, const std::string& file, const char* what) {
  const std::string tok = header_token(in, file);
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size() || v < 1) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw IoError(file + ": bad " + std::string(what) + " '" + tok + "'");
  }
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0));
}

}  // namespace

GrayImage read_pnm(const std::filesystem::path& path) {
  const std::string file = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + file + "'");
  const std::string magic = header_token(in, file);
  if (magic != "P5" && magic != "P6") {
    throw IoError(file + ": unsupported image format '" + magic + "' (expected binary PGM P5 or PPM P6)");
  }
  GrayImage img;
  img.width = header_int(in, file, "width");
  img.height = header_int(in, file, "height");
  const int maxval = header_int(in, file, "maxval");
  if (maxval != 255) throw IoError(file + ": only 8-bit images (maxval 255) are supported");
  // header_token consumed exactly one whitespace byte after maxval.

  const int channels = magic == "P6" ? 3 : 1;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  std::vector<std::uint8_t> raw(n * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw IoError(file + ": truncated pixel data");

  if (channels == 1) {
    img.pixels = std::move(raw);
  } else {
    img.pixels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      img.pixels[i] = to_byte(0.299 * raw[3 * i] + 0.587 * raw[3 * i + 1] + 0.114 * raw[3 * i + 2]);
    }
  }
  return img;
}

namespace {

void write_pnm(const char* magic, int w, int h, const std::vector<std::uint8_t>& px,
               std::size_t channels, const std::filesystem::path& path) {
  if (w < 1 || h < 1 || px.size() != static_cast<std::size_t>(w) * h * channels)
    throw IoError("image buffer does not match its dimensions");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image '" + path.string() + "'");
  out << magic << '\n' << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
  write_pnm("P5", image.width, image.height, image.pixels, 1, path);
}

void write_ppm(const RgbImage& image, const std::filesystem::path& path) {
  write_pnm("P6", image.width, image.height, image.pixels, 3, path);
}

std::vector<double> resize_bilinear(std::span<const double> src, int src_w, int src_h, int dst_w,
                                    int dst_h) {
  std::vector<double> out(static_cast<std::size_t>(dst_w) * dst_h);
  const double sx = static_cast<double>(src_w) / dst_w;
  const double sy = static_cast<double>(src_h) / dst_h;
  for (int y = 0; y < dst_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src_h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src_h - 1);
    const double ty = fy - y0;
    for (int x = 0; x < dst_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src_w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src_w - 1);
      const double tx = fx - x0;
      auto px = [&](int xx, int yy) { return src[static_cast<std::size_t>(yy) * src_w + xx]; };
      // Lerp form keeps constant regions exact.
      const double top = px(x0, y0) + (px(x1, y0) - px(x0, y0)) * tx;
      const double bot = px(x0, y1) + (px(x1, y1) - px(x0, y1)) * tx;
      out[static_cast<std::size_t>(y) * dst_w + x] = top + (bot - top) * ty;
    }
  }
  return out;
}

GrayImage rotate(const GrayImage& image, double degrees) {
  GrayImage out{image.width, image.height, std::vector<std::uint8_t>(image.pixels.size())};
  const double rad = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cx = (image.width - 1) / 2.0, cy = (image.height - 1) / 2.0;
  auto tap = [&](int x, int y) -> double {
    if (x < 0 || y < 0 || x >= image.width || y >= image.height) return 0.0;
    return image.at(x, y);
  };
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      // Inverse map: rotate the destination offset clockwise to find the source.
      const double dx = x - cx, dy = y - cy;
      const double fx = cx + c * dx - s * dy;
      const double fy = cy + s * dx + c * dy;
      const int x0 = static_cast<int>(std::floor(fx));
      const int y0 = static_cast<int>(std::floor(fy));
      const double tx = fx - x0, ty = fy - y0;
      const double v = (1 - ty) * ((1 - tx) * tap(x0, y0) + tx * tap(x0 + 1, y0)) +
                       ty * ((1 - tx) * tap(x0, y0 + 1) + tx * tap(x0 + 1, y0 + 1));
      out.pixels[static_cast<std::size_t>(y) * image.width + x] = to_byte(v);
    }
  }
  return out;
}

GrayImage flip_horizontal(const GrayImage& image) {
  GrayImage out = image;
  for (int y = 0; y < image.height; ++y) {
    auto row = out.pixels.begin() + static_cast<std::ptrdiff_t>(y) * image.width;
    std::reverse(row, row + image.width);
  }
  return out;
}

}  // namespace rmn
