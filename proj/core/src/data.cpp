#include "rmn/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

namespace rmn {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

GrayImage Sample::image() const {
  return GrayImage{kFerSide, kFerSide, std::vector<std::uint8_t>(pixels.begin(), pixels.end())};
}

void Dataset::add(const Sample& s) {
  if (s.label < 0 || s.label >= kNumClasses) throw LabelError("label " + std::to_string(s.label) + " out of range");
  by_split_[static_cast<std::size_t>(s.split)].push_back(samples_.size());
  samples_.push_back(s);
}

const std::vector<std::size_t>& Dataset::indices(Split split) const {
  return by_split_[static_cast<std::size_t>(split)];
}

// ------------------------------------------------------------------ CSV

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string_view unquote(std::string_view s) {
  s = trim(s);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

Sample parse_row(std::string_view row, std::size_t line) {
  std::array<std::string_view, 3> cols;
  std::size_t ncols = 0, start = 0;
  for (std::size_t i = 0; i <= row.size(); ++i) {
    if (i == row.size() || row[i] == ',') {
      if (ncols < 3) cols[ncols] = row.substr(start, i - start);
      ++ncols;
      start = i + 1;
    }
  }
  if (ncols != 3) throw ParseError(line, "expected 3 columns, found " + std::to_string(ncols));

  Sample s;
  const std::string_view label = unquote(cols[0]);
  int value = 0;
  auto [lp, lec] = std::from_chars(label.data(), label.data() + label.size(), value);
  if (lec != std::errc() || lp != label.data() + label.size())
    throw ParseError(line, "emotion '" + std::string(label) + "' is not an integer");
  if (value < 0 || value >= kNumClasses)
    throw ParseError(line, "emotion " + std::to_string(value) + " is outside 0-6");
  s.label = value;

  const std::string_view px = unquote(cols[1]);
  const char* p = px.data();
  const char* end = px.data() + px.size();
  std::size_t count = 0;
  while (true) {
    while (p < end && *p == ' ') ++p;
    if (p == end) break;
    int v = 0;
    auto [q, ec] = std::from_chars(p, end, v);
    if (ec != std::errc() || (q < end && *q != ' ')) {
      const char* tok_end = p;
      while (tok_end < end && *tok_end != ' ') ++tok_end;
      throw ParseError(line, "pixel " + std::to_string(count + 1) + " '" + std::string(p, tok_end) +
                                 "' is not an integer");
    }
    if (v < 0 || v > 255)
      throw ParseError(line, "pixel " + std::to_string(count + 1) + " value " + std::to_string(v) + " is outside 0-255");
    if (count < static_cast<std::size_t>(kFerPixels)) s.pixels[count] = static_cast<std::uint8_t>(v);
    ++count;
    p = q;
  }
  if (count != static_cast<std::size_t>(kFerPixels))
    throw ParseError(line, "expected 2304 pixels, found " + std::to_string(count));

  const std::string_view usage = unquote(cols[2]);
  if (usage == "Training") {
    s.split = Split::train;
  } else if (usage == "PublicTest") {
    s.split = Split::val;
  } else if (usage == "PrivateTest") {
    s.split = Split::test;
  } else {
    throw ParseError(line, "unknown Usage '" + std::string(usage) + "'");
  }
  return s;
}

}  // namespace

Dataset parse_fer_csv(std::istream& in) {
  Dataset ds;
  std::string row;
  std::size_t line = 0;
  if (!std::getline(in, row)) throw ParseError(1, "empty file (expected header emotion,pixels,Usage)");
  ++line;
  if (row.size() >= 3 && row.compare(0, 3, "\xEF\xBB\xBF") == 0) row.erase(0, 3);
  {
    std::string header;
    for (char c : row)
      if (c != ' ' && c != '\r' && c != '"') header.push_back(c);
    if (header != "emotion,pixels,Usage")
      throw ParseError(1, "header must be 'emotion,pixels,Usage', got '" + std::string(trim(row)) + "'");
  }
  while (std::getline(in, row)) {
    ++line;
    if (trim(row).empty()) continue;
    ds.add(parse_row(row, line));
  }
  return ds;
}

Dataset parse_fer_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
  return parse_fer_csv(in);
}

void write_fer_csv(const Dataset& ds, std::ostream& out) {
  out << "emotion,pixels,Usage\n";
  for (const auto& s : ds.samples()) {
    out << s.label << ',';
    for (int i = 0; i < kFerPixels; ++i) {
      if (i) out << ' ';
      out << static_cast<int>(s.pixels[static_cast<std::size_t>(i)]);
    }
    out << ',' << (s.split == Split::train ? "Training" : s.split == Split::val ? "PublicTest" : "PrivateTest")
        << '\n';
  }
}

void write_fer_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write dataset '" + path.string() + "'");
  write_fer_csv(ds, out);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::array<std::int64_t, kNumClasses> class_histogram(const Dataset& ds, Split split) {
  std::array<std::int64_t, kNumClasses> h{};
  for (auto i : ds.indices(split)) ++h[static_cast<std::size_t>(ds[i].label)];
  return h;
}

// ----------------------------------------------------------- preprocess

template <Scalar T>
void preprocess_into(const GrayImage& image, int side, std::span<T> out) {
  if (image.width < 1 || image.height < 1 ||
      image.pixels.size() != static_cast<std::size_t>(image.width) * image.height)
    throw ShapeError("preprocess: image buffer does not match its dimensions");
  if (side < 1) throw ConfigError("preprocess: target side must be positive");
  const std::size_t plane = static_cast<std::size_t>(side) * side;
  if (out.size() != 3 * plane) throw ShapeError("preprocess: output span has the wrong size");
  const std::vector<double> src(image.pixels.begin(), image.pixels.end());
  const auto resized = resize_bilinear(src, image.width, image.height, side, side);
  for (std::size_t i = 0; i < plane; ++i) {
    const T v = static_cast<T>((resized[i] / 255.0 - 0.5) / 0.5);
    out[i] = v;
    out[plane + i] = v;
    out[2 * plane + i] = v;
  }
}

template <Scalar T>
Tensor<T> preprocess(const GrayImage& image, int side) {
  std::vector<T> data(3 * static_cast<std::size_t>(side) * side);
  preprocess_into<T>(image, side, data);
  return Tensor<T>({1, 3, side, side}, std::move(data));
}

template void preprocess_into(const GrayImage&, int, std::span<float>);
template void preprocess_into(const GrayImage&, int, std::span<double>);
template Tensor<float> preprocess(const GrayImage&, int);
template Tensor<double> preprocess(const GrayImage&, int);

Sample augment(const Sample& s, Rng& rng) {
  GrayImage img = s.image();
  if (rng.bernoulli(0.5)) img = flip_horizontal(img);
  img = rotate(img, rng.uniform(-30.0, 30.0));
  Sample out = s;
  std::copy(img.pixels.begin(), img.pixels.end(), out.pixels.begin());
  return out;
}

// -------------------------------------------------------------- batches

template <Scalar T>
BatchIterator<T>::BatchIterator(const Dataset& ds, Split split, const BatchOptions& options)
    : ds_(&ds), opt_(options), order_(ds.indices(split)), aug_rng_(derive_seed(options.seed, 1)) {
  if (opt_.batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (opt_.image_side < 1) throw ConfigError("image side must be positive");
  if (opt_.shuffle) {
    Rng rng(derive_seed(options.seed, 0));
    rng.shuffle(std::span<std::size_t>(order_));
  }
}

template <Scalar T>
std::size_t BatchIterator<T>::batch_count() const noexcept {
  const auto b = static_cast<std::size_t>(opt_.batch_size);
  return (order_.size() + b - 1) / b;
}

template <Scalar T>
std::optional<Batch<T>> BatchIterator<T>::next() {
  if (pos_ >= order_.size()) return std::nullopt;
  const std::size_t n = std::min(order_.size() - pos_, static_cast<std::size_t>(opt_.batch_size));
  const std::size_t side = static_cast<std::size_t>(opt_.image_side);
  const std::size_t per = 3 * side * side;
  Batch<T> b;
  std::vector<T> data(n * per);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t idx = order_[pos_ + i];
    const Sample& s = (*ds_)[idx];
    const GrayImage img = opt_.augment ? augment(s, aug_rng_).image() : s.image();
    preprocess_into<T>(img, opt_.image_side, std::span<T>(data).subspan(i * per, per));
    b.labels.push_back(s.label);
    b.indices.push_back(idx);
  }
  b.images = Tensor<T>({static_cast<std::int64_t>(n), 3, opt_.image_side, opt_.image_side}, std::move(data));
  pos_ += n;
  return b;
}

template class BatchIterator<float>;
template class BatchIterator<double>;

// ------------------------------------------------------------ synthetic

Dataset make_synthetic(const SyntheticOptions& options) {
  if (options.train < 0 || options.val < 0 || options.test < 0)
    throw ConfigError("synthetic split sizes must be non-negative");
  Dataset ds;
  Rng rng(options.seed);
  const double centre = (kFerSide - 1) / 2.0;
  auto emit = [&](Split split, int count) {
    for (int i = 0; i < count; ++i) {
      Sample s;
      s.split = split;
      s.label = i % kNumClasses;
      const double radius = 4.0 + 3.0 * s.label + rng.uniform(-0.5, 0.5);
      const double cx = centre + rng.uniform(-1.0, 1.0);
      const double cy = centre + rng.uniform(-1.0, 1.0);
      for (int y = 0; y < kFerSide; ++y) {
        for (int x = 0; x < kFerSide; ++x) {
          const double d = std::hypot(x - cx, y - cy) - radius;
          // Soft-edged ring about 2.5 px wide on a dark background.
          const double ring = std::exp(-(d * d) / (2.0 * 1.2 * 1.2));
          const double v = 40.0 + 170.0 * ring + rng.normal() * 8.0;
          s.pixels[static_cast<std::size_t>(y) * kFerSide + x] =
              static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0));
        }
      }
      ds.add(s);
    }
  };
  emit(Split::train, options.train);
  emit(Split::val, options.val);
  emit(Split::test, options.test);
  return ds;
}

}  // namespace rmn
