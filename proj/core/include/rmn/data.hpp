#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string_view>
#include <vector>

#include "rmn/image.hpp"
#include "rmn/random.hpp"
#include "rmn/tensor.hpp"

namespace rmn {

inline constexpr int kNumClasses = 7;
inline constexpr int kFerSide = 48;
inline constexpr int kFerPixels = kFerSide * kFerSide;

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "Angry", "Disgust", "Fear", "Happy", "Sad", "Surprise", "Neutral"};

enum class Split { train, val, test };

std::string_view to_string(Split split);
// Accepts "train", "val", "test".
Split parse_split(std::string_view name);

struct Sample {
  std::array<std::uint8_t, kFerPixels> pixels{};
  int label = 0;
  Split split = Split::train;

  GrayImage image() const;
};

class Dataset {
 public:
  void add(const Sample& s);
  const std::vector<Sample>& samples() const noexcept { return samples_; }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  std::size_t size() const noexcept { return samples_.size(); }
  // Sample indices of one split, in file order.
  const std::vector<std::size_t>& indices(Split split) const;

 private:
  std::vector<Sample> samples_;
  std::array<std::vector<std::size_t>, 3> by_split_;
};

/// Parses the `emotion,pixels,Usage` CSV. Usage Training/PublicTest/
/// PrivateTest maps to train/val/test. Any malformed row raises ParseError
/// carrying its 1-based line number.
Dataset parse_fer_csv(const std::filesystem::path& path);
Dataset parse_fer_csv(std::istream& in);

void write_fer_csv(const Dataset& ds, const std::filesystem::path& path);
void write_fer_csv(const Dataset& ds, std::ostream& out);

std::array<std::int64_t, kNumClasses> class_histogram(const Dataset& ds, Split split);

/// Resizes to side x side (bilinear, half-pixel centres), replicates the
/// grey channel three times and maps 0-255 to [-1, 1] via (x/255 - 0.5)/0.5.
/// Writes 3*side*side values.
template <Scalar T>
void preprocess_into(const GrayImage& image, int side, std::span<T> out);

template <Scalar T>
Tensor<T> preprocess(const GrayImage& image, int side = 224);

template <Scalar T>
Tensor<T> preprocess(const Sample& s, int side = 224) {
  return preprocess<T>(s.image(), side);
}

// Horizontal flip with probability 0.5, then rotation by an angle uniform in
// [-30, 30] degrees. Label and split are kept.
Sample augment(const Sample& s, Rng& rng);

struct BatchOptions {
  int batch_size = 48;
  bool shuffle = true;
  std::uint64_t seed = 0;
  bool augment = false;
  int image_side = 224;
};

template <Scalar T>
struct Batch {
  Tensor<T> images;  // [N x 3 x side x side]
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

/// One pass over a split. The order is a seeded Fisher-Yates shuffle (or
/// file order without shuffling); the final short batch is included.
template <Scalar T>
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, Split split, const BatchOptions& options);

  std::optional<Batch<T>> next();
  std::size_t batch_count() const noexcept;
  const std::vector<std::size_t>& order() const noexcept { return order_; }

 private:
  const Dataset* ds_;
  BatchOptions opt_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng aug_rng_;
};

template <Scalar T>
BatchIterator<T> batch_iter(const Dataset& ds, Split split, const BatchOptions& options) {
  return BatchIterator<T>(ds, split, options);
}

struct SyntheticOptions {
  int train = 64;
  int val = 0;
  int test = 0;
  std::uint64_t seed = 0;
};

/// Seeded 7-class toy set: class k is a bright ring of radius 4 + 3k centred
/// on the image, with small centre and radius jitter and pixel noise. Ring
/// classes survive the flips and rotations used for augmentation. Labels
/// cycle 0..6 within each split.
Dataset make_synthetic(const SyntheticOptions& options);

extern template class BatchIterator<float>;
extern template class BatchIterator<double>;

}  // namespace rmn
