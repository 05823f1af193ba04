#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rmn/data.hpp"
#include "rmn/network.hpp"

namespace rmn {

// (#correct) / N. Throws ContractError on empty or mismatched input.
double accuracy(std::span<const int> preds, std::span<const int> labels);

class ConfusionMatrix {
 public:
  using Grid = std::array<std::array<std::int64_t, kNumClasses>, kNumClasses>;

  ConfusionMatrix() = default;
  // Rows are true labels, columns are predictions. LabelError on a class outside 0-6.
  ConfusionMatrix(std::span<const int> preds, std::span<const int> labels);

  void add(int truth, int predicted);
  std::int64_t at(int truth, int predicted) const;
  std::int64_t total() const;
  std::int64_t trace() const;
  const Grid& counts() const noexcept { return counts_; }

  // Each non-empty row divided by its sum (per-class recall on the diagonal).
  std::array<std::array<double, kNumClasses>, kNumClasses> row_normalized() const;

  // Header "true\predicted,Angry,...,Neutral" then one row per true class.
  std::string to_csv() const;
  std::string to_text() const;

 private:
  Grid counts_{};
};

struct SplitPredictions {
  std::vector<int> preds;
  std::vector<int> labels;
  std::vector<std::vector<double>> probabilities;  // filled when requested
};

// Eval-mode predictions over one split in file order, without augmentation.
template <Scalar T>
SplitPredictions predict_split(Network<T>& net, const Dataset& ds, Split split, int batch_size = 48,
                               bool keep_probabilities = false);

// Element-wise mean of equally shaped probability tensors, kept exact when
// all inputs are identical.
template <Scalar T>
Tensor<T> average_probabilities(std::span<const Tensor<T>> probs);

/// Mean of the models' softmax outputs, [N x classes]. Every model sees the
/// same input in eval mode.
template <Scalar T>
Tensor<T> ensemble_predict(std::span<Network<T>* const> models, const Tensor<T>& input);

struct GradCamMap {
  std::vector<double> values;  // height x width, row-major, in [0, 1]
  int height = 0;
  int width = 0;
  std::string layer;
  int target_class = 0;
};

/// Gradient-weighted class activation map for one image [1 x C x H x W].
/// Channel weights are spatial means of d logit[class] / d activation; the
/// map is ReLU of the weighted channel sum, divided by its maximum. An
/// all-zero map stays zero. An empty layer name picks the last
/// convolution of the final stage.
template <Scalar T>
GradCamMap grad_cam(Network<T>& net, const Tensor<T>& image, int target_class,
                    const std::string& layer = "");

/// Blends the upscaled map over a grey image as a red overlay:
/// out = 0.5 * base + 0.5 * (255 * m, 0, 0).
RgbImage render_heatmap(const GradCamMap& map, const GrayImage& base);

extern template SplitPredictions predict_split(Network<float>&, const Dataset&, Split, int, bool);
extern template SplitPredictions predict_split(Network<double>&, const Dataset&, Split, int, bool);
extern template Tensor<float> average_probabilities(std::span<const Tensor<float>>);
extern template Tensor<double> average_probabilities(std::span<const Tensor<double>>);
extern template Tensor<float> ensemble_predict(std::span<Network<float>* const>, const Tensor<float>&);
extern template Tensor<double> ensemble_predict(std::span<Network<double>* const>, const Tensor<double>&);
extern template GradCamMap grad_cam(Network<float>&, const Tensor<float>&, int, const std::string&);
extern template GradCamMap grad_cam(Network<double>&, const Tensor<double>&, int, const std::string&);

}  // namespace rmn
