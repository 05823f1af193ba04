#include "rmn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "rmn/ops.hpp"
#include "rmn/tape.hpp"

namespace rmn {

double accuracy(std::span<const int> preds, std::span<const int> labels) {
  if (preds.empty()) throw ContractError("accuracy: no predictions");
  if (preds.size() != labels.size()) {
    throw ContractError("accuracy: " + std::to_string(preds.size()) + " predictions for " +
                        std::to_string(labels.size()) + " labels");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

// ------------------------------------------------------------ confusion

ConfusionMatrix::ConfusionMatrix(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw ContractError("confusion: predictions and labels differ in length");
  for (std::size_t i = 0; i < preds.size(); ++i) add(labels[i], preds[i]);
}

void ConfusionMatrix::add(int truth, int predicted) {
  for (int v : {truth, predicted}) {
    if (v < 0 || v >= kNumClasses) throw LabelError("confusion: class " + std::to_string(v) + " is outside 0-6");
  }
  ++counts_[static_cast<std::size_t>(truth)][static_cast<std::size_t>(predicted)];
}

std::int64_t ConfusionMatrix::at(int truth, int predicted) const {
  return counts_.at(static_cast<std::size_t>(truth)).at(static_cast<std::size_t>(predicted));
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t n = 0;
  for (const auto& row : counts_)
    for (auto c : row) n += c;
  return n;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t n = 0;
  for (std::size_t k = 0; k < counts_.size(); ++k) n += counts_[k][k];
  return n;
}

std::array<std::array<double, kNumClasses>, kNumClasses> ConfusionMatrix::row_normalized() const {
  std::array<std::array<double, kNumClasses>, kNumClasses> out{};
  for (std::size_t r = 0; r < counts_.size(); ++r) {
    std::int64_t sum = 0;
    for (auto c : counts_[r]) sum += c;
    if (sum == 0) continue;
    for (std::size_t c = 0; c < counts_[r].size(); ++c)
      out[r][c] = static_cast<double>(counts_[r][c]) / static_cast<double>(sum);
  }
  return out;
}

std::string ConfusionMatrix::to_csv() const {
  std::ostringstream os;
  os << "true\\predicted";
  for (auto name : kClassNames) os << ',' << name;
  os << '\n';
  for (std::size_t r = 0; r < counts_.size(); ++r) {
    os << kClassNames[r];
    for (auto c : counts_[r]) os << ',' << c;
    os << '\n';
  }
  return os.str();
}

std::string ConfusionMatrix::to_text() const {
  const auto norm = row_normalized();
  std::ostringstream os;
  os << std::left << std::setw(10) << "true\\pred";
  for (auto name : kClassNames) os << std::right << std::setw(10) << name;
  os << '\n';
  for (std::size_t r = 0; r < counts_.size(); ++r) {
    os << std::left << std::setw(10) << kClassNames[r];
    for (std::size_t c = 0; c < counts_[r].size(); ++c) {
      std::ostringstream cell;
      cell << counts_[r][c] << " (" << std::fixed << std::setprecision(2) << norm[r][c] << ")";
      os << std::right << std::setw(10) << cell.str();
    }
    os << '\n';
  }
  return os.str();
}

// ----------------------------------------------------------- prediction

namespace {

template <Scalar T>
int argmax_row(std::span<const T> row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

template <Scalar T>
SplitPredictions predict_split(Network<T>& net, const Dataset& ds, Split split, int batch_size,
                               bool keep_probabilities) {
  BatchOptions opt;
  opt.batch_size = batch_size;
  opt.shuffle = false;
  opt.image_side = net.spec().input_size;
  SplitPredictions out;
  auto it = batch_iter<T>(ds, split, opt);
  while (auto b = it.next()) {
    const Tensor<T> logits = net.forward(b->images, Mode::eval);
    const std::int64_t k = logits.dim(1);
    const Tensor<T> probs = keep_probabilities ? softmax(logits) : Tensor<T>();
    for (std::size_t i = 0; i < b->labels.size(); ++i) {
      out.preds.push_back(argmax_row(logits.data().subspan(i * static_cast<std::size_t>(k), static_cast<std::size_t>(k))));
      out.labels.push_back(b->labels[i]);
      if (keep_probabilities) {
        auto row = probs.data().subspan(i * static_cast<std::size_t>(k), static_cast<std::size_t>(k));
        out.probabilities.emplace_back(row.begin(), row.end());
      }
    }
  }
  return out;
}

template <Scalar T>
Tensor<T> average_probabilities(std::span<const Tensor<T>> probs) {
  if (probs.empty()) throw ContractError("ensemble: no models given");
  std::vector<T> mean(probs[0].data().begin(), probs[0].data().end());
  for (std::size_t m = 1; m < probs.size(); ++m) {
    if (probs[m].shape() != probs[0].shape())
      throw ShapeError("ensemble: model " + std::to_string(m) + " output shape differs");
    // Running mean; stays exactly equal to the inputs when they are identical.
    const T inv = T(1) / static_cast<T>(m + 1);
    const auto d = probs[m].data();
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (d[i] - mean[i]) * inv;
  }
  return Tensor<T>(probs[0].shape(), std::move(mean));
}

template <Scalar T>
Tensor<T> ensemble_predict(std::span<Network<T>* const> models, const Tensor<T>& input) {
  if (models.empty()) throw ContractError("ensemble: no models given");
  std::vector<Tensor<T>> probs;
  for (auto* m : models) probs.push_back(softmax(m->forward(input, Mode::eval)));
  return average_probabilities<T>(probs);
}

// --------------------------------------------------------------- Grad-CAM

template <Scalar T>
GradCamMap grad_cam(Network<T>& net, const Tensor<T>& image, int target_class, const std::string& layer) {
  const int classes = net.spec().num_classes;
  if (target_class < 0 || target_class >= classes) {
    throw LabelError("class " + std::to_string(target_class) + " is out of range; valid classes are 0-" +
                     std::to_string(classes - 1));
  }
  if (image.rank() != 4 || image.dim(0) != 1) throw ShapeError("grad-cam expects one image [1 x C x H x W]");
  const std::string target = layer.empty() ? net.default_cam_layer() : layer;
  const auto names = net.layer_names();
  if (std::find(names.begin(), names.end(), target) == names.end()) {
    std::string valid;
    for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown layer '" + target + "'; valid targets: " + valid);
  }

  Tape<T> tape;
  Tensor<T> activation;
  LayerHook<T> hook = [&](const std::string& name, const Tensor<T>& v) {
    if (name == target) {
      activation = v;
      tape.watch(v);
    }
    return v;
  };
  const Tensor<T> logits = net.forward(image, Mode::eval, &hook);
  std::vector<T> pick(static_cast<std::size_t>(classes), T(0));
  pick[static_cast<std::size_t>(target_class)] = T(1);
  const Tensor<T> score = sum(mul(logits, Tensor<T>({1, classes}, std::move(pick))));
  const GradMap<T> grads = tape.backward(score);

  const std::int64_t c = activation.dim(1), h = activation.dim(2), w = activation.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h * w);
  GradCamMap out;
  out.height = static_cast<int>(h);
  out.width = static_cast<int>(w);
  out.layer = target;
  out.target_class = target_class;
  out.values.assign(plane, 0.0);
  const auto a = activation.data();
  // No gradient reaches the activation when nothing downstream depends on it.
  if (grads.contains(activation)) {
    const auto g = grads[activation].data();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const std::size_t base = static_cast<std::size_t>(ch) * plane;
      double weight = 0.0;
      for (std::size_t i = 0; i < plane; ++i) weight += static_cast<double>(g[base + i]);
      weight /= static_cast<double>(plane);
      if (weight == 0.0) continue;
      for (std::size_t i = 0; i < plane; ++i) out.values[i] += weight * static_cast<double>(a[base + i]);
    }
  }
  double peak = 0.0;
  for (double& v : out.values) {
    v = std::max(v, 0.0);
    peak = std::max(peak, v);
  }
  if (peak > 0.0) {
    for (double& v : out.values) v /= peak;
  }
  return out;
}

RgbImage render_heatmap(const GradCamMap& map, const GrayImage& base) {
  if (map.values.size() != static_cast<std::size_t>(map.width) * map.height || map.values.empty())
    throw ShapeError("heatmap values do not match their dimensions");
  const auto up = resize_bilinear(map.values, map.width, map.height, base.width, base.height);
  RgbImage out{base.width, base.height, std::vector<std::uint8_t>(base.pixels.size() * 3)};
  auto byte = [](double v) { return static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0)); };
  for (std::size_t i = 0; i < base.pixels.size(); ++i) {
    const double dim = 0.5 * base.pixels[i];
    out.pixels[3 * i] = byte(dim + 0.5 * 255.0 * std::clamp(up[i], 0.0, 1.0));
    out.pixels[3 * i + 1] = byte(dim);
    out.pixels[3 * i + 2] = byte(dim);
  }
  return out;
}

template SplitPredictions predict_split(Network<float>&, const Dataset&, Split, int, bool);
template SplitPredictions predict_split(Network<double>&, const Dataset&, Split, int, bool);
template Tensor<float> average_probabilities(std::span<const Tensor<float>>);
template Tensor<double> average_probabilities(std::span<const Tensor<double>>);
template Tensor<float> ensemble_predict(std::span<Network<float>* const>, const Tensor<float>&);
template Tensor<double> ensemble_predict(std::span<Network<double>* const>, const Tensor<double>&);
template GradCamMap grad_cam(Network<float>&, const Tensor<float>&, int, const std::string&);
template GradCamMap grad_cam(Network<double>&, const Tensor<double>&, int, const std::string&);

}  // namespace rmn
