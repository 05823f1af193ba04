#include <gtest/gtest.h>

#include <numeric>

#include "rmn/eval.hpp"
#include "rmn/ops.hpp"
#include "rmn/random.hpp"

namespace rmn {
namespace {

TEST(Accuracy, Examples) {
  const std::vector<int> a{0, 1, 2, 3, 4, 5, 6};
  EXPECT_EQ(accuracy(a, a), 1.0);
  EXPECT_DOUBLE_EQ(accuracy(std::vector<int>{0, 1, 3}, std::vector<int>{0, 1, 2}), 2.0 / 3.0);
  EXPECT_THROW(accuracy(std::vector<int>{}, std::vector<int>{}), ContractError);
  EXPECT_THROW(accuracy(std::vector<int>{1}, std::vector<int>{1, 2}), ContractError);
}

TEST(Accuracy, MajorityClassBaseline) {
  // Always answering the largest class of a 3589-sample split with 879 members.
  std::vector<int> labels(3589, 0);
  std::fill(labels.begin(), labels.begin() + 879, 3);
  const std::vector<int> preds(labels.size(), 3);
  EXPECT_NEAR(accuracy(preds, labels), 0.2449, 5e-5);
}

TEST(Confusion, PerfectPredictionsAreDiagonal) {
  std::vector<int> labels;
  for (int k = 0; k < kNumClasses; ++k) labels.insert(labels.end(), static_cast<std::size_t>(k + 1), k);
  const ConfusionMatrix cm(labels, labels);
  for (int r = 0; r < kNumClasses; ++r)
    for (int c = 0; c < kNumClasses; ++c) EXPECT_EQ(cm.at(r, c), r == c ? r + 1 : 0);
  EXPECT_EQ(cm.trace(), cm.total());
}

TEST(Confusion, RowIsTruthColumnIsPrediction) {
  const ConfusionMatrix cm(std::vector<int>{5}, std::vector<int>{3});
  EXPECT_EQ(cm.at(3, 5), 1);
  EXPECT_EQ(cm.at(5, 3), 0);
  EXPECT_EQ(cm.total(), 1);
}

TEST(Confusion, TraceOverTotalIsAccuracy) {
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(1 + rng.below(60));
    std::vector<int> p(n), l(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<int>(rng.below(7));
      l[i] = static_cast<int>(rng.below(7));
    }
    const ConfusionMatrix cm(p, l);
    ASSERT_EQ(static_cast<double>(cm.trace()) / static_cast<double>(cm.total()), accuracy(p, l));
    for (int r = 0; r < kNumClasses; ++r) {
      std::int64_t row = 0;
      for (int c = 0; c < kNumClasses; ++c) row += cm.at(r, c);
      ASSERT_EQ(row, std::count(l.begin(), l.end(), r));
    }
  }
}

TEST(Confusion, RejectsUnknownClasses) {
  ConfusionMatrix cm;
  EXPECT_THROW(cm.add(7, 0), LabelError);
  EXPECT_THROW(cm.add(0, -1), LabelError);
}

TEST(Confusion, CsvLayout) {
  ConfusionMatrix cm;
  cm.add(0, 1);
  const std::string csv = cm.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "true\\predicted,Angry,Disgust,Fear,Happy,Sad,Surprise,Neutral");
  EXPECT_NE(csv.find("\nAngry,0,1,0,0,0,0,0\n"), std::string::npos);
  const auto norm = cm.row_normalized();
  EXPECT_EQ(norm[0][1], 1.0);
  EXPECT_EQ(norm[2][2], 0.0);
}

TEST(Ensemble, TwoModelMean) {
  const std::vector<Tensor<double>> p{Tensor<double>({1, 2}, {0.6, 0.4}), Tensor<double>({1, 2}, {0.2, 0.8})};
  const auto m = average_probabilities<double>(p);
  EXPECT_NEAR(m[0], 0.4, 1e-15);
  EXPECT_NEAR(m[1], 0.6, 1e-15);
}

TEST(Ensemble, IdenticalInputsAreReturnedExactly) {
  const auto one = softmax(Tensor<float>::create({5, 7}, init::Uniform{3, -4, 4}));
  for (std::size_t k : {1u, 2u, 3u, 5u, 7u, 10u}) {
    const std::vector<Tensor<float>> copies(k, one);
    EXPECT_TRUE(bit_equal(average_probabilities<float>(copies), one)) << k;
  }
}

TEST(Ensemble, RowsStayNormalizedAndDominanceWins) {
  std::vector<Tensor<double>> p;
  for (std::uint64_t s = 0; s < 4; ++s) p.push_back(softmax(Tensor<double>::create({6, 7}, init::Uniform{s, -3, 3})));
  const auto m = average_probabilities<double>(p);
  for (int r = 0; r < 6; ++r) {
    double sum = 0;
    for (int c = 0; c < 7; ++c) sum += m[static_cast<std::size_t>(r * 7 + c)];
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
  // Class 2 dominates every model's output.
  std::vector<Tensor<double>> dom;
  for (std::uint64_t s = 0; s < 3; ++s) {
    auto logits = Tensor<double>::create({1, 7}, init::Uniform{s, -1, 1});
    logits.mutable_data()[2] = 10.0;
    dom.push_back(softmax(logits));
  }
  const auto avg = average_probabilities<double>(dom);
  EXPECT_EQ(std::max_element(avg.data().begin(), avg.data().end()) - avg.data().begin(), 2);
  EXPECT_THROW(average_probabilities<double>(std::vector<Tensor<double>>{}), ContractError);
}

TEST(Ensemble, CopiesOfOneModelMatchTheModel) {
  auto net = build_network<float>(NetworkSpec::mini(), 8);
  auto twin = net.clone();
  const auto x = Tensor<float>::create({2, 3, 64, 64}, init::Uniform{1, -1, 1});
  std::vector<Network<float>*> models{&net, &twin, &net};
  const auto single = softmax(net.forward(x, Mode::eval));
  EXPECT_TRUE(bit_equal(ensemble_predict<float>(models, x), single));
}

TEST(PredictSplit, FileOrderAndProbabilities) {
  const Dataset ds = make_synthetic({0, 10, 0, 4});
  auto net = build_network<float>(NetworkSpec::mini(), 2);
  const auto a = predict_split(net, ds, Split::val, 3, true);
  const auto b = predict_split(net, ds, Split::val, 10, false);
  EXPECT_EQ(a.preds, b.preds);
  ASSERT_EQ(a.probabilities.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(a.labels[i], ds[ds.indices(Split::val)[i]].label);
    EXPECT_NEAR(std::accumulate(a.probabilities[i].begin(), a.probabilities[i].end(), 0.0), 1.0, 1e-5);
  }
}

class GradCamTest : public ::testing::Test {
 protected:
  static Tensor<double> image() {
    const Dataset ds = make_synthetic({1, 0, 0, 12});
    return preprocess<double>(ds[0], 64);
  }
};

TEST_F(GradCamTest, MiniMapShapeAndRange) {
  auto net = build_network<double>(NetworkSpec::mini(), 5);
  const auto map = grad_cam(net, image(), 3);
  EXPECT_EQ(map.height, 2);
  EXPECT_EQ(map.width, 2);
  EXPECT_EQ(map.layer, "stage4.residual.block2.conv2");
  double peak = 0;
  for (double v : map.values) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    peak = std::max(peak, v);
  }
  EXPECT_TRUE(peak == 0.0 || peak == 1.0);
}

TEST_F(GradCamTest, ZeroedClassRowGivesZeroMap) {
  auto net = build_network<double>(NetworkSpec::mini(), 5);
  auto w = net.fc_weight().mutable_data();
  const std::size_t in = w.size() / kNumClasses;
  std::fill(w.begin() + 4 * static_cast<std::ptrdiff_t>(in), w.begin() + 5 * static_cast<std::ptrdiff_t>(in), 0.0);
  const auto map = grad_cam(net, image(), 4);
  for (double v : map.values) EXPECT_EQ(v, 0.0);
}

TEST_F(GradCamTest, OtherClassBiasesDoNotMatter) {
  auto net = build_network<double>(NetworkSpec::mini(), 6);
  const auto x = image();
  const auto before = grad_cam(net, x, 1);
  auto b = net.fc_bias().mutable_data();
  for (std::size_t k = 0; k < b.size(); ++k)
    if (k != 1) b[k] += 3.0 * static_cast<double>(k);
  const auto after = grad_cam(net, x, 1);
  EXPECT_EQ(before.values, after.values);
}

// Channel weights from central differences of the logit when a whole channel
// of the activation is shifted, instead of from the tape.
TEST_F(GradCamTest, MatchesFiniteDifferenceWeights) {
  auto net = build_network<double>(NetworkSpec::mini(), 7);
  const auto x = image();
  const std::string layer = "stage4.residual.block2.conv2";
  const int cls = 2;
  Tensor<double> activation;
  int shift_channel = -1;
  double shift = 0.0;
  LayerHook<double> hook = [&](const std::string& name, const Tensor<double>& v) {
    if (name != layer) return v;
    activation = v;
    if (shift_channel < 0) return v;
    std::vector<double> d(v.data().begin(), v.data().end());
    const std::size_t plane = static_cast<std::size_t>(v.dim(2) * v.dim(3));
    for (std::size_t i = 0; i < plane; ++i) d[static_cast<std::size_t>(shift_channel) * plane + i] += shift;
    return Tensor<double>(v.shape(), std::move(d));
  };
  auto logit = [&] { return net.forward(x, Mode::eval, &hook)[static_cast<std::size_t>(cls)]; };
  logit();
  const Tensor<double> a = activation;
  const auto channels = a.dim(1);
  const std::size_t plane = static_cast<std::size_t>(a.dim(2) * a.dim(3));
  const double h = 1e-6;
  std::vector<double> ref(plane, 0.0);
  for (std::int64_t c = 0; c < channels; ++c) {
    shift_channel = static_cast<int>(c);
    shift = h;
    const double up = logit();
    shift = -h;
    const double down = logit();
    const double weight = (up - down) / (2 * h) / static_cast<double>(plane);
    for (std::size_t i = 0; i < plane; ++i) ref[i] += weight * a[static_cast<std::size_t>(c) * plane + i];
  }
  double peak = 0;
  for (double& v : ref) peak = std::max(peak, v = std::max(v, 0.0));
  ASSERT_GT(peak, 0.0);
  const auto map = grad_cam(net, x, cls, layer);
  for (std::size_t i = 0; i < plane; ++i) EXPECT_NEAR(map.values[i], ref[i] / peak, 1e-5) << i;
}

TEST_F(GradCamTest, EarlierLayersGiveLargerMaps) {
  auto net = build_network<float>(NetworkSpec::mini(), 5);
  const auto map = grad_cam(net, image().cast<float>(), 0, "stage2.fused");
  EXPECT_EQ(map.height, 8);
  EXPECT_EQ(map.width, 8);
}

TEST_F(GradCamTest, ArgumentErrors) {
  auto net = build_network<float>(NetworkSpec::mini(), 5);
  const auto x = image().cast<float>();
  try {
    grad_cam(net, x, 9);
    FAIL();
  } catch (const LabelError& e) {
    EXPECT_NE(std::string(e.what()).find("valid classes are 0-6"), std::string::npos);
  }
  try {
    grad_cam(net, x, 0, "stage9.nothing");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("stage4.residual.block2.conv2"), std::string::npos);
  }
}

TEST(Heatmap, Blending) {
  GrayImage base{4, 3, std::vector<std::uint8_t>(12, 200)};
  base.pixels[5] = 51;
  GradCamMap zero{std::vector<double>(4, 0.0), 2, 2, "x", 0};
  const auto dim = render_heatmap(zero, base);
  ASSERT_EQ(dim.width, 4);
  ASSERT_EQ(dim.height, 3);
  EXPECT_EQ(dim.pixels[0], 100);
  EXPECT_EQ(dim.pixels[1], 100);
  EXPECT_EQ(dim.pixels[15], 26);  // 25.5, ties to even
  GradCamMap full{std::vector<double>(4, 1.0), 2, 2, "x", 0};
  const auto hot = render_heatmap(full, base);
  EXPECT_EQ(hot.pixels[0], 228);  // 100 + 127.5, ties to even
  EXPECT_EQ(hot.pixels[1], 100);
  EXPECT_EQ(hot.pixels[2], 100);
}

}  // namespace
}  // namespace rmn
