// End-to-end acceptance run: one PASS/FAIL/SKIP line per criterion.
// Exit status is non-zero when any criterion fails.
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "oracles/reference_ops.hpp"
#include "rmn/checkpoint.hpp"
#include "rmn/eval.hpp"
#include "rmn/grad_check.hpp"
#include "rmn/nn_ops.hpp"
#include "rmn/ops.hpp"
#include "rmn/training.hpp"

namespace fs = std::filesystem;
using namespace rmn;

namespace {

using Clock = std::chrono::steady_clock;
using TD = Tensor<double>;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

enum class Status { pass, fail, skip };

struct Outcome {
  Status status = Status::pass;
  std::string detail;
};

// Collects the first failure; later checks still run so the detail is complete.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && first_failure_.empty()) first_failure_ = what;
  }
  void note(const std::string& s) { notes_ += (notes_.empty() ? "" : "; ") + s; }
  Outcome outcome() const {
    if (!first_failure_.empty()) return {Status::fail, first_failure_ + (notes_.empty() ? "" : " | " + notes_)};
    return {Status::pass, notes_};
  }

 private:
  std::string first_failure_;
  std::string notes_;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

std::string shape_str(const Shape& s) {
  std::string out;
  for (std::size_t i = 1; i < s.size(); ++i) out += (i > 1 ? "x" : "") + std::to_string(s[i]);
  return out;
}

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / ("rmn_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir;
}

// Shared default network; building it dominates several criteria.
Network<float>& default_net() {
  static Network<float> net = build_network<float>(NetworkSpec::resmasking(), 2024);
  return net;
}

Tensor<float> face_like_input(int side, std::uint64_t seed) {
  const Dataset ds = make_synthetic({1, 0, 0, seed});
  return preprocess<float>(ds[0], side);
}

// ---------------------------------------------------------------- 1

Outcome shape_conformance() {
  Checks c;
  auto& net = default_net();
  std::map<std::string, Shape> seen;
  LayerHook<float> hook = [&](const std::string& name, const Tensor<float>& v) {
    seen[name] = v.shape();
    return v;
  };
  const auto t0 = Clock::now();
  net.forward(face_like_input(224, 1), Mode::eval, &hook);
  const double secs = seconds_since(t0);
  const std::vector<std::pair<std::string, std::string>> expected{
      {"stem", "64x112x112"},       {"maxpool", "64x56x56"},      {"stage1.fused", "64x56x56"},
      {"stage2.fused", "128x28x28"}, {"stage3.fused", "256x14x14"}, {"stage4.fused", "512x7x7"},
      {"avgpool", "512x1x1"},       {"logits", "7"}};
  int matched = 0;
  for (const auto& [tap, want] : expected) {
    const auto it = seen.find(tap);
    const std::string got = it == seen.end() ? "missing" : shape_str(it->second);
    c.expect(got == want, tap + " is " + got + ", expected " + want);
    matched += got == want;
  }
  // The printed layer table must agree with the traced shapes.
  const auto rows = net.describe();
  const std::vector<std::string> table{"64x112x112", "64x56x56", "64x56x56", "128x28x28",
                                       "256x14x14",  "512x7x7",  "512x1x1",  "7"};
  c.expect(rows.size() == table.size(), "describe() has " + std::to_string(rows.size()) + " rows");
  for (std::size_t i = 0; i < std::min(rows.size(), table.size()); ++i)
    c.expect(rows[i].output == table[i], rows[i].layer + " reports " + rows[i].output);
  c.expect(secs < 60.0, "forward took " + fmt(secs) + " s");
  c.note(std::to_string(matched) + "/8 checkpoints match, forward " + fmt(secs, 3) + " s");
  return c.outcome();
}

// ---------------------------------------------------------------- 2

Outcome fusion_identities() {
  Checks c;
  auto net = build_network<double>(NetworkSpec::mini(), 7);
  const auto x = face_like_input(64, 2).cast<double>();
  for (double forced : {0.0, 1.0}) {
    std::map<std::string, TD> taps;
    LayerHook<double> hook = [&](const std::string& name, const TD& v) {
      if (name.ends_with(".mask")) return TD::full(v.shape(), forced);
      taps[name] = v;
      return v;
    };
    net.forward(x, Mode::eval, &hook);
    for (int s = 1; s <= 4; ++s) {
      const std::string p = "stage" + std::to_string(s);
      const auto r = taps.at(p + ".residual").data();
      const auto f = taps.at(p + ".fused").data();
      bool ok = r.size() == f.size();
      for (std::size_t i = 0; ok && i < r.size(); ++i) {
        if (forced == 0.0) {
          ok = std::memcmp(&r[i], &f[i], sizeof(double)) == 0;
        } else {
          const double want = 2.0 * r[i];
          ok = f[i] == want || std::abs(f[i] - want) <= std::abs(std::nextafter(want, 0.0) - want);
        }
      }
      c.expect(ok, p + (forced == 0.0 ? ": F_M=0 does not give F_N == F_R" : ": F_M=1 does not give F_N == 2 F_R"));
    }
  }

  // Mask range over random parameterizations, including heavily scaled
  // head weights that drive the sigmoid into saturation.
  Rng rng(99);
  double lo = 1.0, hi = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto m = build_network<float>(NetworkSpec::mini(), 1000 + seed);
    const float gain = static_cast<float>(std::pow(10.0, rng.uniform(-1.0, 2.0)));
    for (auto& st : m.stages()) {
      if (!st.has_mask()) continue;
      auto& head = st.mask().head().params();
      for (auto* t : {&head.weight, &head.bias})
        for (auto& v : t->mutable_data()) v *= gain;
    }
    LayerHook<float> hook = [&](const std::string& name, const Tensor<float>& v) {
      if (name.ends_with(".mask")) {
        for (float e : v.data()) {
          lo = std::min(lo, static_cast<double>(e));
          hi = std::max(hi, static_cast<double>(e));
        }
      }
      return v;
    };
    m.forward(face_like_input(64, seed), Mode::eval, &hook);
  }
  c.expect(lo >= 0.0 && hi <= 1.0, "mask left [0,1]: [" + fmt(lo) + ", " + fmt(hi) + "]");
  c.note("F_M=0 exact and F_M=1 within one ulp on 4 stages; mask range over 100 draws [" + fmt(lo, 3) + ", " +
         fmt(hi, 3) + "]");
  return c.outcome();
}

// ---------------------------------------------------------------- 3

TD rnd(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  return TD::create(std::move(s), init::Uniform{seed, lo, hi});
}

TD project(const TD& y, std::uint64_t seed) { return sum(mul(y, rnd(y.shape(), seed ^ 0x5A5A5A))); }

oracle::Conv2dCase random_conv(Rng& rng, std::int64_t max_hw) {
  for (;;) {
    oracle::Conv2dCase k{};
    k.n = 1 + rng.below(2);
    k.c = 1 + rng.below(3);
    k.h = 1 + rng.below(max_hw);
    k.w = 1 + rng.below(max_hw);
    k.out_ch = 1 + rng.below(4);
    k.kh = 1 + rng.below(4);
    k.kw = 1 + rng.below(4);
    k.stride = 1 + rng.below(3);
    k.padding = rng.below(3);
    k.bias = rng.bernoulli(0.5);
    if (k.h + 2 * k.padding >= k.kh && k.w + 2 * k.padding >= k.kw) return k;
  }
}

Outcome gradient_oracle() {
  Checks c;
  const auto t0 = Clock::now();
  constexpr int kConfigs = 50;
  std::map<std::string, double> worst;
  auto record = [&](const std::string& op, double err, double limit) {
    worst[op] = std::max(worst[op], err);
    c.expect(err < limit, op + " rel-err " + fmt(err) + " >= " + fmt(limit));
  };
  Rng rng(3);
  for (int t = 0; t < kConfigs; ++t) {
    const auto k = random_conv(rng, 6);
    Conv2dParams<double> p;
    p.weight = rnd({k.out_ch, k.c, k.kh, k.kw}, 10 * t + 1);
    if (k.bias) p.bias = rnd({k.out_ch}, 10 * t + 2);
    p.stride = k.stride;
    p.padding = k.padding;
    std::vector<TD> wrt{rnd({k.n, k.c, k.h, k.w}, 10 * t + 3), p.weight};
    if (k.bias) wrt.push_back(p.bias);
    record("conv2d", grad_check<double>([&] { return project(conv2d(wrt[0], p), t); }, wrt).max_rel_error, 1e-4);
  }
  for (int t = 0, done = 0; done < kConfigs; ++t) {
    const std::int64_t kk = 1 + rng.below(3), s = 1 + rng.below(3), pad = rng.below(kk);
    const std::int64_t h = 2 + rng.below(6), w = 2 + rng.below(6);
    if (h + 2 * pad < kk || w + 2 * pad < kk) continue;
    // Well-separated distinct values keep each window's argmax stable under the probe.
    std::vector<double> v(static_cast<std::size_t>(2 * h * w));
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.01 * static_cast<double>(i);
    rng.shuffle(std::span<double>(v));
    std::vector<TD> wrt{TD({1, 2, h, w}, v)};
    record("maxpool2d",
           grad_check<double>([&] { return project(maxpool2d(wrt[0], kk, s, pad), t); }, wrt).max_rel_error, 1e-4);
    ++done;
  }
  for (int t = 0; t < kConfigs; ++t) {
    std::vector<TD> wrt{rnd({1 + std::int64_t(rng.below(3)), 1 + std::int64_t(rng.below(4)),
                             1 + std::int64_t(rng.below(5)), 1 + std::int64_t(rng.below(5))},
                            100 + t)};
    record("global_avgpool",
           grad_check<double>([&] { return project(global_avgpool(wrt[0]), t); }, wrt).max_rel_error, 1e-4);
    const std::int64_t h = 1 + rng.below(4), w = 1 + rng.below(4);
    const std::int64_t th = h + rng.below(5), tw = w + rng.below(5);
    std::vector<TD> x{rnd({1, 2, h, w}, 200 + t)};
    record("upsample_to", grad_check<double>([&] { return project(upsample_to(x[0], th, tw), t); }, x).max_rel_error,
           1e-4);
  }
  for (int t = 0, done = 0; done < kConfigs; ++t) {
    const std::int64_t n = 1 + rng.below(3), ch = 1 + rng.below(3), h = 1 + rng.below(4), w = 1 + rng.below(4);
    if (n * h * w < 2) continue;
    BatchNorm2dParams<double> p{rnd({ch}, 300 + t, 0.5, 1.5), rnd({ch}, 400 + t), TD::zeros({ch}), TD::full({ch}, 1)};
    const Mode mode = done % 2 == 0 ? Mode::train : Mode::eval;
    std::vector<TD> wrt{rnd({n, ch, h, w}, 500 + t), p.gamma, p.beta};
    record("batchnorm2d",
           grad_check<double>([&] { return project(batchnorm2d(wrt[0], p, mode), t); }, wrt).max_rel_error, 1e-3);
    ++done;
  }
  for (int t = 0; t < kConfigs; ++t) {
    std::vector<TD> x{rnd({3, 5}, 600 + t, -4, 4)};
    for (auto& v : x[0].mutable_data())
      if (std::abs(v) < 1e-3) v = 0.5;  // keep ReLU probes off the kink
    record("relu", grad_check<double>([&] { return project(relu(x[0]), t); }, x).max_rel_error, 1e-4);
    record("sigmoid", grad_check<double>([&] { return project(sigmoid(x[0]), t); }, x).max_rel_error, 1e-4);
    record("softmax", grad_check<double>([&] { return project(softmax(x[0]), t); }, x).max_rel_error, 1e-4);

    const std::int64_t n = 1 + rng.below(5), classes = 2 + rng.below(7);
    std::vector<int> ys(static_cast<std::size_t>(n));
    for (auto& y : ys) y = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
    std::vector<TD> z{rnd({n, classes}, 700 + t, -5, 5)};
    record("cross_entropy", grad_check<double>([&] { return cross_entropy(z[0], ys); }, z).max_rel_error, 1e-4);

    const std::int64_t bn = 1 + rng.below(2), h = 1 + rng.below(3), w = 1 + rng.below(3);
    std::vector<TD> parts{rnd({bn, 1 + std::int64_t(rng.below(3)), h, w}, 800 + t),
                          rnd({bn, 1 + std::int64_t(rng.below(3)), h, w}, 900 + t)};
    record("concat_channels",
           grad_check<double>([&] { return project(concat_channels(parts[0], parts[1]), t); }, parts).max_rel_error,
           1e-4);

    const std::int64_t rows = 1 + rng.below(4), in = 1 + rng.below(6), out = 1 + rng.below(7);
    std::vector<TD> lin{rnd({rows, in}, 1000 + t), rnd({out, in}, 1100 + t), rnd({out}, 1200 + t)};
    record("linear", grad_check<double>([&] { return project(linear(lin[0], lin[1], lin[2]), t); }, lin).max_rel_error,
           1e-4);

    std::vector<TD> ab{rnd({2, 3}, 1300 + t), rnd({2, 3}, 1400 + t), rnd({3, 4}, 1500 + t)};
    record("add", grad_check<double>([&] { return project(add(ab[0], ab[1]), t); }, ab).max_rel_error, 1e-4);
    record("mul", grad_check<double>([&] { return project(mul(ab[0], ab[1]), t); }, ab).max_rel_error, 1e-4);
    record("matmul", grad_check<double>([&] { return project(matmul(ab[0], ab[2]), t); }, ab).max_rel_error, 1e-4);
  }

  // Whole miniature network on 3x64x64, train mode. Its loss has kinks
  // everywhere, so the probe step is small enough to stay on one piece.
  auto net = build_network<double>(NetworkSpec::mini(), 21);
  const auto x = TD::create({2, 3, 64, 64}, init::Uniform{9, -1, 1});
  const std::vector<int> labels{3, 5};
  std::vector<TD> wrt;
  for (const auto& e : net.state()) {
    // The stem bias is cancelled exactly by the following batch norm; its
    // gradient is zero and carries no relative-error signal.
    if (e.trainable && e.name != "stem.conv.bias") wrt.push_back(e.tensor);
  }
  GradCheckOptions opt;
  opt.step = 1e-6;
  opt.max_elements_per_tensor = 1;
  opt.seed = 5;
  const auto r = grad_check<double>(
      [&] { return cross_entropy(net.forward(x, Mode::train), std::span<const int>(labels)); }, wrt, opt);
  record("mini network", r.max_rel_error, 1e-3);

  const double secs = seconds_since(t0);
  c.expect(secs < 600.0, "suite took " + fmt(secs) + " s");
  std::string summary;
  for (const auto& [op, e] : worst) summary += (summary.empty() ? "" : ", ") + op + " " + fmt(e, 2);
  c.note(std::to_string(worst.size() - 1) + " ops x " + std::to_string(kConfigs) + " configs + mini network (" +
         std::to_string(wrt.size()) + " tensors) in " + fmt(secs, 3) + " s; worst: " + summary);
  return c.outcome();
}

// ---------------------------------------------------------------- 4

Outcome kernel_oracle() {
  Checks c;
  Rng rng(2024);
  int exact = 0;
  for (int t = 0; t < 200; ++t) {
    const auto k = random_conv(rng, 8);
    const auto x = rnd({k.n, k.c, k.h, k.w}, 7 * t + 1);
    Conv2dParams<double> p;
    p.weight = rnd({k.out_ch, k.c, k.kh, k.kw}, 7 * t + 2);
    if (k.bias) p.bias = rnd({k.out_ch}, 7 * t + 3);
    p.stride = k.stride;
    p.padding = k.padding;
    const auto y = conv2d(x, p);
    const std::vector<double> in(x.data().begin(), x.data().end()), w(p.weight.data().begin(), p.weight.data().end());
    const std::vector<double> b = k.bias ? std::vector<double>(p.bias.data().begin(), p.bias.data().end())
                                         : std::vector<double>{};
    const auto want = oracle::naive_conv2d(k, in, w, b);
    bool same = y.numel() == static_cast<std::int64_t>(want.size());
    for (std::size_t i = 0; same && i < want.size(); ++i) same = std::memcmp(&want[i], &y.data()[i], sizeof(double)) == 0;
    c.expect(same, "config " + std::to_string(t) + " differs from the naive loops");
    exact += same;
  }
  c.note(std::to_string(exact) + "/200 configs bit-identical");
  return c.outcome();
}

// ---------------------------------------------------------------- 5

Outcome parameter_accounting() {
  Checks c;
  const std::int64_t full = default_net().count_parameters();
  const std::int64_t backbone = Network<float>(NetworkSpec::resmasking().backbone_only()).count_parameters();
  const double fb = static_cast<double>(backbone) / 1e6, ff = static_cast<double>(full) / 1e6;
  c.expect(std::abs(fb - 21.2) <= 0.05 * 21.2, "backbone " + fmt(fb, 6) + "M outside 21.2M +-5%");
  c.expect(std::abs(ff - 142.9) <= 0.15 * 142.9, "full " + fmt(ff, 6) + "M outside 142.9M +-15%");
  c.note("backbone " + std::to_string(backbone) + " (" + fmt(100 * (fb / 21.2 - 1), 3) + "% vs 21.2M), full " +
         std::to_string(full) + " (" + fmt(100 * (ff / 142.9 - 1), 3) +
         "% vs 142.9M; masking internals are not fully specified, hence the wide window)");
  return c.outcome();
}

// ---------------------------------------------------------------- 6

Outcome data_fidelity(const fs::path& scratch) {
  Checks c;
  // The synthetic path always runs: generate, serialize, parse back.
  const Dataset synth = make_synthetic({64, 16, 16, 4});
  const fs::path csv = scratch / "synthetic.csv";
  write_fer_csv(synth, csv);
  const Dataset back = parse_fer_csv(csv);
  c.expect(back.size() == synth.size(), "synthetic round trip changed the sample count");
  bool same = back.size() == synth.size();
  for (std::size_t i = 0; same && i < back.size(); ++i)
    same = back[i].pixels == synth[i].pixels && back[i].label == synth[i].label && back[i].split == synth[i].split;
  c.expect(same, "synthetic round trip changed a sample");
  const auto h = class_histogram(back, Split::train);
  c.expect(*std::max_element(h.begin(), h.end()) - *std::min_element(h.begin(), h.end()) <= 1,
           "synthetic classes are unbalanced");
  c.note("synthetic CSV round trip of 96 samples exact");

  fs::path real;
  if (const char* env = std::getenv("RMN_FER2013_CSV"); env && *env) real = env;
  else if (fs::exists("data/fer2013.csv")) real = "data/fer2013.csv";
  if (real.empty() || !fs::exists(real)) {
    const Outcome o = c.outcome();
    if (o.status == Status::fail) return o;
    return {Status::skip, o.detail + "; fer2013.csv not found (set RMN_FER2013_CSV)"};
  }
  const Dataset ds = parse_fer_csv(real);
  const auto train = class_histogram(ds, Split::train), val = class_histogram(ds, Split::val),
             test = class_histogram(ds, Split::test);
  auto total = [](const auto& hist) { return std::accumulate(hist.begin(), hist.end(), std::int64_t{0}); };
  c.expect(total(train) == 28709, "train has " + std::to_string(total(train)) + " samples");
  c.expect(train[3] == 7215, "train Happy = " + std::to_string(train[3]));
  c.expect(train[1] == 436, "train Disgust = " + std::to_string(train[1]));
  c.expect(val[1] == 56, "val Disgust = " + std::to_string(val[1]));
  c.expect(total(train) + total(val) + total(test) == 35887, "splits sum to " + std::to_string(ds.size()));
  c.note("FER2013 train/val/test = " + std::to_string(total(train)) + "/" + std::to_string(total(val)) + "/" +
         std::to_string(total(test)));
  return c.outcome();
}

// ---------------------------------------------------------------- 7

Outcome trainability(const fs::path& scratch) {
  Checks c;
  // Same recipe as `rmn train --mini --lr 0.01 --batch 16 --epochs 200` on
  // the CLI's synthetic set. Momentum, decay, schedule and stopping rules
  // keep their defaults.
  const Dataset ds = make_synthetic({64, 16, 0, 0});
  TrainConfig cfg;
  cfg.max_epochs = 200;
  cfg.batch_size = 16;
  cfg.lr = 1e-2;
  auto net = build_network<float>(NetworkSpec::mini(), cfg.seed);
  const auto t0 = Clock::now();
  const TrainReport report = fit(net, ds, cfg, {scratch / "train", {}});
  const double secs = seconds_since(t0);
  c.expect(report.train_acc >= 0.95, "train accuracy " + fmt(report.train_acc));
  c.expect(secs < 900.0, "training took " + fmt(secs) + " s");
  c.note("train acc " + fmt(report.train_acc) + " after " + std::to_string(report.epochs.size()) + " epochs (best " +
         std::to_string(report.best_epoch) + ") in " + fmt(secs, 3) + " s");

  // Fixed batch, five optimizer steps, twenty initializations.
  const Dataset small = make_synthetic({16, 0, 0, 8});
  BatchOptions bo;
  bo.batch_size = 16;
  bo.shuffle = false;
  bo.image_side = 64;
  const auto batch = *batch_iter<float>(small, Split::train, bo).next();
  int decreased = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto m = build_network<float>(NetworkSpec::mini(), 500 + seed);
    SgdOptimizer<float> sgd(m.parameters(), 1e-4, 0.9, 1e-3);
    std::vector<double> losses;
    for (int step = 0; step < 6; ++step) losses.push_back(train_step(m, sgd, batch.images, batch.labels));
    decreased += losses.back() < losses.front();
  }
  c.expect(decreased >= 19, "fixed-batch loss fell for only " + std::to_string(decreased) + "/20 seeds");
  c.note("fixed-batch loss fell over 5 steps for " + std::to_string(decreased) + "/20 seeds");
  return c.outcome();
}

// ---------------------------------------------------------------- 8

Outcome protocol_conformance() {
  Checks c;
  PlateauScheduler s(1e-4, 2, 0.1);
  const double a = s.step(0.50), b = s.step(0.49), d = s.step(0.48);
  c.expect(a == 1e-4 && b == 1e-4 && d == 1e-4 * 0.1, "lr trace " + fmt(a) + ", " + fmt(b) + ", " + fmt(d));
  PlateauScheduler rising(1e-4, 2, 0.1);
  bool steady = true;
  for (double acc : {0.1, 0.2, 0.3, 0.4, 0.5}) steady = steady && rising.step(acc) == 1e-4;
  c.expect(steady, "lr changed while accuracy kept improving");

  EarlyStopping stop(8);
  stop.step(0.6);
  int fired_after = 0;
  for (int e = 1; e <= 20; ++e) {
    if (stop.step(0.6 - 0.01 * e)) {
      fired_after = e;
      break;
    }
  }
  c.expect(fired_after == 8, "early stop fired after " + std::to_string(fired_after) + " flat epochs");
  c.note("lr x0.1 after 2 flat epochs, stop after exactly " + std::to_string(fired_after));
  return c.outcome();
}

// ---------------------------------------------------------------- 9

Outcome ensemble_and_metrics(const fs::path& scratch) {
  Checks c;
  auto net = build_network<float>(NetworkSpec::mini(), 31);
  const fs::path ckpt = scratch / "ens.rmsk";
  save_checkpoint(net, ckpt);
  const auto x = Tensor<float>::create({4, 3, 64, 64}, init::Uniform{5, -1, 1});
  const auto single = softmax(net.forward(x, Mode::eval));
  for (int k : {2, 3, 5}) {
    std::vector<Network<float>> loaded;
    for (int i = 0; i < k; ++i) loaded.push_back(load_checkpoint<float>(ckpt));
    std::vector<Network<float>*> ptrs;
    for (auto& m : loaded) ptrs.push_back(&m);
    c.expect(bit_equal(ensemble_predict<float>(ptrs, x), single),
             "ensemble of " + std::to_string(k) + " copies differs from the single model");
  }

  Rng rng(11);
  int agree = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng.below(200);
    std::vector<int> p(n), l(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<int>(rng.below(7));
      l[i] = static_cast<int>(rng.below(7));
    }
    const ConfusionMatrix cm(p, l);
    agree += static_cast<double>(cm.trace()) / static_cast<double>(cm.total()) == accuracy(p, l);
  }
  c.expect(agree == 1000, "trace/N disagreed with accuracy on " + std::to_string(1000 - agree) + " sets");

  // Majority-class baseline on a test split with FER2013's class counts.
  const std::array<int, kNumClasses> test_counts{491, 55, 528, 879, 594, 416, 626};
  std::vector<int> labels;
  for (int k = 0; k < kNumClasses; ++k) labels.insert(labels.end(), static_cast<std::size_t>(test_counts[k]), k);
  const std::vector<int> majority(labels.size(), 3);
  const double base = accuracy(majority, labels);
  c.expect(labels.size() == 3589 && std::abs(base - 0.2449) < 5e-5, "majority baseline " + fmt(base, 6));
  c.note("k=2,3,5 ensembles exact; trace/N == accuracy on " + std::to_string(agree) + "/1000; baseline " +
         std::to_string(879) + "/" + std::to_string(labels.size()) + " = " + fmt(base, 4));
  return c.outcome();
}

// ---------------------------------------------------------------- 10

Outcome explainability(const fs::path& scratch) {
  Checks c;
  auto& net = default_net();
  const auto x = face_like_input(224, 3);
  const auto map = grad_cam(net, x, 3);
  c.expect(map.height == 7 && map.width == 7,
           "map is " + std::to_string(map.height) + "x" + std::to_string(map.width));
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  c.expect(*lo >= 0.0 && *hi <= 1.0, "map leaves [0,1]");

  // Zero the target class's classifier row; restore it afterwards.
  auto w = net.fc_weight().mutable_data();
  const std::size_t in = w.size() / kNumClasses;
  std::vector<float> saved(w.begin() + 3 * static_cast<std::ptrdiff_t>(in), w.begin() + 4 * static_cast<std::ptrdiff_t>(in));
  std::fill(w.begin() + 3 * static_cast<std::ptrdiff_t>(in), w.begin() + 4 * static_cast<std::ptrdiff_t>(in), 0.0f);
  const auto zeroed = grad_cam(net, x, 3);
  std::copy(saved.begin(), saved.end(), w.begin() + 3 * static_cast<std::ptrdiff_t>(in));
  c.expect(std::all_of(zeroed.values.begin(), zeroed.values.end(), [](double v) { return v == 0.0; }),
           "zeroed classifier row still gives a non-zero map");

  for (int precision = 0; precision < 2; ++precision) {
    const fs::path path = scratch / ("roundtrip" + std::to_string(precision) + ".rmsk");
    bool same = false;
    if (precision == 0) {
      auto m = build_network<float>(NetworkSpec::mini(), 41);
      const auto in_x = face_like_input(64, 4);
      m.forward(Tensor<float>::create({4, 3, 64, 64}, init::Uniform{1, -1, 1}), Mode::train);  // move running stats
      save_checkpoint(m, path);
      auto back = load_checkpoint<float>(path);
      same = bit_equal(m.forward(in_x, Mode::eval), back.forward(in_x, Mode::eval));
    } else {
      auto m = build_network<double>(NetworkSpec::mini(), 42);
      const auto in_x = face_like_input(64, 5).cast<double>();
      m.forward(TD::create({4, 3, 64, 64}, init::Uniform{2, -1, 1}), Mode::train);
      save_checkpoint(m, path);
      auto back = load_checkpoint<double>(path);
      same = bit_equal(m.forward(in_x, Mode::eval), back.forward(in_x, Mode::eval));
    }
    c.expect(same, std::string(precision == 0 ? "f32" : "f64") + " checkpoint round trip changed the logits");
  }
  c.note("default map " + std::to_string(map.height) + "x" + std::to_string(map.width) + " in [" + fmt(*lo, 3) +
         ", " + fmt(*hi, 3) + "], zero row gives zero map, f32/f64 round trips bit-exact");
  return c.outcome();
}

}  // namespace

int main() {
  const fs::path scratch = scratch_dir();
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"shape conformance", shape_conformance},
      {"fusion identities", fusion_identities},
      {"gradient oracle", gradient_oracle},
      {"kernel oracle", kernel_oracle},
      {"parameter accounting", parameter_accounting},
      {"data fidelity", [&] { return data_fidelity(scratch); }},
      {"trainability", [&] { return trainability(scratch); }},
      {"protocol conformance", protocol_conformance},
      {"ensemble and metrics", [&] { return ensemble_and_metrics(scratch); }},
      {"explainability", [&] { return explainability(scratch); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {Status::fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "SKIP";
    failed += o.status == Status::fail;
    std::cout << '[' << tag << "] " << std::setw(2) << i + 1 << ' ' << criteria[i].first << " (" << fmt(seconds_since(t0), 3)
              << " s): " << o.detail << std::endl;
  }
  fs::remove_all(scratch);
  std::cout << (failed == 0 ? "all criteria met or skipped" : std::to_string(failed) + " criteria failed") << '\n';
  return failed == 0 ? 0 : 1;
}
