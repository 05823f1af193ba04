// rmn: train, evaluate and explain residual masking networks from the shell.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "rmn/checkpoint.hpp"
#include "rmn/data.hpp"
#include "rmn/eval.hpp"
#include "rmn/image.hpp"
#include "rmn/ops.hpp"
#include "rmn/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Options {
  std::string precision = "f32";
  std::string data;
  std::string out;
  std::string config;
  std::vector<std::string> ckpts;
  std::string split = "test";
  std::string image;
  std::string layer;
  std::string spec = "default";
  std::string arch = "default";
  std::optional<int> target;
  std::uint64_t seed = 0;
  int epochs = 0, batch = 0, eval_batch = 16;
  double lr = 0, momentum = 0, weight_decay = 0;
  bool mini = false, no_augment = false, backbone = false;
  int synth_train = 64, synth_val = 16, synth_test = 16;
};

template <typename Fn>
int with_precision(const std::string& precision, Fn&& fn) {
  if (precision == "f64") return fn(double{});
  return fn(float{});
}

// Config-file values override the defaults; explicitly given flags override both.
rmn::TrainConfig build_train_config(const Options& o, const CLI::App& cmd) {
  rmn::TrainConfig cfg;
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw rmn::IoError("cannot open config file '" + o.config + "'");
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw rmn::ConfigError("config file '" + o.config + "': " + e.what());
    }
    const auto& c = j.contains("config") ? j["config"] : j;
    try {
      cfg.max_epochs = c.value("epochs", cfg.max_epochs);
      cfg.batch_size = c.value("batch", cfg.batch_size);
      cfg.lr = c.value("lr", cfg.lr);
      cfg.momentum = c.value("momentum", cfg.momentum);
      cfg.weight_decay = c.value("weight_decay", cfg.weight_decay);
      cfg.plateau_patience = c.value("plateau_patience", cfg.plateau_patience);
      cfg.plateau_factor = c.value("plateau_factor", cfg.plateau_factor);
      cfg.early_stop_patience = c.value("early_stop_patience", cfg.early_stop_patience);
      cfg.seed = c.value("seed", cfg.seed);
      cfg.augment = c.value("augment", cfg.augment);
    } catch (const json::exception& e) {
      throw rmn::ConfigError("config file '" + o.config + "': " + e.what());
    }
  }
  auto given = [&](const char* name) { return cmd.get_option(name)->count() > 0; };
  if (given("--epochs")) cfg.max_epochs = o.epochs;
  if (given("--batch")) cfg.batch_size = o.batch;
  if (given("--lr")) cfg.lr = o.lr;
  if (given("--momentum")) cfg.momentum = o.momentum;
  if (given("--weight-decay")) cfg.weight_decay = o.weight_decay;
  if (given("--seed")) cfg.seed = o.seed;
  if (o.no_augment) cfg.augment = false;
  cfg.validate();
  return cfg;
}

std::string architecture(const Options& o, const CLI::App& cmd) {
  if (o.mini) return "mini";
  if (cmd.get_option("--arch")->count() > 0) return o.arch;
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    const json j = json::parse(in, nullptr, false);
    if (!j.is_discarded()) {
      const auto& c = j.contains("config") ? j["config"] : j;
      if (c.contains("architecture") && c["architecture"].is_string()) return c["architecture"].get<std::string>();
    }
  }
  return o.arch;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw rmn::IoError("cannot write '" + path.string() + "'");
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

template <rmn::Scalar T>
int cmd_train(const Options& o, const CLI::App& cmd) {
  const rmn::TrainConfig cfg = build_train_config(o, cmd);
  const std::string arch = architecture(o, cmd);
  const rmn::Dataset ds = rmn::parse_fer_csv(o.data);
  auto net = rmn::build_network<T>(rmn::NetworkSpec::preset(arch), cfg.seed);
  const fs::path out = o.out;
  std::cout << "training " << arch << " (" << net.count_parameters() << " parameters) on "
            << ds.indices(rmn::Split::train).size() << " samples\n";
  rmn::FitOptions fo{out, [](const rmn::EpochLog& e) {
                       std::cout << "epoch " << e.epoch << "  loss " << fixed(e.train_loss, 4) << "  val_acc "
                                 << fixed(e.val_acc, 4) << "  lr " << e.lr;
                       if (e.skipped_batches > 0) std::cout << "  skipped " << e.skipped_batches;
                       std::cout << std::endl;
                     }};
  const rmn::TrainReport report = rmn::fit(net, ds, cfg, fo);
  write_text(out / "summary.json", rmn::summary_json(report, cfg, arch) + "\n");
  std::cout << "best epoch " << report.best_epoch << "  val_acc " << fixed(report.best_val_acc, 4) << "  train_acc "
            << fixed(report.train_acc, 4) << (report.stopped_early ? "  (stopped early)" : "") << '\n'
            << "checkpoint " << report.checkpoint.string() << '\n';
  return 0;
}

void report_predictions(const rmn::SplitPredictions& p, const Options& o, const std::string& stem) {
  const rmn::ConfusionMatrix cm(p.preds, p.labels);
  std::cout << "split " << o.split << "  samples " << p.labels.size() << "  accuracy "
            << fixed(rmn::accuracy(p.preds, p.labels), 6) << "\n\n"
            << cm.to_text();
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    const fs::path csv = fs::path(o.out) / (stem + "_" + o.split + ".csv");
    write_text(csv, cm.to_csv());
    std::cout << "\nconfusion matrix written to " << csv.string() << '\n';
  }
}

const rmn::Dataset& split_must_exist(const rmn::Dataset& ds, const Options& o) {
  if (ds.indices(rmn::parse_split(o.split)).empty())
    throw rmn::ConfigError("the dataset has no " + o.split + " samples");
  return ds;
}

template <rmn::Scalar T>
int cmd_eval(const Options& o) {
  const rmn::Dataset ds = rmn::parse_fer_csv(o.data);
  split_must_exist(ds, o);
  auto net = rmn::load_checkpoint<T>(o.ckpts.front());
  report_predictions(rmn::predict_split(net, ds, rmn::parse_split(o.split), o.eval_batch), o, "confusion");
  return 0;
}

template <rmn::Scalar T>
int cmd_ensemble(const Options& o) {
  const rmn::Dataset ds = rmn::parse_fer_csv(o.data);
  split_must_exist(ds, o);
  const rmn::Split split = rmn::parse_split(o.split);
  std::vector<rmn::SplitPredictions> members;
  for (const auto& path : o.ckpts) {
    auto net = rmn::load_checkpoint<T>(path);
    members.push_back(rmn::predict_split(net, ds, split, o.eval_batch, true));
  }
  // Average softmax rows across members, one sample at a time.
  rmn::SplitPredictions fused;
  fused.labels = members.front().labels;
  for (std::size_t i = 0; i < fused.labels.size(); ++i) {
    std::vector<rmn::Tensor<double>> rows;
    for (const auto& m : members)
      rows.emplace_back(rmn::Shape{1, rmn::kNumClasses}, std::vector<double>(m.probabilities[i]));
    const auto avg = rmn::average_probabilities<double>(rows);
    const auto mean = avg.data();
    fused.preds.push_back(static_cast<int>(std::max_element(mean.begin(), mean.end()) - mean.begin()));
  }
  std::cout << "ensemble of " << members.size() << " checkpoints\n";
  report_predictions(fused, o, "ensemble_confusion");
  return 0;
}

template <rmn::Scalar T>
int cmd_infer(const Options& o) {
  const rmn::GrayImage img = rmn::read_pnm(o.image);
  auto net = rmn::load_checkpoint<T>(o.ckpts.front());
  const auto probs = rmn::softmax(net.forward(rmn::preprocess<T>(img, net.spec().input_size), rmn::Mode::eval));
  const auto p = probs.data();
  std::size_t best = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    std::cout << std::left << std::setw(10) << rmn::kClassNames[k] << fixed(static_cast<double>(p[k]), 6) << '\n';
    if (p[k] > p[best]) best = k;
  }
  std::cout << "prediction " << best << ' ' << rmn::kClassNames[best] << '\n';
  return 0;
}

template <rmn::Scalar T>
int cmd_gradcam(const Options& o) {
  const rmn::GrayImage img = rmn::read_pnm(o.image);
  auto net = rmn::load_checkpoint<T>(o.ckpts.front());
  const auto x = rmn::preprocess<T>(img, net.spec().input_size);
  int cls = 0;
  if (o.target) {
    cls = *o.target;
  } else {
    const auto logits = net.forward(x, rmn::Mode::eval);
    const auto v = logits.data();
    cls = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
  }
  const rmn::GradCamMap map = rmn::grad_cam(net, x, cls, o.layer);
  const fs::path out = o.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  rmn::write_ppm(rmn::render_heatmap(map, img), out);
  std::cout << "class " << cls << ' ' << rmn::kClassNames[static_cast<std::size_t>(cls)] << "  layer " << map.layer
            << "  map " << map.height << 'x' << map.width << "\nwritten to " << out.string() << '\n';
  return 0;
}

int cmd_inspect(const Options& o, const CLI::App& cmd) {
  rmn::NetworkSpec spec;
  if (cmd.get_option("--ckpt")->count() > 0) {
    const rmn::CheckpointInfo info = rmn::inspect_checkpoint(o.ckpts.front());
    std::int64_t stored = 0;
    bool dbl = false;
    for (const auto& e : info.entries) {
      stored += rmn::shape_numel(e.shape);
      dbl = dbl || e.is_double;
    }
    std::cout << "checkpoint " << o.ckpts.front() << "  version " << info.version << "  entries "
              << info.entries.size() << "  values " << stored << "  precision " << (dbl ? "f64" : "f32")
              << "\narchitecture " << info.architecture << "\n\n";
    spec = rmn::NetworkSpec::preset(info.architecture);
  } else {
    spec = rmn::NetworkSpec::preset(o.spec);
  }
  if (o.backbone) spec = spec.backbone_only();
  const rmn::Network<float> net(spec);
  const std::int64_t total = net.count_parameters();
  std::cout << "architecture " << spec.name << "  input " << spec.input_channels << 'x' << spec.input_size << 'x'
            << spec.input_size << "\n\n"
            << rmn::format_summary_table(net.describe(), total) << "Parameters " << total << " ("
            << fixed(static_cast<double>(total) / 1e6, 2) << " x 10^6)\n";
  return 0;
}

int cmd_synth(const Options& o) {
  const rmn::Dataset ds = rmn::make_synthetic({o.synth_train, o.synth_val, o.synth_test, o.seed});
  fs::create_directories(o.out);
  const fs::path csv = fs::path(o.out) / "synthetic.csv";
  rmn::write_fer_csv(ds, csv);
  std::cout << "wrote " << ds.size() << " samples to " << csv.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Residual masking network for 7-class facial expression recognition"};
  app.require_subcommand(1);
  Options o;
  const auto splits = CLI::IsMember({"train", "val", "test"});
  auto precision = [&](CLI::App* c) {
    c->add_option("--precision", o.precision, "Arithmetic precision")->check(CLI::IsMember({"f32", "f64"}));
  };

  auto* train = app.add_subcommand("train", "Fit a network on a FER2013-style CSV");
  train->add_option("--data", o.data, "Dataset CSV")->required()->check(CLI::ExistingFile);
  train->add_option("--out", o.out, "Output directory")->required();
  train->add_option("--config", o.config, "JSON file with training settings")->check(CLI::ExistingFile);
  train->add_option("--seed", o.seed, "Seed for initialization, shuffling and augmentation");
  train->add_option("--epochs", o.epochs, "Maximum number of epochs");
  train->add_option("--batch", o.batch, "Batch size");
  train->add_option("--lr", o.lr, "Initial learning rate");
  train->add_option("--momentum", o.momentum, "SGD momentum");
  train->add_option("--weight-decay", o.weight_decay, "L2 weight decay");
  train->add_option("--arch", o.arch, "Architecture preset")
      ->check(CLI::IsMember({"default", "mini", "backbone", "mini-backbone"}));
  train->add_flag("--mini", o.mini, "Use the small 64x64 preset");
  train->add_flag("--no-augment", o.no_augment, "Disable flips and rotations");
  precision(train);

  auto* eval = app.add_subcommand("eval", "Accuracy and confusion matrix of one checkpoint");
  eval->add_option("--data", o.data, "Dataset CSV")->required()->check(CLI::ExistingFile);
  eval->add_option("--ckpt", o.ckpts, "Checkpoint file")->required()->expected(1)->check(CLI::ExistingFile);
  eval->add_option("--split", o.split, "Split to evaluate")->check(splits);
  eval->add_option("--out", o.out, "Directory for the confusion CSV");
  eval->add_option("--batch", o.eval_batch, "Evaluation batch size")->check(CLI::PositiveNumber);
  precision(eval);

  auto* ens = app.add_subcommand("ensemble", "Average softmax outputs of several checkpoints");
  ens->add_option("--data", o.data, "Dataset CSV")->required()->check(CLI::ExistingFile);
  ens->add_option("--ckpt", o.ckpts, "Checkpoint files")->required()->check(CLI::ExistingFile);
  ens->add_option("--split", o.split, "Split to evaluate")->check(splits);
  ens->add_option("--out", o.out, "Directory for the confusion CSV");
  ens->add_option("--batch", o.eval_batch, "Evaluation batch size")->check(CLI::PositiveNumber);
  precision(ens);

  auto* infer = app.add_subcommand("infer", "Class probabilities for one PGM/PPM face crop");
  infer->add_option("--image", o.image, "Input image")->required()->check(CLI::ExistingFile);
  infer->add_option("--ckpt", o.ckpts, "Checkpoint file")->required()->expected(1)->check(CLI::ExistingFile);
  precision(infer);

  auto* cam = app.add_subcommand("gradcam", "Write a Grad-CAM overlay as a PPM");
  cam->add_option("--image", o.image, "Input image")->required()->check(CLI::ExistingFile);
  cam->add_option("--ckpt", o.ckpts, "Checkpoint file")->required()->expected(1)->check(CLI::ExistingFile);
  cam->add_option("--class", o.target, "Target class 0-6 (default: the predicted class)");
  cam->add_option("--layer", o.layer, "Target layer (default: last convolution of the final stage)");
  cam->add_option("--out", o.out, "Output PPM file")->required();
  precision(cam);

  auto* inspect = app.add_subcommand("inspect", "Layer table and parameter count");
  auto* ck = inspect->add_option("--ckpt", o.ckpts, "Checkpoint file")->expected(1)->check(CLI::ExistingFile);
  inspect->add_option("--spec", o.spec, "Architecture preset")
      ->check(CLI::IsMember({"default", "mini", "backbone", "mini-backbone"}))
      ->excludes(ck);
  inspect->add_flag("--backbone", o.backbone, "Drop the masking blocks");

  auto* synth = app.add_subcommand("synth", "Write a synthetic ring dataset as CSV");
  synth->add_option("--out", o.out, "Output directory")->required();
  synth->add_option("--train", o.synth_train, "Training samples")->check(CLI::NonNegativeNumber);
  synth->add_option("--val", o.synth_val, "Validation samples")->check(CLI::NonNegativeNumber);
  synth->add_option("--test", o.synth_test, "Test samples")->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", o.seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\nRun with --help for usage.\n";
    return 2;
  }

  try {
    if (*train) return with_precision(o.precision, [&](auto t) { return cmd_train<decltype(t)>(o, *train); });
    if (*eval) return with_precision(o.precision, [&](auto t) { return cmd_eval<decltype(t)>(o); });
    if (*ens) return with_precision(o.precision, [&](auto t) { return cmd_ensemble<decltype(t)>(o); });
    if (*infer) return with_precision(o.precision, [&](auto t) { return cmd_infer<decltype(t)>(o); });
    if (*cam) return with_precision(o.precision, [&](auto t) { return cmd_gradcam<decltype(t)>(o); });
    if (*inspect) return cmd_inspect(o, *inspect);
    if (*synth) return cmd_synth(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
