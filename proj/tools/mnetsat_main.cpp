#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mnetsat/config.hpp"
#include "mnetsat/dataio.hpp"
#include "mnetsat/edge.hpp"
#include "mnetsat/gradcheck.hpp"
#include "mnetsat/metrics.hpp"
#include "mnetsat/model.hpp"
#include "mnetsat/train.hpp"

namespace fs = std::filesystem;
using namespace mnetsat;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct CommonOpts {
  std::string data;
  std::string config_file;
  std::string out = "out";
  std::string checkpoint;
  uint64_t seed = 0;
  int64_t input = 512;
  int base_filters = 64;
  int stages = 5;
  int epochs = 70;
  int batch = 8;
  double lr = 1e-4;
  double threshold = 0.5;
  int augment = 8;
  std::vector<std::string> ablation;
  bool sweep = false;
  std::string edge_stats;
  int precision = 64;
  int count = 250;
  int64_t size = 64;
};

void add_model_flags(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_file, "flat key=value config file (flags win)");
  cmd->add_option("--seed", o.seed, "rng seed");
  cmd->add_option("--input", o.input, "input extent (square)");
  cmd->add_option("--base-filters", o.base_filters, "stage-1 filter count");
  cmd->add_option("--stages", o.stages, "encoder/decoder stage count");
  cmd->add_option("--ablation", o.ablation, "<name>=<bool>, repeatable")->take_all();
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw std::runtime_error("bad boolean value '" + v + "'");
}

void apply_ablation(model::AblationFlags& a, const std::string& name, bool value) {
  if (name == "egfe_sobel")
    a.egfe_sobel = value;
  else if (name == "use_msfa")
    a.use_msfa = value;
  else if (name == "use_seat")
    a.use_seat = value;
  else if (name == "use_ceaspp")
    a.use_ceaspp = value;
  else if (name == "msfa_se")
    a.msfa_se = value;
  else if (name == "seat_ln")
    a.seat_ln = value;
  else if (name == "seat_gap")
    a.seat_gap = value;
  else if (name == "ceaspp_cc")
    a.ceaspp_cc = value;
  else if (name == "ceaspp_icf")
    a.ceaspp_icf = value;
  else
    throw std::runtime_error("unknown ablation flag '" + name + "'");
}

// Config file first, then CLI flags on top.
void merge_config_file(CommonOpts& o, const CLI::App* cmd) {
  if (o.config_file.empty()) return;
  const auto kv = read_config_file(o.config_file);
  auto unset = [&](const char* flag) { return cmd->get_option(flag)->count() == 0; };
  for (const auto& [key, value] : kv) {
    if (key == "seed" && unset("--seed")) o.seed = std::stoull(value);
    else if (key == "input" && unset("--input")) o.input = std::stoll(value);
    else if (key == "base_filters" && unset("--base-filters")) o.base_filters = std::stoi(value);
    else if (key == "stages" && unset("--stages")) o.stages = std::stoi(value);
    else if (key == "epochs" && cmd->get_option_no_throw("--epochs") && unset("--epochs"))
      o.epochs = std::stoi(value);
    else if (key == "batch" && cmd->get_option_no_throw("--batch") && unset("--batch"))
      o.batch = std::stoi(value);
    else if (key == "lr" && cmd->get_option_no_throw("--lr") && unset("--lr"))
      o.lr = std::stod(value);
    else if (key == "threshold" && cmd->get_option_no_throw("--threshold") && unset("--threshold"))
      o.threshold = std::stod(value);
    else if (key == "augment" && cmd->get_option_no_throw("--augment") && unset("--augment"))
      o.augment = std::stoi(value);
    else if (key.rfind("ablation.", 0) == 0)
      o.ablation.insert(o.ablation.begin(), key.substr(9) + "=" + value);
    else if (key == "seed" || key == "input" || key == "base_filters" || key == "stages" ||
             key == "epochs" || key == "batch" || key == "lr" || key == "threshold" ||
             key == "augment") {
      // flag set on the command line wins
    } else {
      throw std::runtime_error("unknown config key '" + key + "' in " + o.config_file);
    }
  }
}

model::ModelConfig make_model_config(const CommonOpts& o) {
  model::ModelConfig cfg;
  cfg.input_h = cfg.input_w = o.input;
  cfg.base_filters = o.base_filters;
  cfg.stages = o.stages;
  for (const std::string& spec : o.ablation) {
    const size_t eq = spec.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("--ablation expects <name>=<bool>, got '" + spec + "'");
    apply_ablation(cfg.ablation, spec.substr(0, eq), parse_bool(spec.substr(eq + 1)));
  }
  return cfg;
}

void print_resolved(const std::string& command, const CommonOpts& o,
                    const model::ModelConfig& cfg) {
  std::cout << "command = " << command << "\n";
  std::cout << "seed = " << o.seed << "\n";
  std::cout << "input = " << cfg.input_h << "\n";
  std::cout << "base_filters = " << cfg.base_filters << "\n";
  std::cout << "stages = " << cfg.stages << "\n";
  const auto& a = cfg.ablation;
  std::cout << "ablation.egfe_sobel = " << a.egfe_sobel << "\n";
  std::cout << "ablation.use_msfa = " << a.use_msfa << "\n";
  std::cout << "ablation.use_seat = " << a.use_seat << "\n";
  std::cout << "ablation.use_ceaspp = " << a.use_ceaspp << "\n";
  std::cout << "ablation.msfa_se = " << a.msfa_se << "\n";
  std::cout << "ablation.seat_ln = " << a.seat_ln << "\n";
  std::cout << "ablation.seat_gap = " << a.seat_gap << "\n";
  std::cout << "ablation.ceaspp_cc = " << a.ceaspp_cc << "\n";
  std::cout << "ablation.ceaspp_icf = " << a.ceaspp_icf << "\n";
}

data::DatasetManifest manifest_for(const std::string& root, uint64_t seed,
                                   const std::string& out_dir) {
  const fs::path existing = fs::path(root) / "manifest.jsonl";
  if (fs::exists(existing)) return data::read_manifest(existing.string());
  data::DatasetManifest m = data::split(data::list_ids(root), seed);
  fs::create_directories(out_dir);
  data::write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), m);
  return m;
}

std::vector<data::Sample> load_resized(const std::string& root, const data::DatasetManifest& m,
                                       const std::string& split, int64_t extent) {
  std::vector<data::Sample> samples = data::load_split(root, m, split);
  for (data::Sample& s : samples)
    if (s.image.dim(0) != extent || s.image.dim(1) != extent) s = data::resize(s, extent, extent);
  return samples;
}

int cmd_train(const CommonOpts& o) {
  const model::ModelConfig cfg = make_model_config(o);
  print_resolved("train", o, cfg);
  std::cout << "epochs = " << o.epochs << "\nbatch = " << o.batch << "\nlr = " << o.lr
            << "\naugment = " << o.augment << "\nout = " << o.out << "\n"
            << std::flush;
  const data::DatasetManifest m = manifest_for(o.data, o.seed, o.out);
  auto train_set = load_resized(o.data, m, "train", o.input);
  auto val_set = load_resized(o.data, m, "val", o.input);

  auto mdl = model::Model<float>::build(cfg, o.seed);
  train::TrainConfig tc;
  tc.lr = o.lr;
  tc.batch_size = o.batch;
  tc.epochs = o.epochs;
  tc.augment_per_image = o.augment;
  tc.threshold = o.threshold;
  tc.seed = o.seed;
  tc.out_dir = o.out;
  train::LossConfig lc;
  const train::TrainResult r = train::train(mdl, train_set, val_set, tc, lc);
  std::cout << "best_val_dsc = " << r.best_val_dsc << " (epoch " << r.best_epoch << ")\n"
            << "log = " << r.log_path << "\ncheckpoint = " << r.best_checkpoint << "\n";
  return kExitOk;
}

int cmd_eval(const CommonOpts& o) {
  const model::ModelConfig cfg = make_model_config(o);
  print_resolved("eval", o, cfg);
  std::cout << "threshold = " << o.threshold << "\nout = " << o.out << "\n" << std::flush;
  const data::DatasetManifest m = manifest_for(o.data, o.seed, o.out);
  auto test_set = load_resized(o.data, m, "test", o.input);

  auto mdl = model::Model<float>::build(cfg, o.seed);
  if (o.checkpoint.empty()) throw std::runtime_error("eval requires --checkpoint");
  train::load_checkpoint(o.checkpoint, mdl.params());
  const eval::MetricsReport report = eval::evaluate(mdl, test_set, o.threshold, o.batch);

  fs::create_directories(o.out);
  const std::string csv_path = (fs::path(o.out) / "metrics.csv").string();
  std::ofstream csv(csv_path);
  csv << report.to_csv();
  std::cout << "aggregate dsc=" << report.aggregate.dsc << " iou=" << report.aggregate.iou
            << " pre=" << report.aggregate.precision << " rec=" << report.aggregate.recall
            << "\nmetrics = " << csv_path << "\n";

  if (o.sweep) {
    std::vector<Tensor<float>> probs, gts;
    for (size_t start = 0; start < test_set.size(); ++start) {
      Tensor<float> batch({1, cfg.input_h, cfg.input_w, 3});
      std::copy_n(test_set[start].image.cdata(), batch.numel(), batch.data());
      Tensor<float> p = mdl.forward(batch);
      probs.push_back(p.reshaped({cfg.input_h, cfg.input_w, 1}));
      gts.push_back(test_set[start].mask);
    }
    std::vector<double> thresholds;
    for (int i = 0; i <= 20; ++i) thresholds.push_back(i / 20.0);
    const std::string roc_path = (fs::path(o.out) / "roc_pr.csv").string();
    std::ofstream roc(roc_path);
    roc << eval::sweep_csv(eval::sweep(probs, gts, thresholds));
    std::cout << "roc_pr = " << roc_path << "\n";
  }
  return kExitOk;
}

int cmd_infer(const CommonOpts& o) {
  const model::ModelConfig cfg = make_model_config(o);
  print_resolved("infer", o, cfg);
  std::cout << "threshold = " << o.threshold << "\nout = " << o.out << "\n" << std::flush;
  auto mdl = model::Model<float>::build(cfg, o.seed);
  if (o.checkpoint.empty()) throw std::runtime_error("infer requires --checkpoint");
  train::load_checkpoint(o.checkpoint, mdl.params());

  const fs::path images = fs::path(o.data) / "images";
  if (!fs::is_directory(images)) throw std::runtime_error("missing images directory: " + images.string());
  fs::create_directories(o.out);
  int done = 0;
  for (const std::string& id : data::list_ids(o.data)) {
    data::ImageU8 raw;
    for (const char* ext : {".png", ".pgm", ".ppm"}) {
      const fs::path p = images / (id + ext);
      if (fs::exists(p)) {
        raw = data::read_image(p.string());
        break;
      }
    }
    Tensor<float> img({raw.h, raw.w, 3});
    float* pi = img.data();
    for (int64_t i = 0; i < raw.h * raw.w; ++i)
      for (int64_t c = 0; c < 3; ++c)
        pi[i * 3 + c] =
            static_cast<float>(raw.pixels[static_cast<size_t>(
                raw.channels == 1 ? i : i * raw.channels + c)]) /
            255.0f;
    if (raw.h != cfg.input_h || raw.w != cfg.input_w)
      img = data::resize_bilinear(img, cfg.input_h, cfg.input_w);

    Tensor<float> batch({1, cfg.input_h, cfg.input_w, 3});
    std::copy_n(img.cdata(), batch.numel(), batch.data());
    const Tensor<float> prob = mdl.forward(batch);

    data::ImageU8 pgm;
    pgm.h = cfg.input_h;
    pgm.w = cfg.input_w;
    pgm.channels = 1;
    pgm.pixels.resize(static_cast<size_t>(pgm.h * pgm.w));
    data::ImageU8 png = pgm;
    const float* pp = prob.cdata();
    for (int64_t i = 0; i < pgm.h * pgm.w; ++i) {
      pgm.pixels[static_cast<size_t>(i)] =
          static_cast<uint8_t>(std::lround(std::clamp(pp[i], 0.0f, 1.0f) * 255.0f));
      png.pixels[static_cast<size_t>(i)] = pp[i] >= o.threshold ? 255 : 0;
    }
    data::write_pgm((fs::path(o.out) / (id + "_prob.pgm")).string(), pgm);
    data::write_png((fs::path(o.out) / (id + "_mask.png")).string(), png);
    ++done;
  }
  std::cout << "wrote " << done << " probability/mask pairs under " << o.out << "\n";
  return kExitOk;
}

int cmd_shapecheck(const CommonOpts& o) {
  const model::ModelConfig cfg = make_model_config(o);
  print_resolved("shapecheck", o, cfg);
  const model::ShapeTrace tr = model::trace_shapes(cfg);
  for (const auto& e : tr.entries)
    std::cout << e.layer << ": " << e.h << " x " << e.w << " x " << e.c << "\n";
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    const std::string path = (fs::path(o.out) / "shape_trace.csv").string();
    std::ofstream f(path);
    f << tr.to_csv();
    std::cout << "trace = " << path << "\n";
  }
  if (!o.edge_stats.empty()) {
    // Edge-map statistics per encoder stage on a deterministic random input.
    auto mdl = model::Model<float>::build(cfg, o.seed);
    std::mt19937 rng(static_cast<uint32_t>(data::mix_seed(o.seed, 9)));
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Tensor<float> x({1, cfg.input_h, cfg.input_w, 3});
    float* px = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) px[i] = u(rng);

    std::ofstream f(o.edge_stats);
    if (!f) throw std::runtime_error("cannot write edge stats: " + o.edge_stats);
    f << "stage,min,max,mean\n";
    Tape<float> tape;
    std::mt19937 unused(0);
    auto bound = mdl.bind(tape, x, false, unused, false);
    Tensor<float> cur = x;
    for (int i = 1; i <= cfg.stages; ++i) {
      const auto em = edge::sobel_magnitude_value(cur);
      const float* p = em.magnitude.cdata();
      float lo = p[0], hi = p[0];
      double sum = 0;
      for (int64_t k = 0; k < em.magnitude.numel(); ++k) {
        lo = std::min(lo, p[k]);
        hi = std::max(hi, p[k]);
        sum += p[k];
      }
      f << i << ',' << lo << ',' << hi << ',' << sum / static_cast<double>(em.magnitude.numel())
        << '\n';
      // feed the stage output forward for the next stage's statistics
      Tape<float> t2;
      std::mt19937 r2(0);
      VarMap<float> vm;
      for (const std::string& name : mdl.params().names()) vm.put(name, t2.leaf(mdl.params().at(name)));
      auto y = edge::egfe_forward(vm, "enc" + std::to_string(i) + ".egfe", t2.leaf(cur),
                                  cfg.ablation.egfe_sobel);
      auto down = nn::pool(y, nn::PoolKind::kMax, 2, 2, nn::Padding::kValid);
      cur = down.val();
    }
    std::cout << "edge_stats = " << o.edge_stats << "\n";
  }
  return kExitOk;
}

int cmd_gradcheck(const CommonOpts& o) {
  if (o.precision != 64)
    throw CLI::ValidationError("--precision",
                               "finite-difference checks require 64-bit precision");
  std::cout << "command = gradcheck\nseed = " << o.seed << "\nprecision = 64\n";
  const auto results = gradcheck::run_suite(o.seed);
  bool ok = true;
  for (const auto& r : results) {
    const bool pass = r.pass(1e-4);
    ok = ok && pass;
    std::printf("%-32s worst_rel_err=%.3e coords=%lld %s\n", r.name.c_str(), r.worst_rel_err,
                static_cast<long long>(r.coords_checked), pass ? "ok" : "FAIL");
  }
  std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED") << "\n";
  return ok ? kExitOk : kExitRuntime;
}

int cmd_synth(const CommonOpts& o) {
  std::cout << "command = synth\nseed = " << o.seed << "\ncount = " << o.count
            << "\nsize = " << o.size << "\nout = " << o.out << "\n";
  data::synth_generate(o.out, o.count, o.size, o.seed);
  std::cout << "dataset written under " << o.out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MNet-SAt polyp segmentation toolkit"};
  app.require_subcommand(1);
  CommonOpts o;

  CLI::App* train_cmd = app.add_subcommand("train", "train on a dataset directory");
  train_cmd->add_option("--data", o.data, "dataset root")->required();
  train_cmd->add_option("--out", o.out, "output directory");
  train_cmd->add_option("--epochs", o.epochs, "training epochs");
  train_cmd->add_option("--batch", o.batch, "batch size");
  train_cmd->add_option("--lr", o.lr, "initial learning rate");
  train_cmd->add_option("--threshold", o.threshold, "validation threshold");
  train_cmd->add_option("--augment", o.augment, "augmented copies per training image");
  add_model_flags(train_cmd, o);

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval_cmd->add_option("--data", o.data, "dataset root")->required();
  eval_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--out", o.out, "output directory");
  eval_cmd->add_option("--batch", o.batch, "batch size");
  eval_cmd->add_option("--threshold", o.threshold, "binarization threshold");
  eval_cmd->add_flag("--sweep", o.sweep, "also write the ROC/PR threshold sweep");
  add_model_flags(eval_cmd, o);

  CLI::App* infer_cmd = app.add_subcommand("infer", "write probability maps and masks");
  infer_cmd->add_option("--data", o.data, "directory with images/")->required();
  infer_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  infer_cmd->add_option("--out", o.out, "output directory");
  infer_cmd->add_option("--threshold", o.threshold, "binarization threshold");
  add_model_flags(infer_cmd, o);

  CLI::App* shape_cmd = app.add_subcommand("shapecheck", "print and validate the shape trace");
  shape_cmd->add_option("--out", o.out, "directory for the CSV trace");
  shape_cmd->add_option("--edge-stats", o.edge_stats, "CSV path for per-stage edge statistics");
  add_model_flags(shape_cmd, o);

  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  grad_cmd->add_option("--precision", o.precision, "floating point width (64)");
  grad_cmd->add_option("--seed", o.seed, "rng seed");

  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  synth_cmd->add_option("--out", o.out, "dataset directory")->required();
  synth_cmd->add_option("--count", o.count, "sample count");
  synth_cmd->add_option("--size", o.size, "square image extent");
  synth_cmd->add_option("--seed", o.seed, "rng seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    for (CLI::App* cmd : {train_cmd, eval_cmd, infer_cmd, shape_cmd})
      if (cmd->parsed()) merge_config_file(o, cmd);
    if (train_cmd->parsed()) return cmd_train(o);
    if (eval_cmd->parsed()) return cmd_eval(o);
    if (infer_cmd->parsed()) return cmd_infer(o);
    if (shape_cmd->parsed()) return cmd_shapecheck(o);
    if (grad_cmd->parsed()) return cmd_gradcheck(o);
    if (synth_cmd->parsed()) return cmd_synth(o);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    const std::string msg = e.what();
    std::cerr << "error: " << msg << "\n";
    // missing/unreadable configuration is a usage error
    if (msg.find("config") != std::string::npos) return kExitUsage;
    return kExitRuntime;
  }
  return kExitUsage;
}
