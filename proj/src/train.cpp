#include "mnetsat/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "mnetsat/metrics.hpp"

namespace fs = std::filesystem;

namespace mnetsat::train {

void TrainConfig::validate() const {
  if (lr < 0) throw std::invalid_argument("learning rate must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (augment_per_image < 0) throw std::invalid_argument("augment count must be >= 0");
  if (threshold < 0 || threshold > 1) throw std::invalid_argument("threshold outside [0,1]");
  if (out_dir.empty()) throw std::invalid_argument("output directory not set");
  plateau.validate();
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void make_batch(const std::vector<data::Sample>& set, const std::vector<size_t>& order,
                size_t from, size_t to, Tensor<float>& images, Tensor<float>& masks) {
  const int64_t n = static_cast<int64_t>(to - from);
  const int64_t H = set[order[from]].image.dim(0);
  const int64_t W = set[order[from]].image.dim(1);
  images = Tensor<float>({n, H, W, 3});
  masks = Tensor<float>({n, H, W, 1});
  float* pi = images.data();
  float* pm = masks.data();
  const int64_t iplane = H * W * 3, mplane = H * W;
  for (int64_t i = 0; i < n; ++i) {
    const data::Sample& s = set[order[from + static_cast<size_t>(i)]];
    std::copy_n(s.image.cdata(), iplane, pi + i * iplane);
    std::copy_n(s.mask.cdata(), mplane, pm + i * mplane);
  }
}

}  // namespace

TrainResult train(model::Model<float>& m, const std::vector<data::Sample>& train_set,
                  const std::vector<data::Sample>& val_set, const TrainConfig& tc,
                  const LossConfig& lc) {
  tc.validate();
  lc.validate();
  if (train_set.empty() || val_set.empty())
    throw std::invalid_argument("train: empty train or validation split");
  fs::create_directories(tc.out_dir);

  std::mt19937 aug_rng(static_cast<uint32_t>(data::mix_seed(tc.seed, 1)));
  std::mt19937 shuffle_rng(static_cast<uint32_t>(data::mix_seed(tc.seed, 2)));
  std::mt19937 dropout_rng(static_cast<uint32_t>(data::mix_seed(tc.seed, 3)));

  std::vector<data::Sample> expanded = train_set;
  for (const data::Sample& s : train_set)
    for (data::Sample& a : augment(s, tc.augment_per_image, aug_rng))
      expanded.push_back(std::move(a));

  TrainResult result;
  result.log_path = (fs::path(tc.out_dir) / "train_log.csv").string();
  result.best_checkpoint = (fs::path(tc.out_dir) / "best.msat").string();
  std::ofstream log(result.log_path);
  if (!log) throw std::runtime_error("cannot write training log: " + result.log_path);
  log << "epoch,train_loss,val_dsc,lr\n";

  Adam<float> adam;
  PlateauScheduler sched(tc.lr, tc.plateau);
  double lr = tc.lr;

  std::vector<size_t> order(expanded.size());
  std::iota(order.begin(), order.end(), size_t(0));

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0;
    int64_t steps = 0;
    for (size_t from = 0; from < order.size(); from += static_cast<size_t>(tc.batch_size)) {
      const size_t to = std::min(order.size(), from + static_cast<size_t>(tc.batch_size));
      Tensor<float> images, masks;
      make_batch(expanded, order, from, to, images, masks);

      Tape<float> tape;
      auto bound = m.bind(tape, images, true, dropout_rng, true);
      auto loss = total_loss(bound.output, tape.leaf(masks), lc);
      const double lv = static_cast<double>(loss.val().item());
      if (!std::isfinite(lv))
        throw std::runtime_error("non-finite training loss at epoch " + std::to_string(epoch) +
                                 ", step " + std::to_string(steps + 1));
      tape.backward(loss);
      adam.step(m.params(),
                [&](const std::string& name) -> const Tensor<float>* {
                  const Var<float> leaf = bound.leaves(name);
                  return tape.has_grad(leaf) ? &tape.grad(leaf) : nullptr;
                },
                static_cast<float>(lr));
      loss_sum += lv;
      ++steps;
    }

    const double train_loss = loss_sum / static_cast<double>(steps);
    const double val_dsc = eval::evaluate(m, val_set, tc.threshold, tc.batch_size).aggregate.dsc;

    TrainResult::EpochRow row{epoch, train_loss, val_dsc, lr};
    result.log.push_back(row);
    log << epoch << ',' << fmt(train_loss) << ',' << fmt(val_dsc) << ',' << fmt(lr) << '\n';
    log.flush();

    if (val_dsc > result.best_val_dsc) {
      result.best_val_dsc = val_dsc;
      result.best_epoch = epoch;
      save_checkpoint(result.best_checkpoint, m.params());
    }
    lr = sched.observe(val_dsc);
  }
  return result;
}

}  // namespace mnetsat::train
