#pragma once

#include <string>
#include <vector>

#include "mnetsat/augment.hpp"
#include "mnetsat/checkpoint.hpp"
#include "mnetsat/dataio.hpp"
#include "mnetsat/loss.hpp"
#include "mnetsat/model.hpp"
#include "mnetsat/optim.hpp"

namespace mnetsat::train {

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 8;
  int epochs = 70;
  PlateauConfig plateau;       // monitors validation DSC
  int augment_per_image = 8;   // extra samples per original, training split only
  double threshold = 0.5;      // validation binarization
  uint64_t seed = 0;
  std::string out_dir;

  void validate() const;
};

struct TrainResult {
  struct EpochRow {
    int epoch = 0;
    double train_loss = 0;
    double val_dsc = 0;
    double lr = 0;
  };
  std::vector<EpochRow> log;
  double best_val_dsc = -1.0;
  int best_epoch = -1;
  std::string best_checkpoint;
  std::string log_path;
};

// Per epoch: shuffled mini-batches, total loss, backward, Adam step; then
// validation DSC, plateau scheduling, CSV log row, and best-checkpoint
// persistence. Deterministic in the seed. Throws on non-finite loss.
TrainResult train(model::Model<float>& m, const std::vector<data::Sample>& train_set,
                  const std::vector<data::Sample>& val_set, const TrainConfig& tc,
                  const LossConfig& lc);

}  // namespace mnetsat::train
