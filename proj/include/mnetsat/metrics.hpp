#pragma once

#include <string>
#include <vector>

#include "mnetsat/dataio.hpp"
#include "mnetsat/model.hpp"

namespace mnetsat::eval {

struct ConfusionCounts {
  int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  int64_t total() const { return tp + fp + fn + tn; }
};

struct MetricsRow {
  double dsc = 0, iou = 0, precision = 0, recall = 0;
};

struct MetricsReport {
  struct PerImage {
    std::string id;
    MetricsRow row;
  };
  std::vector<PerImage> per_image;
  MetricsRow aggregate;  // unweighted mean of the per-image rows

  std::string to_csv() const;  // image_id,dsc,iou,pre,rec + AGGREGATE row
};

// 1 where prob >= threshold. Threshold must lie in [0,1].
Tensor<float> binarize(const Tensor<float>& prob, double threshold = 0.5);

// Pixelwise counts; both inputs must be strictly binary and same-shaped.
ConfusionCounts confusion(const Tensor<float>& pred, const Tensor<float>& gt);

// dsc = 2tp/(2tp+fp+fn), iou, precision, recall; empty-vs-empty is 1.0 and
// remaining 0/0 cases resolve to 0.
MetricsRow metrics(const ConfusionCounts& cc);

struct SweepRow {
  double threshold = 0, tpr = 0, fpr = 0, precision = 0, recall = 0;
};

// Pooled-pixel sweep over ascending thresholds.
std::vector<SweepRow> sweep(const std::vector<Tensor<float>>& probs,
                            const std::vector<Tensor<float>>& gts,
                            const std::vector<double>& thresholds);

std::string sweep_csv(const std::vector<SweepRow>& rows);

MetricsReport evaluate(const model::Model<float>& m, const std::vector<data::Sample>& samples,
                       double threshold, int batch_size = 8);

}  // namespace mnetsat::eval
