#include "mnetsat/metrics.hpp"

#include <cstdio>
#include <sstream>

namespace mnetsat::eval {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os << "image_id,dsc,iou,pre,rec\n";
  for (const auto& pi : per_image)
    os << pi.id << ',' << fmt(pi.row.dsc) << ',' << fmt(pi.row.iou) << ',' << fmt(pi.row.precision)
       << ',' << fmt(pi.row.recall) << '\n';
  os << "AGGREGATE," << fmt(aggregate.dsc) << ',' << fmt(aggregate.iou) << ','
     << fmt(aggregate.precision) << ',' << fmt(aggregate.recall) << '\n';
  return os.str();
}

Tensor<float> binarize(const Tensor<float>& prob, double threshold) {
  if (threshold < 0.0 || threshold > 1.0)
    throw std::invalid_argument("threshold " + std::to_string(threshold) + " outside [0,1]");
  Tensor<float> out(prob.shape());
  const float* p = prob.cdata();
  float* q = out.data();
  const int64_t n = prob.numel();
  for (int64_t i = 0; i < n; ++i) q[i] = p[i] >= threshold ? 1.0f : 0.0f;
  return out;
}

ConfusionCounts confusion(const Tensor<float>& pred, const Tensor<float>& gt) {
  if (pred.shape() != gt.shape())
    throw std::invalid_argument("confusion: shapes " + shape_str(pred.shape()) + " vs " +
                                shape_str(gt.shape()));
  const float* p = pred.cdata();
  const float* g = gt.cdata();
  ConfusionCounts cc;
  const int64_t n = pred.numel();
  for (int64_t i = 0; i < n; ++i) {
    if ((p[i] != 0.0f && p[i] != 1.0f) || (g[i] != 0.0f && g[i] != 1.0f))
      throw std::invalid_argument("confusion: non-binary input");
    const bool pp = p[i] == 1.0f, gg = g[i] == 1.0f;
    if (pp && gg)
      ++cc.tp;
    else if (pp && !gg)
      ++cc.fp;
    else if (!pp && gg)
      ++cc.fn;
    else
      ++cc.tn;
  }
  return cc;
}

MetricsRow metrics(const ConfusionCounts& cc) {
  MetricsRow r;
  if (cc.tp + cc.fp + cc.fn == 0) {
    r.dsc = r.iou = r.precision = r.recall = 1.0;
    return r;
  }
  const double tp = static_cast<double>(cc.tp);
  r.dsc = 2.0 * tp / static_cast<double>(2 * cc.tp + cc.fp + cc.fn);
  r.iou = tp / static_cast<double>(cc.tp + cc.fp + cc.fn);
  r.precision = cc.tp + cc.fp > 0 ? tp / static_cast<double>(cc.tp + cc.fp) : 0.0;
  r.recall = cc.tp + cc.fn > 0 ? tp / static_cast<double>(cc.tp + cc.fn) : 0.0;
  return r;
}

std::vector<SweepRow> sweep(const std::vector<Tensor<float>>& probs,
                            const std::vector<Tensor<float>>& gts,
                            const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw std::invalid_argument("sweep: empty threshold list");
  for (size_t i = 1; i < thresholds.size(); ++i)
    if (thresholds[i] < thresholds[i - 1])
      throw std::invalid_argument("sweep: thresholds must ascend");
  if (probs.size() != gts.size())
    throw std::invalid_argument("sweep: probability/mask count mismatch");

  std::vector<SweepRow> rows;
  rows.reserve(thresholds.size());
  for (double t : thresholds) {
    ConfusionCounts cc;
    for (size_t i = 0; i < probs.size(); ++i) {
      const float* p = probs[i].cdata();
      const float* g = gts[i].cdata();
      const int64_t n = probs[i].numel();
      for (int64_t k = 0; k < n; ++k) {
        const bool pp = p[k] >= t, gg = g[k] == 1.0f;
        if (pp && gg)
          ++cc.tp;
        else if (pp)
          ++cc.fp;
        else if (gg)
          ++cc.fn;
        else
          ++cc.tn;
      }
    }
    SweepRow r;
    r.threshold = t;
    r.tpr = cc.tp + cc.fn > 0 ? static_cast<double>(cc.tp) / static_cast<double>(cc.tp + cc.fn) : 0.0;
    r.fpr = cc.fp + cc.tn > 0 ? static_cast<double>(cc.fp) / static_cast<double>(cc.fp + cc.tn) : 0.0;
    const MetricsRow m = metrics(cc);
    r.precision = m.precision;
    r.recall = m.recall;
    rows.push_back(r);
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "threshold,tpr,fpr,precision,recall\n";
  for (const auto& r : rows)
    os << fmt(r.threshold) << ',' << fmt(r.tpr) << ',' << fmt(r.fpr) << ',' << fmt(r.precision)
       << ',' << fmt(r.recall) << '\n';
  return os.str();
}

MetricsReport evaluate(const model::Model<float>& m, const std::vector<data::Sample>& samples,
                       double threshold, int batch_size) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  if (batch_size < 1) throw std::invalid_argument("evaluate: batch size must be >= 1");
  const int64_t H = m.config().input_h, W = m.config().input_w;
  for (const auto& s : samples)
    if (s.image.dim(0) != H || s.image.dim(1) != W)
      throw std::invalid_argument("evaluate: sample '" + s.id + "' extent " +
                                  std::to_string(s.image.dim(0)) + "x" +
                                  std::to_string(s.image.dim(1)) + " does not match model " +
                                  std::to_string(H) + "x" + std::to_string(W));

  MetricsReport report;
  for (size_t start = 0; start < samples.size(); start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(samples.size(), start + static_cast<size_t>(batch_size));
    const int64_t n = static_cast<int64_t>(end - start);
    Tensor<float> batch({n, H, W, 3});
    float* pb = batch.data();
    const int64_t plane = H * W * 3;
    for (int64_t i = 0; i < n; ++i)
      std::copy_n(samples[start + static_cast<size_t>(i)].image.cdata(), plane, pb + i * plane);
    const Tensor<float> probs = m.forward(batch);
    const int64_t mplane = H * W;
    for (int64_t i = 0; i < n; ++i) {
      Tensor<float> prob({H, W, 1});
      std::copy_n(probs.cdata() + i * mplane, mplane, prob.data());
      const Tensor<float> pred = binarize(prob, threshold);
      const ConfusionCounts cc = confusion(pred, samples[start + static_cast<size_t>(i)].mask);
      report.per_image.push_back({samples[start + static_cast<size_t>(i)].id, metrics(cc)});
    }
  }
  MetricsRow agg;
  for (const auto& pi : report.per_image) {
    agg.dsc += pi.row.dsc;
    agg.iou += pi.row.iou;
    agg.precision += pi.row.precision;
    agg.recall += pi.row.recall;
  }
  const double inv = 1.0 / static_cast<double>(report.per_image.size());
  agg.dsc *= inv;
  agg.iou *= inv;
  agg.precision *= inv;
  agg.recall *= inv;
  report.aggregate = agg;
  return report;
}

}  // namespace mnetsat::eval
