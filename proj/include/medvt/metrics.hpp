#pragma once

#include <map>
#include <string>
#include <vector>

#include "medvt/synthclip.hpp"
#include "medvt/tensor.hpp"

namespace medvt::metrics {

using synth::Box;

// Region similarity |intersection| / |union| over binary [H,W] masks
// (nonzero = foreground). Both-empty is defined as 1 (correctly predicted
// absence).
double iou(const Tensor& pred, const Tensor& gt);

struct JStats {
  double mean = 0, recall = 0, decay = 0;
};

// mean = average IoU; recall = fraction of frames with IoU > 0.5; decay =
// mean of the first index quartile minus mean of the last, clamped at 0.
// Needs >= 4 frames for the decay quartiles.
JStats j_statistics(const std::vector<double>& per_frame_ious);

// Boundary F-measure: 4-connected contour pixels, precision/recall with
// dilation-by-tolerance matching (euclidean radius), F = 2PR/(P+R).
double boundary_f(const Tensor& pred, const Tensor& gt, double tolerance_px = 1.0);

// Largest-area 4-connected component of pred -> tight box -> box IoU against
// the groundtruth box; a hit requires IoU strictly above tau.
struct MocaResult {
  double box_iou = 0;
  std::array<bool, 5> hits{};  // tau in {0.5, 0.6, 0.7, 0.8, 0.9}
};
MocaResult moca_success(const Tensor& pred, const Box& gt_box);
double box_iou(const Box& a, const Box& b);

struct CategoryTable {
  std::map<std::string, double> per_category;
  double overall = 0;  // unweighted mean of category means
};
CategoryTable per_category_mean(const std::vector<std::pair<std::string, double>>& video_category_miou);

struct VideoEval {
  std::vector<Tensor> pred;  // per-frame [H,W] class masks
  std::vector<Tensor> gt;
  std::vector<Box> gt_boxes;  // optional; enables the SR rows
  std::string category;
};

struct EvalReport {
  double J_mean = 0, J_recall = 0, J_decay = 0;
  double F_mean = 0, F_recall = 0, F_decay = 0;
  std::array<double, 5> SR{};  // tau 0.5 .. 0.9
  double SR_mean = 0;
  bool has_sr = false;
  CategoryTable categories;

  std::string to_json() const;
  std::string table() const;  // aligned human-readable text
};

EvalReport evaluate(const std::vector<VideoEval>& videos, double boundary_tolerance_px = 1.0);

}  // namespace medvt::metrics
