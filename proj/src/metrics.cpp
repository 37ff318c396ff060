#include "medvt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace medvt::metrics {

using nlohmann::json;

double iou(const Tensor& pred, const Tensor& gt) {
  check(pred.shape() == gt.shape(),
        "iou: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  int64_t inter = 0, uni = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const bool p = pred.get(i) != 0, q = gt.get(i) != 0;
    inter += (p && q) ? 1 : 0;
    uni += (p || q) ? 1 : 0;
  }
  if (uni == 0) return 1.0;  // both empty: correctly predicted absence
  return static_cast<double>(inter) / static_cast<double>(uni);
}

JStats j_statistics(const std::vector<double>& ious) {
  check(!ious.empty(), "j_statistics: empty input");
  JStats s;
  for (double v : ious) {
    s.mean += v;
    if (v > 0.5) s.recall += 1;
  }
  const auto n = static_cast<double>(ious.size());
  s.mean /= n;
  s.recall /= n;
  check(ious.size() >= 4, "j_statistics: decay needs at least 4 frames");
  // Contiguous index quartiles, bin k = [floor(n*k/4), floor(n*(k+1)/4)).
  auto bin_mean = [&](int k) {
    const size_t b = ious.size() * static_cast<size_t>(k) / 4;
    const size_t e = ious.size() * static_cast<size_t>(k + 1) / 4;
    double m = 0;
    for (size_t i = b; i < e; ++i) m += ious[i];
    return m / static_cast<double>(e - b);
  };
  s.decay = std::max(0.0, bin_mean(0) - bin_mean(3));
  return s;
}

namespace {

// 4-connected contour: a foreground pixel with a background (or out of
// frame) 4-neighbour.
std::vector<std::pair<int64_t, int64_t>> boundary_pixels(const Tensor& mask) {
  const int64_t h = mask.dim(0), w = mask.dim(1);
  std::vector<std::pair<int64_t, int64_t>> out;
  auto fg = [&](int64_t y, int64_t x) {
    if (y < 0 || y >= h || x < 0 || x >= w) return false;
    return mask.get(y * w + x) != 0;
  };
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      if (fg(y, x) && (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1))) out.emplace_back(y, x);
  return out;
}

}  // namespace

double boundary_f(const Tensor& pred, const Tensor& gt, double tolerance_px) {
  check(pred.rank() == 2 && pred.shape() == gt.shape(), "boundary_f: masks must be [H,W] of equal shape");
  const auto bp = boundary_pixels(pred);
  const auto bg = boundary_pixels(gt);
  if (bp.empty() && bg.empty()) return 1.0;
  if (bp.empty() || bg.empty()) return 0.0;
  const int64_t h = pred.dim(0), w = pred.dim(1);
  const auto r = static_cast<int64_t>(std::floor(tolerance_px));
  const double r2 = tolerance_px * tolerance_px;
  auto dilate = [&](const std::vector<std::pair<int64_t, int64_t>>& pts) {
    std::vector<uint8_t> map(static_cast<size_t>(h * w), 0);
    for (const auto& [y, x] : pts)
      for (int64_t dy = -r; dy <= r; ++dy)
        for (int64_t dx = -r; dx <= r; ++dx) {
          if (static_cast<double>(dy * dy + dx * dx) > r2) continue;
          const int64_t yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < h && xx >= 0 && xx < w) map[static_cast<size_t>(yy * w + xx)] = 1;
        }
    return map;
  };
  const auto gt_zone = dilate(bg);
  const auto pred_zone = dilate(bp);
  int64_t matched_p = 0, matched_g = 0;
  for (const auto& [y, x] : bp)
    if (gt_zone[static_cast<size_t>(y * w + x)]) ++matched_p;
  for (const auto& [y, x] : bg)
    if (pred_zone[static_cast<size_t>(y * w + x)]) ++matched_g;
  const double precision = static_cast<double>(matched_p) / static_cast<double>(bp.size());
  const double recall = static_cast<double>(matched_g) / static_cast<double>(bg.size());
  if (precision + recall == 0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double box_iou(const Box& a, const Box& b) {
  const int64_t iy0 = std::max(a.y0, b.y0), ix0 = std::max(a.x0, b.x0);
  const int64_t iy1 = std::min(a.y1, b.y1), ix1 = std::min(a.x1, b.x1);
  const int64_t inter = std::max<int64_t>(0, iy1 - iy0) * std::max<int64_t>(0, ix1 - ix0);
  const int64_t uni = a.area() + b.area() - inter;
  if (uni == 0) return a.empty() && b.empty() ? 1.0 : 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

MocaResult moca_success(const Tensor& pred, const Box& gt_box) {
  check(pred.rank() == 2, "moca_success: pred must be [H,W]");
  const int64_t h = pred.dim(0), w = pred.dim(1);
  // Largest-area 4-connected component.
  std::vector<int32_t> label(static_cast<size_t>(h * w), -1);
  Box best{};
  int64_t best_area = 0;
  std::vector<int64_t> stack;
  int32_t next = 0;
  for (int64_t start = 0; start < h * w; ++start) {
    if (pred.get(start) == 0 || label[static_cast<size_t>(start)] >= 0) continue;
    int64_t area = 0;
    Box box{h, w, 0, 0};
    stack.push_back(start);
    label[static_cast<size_t>(start)] = next;
    while (!stack.empty()) {
      const int64_t p = stack.back();
      stack.pop_back();
      const int64_t y = p / w, x = p % w;
      ++area;
      box.y0 = std::min(box.y0, y);
      box.x0 = std::min(box.x0, x);
      box.y1 = std::max(box.y1, y + 1);
      box.x1 = std::max(box.x1, x + 1);
      const int64_t nb[4] = {p - w, p + w, p - 1, p + 1};
      const bool ok[4] = {y > 0, y + 1 < h, x > 0, x + 1 < w};
      for (int k = 0; k < 4; ++k) {
        if (!ok[k]) continue;
        const int64_t q = nb[k];
        if (pred.get(q) != 0 && label[static_cast<size_t>(q)] < 0) {
          label[static_cast<size_t>(q)] = next;
          stack.push_back(q);
        }
      }
    }
    if (area > best_area) {
      best_area = area;
      best = box;
    }
    ++next;
  }
  MocaResult r;
  r.box_iou = best_area == 0 ? 0.0 : box_iou(best, gt_box);  // empty prediction: IoU 0 at all tau
  const double taus[5] = {0.5, 0.6, 0.7, 0.8, 0.9};
  for (int i = 0; i < 5; ++i) r.hits[static_cast<size_t>(i)] = r.box_iou > taus[i];
  return r;
}

CategoryTable per_category_mean(const std::vector<std::pair<std::string, double>>& video_category_miou) {
  check(!video_category_miou.empty(), "per_category_mean: empty category set");
  std::map<std::string, std::pair<double, int64_t>> acc;
  for (const auto& [cat, v] : video_category_miou) {
    acc[cat].first += v;
    acc[cat].second += 1;
  }
  CategoryTable t;
  for (const auto& [cat, sv] : acc) {
    const double m = sv.first / static_cast<double>(sv.second);
    t.per_category[cat] = m;
    t.overall += m;
  }
  t.overall /= static_cast<double>(t.per_category.size());
  return t;
}

EvalReport evaluate(const std::vector<VideoEval>& videos, double boundary_tolerance_px) {
  check(!videos.empty(), "evaluate: no videos");
  EvalReport rep;
  std::vector<std::pair<std::string, double>> cat_mious;
  int64_t sr_hits[5] = {0, 0, 0, 0, 0};
  int64_t sr_total = 0;
  for (const auto& v : videos) {
    check(!v.pred.empty() && v.pred.size() == v.gt.size(), "evaluate: pred/gt frame counts differ");
    std::vector<double> ious, fs;
    for (size_t f = 0; f < v.pred.size(); ++f) {
      ious.push_back(iou(v.pred[f], v.gt[f]));
      fs.push_back(boundary_f(v.pred[f], v.gt[f], boundary_tolerance_px));
    }
    const JStats js = j_statistics(ious);
    const JStats fstats = j_statistics(fs);
    rep.J_mean += js.mean;
    rep.J_recall += js.recall;
    rep.J_decay += js.decay;
    rep.F_mean += fstats.mean;
    rep.F_recall += fstats.recall;
    rep.F_decay += fstats.decay;
    cat_mious.emplace_back(v.category.empty() ? "all" : v.category, js.mean);
    if (!v.gt_boxes.empty()) {
      check(v.gt_boxes.size() == v.pred.size(), "evaluate: box count mismatch");
      for (size_t f = 0; f < v.pred.size(); ++f) {
        const MocaResult m = moca_success(v.pred[f], v.gt_boxes[f]);
        for (int i = 0; i < 5; ++i) sr_hits[i] += m.hits[static_cast<size_t>(i)] ? 1 : 0;
        ++sr_total;
      }
    }
  }
  const auto n = static_cast<double>(videos.size());
  rep.J_mean /= n;
  rep.J_recall /= n;
  rep.J_decay /= n;
  rep.F_mean /= n;
  rep.F_recall /= n;
  rep.F_decay /= n;
  if (sr_total > 0) {
    rep.has_sr = true;
    for (int i = 0; i < 5; ++i) {
      rep.SR[static_cast<size_t>(i)] = static_cast<double>(sr_hits[i]) / static_cast<double>(sr_total);
      rep.SR_mean += rep.SR[static_cast<size_t>(i)];
    }
    rep.SR_mean /= 5.0;
  }
  rep.categories = per_category_mean(cat_mious);
  return rep;
}

std::string EvalReport::to_json() const {
  json j;
  j["J_mean"] = J_mean;
  j["J_recall"] = J_recall;
  j["J_decay"] = J_decay;
  j["F_mean"] = F_mean;
  j["F_recall"] = F_recall;
  j["F_decay"] = F_decay;
  if (has_sr) {
    j["SR@0.5"] = SR[0];
    j["SR@0.6"] = SR[1];
    j["SR@0.7"] = SR[2];
    j["SR@0.8"] = SR[3];
    j["SR@0.9"] = SR[4];
    j["SR_mean"] = SR_mean;
  }
  json cats;
  for (const auto& [k, v] : categories.per_category) cats[k] = v;
  j["per_category"] = cats;
  j["category_overall"] = categories.overall;
  return j.dump(2);
}

std::string EvalReport::table() const {
  std::ostringstream os;
  auto row = [&](const std::string& name, double v) {
    os << "  " << name;
    for (size_t i = name.size(); i < 14; ++i) os << ' ';
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%8.4f", v);
    os << buf << "\n";
  };
  os << "region similarity (J)\n";
  row("mean", J_mean);
  row("recall", J_recall);
  row("decay", J_decay);
  os << "boundary (F)\n";
  row("mean", F_mean);
  row("recall", F_recall);
  row("decay", F_decay);
  if (has_sr) {
    os << "success rate\n";
    row("SR@0.5", SR[0]);
    row("SR@0.6", SR[1]);
    row("SR@0.7", SR[2]);
    row("SR@0.8", SR[3]);
    row("SR@0.9", SR[4]);
    row("SR_mean", SR_mean);
  }
  os << "per-category mIoU\n";
  for (const auto& [k, v] : categories.per_category) row(k, v);
  row("overall", categories.overall);
  return os.str();
}

}  // namespace medvt::metrics
