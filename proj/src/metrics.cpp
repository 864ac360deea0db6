#include "gsdm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "gsdm/io.hpp"

namespace gsdm {

void MatchCriterion::validate() const {
  if (chamfer_thresholds.empty())
    throw std::invalid_argument("criterion: need chamfer thresholds");
  for (std::size_t i = 0; i < chamfer_thresholds.size(); ++i) {
    if (chamfer_thresholds[i] <= 0.0)
      throw std::invalid_argument("criterion: thresholds must be positive");
    if (i > 0 && chamfer_thresholds[i] <= chamfer_thresholds[i - 1])
      throw std::invalid_argument("criterion: thresholds must ascend");
  }
  if (use_oad && oad_thresholds.size() != chamfer_thresholds.size())
    throw std::invalid_argument("criterion: oad list must match chamfer list");
}

double chamfer_distance(const Element& a, const Element& b) {
  if (a.vertex_count() == 0 || b.vertex_count() == 0)
    throw std::invalid_argument("chamfer: empty element");
  auto one_way = [](const Element& from, const Element& to) {
    double sum = 0.0;
    for (int i = 0; i < from.vertex_count(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < to.vertex_count(); ++j)
        best = std::min(best,
                        (from.vertices.row(i) - to.vertices.row(j)).norm());
      sum += best;
    }
    return sum / from.vertex_count();
  };
  return 0.5 * (one_way(a, b) + one_way(b, a));
}

namespace {

double edge_angle_deg(const Eigen::RowVector2d& a, const Eigen::RowVector2d& b) {
  return std::atan2(b.y() - a.y(), b.x() - a.x()) * 180.0 / M_PI;
}

double circular_diff_deg(double a, double b) {
  double d = std::fmod(std::abs(a - b), 360.0);
  return d > 180.0 ? 360.0 - d : d;
}

std::vector<double> edge_angles(const Element& e) {
  const int n = e.vertex_count();
  const int edges = e.kind == ElementKind::polygon ? n : n - 1;
  std::vector<double> out(edges);
  for (int i = 0; i < edges; ++i)
    out[i] = edge_angle_deg(e.vertices.row(i), e.vertices.row((i + 1) % n));
  return out;
}

}  // namespace

OadMatch oad_match(const Element& pred, const Element& gt) {
  if (pred.vertex_count() != gt.vertex_count())
    throw std::invalid_argument("oad_match: mismatched vertex counts");
  OadMatch out;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& var : variants(gt)) {
    const double d =
        (pred.vertices - var.vertices).cwiseAbs().sum() / pred.vertex_count();
    if (d < best) {
      best = d;
      out.aligned_gt = var;
    }
  }
  const std::vector<double> pa = edge_angles(pred);
  const std::vector<double> ga = edge_angles(out.aligned_gt);
  double sum = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) sum += circular_diff_deg(pa[i], ga[i]);
  out.angle_deg = pa.empty() ? 0.0 : sum / pa.size();
  return out;
}

namespace {

struct MatchRecord {
  double confidence;
  bool tp;
};

// All-point interpolated AP from confidence-ordered TP/FP flags.
double integrate_ap(std::vector<MatchRecord> records, int total_gt) {
  if (total_gt == 0) return 0.0;
  std::stable_sort(records.begin(), records.end(),
                   [](const MatchRecord& a, const MatchRecord& b) {
                     return a.confidence > b.confidence;
                   });
  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (const auto& r : records) {
    r.tp ? ++tp : ++fp;
    precision.push_back(double(tp) / (tp + fp));
    recall.push_back(double(tp) / total_gt);
  }
  // precision envelope
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
    precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

}  // namespace

ApResult average_precision(const std::vector<ScoredPrediction>& preds,
                           const std::vector<GroundTruth>& gts,
                           const MatchCriterion& crit, int class_id) {
  crit.validate();
  const double scale = crit.units_per_halfcanvas;

  std::vector<const ScoredPrediction*> ps;
  for (const auto& p : preds)
    if (p.element.class_id == class_id) ps.push_back(&p);
  std::stable_sort(ps.begin(), ps.end(), [](const auto* a, const auto* b) {
    return a->confidence > b->confidence;
  });
  std::map<std::string, std::vector<const GroundTruth*>> gt_by_scene;
  int total_gt = 0;
  for (const auto& g : gts)
    if (g.element.class_id == class_id) {
      gt_by_scene[g.scene_id].push_back(&g);
      ++total_gt;
    }

  ApResult result;
  for (std::size_t level = 0; level < crit.chamfer_thresholds.size(); ++level) {
    const double chamfer_thr = crit.chamfer_thresholds[level];
    const double oad_thr =
        crit.use_oad ? crit.oad_thresholds[level] * crit.oad_multiplier(class_id)
                     : 0.0;
    std::map<const GroundTruth*, bool> used;
    std::vector<MatchRecord> records;
    for (const ScoredPrediction* p : ps) {
      const auto it = gt_by_scene.find(p->scene_id);
      bool tp = false;
      if (it != gt_by_scene.end()) {
        const GroundTruth* best = nullptr;
        double best_d = std::numeric_limits<double>::infinity();
        for (const GroundTruth* g : it->second) {
          if (used[g]) continue;
          const double d = chamfer_distance(p->element, g->element) * scale;
          if (d < best_d) {
            best_d = d;
            best = g;
          }
        }
        if (best != nullptr && best_d <= chamfer_thr) {
          bool angle_ok = true;
          if (crit.use_oad) {
            const Element gt_rs =
                best->element.vertex_count() == p->element.vertex_count()
                    ? best->element
                    : resample(best->element, p->element.vertex_count());
            angle_ok = oad_match(p->element, gt_rs).angle_deg <= oad_thr;
          }
          if (angle_ok) {
            tp = true;
            used[best] = true;
          }
        }
      }
      records.push_back({p->confidence, tp});
    }
    result.ap_per_level.push_back(integrate_ap(std::move(records), total_gt));
  }
  result.mean_ap = 0.0;
  for (double ap : result.ap_per_level) result.mean_ap += ap;
  if (!result.ap_per_level.empty()) result.mean_ap /= result.ap_per_level.size();
  return result;
}

FloorplanCounts& FloorplanCounts::operator+=(const FloorplanCounts& o) {
  room_tp += o.room_tp;
  room_pred += o.room_pred;
  room_gt += o.room_gt;
  corner_tp += o.corner_tp;
  corner_pred += o.corner_pred;
  corner_gt += o.corner_gt;
  angle_tp += o.angle_tp;
  return *this;
}

double polygon_iou(const Element& a, const Element& b, int samples) {
  const double ax0 = a.vertices.col(0).minCoeff(), ax1 = a.vertices.col(0).maxCoeff();
  const double ay0 = a.vertices.col(1).minCoeff(), ay1 = a.vertices.col(1).maxCoeff();
  const double bx0 = b.vertices.col(0).minCoeff(), bx1 = b.vertices.col(0).maxCoeff();
  const double by0 = b.vertices.col(1).minCoeff(), by1 = b.vertices.col(1).maxCoeff();
  const double x0 = std::min(ax0, bx0), x1 = std::max(ax1, bx1);
  const double y0 = std::min(ay0, by0), y1 = std::max(ay1, by1);
  if (!(x1 > x0 && y1 > y0)) return 0.0;
  int inter = 0, uni = 0;
  for (int r = 0; r < samples; ++r)
    for (int c = 0; c < samples; ++c) {
      const Vec2 p(x0 + (c + 0.5) * (x1 - x0) / samples,
                   y0 + (r + 0.5) * (y1 - y0) / samples);
      const bool ina = point_in_polygon(p, a);
      const bool inb = point_in_polygon(p, b);
      inter += ina && inb;
      uni += ina || inb;
    }
  return uni == 0 ? 0.0 : double(inter) / uni;
}

namespace {

struct Corner {
  Vec2 pos;
  double bisector_deg;
};

std::vector<Corner> polygon_corners(const PolySet& s) {
  std::vector<Corner> out;
  for (const auto& e : s.elements) {
    if (e.kind != ElementKind::polygon) continue;
    const int n = e.vertex_count();
    for (int i = 0; i < n; ++i) {
      const Vec2 v = e.vertices.row(i).transpose();
      const Vec2 prev = e.vertices.row((i + n - 1) % n).transpose();
      const Vec2 next = e.vertices.row((i + 1) % n).transpose();
      Vec2 d1 = (prev - v).normalized();
      Vec2 d2 = (next - v).normalized();
      Vec2 bis = d1 + d2;
      if (bis.norm() < 1e-9) bis = Vec2(-d2.y(), d2.x());  // straight corner
      out.push_back({v, std::atan2(bis.y(), bis.x()) * 180.0 / M_PI});
    }
  }
  return out;
}

}  // namespace

FloorplanCounts floorplan_match_counts(const PolySet& pred, const PolySet& gt,
                                       const FloorplanCfg& cfg) {
  FloorplanCounts counts;

  // Corner level: greedy nearest matching within the distance tolerance;
  // angle level additionally requires the interior-angle bisector direction
  // to agree.
  const std::vector<Corner> pc = polygon_corners(pred);
  const std::vector<Corner> gc = polygon_corners(gt);
  counts.corner_pred = static_cast<int>(pc.size());
  counts.corner_gt = static_cast<int>(gc.size());
  struct Pair {
    double d;
    int p, g;
  };
  std::vector<Pair> pairs;
  for (int p = 0; p < static_cast<int>(pc.size()); ++p)
    for (int g = 0; g < static_cast<int>(gc.size()); ++g) {
      const double d = (pc[p].pos - gc[g].pos).norm();
      if (d <= cfg.corner_tol) pairs.push_back({d, p, g});
    }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.d != b.d) return a.d < b.d;
    if (a.p != b.p) return a.p < b.p;
    return a.g < b.g;
  });
  std::vector<bool> pused(pc.size(), false), gused(gc.size(), false);
  for (const auto& pr : pairs) {
    if (pused[pr.p] || gused[pr.g]) continue;
    pused[pr.p] = true;
    gused[pr.g] = true;
    ++counts.corner_tp;
    if (circular_diff_deg(pc[pr.p].bisector_deg, gc[pr.g].bisector_deg) <=
        cfg.angle_tol_deg)
      ++counts.angle_tp;
  }

  // Room level: one-to-one polygon matching by IoU.
  std::vector<const Element*> prooms, grooms;
  for (const auto& e : pred.elements)
    if (e.kind == ElementKind::polygon) prooms.push_back(&e);
  for (const auto& e : gt.elements)
    if (e.kind == ElementKind::polygon) grooms.push_back(&e);
  counts.room_pred = static_cast<int>(prooms.size());
  counts.room_gt = static_cast<int>(grooms.size());
  struct IouPair {
    double iou;
    int p, g;
  };
  std::vector<IouPair> ious;
  for (int p = 0; p < static_cast<int>(prooms.size()); ++p)
    for (int g = 0; g < static_cast<int>(grooms.size()); ++g) {
      const double iou = polygon_iou(*prooms[p], *grooms[g], cfg.iou_samples);
      if (iou >= cfg.room_iou) ious.push_back({iou, p, g});
    }
  std::sort(ious.begin(), ious.end(), [](const IouPair& a, const IouPair& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.p != b.p) return a.p < b.p;
    return a.g < b.g;
  });
  std::vector<bool> rp(prooms.size(), false), rg(grooms.size(), false);
  for (const auto& pr : ious) {
    if (rp[pr.p] || rg[pr.g]) continue;
    rp[pr.p] = true;
    rg[pr.g] = true;
    ++counts.room_tp;
  }
  return counts;
}

namespace {

PrfRow prf(int tp, int pred, int gt) {
  PrfRow row;
  row.precision = pred == 0 ? 0.0 : double(tp) / pred;
  row.recall = gt == 0 ? 0.0 : double(tp) / gt;
  row.f1 = (row.precision + row.recall) == 0.0
               ? 0.0
               : 2.0 * row.precision * row.recall / (row.precision + row.recall);
  return row;
}

}  // namespace

FloorplanPrf floorplan_prf_from_counts(const FloorplanCounts& c) {
  FloorplanPrf out;
  out.room = prf(c.room_tp, c.room_pred, c.room_gt);
  out.corner = prf(c.corner_tp, c.corner_pred, c.corner_gt);
  out.angle = prf(c.angle_tp, c.corner_pred, c.corner_gt);
  return out;
}

FloorplanPrf floorplan_prf(const PolySet& pred, const PolySet& gt,
                           const FloorplanCfg& cfg) {
  return floorplan_prf_from_counts(floorplan_match_counts(pred, gt, cfg));
}

DatasetReport evaluate_dataset(const std::vector<std::string>& pred_files,
                               const std::vector<std::string>& gt_files,
                               const MatchCriterion& crit, const FloorplanCfg& fcfg) {
  if (pred_files.size() != gt_files.size())
    throw std::invalid_argument("evaluate_dataset: file list size mismatch");

  std::map<std::string, PolySet> preds, gts;
  for (const auto& f : pred_files) {
    PolySet s = load_polyset(f);
    preds.emplace(s.scene_id, std::move(s));
  }
  for (const auto& f : gt_files) {
    PolySet s = load_polyset(f);
    gts.emplace(s.scene_id, std::move(s));
  }
  std::vector<std::string> missing;
  for (const auto& [id, g] : gts)
    if (preds.find(id) == preds.end()) missing.push_back(id);
  if (!missing.empty()) {
    std::string msg = "missing prediction scenes:";
    for (const auto& id : missing) msg += " " + id;
    throw std::runtime_error(msg);
  }

  FloorplanCounts counts;
  std::vector<ScoredPrediction> sp;
  std::vector<GroundTruth> sg;
  std::set<int> classes;
  for (const auto& [id, g] : gts) {
    const PolySet& p = preds.at(id);
    counts += floorplan_match_counts(p, g, fcfg);
    for (const auto& e : p.elements) sp.push_back({e, 1.0, id});
    for (const auto& e : g.elements) {
      sg.push_back({e, id});
      classes.insert(e.class_id);
    }
  }

  DatasetReport report;
  report.floorplan = floorplan_prf_from_counts(counts);

  nlohmann::json j;
  MatchCriterion chamfer_only = crit;
  chamfer_only.use_oad = false;
  nlohmann::json per_class = nlohmann::json::object();
  double map_oad = 0.0, map_cd = 0.0;
  for (int cls : classes) {
    const ApResult with_oad = average_precision(sp, sg, crit, cls);
    const ApResult cd = average_precision(sp, sg, chamfer_only, cls);
    nlohmann::json row;
    row["ap_chamfer"] = cd.mean_ap;
    row["ap_chamfer_levels"] = cd.ap_per_level;
    row["ap_oad"] = with_oad.mean_ap;
    row["ap_oad_levels"] = with_oad.ap_per_level;
    per_class[std::to_string(cls)] = std::move(row);
    map_oad += with_oad.mean_ap;
    map_cd += cd.mean_ap;
  }
  if (!classes.empty()) {
    map_oad /= classes.size();
    map_cd /= classes.size();
  }
  report.mean_ap_chamfer = map_cd;
  report.mean_ap_oad = map_oad;

  j["per_class"] = std::move(per_class);
  j["levels"] = crit.chamfer_thresholds;
  j["mAP"] = map_cd;
  j["mAP_oad"] = map_oad;
  nlohmann::json fp;
  auto put = [](const PrfRow& r) {
    return nlohmann::json{{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}};
  };
  fp["room"] = put(report.floorplan.room);
  fp["corner"] = put(report.floorplan.corner);
  fp["angle"] = put(report.floorplan.angle);
  fp["scenes"] = static_cast<int>(gts.size());
  j["floorplan"] = std::move(fp);
  report.json = j.dump(2);
  return report;
}

}  // namespace gsdm
