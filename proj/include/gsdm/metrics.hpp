#pragma once

#include <map>
#include <string>
#include <vector>

#include "gsdm/geometry.hpp"

namespace gsdm {

// Matching thresholds for the detection-style AP. Chamfer thresholds are in
// scene units; the canvas [-1,1] spans 2 * units_per_halfcanvas units. OAD
// thresholds (degrees) augment the criterion when present; per-class
// multipliers loosen the OAD test for hard classes.
struct MatchCriterion {
  std::vector<double> chamfer_thresholds{0.5, 1.0, 1.5};
  std::vector<double> oad_thresholds{5.0, 10.0, 15.0};
  std::map<int, double> oad_class_multiplier;
  double units_per_halfcanvas = 15.0;
  bool use_oad = true;

  void validate() const;
  double oad_multiplier(int class_id) const {
    auto it = oad_class_multiplier.find(class_id);
    return it == oad_class_multiplier.end() ? 1.0 : it->second;
  }
};

// Symmetric vertex-set Chamfer distance (normalized canvas units): mean
// nearest-neighbour distance in both directions, halved.
double chamfer_distance(const Element& a, const Element& b);

struct OadMatch {
  Element aligned_gt;      // gt variant minimizing mean vertex L1 to pred
  double angle_deg = 0.0;  // mean absolute successive-edge direction gap
};

// Order-aware angle distance after optimal one-to-one vertex alignment.
// Requires equal vertex counts (resample upstream).
OadMatch oad_match(const Element& pred, const Element& gt);

struct ScoredPrediction {
  Element element;
  double confidence = 1.0;
  std::string scene_id;
};

struct GroundTruth {
  Element element;
  std::string scene_id;
};

struct ApResult {
  std::vector<double> ap_per_level;
  double mean_ap = 0.0;
};

// Score-descending greedy one-to-one matching per threshold level; the
// precision-recall curve is integrated with all-point interpolation.
ApResult average_precision(const std::vector<ScoredPrediction>& preds,
                           const std::vector<GroundTruth>& gts,
                           const MatchCriterion& crit, int class_id);

struct PrfRow {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct FloorplanCfg {
  double corner_tol = 0.04;     // normalized units
  double angle_tol_deg = 5.0;   // interior-angle bisector direction gap
  double room_iou = 0.5;
  int iou_samples = 96;         // rasterized IoU resolution per axis
};

// Raw match counts so datasets can micro-average.
struct FloorplanCounts {
  int room_tp = 0, room_pred = 0, room_gt = 0;
  int corner_tp = 0, corner_pred = 0, corner_gt = 0;
  int angle_tp = 0;

  FloorplanCounts& operator+=(const FloorplanCounts& o);
};

struct FloorplanPrf {
  PrfRow room, corner, angle;
};

FloorplanCounts floorplan_match_counts(const PolySet& pred, const PolySet& gt,
                                       const FloorplanCfg& cfg);
FloorplanPrf floorplan_prf_from_counts(const FloorplanCounts& c);
FloorplanPrf floorplan_prf(const PolySet& pred, const PolySet& gt, const FloorplanCfg& cfg);

// Rasterized polygon IoU (point-in-polygon sampling over the union bbox).
double polygon_iou(const Element& a, const Element& b, int samples = 96);

struct DatasetReport {
  std::string json;  // serialized report document
  double mean_ap_chamfer = 0.0;
  double mean_ap_oad = 0.0;
  FloorplanPrf floorplan;
};

// Aggregates per-scene metrics over aligned scene files; throws listing the
// ids when a prediction is missing. Scene order does not affect the report.
DatasetReport evaluate_dataset(const std::vector<std::string>& pred_files,
                               const std::vector<std::string>& gt_files,
                               const MatchCriterion& crit, const FloorplanCfg& fcfg);

}  // namespace gsdm
