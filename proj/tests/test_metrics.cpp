#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "gsdm/io.hpp"
#include "gsdm/metrics.hpp"
#include "gsdm/rng.hpp"

using namespace gsdm;

namespace {

Element make_poly(std::initializer_list<std::pair<double, double>> pts, int cls = 0,
                  ElementKind kind = ElementKind::polygon) {
  Element e;
  e.kind = kind;
  e.class_id = cls;
  e.vertices.resize(static_cast<int>(pts.size()), 2);
  int i = 0;
  for (const auto& [x, y] : pts) {
    e.vertices(i, 0) = x;
    e.vertices(i, 1) = y;
    ++i;
  }
  return e;
}

Element rotated_about_centroid(const Element& e, double deg) {
  const double rad = deg * M_PI / 180.0;
  const Vec2 c = centroid(e);
  Element out = e;
  for (int i = 0; i < e.vertex_count(); ++i) {
    const Vec2 d = e.vertices.row(i).transpose() - c;
    out.vertices(i, 0) = c.x() + std::cos(rad) * d.x() - std::sin(rad) * d.y();
    out.vertices(i, 1) = c.y() + std::sin(rad) * d.x() + std::cos(rad) * d.y();
  }
  return out;
}

Element random_element(RngStream& rng, int n, ElementKind kind) {
  Element e;
  e.kind = kind;
  e.vertices.resize(n, 2);
  if (kind == ElementKind::polygon) {
    std::vector<double> angles(n);
    for (int i = 0; i < n; ++i) angles[i] = rng.uniform(0, 2 * M_PI);
    std::sort(angles.begin(), angles.end());
    for (int i = 0; i < n; ++i) {
      const double r = rng.uniform(0.2, 0.8);
      e.vertices(i, 0) = r * std::cos(angles[i]);
      e.vertices(i, 1) = r * std::sin(angles[i]);
    }
  } else {
    for (int i = 0; i < n; ++i) {
      e.vertices(i, 0) = rng.uniform(-1, 1);
      e.vertices(i, 1) = rng.uniform(-1, 1);
    }
  }
  return e;
}

// Independent brute-force order-aware angle distance: enumerate the
// equivalence variants by hand, align by mean vertex L1, trace edge angles.
// Exact distance ties between variants are possible (axis-separated shapes
// make the L1 sum pairing-independent), so callers compare through
// brute_force_min_distance when the argmin is ambiguous.

std::vector<Element> brute_force_variants(const Element& gt) {
  std::vector<Element> vars;
  if (gt.kind == ElementKind::polyline) {
    vars.push_back(gt);
    Element rev = gt;
    for (int i = 0; i < gt.vertex_count(); ++i)
      rev.vertices.row(i) = gt.vertices.row(gt.vertex_count() - 1 - i);
    vars.push_back(rev);
  } else {
    const int n = gt.vertex_count();
    for (int dir = 0; dir < 2; ++dir)
      for (int shift = 0; shift < n; ++shift) {
        Element v = gt;
        for (int i = 0; i < n; ++i) {
          const int src = dir == 0 ? (shift + i) % n : (shift - i % n + 2 * n) % n;
          v.vertices.row(i) = gt.vertices.row(src % n);
        }
        bool dup = false;
        for (const auto& seen : vars)
          dup = dup || (seen.vertices.array() == v.vertices.array()).all();
        if (!dup) vars.push_back(v);
      }
  }
  return vars;
}

double trace_angle(const Element& pred, const Element& var) {
  const int n = pred.vertex_count();
  const int edges = pred.kind == ElementKind::polygon ? n : n - 1;
  double total = 0.0;
  for (int i = 0; i < edges; ++i) {
    const int j = (i + 1) % n;
    const double pa = std::atan2(pred.vertices(j, 1) - pred.vertices(i, 1),
                                 pred.vertices(j, 0) - pred.vertices(i, 0)) *
                      180.0 / M_PI;
    const double ga = std::atan2(var.vertices(j, 1) - var.vertices(i, 1),
                                 var.vertices(j, 0) - var.vertices(i, 0)) *
                      180.0 / M_PI;
    double diff = std::fmod(std::abs(pa - ga), 360.0);
    if (diff > 180.0) diff = 360.0 - diff;
    total += diff;
  }
  return edges == 0 ? 0.0 : total / edges;
}

double brute_force_oad(const Element& pred, const Element& gt, Element* aligned_out) {
  const std::vector<Element> vars = brute_force_variants(gt);
  double best = std::numeric_limits<double>::infinity();
  Element best_var;
  for (const auto& v : vars) {
    const double d = (pred.vertices - v.vertices).cwiseAbs().sum() / pred.vertex_count();
    if (d < best) {
      best = d;
      best_var = v;
    }
  }
  if (aligned_out) *aligned_out = best_var;
  return trace_angle(pred, best_var);
}

}  // namespace

TEST_CASE("chamfer distance basics") {
  const Element sq = make_poly({{0, 0}, {1, 0}, {1, 1}, {0, 1}});
  CHECK(chamfer_distance(sq, sq) == 0.0);

  Element rev = sq;
  rev.vertices = sq.vertices.colwise().reverse();
  CHECK(chamfer_distance(sq, rev) == 0.0);

  const Element a = make_poly({{0, 0}, {1, 0}}, 0, ElementKind::polyline);
  const Element b = make_poly({{0, 0.3}, {1, 0.3}}, 0, ElementKind::polyline);
  CHECK(chamfer_distance(a, b) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("oad basics: identity and rigid rotation") {
  const Element line =
      make_poly({{-0.5, 0.0}, {-0.1, 0.2}, {0.3, 0.1}, {0.6, 0.4}}, 0,
                ElementKind::polyline);
  CHECK(oad_match(line, line).angle_deg == 0.0);

  const Element rot = rotated_about_centroid(line, 7.0);
  CHECK(oad_match(rot, line).angle_deg == doctest::Approx(7.0).epsilon(1e-6));

  const Element tri = make_poly({{0, 0}, {1, 0}, {0, 1}});
  CHECK_THROWS_AS(oad_match(line, tri), std::invalid_argument);
}

TEST_CASE("oad equals the brute-force variant search on random cases") {
  RngStream rng(17);
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = 2 + trial % 5;
    const ElementKind kind =
        (trial % 2 == 0 && n >= 3) ? ElementKind::polygon : ElementKind::polyline;
    const Element gt = random_element(rng, n, kind);
    Element pred = random_element(rng, n, kind);
    // Mix of near-misses and unrelated shapes.
    if (trial % 3 == 0) {
      pred = gt;
      for (int i = 0; i < n; ++i)
        for (int c = 0; c < 2; ++c) pred.vertices(i, c) += 0.05 * rng.normal();
    }
    const OadMatch got = oad_match(pred, gt);

    // The returned alignment must achieve the exhaustive minimum exactly and
    // its angle must match an independent trace.
    const std::vector<Element> vars = brute_force_variants(gt);
    double dmin = std::numeric_limits<double>::infinity();
    int at_min = 0;
    for (const auto& v : vars) {
      const double d =
          (pred.vertices - v.vertices).cwiseAbs().sum() / pred.vertex_count();
      if (d < dmin) {
        dmin = d;
        at_min = 1;
      } else if (d == dmin) {
        ++at_min;
      }
    }
    const double got_dist =
        (pred.vertices - got.aligned_gt.vertices).cwiseAbs().sum() / pred.vertex_count();
    CHECK(got_dist == dmin);
    CHECK(got.angle_deg == trace_angle(pred, got.aligned_gt));
    if (at_min == 1) {
      // Unique argmin: the full result matches the brute-force search.
      Element aligned;
      const double expect = brute_force_oad(pred, gt, &aligned);
      CHECK(got.angle_deg == expect);
      CHECK((got.aligned_gt.vertices.array() == aligned.vertices.array()).all());
    }
  }
}

TEST_CASE("chamfer is order-blind where oad is not") {
  // Scrambling the vertex order leaves the vertex set (and so the Chamfer
  // distance) unchanged while the traced shape degrades.
  const Element line = make_poly(
      {{-0.8, 0.0}, {-0.4, 0.1}, {0.0, 0.0}, {0.4, -0.1}, {0.8, 0.0}}, 0,
      ElementKind::polyline);
  Element scrambled = line;
  const int perm[] = {2, 0, 4, 1, 3};
  for (int i = 0; i < 5; ++i) scrambled.vertices.row(i) = line.vertices.row(perm[i]);
  CHECK(chamfer_distance(scrambled, line) == 0.0);
  CHECK(oad_match(scrambled, line).angle_deg > 10.0);
}

TEST_CASE("average precision is 1 for exact predictions and degrades monotonically") {
  RngStream rng(21);
  std::vector<ScoredPrediction> preds;
  std::vector<GroundTruth> gts;
  for (int scene = 0; scene < 4; ++scene) {
    const std::string id = "s" + std::to_string(scene);
    for (int k = 0; k < 3; ++k) {
      Element e = random_element(rng, 6, ElementKind::polyline);
      e.class_id = 0;
      gts.push_back({e, id});
      preds.push_back({e, 1.0, id});
    }
  }
  MatchCriterion crit;
  const ApResult exact = average_precision(preds, gts, crit, 0);
  for (double ap : exact.ap_per_level) CHECK(ap == doctest::Approx(1.0));
  CHECK(exact.mean_ap == doctest::Approx(1.0));

  // Perturb: AP per level is non-increasing as thresholds tighten.
  std::vector<ScoredPrediction> noisy = preds;
  RngStream nrng(3);
  for (auto& p : noisy)
    for (int i = 0; i < p.element.vertex_count(); ++i)
      for (int c = 0; c < 2; ++c) p.element.vertices(i, c) += 0.05 * nrng.normal();
  const ApResult ap = average_precision(noisy, gts, crit, 0);
  for (std::size_t i = 1; i < ap.ap_per_level.size(); ++i)
    CHECK(ap.ap_per_level[i] >= ap.ap_per_level[i - 1] - 1e-12);  // coarser is easier
}

TEST_CASE("oad class multiplier loosens the angle gate for the flagged class") {
  // A prediction rotated ~8 deg fails the 5-degree gate at level 0 unless the
  // class multiplier doubles it.
  Element gt = make_poly({{-0.5, -0.1}, {0.0, 0.1}, {0.5, -0.1}}, 2,
                         ElementKind::polyline);
  Element pred = rotated_about_centroid(gt, 8.0);
  std::vector<GroundTruth> gts{{gt, "s0"}};
  std::vector<ScoredPrediction> preds{{pred, 1.0, "s0"}};

  MatchCriterion crit;
  crit.units_per_halfcanvas = 1.0;  // keep chamfer easily satisfied
  const ApResult strict = average_precision(preds, gts, crit, 2);
  CHECK(strict.ap_per_level[0] == 0.0);

  crit.oad_class_multiplier[2] = 2.0;
  const ApResult loose = average_precision(preds, gts, crit, 2);
  CHECK(loose.ap_per_level[0] == doctest::Approx(1.0));
}

TEST_CASE("floorplan metrics on exact, missing-room and missing-corner scenes") {
  PolySet gt;
  gt.scene_id = "f";
  gt.elements = {
      canonicalize(make_poly({{-0.8, -0.8}, {-0.2, -0.8}, {-0.2, -0.2}, {-0.8, -0.2}})),
      canonicalize(make_poly({{0.2, 0.2}, {0.8, 0.2}, {0.8, 0.8}, {0.2, 0.8}})),
      canonicalize(
          make_poly({{0.2, -0.8}, {0.8, -0.8}, {0.8, -0.3}, {0.5, -0.3}, {0.5, -0.2},
                     {0.2, -0.2}})),
  };
  FloorplanCfg cfg;
  const FloorplanPrf exact = floorplan_prf(gt, gt, cfg);
  CHECK(exact.room.f1 == doctest::Approx(1.0));
  CHECK(exact.corner.f1 == doctest::Approx(1.0));
  CHECK(exact.angle.f1 == doctest::Approx(1.0));

  // Drop one of G rooms: recall (G-1)/G, precision 1.
  PolySet missing = gt;
  missing.elements.pop_back();
  const FloorplanPrf m = floorplan_prf(missing, gt, cfg);
  CHECK(m.room.precision == doctest::Approx(1.0));
  CHECK(m.room.recall == doctest::Approx(2.0 / 3.0));

  // Remove one corner of a K-corner scene: F1 = 2(K-1)/(2K-1).
  PolySet gt1;
  gt1.scene_id = "g1";
  gt1.elements = {canonicalize(make_poly(
      {{-0.5, -0.5}, {0.5, -0.5}, {0.5, 0.0}, {0.2, 0.0}, {0.2, 0.5}, {-0.5, 0.5}}))};
  PolySet pred1;
  pred1.scene_id = "g1";
  pred1.elements = {canonicalize(make_poly(
      {{-0.5, -0.5}, {0.5, -0.5}, {0.5, 0.0}, {0.2, 0.0}, {-0.5, 0.0}}))};
  // pred keeps 4 of the 6 gt corners exactly; one extra pred corner misses.
  const FloorplanCounts counts = floorplan_match_counts(pred1, gt1, cfg);
  CHECK(counts.corner_gt == 6);
  CHECK(counts.corner_pred == 5);
  CHECK(counts.corner_tp == 4);
  const FloorplanPrf p1 = floorplan_prf_from_counts(counts);
  CHECK(p1.corner.f1 == doctest::Approx(2.0 * 4 / (5 + 6)));

  // A displaced corner flips precision and recall together.
  PolySet disp = gt1;
  disp.elements[0].vertices(2, 0) += 0.3;
  const FloorplanCounts dc = floorplan_match_counts(disp, gt1, cfg);
  CHECK(dc.corner_tp == 5);
  const FloorplanPrf pd = floorplan_prf_from_counts(dc);
  CHECK(pd.corner.precision == doctest::Approx(5.0 / 6.0));
  CHECK(pd.corner.recall == doctest::Approx(5.0 / 6.0));
}

TEST_CASE("iou rasterization agrees with exact areas on rectangles") {
  const Element a = make_poly({{0, 0}, {1, 0}, {1, 1}, {0, 1}});
  const Element b = make_poly({{0.5, 0}, {1.5, 0}, {1.5, 1}, {0.5, 1}});
  // intersection 0.5, union 1.5
  CHECK(polygon_iou(a, b, 200) == doctest::Approx(1.0 / 3.0).epsilon(0.02));
  CHECK(polygon_iou(a, a, 100) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("dataset evaluation aggregates, is order-invariant and round-trips") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "gsdm_metrics_test";
  fs::create_directories(dir);

  RngStream rng(31);
  std::vector<std::string> gt_files, pred_files;
  for (int scene = 0; scene < 3; ++scene) {
    PolySet gt;
    gt.scene_id = "sc" + std::to_string(scene);
    for (int k = 0; k < 2; ++k) {
      Element e = random_element(rng, 4, ElementKind::polygon);
      e.vertices.array() *= 0.4;
      e.vertices.col(0).array() += (k == 0 ? -0.5 : 0.5);
      e.class_id = k;
      gt.elements.push_back(canonicalize(e));
    }
    PolySet pred = gt;
    const std::string gf = (dir / ("gt" + std::to_string(scene) + ".json")).string();
    const std::string pf = (dir / ("pred" + std::to_string(scene) + ".json")).string();
    save_polyset(gt, gf);
    save_polyset(pred, pf);
    gt_files.push_back(gf);
    pred_files.push_back(pf);
  }

  MatchCriterion crit;
  FloorplanCfg fcfg;
  const DatasetReport r1 = evaluate_dataset(pred_files, gt_files, crit, fcfg);
  CHECK(r1.mean_ap_chamfer == doctest::Approx(1.0));
  CHECK(r1.mean_ap_oad == doctest::Approx(1.0));
  CHECK(r1.floorplan.corner.f1 == doctest::Approx(1.0));

  // Report is invariant to the file order.
  std::vector<std::string> rp = pred_files, rg = gt_files;
  std::reverse(rp.begin(), rp.end());
  std::reverse(rg.begin(), rg.end());
  const DatasetReport r2 = evaluate_dataset(rp, rg, crit, fcfg);
  CHECK(r1.json == r2.json);

  // The JSON document round-trips byte-identically.
  CHECK(nlohmann::json::parse(r1.json).dump(2) == r1.json);

  // Missing scene -> error listing the id.
  PolySet stray;
  stray.scene_id = "other";
  const std::string sf = (dir / "stray.json").string();
  save_polyset(stray, sf);
  std::vector<std::string> bad_preds = pred_files;
  bad_preds[2] = sf;
  CHECK_THROWS_WITH_AS(evaluate_dataset(bad_preds, gt_files, crit, fcfg),
                       "missing prediction scenes: sc2", std::runtime_error);

  // Empty prediction set: precision and recall are reported as zero.
  PolySet empty_pred;
  empty_pred.scene_id = "sc0";
  const std::string ef = (dir / "empty.json").string();
  save_polyset(empty_pred, ef);
  std::vector<std::string> ep{ef}, eg{gt_files[0]};
  const DatasetReport re = evaluate_dataset(ep, eg, crit, fcfg);
  CHECK(re.floorplan.corner.precision == 0.0);
  CHECK(re.floorplan.corner.recall == 0.0);
  fs::remove_all(dir);
}
