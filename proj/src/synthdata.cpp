#include "gsdm/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gsdm {

void SceneConfig::validate() const {
  if (elements_min < 1 || elements_max < elements_min)
    throw std::invalid_argument("scene: bad element count range");
  if (grid_resolution <= 0) throw std::invalid_argument("scene: resolution > 0");
  if (profile == SceneProfile::floorplan && shapes.empty())
    throw std::invalid_argument("scene: empty shape pool");
  if (profile == SceneProfile::map && map_vertices < 2)
    throw std::invalid_argument("scene: map vertices >= 2");
}

namespace {

struct Box {
  double x0, y0, x1, y1;
  bool overlaps(const Box& o, double margin) const {
    return x0 - margin < o.x1 && o.x0 - margin < x1 && y0 - margin < o.y1 &&
           o.y0 - margin < y1;
  }
};

Element rectilinear_shape(const std::string& shape, const Box& b, RngStream& rng) {
  Element e;
  e.kind = ElementKind::polygon;
  auto set = [&](std::initializer_list<std::pair<double, double>> pts) {
    e.vertices.resize(static_cast<int>(pts.size()), 2);
    int i = 0;
    for (const auto& [x, y] : pts) {
      e.vertices(i, 0) = x;
      e.vertices(i, 1) = y;
      ++i;
    }
  };
  if (shape == "rect") {
    set({{b.x0, b.y0}, {b.x1, b.y0}, {b.x1, b.y1}, {b.x0, b.y1}});
  } else if (shape == "l") {
    const double xm = b.x0 + (b.x1 - b.x0) * rng.uniform(0.35, 0.65);
    const double ym = b.y0 + (b.y1 - b.y0) * rng.uniform(0.35, 0.65);
    set({{b.x0, b.y0},
         {b.x1, b.y0},
         {b.x1, ym},
         {xm, ym},
         {xm, b.y1},
         {b.x0, b.y1}});
  } else if (shape == "t") {
    const double ym = b.y0 + (b.y1 - b.y0) * rng.uniform(0.4, 0.6);
    const double xa = b.x0 + (b.x1 - b.x0) * rng.uniform(0.2, 0.35);
    const double xb = b.x0 + (b.x1 - b.x0) * rng.uniform(0.65, 0.8);
    set({{xa, b.y0},
         {xb, b.y0},
         {xb, ym},
         {b.x1, ym},
         {b.x1, b.y1},
         {b.x0, b.y1},
         {b.x0, ym},
         {xa, ym}});
  } else {
    throw std::invalid_argument("unknown shape: " + shape);
  }
  return e;
}

PolySet gen_floorplan(const SceneConfig& cfg, RngStream& rng) {
  const int target = static_cast<int>(rng.uniform_int(cfg.elements_min, cfg.elements_max));
  std::vector<Box> placed;
  PolySet s;
  constexpr int kTriesPerElement = 80;
  constexpr double kMargin = 0.06;
  for (int i = 0; i < target; ++i) {
    bool ok = false;
    for (int attempt = 0; attempt < kTriesPerElement && !ok; ++attempt) {
      const double w = rng.uniform(0.35, 0.75);
      const double h = rng.uniform(0.35, 0.75);
      const double cx = rng.uniform(-0.88 + w / 2, 0.88 - w / 2);
      const double cy = rng.uniform(-0.88 + h / 2, 0.88 - h / 2);
      const Box b{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
      bool clash = false;
      for (const auto& p : placed) clash = clash || b.overlaps(p, kMargin);
      if (clash) continue;
      const std::string& shape =
          cfg.shapes[rng.uniform_int(0, static_cast<std::int64_t>(cfg.shapes.size()) - 1)];
      Element e = rectilinear_shape(shape, b, rng);
      e.class_id = 0;
      s.elements.push_back(canonicalize(e));
      placed.push_back(b);
      ok = true;
    }
    if (!ok && static_cast<int>(s.elements.size()) < cfg.elements_min)
      throw std::runtime_error("packing failed");
    if (!ok) break;
  }
  return s;
}

Element smooth_polyline(const SceneConfig& cfg, RngStream& rng) {
  // Random smooth path: jittered control points swept across the canvas,
  // Catmull-Rom interpolated, then arc-length resampled.
  const int ctrl = 5;
  Eigen::Matrix<double, Eigen::Dynamic, 2> pts(ctrl, 2);
  const bool horizontal = rng.uniform() < 0.5;
  double cross = rng.uniform(-0.7, 0.7);
  for (int i = 0; i < ctrl; ++i) {
    const double along = -0.85 + 1.7 * i / (ctrl - 1);
    cross += rng.uniform(-0.25, 0.25);
    cross = std::clamp(cross, -0.85, 0.85);
    pts(i, 0) = horizontal ? along : cross;
    pts(i, 1) = horizontal ? cross : along;
  }
  // Dense Catmull-Rom sampling between the middle control points.
  std::vector<Vec2> dense;
  const int per_seg = 24;
  for (int seg = 0; seg < ctrl - 1; ++seg) {
    const Vec2 p0 = pts.row(std::max(seg - 1, 0)).transpose();
    const Vec2 p1 = pts.row(seg).transpose();
    const Vec2 p2 = pts.row(seg + 1).transpose();
    const Vec2 p3 = pts.row(std::min(seg + 2, ctrl - 1)).transpose();
    for (int k = 0; k < per_seg; ++k) {
      const double t = static_cast<double>(k) / per_seg;
      const double t2 = t * t, t3 = t2 * t;
      const Vec2 v = 0.5 * ((2.0 * p1) + (-p0 + p2) * t +
                            (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2 +
                            (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3);
      dense.push_back(v);
    }
  }
  dense.push_back(pts.row(ctrl - 1).transpose());

  Element e;
  e.kind = ElementKind::polyline;
  e.vertices.resize(static_cast<int>(dense.size()), 2);
  for (std::size_t i = 0; i < dense.size(); ++i) {
    e.vertices(static_cast<int>(i), 0) = std::clamp(dense[i].x(), -1.0, 1.0);
    e.vertices(static_cast<int>(i), 1) = std::clamp(dense[i].y(), -1.0, 1.0);
  }
  return resample(e, cfg.map_vertices);
}

PolySet gen_map(const SceneConfig& cfg, RngStream& rng) {
  const int target = static_cast<int>(rng.uniform_int(cfg.elements_min, cfg.elements_max));
  PolySet s;
  for (int i = 0; i < target; ++i) {
    Element e = smooth_polyline(cfg, rng);
    e.class_id = static_cast<int>(rng.uniform_int(0, 2));
    s.elements.push_back(canonicalize(e));
  }
  return s;
}

}  // namespace

PolySet gen_scene(const SceneConfig& cfg, RngStream& rng) {
  cfg.validate();
  PolySet s = cfg.profile == SceneProfile::floorplan ? gen_floorplan(cfg, rng)
                                                     : gen_map(cfg, rng);
  std::sort(s.elements.begin(), s.elements.end(), [](const Element& a, const Element& b) {
    if (a.vertices(0, 1) != b.vertices(0, 1)) return a.vertices(0, 1) < b.vertices(0, 1);
    return a.vertices(0, 0) < b.vertices(0, 0);
  });
  return s;
}

DensityGrid rasterize(const PolySet& s, int resolution, double kernel_px) {
  if (resolution <= 0) throw std::invalid_argument("rasterize: resolution > 0");
  DensityGrid g;
  g.width = g.height = resolution;
  g.values.setZero(resolution, resolution);

  const double pitch = 2.0 / resolution;
  const double w = kernel_px * pitch;  // kernel width in scene units
  const double radius = 3.0 * w;
  const double step = pitch / 3.0;

  auto splat = [&](double x, double y, double amount) {
    // Pixel centers: x(c) = -1 + (c + 0.5) pitch, y(r) = 1 - (r + 0.5) pitch.
    const int c0 = std::max(0, static_cast<int>(std::floor((x - radius + 1.0) / pitch - 0.5)));
    const int c1 = std::min(resolution - 1,
                            static_cast<int>(std::ceil((x + radius + 1.0) / pitch - 0.5)));
    const int r0 = std::max(0, static_cast<int>(std::floor((1.0 - y - radius) / pitch - 0.5)));
    const int r1 = std::min(resolution - 1,
                            static_cast<int>(std::ceil((1.0 - y + radius) / pitch - 0.5)));
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        const double px = -1.0 + (c + 0.5) * pitch;
        const double py = 1.0 - (r + 0.5) * pitch;
        const double d2 = (px - x) * (px - x) + (py - y) * (py - y);
        g.values(r, c) += amount * std::exp(-d2 / (2.0 * w * w));
      }
  };

  for (const auto& e : s.elements) {
    const int n = e.vertex_count();
    const int segs = e.kind == ElementKind::polygon ? n : n - 1;
    for (int i = 0; i < segs; ++i) {
      const Vec2 a = e.vertices.row(i).transpose();
      const Vec2 b = e.vertices.row((i + 1) % n).transpose();
      const double len = (b - a).norm();
      const int samples = std::max(1, static_cast<int>(std::ceil(len / step)));
      for (int k = 0; k <= samples; ++k) {
        const double t = static_cast<double>(k) / samples;
        const Vec2 p = (1.0 - t) * a + t * b;
        splat(p.x(), p.y(), 0.35);
      }
    }
  }
  g.values = g.values.cwiseMin(1.0).cwiseMax(0.0);
  return g;
}

Proposal rough_proposal(const PolySet& s, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("rough_proposal: radius > 0");
  Proposal p;
  p.source = ProposalSource::rough_annotation;
  p.elements.scene_id = s.scene_id;
  for (const auto& e : s.elements) {
    const Vec2 c = centroid(e);
    const int n = e.vertex_count();
    Element out = e;
    if (e.kind == ElementKind::polygon) {
      for (int k = 0; k < n; ++k) {
        const double a = 2.0 * M_PI * k / n - M_PI / 2.0;
        out.vertices(k, 0) = c.x() + radius * std::cos(a);
        out.vertices(k, 1) = c.y() + radius * std::sin(a);
      }
    } else {
      // Open half-circle arc, recentered so the point centroid matches.
      for (int k = 0; k < n; ++k) {
        const double a = n == 1 ? 0.0 : M_PI * k / (n - 1);
        out.vertices(k, 0) = radius * std::cos(a);
        out.vertices(k, 1) = radius * std::sin(a);
      }
      const Eigen::RowVector2d mean = out.vertices.colwise().mean();
      out.vertices.rowwise() -= mean;
      out.vertices.col(0).array() += c.x();
      out.vertices.col(1).array() += c.y();
    }
    p.elements.elements.push_back(std::move(out));
  }
  return p;
}

Proposal perturb_proposal(const PolySet& s, double noise_std, RngStream& rng) {
  if (noise_std < 0.0) throw std::invalid_argument("perturb_proposal: noise_std >= 0");
  Proposal p;
  p.source = ProposalSource::detector;
  p.elements = s;
  for (auto& e : p.elements.elements)
    for (int v = 0; v < e.vertex_count(); ++v)
      for (int c = 0; c < 2; ++c)
        e.vertices(v, c) =
            std::clamp(e.vertices(v, c) + noise_std * rng.normal(), -1.0, 1.0);
  return p;
}

}  // namespace gsdm
