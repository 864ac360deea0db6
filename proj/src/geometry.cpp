#include "gsdm/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gsdm {

namespace {

using VertexMat = Eigen::Matrix<double, Eigen::Dynamic, 2>;

bool yx_less(const Vec2& a, const Vec2& b) {
  if (a.y() != b.y()) return a.y() < b.y();
  return a.x() < b.x();
}

VertexMat reversed(const VertexMat& v) {
  return v.colwise().reverse();
}

VertexMat rotated(const VertexMat& v, int shift) {
  const int n = static_cast<int>(v.rows());
  VertexMat out(n, 2);
  for (int i = 0; i < n; ++i) out.row(i) = v.row((i + shift) % n);
  return out;
}

bool rows_equal(const VertexMat& a, const VertexMat& b) {
  return a.rows() == b.rows() && (a.array() == b.array()).all();
}

// Closed storage means the last vertex exactly repeats the first.
bool has_closing_duplicate(const VertexMat& v) {
  return v.rows() >= 2 && v.row(0) == v.row(v.rows() - 1);
}

}  // namespace

int PolySet::total_vertices() const {
  int n = 0;
  for (const auto& e : elements) n += e.vertex_count();
  return n;
}

double signed_area(const Element& e) {
  const auto& v = e.vertices;
  const int n = static_cast<int>(v.rows());
  double twice = 0.0;
  for (int i = 0; i < n; ++i) {
    const int j = (i + 1) % n;
    twice += v(i, 0) * v(j, 1) - v(j, 0) * v(i, 1);
  }
  return 0.5 * twice;
}

Vec2 centroid(const Element& e) {
  return e.vertices.colwise().mean().transpose();
}

Element canonicalize(const Element& raw) {
  Element e = raw;
  if (e.kind == ElementKind::polyline) {
    if (e.vertex_count() < 2) throw std::invalid_argument("polyline needs >= 2 vertices");
    const Vec2 first = e.vertices.row(0).transpose();
    const Vec2 last = e.vertices.row(e.vertex_count() - 1).transpose();
    if (yx_less(last, first)) e.vertices = reversed(e.vertices);
    return e;
  }

  if (e.vertex_count() < 3) throw std::invalid_argument("polygon needs >= 3 vertices");
  const bool closed = has_closing_duplicate(e.vertices);
  VertexMat cycle = closed ? VertexMat(e.vertices.topRows(e.vertex_count() - 1)) : e.vertices;
  if (cycle.rows() < 3 || signed_area(Element{e.kind, e.class_id, cycle}) == 0.0)
    throw std::invalid_argument("degenerate");
  if (signed_area(Element{e.kind, e.class_id, cycle}) < 0.0) cycle = reversed(cycle);

  int best = 0;
  for (int i = 1; i < cycle.rows(); ++i)
    if (yx_less(cycle.row(i).transpose(), cycle.row(best).transpose())) best = i;
  cycle = rotated(cycle, best);

  if (closed) {
    VertexMat out(cycle.rows() + 1, 2);
    out.topRows(cycle.rows()) = cycle;
    out.row(cycle.rows()) = cycle.row(0);
    e.vertices = out;
  } else {
    e.vertices = cycle;
  }
  return e;
}

bool is_canonical(const Element& e) {
  Element c;
  try {
    c = canonicalize(e);
  } catch (const std::invalid_argument&) {
    return false;
  }
  return rows_equal(c.vertices, e.vertices);
}

std::vector<Element> variants(const Element& e) {
  std::vector<Element> out;
  auto push_unique = [&](VertexMat v) {
    for (const auto& seen : out)
      if (rows_equal(seen.vertices, v)) return;
    out.push_back(Element{e.kind, e.class_id, std::move(v)});
  };

  if (e.kind == ElementKind::polyline) {
    push_unique(e.vertices);
    push_unique(reversed(e.vertices));
    return out;
  }

  const bool closed = has_closing_duplicate(e.vertices);
  const VertexMat cycle =
      closed ? VertexMat(e.vertices.topRows(e.vertex_count() - 1)) : e.vertices;
  auto emit = [&](const VertexMat& c) {
    if (!closed) {
      push_unique(c);
      return;
    }
    VertexMat v(c.rows() + 1, 2);
    v.topRows(c.rows()) = c;
    v.row(c.rows()) = c.row(0);
    push_unique(std::move(v));
  };
  const VertexMat flipped = reversed(cycle);
  for (int s = 0; s < cycle.rows(); ++s) {
    emit(rotated(cycle, s));
    emit(rotated(flipped, s));
  }
  return out;
}

double element_distance(const Element& a, const Element& b) {
  if (a.vertex_count() != b.vertex_count())
    throw std::invalid_argument("element_distance: mismatched vertex counts");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& v : variants(b)) {
    const double d = (a.vertices - v.vertices).cwiseAbs().sum() / a.vertex_count();
    best = std::min(best, d);
  }
  return best;
}

std::vector<PolySet> set_permutations(const PolySet& s) {
  const int n = s.size();
  if (n > 6) throw std::invalid_argument("set_permutations: oracle size");
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<PolySet> out;
  do {
    PolySet p;
    p.scene_id = s.scene_id;
    p.elements.reserve(n);
    for (int i : idx) p.elements.push_back(s.elements[i]);
    out.push_back(std::move(p));
  } while (std::next_permutation(idx.begin(), idx.end()));
  return out;
}

Element resample(const Element& e, int count) {
  const int n = e.vertex_count();
  const bool cyclic = e.kind == ElementKind::polygon;
  if (count < (cyclic ? 3 : 2)) throw std::invalid_argument("resample: count too small");
  if (count == n) return e;

  const int segs = cyclic ? n : n - 1;
  std::vector<double> cum(segs + 1, 0.0);
  for (int i = 0; i < segs; ++i) {
    const Vec2 d = (e.vertices.row((i + 1) % n) - e.vertices.row(i)).transpose();
    cum[i + 1] = cum[i] + d.norm();
  }
  const double total = cum[segs];
  Element out = e;
  out.vertices.resize(count, 2);
  if (total == 0.0) {
    for (int k = 0; k < count; ++k) out.vertices.row(k) = e.vertices.row(0);
    return out;
  }
  const int steps = cyclic ? count : count - 1;
  int seg = 0;
  for (int k = 0; k < count; ++k) {
    const double target = total * static_cast<double>(k) / steps;
    while (seg + 1 < segs && cum[seg + 1] < target) ++seg;
    const double len = cum[seg + 1] - cum[seg];
    const double u = len > 0.0 ? (target - cum[seg]) / len : 0.0;
    out.vertices.row(k) =
        (1.0 - u) * e.vertices.row(seg) + u * e.vertices.row((seg + 1) % n);
  }
  if (!cyclic) out.vertices.row(count - 1) = e.vertices.row(n - 1);
  return out;
}

Eigen::VectorXd pack_coords(const PolySet& s) {
  Eigen::VectorXd flat(s.total_coords());
  int k = 0;
  for (const auto& e : s.elements)
    for (int v = 0; v < e.vertex_count(); ++v) {
      flat[k++] = e.vertices(v, 0);
      flat[k++] = e.vertices(v, 1);
    }
  return flat;
}

void unpack_coords(const Eigen::VectorXd& flat, PolySet& s) {
  if (flat.size() != s.total_coords())
    throw std::invalid_argument("unpack_coords: size mismatch");
  int k = 0;
  for (auto& e : s.elements)
    for (int v = 0; v < e.vertex_count(); ++v) {
      e.vertices(v, 0) = flat[k++];
      e.vertices(v, 1) = flat[k++];
    }
}

bool point_in_polygon(const Vec2& p, const Element& poly) {
  const auto& v = poly.vertices;
  const int n = poly.vertex_count();
  bool inside = false;
  for (int i = 0, j = n - 1; i < n; j = i++) {
    const double yi = v(i, 1), yj = v(j, 1), xi = v(i, 0), xj = v(j, 0);
    if ((yi > p.y()) != (yj > p.y())) {
      const double xc = xj + (p.y() - yj) / (yi - yj) * (xi - xj);
      if (p.x() < xc) inside = !inside;
    }
  }
  return inside;
}

}  // namespace gsdm
