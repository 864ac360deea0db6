#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

namespace gsdm {

using Vec2 = Eigen::Vector2d;

// Coordinate convention: mathematical Y-up frame, canvas [-1,1]^2.
// CCW orientation == positive shoelace area. Rasterization flips Y.

enum class ElementKind { polygon, polyline };

struct Element {
  ElementKind kind = ElementKind::polygon;
  int class_id = 0;
  // Vertex sequence, one row per vertex (x, y). Polygons are stored open
  // (no repeated closing vertex) unless the producer chose otherwise;
  // both storage conventions are handled by variants().
  Eigen::Matrix<double, Eigen::Dynamic, 2> vertices;

  int vertex_count() const { return static_cast<int>(vertices.rows()); }
};

struct PolySet {
  std::string scene_id;
  std::vector<Element> elements;

  int size() const { return static_cast<int>(elements.size()); }
  int total_vertices() const;
  int total_coords() const { return 2 * total_vertices(); }
};

// Shoelace area of the vertex cycle (positive for CCW).
double signed_area(const Element& e);

Vec2 centroid(const Element& e);

// Reorients polygons CCW then rotates so the (y,x)-lexicographic minimum
// vertex comes first; reverses polylines so the (y,x)-minimal endpoint
// leads. Throws std::invalid_argument("degenerate") for zero-area polygons.
Element canonicalize(const Element& raw);

bool is_canonical(const Element& e);

// All order-equivalent vertex sequences: {forward, reversed} for a
// polyline; every cyclic shift in both orientations for a polygon,
// deduplicated by exact sequence equality. A polygon stored with a
// repeated closing vertex keeps that closure in each variant.
std::vector<Element> variants(const Element& e);

// min over variants(b) of the mean per-vertex L1 distance to a, where the
// per-vertex distance is |dx| + |dy|. Requires equal vertex counts.
double element_distance(const Element& a, const Element& b);

// All N! element orderings. Test oracle only; throws for N > 6.
std::vector<PolySet> set_permutations(const PolySet& s);

// Uniform arc-length resampling to `count` vertices (cyclic for polygons,
// endpoint-preserving for polylines).
Element resample(const Element& e, int count);

// Flat coordinate view helpers shared by the noise processes: coordinates
// are packed element by element, vertex by vertex, x before y.
Eigen::VectorXd pack_coords(const PolySet& s);
void unpack_coords(const Eigen::VectorXd& flat, PolySet& s);

bool point_in_polygon(const Vec2& p, const Element& poly);

}  // namespace gsdm
