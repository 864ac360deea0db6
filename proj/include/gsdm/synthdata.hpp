#pragma once

#include <string>
#include <vector>

#include "gsdm/geometry.hpp"
#include "gsdm/io.hpp"
#include "gsdm/rng.hpp"

namespace gsdm {

enum class SceneProfile { floorplan, map };

struct SceneConfig {
  SceneProfile profile = SceneProfile::floorplan;
  int elements_min = 2;
  int elements_max = 6;
  int grid_resolution = 64;
  double noise_std = 0.05;    // detector-style proposal perturbation
  double rough_radius = 0.08; // rough-annotation circle radius
  int map_vertices = 20;      // per-polyline vertex count (map profile)
  // Floorplan shape pool; subsets let experiments pin vertex counts
  // (rect = 4, l = 6, t = 8 vertices).
  std::vector<std::string> shapes = {"rect", "l", "t"};
  double raster_kernel_px = 0.9;  // Gaussian splat width in pixels

  void validate() const;
};

// Deterministic synthetic scene: floorplan profile packs 2..6 non-overlapping
// rectilinear polygons (rectangles, L- and T-shapes); map profile draws 2..5
// smooth polylines resampled to a fixed vertex count. All elements are
// canonicalized and the set is ordered by the (y,x) of each first vertex.
// Throws std::runtime_error("packing failed") when placement cannot satisfy
// the element minimum.
PolySet gen_scene(const SceneConfig& cfg, RngStream& rng);

// Boundary splatting with a fixed-width Gaussian kernel, clamped to [0,1].
// Row 0 of the grid is y = +1 (the rasterizer flips the Y axis).
DensityGrid rasterize(const PolySet& s, int resolution, double kernel_px = 0.9);

// Each element becomes vertex_count points equally spaced on a circle
// (polygons) or an open arc (polylines) recentered on the element centroid.
Proposal rough_proposal(const PolySet& s, double radius);

// IID Gaussian vertex noise, clamped to the canvas.
Proposal perturb_proposal(const PolySet& s, double noise_std, RngStream& rng);

}  // namespace gsdm
