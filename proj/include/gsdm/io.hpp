#pragma once

#include <Eigen/Core>
#include <string>

#include "gsdm/geometry.hpp"

namespace gsdm {

// Rasterized condition y: row-major scalar occupancy in [0,1]. Row 0 is the
// top of the image (y = +1 in scene coordinates).
struct DensityGrid {
  int width = 0;
  int height = 0;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> values;
};

enum class ProposalSource { detector, rough_annotation, ground_truth };

struct Proposal {
  PolySet elements;
  ProposalSource source = ProposalSource::ground_truth;
};

std::string to_string(ProposalSource s);
ProposalSource proposal_source_from_string(const std::string& s);

// PolySet file format (shared project-wide): UTF-8 JSON
//   {"scene_id": str, "elements": [{"kind": "polygon"|"polyline",
//    "class_id": int, "vertices": [[x,y],...]}]}
std::string polyset_to_json(const PolySet& s);
PolySet polyset_from_json(const std::string& text);
void save_polyset(const PolySet& s, const std::string& path);
PolySet load_polyset(const std::string& path);

// Proposal files add a "source" field to the PolySet document.
void save_proposal(const Proposal& p, const std::string& path);
Proposal load_proposal(const std::string& path);

// DensityGrid file: magic "PDGRID1", u32 LE width, u32 LE height,
// f32 LE row-major values.
void save_grid(const DensityGrid& g, const std::string& path);
DensityGrid load_grid(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace gsdm
