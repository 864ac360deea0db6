#include "gsdm/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace gsdm {

using nlohmann::json;

std::string to_string(ProposalSource s) {
  switch (s) {
    case ProposalSource::detector: return "detector";
    case ProposalSource::rough_annotation: return "rough_annotation";
    case ProposalSource::ground_truth: return "ground_truth";
  }
  return "ground_truth";
}

ProposalSource proposal_source_from_string(const std::string& s) {
  if (s == "detector") return ProposalSource::detector;
  if (s == "rough_annotation") return ProposalSource::rough_annotation;
  if (s == "ground_truth") return ProposalSource::ground_truth;
  throw std::invalid_argument("unknown proposal source: " + s);
}

namespace {

json element_to_json(const Element& e) {
  json je;
  je["kind"] = e.kind == ElementKind::polygon ? "polygon" : "polyline";
  je["class_id"] = e.class_id;
  json verts = json::array();
  for (int v = 0; v < e.vertex_count(); ++v)
    verts.push_back({e.vertices(v, 0), e.vertices(v, 1)});
  je["vertices"] = std::move(verts);
  return je;
}

Element element_from_json(const json& je) {
  Element e;
  const std::string kind = je.at("kind").get<std::string>();
  if (kind == "polygon")
    e.kind = ElementKind::polygon;
  else if (kind == "polyline")
    e.kind = ElementKind::polyline;
  else
    throw std::invalid_argument("unknown element kind: " + kind);
  e.class_id = je.at("class_id").get<int>();
  const auto& verts = je.at("vertices");
  e.vertices.resize(static_cast<int>(verts.size()), 2);
  for (int v = 0; v < static_cast<int>(verts.size()); ++v) {
    e.vertices(v, 0) = verts[v].at(0).get<double>();
    e.vertices(v, 1) = verts[v].at(1).get<double>();
  }
  return e;
}

json polyset_to_json_obj(const PolySet& s) {
  json j;
  j["scene_id"] = s.scene_id;
  json elems = json::array();
  for (const auto& e : s.elements) elems.push_back(element_to_json(e));
  j["elements"] = std::move(elems);
  return j;
}

PolySet polyset_from_json_obj(const json& j) {
  PolySet s;
  s.scene_id = j.at("scene_id").get<std::string>();
  for (const auto& je : j.at("elements")) s.elements.push_back(element_from_json(je));
  return s;
}

}  // namespace

std::string polyset_to_json(const PolySet& s) {
  return polyset_to_json_obj(s).dump(2);
}

PolySet polyset_from_json(const std::string& text) {
  return polyset_from_json_obj(json::parse(text));
}

void save_polyset(const PolySet& s, const std::string& path) {
  write_text_file(path, polyset_to_json(s) + "\n");
}

PolySet load_polyset(const std::string& path) {
  return polyset_from_json(read_text_file(path));
}

void save_proposal(const Proposal& p, const std::string& path) {
  json j = polyset_to_json_obj(p.elements);
  j["source"] = to_string(p.source);
  write_text_file(path, j.dump(2) + "\n");
}

Proposal load_proposal(const std::string& path) {
  const json j = json::parse(read_text_file(path));
  Proposal p;
  p.elements = polyset_from_json_obj(j);
  p.source = proposal_source_from_string(j.at("source").get<std::string>());
  return p;
}

namespace {

void put_u32(std::ostream& os, std::uint32_t x) {
  unsigned char b[4] = {static_cast<unsigned char>(x & 0xff),
                        static_cast<unsigned char>((x >> 8) & 0xff),
                        static_cast<unsigned char>((x >> 16) & 0xff),
                        static_cast<unsigned char>((x >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

void put_f32(std::ostream& os, float x) {
  std::uint32_t u;
  std::memcpy(&u, &x, 4);
  put_u32(os, u);
}

float get_f32(std::istream& is) {
  const std::uint32_t u = get_u32(is);
  float x;
  std::memcpy(&x, &u, 4);
  return x;
}

constexpr char kGridMagic[] = "PDGRID1";

}  // namespace

void save_grid(const DensityGrid& g, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os.write(kGridMagic, 7);
  put_u32(os, static_cast<std::uint32_t>(g.width));
  put_u32(os, static_cast<std::uint32_t>(g.height));
  for (int r = 0; r < g.height; ++r)
    for (int c = 0; c < g.width; ++c) put_f32(os, static_cast<float>(g.values(r, c)));
  if (!os) throw std::runtime_error("write failed: " + path);
}

DensityGrid load_grid(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[7];
  is.read(magic, 7);
  if (!is || std::memcmp(magic, kGridMagic, 7) != 0)
    throw std::runtime_error("bad grid magic: " + path);
  DensityGrid g;
  g.width = static_cast<int>(get_u32(is));
  g.height = static_cast<int>(get_u32(is));
  if (g.width <= 0 || g.height <= 0) throw std::runtime_error("bad grid extents");
  g.values.resize(g.height, g.width);
  for (int r = 0; r < g.height; ++r)
    for (int c = 0; c < g.width; ++c) g.values(r, c) = get_f32(is);
  if (!is) throw std::runtime_error("truncated grid: " + path);
  return g;
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace gsdm
