#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "eit/error.hpp"
#include "eit/log.hpp"

namespace eit {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

inline Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
inline double norm(Point p) { return std::hypot(p.x, p.y); }

/// Electrodes sit on the unit circle, centred at angles 2*pi*l/L, each
/// covering an arc of coverage*2*pi/L.
struct ElectrodeLayout {
  int count = 16;
  double coverage = 0.5;
  std::vector<double> contact_impedance;

  static ElectrodeLayout uniform(int count, double coverage, double impedance) {
    return {count, coverage, std::vector<double>(static_cast<std::size_t>(std::max(count, 0)), impedance)};
  }

  void validate() const {
    if (count < 2) throw ConfigError("electrode count must be at least 2");
    if (!(coverage > 0.0 && coverage < 1.0)) throw ConfigError("electrode coverage must lie in (0,1)");
    if (contact_impedance.size() != static_cast<std::size_t>(count))
      throw ConfigError("expected one contact impedance per electrode");
    for (double z : contact_impedance)
      if (!(z > 0.0) || !std::isfinite(z)) throw ConfigError("contact impedances must be positive and finite");
  }

  double center_angle(int l) const { return 2.0 * std::numbers::pi * l / count; }
  double half_width() const { return coverage * std::numbers::pi / count; }
};

struct BoundaryEdge {
  std::array<int, 2> nodes{};
  /// Polar angle of the chord midpoint, in (-pi, pi].
  double angle = 0.0;
  /// Electrode index, or -1 for the insulated part of the boundary.
  int electrode = -1;

  friend bool operator==(const BoundaryEdge&, const BoundaryEdge&) = default;
};

/// Conforming P1 triangulation of the unit disk. Immutable after construction
/// by convention; every accessor is const.
struct Mesh {
  std::vector<Point> nodes;
  std::vector<std::array<int, 3>> triangles;
  std::vector<BoundaryEdge> boundary;

  friend bool operator==(const Mesh&, const Mesh&) = default;

  std::size_t num_nodes() const { return nodes.size(); }
  std::size_t num_triangles() const { return triangles.size(); }

  int num_electrodes() const {
    int l = -1;
    for (const auto& e : boundary) l = std::max(l, e.electrode);
    return l + 1;
  }

  double signed_area(std::size_t t) const {
    const auto& tri = triangles[t];
    const Point a = nodes[tri[0]], b = nodes[tri[1]], c = nodes[tri[2]];
    return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
  }

  double area(std::size_t t) const { return std::abs(signed_area(t)); }

  double total_area() const {
    double s = 0.0;
    for (std::size_t t = 0; t < triangles.size(); ++t) s += area(t);
    return s;
  }

  Point centroid(std::size_t t) const {
    const auto& tri = triangles[t];
    return {(nodes[tri[0]].x + nodes[tri[1]].x + nodes[tri[2]].x) / 3.0,
            (nodes[tri[0]].y + nodes[tri[1]].y + nodes[tri[2]].y) / 3.0};
  }

  double edge_length(const BoundaryEdge& e) const { return norm(nodes[e.nodes[1]] - nodes[e.nodes[0]]); }

  /// Largest boundary edge length; used as the mesh size in tolerances.
  double max_boundary_edge() const {
    double h = 0.0;
    for (const auto& e : boundary) h = std::max(h, edge_length(e));
    return h;
  }
};

inline double boundary_edge_angle(const Mesh& mesh, int n0, int n1) {
  const Point a = mesh.nodes[n0], b = mesh.nodes[n1];
  return std::atan2(0.5 * (a.y + b.y), 0.5 * (a.x + b.x));
}

namespace detail {

// Triangulates the annulus between two closed rings of nodes. Both rings are
// given with unwrapped, increasing angles that start at the same angle.
inline void stitch_rings(Mesh& mesh, const std::vector<int>& inner, const std::vector<double>& inner_angle,
                         const std::vector<int>& outer, const std::vector<double>& outer_angle) {
  const std::size_t m = inner.size(), n = outer.size();
  constexpr double two_pi = 2.0 * std::numbers::pi;
  auto ang = [two_pi](const std::vector<double>& a, std::size_t k) {
    return k < a.size() ? a[k] : a[k - a.size()] + two_pi;
  };
  std::size_t i = 0, j = 0;
  while (i < m || j < n) {
    const bool advance_inner = j == n || (i < m && ang(inner_angle, i + 1) <= ang(outer_angle, j + 1));
    std::array<int, 3> tri{};
    if (advance_inner) {
      tri = {inner[i % m], inner[(i + 1) % m], outer[j % n]};
      ++i;
    } else {
      tri = {inner[i % m], outer[(j + 1) % n], outer[j % n]};
      ++j;
    }
    mesh.triangles.push_back(tri);
    if (mesh.signed_area(mesh.triangles.size() - 1) < 0.0) std::swap(mesh.triangles.back()[1], mesh.triangles.back()[2]);
  }
}

}  // namespace detail

/// Structured polar triangulation of the unit disk. Ring k (1 <= k < R) has
/// 6k equally spaced nodes at radius k/R, with R = base_rings * 2^level. The
/// outer ring is placed so that every electrode endpoint is a mesh node and
/// each electrode is covered by whole boundary edges.
inline Mesh build_disk_mesh(int refinement_level, const ElectrodeLayout& layout, int base_rings = 5) {
  layout.validate();
  if (refinement_level < 0) throw ConfigError("refinement level must be non-negative");
  if (base_rings < 1) throw ConfigError("base ring count must be positive");

  constexpr double two_pi = 2.0 * std::numbers::pi;
  const int rings = base_rings << refinement_level;
  const int L = layout.count;
  const double w = layout.half_width();
  const double start = -w;

  Mesh mesh;
  mesh.nodes.push_back({0.0, 0.0});

  std::vector<int> prev_ids{0};
  std::vector<double> prev_angles{start};

  for (int k = 1; k < rings; ++k) {
    const double r = static_cast<double>(k) / rings;
    const int count = 6 * k;
    std::vector<int> ids;
    std::vector<double> angles;
    for (int j = 0; j < count; ++j) {
      const double a = start + two_pi * j / count;
      ids.push_back(static_cast<int>(mesh.nodes.size()));
      angles.push_back(a);
      mesh.nodes.push_back({r * std::cos(a), r * std::sin(a)});
    }
    if (k == 1) {
      for (int j = 0; j < count; ++j) mesh.triangles.push_back({0, ids[j], ids[(j + 1) % count]});
    } else {
      detail::stitch_rings(mesh, prev_ids, prev_angles, ids, angles);
    }
    prev_ids = std::move(ids);
    prev_angles = std::move(angles);
  }

  // Outer ring: per electrode, `ne` edges on the electrode and `ng` in the gap.
  const double target = 6.0 * rings;
  const int ne = std::max(2, static_cast<int>(std::lround(target * layout.coverage / L)));
  const int ng = std::max(1, static_cast<int>(std::lround(target * (1.0 - layout.coverage) / L)));
  const double gap = two_pi / L - 2.0 * w;

  std::vector<int> ids;
  std::vector<double> angles;
  std::vector<int> edge_electrode;
  for (int l = 0; l < L; ++l) {
    const double c = layout.center_angle(l);
    for (int k = 0; k < ne; ++k) {
      angles.push_back(c - w + 2.0 * w * k / ne);
      edge_electrode.push_back(l);
    }
    for (int k = 0; k < ng; ++k) {
      angles.push_back(c + w + gap * k / ng);
      edge_electrode.push_back(-1);
    }
  }
  for (double a : angles) {
    ids.push_back(static_cast<int>(mesh.nodes.size()));
    mesh.nodes.push_back({std::cos(a), std::sin(a)});
  }
  if (rings == 1) {
    for (std::size_t j = 0; j < ids.size(); ++j) mesh.triangles.push_back({0, ids[j], ids[(j + 1) % ids.size()]});
  } else {
    detail::stitch_rings(mesh, prev_ids, prev_angles, ids, angles);
  }

  for (std::size_t j = 0; j < ids.size(); ++j) {
    const int n0 = ids[j], n1 = ids[(j + 1) % ids.size()];
    mesh.boundary.push_back({{n0, n1}, boundary_edge_angle(mesh, n0, n1), edge_electrode[j]});
  }
  return mesh;
}

/// Arc length (by angle) covered by the edges of electrode l.
inline double electrode_arc_length(const Mesh& mesh, int l) {
  double s = 0.0;
  for (const auto& e : mesh.boundary) {
    if (e.electrode != l) continue;
    const Point a = mesh.nodes[e.nodes[0]], b = mesh.nodes[e.nodes[1]];
    double d = std::atan2(b.y, b.x) - std::atan2(a.y, a.x);
    if (d < 0.0) d += 2.0 * std::numbers::pi;
    s += d;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Plain-text format:
//
//   eitmesh v1
//   nodes <count>
//   <index> <x> <y>
//   triangles <count>
//   <index> <n0> <n1> <n2>
//   boundary <count>
//   <index> <n0> <n1> <electrode|-1>

inline void write_mesh(std::ostream& os, const Mesh& mesh) {
  os << "eitmesh v1\n";
  os << "nodes " << mesh.nodes.size() << '\n';
  os << std::setprecision(17);
  for (std::size_t i = 0; i < mesh.nodes.size(); ++i) os << i << ' ' << mesh.nodes[i].x << ' ' << mesh.nodes[i].y << '\n';
  os << "triangles " << mesh.triangles.size() << '\n';
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto& t = mesh.triangles[i];
    os << i << ' ' << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  }
  os << "boundary " << mesh.boundary.size() << '\n';
  for (std::size_t i = 0; i < mesh.boundary.size(); ++i) {
    const auto& e = mesh.boundary[i];
    os << i << ' ' << e.nodes[0] << ' ' << e.nodes[1] << ' ' << e.electrode << '\n';
  }
}

/// Reads a mesh. Clockwise triangles are reoriented; a message is appended to
/// `warnings` for each one.
inline Mesh read_mesh(std::istream& is, std::vector<std::string>& warnings) {
  Mesh mesh;
  std::string line;
  std::size_t lineno = 0;

  auto next_line = [&](const char* section) {
    if (!std::getline(is, line)) throw ParseError("unexpected end of file", lineno + 1, section);
    ++lineno;
  };

  next_line("header");
  if (line != "eitmesh v1") throw ParseError("expected 'eitmesh v1'", lineno, "header");

  auto section_count = [&](const std::string& name) {
    next_line(name.c_str());
    std::istringstream ss(line);
    std::string tag;
    long long count = -1;
    std::string extra;
    if (!(ss >> tag >> count) || tag != name || count < 0 || (ss >> extra))
      throw ParseError("expected '" + name + " <count>'", lineno, name);
    return static_cast<std::size_t>(count);
  };

  auto check_index = [&](long long idx, std::size_t expected, const std::string& sec) {
    if (idx < 0 || static_cast<std::size_t>(idx) != expected)
      throw ParseError("expected record index " + std::to_string(expected), lineno, sec);
  };

  const std::size_t n_nodes = section_count("nodes");
  for (std::size_t i = 0; i < n_nodes; ++i) {
    next_line("nodes");
    std::istringstream ss(line);
    long long idx;
    Point p;
    std::string extra;
    if (!(ss >> idx >> p.x >> p.y) || (ss >> extra)) throw ParseError("expected 'index x y'", lineno, "nodes");
    check_index(idx, i, "nodes");
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw ParseError("non-finite coordinate", lineno, "nodes");
    mesh.nodes.push_back(p);
  }

  auto node_ref = [&](long long n, const std::string& sec) {
    if (n < 0 || static_cast<std::size_t>(n) >= n_nodes)
      throw ParseError("node " + std::to_string(n) + " does not exist", lineno, sec);
    return static_cast<int>(n);
  };

  const std::size_t n_tris = section_count("triangles");
  for (std::size_t i = 0; i < n_tris; ++i) {
    next_line("triangles");
    std::istringstream ss(line);
    long long idx, a, b, c;
    std::string extra;
    if (!(ss >> idx >> a >> b >> c) || (ss >> extra))
      throw ParseError("expected 'index n0 n1 n2'", lineno, "triangles");
    check_index(idx, i, "triangles");
    mesh.triangles.push_back({node_ref(a, "triangles"), node_ref(b, "triangles"), node_ref(c, "triangles")});
    const double area = mesh.signed_area(i);
    if (area == 0.0) throw ParseError("degenerate triangle", lineno, "triangles");
    if (area < 0.0) {
      std::swap(mesh.triangles.back()[1], mesh.triangles.back()[2]);
      warnings.push_back("triangle " + std::to_string(i) + " was clockwise; reoriented");
    }
  }

  const std::size_t n_bnd = section_count("boundary");
  for (std::size_t i = 0; i < n_bnd; ++i) {
    next_line("boundary");
    std::istringstream ss(line);
    long long idx, a, b, e;
    std::string extra;
    if (!(ss >> idx >> a >> b >> e) || (ss >> extra))
      throw ParseError("expected 'index n0 n1 electrode'", lineno, "boundary");
    check_index(idx, i, "boundary");
    if (e < -1) throw ParseError("electrode id must be -1 or non-negative", lineno, "boundary");
    const int n0 = node_ref(a, "boundary"), n1 = node_ref(b, "boundary");
    mesh.boundary.push_back({{n0, n1}, boundary_edge_angle(mesh, n0, n1), static_cast<int>(e)});
  }

  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") != std::string::npos) throw ParseError("trailing content", lineno, "boundary");
  }
  return mesh;
}

inline void save_mesh(const std::string& path, const Mesh& mesh) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  write_mesh(os, mesh);
  if (!os) throw ConfigError("failed writing " + path);
}

inline Mesh load_mesh(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path);
  std::vector<std::string> warnings;
  Mesh mesh = read_mesh(is, warnings);
  for (const auto& w : warnings) log::warn(path + ": " + w);
  return mesh;
}

/// Checks that `mesh` carries the electrodes described by `layout`.
inline void check_layout(const Mesh& mesh, const ElectrodeLayout& layout) {
  layout.validate();
  if (mesh.num_electrodes() != layout.count)
    throw ConfigError("mesh has " + std::to_string(mesh.num_electrodes()) + " electrodes, layout has " +
                      std::to_string(layout.count));
}

}  // namespace eit
