#include "qpat/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include "qpat/errors.hpp"

namespace qpat {

namespace {

double signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  return (b - a).cross(c - a).dot(d - a) / 6.0;
}

// Faces of a tet, each paired with the opposite local vertex.
constexpr int kTetFaces[4][3] = {{1, 2, 3}, {0, 2, 3}, {0, 1, 3}, {0, 1, 2}};

std::array<int, 3> sorted_triple(int a, int b, int c) {
  std::array<int, 3> t{a, b, c};
  std::sort(t.begin(), t.end());
  return t;
}

}  // namespace

Eigen::Vector4d TetMesh::barycentric(int e, const Vec3& x) const {
  // Each barycentric coordinate is affine with gradient g_k and value 1/4 at
  // the centroid, so the cached gradients give it directly.
  const auto& t = tets_[e];
  Vec3 c = 0.25 * (vertices_[t[0]] + vertices_[t[1]] + vertices_[t[2]] + vertices_[t[3]]);
  Vec3 d = x - c;
  Eigen::Vector4d bary;
  for (int k = 0; k < 4; ++k) bary[k] = 0.25 + grads_[e].row(k).dot(d);
  return bary;
}

TetMesh TetMesh::from_data(std::vector<Vec3> vertices, std::vector<std::array<int, 4>> tets,
                           const std::vector<std::pair<std::array<int, 3>, int>>* tagged_faces) {
  TetMesh m;
  m.vertices_ = std::move(vertices);
  m.tets_ = std::move(tets);
  m.finalize(tagged_faces);
  return m;
}

void TetMesh::finalize(const std::vector<std::pair<std::array<int, 3>, int>>* tagged_faces) {
  const int nv = num_vertices();
  if (nv < 4) throw ConfigError("mesh needs at least 4 vertices");
  if (tets_.empty()) throw ConfigError("mesh has no tetrahedra");

  bbox_min_ = Vec3::Constant(std::numeric_limits<double>::infinity());
  bbox_max_ = -bbox_min_;
  for (const auto& v : vertices_) {
    bbox_min_ = bbox_min_.cwiseMin(v);
    bbox_max_ = bbox_max_.cwiseMax(v);
  }
  const double diam = diameter();
  if (!(diam > 0.0)) throw ConfigError("mesh has zero extent");

  // Orientation: reorder inverted tets, reject degenerate ones.
  int reordered = 0;
  volume_.resize(tets_.size());
  for (size_t e = 0; e < tets_.size(); ++e) {
    auto& t = tets_[e];
    for (int k = 0; k < 4; ++k) {
      if (t[k] < 0 || t[k] >= nv)
        throw ConfigError("tet " + std::to_string(e) + " has vertex index out of range");
    }
    double vol = signed_volume(vertices_[t[0]], vertices_[t[1]], vertices_[t[2]], vertices_[t[3]]);
    double lmax = 0.0;
    for (int a = 0; a < 4; ++a)
      for (int b = a + 1; b < 4; ++b)
        lmax = std::max(lmax, (vertices_[t[a]] - vertices_[t[b]]).norm());
    if (std::abs(vol) <= 1e-12 * lmax * lmax * lmax)
      throw ConfigError("degenerate (zero-volume) tet " + std::to_string(e));
    if (vol < 0.0) {
      std::swap(t[2], t[3]);
      vol = -vol;
      ++reordered;
    }
    volume_[e] = vol;
  }
  if (reordered > 0)
    std::cerr << "[mesh] reordered " << reordered << " inverted tets\n";

  total_volume_ = 0.0;
  for (double v : volume_) total_volume_ += v;

  // P1 basis gradients per tet: rows 1..3 of inv(E)^T, row 0 closes the sum.
  grads_.resize(tets_.size());
  for (size_t e = 0; e < tets_.size(); ++e) {
    const auto& t = tets_[e];
    const Vec3& a = vertices_[t[0]];
    Eigen::Matrix3d E;
    E.col(0) = vertices_[t[1]] - a;
    E.col(1) = vertices_[t[2]] - a;
    E.col(2) = vertices_[t[3]] - a;
    Eigen::Matrix3d Einv = E.inverse();
    auto& g = grads_[e];
    for (int k = 0; k < 3; ++k) g.row(k + 1) = Einv.row(k);
    g.row(0) = -(g.row(1) + g.row(2) + g.row(3));
  }

  // Boundary facets from connectivity: faces incident to exactly one tet.
  std::map<std::array<int, 3>, std::pair<int, int>> face_count;  // -> (count, parent tet)
  for (size_t e = 0; e < tets_.size(); ++e) {
    const auto& t = tets_[e];
    for (const auto& f : kTetFaces) {
      auto key = sorted_triple(t[f[0]], t[f[1]], t[f[2]]);
      auto it = face_count.find(key);
      if (it == face_count.end())
        face_count.emplace(key, std::make_pair(1, static_cast<int>(e)));
      else {
        it->second.first++;
        if (it->second.first > 2)
          throw ConfigError("non-manifold face shared by more than two tets");
      }
    }
  }

  std::map<std::array<int, 3>, int> tag_lookup;
  if (tagged_faces != nullptr)
    for (const auto& [tri, tag] : *tagged_faces)
      tag_lookup[sorted_triple(tri[0], tri[1], tri[2])] = tag;

  boundary_.clear();
  surface_area_ = 0.0;
  const double plane_tol = 1e-9 * diam;
  for (const auto& [key, cnt] : face_count) {
    if (cnt.first != 1) continue;
    BoundaryFacet f;
    f.v = key;  // sorted -> deterministic facet order from the map
    f.tet = cnt.second;
    const Vec3& p0 = vertices_[key[0]];
    const Vec3& p1 = vertices_[key[1]];
    const Vec3& p2 = vertices_[key[2]];
    Vec3 cr = (p1 - p0).cross(p2 - p0);
    f.area = 0.5 * cr.norm();
    if (!(f.area > 0.0)) throw ConfigError("degenerate boundary facet");
    f.normal = cr.normalized();
    const auto& t = tets_[f.tet];
    Vec3 tet_c = 0.25 * (vertices_[t[0]] + vertices_[t[1]] + vertices_[t[2]] + vertices_[t[3]]);
    Vec3 face_c = (p0 + p1 + p2) / 3.0;
    if (f.normal.dot(face_c - tet_c) < 0.0) f.normal = -f.normal;

    if (auto it = tag_lookup.find(key); it != tag_lookup.end()) {
      f.tag = it->second;
    } else {
      // Auto-tag facets lying on a bounding-box plane (box faces keep working
      // after a round-trip through files that drop tags).
      for (int ax = 0; ax < 3; ++ax) {
        bool on_min = true, on_max = true;
        for (int k = 0; k < 3; ++k) {
          on_min = on_min && std::abs(vertices_[key[k]][ax] - bbox_min_[ax]) <= plane_tol;
          on_max = on_max && std::abs(vertices_[key[k]][ax] - bbox_max_[ax]) <= plane_tol;
        }
        if (on_min) f.tag = 2 * ax;
        if (on_max) f.tag = 2 * ax + 1;
      }
    }
    surface_area_ += f.area;
    boundary_.push_back(f);
  }
  if (boundary_.empty()) throw ConfigError("mesh has no boundary facets");
}

TetMesh generate_box_mesh(int nx, int ny, int nz, const Vec3& origin, const Vec3& extent) {
  if (nx < 1 || ny < 1 || nz < 1) throw ConfigError("box mesh needs subdivision counts >= 1");
  if (!(extent.minCoeff() > 0.0)) throw ConfigError("box mesh needs positive extents");

  const int vx = nx + 1, vy = ny + 1, vz = nz + 1;
  std::vector<Vec3> verts;
  verts.reserve(static_cast<size_t>(vx) * vy * vz);
  for (int k = 0; k < vz; ++k)
    for (int j = 0; j < vy; ++j)
      for (int i = 0; i < vx; ++i)
        verts.emplace_back(origin[0] + extent[0] * i / nx, origin[1] + extent[1] * j / ny,
                           origin[2] + extent[2] * k / nz);

  auto vid = [&](int i, int j, int k) { return i + vx * (j + vy * k); };

  // Kuhn subdivision: all six axis orderings of the path from the cell's min
  // corner to its max corner share the main diagonal, so neighboring cells
  // match along faces.
  constexpr int kPerm[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  constexpr bool kOdd[6] = {false, true, true, false, false, true};

  std::vector<std::array<int, 4>> tets;
  tets.reserve(static_cast<size_t>(6) * nx * ny * nz);
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        int c[3] = {i, j, k};
        for (int p = 0; p < 6; ++p) {
          int s1[3] = {c[0], c[1], c[2]};
          s1[kPerm[p][0]] += 1;
          int s2[3] = {s1[0], s1[1], s1[2]};
          s2[kPerm[p][1]] += 1;
          std::array<int, 4> tet{vid(c[0], c[1], c[2]), vid(s1[0], s1[1], s1[2]),
                                 vid(s2[0], s2[1], s2[2]), vid(i + 1, j + 1, k + 1)};
          if (kOdd[p]) std::swap(tet[1], tet[2]);
          tets.push_back(tet);
        }
      }

  return TetMesh::from_data(std::move(verts), std::move(tets));
}

namespace {

std::vector<std::vector<std::string>> read_token_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::vector<std::vector<std::string>> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::vector<std::string> toks;
    std::string tok;
    while (ss >> tok) toks.push_back(tok);
    if (!toks.empty()) lines.push_back(std::move(toks));
  }
  return lines;
}

long to_long(const std::string& s, const std::string& what) {
  try {
    size_t pos = 0;
    long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad integer '" + s + "' in " + what);
  }
}

double to_double(const std::string& s, const std::string& what) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad number '" + s + "' in " + what);
  }
}

}  // namespace

TetMesh load_mesh(const std::string& node_path, const std::string& ele_path,
                  const std::optional<std::string>& face_path) {
  auto nlines = read_token_lines(node_path);
  if (nlines.empty() || nlines[0].size() < 2) throw ConfigError("bad .node header in " + node_path);
  const long n_nodes = to_long(nlines[0][0], node_path);
  if (to_long(nlines[0][1], node_path) != 3) throw ConfigError(node_path + ": dimension must be 3");
  if (static_cast<long>(nlines.size()) != n_nodes + 1)
    throw ConfigError(node_path + ": expected " + std::to_string(n_nodes) + " node lines");

  long base = std::numeric_limits<long>::max();
  for (size_t i = 1; i < nlines.size(); ++i) base = std::min(base, to_long(nlines[i][0], node_path));
  if (base != 0 && base != 1) throw ConfigError(node_path + ": indices must start at 0 or 1");

  std::vector<Vec3> verts(n_nodes);
  std::vector<bool> seen(n_nodes, false);
  for (size_t i = 1; i < nlines.size(); ++i) {
    const auto& t = nlines[i];
    if (t.size() < 4) throw ConfigError(node_path + ": node line needs idx x y z");
    long idx = to_long(t[0], node_path) - base;
    if (idx < 0 || idx >= n_nodes || seen[idx])
      throw ConfigError(node_path + ": bad or duplicate node index " + t[0]);
    seen[idx] = true;
    verts[idx] = Vec3(to_double(t[1], node_path), to_double(t[2], node_path),
                      to_double(t[3], node_path));
  }

  auto elines = read_token_lines(ele_path);
  if (elines.empty() || elines[0].size() < 2) throw ConfigError("bad .ele header in " + ele_path);
  const long n_tets = to_long(elines[0][0], ele_path);
  if (to_long(elines[0][1], ele_path) != 4) throw ConfigError(ele_path + ": nodes per tet must be 4");
  if (static_cast<long>(elines.size()) != n_tets + 1)
    throw ConfigError(ele_path + ": expected " + std::to_string(n_tets) + " element lines");

  std::vector<std::array<int, 4>> tets(n_tets);
  for (size_t i = 1; i < elines.size(); ++i) {
    const auto& t = elines[i];
    if (t.size() < 5) throw ConfigError(ele_path + ": element line needs idx v1 v2 v3 v4");
    long idx = to_long(t[0], ele_path) - base;
    if (idx < 0 || idx >= n_tets) throw ConfigError(ele_path + ": bad element index " + t[0]);
    for (int k = 0; k < 4; ++k) {
      long v = to_long(t[k + 1], ele_path) - base;
      if (v < 0 || v >= n_nodes)
        throw ConfigError(ele_path + ": vertex index out of range in element " + std::to_string(idx));
      tets[idx][k] = static_cast<int>(v);
    }
  }

  std::vector<std::pair<std::array<int, 3>, int>> faces;
  if (face_path) {
    auto flines = read_token_lines(*face_path);
    if (flines.empty() || flines[0].size() < 2)
      throw ConfigError("bad .face header in " + *face_path);
    const long n_faces = to_long(flines[0][0], *face_path);
    if (static_cast<long>(flines.size()) != n_faces + 1)
      throw ConfigError(*face_path + ": expected " + std::to_string(n_faces) + " face lines");
    for (size_t i = 1; i < flines.size(); ++i) {
      const auto& t = flines[i];
      if (t.size() < 4) throw ConfigError(*face_path + ": face line needs idx v1 v2 v3");
      std::array<int, 3> tri;
      for (int k = 0; k < 3; ++k) {
        long v = to_long(t[k + 1], *face_path) - base;
        if (v < 0 || v >= n_nodes) throw ConfigError(*face_path + ": vertex index out of range");
        tri[k] = static_cast<int>(v);
      }
      int tag = t.size() > 4 ? static_cast<int>(to_long(t[4], *face_path)) : -1;
      faces.emplace_back(tri, tag);
    }
  }

  return TetMesh::from_data(std::move(verts), std::move(tets), face_path ? &faces : nullptr);
}

void save_mesh(const TetMesh& mesh, const std::string& base_path) {
  auto write = [](const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path);
    out << content;
  };

  char buf[128];
  std::string node;
  node += std::to_string(mesh.num_vertices()) + " 3 0 0\n";
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    const Vec3& v = mesh.vertices()[i];
    std::snprintf(buf, sizeof(buf), "%d %.17g %.17g %.17g\n", i, v[0], v[1], v[2]);
    node += buf;
  }
  write(base_path + ".node", node);

  std::string ele;
  ele += std::to_string(mesh.num_tets()) + " 4 0\n";
  for (int e = 0; e < mesh.num_tets(); ++e) {
    const auto& t = mesh.tets()[e];
    ele += std::to_string(e) + " " + std::to_string(t[0]) + " " + std::to_string(t[1]) + " " +
           std::to_string(t[2]) + " " + std::to_string(t[3]) + "\n";
  }
  write(base_path + ".ele", ele);

  std::string face;
  face += std::to_string(mesh.num_boundary_facets()) + " 3 0\n";
  for (int f = 0; f < mesh.num_boundary_facets(); ++f) {
    const auto& bf = mesh.boundary_facets()[f];
    face += std::to_string(f) + " " + std::to_string(bf.v[0]) + " " + std::to_string(bf.v[1]) +
            " " + std::to_string(bf.v[2]) + " " + std::to_string(bf.tag) + "\n";
  }
  write(base_path + ".face", face);
}

std::optional<PointLocation> locate_point(const TetMesh& mesh, const Vec3& x) {
  constexpr double eps_bary = 1e-10;
  for (int e = 0; e < mesh.num_tets(); ++e) {
    Eigen::Vector4d b = mesh.barycentric(e, x);
    if (b.minCoeff() >= -eps_bary) return PointLocation{e, b};
  }
  return std::nullopt;
}

namespace {

// Uniform-grid index over tet bounding boxes; point location drops from a
// full scan to a handful of candidate tets.
class TetGrid {
 public:
  explicit TetGrid(const TetMesh& mesh) : mesh_(mesh) {
    lo_ = mesh.bbox_min();
    Vec3 extent = mesh.bbox_max() - lo_;
    int target = std::max(1, static_cast<int>(std::cbrt(mesh.num_tets() / 4.0)));
    for (int d = 0; d < 3; ++d) {
      dims_[d] = std::max(1, target);
      cell_[d] = extent[d] / dims_[d];
      if (!(cell_[d] > 0.0)) cell_[d] = 1.0;
    }
    cells_.resize(static_cast<size_t>(dims_[0]) * dims_[1] * dims_[2]);
    for (int e = 0; e < mesh.num_tets(); ++e) {
      Vec3 tlo = Vec3::Constant(std::numeric_limits<double>::infinity());
      Vec3 thi = -tlo;
      for (int k = 0; k < 4; ++k) {
        const Vec3& v = mesh.vertices()[mesh.tets()[e][k]];
        tlo = tlo.cwiseMin(v);
        thi = thi.cwiseMax(v);
      }
      int a[3], b[3];
      for (int d = 0; d < 3; ++d) {
        a[d] = clamp_index(tlo[d], d);
        b[d] = clamp_index(thi[d], d);
      }
      for (int ix = a[0]; ix <= b[0]; ++ix)
        for (int iy = a[1]; iy <= b[1]; ++iy)
          for (int iz = a[2]; iz <= b[2]; ++iz) cells_[cell_id(ix, iy, iz)].push_back(e);
    }
  }

  std::optional<PointLocation> locate(const Vec3& x) const {
    constexpr double eps_bary = 1e-10;
    int ix = clamp_index(x[0], 0), iy = clamp_index(x[1], 1), iz = clamp_index(x[2], 2);
    for (int e : cells_[cell_id(ix, iy, iz)]) {
      Eigen::Vector4d b = mesh_.barycentric(e, x);
      if (b.minCoeff() >= -eps_bary) return PointLocation{e, b};
    }
    return std::nullopt;
  }

 private:
  int clamp_index(double v, int d) const {
    int i = static_cast<int>(std::floor((v - lo_[d]) / cell_[d]));
    return std::clamp(i, 0, dims_[d] - 1);
  }
  size_t cell_id(int ix, int iy, int iz) const {
    return static_cast<size_t>(ix) + dims_[0] * (static_cast<size_t>(iy) + dims_[1] * iz);
  }

  const TetMesh& mesh_;
  Vec3 lo_, cell_;
  int dims_[3];
  std::vector<std::vector<int>> cells_;
};

}  // namespace

InterpolationOperator build_interpolation(const TetMesh& fine, const TetMesh& coarse) {
  const double snap_tol = 1e-6 * fine.diameter();
  TetGrid grid(fine);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<size_t>(coarse.num_vertices()) * 4);

  for (int i = 0; i < coarse.num_vertices(); ++i) {
    const Vec3& x = coarse.vertices()[i];
    auto loc = grid.locate(x);
    int tet;
    Eigen::Vector4d b;
    if (loc) {
      tet = loc->tet;
      b = loc->bary;
    } else {
      // Snap: nearest tet by least barycentric violation, clamped to the
      // simplex and renormalized so the row stays stochastic.
      int best = -1;
      double best_min = -std::numeric_limits<double>::infinity();
      Eigen::Vector4d best_b;
      for (int e = 0; e < fine.num_tets(); ++e) {
        Eigen::Vector4d be = fine.barycentric(e, x);
        double mn = be.minCoeff();
        if (mn > best_min) {
          best_min = mn;
          best = e;
          best_b = be;
        }
      }
      b = best_b.cwiseMax(0.0);
      b /= b.sum();
      tet = best;
      Vec3 projected = Vec3::Zero();
      for (int k = 0; k < 4; ++k) projected += b[k] * fine.vertices()[fine.tets()[tet][k]];
      if ((projected - x).norm() > snap_tol)
        throw ConfigError("coarse vertex " + std::to_string(i) +
                          " lies outside the fine mesh beyond the snap tolerance");
    }
    for (int k = 0; k < 4; ++k)
      trips.emplace_back(i, fine.tets()[tet][k], b[k]);
  }

  Eigen::SparseMatrix<double> P(coarse.num_vertices(), fine.num_vertices());
  P.setFromTriplets(trips.begin(), trips.end());
  P.makeCompressed();
  return InterpolationOperator{std::move(P)};
}

}  // namespace qpat
