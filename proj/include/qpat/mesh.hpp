#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <array>
#include <optional>
#include <string>
#include <vector>

namespace qpat {

using Vec3 = Eigen::Vector3d;

/// Nodal coefficient vector over a mesh's vertices (kappa, mu, phi, h, chi, ...).
using NodalField = Eigen::VectorXd;

/// Boundary face tags assigned to axis-aligned box faces.
enum BoxFace : int {
  kFaceXMin = 0,
  kFaceXMax = 1,
  kFaceYMin = 2,
  kFaceYMax = 3,
  kFaceZMin = 4,
  kFaceZMax = 5,
};

struct BoundaryFacet {
  std::array<int, 3> v;  // vertex indices
  int tet;               // parent tet
  Vec3 normal;           // outward unit normal
  double area;           // mm^2
  int tag = -1;          // illumination support label, -1 = untagged
};

/// Tetrahedral P1 mesh. Immutable after construction; safe for shared reads.
///
/// Coordinates are in mm. Every tet has positive signed volume under its
/// stored vertex order; boundary facets carry outward unit normals.
class TetMesh {
 public:
  TetMesh() = default;

  /// Builds a validated mesh from raw arrays. Boundary facets are derived from
  /// connectivity unless `facets` is supplied (then validated against it).
  /// Inverted tets are reordered (reported to stderr); zero-volume tets throw.
  static TetMesh from_data(std::vector<Vec3> vertices,
                           std::vector<std::array<int, 4>> tets,
                           const std::vector<std::pair<std::array<int, 3>, int>>* tagged_faces = nullptr);

  int num_vertices() const { return static_cast<int>(vertices_.size()); }
  int num_tets() const { return static_cast<int>(tets_.size()); }
  int num_boundary_facets() const { return static_cast<int>(boundary_.size()); }

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<std::array<int, 4>>& tets() const { return tets_; }
  const std::vector<BoundaryFacet>& boundary_facets() const { return boundary_; }

  double tet_volume(int e) const { return volume_[e]; }
  /// P1 basis gradients of the 4 local shape functions, one per row (1/mm).
  const Eigen::Matrix<double, 4, 3>& tet_gradients(int e) const { return grads_[e]; }

  double total_volume() const { return total_volume_; }
  double surface_area() const { return surface_area_; }
  const Vec3& bbox_min() const { return bbox_min_; }
  const Vec3& bbox_max() const { return bbox_max_; }
  double diameter() const { return (bbox_max_ - bbox_min_).norm(); }

  /// Barycentric coordinates of x in tet e (sum to 1; negative outside).
  Eigen::Vector4d barycentric(int e, const Vec3& x) const;

 private:
  void finalize(const std::vector<std::pair<std::array<int, 3>, int>>* tagged_faces);

  std::vector<Vec3> vertices_;
  std::vector<std::array<int, 4>> tets_;
  std::vector<BoundaryFacet> boundary_;
  std::vector<double> volume_;
  std::vector<Eigen::Matrix<double, 4, 3>> grads_;
  double total_volume_ = 0.0;
  double surface_area_ = 0.0;
  Vec3 bbox_min_ = Vec3::Zero();
  Vec3 bbox_max_ = Vec3::Zero();
};

/// Structured box mesh, each hex cell split into 6 tets (Kuhn subdivision).
/// Vertex count (nx+1)(ny+1)(nz+1), tet count 6*nx*ny*nz. Boundary facets are
/// tagged with the BoxFace of the bounding-box plane they lie on.
TetMesh generate_box_mesh(int nx, int ny, int nz, const Vec3& origin, const Vec3& extent);

/// Reads a TetGen-style ASCII .node/.ele pair (optional .face with tags).
/// 1-based indices are accepted and stored 0-based. Without a face file,
/// boundary facets are derived from connectivity and tagged by bounding-box
/// plane where applicable.
TetMesh load_mesh(const std::string& node_path, const std::string& ele_path,
                  const std::optional<std::string>& face_path = std::nullopt);

/// Writes base.node/base.ele/base.face in the format load_mesh reads
/// (0-based, coordinates with 17 significant digits).
void save_mesh(const TetMesh& mesh, const std::string& base_path);

struct PointLocation {
  int tet;
  Eigen::Vector4d bary;
};

/// Finds a tet containing x (barycentrics >= -1e-10). Scans tets in index
/// order, so ties resolve deterministically. nullopt when x is outside.
std::optional<PointLocation> locate_point(const TetMesh& mesh, const Vec3& x);

/// Row-stochastic sparse interpolation matrix P (N_coarse x N_fine):
/// row i holds the P1 barycentric weights of coarse vertex i in the fine mesh.
struct InterpolationOperator {
  Eigen::SparseMatrix<double> P;
  NodalField apply(const NodalField& fine_values) const { return P * fine_values; }
  int rows() const { return static_cast<int>(P.rows()); }
  int cols() const { return static_cast<int>(P.cols()); }
};

/// Coarse vertices slightly outside the fine mesh (within 1e-6 * fine diameter)
/// snap to the nearest tet with barycentrics clamped to the simplex and
/// renormalized; farther vertices throw.
InterpolationOperator build_interpolation(const TetMesh& fine, const TetMesh& coarse);

}  // namespace qpat
