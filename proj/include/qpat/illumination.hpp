#pragma once

#include <string>
#include <vector>

#include "qpat/mesh.hpp"

namespace qpat {

/// Boundary photon flux Phi, evaluable at boundary facet quadrature points.
///
/// cylinder_cosine: cos(pi*(theta-theta0)/width) on |theta-theta0| <= width/2,
/// zero elsewhere, where theta is the polar angle about the given coordinate
/// axis through the origin (width pi/4 gives the cos(4(theta-theta0)) profile).
/// face_characteristic: 1 on facets carrying the tag, 0 elsewhere.
/// custom: one amplitude per boundary facet.
struct Illumination {
  enum class Kind { cylinder_cosine, face_characteristic, custom };

  Kind kind = Kind::face_characteristic;
  double amplitude = 1.0;

  // cylinder_cosine
  double theta0 = 0.0;
  double width = 0.25 * M_PI;  // full angular width of the support
  int axis = 1;                // 0=x, 1=y, 2=z

  // face_characteristic
  int face_tag = kFaceZMin;

  // custom
  std::vector<double> facet_values;

  /// Flux value at point x on boundary facet `facet_idx`. Nonnegative for the
  /// built-in kinds whenever amplitude >= 0.
  double value(const TetMesh& mesh, int facet_idx, const Vec3& x) const;
};

Illumination make_cylinder_cosine(double theta0, double width, int axis, double amplitude = 1.0);
Illumination make_face_illumination(int face_tag, double amplitude = 1.0);
Illumination make_custom_illumination(std::vector<double> facet_values, double amplitude = 1.0);

}  // namespace qpat
