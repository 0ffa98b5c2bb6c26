#include "qpat/illumination.hpp"

#include <cmath>

#include "qpat/errors.hpp"

namespace qpat {

double Illumination::value(const TetMesh& mesh, int facet_idx, const Vec3& x) const {
  switch (kind) {
    case Kind::cylinder_cosine: {
      // Polar angle about the axis: atan2(z, x) for axis y, atan2(y, x) for
      // axis z, atan2(z, y) for axis x.
      int u_cos = (axis == 0) ? 1 : 0;
      int u_sin = (axis == 2) ? 1 : 2;
      double theta = std::atan2(x[u_sin], x[u_cos]);
      double d = std::remainder(theta - theta0, 2.0 * M_PI);
      if (std::abs(d) > 0.5 * width) return 0.0;
      return amplitude * std::cos(M_PI * d / width);
    }
    case Kind::face_characteristic:
      return mesh.boundary_facets()[facet_idx].tag == face_tag ? amplitude : 0.0;
    case Kind::custom: {
      if (facet_idx < 0 || facet_idx >= static_cast<int>(facet_values.size()))
        throw ConfigError("custom illumination: missing value for boundary facet " +
                          std::to_string(facet_idx));
      return amplitude * facet_values[facet_idx];
    }
  }
  return 0.0;
}

Illumination make_cylinder_cosine(double theta0, double width, int axis, double amplitude) {
  if (!(width > 0.0)) throw ConfigError("cylinder_cosine: width must be positive");
  if (axis < 0 || axis > 2) throw ConfigError("cylinder_cosine: axis must be 0, 1 or 2");
  Illumination il;
  il.kind = Illumination::Kind::cylinder_cosine;
  il.theta0 = theta0;
  il.width = width;
  il.axis = axis;
  il.amplitude = amplitude;
  return il;
}

Illumination make_face_illumination(int face_tag, double amplitude) {
  Illumination il;
  il.kind = Illumination::Kind::face_characteristic;
  il.face_tag = face_tag;
  il.amplitude = amplitude;
  return il;
}

Illumination make_custom_illumination(std::vector<double> facet_values, double amplitude) {
  Illumination il;
  il.kind = Illumination::Kind::custom;
  il.facet_values = std::move(facet_values);
  il.amplitude = amplitude;
  return il;
}

}  // namespace qpat
