#pragma once

#include <optional>
#include <string>
#include <vector>

#include "qpat/mesh.hpp"

namespace qpat {

/// A geometric inclusion carrying constant optical values. All lengths in mm.
struct Primitive {
  enum class Shape { box, sphere, spherical_shell, axis_cylinder, helical_cylinder, planar_cross };

  Shape shape = Shape::sphere;

  Vec3 center = Vec3::Zero();

  // box: full edge lengths
  Vec3 size = Vec3::Zero();

  // sphere / cylinders
  double radius = 0.0;

  // spherical_shell
  double inner_radius = 0.0;
  double outer_radius = 0.0;

  // axis_cylinder / helical_cylinder: coordinate axis and axial extent
  int axis = 1;
  double axial_min = 0.0;
  double axial_max = 0.0;

  // helical_cylinder: tube of `radius` around the curve
  //   (rho cos(theta(s)), s, rho sin(theta(s))), s in [axial_min, axial_max],
  // with theta linear from theta_start to theta_end over the axial range
  // (coordinates permuted for axis != y).
  double helix_radius = 0.0;
  double theta_start = 0.0;
  double theta_end = 0.0;

  // planar_cross: two orthogonal in-plane arms of half-length `arm_half_length`
  // and half-width `arm_half_width`, extruded `half_thickness` along `normal`;
  // `in_plane_axis` is the direction of the first arm.
  Vec3 normal = Vec3::UnitZ();
  Vec3 in_plane_axis = Vec3::UnitX();
  double half_thickness = 0.0;
  double arm_half_length = 0.0;
  double arm_half_width = 0.0;

  // Optical values set inside the primitive; absent = leave that field alone.
  std::optional<double> kappa;  // mm
  std::optional<double> mu;     // mm^-1

  bool contains(const Vec3& p) const;
  void validate() const;
};

/// Background values plus a primitive list; later primitives overwrite earlier
/// ones on overlap.
struct PhantomSpec {
  double kappa_bg = 0.3;   // mm
  double mu_bg = 0.015;    // mm^-1
  std::vector<Primitive> primitives;

  void validate() const;
};

/// Nodal rasterization: each vertex takes the value of the last primitive
/// containing it (per parameter), else the background.
std::pair<NodalField, NodalField> rasterize_phantom(const TetMesh& mesh, const PhantomSpec& spec);

/// Vertices where primitive `index` determines the final kappa (param 0) or mu
/// (param 1) value, i.e. inside it and not overwritten by a later primitive.
std::vector<int> effective_support(const TetMesh& mesh, const PhantomSpec& spec, int index,
                                   int param);

/// Vertices where no primitive sets the given parameter (the background).
std::vector<int> background_support(const TetMesh& mesh, const PhantomSpec& spec, int param);

double mean_over(const NodalField& f, const std::vector<int>& support);

/// Test-2 desk phantom: 11 mm cube background (kappa_bg, mu_bg) with an
/// absorbing shell + cross along z = x and a diffusive ball + cross along
/// z = -x, crosses overriding on overlap.
PhantomSpec test2_phantom(double kappa_bg = 0.3, double mu_bg = 0.015);

}  // namespace qpat
