#include "qpat/phantom.hpp"

#include <cmath>

#include "qpat/errors.hpp"

namespace qpat {

namespace {

// Distance from p to the segment [a, b].
double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  Vec3 d = b - a;
  double len2 = d.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  double t = std::clamp((p - a).dot(d) / len2, 0.0, 1.0);
  return (p - (a + t * d)).norm();
}

}  // namespace

void Primitive::validate() const {
  switch (shape) {
    case Shape::box:
      if (!(size.minCoeff() > 0.0)) throw ConfigError("box: size must be positive");
      break;
    case Shape::sphere:
      if (!(radius > 0.0)) throw ConfigError("sphere: radius must be positive");
      break;
    case Shape::spherical_shell:
      if (!(inner_radius > 0.0) || !(outer_radius > inner_radius))
        throw ConfigError("spherical_shell: need 0 < inner_radius < outer_radius");
      break;
    case Shape::axis_cylinder:
      if (!(radius > 0.0)) throw ConfigError("axis_cylinder: radius must be positive");
      if (!(axial_max > axial_min)) throw ConfigError("axis_cylinder: bad axial range");
      if (axis < 0 || axis > 2) throw ConfigError("axis_cylinder: axis must be 0, 1 or 2");
      break;
    case Shape::helical_cylinder:
      if (!(radius > 0.0)) throw ConfigError("helical_cylinder: tube radius must be positive");
      if (!(helix_radius > 0.0)) throw ConfigError("helical_cylinder: helix radius must be positive");
      if (!(axial_max > axial_min)) throw ConfigError("helical_cylinder: bad axial range");
      if (axis < 0 || axis > 2) throw ConfigError("helical_cylinder: axis must be 0, 1 or 2");
      break;
    case Shape::planar_cross:
      if (!(half_thickness > 0.0) || !(arm_half_length > 0.0) || !(arm_half_width > 0.0))
        throw ConfigError("planar_cross: thickness, arm length and arm width must be positive");
      if (normal.norm() == 0.0 || in_plane_axis.norm() == 0.0)
        throw ConfigError("planar_cross: zero normal or in-plane axis");
      if (std::abs(normal.normalized().dot(in_plane_axis.normalized())) > 1e-8)
        throw ConfigError("planar_cross: in-plane axis must be orthogonal to the normal");
      break;
  }
  if (kappa && !(*kappa > 0.0)) throw ConfigError("primitive: kappa must be positive");
  if (mu && !(*mu > 0.0)) throw ConfigError("primitive: mu must be positive");
  if (!kappa && !mu) throw ConfigError("primitive sets neither kappa nor mu");
}

bool Primitive::contains(const Vec3& p) const {
  switch (shape) {
    case Shape::box: {
      Vec3 d = (p - center).cwiseAbs();
      return (d.array() <= 0.5 * size.array()).all();
    }
    case Shape::sphere:
      return (p - center).norm() <= radius;
    case Shape::spherical_shell: {
      double r = (p - center).norm();
      return r >= inner_radius && r <= outer_radius;
    }
    case Shape::axis_cylinder: {
      double s = p[axis];
      if (s < axial_min || s > axial_max) return false;
      int u = (axis + 1) % 3, v = (axis + 2) % 3;
      double du = p[u] - center[u], dv = p[v] - center[v];
      return std::hypot(du, dv) <= radius;
    }
    case Shape::helical_cylinder: {
      // Tube around the curve (rho cos(theta(s)), s, rho sin(theta(s))) with a
      // linear theta over the axial range. Sampled as a polyline, 200 points
      // per turn; precision is cosmetic.
      int u_cos = (axis == 0) ? 1 : 0;
      int u_sin = (axis == 2) ? 1 : 2;
      double turns = std::abs(theta_end - theta_start) / (2.0 * M_PI);
      int samples = std::max(2, static_cast<int>(std::ceil(200.0 * turns)) + 1);
      Vec3 prev;
      for (int i = 0; i < samples; ++i) {
        double f = static_cast<double>(i) / (samples - 1);
        double s = axial_min + f * (axial_max - axial_min);
        double theta = theta_start + f * (theta_end - theta_start);
        Vec3 q = center;
        q[axis] = s;
        q[u_cos] += helix_radius * std::cos(theta);
        q[u_sin] += helix_radius * std::sin(theta);
        if (i > 0 && segment_distance(p, prev, q) <= radius) return true;
        prev = q;
      }
      return false;
    }
    case Shape::planar_cross: {
      Vec3 n = normal.normalized();
      Vec3 u = in_plane_axis.normalized();
      Vec3 v = n.cross(u);
      Vec3 d = p - center;
      if (std::abs(d.dot(n)) > half_thickness) return false;
      double du = std::abs(d.dot(u)), dv = std::abs(d.dot(v));
      return (du <= arm_half_length && dv <= arm_half_width) ||
             (dv <= arm_half_length && du <= arm_half_width);
    }
  }
  return false;
}

void PhantomSpec::validate() const {
  if (!(kappa_bg > 0.0) || !(mu_bg > 0.0))
    throw ConfigError("phantom: background values must be positive");
  for (const auto& p : primitives) p.validate();
}

std::pair<NodalField, NodalField> rasterize_phantom(const TetMesh& mesh,
                                                    const PhantomSpec& spec) {
  spec.validate();
  NodalField kappa = NodalField::Constant(mesh.num_vertices(), spec.kappa_bg);
  NodalField mu = NodalField::Constant(mesh.num_vertices(), spec.mu_bg);
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    const Vec3& x = mesh.vertices()[i];
    for (const auto& prim : spec.primitives) {
      if (!prim.contains(x)) continue;
      if (prim.kappa) kappa[i] = *prim.kappa;
      if (prim.mu) mu[i] = *prim.mu;
    }
  }
  return {kappa, mu};
}

std::vector<int> effective_support(const TetMesh& mesh, const PhantomSpec& spec, int index,
                                   int param) {
  if (index < 0 || index >= static_cast<int>(spec.primitives.size()))
    throw ConfigError("effective_support: primitive index out of range");
  const auto& prim = spec.primitives[index];
  bool sets = (param == 0) ? prim.kappa.has_value() : prim.mu.has_value();
  if (!sets) return {};

  std::vector<int> out;
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    const Vec3& x = mesh.vertices()[i];
    if (!prim.contains(x)) continue;
    bool overwritten = false;
    for (size_t j = index + 1; j < spec.primitives.size(); ++j) {
      const auto& later = spec.primitives[j];
      bool later_sets = (param == 0) ? later.kappa.has_value() : later.mu.has_value();
      if (later_sets && later.contains(x)) {
        overwritten = true;
        break;
      }
    }
    if (!overwritten) out.push_back(i);
  }
  return out;
}

std::vector<int> background_support(const TetMesh& mesh, const PhantomSpec& spec, int param) {
  std::vector<int> out;
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    const Vec3& x = mesh.vertices()[i];
    bool covered = false;
    for (const auto& prim : spec.primitives) {
      bool sets = (param == 0) ? prim.kappa.has_value() : prim.mu.has_value();
      if (sets && prim.contains(x)) {
        covered = true;
        break;
      }
    }
    if (!covered) out.push_back(i);
  }
  return out;
}

double mean_over(const NodalField& f, const std::vector<int>& support) {
  if (support.empty()) throw ConfigError("mean_over: empty support");
  double s = 0.0;
  for (int i : support) s += f[i];
  return s / static_cast<double>(support.size());
}

PhantomSpec test2_phantom(double kappa_bg, double mu_bg) {
  PhantomSpec spec;
  spec.kappa_bg = kappa_bg;
  spec.mu_bg = mu_bg;

  Primitive shell;
  shell.shape = Primitive::Shape::spherical_shell;
  shell.inner_radius = 4.0;
  shell.outer_radius = 5.0;
  shell.mu = 0.02;

  Primitive ball;
  ball.shape = Primitive::Shape::sphere;
  ball.radius = 3.0;
  ball.kappa = 0.2;

  // Crosses come last so they win at the intersections with the shell/ball.
  Primitive mu_cross;
  mu_cross.shape = Primitive::Shape::planar_cross;
  mu_cross.normal = Vec3(1.0, 0.0, -1.0);  // plane z = x
  mu_cross.in_plane_axis = Vec3(1.0, 0.0, 1.0);
  mu_cross.half_thickness = 1.0;
  mu_cross.arm_half_length = 5.0;
  mu_cross.arm_half_width = 1.0;
  mu_cross.mu = 0.01;

  Primitive kappa_cross;
  kappa_cross.shape = Primitive::Shape::planar_cross;
  kappa_cross.normal = Vec3(1.0, 0.0, 1.0);  // plane z = -x
  kappa_cross.in_plane_axis = Vec3(1.0, 0.0, -1.0);
  kappa_cross.half_thickness = 1.0;
  kappa_cross.arm_half_length = 5.0;
  kappa_cross.arm_half_width = 1.0;
  kappa_cross.kappa = 0.4;

  spec.primitives = {shell, ball, mu_cross, kappa_cross};
  return spec;
}

}  // namespace qpat
