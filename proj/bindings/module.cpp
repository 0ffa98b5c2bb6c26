#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>
#include <random>

#include "qpat/errors.hpp"
#include "qpat/forward.hpp"
#include "qpat/io.hpp"
#include "qpat/jacobian.hpp"
#include "qpat/mesh.hpp"
#include "qpat/phantom.hpp"
#include "qpat/prior.hpp"
#include "qpat/recon.hpp"
#include "qpat/simulate.hpp"
#include "qpat/version.hpp"

namespace py = pybind11;
using namespace qpat;

namespace {

nlohmann::json parse_json_arg(const std::string& s, const char* what) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(s);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(what) + ": invalid JSON: " + e.what());
  }
  return j;
}

PriorSpec prior_from_args(const std::string& kind, double param) {
  PriorSpec spec;
  if (kind == "perona_malik") {
    spec.kind = PriorSpec::Kind::perona_malik;
    spec.T = param;
  } else if (kind == "smoothed_tv") {
    spec.kind = PriorSpec::Kind::smoothed_tv;
    spec.tv_epsilon = param;
  } else {
    throw ConfigError("prior kind must be perona_malik or smoothed_tv");
  }
  return spec;
}

Eigen::MatrixXd vertices_array(const TetMesh& m) {
  Eigen::MatrixXd out(m.num_vertices(), 3);
  for (int i = 0; i < m.num_vertices(); ++i) out.row(i) = m.vertices()[i];
  return out;
}

Eigen::MatrixXi tets_array(const TetMesh& m) {
  Eigen::MatrixXi out(m.num_tets(), 4);
  for (int e = 0; e < m.num_tets(); ++e)
    for (int k = 0; k < 4; ++k) out(e, k) = m.tets()[e][k];
  return out;
}

}  // namespace

PYBIND11_MODULE(_qpat, m) {
  m.doc() = "Optical inversion for quantitative photoacoustic tomography";
  m.attr("__version__") = QPAT_VERSION;

  py::register_exception<ConfigError>(m, "QpatConfigError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "QpatNumericalError", PyExc_RuntimeError);

  py::class_<TetMesh>(m, "TetMesh")
      .def_property_readonly("num_vertices", &TetMesh::num_vertices)
      .def_property_readonly("num_tets", &TetMesh::num_tets)
      .def_property_readonly("num_boundary_facets", &TetMesh::num_boundary_facets)
      .def_property_readonly("total_volume", &TetMesh::total_volume)
      .def_property_readonly("surface_area", &TetMesh::surface_area)
      .def("vertices", &vertices_array, "Vertex coordinates, shape (N, 3)")
      .def("tets", &tets_array, "Tet connectivity, shape (M, 4)")
      .def("__repr__", [](const TetMesh& mesh) {
        return "TetMesh(" + std::to_string(mesh.num_vertices()) + " vertices, " +
               std::to_string(mesh.num_tets()) + " tets)";
      });

  m.def("generate_box_mesh", &generate_box_mesh, py::arg("nx"), py::arg("ny"), py::arg("nz"),
        py::arg("origin") = Vec3::Zero(), py::arg("extent") = Vec3::Ones());
  m.def(
      "load_mesh",
      [](const std::string& node, const std::string& ele, const std::optional<std::string>& face) {
        return load_mesh(node, ele, face);
      },
      py::arg("node"), py::arg("ele"), py::arg("face") = std::nullopt);
  m.def("save_mesh", &save_mesh, py::arg("mesh"), py::arg("base_path"));

  py::class_<InterpolationOperator>(m, "InterpolationOperator")
      .def("apply", &InterpolationOperator::apply)
      .def_property_readonly("shape", [](const InterpolationOperator& op) {
        return py::make_tuple(op.rows(), op.cols());
      });
  m.def("build_interpolation", &build_interpolation, py::arg("fine"), py::arg("coarse"));

  m.def(
      "rasterize_phantom",
      [](const TetMesh& mesh, const std::string& phantom_json) {
        return rasterize_phantom(mesh, io::phantom_from_json(parse_json_arg(phantom_json,
                                                                            "phantom")));
      },
      py::arg("mesh"), py::arg("phantom_json"),
      "Nodal (kappa, mu) fields for a phantom given as a JSON string");
  m.def("test2_phantom_json",
        []() { return io::phantom_to_json(test2_phantom()).dump(); });

  m.def("r_value", [](double t, const std::string& kind, double param) {
    return r_value(t, prior_from_args(kind, param));
  });
  m.def("diffusivity", [](double t, const std::string& kind, double param) {
    return diffusivity(t, prior_from_args(kind, param));
  });

  m.def(
      "forward",
      [](const TetMesh& mesh, const NodalField& kappa, const NodalField& mu,
         const std::string& illums_json) {
        auto illums = io::illuminations_from_json(parse_json_arg(illums_json, "illuminations"));
        OpticalState st = forward_solve_physical(mesh, kappa, mu, illums);
        py::dict out;
        py::list phi, h, balance;
        for (int k = 0; k < st.num_illuminations(); ++k) {
          phi.append(st.phi[k]);
          h.append(st.h_of(k));
          balance.append(st.energy_balance_err[k]);
        }
        out["phi"] = phi;
        out["h"] = h;
        out["energy_balance_err"] = balance;
        return out;
      },
      py::arg("mesh"), py::arg("kappa"), py::arg("mu"), py::arg("illuminations_json"),
      "Solve the diffusion forward problem for physical coefficient fields");

  m.def(
      "simulate",
      [](const TetMesh& fine, const std::string& phantom_json, const std::string& illums_json,
         const TetMesh& coarse, double noise_level, std::uint64_t seed, double sigma_floor,
         bool model_error_sigma) {
        auto phantom = io::phantom_from_json(parse_json_arg(phantom_json, "phantom"));
        auto illums = io::illuminations_from_json(parse_json_arg(illums_json, "illuminations"));
        MeasurementSet data = simulate_data(fine, phantom, illums, coarse, noise_level, seed,
                                            SolverMethod::direct, sigma_floor,
                                            model_error_sigma);
        py::dict out;
        out["chi"] = data.chi;
        out["sigma"] = data.sigma;
        out["seed"] = data.seed;
        return out;
      },
      py::arg("fine"), py::arg("phantom_json"), py::arg("illuminations_json"), py::arg("coarse"),
      py::arg("noise_level") = 0.01, py::arg("seed") = 0, py::arg("sigma_floor") = 1e-12,
      py::arg("model_error_sigma") = true);

  m.def(
      "reconstruct",
      [](const TetMesh& coarse, const std::vector<NodalField>& chi,
         const std::vector<NodalField>& sigma, const std::string& illums_json,
         const std::string& recon_json) {
        auto illums = io::illuminations_from_json(parse_json_arg(illums_json, "illuminations"));
        ReconConfig cfg = io::recon_config_from_json(parse_json_arg(recon_json, "recon"));
        MeasurementSet data;
        data.chi = chi;
        data.sigma = sigma;
        ReconResult res = reconstruct(coarse, data, illums, cfg);
        py::dict out;
        out["kappa"] = res.kappa;
        out["mu"] = res.mu;
        out["kappa0"] = res.kappa0;
        out["mu0"] = res.mu0;
        out["accepted_residuals"] = res.accepted_residuals;
        out["outer_iterations"] = res.outer_iterations;
        out["termination_reason"] = res.termination_reason;
        return out;
      },
      py::arg("coarse"), py::arg("chi"), py::arg("sigma"), py::arg("illuminations_json"),
      py::arg("recon_json") = "{}");

  m.def(
      "check_jacobian",
      [](const TetMesh& mesh, const std::string& illums_json, std::uint64_t seed) {
        auto illums = io::illuminations_from_json(parse_json_arg(illums_json, "illuminations"));
        const int n = mesh.num_vertices();
        std::mt19937_64 rng(seed + 7);
        std::uniform_real_distribution<double> uni(-0.3, 0.3);
        NodalField kt(n), mt(n);
        for (int i = 0; i < n; ++i) {
          kt[i] = uni(rng);
          mt[i] = uni(rng);
        }
        OpticalState st = evaluate_forward(mesh, kt, mt, 0.3, 0.015, illums);
        JacobianState js = build_jacobian_state(st);
        double worst = 0.0;
        for (int trial = 0; trial < 10; ++trial) {
          Eigen::VectorXd s(2 * n), t(static_cast<Eigen::Index>(illums.size()) * n);
          for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = uni(rng);
          for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = uni(rng);
          NodalField Js = jac_apply(js, s);
          double scale = Js.norm() * t.norm();
          if (scale > 0.0)
            worst = std::max(worst,
                             std::abs(Js.dot(t) - s.dot(jac_apply_transpose(js, t))) / scale);
        }
        return worst;
      },
      py::arg("mesh"), py::arg("illuminations_json"), py::arg("seed") = 0,
      "Worst adjoint-identity error over 10 random direction pairs");
}
