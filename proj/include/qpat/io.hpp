#pragma once

#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qpat/illumination.hpp"
#include "qpat/mesh.hpp"
#include "qpat/phantom.hpp"
#include "qpat/recon.hpp"
#include "qpat/simulate.hpp"

namespace qpat::io {

using nlohmann::json;

/// Mesh source: generated box or TetGen-style files.
struct MeshConfig {
  enum class Type { box, files };
  Type type = Type::box;
  // box
  int nx = 1, ny = 1, nz = 1;
  Vec3 origin = Vec3::Zero();
  Vec3 extent = Vec3::Ones();
  // files
  std::string node_path, ele_path;
  std::optional<std::string> face_path;

  TetMesh build() const;
};

/// Parsed, schema-validated run configuration. Unknown keys are rejected.
struct RunConfig {
  std::optional<std::string> mode;
  std::optional<MeshConfig> mesh;
  std::optional<MeshConfig> fine_mesh;
  std::optional<MeshConfig> coarse_mesh;
  std::optional<PhantomSpec> phantom;
  std::vector<Illumination> illuminations;
  double noise_level = 0.01;
  double sigma_floor = 1e-12;  // relative noise-std floor, vs max|h| per illumination
  bool model_error_sigma = true;  // fold a discretization-error estimate into sigma
  std::uint64_t seed = 0;
  std::string out = "out";
  std::optional<std::string> measurements;
  ReconConfig recon;
};

// Strict parsers (throw ConfigError on unknown keys or bad values) and their
// serializers; parse(serialize(parse(x))) is a fixed point.
RunConfig parse_run_config(const json& j);
json serialize_run_config(const RunConfig& cfg);
RunConfig load_run_config(const std::string& path);

PhantomSpec phantom_from_json(const json& j);
json phantom_to_json(const PhantomSpec& spec);
std::vector<Illumination> illuminations_from_json(const json& j);
json illuminations_to_json(const std::vector<Illumination>& illums);
ReconConfig recon_config_from_json(const json& j);
json recon_config_to_json(const ReconConfig& cfg);
MeshConfig mesh_config_from_json(const json& j);
json mesh_config_to_json(const MeshConfig& cfg);

/// Applies `key.path=value` overrides onto a raw config json.
void apply_override(json& j, const std::string& assignment);

/// Legacy-ASCII unstructured-grid writer: POINTS/CELLS (tet type) plus one
/// named scalar point-data array per field, floats with 17 significant digits.
/// Writes are atomic (temp file + rename).
void write_fields(const std::string& path, const TetMesh& mesh,
                  const std::vector<std::pair<std::string, NodalField>>& fields,
                  const std::string& title = "qpat fields");

struct FieldFile {
  TetMesh mesh;
  std::vector<std::pair<std::string, NodalField>> fields;
  const NodalField& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

FieldFile read_fields(const std::string& path);

void write_measurements(const std::string& path, const TetMesh& coarse,
                        const MeasurementSet& data);
std::pair<TetMesh, MeasurementSet> read_measurements(const std::string& path);

/// Residual log: header `outer,inner,inner_residual,nonlinear_residual,accepted`,
/// one row per inner iteration, one boundary row per outer step carrying the
/// nonlinear residual, plus a trailing `sqrt_KN` row with the theoretical
/// whitened noise level sqrt(K*N).
void write_residual_csv(const std::string& path, const ReconResult& result, int num_illuminations,
                        int num_nodes);

struct MeanRow {
  std::string parameter;  // "mu" or "kappa"
  std::string region;     // "bg" or "inclusion <i>"
  double target_mean = 0.0;
  double interp_target_mean = 0.0;
  double recon_mean = 0.0;
  int support_size = 0;
};

/// Mean-value bookkeeping over the declared inclusion supports on the coarse
/// mesh: true target value, interpolated target P*target, and reconstruction.
std::vector<MeanRow> compute_mean_table(const TetMesh& coarse, const TetMesh& fine,
                                        const PhantomSpec& phantom,
                                        const InterpolationOperator& P,
                                        const NodalField& kappa_rec, const NodalField& mu_rec);

void write_mean_table(const std::string& path, const std::vector<MeanRow>& rows);

/// Atomic text write (temp file + rename).
void write_text_atomic(const std::string& path, const std::string& content);

/// Dispatches one CLI mode. Returns 0 on success, 1 on config errors, 2 on
/// numerical failure. Outputs land under the config's (or overridden) out dir
/// together with a manifest echoing the normalized config, seed and versions.
int run(const std::string& mode, const std::string& config_path,
        const std::vector<std::string>& overrides = {},
        const std::optional<std::uint64_t>& seed_override = std::nullopt,
        const std::optional<std::string>& out_override = std::nullopt);

}  // namespace qpat::io
