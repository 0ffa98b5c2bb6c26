#include <CLI11.hpp>
#include <optional>
#include <string>
#include <vector>

#include "qpat/io.hpp"
#include "qpat/version.hpp"

int main(int argc, char** argv) {
  CLI::App app{"qpat: quantitative photoacoustic tomography toolkit"};
  app.set_version_flag("--version", QPAT_VERSION);
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;

  const char* modes[] = {"simulate", "reconstruct", "forward", "check-jacobian", "info"};
  const char* descriptions[] = {
      "synthesize phantom measurements on a fine mesh and project them onto the inversion mesh",
      "run the full reconstruction on a measurement file",
      "solve the forward problem for a phantom and write fluence/energy fields",
      "verify the matrix-free Jacobian against the adjoint identity and finite differences",
      "print mesh statistics",
  };

  for (int i = 0; i < 5; ++i) {
    CLI::App* sub = app.add_subcommand(modes[i], descriptions[i]);
    auto* copt = sub->add_option("--config", config_path, "JSON config file");
    if (i != 3) copt->required();  // check-jacobian has built-in defaults
    sub->add_option("--override", overrides, "config override key.path=value (repeatable)");
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t v) { seed = v; }, "random seed override");
    sub->add_option_function<std::string>(
        "--out", [&](const std::string& v) { out = v; }, "output directory override");
  }

  CLI11_PARSE(app, argc, argv);

  std::string mode = app.get_subcommands().front()->get_name();
  return qpat::io::run(mode, config_path, overrides, seed, out);
}
