#pragma once

// Run configuration, landmark file I/O, forward simulation of landmark data and
// the three command-line drivers (simulate, match, template).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bridgemark/inference.hpp"

namespace bridgemark::cli {

using json = nlohmann::json;

/// Shortest decimal that parses back to the same double (at most 17 significant digits).
std::string format_double(double v);
/// Parses a full token as a double; throws ConfigError otherwise.
double parse_double(std::string_view s);

/// A set of landmark configurations sharing n and d, in file order.
struct ShapeSet {
  Dims dims;
  std::vector<Vector> shapes;
};

/// CSV with header `shape,landmark,coord,value`; each shape must be a complete
/// n x d block with contiguous indices starting at 0.
ShapeSet read_shape_csv(const std::filesystem::path& path);
void write_shape_csv(const std::filesystem::path& path, const ShapeSet& set);

Vector ellipse(int n, double rx, double ry, const Vector& center);
Vector circle(int n, double r, const Vector& center);
/// Rotates a 2D configuration about its centroid by `angle` and scales the
/// first axis by `stretch`.
Vector rotate_and_stretch(Dims dims, const Vector& q, double angle, double stretch);

enum class Mode { Simulate, Match, Template };
std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct RunConfig {
  Mode mode = Mode::Match;
  std::uint64_t seed = 1;

  // model
  ModelVariant variant = ModelVariant::Lagrangian;
  double gamma = 0.1;           // total noise level, per-landmark gamma / sqrt(n)
  double lambda = 0.25;         // Langevin damping
  double tau = 0.5;             // Eulerian noise-field width
  std::vector<double> noise_gamma;                 // per direction; empty -> gamma
  std::optional<std::pair<Vector, Vector>> noise_box;  // centre range; empty -> data box
  double kernel_c = 1.0;
  double a0 = 1.0;

  // observation and time discretisation
  double eps = 0.01;
  double T = 1.0;
  double grid_mesh = 0.01;
  bool transformed_grid = true;

  // sampler
  ChainSettings chain;
  double gram_jitter = 0.0;

  // data sources (JSON objects, defaults materialised)
  json v0, vT, shapes, initial, p0;
  int count = 10;                  // simulate: number of trajectories
  bool write_trajectories = false;
  int trajectory_every = 1;
  json template_init;              // "first" or a shape source
  bool perturb_init = false;
  double perturb_angle = 0.5;
  double perturb_stretch = 1.3;

  /// Reads a config document. Relative file paths are resolved against base_dir.
  static RunConfig from_json(const json& j, const std::filesystem::path& base_dir);
  /// Complete resolved config, suitable for re-running.
  json to_json() const;
  void validate() const;
};

RunConfig load_config(const std::filesystem::path& path);

/// Loads a shape source: {"generator": "ellipse"|"circle"|"points", ...} or
/// {"file": path[, "shape": k]}. Returns all shapes it names.
ShapeSet load_shapes(const json& source);

ModelSpec build_model(const RunConfig& cfg, Dims dims, const std::vector<Vector>& data);
TimeGrid build_grid(const RunConfig& cfg);

/// Euler-Maruyama in Ito form (Eulerian correction included) driven by W.
/// Returns the end state; states receives every knot when non-null.
Vector forward_euler_maruyama(const ModelSpec& spec, const Vector& x0, const TimeGrid& grid,
                              const WienerPath& W, std::vector<Vector>* states = nullptr);

/// Output files are written to out_dir (created if needed).
void run_simulate(const RunConfig& cfg, const std::filesystem::path& out_dir);
void run_match(const RunConfig& cfg, const std::filesystem::path& out_dir);
void run_template(const RunConfig& cfg, const std::filesystem::path& out_dir);

/// Entry point of the `bridgemark` executable; returns the process exit code
/// (0 success, 1 configuration error, 2 numerical failure).
int main(int argc, char** argv);

}  // namespace bridgemark::cli
