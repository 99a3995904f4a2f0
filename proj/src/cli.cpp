#include "bridgemark/cli.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>

#include <CLI11.hpp>

namespace bridgemark::cli {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError("cannot parse number '" + std::string(s) + "'");
  return v;
}

namespace {

long parse_index(std::string_view s) {
  const double v = parse_double(s);
  if (v != std::floor(v) || v < 0 || v > 1e9) throw ConfigError("bad index '" + std::string(s) + "'");
  return static_cast<long>(v);
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path.string());
  return f;
}

}  // namespace

ShapeSet read_shape_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open shape file " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw ConfigError("shape file " + path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "shape,landmark,coord,value")
    throw ConfigError("shape file " + path.string() + " must start with header shape,landmark,coord,value");

  // shape id -> (landmark, coord) -> value, keeping first-appearance order of shapes
  std::vector<long> order;
  std::map<long, std::map<std::pair<long, long>, double>> rows;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split_csv(line);
    if (cols.size() != 4)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected 4 columns");
    const long s = parse_index(cols[0]), i = parse_index(cols[1]), a = parse_index(cols[2]);
    const double v = parse_double(cols[3]);
    if (!rows.count(s)) order.push_back(s);
    if (!rows[s].emplace(std::make_pair(i, a), v).second)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": duplicate entry");
  }
  if (order.empty()) throw ConfigError("shape file " + path.string() + " has no rows");

  ShapeSet set;
  for (long s : order) {
    const auto& block = rows[s];
    long n = 0, d = 0;
    for (const auto& [key, v] : block) {
      n = std::max(n, key.first + 1);
      d = std::max(d, key.second + 1);
    }
    if (static_cast<long>(block.size()) != n * d)
      throw ConfigError("shape " + std::to_string(s) + " in " + path.string() + " is not a complete n x d block");
    const Dims dims{static_cast<int>(n), static_cast<int>(d)};
    if (set.shapes.empty())
      set.dims = dims;
    else if (!(dims == set.dims))
      throw ConfigError("shapes in " + path.string() + " differ in landmark count or dimension");
    Vector q(n * d);
    for (const auto& [key, v] : block) q[key.first * d + key.second] = v;
    set.shapes.push_back(std::move(q));
  }
  return set;
}

void write_shape_csv(const fs::path& path, const ShapeSet& set) {
  auto f = open_out(path);
  f << "shape,landmark,coord,value\n";
  for (std::size_t s = 0; s < set.shapes.size(); ++s)
    for (int i = 0; i < set.dims.n; ++i)
      for (int a = 0; a < set.dims.d; ++a)
        f << s << ',' << i << ',' << a << ',' << format_double(set.shapes[s][i * set.dims.d + a]) << '\n';
}

Vector ellipse(int n, double rx, double ry, const Vector& center) {
  if (n < 1 || !(rx > 0.0) || !(ry > 0.0)) throw ConfigError("ellipse needs n >= 1 and positive axes");
  if (center.size() != 2) throw ConfigError("ellipse centre must be 2-dimensional");
  Vector q(2 * n);
  for (int i = 0; i < n; ++i) {
    const double t = 2.0 * std::numbers::pi * i / n;
    q[2 * i] = center[0] + rx * std::cos(t);
    q[2 * i + 1] = center[1] + ry * std::sin(t);
  }
  return q;
}

Vector circle(int n, double r, const Vector& center) { return ellipse(n, r, r, center); }

Vector rotate_and_stretch(Dims dims, const Vector& q, double angle, double stretch) {
  if (!(stretch > 0.0)) throw ConfigError("stretch factor must be positive");
  Vector out = q;
  Vector c = Vector::Zero(dims.d);
  for (int i = 0; i < dims.n; ++i) c += q.segment(i * dims.d, dims.d);
  c /= dims.n;
  for (int i = 0; i < dims.n; ++i) {
    Vector u = q.segment(i * dims.d, dims.d) - c;
    if (dims.d == 2) {
      const double x = std::cos(angle) * u[0] - std::sin(angle) * u[1];
      const double y = std::sin(angle) * u[0] + std::cos(angle) * u[1];
      u << x, y;
    }
    u[0] *= stretch;
    out.segment(i * dims.d, dims.d) = c + u;
  }
  return out;
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::Simulate: return "simulate";
    case Mode::Match: return "match";
    case Mode::Template: return "template";
  }
  return "unknown";
}

Mode mode_from_string(const std::string& s) {
  if (s == "simulate") return Mode::Simulate;
  if (s == "match") return Mode::Match;
  if (s == "template") return Mode::Template;
  throw ConfigError("unknown mode '" + s + "'");
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
T get_or(const json& j, const char* key, T def) {
  if (!j.contains(key) || j.at(key).is_null()) return def;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config field '") + key + "' has the wrong type");
  }
}

json sub_or_empty(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return json::object();
  return j.at(key);
}

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> to_std(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

// Fills in generator defaults and absolutises file paths.
json resolve_source(const json& src, const fs::path& base, const std::string& where) {
  if (src.is_null()) return src;
  if (!src.is_object()) throw ConfigError(where + " must be a shape source object");
  json out;
  if (src.contains("file")) {
    check_keys(src, {"file", "shape"}, where);
    fs::path p = get_or<std::string>(src, "file", "");
    if (p.is_relative()) p = base / p;
    out["file"] = fs::absolute(p).lexically_normal().string();
    if (src.contains("shape") && !src.at("shape").is_null()) out["shape"] = get_or<int>(src, "shape", 0);
    return out;
  }
  const std::string gen = get_or<std::string>(src, "generator", "");
  out["generator"] = gen;
  if (gen == "ellipse") {
    check_keys(src, {"generator", "n", "rx", "ry", "center"}, where);
    out["n"] = get_or<int>(src, "n", 15);
    out["rx"] = get_or<double>(src, "rx", 2.0);
    out["ry"] = get_or<double>(src, "ry", 1.0);
    out["center"] = get_or<std::vector<double>>(src, "center", {0.0, 0.0});
  } else if (gen == "circle") {
    check_keys(src, {"generator", "n", "r", "center"}, where);
    out["n"] = get_or<int>(src, "n", 15);
    out["r"] = get_or<double>(src, "r", 1.0);
    out["center"] = get_or<std::vector<double>>(src, "center", {0.0, 0.0});
  } else if (gen == "points") {
    check_keys(src, {"generator", "d", "values"}, where);
    out["d"] = get_or<int>(src, "d", 1);
    if (!src.contains("values")) throw ConfigError(where + ": points generator needs 'values'");
    out["values"] = get_or<std::vector<double>>(src, "values", {});
  } else {
    throw ConfigError(where + ": unknown generator '" + gen + "' (expected ellipse, circle, points or a file)");
  }
  return out;
}

}  // namespace

ShapeSet load_shapes(const json& source) {
  if (!source.is_object()) throw ConfigError("missing shape source");
  if (source.contains("file")) {
    ShapeSet all = read_shape_csv(source.at("file").get<std::string>());
    if (source.contains("shape")) {
      const int k = source.at("shape").get<int>();
      if (k < 0 || k >= static_cast<int>(all.shapes.size()))
        throw ConfigError("shape index " + std::to_string(k) + " out of range");
      return ShapeSet{all.dims, {all.shapes[k]}};
    }
    return all;
  }
  const std::string gen = source.at("generator").get<std::string>();
  if (gen == "points") {
    const int d = source.at("d").get<int>();
    const auto vals = source.at("values").get<std::vector<double>>();
    if (d < 1 || vals.empty() || vals.size() % d != 0)
      throw ConfigError("points generator: values must be a non-empty multiple of d");
    return ShapeSet{Dims{static_cast<int>(vals.size()) / d, d}, {to_vector(vals)}};
  }
  const int n = source.at("n").get<int>();
  const Vector c = to_vector(source.at("center").get<std::vector<double>>());
  if (gen == "ellipse")
    return ShapeSet{Dims{n, 2}, {ellipse(n, source.at("rx").get<double>(), source.at("ry").get<double>(), c)}};
  return ShapeSet{Dims{n, 2}, {circle(n, source.at("r").get<double>(), c)}};
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base) {
  RunConfig c;
  try {
    check_keys(j, {"mode", "seed", "model", "a0", "eps", "T", "grid_mesh", "grid", "mcmc", "priors", "data",
                   "simulate", "template"},
               "config");
    c.mode = mode_from_string(get_or<std::string>(j, "mode", "match"));
    c.seed = get_or<std::uint64_t>(j, "seed", 1);
    c.chain.seed = c.seed;

    const json m = sub_or_empty(j, "model");
    check_keys(m, {"variant", "gamma", "lambda", "tau", "noise_gamma", "noise_box", "kernel_c"}, "model");
    c.variant = model_variant_from_string(get_or<std::string>(m, "variant", "lagrangian"));
    c.gamma = get_or<double>(m, "gamma", c.gamma);
    c.lambda = get_or<double>(m, "lambda", c.lambda);
    c.tau = get_or<double>(m, "tau", c.tau);
    c.noise_gamma = get_or<std::vector<double>>(m, "noise_gamma", {});
    c.kernel_c = get_or<double>(m, "kernel_c", c.kernel_c);
    if (m.contains("noise_box") && !m.at("noise_box").is_null()) {
      const json& nb = m.at("noise_box");
      check_keys(nb, {"lo", "hi"}, "model.noise_box");
      c.noise_box = std::make_pair(to_vector(get_or<std::vector<double>>(nb, "lo", {})),
                                   to_vector(get_or<std::vector<double>>(nb, "hi", {})));
    }

    c.a0 = get_or<double>(j, "a0", c.a0);
    c.eps = get_or<double>(j, "eps", c.eps);
    c.T = get_or<double>(j, "T", c.T);
    c.grid_mesh = get_or<double>(j, "grid_mesh", c.grid_mesh);
    const std::string grid = get_or<std::string>(j, "grid", "transformed");
    if (grid != "transformed" && grid != "uniform") throw ConfigError("grid must be 'transformed' or 'uniform'");
    c.transformed_grid = grid == "transformed";

    const json mc = sub_or_empty(j, "mcmc");
    check_keys(mc, {"iterations", "save_every", "trace_every", "eta", "delta_mala", "delta_rmmala", "sigma_theta",
                    "fix_theta", "adapt", "threads", "gram_jitter"},
               "mcmc");
    ChainSettings& s = c.chain;
    s.iterations = get_or<int>(mc, "iterations", s.iterations);
    s.save_every = get_or<int>(mc, "save_every", s.save_every);
    s.trace_every = get_or<int>(mc, "trace_every", s.trace_every);
    s.tuning.eta = get_or<double>(mc, "eta", s.tuning.eta);
    s.tuning.delta_mala = get_or<double>(mc, "delta_mala", s.tuning.delta_mala);
    s.tuning.delta_rmmala = get_or<double>(mc, "delta_rmmala", s.tuning.delta_rmmala);
    s.tuning.sigma_theta = get_or<double>(mc, "sigma_theta", s.tuning.sigma_theta);
    s.fix_theta = get_or<bool>(mc, "fix_theta", s.fix_theta);
    s.adapt = get_or<bool>(mc, "adapt", s.adapt);
    s.threads = get_or<int>(mc, "threads", s.threads);
    c.gram_jitter = get_or<double>(mc, "gram_jitter", c.gram_jitter);

    const json pr = sub_or_empty(j, "priors");
    check_keys(pr, {"pareto_scale", "pareto_min", "kappa_mom", "kappa_pos"}, "priors");
    s.priors.pareto_scale = get_or<double>(pr, "pareto_scale", s.priors.pareto_scale);
    s.priors.pareto_min = get_or<double>(pr, "pareto_min", s.priors.pareto_min);
    s.priors.kappa_mom = get_or<double>(pr, "kappa_mom", s.priors.kappa_mom);
    s.priors.kappa_pos = get_or<double>(pr, "kappa_pos", s.priors.kappa_pos);

    const json d = sub_or_empty(j, "data");
    check_keys(d, {"v0", "vT", "shapes", "initial", "p0"}, "data");
    c.v0 = resolve_source(d.value("v0", json()), base, "data.v0");
    c.vT = resolve_source(d.value("vT", json()), base, "data.vT");
    c.shapes = resolve_source(d.value("shapes", json()), base, "data.shapes");
    c.initial = resolve_source(d.value("initial", json()), base, "data.initial");
    if (d.contains("p0") && !d.at("p0").is_null()) c.p0 = get_or<std::vector<double>>(d, "p0", {});

    const json sim = sub_or_empty(j, "simulate");
    check_keys(sim, {"count", "write_trajectories", "trajectory_every"}, "simulate");
    c.count = get_or<int>(sim, "count", c.count);
    c.write_trajectories = get_or<bool>(sim, "write_trajectories", c.write_trajectories);
    c.trajectory_every = get_or<int>(sim, "trajectory_every", c.trajectory_every);

    const json tp = sub_or_empty(j, "template");
    check_keys(tp, {"init", "perturb"}, "template");
    if (!tp.contains("init") || tp.at("init").is_null() ||
        (tp.at("init").is_string() && tp.at("init").get<std::string>() == "first"))
      c.template_init = "first";
    else
      c.template_init = resolve_source(tp.at("init"), base, "template.init");
    const json pt = sub_or_empty(tp, "perturb");
    check_keys(pt, {"enabled", "angle", "stretch"}, "template.perturb");
    c.perturb_init = get_or<bool>(pt, "enabled", c.perturb_init);
    c.perturb_angle = get_or<double>(pt, "angle", c.perturb_angle);
    c.perturb_stretch = get_or<double>(pt, "stretch", c.perturb_stretch);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  c.validate();
  return c;
}

json RunConfig::to_json() const {
  json j;
  j["mode"] = to_string(mode);
  j["seed"] = seed;
  json m;
  m["variant"] = bridgemark::to_string(variant);
  m["gamma"] = gamma;
  m["lambda"] = lambda;
  m["tau"] = tau;
  m["noise_gamma"] = noise_gamma;
  if (noise_box)
    m["noise_box"] = {{"lo", to_std(noise_box->first)}, {"hi", to_std(noise_box->second)}};
  else
    m["noise_box"] = nullptr;
  m["kernel_c"] = kernel_c;
  j["model"] = m;
  j["a0"] = a0;
  j["eps"] = eps;
  j["T"] = T;
  j["grid_mesh"] = grid_mesh;
  j["grid"] = transformed_grid ? "transformed" : "uniform";
  const ChainSettings& s = chain;
  j["mcmc"] = {{"iterations", s.iterations},
               {"save_every", s.save_every},
               {"trace_every", s.trace_every},
               {"eta", s.tuning.eta},
               {"delta_mala", s.tuning.delta_mala},
               {"delta_rmmala", s.tuning.delta_rmmala},
               {"sigma_theta", s.tuning.sigma_theta},
               {"fix_theta", s.fix_theta},
               {"adapt", s.adapt},
               {"threads", s.threads},
               {"gram_jitter", gram_jitter}};
  j["priors"] = {{"pareto_scale", s.priors.pareto_scale},
                 {"pareto_min", s.priors.pareto_min},
                 {"kappa_mom", s.priors.kappa_mom},
                 {"kappa_pos", s.priors.kappa_pos}};
  j["data"] = {{"v0", v0}, {"vT", vT}, {"shapes", shapes}, {"initial", initial}, {"p0", p0}};
  j["simulate"] = {{"count", count}, {"write_trajectories", write_trajectories}, {"trajectory_every", trajectory_every}};
  j["template"] = {{"init", template_init},
                   {"perturb", {{"enabled", perturb_init}, {"angle", perturb_angle}, {"stretch", perturb_stretch}}}};
  return j;
}

void RunConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be positive and finite");
  };
  positive(a0, "a0");
  positive(eps, "eps");
  positive(T, "T");
  positive(grid_mesh, "grid_mesh");
  positive(tau, "tau");
  positive(kernel_c, "kernel_c");
  positive(chain.tuning.delta_mala, "delta_mala");
  positive(chain.tuning.delta_rmmala, "delta_rmmala");
  positive(chain.tuning.sigma_theta, "sigma_theta");
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be non-negative");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (!(chain.tuning.eta >= 0.0 && chain.tuning.eta <= 1.0)) throw ConfigError("eta must lie in [0, 1]");
  if (!(gram_jitter >= 0.0)) throw ConfigError("gram_jitter must be non-negative");
  if (grid_mesh > T) throw ConfigError("grid_mesh must not exceed T");
  if (chain.iterations < 1) throw ConfigError("iterations must be at least 1");
  if (chain.save_every < 1 || chain.trace_every < 1) throw ConfigError("save_every and trace_every must be positive");
  if (chain.threads < 1) throw ConfigError("threads must be at least 1");
  if (count < 1) throw ConfigError("simulate.count must be at least 1");
  if (trajectory_every < 1) throw ConfigError("simulate.trajectory_every must be positive");
  chain.priors.validate();
  switch (mode) {
    case Mode::Simulate:
      if (initial.is_null()) throw ConfigError("simulate mode needs data.initial");
      break;
    case Mode::Match:
      if (v0.is_null() || vT.is_null()) throw ConfigError("match mode needs data.v0 and data.vT");
      break;
    case Mode::Template:
      if (shapes.is_null()) throw ConfigError("template mode needs data.shapes");
      break;
  }
}

RunConfig load_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return RunConfig::from_json(j, fs::absolute(path).parent_path());
}

ModelSpec build_model(const RunConfig& cfg, Dims dims, const std::vector<Vector>& data) {
  const KernelParams k{cfg.a0, cfg.kernel_c};
  k.validate();
  switch (cfg.variant) {
    case ModelVariant::Lagrangian: return ModelSpec::lagrangian(dims, k, cfg.gamma);
    case ModelVariant::Langevin: return ModelSpec::langevin(dims, k, cfg.gamma, cfg.lambda);
    case ModelVariant::Eulerian: break;
  }
  Vector g = Vector::Constant(dims.d, cfg.gamma);
  if (!cfg.noise_gamma.empty()) {
    if (static_cast<int>(cfg.noise_gamma.size()) != dims.d) throw ConfigError("noise_gamma must have length d");
    g = to_vector(cfg.noise_gamma);
  }
  NoiseFieldGrid grid;
  if (cfg.noise_box) {
    const auto& [lo, hi] = *cfg.noise_box;
    if (lo.size() != dims.d || hi.size() != dims.d) throw ConfigError("noise_box corners must have length d");
    // centres from lo to hi inclusive with spacing 2 tau
    const Vector margin = Vector::Constant(dims.d, 2.0 * cfg.tau);
    grid = make_noise_grid(lo + margin, hi - margin, cfg.tau, g);
  } else {
    const auto [lo, hi] = bounding_box(dims, data);
    grid = make_noise_grid(lo, hi, cfg.tau, g);
  }
  return ModelSpec::eulerian(dims, k, std::move(grid));
}

TimeGrid build_grid(const RunConfig& cfg) {
  return cfg.transformed_grid ? TimeGrid::transformed(cfg.T, cfg.grid_mesh) : TimeGrid::uniform(cfg.T, cfg.grid_mesh);
}

Vector forward_euler_maruyama(const ModelSpec& spec, const Vector& x0, const TimeGrid& grid, const WienerPath& W,
                              std::vector<Vector>* states) {
  if (W.intervals() != grid.intervals() || W.dim() != wiener_dim(spec))
    throw ConfigError("Wiener path does not match grid or model");
  Vector x = x0;
  if (states) {
    states->clear();
    states->push_back(x);
  }
  for (int k = 0; k < grid.intervals(); ++k) {
    const Vector b = drift(spec, x);
    const Matrix s = diffusion(spec, x);
    x += grid.step(k) * b + s * W.increments.col(k);
    if (!x.allFinite()) throw NumericalError("forward simulation diverged");
    if (states) states->push_back(x);
  }
  return x;
}

namespace {

void write_meta(const RunConfig& cfg, const fs::path& out) {
  auto f = open_out(out / "run_meta.json");
  f << cfg.to_json().dump(2) << '\n';
}

void write_acceptance(const fs::path& path, const std::vector<std::pair<std::string, MoveStats>>& moves) {
  auto f = open_out(path);
  f << "move,proposed,accepted,rate\n";
  for (const auto& [name, s] : moves)
    f << name << ',' << s.proposed << ',' << s.accepted << ',' << format_double(s.rate()) << '\n';
}

void write_theta(const fs::path& path, const std::vector<ThetaSample>& thetas) {
  auto f = open_out(path);
  f << "iter,a,logPsi\n";
  for (const auto& t : thetas) f << t.iteration << ',' << format_double(t.theta) << ',' << format_double(t.log_psi) << '\n';
}

Vector first_shape(const json& src, const char* what) {
  ShapeSet s = load_shapes(src);
  if (s.shapes.size() != 1) throw ConfigError(std::string(what) + " must name a single shape (use \"shape\": k)");
  return s.shapes.front();
}

Dims dims_of(const json& src) { return load_shapes(src).dims; }

ProblemSetup make_setup(const RunConfig& cfg, Dims dims, const std::vector<Vector>& data) {
  ProblemSetup setup{build_model(cfg, dims, data), build_grid(cfg), cfg.eps, cfg.gram_jitter, std::nullopt};
  return setup;
}

}  // namespace

void run_simulate(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const Dims dims = dims_of(cfg.initial);
  const Vector q0 = first_shape(cfg.initial, "data.initial");
  Vector p0 = Vector::Zero(dims.nd());
  if (!cfg.p0.is_null()) {
    const auto v = cfg.p0.get<std::vector<double>>();
    if (static_cast<int>(v.size()) != dims.nd()) throw ConfigError("data.p0 must have n*d entries");
    p0 = to_vector(v);
  }
  LandmarkConfig(dims.n, dims.d, q0, 1e-8 * cfg.a0);
  const ModelSpec spec = build_model(cfg, dims, {q0});
  const TimeGrid grid = TimeGrid::uniform(cfg.T, cfg.grid_mesh);
  Vector x0(dims.state());
  x0 << q0, p0;

  fs::create_directories(out);
  ShapeSet observed{dims, {}};
  std::ofstream traj;
  if (cfg.write_trajectories) {
    traj = open_out(out / "trajectories.csv");
    traj << "shape,step,time,block,landmark,coord,value\n";
  }
  for (int s = 0; s < cfg.count; ++s) {
    RandomStream wr(cfg.seed, StreamPurpose::ForwardSimulation, s, 0);
    RandomStream nr(cfg.seed, StreamPurpose::ObservationNoise, s, 0);
    const WienerPath W = sample_wiener(wr, grid, wiener_dim(spec));
    std::vector<Vector> states;
    const Vector xT = forward_euler_maruyama(spec, x0, grid, W, cfg.write_trajectories ? &states : nullptr);
    Vector v = xT.head(dims.nd());
    for (int i = 0; i < dims.nd(); ++i) v[i] += cfg.eps * nr.normal();
    observed.shapes.push_back(v);
    if (cfg.write_trajectories) {
      for (std::size_t k = 0; k < states.size(); k += cfg.trajectory_every) {
        const std::string t = format_double(grid.t(static_cast<int>(k)));
        for (int b = 0; b < 2; ++b)
          for (int i = 0; i < dims.n; ++i)
            for (int a = 0; a < dims.d; ++a)
              traj << s << ',' << k << ',' << t << ',' << (b == 0 ? 'q' : 'p') << ',' << i << ',' << a << ','
                   << format_double(states[k][b * dims.nd() + i * dims.d + a]) << '\n';
      }
    }
  }
  write_shape_csv(out / "shapes.csv", observed);
  write_shape_csv(out / "initial.csv", ShapeSet{dims, {q0}});
  write_meta(cfg, out);
}

void run_match(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const ShapeSet s0 = load_shapes(cfg.v0), sT = load_shapes(cfg.vT);
  if (s0.shapes.size() != 1 || sT.shapes.size() != 1)
    throw ConfigError("data.v0 and data.vT must each name a single shape");
  if (!(s0.dims == sT.dims)) throw ConfigError("v0 and vT differ in landmark count or dimension");
  const Dims dims = s0.dims;
  const double sep = 1e-8 * cfg.a0;
  const LandmarkConfig v0(dims.n, dims.d, s0.shapes[0], sep), vT(dims.n, dims.d, sT.shapes[0], sep);
  const ProblemSetup setup = make_setup(cfg, dims, {v0.q(), vT.q()});

  const MatchingOutput res = run_matching(setup, cfg.chain, v0, vT, cfg.a0);

  fs::create_directories(out);
  {
    auto f = open_out(out / "bridges.csv");
    f << "iter,time,landmark,coord,value\n";
    const TimeGrid& grid = setup.grid;
    for (std::size_t s = 0; s < res.saved_paths.size(); ++s) {
      const auto& states = res.saved_paths[s].states;
      for (std::size_t k = 0; k < states.size(); ++k) {
        const std::string t = format_double(grid.t(static_cast<int>(k)));
        for (int i = 0; i < dims.n; ++i)
          for (int a = 0; a < dims.d; ++a)
            f << res.saved_iterations[s] << ',' << t << ',' << i << ',' << a << ','
              << format_double(states[k][i * dims.d + a]) << '\n';
      }
    }
  }
  {
    auto f = open_out(out / "momenta.csv");
    f << "iter,landmark,coord,time,value\n";
    const std::string t0 = format_double(0.0), tT = format_double(setup.grid.T());
    for (const auto& m : res.momenta)
      for (int b = 0; b < 2; ++b)
        for (int i = 0; i < dims.n; ++i)
          for (int a = 0; a < dims.d; ++a)
            f << m.iteration << ',' << i << ',' << a << ',' << (b == 0 ? t0 : tT) << ','
              << format_double((b == 0 ? m.p0 : m.pT)[i * dims.d + a]) << '\n';
  }
  write_theta(out / "theta.csv", res.thetas);
  write_acceptance(out / "acceptance.csv",
                   {{"bridge", res.bridge}, {"momenta", res.momenta_moves}, {"theta", res.theta_moves}});
  write_meta(cfg, out);
}

void run_template(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const ShapeSet set = load_shapes(cfg.shapes);
  const Dims dims = set.dims;
  const double sep = 1e-8 * cfg.a0;
  std::vector<LandmarkConfig> shapes;
  for (const Vector& q : set.shapes) shapes.emplace_back(dims.n, dims.d, q, sep);

  Vector q0 = set.shapes.front();
  if (!(cfg.template_init.is_string() && cfg.template_init.get<std::string>() == "first")) {
    const ShapeSet init = load_shapes(cfg.template_init);
    if (!(init.dims == dims) || init.shapes.size() != 1)
      throw ConfigError("template.init must name one shape with the data's n and d");
    q0 = init.shapes.front();
  }
  if (cfg.perturb_init) q0 = rotate_and_stretch(dims, q0, cfg.perturb_angle, cfg.perturb_stretch);
  LandmarkConfig(dims.n, dims.d, q0, sep);

  std::vector<Vector> data = set.shapes;
  data.push_back(q0);
  const ProblemSetup setup = make_setup(cfg, dims, data);
  const TemplateOutput res = bridgemark::run_template(setup, cfg.chain, shapes, q0, cfg.a0);

  fs::create_directories(out);
  {
    auto f = open_out(out / "template.csv");
    f << "iter,landmark,coord,value\n";
    for (const auto& t : res.templates)
      for (int i = 0; i < dims.n; ++i)
        for (int a = 0; a < dims.d; ++a)
          f << t.iteration << ',' << i << ',' << a << ',' << format_double(t.q0[i * dims.d + a]) << '\n';
  }
  write_theta(out / "theta.csv", res.thetas);
  write_acceptance(out / "acceptance.csv",
                   {{"bridge", res.bridge}, {"theta", res.theta_moves}, {"template", res.template_moves}});
  write_meta(cfg, out);
}

int main(int argc, char** argv) {
  CLI::App app{"Stochastic landmark bridges: simulation, matching and template estimation"};
  app.require_subcommand(1);
  std::string config_path, out_dir = "out";
  std::optional<std::uint64_t> seed;
  for (const char* name : {"simulate", "match", "template"}) {
    auto* sub = app.add_subcommand(name, std::string("run in ") + name + " mode");
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--seed", seed, "override the configured seed");
    sub->add_option("--out", out_dir, "output directory")->capture_default_str();
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  const std::string mode = app.get_subcommands().front()->get_name();
  try {
    std::ifstream f(config_path);
    if (!f) throw ConfigError("cannot open config file " + config_path);
    json j;
    try {
      j = json::parse(f);
    } catch (const json::exception& e) {
      throw ConfigError("config is not valid JSON: " + std::string(e.what()));
    }
    if (j.contains("mode") && j.at("mode").is_string() && j.at("mode").get<std::string>() != mode)
      throw ConfigError("config mode '" + j.at("mode").get<std::string>() + "' does not match subcommand '" + mode + "'");
    j["mode"] = mode;
    if (seed) j["seed"] = *seed;
    const RunConfig cfg = RunConfig::from_json(j, fs::absolute(config_path).parent_path());
    switch (cfg.mode) {
      case Mode::Simulate: run_simulate(cfg, out_dir); break;
      case Mode::Match: run_match(cfg, out_dir); break;
      case Mode::Template: run_template(cfg, out_dir); break;
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "file error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace bridgemark::cli
