#pragma once

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "eit/diagnostics.hpp"
#include "eit/error.hpp"
#include "eit/fields.hpp"
#include "eit/forward.hpp"
#include "eit/inference.hpp"
#include "eit/mesh.hpp"
#include "eit/priors.hpp"
#include "eit/version.hpp"

namespace eit::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct MeshSettings {
  int fine_level = 3;
  int coarse_level = 2;
  int electrodes = 16;
  double coverage = 0.5;
  double contact_impedance = 0.01;

  ElectrodeLayout layout() const { return ElectrodeLayout::uniform(electrodes, coverage, contact_impedance); }
};

/// Elliptical inclusion: centre, semi-axes and rotation (radians).
struct Inclusion {
  Point center;
  double radius_x = 0.2;
  double radius_y = 0.2;
  double angle = 0.0;
  double value = 2.0;

  double area() const { return std::numbers::pi * radius_x * radius_y; }

  bool contains(Point p) const {
    const Point d = p - center;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (c * d.x + s * d.y) / radius_x, v = (-s * d.x + c * d.y) / radius_y;
    return u * u + v * v <= 1.0;
  }
};

struct TruthSpec {
  enum class Kind { star, blobs };
  Kind kind = Kind::star;
  // star: one draw from the star-shaped prior (values u_plus inside, u_minus outside)
  std::uint64_t seed = 1;
  PriorConfig star_prior = PriorConfig::star_shaped_reference(256);
  // blobs
  double background = 1.0;
  std::vector<Inclusion> inclusions;
};

/// Stand-in for the explicitly constructed second test conductivity: two
/// smooth inclusions of value 2 on a background of 1.
inline std::vector<Inclusion> default_blobs() {
  return {{{-0.35, 0.3}, 0.3, 0.2, 0.5, 2.0}, {{0.3, -0.3}, 0.22, 0.22, 0.0, 2.0}};
}

struct ChainSettings {
  double beta = 0.01;
  double delta = 0.01;
  std::uint64_t n_samples = 100000;
  std::uint64_t burn_in = 20000;
  std::uint64_t seed = 1;
  std::vector<Mode> monitors;
  std::uint64_t checkpoint_every = 10000;
  std::uint64_t snapshot_every = 10000;
  std::size_t max_snapshots = 8;
};

struct RunConfig {
  std::string output = "out";
  MeshSettings mesh;
  double amplitude = 0.1;
  double gamma = 2e-4;
  std::uint64_t noise_seed = 1;
  TruthSpec truth;
  PriorConfig prior = PriorConfig::level_set_reference(32);
  ChainSettings chain;
  int replicas = 1;

  // Command-line switches; not part of the stored configuration.
  bool allow_inverse_crime = false;
  bool force = false;

  fs::path out() const { return fs::path(output); }

  StimulationMatrix stimulation() const { return adjacent_stimulation_patterns(mesh.electrodes, amplitude); }

  ChainConfig chain_config(int replica) const {
    ChainConfig c;
    c.prior = prior;
    c.beta = chain.beta;
    c.delta = chain.delta;
    c.n_samples = chain.n_samples;
    c.burn_in = chain.burn_in;
    c.monitor_modes = chain.monitors;
    c.seed = chain.seed;
    c.stream = static_cast<std::uint64_t>(replica);
    c.snapshot_every = chain.snapshot_every;
    c.max_snapshots = chain.max_snapshots;
    return c;
  }

  void validate() const {
    mesh.layout().validate();
    if (mesh.coarse_level < 0) throw ConfigError("mesh levels must be non-negative");
    if (mesh.fine_level < mesh.coarse_level) throw ConfigError("the data mesh must be at least as fine as the inversion mesh");
    if (mesh.fine_level == mesh.coarse_level && !allow_inverse_crime)
      throw ConfigError("data and inversion meshes coincide (inverse crime); pass --allow-inverse-crime to permit this");
    if (!(amplitude > 0.0)) throw ConfigError("stimulation amplitude must be positive");
    if (!(gamma > 0.0)) throw ConfigError("noise level gamma must be positive");
    if (replicas < 1) throw ConfigError("replica count must be at least 1");
    if (truth.kind == TruthSpec::Kind::star) {
      truth.star_prior.validate();
      if (truth.star_prior.family != PriorConfig::Family::star_shaped) throw ConfigError("star truth needs a star prior");
    } else {
      if (truth.inclusions.empty()) throw ConfigError("blob truth needs at least one inclusion");
      if (!(truth.background > 0.0)) throw ConfigError("background conductivity must be positive");
      for (const auto& inc : truth.inclusions)
        if (!(inc.radius_x > 0.0 && inc.radius_y > 0.0 && inc.value > 0.0))
          throw ConfigError("inclusion radii and values must be positive");
    }
    chain_config(0).validate();
  }
};

// ---------------------------------------------------------------------------
// Config file

namespace detail {

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items())
    if (!ok.contains(key)) throw ConfigError("unknown key '" + (where.empty() ? key : where + "." + key) + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline Point read_point(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(where + " must be a pair of numbers");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline void read_prior(const json& j, PriorConfig& p, const std::string& where) {
  check_keys(j, where, {"family", "q", "tau", "alpha", "mean", "grid_size", "u_plus", "u_minus", "center_box",
                        "thresholds", "phases"});
  if (j.contains("family")) {
    const int n = j.value("grid_size", p.covariance.grid_size);
    switch (family_from_string(j.at("family").get<std::string>())) {
      case PriorConfig::Family::log_gaussian: p = PriorConfig::log_gaussian_reference(n); break;
      case PriorConfig::Family::star_shaped: p = PriorConfig::star_shaped_reference(n); break;
      case PriorConfig::Family::level_set: p = PriorConfig::level_set_reference(n); break;
    }
  }
  read(j, "q", p.covariance.q);
  read(j, "tau", p.covariance.tau);
  read(j, "alpha", p.covariance.alpha);
  read(j, "mean", p.mean);
  read(j, "grid_size", p.covariance.grid_size);
  read(j, "u_plus", p.u_plus);
  read(j, "u_minus", p.u_minus);
  if (j.contains("center_box")) {
    const Point box = read_point(j.at("center_box"), where + ".center_box");
    p.center_lo = box.x;
    p.center_hi = box.y;
  }
  read(j, "thresholds", p.thresholds);
  read(j, "phases", p.phases);
}

inline json prior_json(const PriorConfig& p) {
  json j{{"family", to_string(p.family)},
         {"q", p.covariance.q},
         {"tau", p.covariance.tau},
         {"alpha", p.covariance.alpha},
         {"mean", p.mean},
         {"grid_size", p.covariance.grid_size}};
  if (p.family == PriorConfig::Family::star_shaped) {
    j["u_plus"] = p.u_plus;
    j["u_minus"] = p.u_minus;
    j["center_box"] = {p.center_lo, p.center_hi};
  }
  if (p.family == PriorConfig::Family::level_set) {
    j["thresholds"] = p.thresholds;
    j["phases"] = p.phases;
  }
  return j;
}

}  // namespace detail

/// Parses a run configuration. Unknown keys anywhere are rejected.
inline RunConfig parse_config(const json& j) {
  using detail::check_keys;
  using detail::read;
  RunConfig c;
  try {
    check_keys(j, "", {"output", "mesh", "stimulation", "noise", "truth", "prior", "chain", "replicas"});
    read(j, "output", c.output);
    read(j, "replicas", c.replicas);
    if (j.contains("mesh")) {
      const json& m = j.at("mesh");
      check_keys(m, "mesh", {"fine_level", "coarse_level", "electrodes", "coverage", "contact_impedance"});
      read(m, "fine_level", c.mesh.fine_level);
      read(m, "coarse_level", c.mesh.coarse_level);
      read(m, "electrodes", c.mesh.electrodes);
      read(m, "coverage", c.mesh.coverage);
      read(m, "contact_impedance", c.mesh.contact_impedance);
    }
    if (j.contains("stimulation")) {
      check_keys(j.at("stimulation"), "stimulation", {"amplitude"});
      read(j.at("stimulation"), "amplitude", c.amplitude);
    }
    if (j.contains("noise")) {
      check_keys(j.at("noise"), "noise", {"gamma", "seed"});
      read(j.at("noise"), "gamma", c.gamma);
      read(j.at("noise"), "seed", c.noise_seed);
    }
    if (!j.contains("truth")) throw ConfigError("missing truth specification");
    {
      const json& t = j.at("truth");
      check_keys(t, "truth", {"kind", "seed", "prior", "background", "inclusions"});
      if (!t.contains("kind")) throw ConfigError("truth.kind is required ('star' or 'blobs')");
      const auto kind = t.at("kind").get<std::string>();
      if (kind == "star") {
        c.truth.kind = TruthSpec::Kind::star;
        read(t, "seed", c.truth.seed);
        if (t.contains("prior")) detail::read_prior(t.at("prior"), c.truth.star_prior, "truth.prior");
        if (t.contains("background") || t.contains("inclusions"))
          throw ConfigError("truth.background and truth.inclusions apply to kind 'blobs' only");
      } else if (kind == "blobs") {
        c.truth.kind = TruthSpec::Kind::blobs;
        read(t, "background", c.truth.background);
        if (t.contains("seed") || t.contains("prior")) throw ConfigError("truth.seed and truth.prior apply to kind 'star' only");
        if (t.contains("inclusions")) {
          for (std::size_t i = 0; const json& b : t.at("inclusions")) {
            const std::string where = "truth.inclusions[" + std::to_string(i++) + "]";
            check_keys(b, where, {"center", "radii", "angle", "value"});
            Inclusion inc;
            if (!b.contains("center") || !b.contains("radii")) throw ConfigError(where + " needs center and radii");
            inc.center = detail::read_point(b.at("center"), where + ".center");
            const Point r = detail::read_point(b.at("radii"), where + ".radii");
            inc.radius_x = r.x;
            inc.radius_y = r.y;
            read(b, "angle", inc.angle);
            read(b, "value", inc.value);
            c.truth.inclusions.push_back(inc);
          }
        } else {
          c.truth.inclusions = default_blobs();
        }
      } else {
        throw ConfigError("truth.kind must be 'star' or 'blobs'");
      }
    }
    if (!j.contains("prior")) throw ConfigError("missing prior specification");
    detail::read_prior(j.at("prior"), c.prior, "prior");
    if (j.contains("chain")) {
      const json& ch = j.at("chain");
      check_keys(ch, "chain", {"beta", "delta", "n_samples", "burn_in", "seed", "monitors", "checkpoint_every",
                               "snapshot_every", "max_snapshots"});
      read(ch, "beta", c.chain.beta);
      read(ch, "delta", c.chain.delta);
      read(ch, "n_samples", c.chain.n_samples);
      read(ch, "burn_in", c.chain.burn_in);
      read(ch, "seed", c.chain.seed);
      read(ch, "checkpoint_every", c.chain.checkpoint_every);
      read(ch, "snapshot_every", c.chain.snapshot_every);
      read(ch, "max_snapshots", c.chain.max_snapshots);
      if (ch.contains("monitors"))
        for (const json& m : ch.at("monitors")) {
          if (m.is_number_integer()) c.chain.monitors.push_back({m.get<int>(), 0});
          else if (m.is_array() && m.size() == 2) c.chain.monitors.push_back({m[0].get<int>(), m[1].get<int>()});
          else throw ConfigError("chain.monitors entries must be k or [k1, k2]");
        }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed configuration: ") + e.what());
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open configuration " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("configuration " + path + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

/// Canonical JSON form of a configuration (all defaults filled in).
inline json to_json(const RunConfig& c) {
  json j;
  j["output"] = c.output;
  j["replicas"] = c.replicas;
  j["mesh"] = {{"fine_level", c.mesh.fine_level},
               {"coarse_level", c.mesh.coarse_level},
               {"electrodes", c.mesh.electrodes},
               {"coverage", c.mesh.coverage},
               {"contact_impedance", c.mesh.contact_impedance}};
  j["stimulation"] = {{"amplitude", c.amplitude}};
  j["noise"] = {{"gamma", c.gamma}, {"seed", c.noise_seed}};
  if (c.truth.kind == TruthSpec::Kind::star) {
    j["truth"] = {{"kind", "star"}, {"seed", c.truth.seed}, {"prior", detail::prior_json(c.truth.star_prior)}};
  } else {
    json incs = json::array();
    for (const auto& i : c.truth.inclusions)
      incs.push_back({{"center", {i.center.x, i.center.y}},
                      {"radii", {i.radius_x, i.radius_y}},
                      {"angle", i.angle},
                      {"value", i.value}});
    j["truth"] = {{"kind", "blobs"}, {"background", c.truth.background}, {"inclusions", incs}};
  }
  j["prior"] = detail::prior_json(c.prior);
  json monitors = json::array();
  for (const Mode& m : c.chain.monitors) monitors.push_back({m.k1, m.k2});
  j["chain"] = {{"beta", c.chain.beta},
                {"delta", c.chain.delta},
                {"n_samples", c.chain.n_samples},
                {"burn_in", c.chain.burn_in},
                {"seed", c.chain.seed},
                {"monitors", monitors},
                {"checkpoint_every", c.chain.checkpoint_every},
                {"snapshot_every", c.chain.snapshot_every},
                {"max_snapshots", c.chain.max_snapshots}};
  return j;
}

// ---------------------------------------------------------------------------
// Manifests

enum class Stage { mesh, truth, data, run, diagnose, report };

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::mesh: return "mesh";
    case Stage::truth: return "make-truth";
    case Stage::data: return "make-data";
    case Stage::run: return "run";
    case Stage::diagnose: return "diagnose";
    case Stage::report: return "report";
  }
  return "?";
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex(std::uint64_t h) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

/// The configuration sections a stage's artifacts depend on (cumulative over
/// its upstream stages).
inline json stage_inputs(const RunConfig& c, Stage s) {
  const json full = to_json(c);
  json j;
  j["mesh"] = full["mesh"];
  if (s >= Stage::truth) j["truth"] = full["truth"];
  if (s >= Stage::data) {
    j["stimulation"] = full["stimulation"];
    j["noise"] = full["noise"];
  }
  if (s >= Stage::run) {
    j["prior"] = full["prior"];
    j["chain"] = full["chain"];
    j["replicas"] = full["replicas"];
  }
  return j;
}

inline std::string stage_hash(const RunConfig& c, Stage s) { return hex(fnv1a(stage_inputs(c, s).dump())); }

inline fs::path manifest_path(const RunConfig& c, Stage s) {
  return c.out() / (std::string(to_string(s)) + ".manifest.json");
}

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path.string());
  os << text;
  if (!os) throw ConfigError("failed writing " + path.string());
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace detail

inline void write_manifest(const RunConfig& c, Stage s, const std::vector<std::string>& artifacts) {
  json m;
  m["stage"] = to_string(s);
  m["config_hash"] = stage_hash(c, s);
  m["code_version"] = version;
  m["seeds"] = {{"truth", c.truth.seed}, {"noise", c.noise_seed}, {"chain", c.chain.seed}};
  m["config"] = stage_inputs(c, s);
  m["artifacts"] = artifacts;
  detail::write_json(manifest_path(c, s), m);
}

/// Throws unless every stage before `s` has a manifest matching `c`.
inline void check_upstream(const RunConfig& c, Stage s) {
  for (int i = 0; i < static_cast<int>(s); ++i) {
    const auto up = static_cast<Stage>(i);
    const fs::path p = manifest_path(c, up);
    if (!fs::exists(p))
      throw ConfigError(std::string("missing ") + p.string() + "; run '" + to_string(up) + "' first");
    const json m = detail::read_json(p);
    if (m.value("config_hash", "") != stage_hash(c, up) && !c.force)
      throw StaleManifestError(std::string("artifacts of stage '") + to_string(up) + "' in " + c.output +
                               " were produced from a different configuration (rerun it, or pass --force)");
  }
}

/// Throws if the stage's own previous artifacts came from another configuration.
inline bool check_own(const RunConfig& c, Stage s) {
  const fs::path p = manifest_path(c, s);
  if (!fs::exists(p)) return true;
  if (detail::read_json(p).value("config_hash", "") == stage_hash(c, s)) return true;
  if (!c.force)
    throw StaleManifestError(std::string("existing '") + to_string(s) + "' artifacts in " + c.output +
                             " come from a different configuration (pass --force to overwrite)");
  return false;
}

// ---------------------------------------------------------------------------
// Artifact helpers

namespace detail {

inline void write_column(const fs::path& path, const std::vector<double>& v) {
  std::ostringstream s;
  s << std::setprecision(17);
  for (double x : v) s << x << '\n';
  write_text(path, s.str());
}

inline std::vector<double> read_column(const fs::path& path) {
  const Eigen::MatrixXd m = load_csv(path.string());
  if (m.cols() != 1) throw ParseError("expected one value per line", 1, path.string());
  return {m.data(), m.data() + m.size()};
}

inline void save_gridfield(const fs::path& path, const GridField& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path.string());
  write_gridfield(os, f);
}

inline GridField load_gridfield(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path.string());
  return read_gridfield(is);
}

inline void save_ppm(const fs::path& path, const Mesh& mesh, const std::vector<double>& values, double lo,
                     double hi) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path.string());
  write_ppm(os, mesh, values, lo, hi);
}

}  // namespace detail

inline Mesh fine_mesh(const RunConfig& c) { return load_mesh((c.out() / "fine.mesh").string()); }
inline Mesh coarse_mesh(const RunConfig& c) { return load_mesh((c.out() / "coarse.mesh").string()); }

struct Truth {
  Conductivity sigma;
  std::optional<StarShapedState> star;  ///< the drawn state for a star truth
};

/// The truth evaluated on any mesh (centroid membership).
inline Truth truth_on(const RunConfig& c, const Mesh& mesh) {
  Truth t;
  if (c.truth.kind == TruthSpec::Kind::star) {
    Rng rng = substream(c.truth.seed, 0, 0);
    PriorState s = prior_sample(c.truth.star_prior, rng);
    t.star = std::get<StarShapedState>(s);
    t.sigma = push_forward(c.truth.star_prior, s, mesh);
  } else {
    t.sigma = Conductivity(mesh.num_triangles(), c.truth.background);
    for (std::size_t i = 0; i < mesh.num_triangles(); ++i)
      for (const auto& inc : c.truth.inclusions)
        if (inc.contains(mesh.centroid(i))) t.sigma[i] = inc.value;
  }
  return t;
}

inline DataSet load_data(const RunConfig& c) {
  DataSet d;
  const std::vector<double> y = detail::read_column(c.out() / "data.csv");
  d.y = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  d.gamma = c.gamma;
  d.stim = c.stimulation();
  d.validate(c.mesh.electrodes);
  return d;
}

// ---------------------------------------------------------------------------
// Stages

inline void stage_mesh(const RunConfig& c) {
  c.validate();
  check_own(c, Stage::mesh);
  fs::create_directories(c.out());
  const ElectrodeLayout layout = c.mesh.layout();
  save_mesh((c.out() / "fine.mesh").string(), build_disk_mesh(c.mesh.fine_level, layout));
  save_mesh((c.out() / "coarse.mesh").string(), build_disk_mesh(c.mesh.coarse_level, layout));
  write_manifest(c, Stage::mesh, {"fine.mesh", "coarse.mesh"});
}

inline void stage_make_truth(const RunConfig& c) {
  c.validate();
  check_upstream(c, Stage::truth);
  check_own(c, Stage::truth);
  const Mesh mesh = fine_mesh(c);
  const Truth t = truth_on(c, mesh);
  detail::write_column(c.out() / "truth.csv", t.sigma.values);
  std::vector<std::string> artifacts{"truth.csv", "truth.json"};
  json info;
  if (t.star) {
    info = {{"kind", "star"},
            {"seed", c.truth.seed},
            {"center", {t.star->center.x, t.star->center.y}},
            {"inclusion_area", 0.0}};
    detail::save_gridfield(c.out() / "truth_radial.gridfield", t.star->r_raw);
    artifacts.emplace_back("truth_radial.gridfield");
  } else {
    info = {{"kind", "blobs"}, {"inclusions", json::array()}};
    for (const auto& inc : c.truth.inclusions) {
      double area = 0.0;
      for (std::size_t i = 0; i < mesh.num_triangles(); ++i)
        if (inc.contains(mesh.centroid(i))) area += mesh.area(i);
      info["inclusions"].push_back({{"analytic_area", inc.area()}, {"mesh_area", area}});
    }
  }
  double area = 0.0;
  const double background = c.truth.kind == TruthSpec::Kind::star ? c.truth.star_prior.u_minus : c.truth.background;
  for (std::size_t i = 0; i < mesh.num_triangles(); ++i)
    if (t.sigma[i] != background) area += mesh.area(i);
  info["inclusion_area"] = area;
  detail::write_json(c.out() / "truth.json", info);
  write_manifest(c, Stage::truth, artifacts);
}

inline void stage_make_data(const RunConfig& c) {
  c.validate();
  check_upstream(c, Stage::data);
  check_own(c, Stage::data);
  const Mesh mesh = fine_mesh(c);
  const Conductivity truth(detail::read_column(c.out() / "truth.csv"));
  Rng rng = substream(c.noise_seed, 0, 0);
  const GeneratedData g = generate_data(truth, mesh, c.mesh.layout(), c.stimulation(), c.gamma, rng);
  detail::write_column(c.out() / "data.csv", {g.data.y.data(), g.data.y.data() + g.data.y.size()});
  detail::write_column(c.out() / "clean.csv", {g.clean.data(), g.clean.data() + g.clean.size()});
  detail::write_json(c.out() / "data.json", {{"gamma", c.gamma},
                                             {"entries", g.data.y.size()},
                                             {"mean_relative_error", g.mean_relative_error},
                                             {"differential_relative_error", g.differential_relative_error}});
  write_manifest(c, Stage::data, {"data.csv", "clean.csv", "data.json"});
}

inline fs::path chain_dir(const RunConfig& c, int replica) { return c.out() / ("chain_" + std::to_string(replica)); }

namespace detail {

inline std::string trace_csv(const ChainRecord& r) {
  std::ostringstream s;
  s << std::setprecision(17);
  s << "iter,move_type,accepted,Phi";
  for (const auto& l : r.trace.labels) s << ',' << l;
  s << '\n';
  const std::size_t w = r.trace.labels.size();
  for (std::size_t i = 0; i < r.trace.rows(); ++i) {
    s << r.trace.iteration[i] << ',' << (r.trace.move[i] == 0 ? "field" : "center") << ','
      << int(r.trace.accepted[i]) << ',' << r.trace.phi[i];
    for (std::size_t k = 0; k < w; ++k) s << ',' << r.trace.monitors[i * w + k];
    s << '\n';
  }
  return s.str();
}

struct TraceTable {
  std::vector<std::string> labels;  ///< monitored labels (after Phi)
  std::vector<std::uint64_t> iteration;
  std::vector<std::vector<double>> columns;  ///< Phi, then monitors

  /// End-of-iteration values from `first` on.
  std::vector<double> series(std::size_t column, std::uint64_t first) const {
    std::vector<double> out;
    for (std::size_t r = 0; r < iteration.size(); ++r) {
      const bool last = r + 1 == iteration.size() || iteration[r + 1] != iteration[r];
      if (last && iteration[r] >= first) out.push_back(columns[column][r]);
    }
    return out;
  }
};

inline TraceTable read_trace(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path.string());
  TraceTable t;
  std::string line;
  if (!std::getline(is, line)) throw ParseError("empty trace", 1, path.string());
  {
    std::stringstream h(line);
    std::string cell;
    for (int i = 0; std::getline(h, cell, ','); ++i)
      if (i >= 4) t.labels.push_back(cell);
  }
  t.columns.resize(1 + t.labels.size());
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    const char* p = line.c_str();
    char* end = nullptr;
    t.iteration.push_back(std::strtoull(p, &end, 10));
    // skip move type and accepted flag
    for (int skip = 0; skip < 3; ++skip) {
      p = std::strchr(p, ',');
      if (!p) throw ParseError("short trace row", lineno, path.string());
      ++p;
    }
    for (std::size_t k = 0; k < t.columns.size(); ++k) {
      const double v = std::strtod(p, &end);
      if (end == p) throw ParseError("bad number in trace", lineno, path.string());
      t.columns[k].push_back(v);
      p = end;
      if (*p == ',') ++p;
    }
  }
  return t;
}

}  // namespace detail

/// Runs (or resumes) all replicas in parallel, one thread each.
inline void stage_run(const RunConfig& c) {
  c.validate();
  check_upstream(c, Stage::run);
  if (!check_own(c, Stage::run))
    for (int r = 0;; ++r) {
      if (!fs::exists(chain_dir(c, r))) break;
      fs::remove_all(chain_dir(c, r));
    }
  const Mesh mesh = coarse_mesh(c);
  const DataSet data = load_data(c);
  const ElectrodeLayout layout = c.mesh.layout();

  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(c.replicas));
  auto work = [&](int r) {
    try {
      const fs::path dir = chain_dir(c, r);
      fs::create_directories(dir);
      Potential potential(mesh, layout, data, c.prior);
      const ChainConfig cc = c.chain_config(r);
      const ChainRecord rec =
          run_chain(cc, potential, (dir / "checkpoint.bin").string(), c.chain.checkpoint_every, true);
      detail::write_text(dir / "trace.csv", detail::trace_csv(rec));
      const PriorState ms = mean_state(rec, c.prior);
      detail::save_gridfield(dir / "mean_state.gridfield", field_of(ms));
      const MeanConductivities means = mean_conductivities(rec, c.prior, mesh);
      std::ostringstream csv;
      csv << std::setprecision(17) << "F_of_mean,mean_of_F\n";
      for (std::size_t t = 0; t < means.mean_of.size(); ++t) csv << means.of_mean[t] << ',' << means.mean_of[t] << '\n';
      detail::write_text(dir / "means.csv", csv.str());
      json snaps = json::array();
      for (std::size_t k = 0; k < rec.snapshots.size(); ++k) {
        const std::string name = "snapshot_" + std::to_string(k) + ".gridfield";
        detail::save_gridfield(dir / name, field_of(rec.snapshots[k]));
        json s{{"file", name}};
        if (const auto* st = std::get_if<StarShapedState>(&rec.snapshots[k])) s["center"] = {st->center.x, st->center.y};
        snaps.push_back(s);
      }
      json summary{{"replica", r},
                   {"stream", cc.stream},
                   {"iterations", cc.n_samples},
                   {"accumulated", rec.accumulated},
                   {"solver_failures", rec.solver_failures},
                   {"acceptance", {{"field", rec.acceptance_rate(MoveType::field)},
                                   {"center", rec.acceptance_rate(MoveType::center)},
                                   {"overall", rec.acceptance_rate()}}},
                   {"proposed", {rec.proposed[0], rec.proposed[1]}},
                   {"accepted", {rec.accepted[0], rec.accepted[1]}},
                   {"snapshots", snaps}};
      if (const auto* st = std::get_if<StarShapedState>(&ms)) summary["mean_center"] = {st->center.x, st->center.y};
      detail::write_json(dir / "summary.json", summary);
    } catch (...) {
      errors[static_cast<std::size_t>(r)] = std::current_exception();
    }
  };
  if (c.replicas == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (int r = 0; r < c.replicas; ++r) threads.emplace_back(work, r);
    for (auto& t : threads) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<std::string> artifacts;
  for (int r = 0; r < c.replicas; ++r) {
    const std::string d = "chain_" + std::to_string(r) + "/";
    for (const char* f : {"trace.csv", "checkpoint.bin", "mean_state.gridfield", "means.csv", "summary.json"})
      artifacts.push_back(d + f);
  }
  write_manifest(c, Stage::run, artifacts);
}

/// Replica means pooled by accumulated count.
struct PooledMeans {
  PriorState mean_state;
  MeanConductivities means;
};

inline PooledMeans pooled_means(const RunConfig& c, const Mesh& mesh) {
  PooledMeans out{prior_mean_state(c.prior), {}};
  GridField& f = field_of(out.mean_state);
  std::fill(f.values.begin(), f.values.end(), 0.0);
  Point center;
  std::vector<double> mean_of(mesh.num_triangles(), 0.0);
  double total = 0.0;
  for (int r = 0; r < c.replicas; ++r) {
    const fs::path dir = chain_dir(c, r);
    const json summary = detail::read_json(dir / "summary.json");
    const double n = summary.at("accumulated").get<double>();
    const GridField m = detail::load_gridfield(dir / "mean_state.gridfield");
    if (m.values.size() != f.values.size()) throw ConfigError("replica mean state does not match the prior grid");
    for (std::size_t i = 0; i < f.values.size(); ++i) f.values[i] += n * m.values[i];
    if (summary.contains("mean_center")) {
      center.x += n * summary["mean_center"][0].get<double>();
      center.y += n * summary["mean_center"][1].get<double>();
    }
    const Eigen::MatrixXd means = [&] {
      std::ifstream is(dir / "means.csv");
      std::string header;
      std::getline(is, header);
      return read_csv(is);
    }();
    if (static_cast<std::size_t>(means.rows()) != mean_of.size()) throw ConfigError("replica means do not match mesh");
    for (std::size_t t = 0; t < mean_of.size(); ++t) mean_of[t] += n * means(static_cast<Eigen::Index>(t), 1);
    total += n;
  }
  for (double& v : f.values) v /= total;
  for (double& v : mean_of) v /= total;
  if (auto* st = std::get_if<StarShapedState>(&out.mean_state)) st->center = {center.x / total, center.y / total};
  out.means.of_mean = push_forward(c.prior, out.mean_state, mesh);
  out.means.mean_of = std::move(mean_of);
  return out;
}

/// Phi at the reference conductivities and at both posterior means.
inline Table phi_table(const RunConfig& c, const Mesh& mesh, const PooledMeans& pooled) {
  Potential potential(mesh, c.mesh.layout(), load_data(c), c.prior);
  Table t{{"conductivity", "Phi"}, {}};
  auto row = [&](const std::string& label, const Conductivity& sigma) {
    t.rows.push_back({label, format_number(potential.misfit(sigma))});
  };
  row("prior mean F(m0)", push_forward(c.prior, prior_mean_state(c.prior), mesh));
  row("truth on inversion mesh", truth_on(c, mesh).sigma);
  row("posterior F(E u)", pooled.means.of_mean);
  row("posterior E F(u)", Conductivity(pooled.means.mean_of));
  return t;
}

inline void stage_diagnose(const RunConfig& c) {
  c.validate();
  check_upstream(c, Stage::diagnose);
  check_own(c, Stage::diagnose);
  const fs::path dir = c.out() / "diagnostics";
  fs::create_directories(dir);
  std::vector<std::string> artifacts;
  auto emit = [&](const std::string& name, const std::string& text) {
    detail::write_text(dir / name, text);
    artifacts.push_back("diagnostics/" + name);
  };

  Table ess_table{{"replica", "quantity", "N", "ESS"}, {}};
  for (int r = 0; r < c.replicas; ++r) {
    const detail::TraceTable trace = detail::read_trace(chain_dir(c, r) / "trace.csv");
    std::vector<std::string> names{"Phi"};
    names.insert(names.end(), trace.labels.begin(), trace.labels.end());
    std::map<std::string, std::vector<double>> thinned;
    for (std::size_t k = 0; k < names.size(); ++k) {
      const std::vector<double> series = trace.series(k, c.chain.burn_in);
      std::string ess_text = "degenerate trace";
      double e = 0.0;
      try {
        e = ess(series);
        ess_text = format_number(e, 6);
      } catch (const Error& err) {
        log::warn("ESS of " + names[k] + ": " + err.what());
      }
      ess_table.rows.push_back({std::to_string(r), names[k], std::to_string(series.size()), ess_text});
      if (k == 0 || e <= 0.0) continue;
      // thin to about max(ESS, 100) points before estimating densities
      thinned[names[k]] = thin(series, std::max(e, 100.0));
      try {
        const DensityEstimate d = kde_1d(thinned[names[k]]);
        std::ostringstream s;
        write_density_csv(s, d);
        emit("kde_" + std::to_string(r) + "_" + names[k] + ".csv", s.str());
      } catch (const Error& err) {
        log::warn("density of " + names[k] + ": " + err.what());
      }
    }
    // pair density: the centre for star-shaped chains, otherwise the first two monitors
    std::pair<std::string, std::string> pair;
    if (thinned.contains("x0") && thinned.contains("y0")) pair = {"x0", "y0"};
    else if (trace.labels.size() >= 2) pair = {trace.labels[0], trace.labels[1]};
    if (thinned.contains(pair.first) && thinned.contains(pair.second)) {
      auto a = thinned[pair.first], b = thinned[pair.second];
      const std::size_t n = std::min(a.size(), b.size());
      a.resize(n);
      b.resize(n);
      try {
        const DensityEstimate d = kde_2d(a, b);
        std::ostringstream s;
        write_density_csv(s, d);
        emit("kde_" + std::to_string(r) + "_" + pair.first + "_" + pair.second + ".csv", s.str());
      } catch (const Error& err) {
        log::warn("pair density: " + std::string(err.what()));
      }
    }
  }
  std::ostringstream csv, text;
  ess_table.write_csv(csv);
  ess_table.write_text(text);
  emit("ess.csv", csv.str());
  emit("ess.txt", text.str());

  const Mesh mesh = coarse_mesh(c);
  const PooledMeans pooled = pooled_means(c, mesh);
  const Table phi = phi_table(c, mesh, pooled);
  std::ostringstream pcsv, ptext;
  phi.write_csv(pcsv);
  phi.write_text(ptext);
  emit("phi.csv", pcsv.str());
  emit("phi.txt", ptext.str());
  write_manifest(c, Stage::diagnose, artifacts);
}

inline void stage_report(const RunConfig& c) {
  c.validate();
  check_upstream(c, Stage::report);
  check_own(c, Stage::report);
  const fs::path dir = c.out() / "report";
  fs::create_directories(dir);
  std::vector<std::string> artifacts;

  const Mesh fine = fine_mesh(c), coarse = coarse_mesh(c);
  const Conductivity truth(detail::read_column(c.out() / "truth.csv"));
  const auto [lo_it, hi_it] = std::minmax_element(truth.values.begin(), truth.values.end());
  double lo = *lo_it, hi = *hi_it;
  if (c.prior.family != PriorConfig::Family::log_gaussian) {
    const auto [plo, phi] = c.prior.phase_range();
    lo = std::min(lo, plo);
    hi = std::max(hi, phi);
  }
  auto raster = [&](const std::string& name, const Mesh& m, const std::vector<double>& v) {
    detail::save_ppm(dir / name, m, v, lo, hi);
    artifacts.push_back("report/" + name);
  };
  raster("truth.ppm", fine, truth.values);
  const PooledMeans pooled = pooled_means(c, coarse);
  raster("mean_state.ppm", coarse, pooled.means.of_mean.values);
  raster("mean_conductivity.ppm", coarse, pooled.means.mean_of);

  const json summary = detail::read_json(chain_dir(c, 0) / "summary.json");
  for (const json& s : summary.at("snapshots")) {
    PriorState st = prior_mean_state(c.prior);
    field_of(st) = detail::load_gridfield(chain_dir(c, 0) / s.at("file").get<std::string>());
    if (auto* star = std::get_if<StarShapedState>(&st)) star->center = {s["center"][0].get<double>(), s["center"][1].get<double>()};
    const std::string file = s.at("file").get<std::string>();
    raster(file.substr(0, file.find('.')) + ".ppm", coarse, push_forward(c.prior, st, coarse).values);
  }

  std::ostringstream r;
  r << "EIT posterior sampling report\n\n";
  r << "prior: " << to_string(c.prior.family) << ", grid " << c.prior.covariance.grid_size << "\n";
  r << "meshes: data " << fine.num_triangles() << " triangles, inversion " << coarse.num_triangles()
    << " triangles\n";
  const json data = detail::read_json(c.out() / "data.json");
  r << "noise: gamma " << c.gamma << ", mean relative error per entry "
    << format_number(data.at("mean_relative_error").get<double>(), 4) << ", adjacent-difference equivalent "
    << format_number(data.at("differential_relative_error").get<double>(), 4) << "\n";
  r << "chains: " << c.replicas << " x " << c.chain.n_samples << " iterations, burn-in " << c.chain.burn_in << "\n\n";
  Table acc{{"replica", "field acceptance", "center acceptance", "overall"}, {}};
  for (int i = 0; i < c.replicas; ++i) {
    const json s = detail::read_json(chain_dir(c, i) / "summary.json");
    acc.rows.push_back({std::to_string(i), format_number(s["acceptance"]["field"].get<double>(), 4),
                        format_number(s["acceptance"]["center"].get<double>(), 4),
                        format_number(s["acceptance"]["overall"].get<double>(), 4)});
  }
  acc.write_text(r);
  if (const auto* st = std::get_if<StarShapedState>(&pooled.mean_state)) {
    r << "\nposterior mean centre: (" << format_number(st->center.x, 6) << ", " << format_number(st->center.y, 6)
      << ")\n";
    const json t = detail::read_json(c.out() / "truth.json");
    if (t.contains("center"))
      r << "true centre:           (" << format_number(t["center"][0].get<double>(), 6) << ", "
        << format_number(t["center"][1].get<double>(), 6) << ")\n";
  }
  auto include = [&](const char* title, const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw ConfigError("missing " + p.string() + "; run 'diagnose' first");
    r << "\n" << title << "\n" << is.rdbuf();
  };
  include("Misfit at mean conductivities", c.out() / "diagnostics" / "phi.txt");
  include("Effective sample sizes", c.out() / "diagnostics" / "ess.txt");
  r << "\nRasters (PPM, blue = " << lo << " to yellow = " << hi << "):";
  for (const auto& a : artifacts) r << "\n  " << a;
  r << "\n";
  detail::write_text(dir / "report.txt", r.str());
  artifacts.emplace_back("report/report.txt");
  write_manifest(c, Stage::report, artifacts);
}

inline void run_all(const RunConfig& c) {
  stage_mesh(c);
  stage_make_truth(c);
  stage_make_data(c);
  stage_run(c);
  stage_diagnose(c);
  stage_report(c);
}

}  // namespace eit::pipeline
