// Acceptance checks: one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <sys/wait.h>

#include "eit/diagnostics.hpp"
#include "eit/pipeline.hpp"
#include "oracles.hpp"

using namespace eit;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

const ElectrodeLayout standard_layout = ElectrodeLayout::uniform(16, 0.5, 0.01);
const StimulationMatrix standard_stim = adjacent_stimulation_patterns(16, 0.1);

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

// Draws of all three priors pushed forward to `mesh`.
std::vector<Conductivity> prior_conductivities(const Mesh& mesh, int count, std::uint64_t seed) {
  const PriorConfig priors[] = {PriorConfig::log_gaussian_reference(32), PriorConfig::level_set_reference(32),
                                PriorConfig::star_shaped_reference(64)};
  std::vector<Conductivity> out;
  for (int i = 0; i < count; ++i) {
    const PriorConfig& p = priors[i % 3];
    Rng rng = substream(seed, 0, static_cast<std::uint64_t>(i));
    out.push_back(push_forward(p, prior_sample(p, rng), mesh));
  }
  return out;
}

Outcome forward_matches_dense_oracle() {
  double worst = 0.0;
  for (int level = 0; level <= 2; ++level) {
    const Mesh m = build_disk_mesh(level, standard_layout);
    auto sigmas = prior_conductivities(m, 3, 100 + level);
    sigmas.emplace_back(m.num_triangles(), 1.0);
    const int n = static_cast<int>(m.num_nodes()), L = standard_layout.count;
    for (const Conductivity& s : sigmas) {
      // dense oracle, factored once for all patterns
      const Eigen::MatrixXd a = oracle::dense_cem_matrix(m, s, standard_layout);
      const Eigen::MatrixXd t = Eigen::MatrixXd(oracle::grounding_basis(n, L));
      Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n + L, standard_stim.patterns());
      b.bottomRows(L) = standard_stim.currents;
      const Eigen::MatrixXd ref = t * (t.transpose() * a * t).partialPivLu().solve(t.transpose() * b);
      ForwardSolver solver(m, standard_layout);
      solver.set_conductivity(s);
      for (Eigen::Index j = 0; j < standard_stim.patterns(); ++j) {
        const ForwardSolution sol = solver.solve(standard_stim.currents.col(j));
        Eigen::VectorXd x(n + L);
        x << sol.v, sol.V;
        worst = std::max(worst, (x - ref.col(j)).norm() / ref.col(j).norm());
      }
    }
  }
  return {worst <= 1e-8, "max relative error " + fmt(worst)};
}

Outcome resistivity_is_symmetric() {
  const Mesh m = build_disk_mesh(2, standard_layout);
  const PriorConfig p = PriorConfig::log_gaussian_reference(32);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    Rng rng = substream(200, 0, static_cast<std::uint64_t>(i));
    const Eigen::MatrixXd r = resistivity_matrix(m, push_forward(p, prior_sample(p, rng), m), standard_layout);
    worst = std::max(worst, (r - r.transpose()).norm() / r.norm());
  }
  return {worst <= 1e-8, "max |R-R^T|/|R| " + fmt(worst)};
}

Outcome scaling_law() {
  const Mesh m = build_disk_mesh(2, standard_layout);
  const Conductivity s = prior_conductivities(m, 1, 300).front();
  const Eigen::VectorXd pattern = standard_stim.currents.col(3);
  const ForwardSolution base = solve_forward(m, s, standard_layout, pattern);
  double worst = 0.0;
  for (double c : {0.5, 2.0, 10.0}) {
    Conductivity cs = s;
    for (double& v : cs.values) v *= c;
    ElectrodeLayout lay = standard_layout;
    for (double& z : lay.contact_impedance) z /= c;
    const ForwardSolution sol = solve_forward(m, cs, lay, pattern);
    Eigen::VectorXd x(sol.v.size() + sol.V.size()), y(x.size());
    x << sol.v, sol.V;
    y << base.v, base.V;
    worst = std::max(worst, (c * x - y).norm() / y.norm());
  }
  return {worst <= 1e-10, "max relative deviation " + fmt(worst)};
}

Outcome mesh_convergence() {
  auto sigma = [](Point p) {
    return 1.0 + 0.5 * std::exp(-4.0 * ((p.x - 0.2) * (p.x - 0.2) + (p.y + 0.1) * (p.y + 0.1))) + 0.2 * p.x * p.y;
  };
  auto voltages = [&](int level) {
    const Mesh m = build_disk_mesh(level, standard_layout);
    Conductivity s(m.num_triangles(), 1.0);
    for (std::size_t t = 0; t < m.num_triangles(); ++t) s[t] = sigma(m.centroid(t));
    return forward_map(m, s, standard_layout, standard_stim);
  };
  const Eigen::VectorXd ref = voltages(5);
  std::vector<double> err;
  for (int level = 1; level <= 3; ++level) err.push_back((voltages(level) - ref).norm() / ref.norm());
  // least-squares slope of log error against level (h halves per level)
  const double order = (std::log2(err[0]) - std::log2(err[2])) / 2.0;
  const double o1 = std::log2(err[0] / err[1]), o2 = std::log2(err[1] / err[2]);
  return {order >= 1.0 && err[0] > err[1] && err[1] > err[2],
          "errors " + fmt(err[0]) + ", " + fmt(err[1]) + ", " + fmt(err[2]) + "; orders " + fmt(o1) + ", " + fmt(o2) +
              "; fitted " + fmt(order)};
}

Outcome sampler_mode_variances() {
  struct Case {
    const char* name;
    PriorConfig prior;
    std::vector<Mode> modes;
  };
  const std::vector<Mode> modes2d{{0, 0}, {1, 0}, {0, 1}, {1, 1}, {3, 2}, {5, 7}, {12, 12}};
  const std::vector<Mode> modes1d{{1, 0}, {2, 0}, {3, 0}, {5, 0}, {20, 0}, {100, 0}};
  const Case cases[] = {{"log-Gaussian", PriorConfig::log_gaussian_reference(128), modes2d},
                        {"star radius", PriorConfig::star_shaped_reference(256), modes1d},
                        {"level set", PriorConfig::level_set_reference(128), modes2d}};
  const int samples = 10000;
  double worst = 0.0;
  std::string where;
  for (const Case& c : cases) {
    const CovarianceSpec& cov = c.prior.covariance;
    const int n = cov.grid_size;
    std::vector<double> sum2(c.modes.size(), 0.0);
    for (int s = 0; s < samples; ++s) {
      Rng rng = substream(500, 0, static_cast<std::uint64_t>(s));
      GridField f = sample_field(cov, c.prior.mean, rng);
      for (double& v : f.values) v -= c.prior.mean;
      const std::vector<double> a = analyze(cov.boundary, n, f.values);
      for (std::size_t i = 0; i < c.modes.size(); ++i) {
        const Mode& m = c.modes[i];
        const double coeff = cov.boundary == Boundary::neumann2d ? a[static_cast<std::size_t>(m.k2) * n + m.k1]
                                                                 : a[static_cast<std::size_t>(m.k1) - 1];
        sum2[i] += coeff * coeff;
      }
    }
    for (std::size_t i = 0; i < c.modes.size(); ++i) {
      const Mode& m = c.modes[i];
      const double target = cov.q * std::pow(cov.tau * cov.tau + cov.eigenvalue(m.k1, m.k2), -cov.alpha);
      const double dev = std::abs(sum2[i] / samples / target - 1.0);
      if (dev > worst) {
        worst = dev;
        where = std::string(c.name) + " mode (" + std::to_string(m.k1) + "," + std::to_string(m.k2) + ")";
      }
    }
  }
  return {worst <= 0.05, "max relative variance error " + fmt(worst) + " at " + where};
}

// Area of triangles that an interface crosses, judged by the vertices and
// centroid disagreeing on membership.
double straddling_area(const Mesh& m, const std::function<bool(Point)>& inside) {
  double area = 0.0;
  for (std::size_t t = 0; t < m.num_triangles(); ++t) {
    const auto& tri = m.triangles[t];
    const bool c = inside(m.centroid(t));
    bool mixed = false;
    for (int i = 0; i < 3; ++i) mixed |= inside(m.nodes[tri[i]]) != c;
    if (mixed) area += m.area(t);
  }
  return area;
}

bool in_star(const GridField& r, Point x0, Point p) {
  const Point d = p - x0;
  return norm(d) <= star_radius(r, std::atan2(d.y, d.x));
}

Outcome prior_map_continuity() {
  const Mesh m = build_disk_mesh(3, standard_layout);
  std::vector<std::string> failures;
  std::ostringstream detail;
  auto sweep = [&](const std::string& name, const std::vector<double>& areas, double floor) {
    bool ok = areas.back() <= floor;
    for (std::size_t i = 1; i < areas.size(); ++i) ok &= areas[i] <= areas[i - 1];
    detail << (detail.tellp() > 0 ? "; " : "") << name << " " << fmt(areas.front()) << "->" << fmt(areas.back())
           << " (floor " << fmt(floor) << ")";
    if (!ok) failures.push_back(name);
  };

  Rng rng = substream(600, 0, 0);
  const PriorConfig star = PriorConfig::star_shaped_reference(64);
  GridField r = sample_field(star.covariance, star.mean, rng);
  for (double& v : r.values) v = star.mean + 0.02 * (v - star.mean);
  const Point x0{0.05, -0.1};
  const Conductivity base = f2_star_shaped(r, x0, 2.0, 1.0, m);

  std::vector<double> areas;
  for (double eps : {0.3, 0.1, 0.03, 0.01, 0.001, 1e-4}) {
    GridField re = r;
    for (double& v : re.values) v += eps;
    areas.push_back(measure_of_symmetric_difference(base, f2_star_shaped(re, x0, 2.0, 1.0, m), m));
  }
  sweep("radius", areas, straddling_area(m, [&](Point p) { return in_star(r, x0, p); }));

  areas.clear();
  for (double d : {0.2, 0.1, 0.05, 0.01, 0.001, 1e-4})
    areas.push_back(measure_of_symmetric_difference(base, f2_star_shaped(r, {x0.x + d, x0.y - d}, 2.0, 1.0, m), m));
  sweep("centre", areas, straddling_area(m, [&](Point p) { return in_star(r, x0, p); }));

  const PriorConfig level = PriorConfig::level_set_reference(32);
  const GridField u = sample_field(level.covariance, 0.0, rng);
  double sd = 0.0;
  for (double v : u.values) sd += v * v;
  sd = std::sqrt(sd / static_cast<double>(u.values.size()));
  const Conductivity lbase = f3_level_set(u, {0.0}, {1.0, 2.0}, m);
  areas.clear();
  for (double eps : {0.3, 0.1, 0.03, 0.01, 0.001, 1e-4}) {
    GridField ue = u;
    for (double& v : ue.values) v += eps * sd;
    areas.push_back(measure_of_symmetric_difference(lbase, f3_level_set(ue, {0.0}, {1.0, 2.0}, m), m));
  }
  sweep("level set", areas, straddling_area(m, [&](Point p) { return interpolate(u, p) >= 0.0; }));
  std::string d = detail.str();
  if (!failures.empty()) d += "; non-monotone or above floor:";
  for (const auto& f : failures) d += " " + f;
  return {failures.empty(), d};
}

// Exact pointwise prior variance sum_k var_k phi_k(x)^2.
std::vector<double> pointwise_variance(const CovarianceSpec& cov) {
  const int n = cov.grid_size;
  const std::size_t size = cov.boundary == Boundary::neumann2d ? static_cast<std::size_t>(n) * n : n;
  std::vector<double> var(size, 0.0), unit(size, 0.0);
  for (std::size_t k = 0; k < size; ++k) {
    unit.assign(size, 0.0);
    unit[k] = 1.0;
    const double lambda = cov.boundary == Boundary::neumann2d
                              ? cov.mode_variance(static_cast<int>(k % n), static_cast<int>(k / n))
                              : cov.mode_variance(static_cast<int>(k) + 1);
    const auto phi = synthesize(cov.boundary, n, unit);
    for (std::size_t i = 0; i < size; ++i) var[i] += lambda * phi[i] * phi[i];
  }
  return var;
}

Outcome pcn_preserves_the_prior() {
  const int kept = 10000, thin = 50;
  const double beta = 0.5;
  double worst = 0.0;
  std::ostringstream detail;
  auto zero = [](const auto&) { return 0.0; };
  for (const PriorConfig& p : {PriorConfig::level_set_reference(16), PriorConfig::star_shaped_reference(64)}) {
    const CovarianceSpec& cov = p.covariance;
    Rng init = substream(700, 0, ~std::uint64_t{0});
    GridField u = sample_field(cov, p.mean, init);
    Point x{0.0, 0.0};
    const bool star = p.family == PriorConfig::Family::star_shaped;
    std::vector<double> s1(u.values.size(), 0.0), s2(u.values.size(), 0.0);
    double cx = 0.0, cxx = 0.0;
    std::uint64_t counter = 0;
    for (int k = 0; k < kept; ++k) {
      for (int t = 0; t < thin; ++t) {
        Rng rng = substream(700, 0, counter++);
        auto step = pcn_step(u, 0.0, beta, cov, zero, rng);
        if (!step.accepted) return {false, "a zero-potential pCN proposal was rejected"};
        u = std::move(step.state);
        if (star) x = rwm_center_step(x, 0.0, 0.3, p.center_lo, p.center_hi, zero, rng).state;
      }
      for (std::size_t i = 0; i < u.values.size(); ++i) {
        const double d = u.values[i] - p.mean;
        s1[i] += d;
        s2[i] += d * d;
      }
      cx += x.x;
      cxx += x.x * x.x;
    }
    const std::vector<double> var = pointwise_variance(cov);
    double family_worst = 0.0;
    for (std::size_t i = 0; i < var.size(); ++i) {
      const double mean = s1[i] / kept;
      const double sample_var = s2[i] / kept - mean * mean;
      family_worst = std::max(family_worst, std::abs(mean) / std::sqrt(var[i] / kept));
      family_worst = std::max(family_worst, std::abs(sample_var - var[i]) / (var[i] * std::sqrt(2.0 / kept)));
    }
    if (star) {
      const double width = p.center_hi - p.center_lo, box_var = width * width / 12.0;
      const double mean = cx / kept, v = cxx / kept - mean * mean;
      family_worst = std::max(family_worst, std::abs(mean - 0.5 * (p.center_lo + p.center_hi)) / std::sqrt(box_var / kept));
      // (mu4 - var^2) / N with mu4 = w^4/80 for the uniform distribution
      family_worst = std::max(family_worst, std::abs(v - box_var) / std::sqrt(width * width * width * width / 180.0 / kept));
    }
    detail << (detail.tellp() > 0 ? "; " : "") << to_string(p.family) << " worst " << fmt(family_worst) << " SE";
    worst = std::max(worst, family_worst);
  }
  return {worst <= 5.0, detail.str()};
}

Outcome ess_calibration() {
  std::ostringstream detail;
  bool ok = true;
  {
    const std::size_t n = 10000;
    Rng rng = substream(800, 0, 0);
    std::vector<double> x(n);
    for (double& v : x) v = standard_normal(rng);
    const double e = ess(x);
    ok &= std::abs(e / n - 1.0) <= 0.15;
    detail << "iid ESS/N " << fmt(e / n) << "; ";
  }
  {
    const std::size_t n = 100000;
    const double rho = 0.9;
    Rng rng = substream(801, 0, 0);
    std::vector<double> x(n);
    x[0] = standard_normal(rng) / std::sqrt(1.0 - rho * rho);
    for (std::size_t i = 1; i < n; ++i) x[i] = rho * x[i - 1] + standard_normal(rng);
    const double e = ess(x);
    ok &= std::abs(e / (n / 19.0) - 1.0) <= 0.15;
    detail << "AR(1) ESS/(N/19) " << fmt(e / (n / 19.0));
  }
  return {ok, detail.str()};
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(EIT_CLI_PATH) + " " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const fs::path work_dir = fs::current_path() / "acceptance_runs";

std::string desk_run(const std::string& name, const fs::path& out) {
  fs::remove_all(out);
  fs::create_directories(out.parent_path());
  const std::string config = std::string(EIT_SOURCE_DIR "/configs/") + name;
  const int code = run_cli("all --config " + config + " --out " + out.string(), out.string() + ".log");
  return code == 0 ? std::string() : "pipeline exited with code " + std::to_string(code);
}

struct DeskResult {
  double phi_posterior, phi_prior;
};

// Phi recomputed from the artifacts: posterior mean conductivity vs the
// push-forward of the prior mean, both on the inversion mesh.
DeskResult desk_misfits(const pipeline::RunConfig& c) {
  const Mesh coarse = load_mesh((c.out() / "coarse.mesh").string());
  Potential pot(coarse, c.mesh.layout(), pipeline::load_data(c), c.prior);
  std::ifstream is(c.out() / "chain_0" / "means.csv");
  std::string line;
  std::getline(is, line);
  Conductivity mean_of(coarse.num_triangles(), 1.0);
  for (std::size_t t = 0; t < coarse.num_triangles() && std::getline(is, line); ++t)
    mean_of[t] = std::stod(line.substr(line.find(',') + 1));
  return {pot.misfit(mean_of), pot.misfit(push_forward(c.prior, prior_mean_state(c.prior), coarse))};
}

Outcome desk_runs() {
  std::ostringstream detail;
  bool ok = true;
  {
    pipeline::RunConfig c = pipeline::load_config(EIT_SOURCE_DIR "/configs/desk-a-star.json");
    c.output = (work_dir / "desk-a").string();
    if (auto err = desk_run("desk-a-star.json", c.out()); !err.empty()) return {false, "A: " + err};
    const json truth = json::parse(std::ifstream(c.out() / "truth.json"));
    const json summary = json::parse(std::ifstream(c.out() / "chain_0" / "summary.json"));
    const Point t{truth["center"][0], truth["center"][1]}, e{summary["mean_center"][0], summary["mean_center"][1]};
    const double centre_error = norm(t - e);
    const DeskResult r = desk_misfits(c);
    const bool a = centre_error <= 0.15 && r.phi_prior >= 10.0 * r.phi_posterior;
    ok &= a;
    detail << "A: centre error " << fmt(centre_error) << ", Phi prior-mean/posterior " << fmt(r.phi_prior) << "/"
           << fmt(r.phi_posterior) << " = " << fmt(r.phi_prior / r.phi_posterior) << ", acceptance "
           << fmt(summary["acceptance"]["overall"].get<double>()) << (a ? "" : " FAILED") << "; ";
  }
  {
    pipeline::RunConfig c = pipeline::load_config(EIT_SOURCE_DIR "/configs/desk-b-levelset.json");
    c.output = (work_dir / "desk-b").string();
    if (auto err = desk_run("desk-b-levelset.json", c.out()); !err.empty()) return {false, "B: " + err};
    const json summary = json::parse(std::ifstream(c.out() / "chain_0" / "summary.json"));
    const DeskResult r = desk_misfits(c);
    const bool b = r.phi_prior >= 10.0 * r.phi_posterior;
    ok &= b;
    detail << "B: Phi prior-mean/posterior " << fmt(r.phi_prior) << "/" << fmt(r.phi_posterior) << " = "
           << fmt(r.phi_prior / r.phi_posterior) << ", acceptance "
           << fmt(summary["acceptance"]["overall"].get<double>()) << (b ? "" : " FAILED");
  }
  return {ok, detail.str()};
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) {
      std::ifstream is(e.path(), std::ios::binary);
      std::ostringstream s;
      s << is.rdbuf();
      files[fs::relative(e.path(), root).string()] = s.str();
    }
  return files;
}

Outcome determinism() {
  // the desk configurations at reduced chain length, two replicas each
  std::ostringstream detail;
  bool ok = true;
  for (const char* name : {"desk-a-star.json", "desk-b-levelset.json"}) {
    json j = json::parse(std::ifstream(std::string(EIT_SOURCE_DIR "/configs/") + name));
    const fs::path out = work_dir / ("determinism-" + std::string(name).substr(0, 6));
    j["output"] = out.string();
    j["replicas"] = 2;
    j["chain"]["n_samples"] = 3000;
    j["chain"]["burn_in"] = 1000;
    j["chain"]["checkpoint_every"] = 1000;
    j["chain"]["snapshot_every"] = 500;
    fs::create_directories(work_dir);
    const fs::path config = out.string() + ".json";
    std::ofstream(config) << j.dump(2);
    std::map<std::string, std::string> runs[2];
    for (auto& run : runs) {
      fs::remove_all(out);
      if (int code = run_cli("all --config " + config.string(), out.string() + ".log"); code != 0)
        return {false, std::string(name) + ": pipeline exited with code " + std::to_string(code)};
      run = snapshot(out);
    }
    std::size_t differing = runs[0].size() == runs[1].size() ? 0 : 1;
    for (const auto& [file, bytes] : runs[0])
      if (!runs[1].count(file) || runs[1].at(file) != bytes) ++differing;
    ok &= differing == 0 && !runs[0].empty();
    detail << (detail.tellp() > 0 ? "; " : "") << name << ": " << runs[0].size() << " files, " << differing
           << " differing";
  }
  return {ok, detail.str()};
}

Outcome phi_is_lipschitz_in_data() {
  const Mesh m = build_disk_mesh(1, standard_layout);
  const double gamma = 2e-4;
  const auto sigmas = prior_conductivities(m, 100, 1100);
  ForwardSolver solver(m, standard_layout);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    solver.set_conductivity(sigmas[static_cast<std::size_t>(i)]);
    const Eigen::VectorXd g = solver.forward_map(standard_stim);
    Rng rng = substream(1101, 0, static_cast<std::uint64_t>(i));
    // data near the prediction, near zero, and far away
    auto draw = [&] {
      const double scale = std::pow(10.0, uniform(rng, -6.0, -1.0));
      Eigen::VectorXd y = (uniform(rng, 0.0, 1.0) < 0.5 ? g : Eigen::VectorXd::Zero(g.size()).eval());
      for (Eigen::Index k = 0; k < y.size(); ++k) y[k] += scale * standard_normal(rng);
      return y;
    };
    const Eigen::VectorXd y1 = draw(), y2 = draw();
    auto phi = [&](const Eigen::VectorXd& y) { return 0.5 * (g - y).squaredNorm() / (gamma * gamma); };
    const double rho = std::max(y1.norm(), y2.norm()) / gamma * (1.0 + 1e-12);
    const double bound = (rho + g.norm() / gamma) * (y1 - y2).norm() / gamma;
    worst = std::max(worst, std::abs(phi(y1) - phi(y2)) / bound);
  }
  return {worst <= 1.0, "max |dPhi| / bound " + fmt(worst)};
}

}  // namespace

// With arguments, runs only the listed criterion numbers.
int main(int argc, char** argv) {
  struct Criterion {
    const char* name;
    double budget;  // seconds
    std::function<Outcome()> check;
  };
  const Criterion criteria[] = {
      {"forward solve matches dense oracle (levels 0-2, tol 1e-8)", 10, forward_matches_dense_oracle},
      {"reciprocity of the resistivity matrix (20 draws, tol 1e-8)", 60, resistivity_is_symmetric},
      {"scaling law (sigma, z) -> (c sigma, z/c) (tol 1e-10)", 10, scaling_law},
      {"mesh convergence order >= 1 (levels 1-3 vs level 5)", 120, mesh_convergence},
      {"sampler per-mode variance within 5% (1e4 draws, three priors)", 120, sampler_mode_variances},
      {"prior-map continuity sweeps reach the mesh floor monotonically", 60, prior_map_continuity},
      {"pCN with zero potential preserves the prior (5 SE, 1e4 states)", 120, pcn_preserves_the_prior},
      {"ESS calibration (iid and AR(1), 15%)", 30, ess_calibration},
      {"desk runs A (star) and B (level set)", 1800, desk_runs},
      {"pipeline rerun is byte-identical", 600, determinism},
      {"Phi is Lipschitz in the data (100 triples)", 60, phi_is_lipschitz_in_data},
  };
  std::vector<bool> selected(std::size(criteria), argc == 1);
  for (int a = 1; a < argc; ++a) {
    const int k = std::atoi(argv[a]);
    if (k < 1 || k > static_cast<int>(std::size(criteria))) {
      std::cerr << "unknown criterion " << argv[a] << '\n';
      return 2;
    }
    selected[static_cast<std::size_t>(k - 1)] = true;
  }
  int failed = 0;
  for (std::size_t i = 0; i < std::size(criteria); ++i) {
    if (!selected[i]) continue;
    const Criterion& c = criteria[i];
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = seconds <= c.budget;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::cout << "criterion " << std::setw(2) << i + 1 << ": " << (pass ? "PASS" : "FAIL") << "  " << c.name << "  ["
              << o.detail << "; " << fmt(seconds) << " s of " << c.budget << " s"
              << (in_time ? "" : ", over budget") << "]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
