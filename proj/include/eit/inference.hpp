#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "eit/error.hpp"
#include "eit/fields.hpp"
#include "eit/forward.hpp"
#include "eit/log.hpp"
#include "eit/mesh.hpp"
#include "eit/priors.hpp"
#include "eit/random.hpp"

namespace eit {

/// Observations y = G(sigma) + eta with eta ~ N(0, gamma^2 I).
struct DataSet {
  Eigen::VectorXd y;
  double gamma = 0.0;
  StimulationMatrix stim;

  void validate(int electrodes) const {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ConfigError("noise level gamma must be positive");
    stim.validate();
    if (stim.electrodes() != electrodes) throw ConfigError("stimulation matrix does not match the electrode count");
    if (y.size() != stim.electrodes() * stim.patterns()) throw ConfigError("data length must be L*J");
  }
};

struct GeneratedData {
  DataSet data;
  Eigen::VectorXd clean;  ///< noise-free G(truth)
  /// mean_i |eta_i| / |G_i| over the data vector.
  double mean_relative_error = 0.0;
  /// Expected mean relative error if the same gamma were applied to
  /// differences of adjacent electrode voltages, excluding pairs that touch a
  /// driven electrode (the usual measurement convention of EIT toolkits).
  double differential_relative_error = 0.0;
};

inline double differential_relative_error(const Eigen::VectorXd& clean, const StimulationMatrix& stim, double gamma) {
  const Eigen::Index L = stim.electrodes();
  double acc = 0.0;
  int count = 0;
  for (Eigen::Index j = 0; j < stim.patterns(); ++j)
    for (Eigen::Index l = 0; l < L; ++l) {
      const Eigen::Index m = (l + 1) % L;
      if (stim.currents(l, j) != 0.0 || stim.currents(m, j) != 0.0) continue;
      const double d = std::abs(clean[j * L + l] - clean[j * L + m]);
      if (d == 0.0) continue;
      acc += gamma * std::sqrt(2.0 / std::numbers::pi) / d;
      ++count;
    }
  return count ? acc / count : 0.0;
}

/// Simulates data on `mesh` (the fine mesh). gamma = 0 yields noise-free data.
inline GeneratedData generate_data(const Conductivity& truth, const Mesh& mesh, const ElectrodeLayout& layout,
                                   const StimulationMatrix& stim, double gamma, Rng& rng) {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("noise level gamma must be non-negative");
  GeneratedData out;
  out.clean = forward_map(mesh, truth, layout, stim);
  out.data.stim = stim;
  out.data.gamma = gamma;
  out.data.y = out.clean;
  std::normal_distribution<double> normal(0.0, 1.0);
  double rel = 0.0;
  for (Eigen::Index i = 0; i < out.clean.size(); ++i) {
    const double eta = gamma > 0.0 ? gamma * normal(rng) : 0.0;
    out.data.y[i] += eta;
    if (out.clean[i] != 0.0) rel += std::abs(eta) / std::abs(out.clean[i]);
  }
  out.mean_relative_error = rel / static_cast<double>(out.clean.size());
  out.differential_relative_error = differential_relative_error(out.clean, stim, gamma);
  return out;
}

/// Phi = |G - y|^2 / (2 gamma^2)
inline double misfit(const Eigen::VectorXd& predicted, const DataSet& data) {
  return 0.5 * (predicted - data.y).squaredNorm() / (data.gamma * data.gamma);
}

/// Evaluates the potential Phi(u; y) on the inversion mesh. Owns its solver,
/// so each chain needs its own instance.
class Potential {
public:
  Potential(Mesh mesh, const ElectrodeLayout& layout, DataSet data, PriorConfig prior)
      : mesh_(std::move(mesh)), solver_(mesh_, layout), data_(std::move(data)), prior_(std::move(prior)) {
    data_.validate(layout.count);
    prior_.validate();
  }

  const Mesh& mesh() const { return mesh_; }
  const DataSet& data() const { return data_; }
  const PriorConfig& prior() const { return prior_; }

  /// Forward prediction for a conductivity on the inversion mesh.
  Eigen::VectorXd predict(const Conductivity& sigma) {
    solver_.set_conductivity(sigma);
    return solver_.forward_map(data_.stim);
  }

  double misfit(const Conductivity& sigma) { return eit::misfit(predict(sigma), data_); }

  struct Evaluation {
    double phi;
    Conductivity sigma;
  };

  /// Phi at F(state). Solver failures propagate as exceptions.
  Evaluation evaluate(const PriorState& state) {
    Conductivity sigma = push_forward(prior_, state, mesh_);
    const double phi = misfit(sigma);
    return {phi, std::move(sigma)};
  }

private:
  Mesh mesh_;
  ForwardSolver solver_;
  DataSet data_;
  PriorConfig prior_;
};

/// min{1, exp(Phi(current) - Phi(proposal))}; an infinite proposal potential
/// is never accepted.
inline double acceptance_probability(double phi_current, double phi_proposal) {
  if (!std::isfinite(phi_proposal)) return 0.0;
  if (!std::isfinite(phi_current)) return 1.0;
  return std::min(1.0, std::exp(phi_current - phi_proposal));
}

inline bool metropolis_accept(double phi_current, double phi_proposal, Rng& rng) {
  const double a = acceptance_probability(phi_current, phi_proposal);
  if (a >= 1.0) return true;
  return uniform(rng, 0.0, 1.0) < a;
}

/// m0 + sqrt(1 - beta^2) (u - m0) + beta xi, xi ~ N(0, C0); m0 = current.mean.
inline GridField pcn_proposal(const GridField& current, double beta, const CovarianceSpec& cov, Rng& rng) {
  if (!(beta > 0.0 && beta <= 1.0)) throw ConfigError("pCN step beta must lie in (0,1]");
  const std::vector<double> xi = synthesize(cov.boundary, cov.grid_size, sample_coefficients(cov, rng));
  GridField v = current;
  const double keep = std::sqrt(1.0 - beta * beta);
  for (std::size_t i = 0; i < v.values.size(); ++i)
    v.values[i] = current.mean + keep * (current.values[i] - current.mean) + beta * xi[i];
  return v;
}

template <typename State>
struct StepResult {
  State state;
  double phi;
  bool accepted;
};

/// One pCN update. `phi` maps a proposed field to its potential (or +inf).
template <typename PhiFn>
StepResult<GridField> pcn_step(const GridField& current, double phi_current, double beta, const CovarianceSpec& cov,
                               PhiFn&& phi, Rng& rng) {
  GridField proposal = pcn_proposal(current, beta, cov, rng);
  const double phi_proposal = phi(proposal);
  if (metropolis_accept(phi_current, phi_proposal, rng)) return {std::move(proposal), phi_proposal, true};
  return {current, phi_current, false};
}

/// Random-walk update of the star centre under a uniform prior on [lo,hi]^2.
template <typename PhiFn>
StepResult<Point> rwm_center_step(Point current, double phi_current, double delta, double lo, double hi, PhiFn&& phi,
                                  Rng& rng) {
  if (!(delta > 0.0)) throw ConfigError("random-walk step delta must be positive");
  const Point proposal{current.x + delta * standard_normal(rng), current.y + delta * standard_normal(rng)};
  if (proposal.x < lo || proposal.x > hi || proposal.y < lo || proposal.y > hi) return {current, phi_current, false};
  const double phi_proposal = phi(proposal);
  if (metropolis_accept(phi_current, phi_proposal, rng)) return {proposal, phi_proposal, true};
  return {current, phi_current, false};
}

enum class MoveType : std::uint8_t { field = 0, center = 1 };

struct ChainConfig {
  PriorConfig prior;
  double beta = 0.01;
  double delta = 0.01;
  std::uint64_t n_samples = 1000;
  std::uint64_t burn_in = 100;
  std::vector<Mode> monitor_modes;
  std::uint64_t seed = 1;
  std::uint64_t stream = 0;  ///< replica index; selects an independent rng stream
  std::uint64_t snapshot_every = 0;  ///< 0 disables state snapshots
  std::size_t max_snapshots = 16;

  void validate() const {
    prior.validate();
    if (!(beta > 0.0 && beta <= 1.0)) throw ConfigError("pCN step beta must lie in (0,1]");
    if (prior.family == PriorConfig::Family::star_shaped && !(delta > 0.0))
      throw ConfigError("random-walk step delta must be positive");
    if (!(burn_in < n_samples)) throw ConfigError("burn-in must be shorter than the chain");
    const int n = prior.covariance.grid_size;
    for (const Mode& m : monitor_modes) {
      const bool ok = prior.covariance.boundary == Boundary::neumann2d
                          ? (m.k1 >= 0 && m.k1 < n && m.k2 >= 0 && m.k2 < n)
                          : (m.k1 >= 1 && m.k1 <= n);
      if (!ok) throw ConfigError("monitored mode out of range");
    }
  }

  std::vector<std::string> monitor_labels() const {
    std::vector<std::string> out;
    const bool star = prior.family == PriorConfig::Family::star_shaped;
    for (const Mode& m : monitor_modes)
      out.push_back(star ? "r_" + std::to_string(m.k1)
                         : "u_" + std::to_string(m.k1) + "_" + std::to_string(m.k2));
    if (star) {
      out.emplace_back("x0");
      out.emplace_back("y0");
    }
    return out;
  }
};

/// Per-move trace, stored column-wise. Star-shaped chains record two rows per
/// iteration (field move, then centre move).
struct ChainTrace {
  std::vector<std::string> labels;
  std::vector<std::uint64_t> iteration;
  std::vector<std::uint8_t> move;
  std::vector<std::uint8_t> accepted;
  std::vector<double> phi;
  std::vector<double> monitors;  ///< row-major, labels.size() per row

  std::size_t rows() const { return iteration.size(); }

  friend bool operator==(const ChainTrace&, const ChainTrace&) = default;
};

struct ChainRecord {
  ChainTrace trace;
  std::array<std::uint64_t, 2> proposed{};
  std::array<std::uint64_t, 2> accepted{};
  std::uint64_t solver_failures = 0;
  std::uint64_t accumulated = 0;
  std::vector<double> field_sum;
  Point center_sum;
  std::vector<double> conductivity_sum;
  std::vector<PriorState> snapshots;

  double acceptance_rate(MoveType m) const {
    const auto i = static_cast<std::size_t>(m);
    return proposed[i] ? static_cast<double>(accepted[i]) / static_cast<double>(proposed[i]) : 0.0;
  }

  double acceptance_rate() const {
    const auto p = proposed[0] + proposed[1];
    return p ? static_cast<double>(accepted[0] + accepted[1]) / static_cast<double>(p) : 0.0;
  }

  /// Values of one monitored quantity (or "phi") at the end of each
  /// iteration from `first_iteration` on.
  std::vector<double> series(const std::string& label, std::uint64_t first_iteration = 0) const {
    std::optional<std::size_t> column;
    if (label != "phi") {
      auto it = std::find(trace.labels.begin(), trace.labels.end(), label);
      if (it == trace.labels.end()) throw ConfigError("no monitored quantity '" + label + "'");
      column = static_cast<std::size_t>(it - trace.labels.begin());
    }
    std::vector<double> out;
    const std::size_t width = trace.labels.size();
    for (std::size_t r = 0; r < trace.rows(); ++r) {
      const bool last_of_iteration = r + 1 == trace.rows() || trace.iteration[r + 1] != trace.iteration[r];
      if (!last_of_iteration || trace.iteration[r] < first_iteration) continue;
      out.push_back(column ? trace.monitors[r * width + *column] : trace.phi[r]);
    }
    return out;
  }

  friend bool operator==(const ChainRecord&, const ChainRecord&) = default;
};

struct MeanConductivities {
  Conductivity of_mean;             ///< F(E u)
  std::vector<double> mean_of;      ///< E F(u), per triangle
};

/// Sample-space mean state from the accumulators.
inline PriorState mean_state(const ChainRecord& record, const PriorConfig& prior) {
  if (record.accumulated == 0) throw NumericalError("no states accumulated (chain shorter than burn-in?)");
  PriorState s = prior_mean_state(prior);
  GridField& f = field_of(s);
  const double n = static_cast<double>(record.accumulated);
  if (record.field_sum.size() != f.values.size()) throw ConfigError("accumulator does not match prior grid");
  for (std::size_t i = 0; i < f.values.size(); ++i) f.values[i] = record.field_sum[i] / n;
  if (auto* star = std::get_if<StarShapedState>(&s)) star->center = {record.center_sum.x / n, record.center_sum.y / n};
  return s;
}

inline MeanConductivities mean_conductivities(const ChainRecord& record, const PriorConfig& prior, const Mesh& mesh) {
  if (record.accumulated == 0) throw NumericalError("no states accumulated (chain shorter than burn-in?)");
  if (record.conductivity_sum.size() != mesh.num_triangles()) throw ConfigError("accumulator does not match mesh");
  MeanConductivities out;
  out.of_mean = push_forward(prior, mean_state(record, prior), mesh);
  out.mean_of.resize(record.conductivity_sum.size());
  for (std::size_t t = 0; t < out.mean_of.size(); ++t)
    out.mean_of[t] = record.conductivity_sum[t] / static_cast<double>(record.accumulated);
  return out;
}

namespace detail {

class BinaryWriter {
public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}
  void u64(std::uint64_t v) { os_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void f64(double v) { os_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void f64s(const std::vector<double>& v) {
    u64(v.size());
    os_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  template <typename T>
  void ints(const std::vector<T>& v) {
    u64(v.size());
    for (T x : v) u64(static_cast<std::uint64_t>(x));
  }
  void str(const std::string& s) {
    u64(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

private:
  std::ostream& os_;
};

class BinaryReader {
public:
  explicit BinaryReader(std::istream& is) : is_(is) {}
  std::uint64_t u64() {
    std::uint64_t v;
    read(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    read(&v, sizeof v);
    return v;
  }
  std::vector<double> f64s() {
    std::vector<double> v(checked_size());
    read(v.data(), v.size() * sizeof(double));
    return v;
  }
  template <typename T>
  std::vector<T> ints() {
    std::vector<T> v(checked_size());
    for (auto& x : v) x = static_cast<T>(u64());
    return v;
  }
  std::string str() {
    std::string s(checked_size(), '\0');
    read(s.data(), s.size());
    return s;
  }

private:
  std::size_t checked_size() {
    const std::uint64_t n = u64();
    if (n > (std::uint64_t{1} << 34)) throw ParseError("implausible array length", 0, "checkpoint");
    return static_cast<std::size_t>(n);
  }
  void read(void* p, std::size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw ParseError("truncated checkpoint", 0, "checkpoint");
  }
  std::istream& is_;
};

inline void write_state(BinaryWriter& w, const PriorState& s) {
  w.u64(s.index());
  const GridField& f = field_of(s);
  w.u64(static_cast<std::uint64_t>(f.boundary));
  w.u64(static_cast<std::uint64_t>(f.n));
  w.f64(f.mean);
  w.f64s(f.values);
  const Point c = std::holds_alternative<StarShapedState>(s) ? std::get<StarShapedState>(s).center : Point{};
  w.f64(c.x);
  w.f64(c.y);
}

inline PriorState read_state(BinaryReader& r) {
  const auto kind = r.u64();
  GridField f;
  f.boundary = static_cast<Boundary>(r.u64());
  f.n = static_cast<int>(r.u64());
  f.mean = r.f64();
  f.values = r.f64s();
  Point c;
  c.x = r.f64();
  c.y = r.f64();
  switch (kind) {
    case 0: return LogGaussianState{std::move(f)};
    case 1: return StarShapedState{std::move(f), c};
    case 2: return LevelSetState{std::move(f)};
    default: throw ParseError("unknown state kind", 0, "checkpoint");
  }
}

}  // namespace detail

/// A single Markov chain. Iteration k draws all its randomness from
/// substream(seed, stream, k), so a chain restored from a checkpoint continues
/// exactly as the uninterrupted chain would have.
///
/// Star-shaped priors use Metropolis-within-Gibbs: each iteration is one pCN
/// update of the radial field followed by one random-walk update of the
/// centre. Other priors do one pCN update per iteration.
class Chain {
public:
  static constexpr std::uint64_t init_counter = ~std::uint64_t{0};

  Chain(ChainConfig config, Potential& potential) : config_(std::move(config)), potential_(&potential) {
    config_.validate();
    Rng rng = substream(config_.seed, config_.stream, init_counter);
    state_ = prior_sample(config_.prior, rng);
    auto eval = evaluate(state_);
    phi_ = eval.first;
    sigma_ = std::move(eval.second);
    record_.trace.labels = config_.monitor_labels();
    const auto& f = field_of(state_);
    record_.field_sum.assign(f.values.size(), 0.0);
    record_.conductivity_sum.assign(potential.mesh().num_triangles(), 0.0);
  }

  const ChainConfig& config() const { return config_; }
  std::uint64_t iteration() const { return iteration_; }
  bool finished() const { return iteration_ >= config_.n_samples; }
  const PriorState& state() const { return state_; }
  double phi() const { return phi_; }
  const Conductivity& conductivity() const { return sigma_; }
  const ChainRecord& record() const { return record_; }
  ChainRecord take_record() { return std::move(record_); }

  void step() {
    Rng rng = substream(config_.seed, config_.stream, iteration_);
    const auto& cov = config_.prior.covariance;

    Conductivity proposal_sigma;
    auto field_phi = [&](const GridField& proposal) {
      PriorState s = state_;
      field_of(s) = proposal;
      auto e = evaluate(s);
      proposal_sigma = std::move(e.second);
      return e.first;
    };
    auto field_step = pcn_step(field_of(state_), phi_, config_.beta, cov, field_phi, rng);
    ++record_.proposed[0];
    if (field_step.accepted) {
      ++record_.accepted[0];
      field_of(state_) = std::move(field_step.state);
      phi_ = field_step.phi;
      sigma_ = std::move(proposal_sigma);
    }
    record_row(MoveType::field, field_step.accepted);

    if (auto* star = std::get_if<StarShapedState>(&state_)) {
      auto center_phi = [&](Point proposal) {
        PriorState s = *star;
        std::get<StarShapedState>(s).center = proposal;
        auto e = evaluate(s);
        proposal_sigma = std::move(e.second);
        return e.first;
      };
      auto center_step = rwm_center_step(star->center, phi_, config_.delta, config_.prior.center_lo,
                                         config_.prior.center_hi, center_phi, rng);
      ++record_.proposed[1];
      if (center_step.accepted) {
        ++record_.accepted[1];
        star->center = center_step.state;
        phi_ = center_step.phi;
        sigma_ = std::move(proposal_sigma);
      }
      record_row(MoveType::center, center_step.accepted);
    }

    if (iteration_ >= config_.burn_in) accumulate();
    ++iteration_;
  }

  /// Runs until `until` iterations have been made (or the chain is complete).
  void run(std::uint64_t until) {
    until = std::min(until, config_.n_samples);
    while (iteration_ < until) step();
  }

  void run() { run(config_.n_samples); }

  // Checkpoint layout: text line `eitchk v1`, then little-endian 64-bit
  // fields: seed, stream, family, n_samples, burn_in, iteration counter, rng
  // counter, phi, current state, and the full record.
  void save_checkpoint(std::ostream& os) const {
    static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
    os << "eitchk v1\n";
    detail::BinaryWriter w(os);
    w.u64(config_.seed);
    w.u64(config_.stream);
    w.u64(static_cast<std::uint64_t>(config_.prior.family));
    w.u64(config_.n_samples);
    w.u64(config_.burn_in);
    w.u64(iteration_);
    w.u64(iteration_);  // rng counter: iteration k uses substream counter k
    w.f64(phi_);
    detail::write_state(w, state_);

    const auto& t = record_.trace;
    w.u64(t.labels.size());
    for (const auto& l : t.labels) w.str(l);
    w.ints(t.iteration);
    w.ints(t.move);
    w.ints(t.accepted);
    w.f64s(t.phi);
    w.f64s(t.monitors);
    for (int i = 0; i < 2; ++i) {
      w.u64(record_.proposed[i]);
      w.u64(record_.accepted[i]);
    }
    w.u64(record_.solver_failures);
    w.u64(record_.accumulated);
    w.f64s(record_.field_sum);
    w.f64(record_.center_sum.x);
    w.f64(record_.center_sum.y);
    w.f64s(record_.conductivity_sum);
    w.u64(record_.snapshots.size());
    for (const auto& s : record_.snapshots) detail::write_state(w, s);
  }

  void save_checkpoint(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
      std::ofstream os(tmp, std::ios::binary);
      if (!os) throw ConfigError("cannot open checkpoint " + tmp + " for writing");
      save_checkpoint(os);
      if (!os) throw ConfigError("failed writing checkpoint " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw ConfigError("cannot move checkpoint into place at " + path);
  }

  /// Restores a chain saved by `save_checkpoint`. The configuration must be
  /// the one the chain was started with.
  static Chain resume(std::istream& is, ChainConfig config, Potential& potential) {
    std::string header;
    if (!std::getline(is, header) || header != "eitchk v1") throw ParseError("expected 'eitchk v1'", 1, "checkpoint");
    detail::BinaryReader r(is);
    const auto seed = r.u64(), stream = r.u64(), family = r.u64(), n_samples = r.u64(), burn_in = r.u64();
    if (seed != config.seed || stream != config.stream || family != static_cast<std::uint64_t>(config.prior.family) ||
        burn_in != config.burn_in)
      throw ConfigError("checkpoint was written by a chain with a different configuration");
    (void)n_samples;  // a chain may be extended beyond its original length

    Chain c(std::move(config), potential, Restore{});
    c.iteration_ = r.u64();
    if (r.u64() != c.iteration_) throw ParseError("rng counter does not match iteration", 0, "checkpoint");
    c.phi_ = r.f64();
    c.state_ = detail::read_state(r);
    c.sigma_ = push_forward(c.config_.prior, c.state_, potential.mesh());

    auto& t = c.record_.trace;
    t.labels.resize(r.u64());
    for (auto& l : t.labels) l = r.str();
    t.iteration = r.ints<std::uint64_t>();
    t.move = r.ints<std::uint8_t>();
    t.accepted = r.ints<std::uint8_t>();
    t.phi = r.f64s();
    t.monitors = r.f64s();
    for (int i = 0; i < 2; ++i) {
      c.record_.proposed[i] = r.u64();
      c.record_.accepted[i] = r.u64();
    }
    c.record_.solver_failures = r.u64();
    c.record_.accumulated = r.u64();
    c.record_.field_sum = r.f64s();
    c.record_.center_sum.x = r.f64();
    c.record_.center_sum.y = r.f64();
    c.record_.conductivity_sum = r.f64s();
    c.record_.snapshots.resize(r.u64());
    for (auto& s : c.record_.snapshots) s = detail::read_state(r);
    if (t.labels != c.config_.monitor_labels()) throw ConfigError("checkpoint monitors differ from configuration");
    return c;
  }

  static Chain resume(const std::string& path, ChainConfig config, Potential& potential) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open checkpoint " + path);
    return resume(is, std::move(config), potential);
  }

private:
  struct Restore {};
  Chain(ChainConfig config, Potential& potential, Restore) : config_(std::move(config)), potential_(&potential) {
    config_.validate();
  }

  // Solver failures count as rejections: Phi = +inf.
  std::pair<double, Conductivity> evaluate(const PriorState& s) {
    try {
      auto e = potential_->evaluate(s);
      if (!std::isfinite(e.phi)) throw NumericalError("non-finite potential");
      return {e.phi, std::move(e.sigma)};
    } catch (const Error& err) {
      if (record_.solver_failures++ < 10) log::warn(std::string("potential evaluation failed, rejecting: ") + err.what());
      return {std::numeric_limits<double>::infinity(), Conductivity{}};
    }
  }

  void record_row(MoveType move, bool accepted) {
    auto& t = record_.trace;
    t.iteration.push_back(iteration_);
    t.move.push_back(static_cast<std::uint8_t>(move));
    t.accepted.push_back(accepted ? 1 : 0);
    t.phi.push_back(phi_);
    const auto values = fourier_monitor(field_of(state_), config_.monitor_modes);
    t.monitors.insert(t.monitors.end(), values.begin(), values.end());
    if (const auto* star = std::get_if<StarShapedState>(&state_)) {
      t.monitors.push_back(star->center.x);
      t.monitors.push_back(star->center.y);
    }
  }

  void accumulate() {
    const auto& f = field_of(state_).values;
    for (std::size_t i = 0; i < f.size(); ++i) record_.field_sum[i] += f[i];
    if (const auto* star = std::get_if<StarShapedState>(&state_)) {
      record_.center_sum.x += star->center.x;
      record_.center_sum.y += star->center.y;
    }
    if (sigma_.size() == record_.conductivity_sum.size())
      for (std::size_t t = 0; t < sigma_.size(); ++t) record_.conductivity_sum[t] += sigma_[t];
    else  // initial state failed to evaluate; recompute its pushforward directly
      for (std::size_t t = 0; const double v : push_forward(config_.prior, state_, potential_->mesh()).values)
        record_.conductivity_sum[t++] += v;
    ++record_.accumulated;
    const auto k = iteration_ - config_.burn_in;
    if (config_.snapshot_every && k % config_.snapshot_every == 0 && record_.snapshots.size() < config_.max_snapshots)
      record_.snapshots.push_back(state_);
  }

  ChainConfig config_;
  Potential* potential_;
  PriorState state_;
  double phi_ = std::numeric_limits<double>::infinity();
  Conductivity sigma_;
  std::uint64_t iteration_ = 0;
  ChainRecord record_;
};

/// Runs a chain to completion, optionally checkpointing every
/// `checkpoint_every` iterations to `checkpoint_path` and resuming from an
/// existing checkpoint there.
inline ChainRecord run_chain(const ChainConfig& config, Potential& potential, const std::string& checkpoint_path = {},
                             std::uint64_t checkpoint_every = 0, bool resume = false) {
  std::optional<Chain> chain;
  if (resume && !checkpoint_path.empty() && std::ifstream(checkpoint_path).good())
    chain.emplace(Chain::resume(checkpoint_path, config, potential));
  else
    chain.emplace(config, potential);
  while (!chain->finished()) {
    const std::uint64_t next = checkpoint_every ? chain->iteration() + checkpoint_every : config.n_samples;
    chain->run(next);
    if (!checkpoint_path.empty() && checkpoint_every) chain->save_checkpoint(checkpoint_path);
  }
  return chain->take_record();
}

}  // namespace eit
