#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "eit/error.hpp"
#include "eit/fields.hpp"
#include "eit/forward.hpp"
#include "eit/mesh.hpp"
#include "eit/random.hpp"

namespace eit {

// Sample-space states for the three prior families.

struct LogGaussianState {
  GridField u;
  friend bool operator==(const LogGaussianState&, const LogGaussianState&) = default;
};

struct StarShapedState {
  GridField r_raw;  ///< Dirichlet1D field, mean included
  Point center;
  friend bool operator==(const StarShapedState&, const StarShapedState&) = default;
};

struct LevelSetState {
  GridField u;
  friend bool operator==(const LevelSetState&, const LevelSetState&) = default;
};

using PriorState = std::variant<LogGaussianState, StarShapedState, LevelSetState>;

/// The Gaussian component of a state (the part updated by pCN).
inline GridField& field_of(PriorState& s) {
  return std::visit([](auto& st) -> GridField& {
    if constexpr (std::is_same_v<std::decay_t<decltype(st)>, StarShapedState>) return st.r_raw;
    else return st.u;
  }, s);
}

inline const GridField& field_of(const PriorState& s) {
  return std::visit([](const auto& st) -> const GridField& {
    if constexpr (std::is_same_v<std::decay_t<decltype(st)>, StarShapedState>) return st.r_raw;
    else return st.u;
  }, s);
}

/// h(z) = (1 + tanh z) / 2, mapping the radial field into (0, 1).
inline double star_transform(double z) { return 0.5 * (1.0 + std::tanh(z)); }

inline double star_radius(const GridField& r_raw, double theta) { return star_transform(radial_eval(r_raw, theta)); }

/// exp(u) at each triangle centroid.
inline Conductivity f1_log_gaussian(const GridField& u, const Mesh& mesh) {
  std::vector<double> v = grid_to_mesh(u, mesh);
  for (double& x : v) x = std::exp(x);
  return Conductivity(std::move(v));
}

/// u_plus inside the star-shaped set {x : |x - x0| <= r(atan2(x - x0))},
/// u_minus outside; membership decided at triangle centroids.
inline Conductivity f2_star_shaped(const GridField& r_raw, Point x0, double u_plus, double u_minus, const Mesh& mesh) {
  if (!(u_plus > 0.0) || !(u_minus > 0.0)) throw ConfigError("star-shaped phase values must be positive");
  Conductivity sigma(mesh.num_triangles(), u_minus);
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const Point d = mesh.centroid(t) - x0;
    if (norm(d) <= star_radius(r_raw, std::atan2(d.y, d.x))) sigma[t] = u_plus;
  }
  return sigma;
}

/// Phase f_i where c_{i-1} <= u < c_i (c_0 = -inf, c_n = +inf).
inline Conductivity f3_level_set(const GridField& u, const std::vector<double>& thresholds,
                                 const std::vector<double>& phases, const Mesh& mesh) {
  if (phases.size() != thresholds.size() + 1) throw ConfigError("level set needs one more phase than thresholds");
  if (!std::is_sorted(thresholds.begin(), thresholds.end()) ||
      std::adjacent_find(thresholds.begin(), thresholds.end()) != thresholds.end())
    throw ConfigError("level set thresholds must be strictly increasing");
  for (double f : phases)
    if (!(f > 0.0)) throw ConfigError("level set phase values must be positive");
  const std::vector<double> values = grid_to_mesh(u, mesh);
  Conductivity sigma(mesh.num_triangles(), 0.0);
  for (std::size_t t = 0; t < values.size(); ++t) {
    const auto i = std::upper_bound(thresholds.begin(), thresholds.end(), values[t]) - thresholds.begin();
    sigma[t] = phases[static_cast<std::size_t>(i)];
  }
  return sigma;
}

/// Prior configuration: family, Gaussian covariance and mean, and the
/// family-specific transform parameters.
struct PriorConfig {
  enum class Family { log_gaussian, star_shaped, level_set };

  Family family = Family::level_set;
  CovarianceSpec covariance;
  double mean = 0.0;
  // star-shaped
  double u_plus = 2.0;
  double u_minus = 1.0;
  double center_lo = -0.5;
  double center_hi = 0.5;
  // level set
  std::vector<double> thresholds{0.0};
  std::vector<double> phases{1.0, 2.0};

  void validate() const {
    covariance.validate();
    const Boundary expected = family == Family::star_shaped ? Boundary::dirichlet1d : Boundary::neumann2d;
    if (covariance.boundary != expected)
      throw ConfigError(std::string("prior family requires a ") + to_string(expected) + " covariance");
    if (family == Family::star_shaped) {
      if (!(u_plus > 0.0 && u_minus > 0.0)) throw ConfigError("star-shaped phase values must be positive");
      if (!(center_lo < center_hi)) throw ConfigError("empty centre box");
      if (center_lo < -1.0 || center_hi > 1.0) throw ConfigError("centre box must lie inside [-1,1]^2");
    }
    if (family == Family::level_set) {
      if (phases.size() != thresholds.size() + 1) throw ConfigError("level set needs one more phase than thresholds");
      for (std::size_t i = 1; i < thresholds.size(); ++i)
        if (!(thresholds[i - 1] < thresholds[i])) throw ConfigError("level set thresholds must be strictly increasing");
      for (double f : phases)
        if (!(f > 0.0)) throw ConfigError("level set phase values must be positive");
    }
  }

  /// Smallest and largest conductivity the pushforward can produce (star and
  /// level set only).
  std::pair<double, double> phase_range() const {
    if (family == Family::star_shaped) return std::minmax(u_plus, u_minus);
    const auto [lo, hi] = std::minmax_element(phases.begin(), phases.end());
    return {*lo, *hi};
  }

  // Priors of the reference experiments; the grid size is a free parameter.

  /// exp# N(0.5 log 2, 1e16 (40^2 - Laplacian_N)^-6)
  static PriorConfig log_gaussian_reference(int grid_size) {
    PriorConfig p;
    p.family = Family::log_gaussian;
    p.covariance = {1e16, 40.0, 6.0, Boundary::neumann2d, grid_size};
    p.mean = 0.5 * std::log(2.0);
    return p;
  }

  /// h# N(0.5, 1e9 (30^2 - Laplacian_D)^-3) x U([-0.5,0.5]^2)
  static PriorConfig star_shaped_reference(int grid_size) {
    PriorConfig p;
    p.family = Family::star_shaped;
    p.covariance = {1e9, 30.0, 3.0, Boundary::dirichlet1d, grid_size};
    p.mean = 0.5;
    return p;
  }

  /// N(0, (35^2 - Laplacian_N)^-5) thresholded at 0 into phases {1, 2}
  static PriorConfig level_set_reference(int grid_size) {
    PriorConfig p;
    p.family = Family::level_set;
    p.covariance = {1.0, 35.0, 5.0, Boundary::neumann2d, grid_size};
    p.mean = 0.0;
    return p;
  }
};

inline const char* to_string(PriorConfig::Family f) {
  switch (f) {
    case PriorConfig::Family::log_gaussian: return "log_gaussian";
    case PriorConfig::Family::star_shaped: return "star_shaped";
    case PriorConfig::Family::level_set: return "level_set";
  }
  return "?";
}

inline PriorConfig::Family family_from_string(const std::string& s) {
  if (s == "log_gaussian") return PriorConfig::Family::log_gaussian;
  if (s == "star_shaped") return PriorConfig::Family::star_shaped;
  if (s == "level_set") return PriorConfig::Family::level_set;
  throw ConfigError("unknown prior family '" + s + "'");
}

inline PriorState prior_sample(const PriorConfig& config, Rng& rng) {
  config.validate();
  GridField f = sample_field(config.covariance, config.mean, rng);
  switch (config.family) {
    case PriorConfig::Family::log_gaussian: return LogGaussianState{std::move(f)};
    case PriorConfig::Family::level_set: return LevelSetState{std::move(f)};
    case PriorConfig::Family::star_shaped: {
      const double x = uniform(rng, config.center_lo, config.center_hi);
      const double y = uniform(rng, config.center_lo, config.center_hi);
      return StarShapedState{std::move(f), {x, y}};
    }
  }
  throw ConfigError("unknown prior family");
}

/// State at the prior mean: the constant mean field, centre at the middle of the box.
inline PriorState prior_mean_state(const PriorConfig& config) {
  const auto& c = config.covariance;
  GridField f = GridField::constant(c.boundary, c.grid_size, config.mean, config.mean);
  switch (config.family) {
    case PriorConfig::Family::log_gaussian: return LogGaussianState{std::move(f)};
    case PriorConfig::Family::level_set: return LevelSetState{std::move(f)};
    case PriorConfig::Family::star_shaped: {
      const double mid = 0.5 * (config.center_lo + config.center_hi);
      return StarShapedState{std::move(f), {mid, mid}};
    }
  }
  throw ConfigError("unknown prior family");
}

/// The map F_i from sample space to conductivity on `mesh`.
inline Conductivity push_forward(const PriorConfig& config, const PriorState& state, const Mesh& mesh) {
  return std::visit([&](const auto& s) -> Conductivity {
    using T = std::decay_t<decltype(s)>;
    if constexpr (std::is_same_v<T, LogGaussianState>) return f1_log_gaussian(s.u, mesh);
    else if constexpr (std::is_same_v<T, StarShapedState>)
      return f2_star_shaped(s.r_raw, s.center, config.u_plus, config.u_minus, mesh);
    else return f3_level_set(s.u, config.thresholds, config.phases, mesh);
  }, state);
}

/// Total area of triangles on which the two conductivities differ.
inline double measure_of_symmetric_difference(const Conductivity& a, const Conductivity& b, const Mesh& mesh) {
  if (a.size() != mesh.num_triangles() || b.size() != mesh.num_triangles())
    throw ConfigError("conductivities do not live on the given mesh");
  double area = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t)
    if (std::abs(a[t] - b[t]) > 1e-12) area += mesh.area(t);
  return area;
}

}  // namespace eit
