#pragma once

#include <fftw3.h>

#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "eit/error.hpp"
#include "eit/forward.hpp"
#include "eit/log.hpp"
#include "eit/mesh.hpp"
#include "eit/random.hpp"

namespace eit {

/// Neumann2D: Laplacian with zero normal derivative on [-1,1]^2.
/// Dirichlet1D: Laplacian vanishing at both ends of (-pi,pi].
enum class Boundary { neumann2d, dirichlet1d };

inline const char* to_string(Boundary b) { return b == Boundary::neumann2d ? "neumann2d" : "dirichlet1d"; }

inline Boundary boundary_from_string(const std::string& s) {
  if (s == "neumann2d") return Boundary::neumann2d;
  if (s == "dirichlet1d") return Boundary::dirichlet1d;
  throw ConfigError("unknown boundary '" + s + "'");
}

/// Covariance q (tau^2 - Laplacian)^(-alpha) on a uniform grid.
struct CovarianceSpec {
  double q = 1.0;
  double tau = 1.0;
  double alpha = 2.0;
  Boundary boundary = Boundary::neumann2d;
  int grid_size = 32;

  int dimension() const { return boundary == Boundary::neumann2d ? 2 : 1; }

  void validate() const {
    if (!(q > 0.0) || !std::isfinite(q)) throw ConfigError("covariance amplitude q must be positive");
    if (!(tau >= 0.0) || !std::isfinite(tau)) throw ConfigError("inverse length scale tau must be non-negative");
    if (!std::isfinite(alpha)) throw ConfigError("regularity exponent alpha must be finite");
    if (grid_size < 2 || !std::has_single_bit(static_cast<unsigned>(grid_size)))
      throw ConfigError("grid size must be a power of two (at least 2)");
    if (tau == 0.0 && boundary == Boundary::neumann2d)
      throw ConfigError("tau = 0 with Neumann boundary leaves the constant mode unbounded");
  }

  /// Laplacian eigenvalue for mode (k1, k2); k2 is ignored in 1D.
  double eigenvalue(int k1, int k2 = 0) const {
    if (boundary == Boundary::neumann2d) {
      const double a = k1 * std::numbers::pi / 2.0, b = k2 * std::numbers::pi / 2.0;
      return a * a + b * b;
    }
    return 0.25 * k1 * k1;
  }

  /// Variance of the coefficient of the L2-normalised eigenfunction.
  double mode_variance(int k1, int k2 = 0) const { return q * std::pow(tau * tau + eigenvalue(k1, k2), -alpha); }
};

/// Samples on cell centres: x_i = -1 + (2i+1)/n on [-1,1] per axis
/// (value(ix, iy) = values[iy*n + ix]), or theta_i = -pi + (2i+1)pi/n.
struct GridField {
  Boundary boundary = Boundary::neumann2d;
  int n = 0;
  double mean = 0.0;
  std::vector<double> values;

  friend bool operator==(const GridField&, const GridField&) = default;

  double& at(int ix, int iy) { return values[static_cast<std::size_t>(iy) * n + ix]; }
  double at(int ix, int iy) const { return values[static_cast<std::size_t>(iy) * n + ix]; }

  static GridField constant(Boundary b, int n, double value, double mean = 0.0) {
    const std::size_t size = b == Boundary::neumann2d ? static_cast<std::size_t>(n) * n : static_cast<std::size_t>(n);
    return {b, n, mean, std::vector<double>(size, value)};
  }
};

inline double grid_coordinate(int i, int n) { return -1.0 + (2.0 * i + 1.0) / n; }
inline double grid_angle(int i, int n) { return -std::numbers::pi + (2.0 * i + 1.0) * std::numbers::pi / n; }

namespace detail {

// FFTW plans are created once per (kind, n) under a lock; execution with the
// new-array interface is thread safe.
enum class Transform { dct3_2d, dct2_2d, dst3_1d, dst2_1d };

// FFTW's planner is not reentrant; every planner call takes this lock.
inline std::mutex& fftw_mutex() {
  static std::mutex mutex;
  return mutex;
}

inline fftw_plan plan_for(Transform kind, int n) {
  static std::map<std::pair<Transform, int>, fftw_plan> plans;
  std::lock_guard lock(fftw_mutex());
  auto key = std::make_pair(kind, n);
  if (auto it = plans.find(key); it != plans.end()) return it->second;
  const bool two_d = kind == Transform::dct3_2d || kind == Transform::dct2_2d;
  const std::size_t size = two_d ? static_cast<std::size_t>(n) * n : static_cast<std::size_t>(n);
  std::vector<double> in(size), out(size);
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  fftw_plan p = nullptr;
  switch (kind) {
    case Transform::dct3_2d: p = fftw_plan_r2r_2d(n, n, in.data(), out.data(), FFTW_REDFT01, FFTW_REDFT01, flags); break;
    case Transform::dct2_2d: p = fftw_plan_r2r_2d(n, n, in.data(), out.data(), FFTW_REDFT10, FFTW_REDFT10, flags); break;
    case Transform::dst3_1d: p = fftw_plan_r2r_1d(n, in.data(), out.data(), FFTW_RODFT01, flags); break;
    case Transform::dst2_1d: p = fftw_plan_r2r_1d(n, in.data(), out.data(), FFTW_RODFT10, flags); break;
  }
  if (!p) throw NumericalError("FFTW planning failed");
  plans.emplace(key, p);
  return p;
}

inline std::vector<double> execute(Transform kind, int n, std::vector<double> in) {
  std::vector<double> out(in.size());
  fftw_execute_r2r(plan_for(kind, n), in.data(), out.data());
  return out;
}

inline double neumann_norm(int k) { return k == 0 ? 1.0 / std::numbers::sqrt2 : 1.0; }
inline double dirichlet_norm() { return 1.0 / std::sqrt(std::numbers::pi); }

}  // namespace detail

/// Grid values of sum_k a_k phi_k with L2-normalised eigenfunctions.
///
/// Neumann2D: coefficient a(k1,k2) at index k2*n + k1, k in {0..n-1}^2,
///   phi_k(x,y) = N_k1 N_k2 cos(k1 pi (x+1)/2) cos(k2 pi (y+1)/2), N_0 = 2^-1/2, N_k = 1.
/// Dirichlet1D: coefficient a(k) at index k-1, k in {1..n},
///   phi_k(theta) = pi^-1/2 sin(k (theta+pi)/2).
inline std::vector<double> synthesize(Boundary b, int n, const std::vector<double>& coeffs) {
  std::vector<double> x(coeffs.size());
  if (b == Boundary::neumann2d) {
    if (coeffs.size() != static_cast<std::size_t>(n) * n) throw ConfigError("coefficient count mismatch");
    // REDFT01: y_i = x_0 + 2 sum_{k>=1} x_k cos(pi k (2i+1) / 2n), per axis.
    auto s = [](int k) { return k == 0 ? detail::neumann_norm(0) : 0.5; };
    for (int k2 = 0; k2 < n; ++k2)
      for (int k1 = 0; k1 < n; ++k1) {
        const std::size_t idx = static_cast<std::size_t>(k2) * n + k1;
        x[idx] = coeffs[idx] * s(k1) * s(k2);
      }
    return detail::execute(detail::Transform::dct3_2d, n, std::move(x));
  }
  if (coeffs.size() != static_cast<std::size_t>(n)) throw ConfigError("coefficient count mismatch");
  // RODFT01: y_i = (-1)^i x_{n-1} + 2 sum_{k<n-1} x_k sin(pi (k+1)(2i+1) / 2n).
  const double norm = detail::dirichlet_norm();
  for (int k = 0; k < n; ++k) x[k] = coeffs[k] * norm * (k == n - 1 ? 1.0 : 0.5);
  return detail::execute(detail::Transform::dst3_1d, n, std::move(x));
}

/// Inverse of `synthesize`: eigenfunction coefficients of grid values.
inline std::vector<double> analyze(Boundary b, int n, const std::vector<double>& values) {
  if (b == Boundary::neumann2d) {
    if (values.size() != static_cast<std::size_t>(n) * n) throw ConfigError("grid value count mismatch");
    // REDFT10: y_k = 2 sum_i x_i cos(pi k (2i+1) / 2n), per axis.
    std::vector<double> y = detail::execute(detail::Transform::dct2_2d, n, values);
    auto s = [n](int k) { return k == 0 ? 1.0 / (std::numbers::sqrt2 * n) : 1.0 / n; };
    for (int k2 = 0; k2 < n; ++k2)
      for (int k1 = 0; k1 < n; ++k1) y[static_cast<std::size_t>(k2) * n + k1] *= s(k1) * s(k2);
    return y;
  }
  if (values.size() != static_cast<std::size_t>(n)) throw ConfigError("grid value count mismatch");
  std::vector<double> y = detail::execute(detail::Transform::dst2_1d, n, values);
  const double norm = detail::dirichlet_norm();
  for (int k = 0; k < n; ++k) y[k] /= norm * n * (k == n - 1 ? 2.0 : 1.0);
  return y;
}

/// Draws the eigenfunction coefficients sqrt(q)(tau^2+lambda_k)^(-alpha/2) xi_k.
inline std::vector<double> sample_coefficients(const CovarianceSpec& spec, Rng& rng) {
  const int n = spec.grid_size;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> c;
  if (spec.boundary == Boundary::neumann2d) {
    c.resize(static_cast<std::size_t>(n) * n);
    for (int k2 = 0; k2 < n; ++k2)
      for (int k1 = 0; k1 < n; ++k1)
        c[static_cast<std::size_t>(k2) * n + k1] = std::sqrt(spec.mode_variance(k1, k2)) * normal(rng);
  } else {
    c.resize(static_cast<std::size_t>(n));
    for (int k = 1; k <= n; ++k) c[k - 1] = std::sqrt(spec.mode_variance(k)) * normal(rng);
  }
  return c;
}

/// One draw from N(mean, q (tau^2 - Laplacian)^(-alpha)) on the grid.
inline GridField sample_field(const CovarianceSpec& spec, double mean, Rng& rng) {
  spec.validate();
  if (spec.alpha <= 0.5 * spec.dimension())
    log::warn("alpha <= d/2: samples are not almost surely continuous");
  GridField f{spec.boundary, spec.grid_size, mean, synthesize(spec.boundary, spec.grid_size, sample_coefficients(spec, rng))};
  for (double& v : f.values) v += mean;
  return f;
}

/// Bilinear interpolation at a point of [-1,1]^2. Within the outer half cell
/// the nearest cell is extrapolated linearly, so affine fields are exact.
inline double interpolate(const GridField& field, Point p) {
  if (field.boundary != Boundary::neumann2d) throw ConfigError("bilinear interpolation needs a 2D field");
  if (!(std::abs(p.x) <= 1.0 && std::abs(p.y) <= 1.0))
    throw ConfigError("point (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") lies outside [-1,1]^2");
  const int n = field.n;
  auto locate = [n](double x) {
    const double s = (x + 1.0) * n / 2.0 - 0.5;
    const int i = std::clamp(static_cast<int>(std::floor(s)), 0, n - 2);
    return std::pair{i, s - i};
  };
  const auto [ix, tx] = locate(p.x);
  const auto [iy, ty] = locate(p.y);
  const double v00 = field.at(ix, iy), v10 = field.at(ix + 1, iy);
  const double v01 = field.at(ix, iy + 1), v11 = field.at(ix + 1, iy + 1);
  const double lo = v00 + tx * (v10 - v00);
  const double hi = v01 + tx * (v11 - v01);
  return lo + ty * (hi - lo);
}

/// Field value at every triangle centroid.
inline std::vector<double> grid_to_mesh(const GridField& field, const Mesh& mesh) {
  std::vector<double> out(mesh.num_triangles());
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = interpolate(field, mesh.centroid(t));
  return out;
}

/// Piecewise-linear evaluation of a Dirichlet1D field at any angle. The
/// fluctuation about the mean vanishes at theta = +-pi, so the result is
/// continuous and periodic and equals the mean there.
inline double radial_eval(const GridField& field, double theta) {
  if (field.boundary != Boundary::dirichlet1d) throw ConfigError("radial evaluation needs a 1D field");
  constexpr double pi = std::numbers::pi;
  if (theta > pi || theta <= -pi) theta = std::remainder(theta, 2.0 * pi);
  const int n = field.n;
  const double m = field.mean;
  const double s = (theta + pi) * n / (2.0 * pi) - 0.5;
  if (s <= 0.0) return m + (field.values[0] - m) * std::max(0.0, (s + 0.5) / 0.5);
  if (s >= n - 1) return m + (field.values[n - 1] - m) * std::max(0.0, (n - 0.5 - s) / 0.5);
  const int i = static_cast<int>(s);
  const double t = s - i;
  return field.values[i] + t * (field.values[i + 1] - field.values[i]);
}

struct Mode {
  int k1 = 0;
  int k2 = 0;
  friend bool operator==(const Mode&, const Mode&) = default;
};

/// Eigenfunction coefficients of (state - mean) at the listed modes.
/// Neumann2D modes are (k1, k2) = (x, y) in {0..n-1}^2; Dirichlet1D uses k1 in {1..n}.
inline std::vector<double> fourier_monitor(const GridField& state, const std::vector<Mode>& modes) {
  const int n = state.n;
  for (const Mode& m : modes) {
    const bool ok = state.boundary == Boundary::neumann2d
                        ? (m.k1 >= 0 && m.k1 < n && m.k2 >= 0 && m.k2 < n)
                        : (m.k1 >= 1 && m.k1 <= n);
    if (!ok) throw ConfigError("mode (" + std::to_string(m.k1) + "," + std::to_string(m.k2) + ") is out of range");
  }
  std::vector<double> centred = state.values;
  for (double& v : centred) v -= state.mean;
  const std::vector<double> c = analyze(state.boundary, n, centred);
  std::vector<double> out;
  out.reserve(modes.size());
  for (const Mode& m : modes)
    out.push_back(state.boundary == Boundary::neumann2d ? c[static_cast<std::size_t>(m.k2) * n + m.k1] : c[m.k1 - 1]);
  return out;
}

// Binary layout: one text line `gridfield v1 <boundary> <n> <mean>\n`, then
// the values as little-endian 64-bit floats, row-major.

inline void write_gridfield(std::ostream& os, const GridField& f) {
  std::ostringstream header;
  header << std::setprecision(17) << "gridfield v1 " << to_string(f.boundary) << ' ' << f.n << ' ' << f.mean << '\n';
  os << header.str();
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  os.write(reinterpret_cast<const char*>(f.values.data()), static_cast<std::streamsize>(f.values.size() * sizeof(double)));
}

inline GridField read_gridfield(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("missing header", 1, "gridfield");
  std::istringstream ss(line);
  std::string magic, version, boundary;
  GridField f;
  if (!(ss >> magic >> version >> boundary >> f.n >> f.mean) || magic != "gridfield" || version != "v1")
    throw ParseError("expected 'gridfield v1 <boundary> <n> <mean>'", 1, "gridfield");
  try {
    f.boundary = boundary_from_string(boundary);
  } catch (const ConfigError& e) {
    throw ParseError(e.what(), 1, "gridfield");
  }
  if (f.n < 1) throw ParseError("grid size must be positive", 1, "gridfield");
  const std::size_t count = f.boundary == Boundary::neumann2d ? static_cast<std::size_t>(f.n) * f.n : static_cast<std::size_t>(f.n);
  f.values.resize(count);
  is.read(reinterpret_cast<char*>(f.values.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (static_cast<std::size_t>(is.gcount()) != count * sizeof(double)) throw ParseError("truncated data", 2, "gridfield");
  return f;
}

}  // namespace eit
