#pragma once

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <mutex>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "eit/error.hpp"
#include "eit/fields.hpp"
#include "eit/forward.hpp"
#include "eit/inference.hpp"
#include "eit/mesh.hpp"

namespace eit {

namespace detail {

inline double mean_of(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

inline double sd_of(const std::vector<double>& x) {
  const double m = mean_of(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

inline double quantile(std::vector<double> x, double p) {
  std::sort(x.begin(), x.end());
  const double pos = p * static_cast<double>(x.size() - 1);
  const auto i = static_cast<std::size_t>(pos);
  if (i + 1 >= x.size()) return x.back();
  return x[i] + (pos - static_cast<double>(i)) * (x[i + 1] - x[i]);
}

}  // namespace detail

/// Biased autocorrelation rho_k = c_k / c_0, c_k = sum (x_i - m)(x_{i+k} - m) / N,
/// for k = 0..N-1, via a zero-padded FFT.
inline std::vector<double> autocorrelation(const std::vector<double>& x) {
  const std::size_t n = x.size();
  if (n < 2) throw NumericalError("degenerate trace: fewer than two values");
  const double m = detail::mean_of(x);
  const std::size_t size = std::bit_ceil(2 * n);
  std::vector<double> buf(size, 0.0);
  for (std::size_t i = 0; i < n; ++i) buf[i] = x[i] - m;
  std::vector<fftw_complex> spec(size / 2 + 1);
  {
    std::lock_guard lock(detail::fftw_mutex());
    fftw_plan fwd = fftw_plan_dft_r2c_1d(static_cast<int>(size), buf.data(), spec.data(), FFTW_ESTIMATE);
    fftw_plan bwd = fftw_plan_dft_c2r_1d(static_cast<int>(size), spec.data(), buf.data(), FFTW_ESTIMATE);
    fftw_execute(fwd);
    for (auto& c : spec) {
      c[0] = c[0] * c[0] + c[1] * c[1];
      c[1] = 0.0;
    }
    fftw_execute(bwd);
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(bwd);
  }
  if (!(buf[0] > 0.0)) throw NumericalError("degenerate trace: zero variance");
  std::vector<double> rho(n);
  for (std::size_t k = 0; k < n; ++k) rho[k] = buf[k] / buf[0];
  return rho;
}

/// N / (1 + 2 sum_{k>=1} rho_k), summing until the first negative rho_k.
inline double ess(const std::vector<double>& trace) {
  if (trace.size() < 100) throw ConfigError("ESS needs at least 100 values");
  for (double v : trace)
    if (!std::isfinite(v)) throw NumericalError("degenerate trace: non-finite value");
  const std::vector<double> rho = autocorrelation(trace);
  double tau = 1.0;
  for (std::size_t k = 1; k < rho.size() && rho[k] >= 0.0; ++k) tau += 2.0 * rho[k];
  return std::min(static_cast<double>(trace.size()), static_cast<double>(trace.size()) / tau);
}

/// Every k-th value with k chosen so that about `target` values remain.
inline std::vector<double> thin(const std::vector<double>& trace, double target) {
  const std::size_t keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(target)));
  const std::size_t stride = std::max<std::size_t>(1, trace.size() / keep);
  std::vector<double> out;
  for (std::size_t i = 0; i < trace.size(); i += stride) out.push_back(trace[i]);
  return out;
}

/// Silverman's rule: 0.9 min(sd, IQR/1.34) n^(-1/5).
inline double silverman_bandwidth(const std::vector<double>& x) {
  const double sd = detail::sd_of(x);
  const double iqr = detail::quantile(x, 0.75) - detail::quantile(x, 0.25);
  double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  if (!(spread > 0.0)) throw NumericalError("degenerate trace: zero spread");
  return 0.9 * spread * std::pow(static_cast<double>(x.size()), -0.2);
}

struct DensityEstimate {
  std::vector<double> x;
  std::vector<double> y;        ///< empty for 1D
  std::vector<double> density;  ///< 1D: density[i]; 2D: density[j * x.size() + i]
  double bandwidth_x = 0.0;
  double bandwidth_y = 0.0;

  bool two_dimensional() const { return !y.empty(); }

  /// Trapezoidal mass over the grid.
  double mass() const {
    auto weights = [](const std::vector<double>& g) {
      std::vector<double> w(g.size(), 0.0);
      for (std::size_t i = 0; i + 1 < g.size(); ++i) {
        const double h = 0.5 * (g[i + 1] - g[i]);
        w[i] += h;
        w[i + 1] += h;
      }
      return w;
    };
    const auto wx = weights(x);
    if (!two_dimensional()) {
      double m = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) m += wx[i] * density[i];
      return m;
    }
    const auto wy = weights(y);
    double m = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j)
      for (std::size_t i = 0; i < x.size(); ++i) m += wx[i] * wy[j] * density[j * x.size() + i];
    return m;
  }
};

/// `points` equally spaced values covering the data plus three bandwidths.
inline std::vector<double> kde_grid(const std::vector<double>& data, double bandwidth, int points = 256) {
  const auto [lo, hi] = std::minmax_element(data.begin(), data.end());
  const double a = *lo - 3.0 * bandwidth, b = *hi + 3.0 * bandwidth;
  std::vector<double> g(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) g[i] = a + (b - a) * i / (points - 1);
  return g;
}

namespace detail {

inline void normalize(DensityEstimate& d) {
  const double m = d.mass();
  if (!(m > 0.0)) throw NumericalError("density estimate has no mass on its grid");
  for (double& v : d.density) v /= m;
}

inline void require_points(const std::vector<double>& x) {
  if (x.size() < 10) throw ConfigError("density estimate needs at least 10 points");
}

}  // namespace detail

/// Gaussian-kernel density with Silverman bandwidth, normalised on `grid`.
inline DensityEstimate kde_1d(const std::vector<double>& data, std::vector<double> grid = {}) {
  detail::require_points(data);
  const double h = silverman_bandwidth(data);
  if (grid.empty()) grid = kde_grid(data, h);
  DensityEstimate d;
  d.x = std::move(grid);
  d.bandwidth_x = h;
  d.density.assign(d.x.size(), 0.0);
  const double c = 1.0 / (static_cast<double>(data.size()) * h * std::sqrt(2.0 * std::numbers::pi));
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    double s = 0.0;
    for (double v : data) {
      const double z = (d.x[i] - v) / h;
      s += std::exp(-0.5 * z * z);
    }
    d.density[i] = c * s;
  }
  detail::normalize(d);
  return d;
}

/// Product Gaussian kernel, per-axis bandwidth sd * n^(-1/6).
inline DensityEstimate kde_2d(const std::vector<double>& xs, const std::vector<double>& ys,
                              std::vector<double> grid_x = {}, std::vector<double> grid_y = {}, int points = 64) {
  detail::require_points(xs);
  if (xs.size() != ys.size()) throw ConfigError("paired traces differ in length");
  const double factor = std::pow(static_cast<double>(xs.size()), -1.0 / 6.0);
  const double hx = detail::sd_of(xs) * factor, hy = detail::sd_of(ys) * factor;
  if (!(hx > 0.0 && hy > 0.0)) throw NumericalError("degenerate trace: zero spread");
  if (grid_x.empty()) grid_x = kde_grid(xs, hx, points);
  if (grid_y.empty()) grid_y = kde_grid(ys, hy, points);
  DensityEstimate d;
  d.x = std::move(grid_x);
  d.y = std::move(grid_y);
  d.bandwidth_x = hx;
  d.bandwidth_y = hy;
  d.density.assign(d.x.size() * d.y.size(), 0.0);
  std::vector<double> kx(d.x.size()), ky(d.y.size());
  for (std::size_t n = 0; n < xs.size(); ++n) {
    for (std::size_t i = 0; i < d.x.size(); ++i) {
      const double z = (d.x[i] - xs[n]) / hx;
      kx[i] = std::exp(-0.5 * z * z);
    }
    for (std::size_t j = 0; j < d.y.size(); ++j) {
      const double z = (d.y[j] - ys[n]) / hy;
      ky[j] = std::exp(-0.5 * z * z);
    }
    for (std::size_t j = 0; j < d.y.size(); ++j)
      for (std::size_t i = 0; i < d.x.size(); ++i) d.density[j * d.x.size() + i] += kx[i] * ky[j];
  }
  detail::normalize(d);
  return d;
}

inline void write_density_csv(std::ostream& os, const DensityEstimate& d) {
  os << std::setprecision(17);
  os << "# bandwidth " << d.bandwidth_x;
  if (d.two_dimensional()) os << ' ' << d.bandwidth_y;
  os << " (Silverman)\n";
  if (!d.two_dimensional()) {
    os << "x,density\n";
    for (std::size_t i = 0; i < d.x.size(); ++i) os << d.x[i] << ',' << d.density[i] << '\n';
    return;
  }
  os << "x,y,density\n";
  for (std::size_t j = 0; j < d.y.size(); ++j)
    for (std::size_t i = 0; i < d.x.size(); ++i)
      os << d.x[i] << ',' << d.y[j] << ',' << d.density[j * d.x.size() + i] << '\n';
}

/// Labelled rows of a two-column table.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void write_csv(std::ostream& os) const {
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
      os << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
  }

  void write_text(std::ostream& os) const {
    std::vector<std::size_t> width(header.size(), 0);
    auto measure = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) width[i] = std::max(width[i], cells[i].size());
    };
    measure(header);
    for (const auto& r : rows) measure(r);
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) os << "  ";
        if (i == 0) os << std::left;
        else os << std::right;
        os << std::setw(static_cast<int>(width[i])) << cells[i];
      }
      os << std::left << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
  }
};

inline std::string format_number(double v, int precision = 10) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

struct MisfitReport {
  double at_mean_state = 0.0;         ///< Phi(F(E u))
  double at_mean_conductivity = 0.0;  ///< Phi(E F(u))

  Table table() const {
    return {{"quantity", "Phi"},
            {{"F(E u)", format_number(at_mean_state)}, {"E F(u)", format_number(at_mean_conductivity)}}};
  }
};

inline MisfitReport misfit_report(const MeanConductivities& means, Potential& potential) {
  return {potential.misfit(means.of_mean), potential.misfit(Conductivity(means.mean_of))};
}

struct Rgb {
  std::uint8_t r, g, b;
};

/// Two-colour ramp from blue (0,0,255) at t=0 to yellow (255,255,0) at t=1.
inline Rgb blue_yellow(double t) {
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
  const auto c = static_cast<std::uint8_t>(std::lround(255.0 * t));
  return {c, c, static_cast<std::uint8_t>(255 - c)};
}

/// Rasterises per-triangle values on the unit disk into a binary PPM (P6),
/// colour-mapped linearly from [lo, hi]. Pixels outside the mesh are white.
inline void write_ppm(std::ostream& os, const Mesh& mesh, const std::vector<double>& values, double lo, double hi,
                      int size = 256) {
  if (values.size() != mesh.num_triangles()) throw ConfigError("raster values do not match mesh");
  if (!(hi > lo)) hi = lo + 1.0;
  std::vector<Rgb> pixels(static_cast<std::size_t>(size) * size, Rgb{255, 255, 255});
  const double px = 2.0 / size;
  auto to_pixel = [&](double c) { return (c + 1.0) / px - 0.5; };
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tri = mesh.triangles[t];
    const Point a = mesh.nodes[tri[0]], b = mesh.nodes[tri[1]], c = mesh.nodes[tri[2]];
    const int x0 = std::max(0, static_cast<int>(std::floor(to_pixel(std::min({a.x, b.x, c.x})))));
    const int x1 = std::min(size - 1, static_cast<int>(std::ceil(to_pixel(std::max({a.x, b.x, c.x})))));
    const int y0 = std::max(0, static_cast<int>(std::floor(to_pixel(std::min({a.y, b.y, c.y})))));
    const int y1 = std::min(size - 1, static_cast<int>(std::ceil(to_pixel(std::max({a.y, b.y, c.y})))));
    const Rgb colour = blue_yellow((values[t] - lo) / (hi - lo));
    auto edge = [](Point p, Point q, Point r) { return (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x); };
    for (int iy = y0; iy <= y1; ++iy)
      for (int ix = x0; ix <= x1; ++ix) {
        const Point p{-1.0 + (ix + 0.5) * px, -1.0 + (iy + 0.5) * px};
        if (edge(a, b, p) >= 0.0 && edge(b, c, p) >= 0.0 && edge(c, a, p) >= 0.0)
          pixels[static_cast<std::size_t>(size - 1 - iy) * size + ix] = colour;  // row 0 at the top
      }
  }
  os << "P6\n" << size << ' ' << size << "\n255\n";
  for (const Rgb& p : pixels) os.put(static_cast<char>(p.r)).put(static_cast<char>(p.g)).put(static_cast<char>(p.b));
}

}  // namespace eit
