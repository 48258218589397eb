#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "eit/diagnostics.hpp"
#include "eit/random.hpp"

using namespace eit;

namespace {

std::vector<double> normals(std::size_t n, std::uint64_t seed) {
  Rng rng = substream(seed, 0, 0);
  std::vector<double> x(n);
  for (double& v : x) v = standard_normal(rng);
  return x;
}

std::vector<double> ar1(std::size_t n, double rho, std::uint64_t seed) {
  const auto e = normals(n, seed);
  std::vector<double> x(n);
  x[0] = e[0] / std::sqrt(1.0 - rho * rho);
  for (std::size_t i = 1; i < n; ++i) x[i] = rho * x[i - 1] + e[i];
  return x;
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

TEST(Autocorrelation, MatchesTheDirectBiasedEstimator) {
  const auto x = ar1(300, 0.7, 1);
  const auto rho = autocorrelation(x);
  double m = 0.0;
  for (double v : x) m += v;
  m /= x.size();
  auto c = [&](std::size_t k) {
    double s = 0.0;
    for (std::size_t i = 0; i + k < x.size(); ++i) s += (x[i] - m) * (x[i + k] - m);
    return s / x.size();
  };
  const double c0 = c(0);
  for (std::size_t k : {0, 1, 2, 5, 50, 299}) EXPECT_NEAR(rho[k], c(k) / c0, 1e-12) << "lag " << k;
}

TEST(Ess, IidTraceIsAboutItsLength) {
  for (std::uint64_t seed : {2, 3, 4}) {
    const double e = ess(normals(10000, seed));
    EXPECT_GE(e, 0.85 * 10000);
    EXPECT_LE(e, 10000.0);
  }
}

TEST(Ess, Ar1MatchesTheIntegratedAutocorrelation) {
  const std::size_t n = 100000;
  const double e = ess(ar1(n, 0.9, 5));
  EXPECT_NEAR(e / (n / 19.0), 1.0, 0.15);
}

TEST(Ess, DuplicatingValuesHalvesItPerSample) {
  const auto x = ar1(20000, 0.5, 6);
  std::vector<double> twice;
  for (double v : x) twice.insert(twice.end(), {v, v});
  const double per_sample = ess(x) / x.size(), per_sample_twice = ess(twice) / twice.size();
  EXPECT_NEAR(per_sample_twice / per_sample, 0.5, 0.1);
  EXPECT_LE(ess(twice), static_cast<double>(twice.size()));
}

TEST(Ess, DegenerateInputs) {
  EXPECT_THROW(ess(std::vector<double>(500, 2.0)), NumericalError);
  EXPECT_THROW(ess(normals(99, 1)), ConfigError);
  auto x = normals(200, 1);
  x[7] = std::nan("");
  EXPECT_THROW(ess(x), NumericalError);
}

TEST(Thin, KeepsAboutTheTarget) {
  std::vector<double> x(1000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  const auto t = thin(x, 100);
  EXPECT_EQ(t.size(), 100u);
  EXPECT_EQ(t[1], 10.0);
  EXPECT_EQ(thin(x, 5000).size(), 1000u);
}

TEST(Kde, StandardNormalPeak) {
  const auto d = kde_1d(normals(100000, 7));
  const double peak = *std::max_element(d.density.begin(), d.density.end());
  EXPECT_NEAR(peak * std::sqrt(2.0 * std::numbers::pi), 1.0, 0.05);
  EXPECT_NEAR(d.mass(), 1.0, 0.01);
  EXPECT_NEAR(d.bandwidth_x, silverman_bandwidth(normals(100000, 7)), 1e-15);
}

TEST(Kde, ShiftMovesTheArgmax) {
  const auto x = normals(2000, 8);
  std::vector<double> shifted = x;
  for (double& v : shifted) v += 3.0;
  std::vector<double> grid(401), grid_shifted(401);
  for (int i = 0; i <= 400; ++i) {
    grid[i] = -5.0 + 0.025 * i;
    grid_shifted[i] = grid[i] + 3.0;
  }
  const auto a = kde_1d(x, grid), b = kde_1d(shifted, grid_shifted);
  EXPECT_EQ(argmax(a.density), argmax(b.density));
  EXPECT_NEAR(b.x[argmax(b.density)] - a.x[argmax(a.density)], 3.0, 1e-12);
}

TEST(Kde, ProductOfIndependentMarginals) {
  const auto xs = normals(20000, 9), ys = normals(20000, 10);
  std::vector<double> scaled = ys;
  for (double& v : scaled) v = 0.5 * v + 1.0;
  std::vector<double> gx(41), gy(41);
  for (int i = 0; i <= 40; ++i) {
    gx[i] = -4.0 + 0.2 * i;
    gy[i] = -1.0 + 0.1 * i;
  }
  const auto joint = kde_2d(xs, scaled, gx, gy);
  EXPECT_NEAR(joint.mass(), 1.0, 0.01);
  // compare against the product of 1D estimates with the same per-axis bandwidths
  auto marginal = [](const std::vector<double>& data, const std::vector<double>& grid) {
    double m = 0.0, ss = 0.0;
    for (double v : data) m += v;
    m /= data.size();
    for (double v : data) ss += (v - m) * (v - m);
    const double h = std::sqrt(ss / (data.size() - 1)) * std::pow(static_cast<double>(data.size()), -1.0 / 6.0);
    std::vector<double> d(grid.size(), 0.0);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      for (double v : data) d[i] += std::exp(-0.5 * std::pow((grid[i] - v) / h, 2));
      d[i] /= data.size() * h * std::sqrt(2.0 * std::numbers::pi);
    }
    return d;
  };
  const auto px = marginal(xs, gx), py = marginal(scaled, gy);
  double peak = 0.0, worst = 0.0;
  for (std::size_t j = 0; j < gy.size(); ++j)
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double prod = px[i] * py[j];
      peak = std::max(peak, prod);
      if (std::abs(gx[i]) <= 2.0 && std::abs(gy[j] - 1.0) <= 1.0)
        worst = std::max(worst, std::abs(joint.density[j * gx.size() + i] - prod));
    }
  EXPECT_LT(worst / peak, 0.1);
}

TEST(Kde, NeedsTenDistinctPoints) {
  EXPECT_THROW(kde_1d(normals(9, 1)), ConfigError);
  EXPECT_THROW(kde_1d(std::vector<double>(50, 1.0)), NumericalError);
  EXPECT_THROW(kde_2d(normals(20, 1), normals(21, 2)), ConfigError);
}

TEST(Kde, CsvLayout) {
  const auto d1 = kde_1d(normals(100, 3));
  std::stringstream s1;
  write_density_csv(s1, d1);
  std::string header;
  std::getline(s1, header);
  EXPECT_EQ(header.substr(0, 1), "#");
  const auto d2 = kde_2d(normals(100, 3), normals(100, 4), {}, {}, 16);
  EXPECT_EQ(d2.density.size(), 256u);
  EXPECT_NEAR(d2.mass(), 1.0, 0.01);
}

TEST(Tables, TextAndCsv) {
  const Table t{{"quantity", "Phi"}, {{"a", "1.5"}, {"longer name", "22"}}};
  std::stringstream csv, text;
  t.write_csv(csv);
  t.write_text(text);
  EXPECT_EQ(csv.str(), "quantity,Phi\na,1.5\nlonger name,22\n");
  EXPECT_EQ(text.str(), "quantity     Phi\na            1.5\nlonger name   22\n");
  const MisfitReport r{3.0, 2.0};
  EXPECT_EQ(r.table().rows.size(), 2u);
}

TEST(Ramp, EndpointsAndClamping) {
  const Rgb lo = blue_yellow(0.0), hi = blue_yellow(1.0), mid = blue_yellow(0.5);
  EXPECT_EQ((std::array<int, 3>{lo.r, lo.g, lo.b}), (std::array<int, 3>{0, 0, 255}));
  EXPECT_EQ((std::array<int, 3>{hi.r, hi.g, hi.b}), (std::array<int, 3>{255, 255, 0}));
  EXPECT_EQ(mid.r, 128);
  EXPECT_EQ(blue_yellow(-3.0).b, 255);
  EXPECT_EQ(blue_yellow(7.0).r, 255);
}

TEST(Raster, DiskIsColouredAndCornersAreWhite) {
  const Mesh m = build_disk_mesh(1, ElectrodeLayout::uniform(16, 0.5, 0.01));
  std::vector<double> v(m.num_triangles());
  for (std::size_t t = 0; t < v.size(); ++t) v[t] = m.centroid(t).x > 0 ? 2.0 : 1.0;
  std::stringstream s;
  write_ppm(s, m, v, 1.0, 2.0, 64);
  const std::string bytes = s.str();
  const std::string header = "P6\n64 64\n255\n";
  ASSERT_EQ(bytes.substr(0, header.size()), header);
  ASSERT_EQ(bytes.size(), header.size() + 64 * 64 * 3);
  auto pixel = [&](int row, int col) {
    const std::size_t o = header.size() + 3 * (static_cast<std::size_t>(row) * 64 + col);
    return std::array<int, 3>{static_cast<unsigned char>(bytes[o]), static_cast<unsigned char>(bytes[o + 1]),
                              static_cast<unsigned char>(bytes[o + 2])};
  };
  EXPECT_EQ(pixel(0, 0), (std::array<int, 3>{255, 255, 255}));
  EXPECT_EQ(pixel(32, 10), (std::array<int, 3>{0, 0, 255}));
  EXPECT_EQ(pixel(32, 54), (std::array<int, 3>{255, 255, 0}));
  EXPECT_THROW(write_ppm(s, m, std::vector<double>(3, 1.0), 1.0, 2.0), ConfigError);
}

TEST(MisfitReport, PureNonNegativeAndAboveTheDiscretisationFloor) {
  const ElectrodeLayout lay = ElectrodeLayout::uniform(16, 0.5, 0.01);
  const Mesh fine = build_disk_mesh(2, lay), coarse = build_disk_mesh(1, lay);
  auto inside = [](Point p) { return norm(p - Point{-0.2, 0.25}) < 0.35; };
  Conductivity truth(fine.num_triangles(), 1.0), on_coarse(coarse.num_triangles(), 1.0);
  for (std::size_t t = 0; t < fine.num_triangles(); ++t)
    if (inside(fine.centroid(t))) truth[t] = 2.0;
  for (std::size_t t = 0; t < coarse.num_triangles(); ++t)
    if (inside(coarse.centroid(t))) on_coarse[t] = 2.0;
  Rng rng = substream(1, 0, 0);
  const auto stim = adjacent_stimulation_patterns(16, 0.1);
  DataSet data = generate_data(truth, fine, lay, stim, 0.0, rng).data;
  data.gamma = 2e-4;
  Potential pot(coarse, lay, data, PriorConfig::level_set_reference(16));
  // a one-state chain sitting at the truth
  const MeanConductivities means{on_coarse, on_coarse.values};
  const MisfitReport a = misfit_report(means, pot), b = misfit_report(means, pot);
  EXPECT_EQ(a.at_mean_state, b.at_mean_state);
  EXPECT_EQ(a.at_mean_state, a.at_mean_conductivity);
  EXPECT_GT(a.at_mean_state, 0.0);
  // far below the misfit of a uniform guess
  EXPECT_LT(a.at_mean_state, 0.1 * pot.misfit(Conductivity(coarse.num_triangles(), 1.5)));
}
