#pragma once

#include <Eigen/Dense>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "eit/error.hpp"
#include "eit/mesh.hpp"

namespace eit {

/// Piecewise-constant conductivity, one value per triangle.
struct Conductivity {
  std::vector<double> values;

  Conductivity() = default;
  explicit Conductivity(std::vector<double> v) : values(std::move(v)) {}
  Conductivity(std::size_t n, double c) : values(n, c) {}

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t t) const { return values[t]; }
  double& operator[](std::size_t t) { return values[t]; }

  friend bool operator==(const Conductivity&, const Conductivity&) = default;

  /// Throws unless every value is finite and strictly positive.
  void check_admissible(const Mesh& mesh) const {
    if (values.size() != mesh.num_triangles())
      throw ConfigError("conductivity has " + std::to_string(values.size()) + " values for " +
                        std::to_string(mesh.num_triangles()) + " triangles");
    for (std::size_t t = 0; t < values.size(); ++t)
      if (!(values[t] > 0.0) || !std::isfinite(values[t]))
        throw ConfigError("inadmissible conductivity " + std::to_string(values[t]) + " on triangle " +
                          std::to_string(t));
  }
};

/// L x J matrix whose columns are current patterns.
struct StimulationMatrix {
  Eigen::MatrixXd currents;

  Eigen::Index electrodes() const { return currents.rows(); }
  Eigen::Index patterns() const { return currents.cols(); }

  void validate() const {
    if (currents.rows() < 2 || currents.cols() < 1) throw ConfigError("empty stimulation matrix");
    if (currents.cols() > currents.rows() - 1) throw ConfigError("at most L-1 stimulation patterns");
    for (Eigen::Index j = 0; j < currents.cols(); ++j) {
      const double scale = currents.col(j).norm();
      if (std::abs(currents.col(j).sum()) > 1e-12 * scale)
        throw ConfigError("stimulation pattern " + std::to_string(j) + " violates charge conservation");
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(currents);
    if (lu.rank() != currents.cols()) throw ConfigError("stimulation patterns are linearly dependent");
  }
};

/// Pattern j drives +amplitude into electrode j and -amplitude out of j+1.
inline StimulationMatrix adjacent_stimulation_patterns(int electrodes, double amplitude) {
  if (electrodes < 2) throw ConfigError("need at least two electrodes");
  StimulationMatrix s{Eigen::MatrixXd::Zero(electrodes, electrodes - 1)};
  for (int j = 0; j < electrodes - 1; ++j) {
    s.currents(j, j) = amplitude;
    s.currents(j + 1, j) = -amplitude;
  }
  return s;
}

struct ForwardSolution {
  Eigen::VectorXd v;  ///< nodal potential
  Eigen::VectorXd V;  ///< electrode voltages, sum zero
};

/// P1 stiffness of triangle t for unit conductivity.
inline Eigen::Matrix3d local_stiffness(const Mesh& mesh, std::size_t t) {
  const auto& tri = mesh.triangles[t];
  const Point p0 = mesh.nodes[tri[0]], p1 = mesh.nodes[tri[1]], p2 = mesh.nodes[tri[2]];
  const double area2 = (p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y);
  // grad(phi_i) = (b_i, c_i) / (2A)
  const std::array<double, 3> b{p1.y - p2.y, p2.y - p0.y, p0.y - p1.y};
  const std::array<double, 3> c{p2.x - p1.x, p0.x - p2.x, p1.x - p0.x};
  Eigen::Matrix3d k;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) k(i, j) = (b[i] * b[j] + c[i] * c[j]) / (2.0 * std::abs(area2));
  return k;
}

namespace detail {

// AMD, except that the first electrode voltage and the grounding multiplier are
// eliminated first. That 2x2 pivot block is nonsingular, and what remains is
// the positive definite operator restricted to grounded states, so the
// unpivoted LDL^T never meets a zero pivot.
template <typename StorageIndex>
struct GroundedOrdering {
  using PermutationType = Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, StorageIndex>;

  template <typename MatrixType>
  void operator()(const MatrixType& mat, PermutationType& perm) {
    using Pattern = Eigen::SparseMatrix<double, Eigen::ColMajor, StorageIndex>;
    Pattern a = mat.template cast<double>();

    const StorageIndex n = static_cast<StorageIndex>(a.rows());
    const StorageIndex last = n - 1;
    StorageIndex first_v = last;
    for (typename Pattern::InnerIterator it(a, last); it; ++it)
      if (it.row() != last) first_v = std::min<StorageIndex>(first_v, static_cast<StorageIndex>(it.row()));

    // Order the rest by AMD on the pattern left after eliminating the pivot
    // pair, i.e. with a clique on the pair's neighbours.
    std::vector<StorageIndex> clique;
    for (StorageIndex c : {first_v, last})
      for (typename Pattern::InnerIterator it(a, c); it; ++it) {
        const auto r = static_cast<StorageIndex>(it.row());
        if (r != first_v && r != last) clique.push_back(r);
      }
    std::sort(clique.begin(), clique.end());
    clique.erase(std::unique(clique.begin(), clique.end()), clique.end());

    std::vector<Eigen::Triplet<double, StorageIndex>> entries;
    for (StorageIndex c = 0; c < n; ++c)
      for (typename Pattern::InnerIterator it(a, c); it; ++it) entries.emplace_back(static_cast<StorageIndex>(it.row()), c, 1.0);
    for (StorageIndex r : clique)
      for (StorageIndex c : clique) entries.emplace_back(r, c, 1.0);
    Pattern reduced(n, n);
    reduced.setFromTriplets(entries.begin(), entries.end());
    reduced.prune([&](StorageIndex r, StorageIndex c, double) {
      return r != first_v && r != last && c != first_v && c != last;
    });
    PermutationType amd;
    Eigen::AMDOrdering<StorageIndex>()(reduced, amd);

    perm.resize(n);
    perm.indices()[0] = first_v;
    perm.indices()[1] = last;
    StorageIndex k = 2;
    for (StorageIndex i = 0; i < n; ++i) {
      const StorageIndex old = amd.indices()[i];
      if (old != first_v && old != last) perm.indices()[k++] = old;
    }
  }
};

}  // namespace detail

/// Assembles and factors the discrete complete-electrode-model system
///
///   [ K(sigma) + M_z   -C_z    0 ] [v]   [0]
///   [ -C_z^T           D_z     1 ] [V] = [I]
///   [ 0                1^T     0 ] [mu]  [0]
///
/// for one mesh and electrode layout. The sparsity pattern and symbolic
/// factorization are computed once; `set_conductivity` refills the values
/// and refactors, after which any number of patterns can be solved (solves
/// are const and may run concurrently).
class ForwardSolver {
public:
  using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

  ForwardSolver(const Mesh& mesh, const ElectrodeLayout& layout)
      : n_nodes_(static_cast<int>(mesh.num_nodes())), n_electrodes_(layout.count), n_triangles_(mesh.num_triangles()) {
    check_layout(mesh, layout);
    const int size = n_nodes_ + n_electrodes_ + 1;

    std::vector<Eigen::Triplet<double>> pattern;
    local_.reserve(n_triangles_);
    for (std::size_t t = 0; t < n_triangles_; ++t) {
      local_.push_back(local_stiffness(mesh, t));
      const auto& tri = mesh.triangles[t];
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) pattern.emplace_back(tri[i], tri[j], 0.0);
    }

    std::vector<Eigen::Triplet<double>> boundary;
    for (const auto& e : mesh.boundary) {
      if (e.electrode < 0) continue;
      const double len = mesh.edge_length(e);
      const double inv_z = 1.0 / layout.contact_impedance[e.electrode];
      const int a = e.nodes[0], b = e.nodes[1];
      const int vl = n_nodes_ + e.electrode;
      boundary.emplace_back(a, a, inv_z * len / 3.0);
      boundary.emplace_back(b, b, inv_z * len / 3.0);
      boundary.emplace_back(a, b, inv_z * len / 6.0);
      boundary.emplace_back(b, a, inv_z * len / 6.0);
      boundary.emplace_back(a, vl, -inv_z * len / 2.0);
      boundary.emplace_back(vl, a, -inv_z * len / 2.0);
      boundary.emplace_back(b, vl, -inv_z * len / 2.0);
      boundary.emplace_back(vl, b, -inv_z * len / 2.0);
      boundary.emplace_back(vl, vl, inv_z * len);
    }
    const int mu = size - 1;
    for (int l = 0; l < n_electrodes_; ++l) {
      boundary.emplace_back(n_nodes_ + l, mu, 1.0);
      boundary.emplace_back(mu, n_nodes_ + l, 1.0);
    }

    std::vector<Eigen::Triplet<double>> all = pattern;
    all.insert(all.end(), boundary.begin(), boundary.end());
    matrix_.resize(size, size);
    matrix_.setFromTriplets(all.begin(), all.end());
    matrix_.makeCompressed();

    // Constant part of the values (boundary terms and grounding row).
    fixed_values_.assign(static_cast<std::size_t>(matrix_.nonZeros()), 0.0);
    for (const auto& tr : boundary) fixed_values_[slot(tr.row(), tr.col())] += tr.value();

    slots_.reserve(9 * n_triangles_);
    for (std::size_t t = 0; t < n_triangles_; ++t) {
      const auto& tri = mesh.triangles[t];
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) slots_.push_back(slot(tri[i], tri[j]));
    }

    ldlt_.analyzePattern(matrix_);
  }

  int num_nodes() const { return n_nodes_; }
  int num_electrodes() const { return n_electrodes_; }

  /// Fills the system for `sigma` and factors it.
  void set_conductivity(const Conductivity& sigma) {
    if (sigma.size() != n_triangles_)
      throw ConfigError("conductivity has " + std::to_string(sigma.size()) + " values for " +
                        std::to_string(n_triangles_) + " triangles");
    double* values = matrix_.valuePtr();
    std::copy(fixed_values_.begin(), fixed_values_.end(), values);
    for (std::size_t t = 0; t < n_triangles_; ++t) {
      const double s = sigma[t];
      if (!(s > 0.0) || !std::isfinite(s))
        throw ConfigError("inadmissible conductivity " + std::to_string(s) + " on triangle " + std::to_string(t));
      const Eigen::Matrix3d& k = local_[t];
      const std::size_t* sl = &slots_[9 * t];
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) values[sl[3 * i + j]] += s * k(i, j);
    }
    ldlt_.factorize(matrix_);
    if (ldlt_.info() != Eigen::Success) throw NumericalError("LDL^T factorization of the electrode system failed");
    factored_ = true;
  }

  /// Solves for one zero-sum current pattern.
  ForwardSolution solve(const Eigen::VectorXd& pattern) const {
    Eigen::MatrixXd x = solve_columns(pattern);
    return {x.col(0).head(n_nodes_), x.col(0).segment(n_nodes_, n_electrodes_)};
  }

  /// Concatenated electrode voltages (V^(1), ..., V^(J)).
  Eigen::VectorXd forward_map(const StimulationMatrix& stim) const {
    const Eigen::MatrixXd x = solve_columns(stim.currents);
    Eigen::VectorXd g(n_electrodes_ * stim.patterns());
    for (Eigen::Index j = 0; j < stim.patterns(); ++j)
      g.segment(j * n_electrodes_, n_electrodes_) = x.col(j).segment(n_nodes_, n_electrodes_);
    return g;
  }

  /// The assembled, grounded system matrix for the current conductivity.
  const SparseMatrix& matrix() const { return matrix_; }

private:
  // Full solution vectors (v, V, multiplier) for each column of `patterns`.
  Eigen::MatrixXd solve_columns(const Eigen::MatrixXd& patterns) const {
    if (!factored_) throw NumericalError("solve called before set_conductivity");
    if (patterns.rows() != n_electrodes_) throw ConfigError("pattern length does not match electrode count");
    for (Eigen::Index j = 0; j < patterns.cols(); ++j)
      if (std::abs(patterns.col(j).sum()) > 1e-12 * patterns.col(j).norm())
        throw ConfigError("current pattern violates charge conservation (sum " +
                          std::to_string(patterns.col(j).sum()) + ")");

    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(matrix_.rows(), patterns.cols());
    rhs.middleRows(n_nodes_, n_electrodes_) = patterns;
    Eigen::MatrixXd x = ldlt_.solve(rhs);
    Eigen::MatrixXd r = rhs - matrix_ * x;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double scale = rhs.col(j).norm();
      if (scale == 0.0) continue;
      if (r.col(j).norm() > 1e-12 * scale) {
        x.col(j) += ldlt_.solve(Eigen::VectorXd(r.col(j)));
        r.col(j) = rhs.col(j) - matrix_ * x.col(j);
      }
      if (!(r.col(j).norm() <= 1e-10 * scale)) {
        std::ostringstream msg;
        msg << "electrode system solve did not converge: relative residual " << r.col(j).norm() / scale;
        throw NumericalError(msg.str());
      }
    }
    return x;
  }

  std::size_t slot(int row, int col) const {
    const int* outer = matrix_.outerIndexPtr();
    const int* inner = matrix_.innerIndexPtr();
    const int* begin = inner + outer[col];
    const int* end = inner + outer[col + 1];
    const int* it = std::lower_bound(begin, end, row);
    return static_cast<std::size_t>(it - inner);
  }

  int n_nodes_;
  int n_electrodes_;
  std::size_t n_triangles_;
  std::vector<Eigen::Matrix3d> local_;
  std::vector<std::size_t> slots_;
  std::vector<double> fixed_values_;
  SparseMatrix matrix_;
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, detail::GroundedOrdering<int>> ldlt_;
  bool factored_ = false;
};

enum class Grounding { none, lagrange };

/// Assembled system over (v, V), with the grounding row and column appended
/// when `grounding == Grounding::lagrange`.
inline Eigen::SparseMatrix<double> assemble_system(const Mesh& mesh, const Conductivity& sigma,
                                                   const ElectrodeLayout& layout,
                                                   Grounding grounding = Grounding::lagrange) {
  sigma.check_admissible(mesh);
  ForwardSolver solver(mesh, layout);
  solver.set_conductivity(sigma);
  Eigen::SparseMatrix<double> a = solver.matrix();
  if (grounding == Grounding::lagrange) return a;
  const Eigen::Index n = a.rows() - 1;
  Eigen::SparseMatrix<double> b = a.topLeftCorner(n, n);
  return b;
}

inline ForwardSolution solve_forward(const Mesh& mesh, const Conductivity& sigma, const ElectrodeLayout& layout,
                                     const Eigen::VectorXd& pattern) {
  sigma.check_admissible(mesh);
  ForwardSolver solver(mesh, layout);
  solver.set_conductivity(sigma);
  return solver.solve(pattern);
}

/// Column l holds the voltages for the zero-sum pattern e_l - 1/L.
inline Eigen::MatrixXd resistivity_matrix(const ForwardSolver& solver) {
  const int L = solver.num_electrodes();
  Eigen::MatrixXd r(L, L);
  for (int l = 0; l < L; ++l) {
    Eigen::VectorXd p = Eigen::VectorXd::Constant(L, -1.0 / L);
    p[l] += 1.0;
    r.col(l) = solver.solve(p).V;
  }
  return r;
}

inline Eigen::MatrixXd resistivity_matrix(const Mesh& mesh, const Conductivity& sigma, const ElectrodeLayout& layout) {
  sigma.check_admissible(mesh);
  ForwardSolver solver(mesh, layout);
  solver.set_conductivity(sigma);
  return resistivity_matrix(solver);
}

inline Eigen::VectorXd forward_map(const Mesh& mesh, const Conductivity& sigma, const ElectrodeLayout& layout,
                                   const StimulationMatrix& stim) {
  stim.validate();
  if (stim.electrodes() != layout.count) throw ConfigError("stimulation matrix rows must equal electrode count");
  sigma.check_admissible(mesh);
  ForwardSolver solver(mesh, layout);
  solver.set_conductivity(sigma);
  return solver.forward_map(stim);
}

/// The norm ||(v,V)||_*^2 = |grad v|^2 + sum_l int_{e_l} |v - V_l|^2, which
/// is equivalent to the quotient norm on solutions.
inline double star_norm(const Mesh& mesh, const ElectrodeLayout& layout, const ForwardSolution& sol) {
  ElectrodeLayout unit = layout;
  std::fill(unit.contact_impedance.begin(), unit.contact_impedance.end(), 1.0);
  const auto a = assemble_system(mesh, Conductivity(mesh.num_triangles(), 1.0), unit, Grounding::none);
  Eigen::VectorXd x(sol.v.size() + sol.V.size());
  x << sol.v, sol.V;
  return std::sqrt(std::max(0.0, x.dot(a * x)));
}

// CSV helpers for data vectors and resistivity matrices (17 significant digits).

inline void write_csv(std::ostream& os, const Eigen::MatrixXd& m) {
  os << std::setprecision(17);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << m(i, j);
    os << '\n';
  }
}

inline Eigen::MatrixXd read_csv(std::istream& is) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \r", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ParseError("bad number '" + cell + "'", lineno, "csv");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) throw ParseError("ragged row", lineno, "csv");
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

inline void save_csv(const std::string& path, const Eigen::MatrixXd& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  write_csv(os, m);
}

inline Eigen::MatrixXd load_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path);
  return read_csv(is);
}

}  // namespace eit
