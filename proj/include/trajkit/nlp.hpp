#pragma once

// Canonical constrained program
//
//   minimize J(z)   subject to   l <= [ z ; c(z) ; A z ] <= u
//
// together with sparse finite-difference derivatives and a deterministic
// augmented-Lagrangian solver. Everything here is problem-agnostic plumbing;
// transcription modules produce NlpProblem values and hand them over.

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "trajkit/packing.hpp"

namespace trajkit {

using ScalarFn = std::function<double(const Eigen::VectorXd&)>;
using VectorFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct SparsityPattern {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> entries;  // (row, col)

  void add(Eigen::Index row, Eigen::Index col) { entries.emplace_back(row, col); }

  void sort_unique() {
    std::sort(entries.begin(), entries.end());
    entries.erase(std::unique(entries.begin(), entries.end()), entries.end());
  }

  // Row indices touched by each column.
  std::vector<std::vector<Eigen::Index>> rows_by_col() const {
    std::vector<std::vector<Eigen::Index>> by_col(static_cast<std::size_t>(cols));
    for (const auto& [r, c] : entries) by_col[static_cast<std::size_t>(c)].push_back(r);
    return by_col;
  }

  std::vector<std::vector<Eigen::Index>> cols_by_row() const {
    std::vector<std::vector<Eigen::Index>> by_row(static_cast<std::size_t>(rows));
    for (const auto& [r, c] : entries) by_row[static_cast<std::size_t>(r)].push_back(c);
    return by_row;
  }
};

struct NlpProblem {
  Layout layout;  // names the decision vector

  Eigen::Index n_vars = 0;
  Eigen::VectorXd var_lower, var_upper;

  ScalarFn objective;

  VectorFn constraints;  // may be empty when n_constraints == 0
  Eigen::Index n_constraints = 0;
  Eigen::VectorXd con_lower, con_upper;
  SparsityPattern sparsity;  // of the nonlinear constraint function

  Eigen::SparseMatrix<double> linear_rows;  // 0 x n when absent
  Eigen::VectorXd lin_lower, lin_upper;

  // Optional sum structure: objective(z) == objective_terms(z).sum(). Lets
  // the solver difference the objective with the same column grouping trick
  // as the constraint Jacobian.
  VectorFn objective_terms;
  Eigen::Index n_objective_terms = 0;
  SparsityPattern term_sparsity;
};

// ---------------------------------------------------------------------------
// Finite differences

inline double default_fd_step() { return std::cbrt(std::numeric_limits<double>::epsilon()); }

// Central-difference gradient with per-coordinate step
// h_i = step_scale * max(1, |z_i|).
inline Eigen::VectorXd fd_gradient(const ScalarFn& f, const Eigen::VectorXd& z,
                                   double step_scale = default_fd_step()) {
  Eigen::VectorXd g(z.size());
  Eigen::VectorXd zp = z;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double h = step_scale * std::max(1.0, std::abs(z[i]));
    const double zi = z[i];
    zp[i] = zi + h;
    const double fp = f(zp);
    zp[i] = zi - h;
    const double fm = f(zp);
    zp[i] = zi;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::runtime_error("fd_gradient: non-finite evaluation around coordinate " +
                               std::to_string(i));
    }
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Greedy sequential coloring: columns sharing a constraint row never land in
// the same group, so one group can be perturbed simultaneously. Columns with
// no pattern entries are left out entirely.
inline std::vector<std::vector<Eigen::Index>> color_columns(const SparsityPattern& pattern) {
  const auto by_col = pattern.rows_by_col();
  std::vector<std::vector<Eigen::Index>> groups;
  std::vector<std::vector<bool>> group_rows;  // rows already hit per group
  for (Eigen::Index c = 0; c < pattern.cols; ++c) {
    const auto& rows = by_col[static_cast<std::size_t>(c)];
    if (rows.empty()) continue;
    std::size_t g = 0;
    for (; g < groups.size(); ++g) {
      bool clash = false;
      for (const Eigen::Index r : rows) {
        if (group_rows[g][static_cast<std::size_t>(r)]) {
          clash = true;
          break;
        }
      }
      if (!clash) break;
    }
    if (g == groups.size()) {
      groups.emplace_back();
      group_rows.emplace_back(static_cast<std::size_t>(pattern.rows), false);
    }
    groups[g].push_back(c);
    for (const Eigen::Index r : rows) group_rows[g][static_cast<std::size_t>(r)] = true;
  }
  return groups;
}

// Central-difference Jacobian restricted to the given pattern. Each color
// group costs two evaluations of c regardless of how many columns it holds.
// With threads > 1 the groups are evaluated concurrently; every group writes
// a disjoint set of entries, so the result does not depend on scheduling.
inline Eigen::SparseMatrix<double> fd_jacobian(const VectorFn& c, const Eigen::VectorXd& z,
                                               const SparsityPattern& pattern,
                                               double step_scale = default_fd_step(),
                                               int threads = 1) {
  const auto by_col = pattern.rows_by_col();
  const auto groups = color_columns(pattern);

  std::vector<Eigen::Triplet<double>> triplets(pattern.entries.size());
  std::vector<std::size_t> triplet_offset;  // per group, into `triplets`
  triplet_offset.reserve(groups.size());
  {
    std::size_t at = 0;
    for (const auto& group : groups) {
      triplet_offset.push_back(at);
      for (const Eigen::Index col : group) at += by_col[static_cast<std::size_t>(col)].size();
    }
  }

  const auto run_group = [&](std::size_t gi) {
    const auto& group = groups[gi];
    Eigen::VectorXd zp = z;
    Eigen::VectorXd zm = z;
    for (const Eigen::Index col : group) {
      const double h = step_scale * std::max(1.0, std::abs(z[col]));
      zp[col] = z[col] + h;
      zm[col] = z[col] - h;
    }
    const Eigen::VectorXd cp = c(zp);
    const Eigen::VectorXd cm = c(zm);
    if (!cp.allFinite() || !cm.allFinite()) {
      throw std::runtime_error("fd_jacobian: non-finite constraint evaluation in color group " +
                               std::to_string(gi));
    }
    std::size_t at = triplet_offset[gi];
    for (const Eigen::Index col : group) {
      const double h = step_scale * std::max(1.0, std::abs(z[col]));
      for (const Eigen::Index row : by_col[static_cast<std::size_t>(col)]) {
        triplets[at++] = {static_cast<int>(row), static_cast<int>(col),
                          (cp[row] - cm[row]) / (2.0 * h)};
      }
    }
  };

  if (threads <= 1 || groups.size() <= 1) {
    for (std::size_t gi = 0; gi < groups.size(); ++gi) run_group(gi);
  } else {
    const std::size_t n_workers = std::min<std::size_t>(threads, groups.size());
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(n_workers);
    pool.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t gi = w; gi < groups.size(); gi += n_workers) run_group(gi);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  Eigen::SparseMatrix<double> jac(pattern.rows, pattern.cols);
  jac.setFromTriplets(triplets.begin(), triplets.end());
  return jac;
}

// ---------------------------------------------------------------------------
// Incremental NLP assembly

class NlpBuilder {
 public:
  // Adds a named block of decision variables with per-entry bounds.
  Layout::Span add_var(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                       const Eigen::MatrixXd& lower, const Eigen::MatrixXd& upper) {
    if (lower.rows() != rows || lower.cols() != cols || upper.rows() != rows ||
        upper.cols() != cols) {
      throw std::invalid_argument("nlp builder: bound shape mismatch for variable '" + name + "'");
    }
    fields_.push_back({name, rows, cols});
    const Eigen::Index offset = n_vars_;
    n_vars_ += rows * cols;
    var_lower_.conservativeResize(n_vars_);
    var_upper_.conservativeResize(n_vars_);
    var_lower_.tail(rows * cols) = Eigen::Map<const Eigen::VectorXd>(lower.data(), rows * cols);
    var_upper_.tail(rows * cols) = Eigen::Map<const Eigen::VectorXd>(upper.data(), rows * cols);
    return {offset, rows * cols};
  }

  Layout::Span add_var(const std::string& name, Eigen::Index rows, Eigen::Index cols, double lower,
                       double upper) {
    return add_var(name, rows, cols, Eigen::MatrixXd::Constant(rows, cols, lower),
                   Eigen::MatrixXd::Constant(rows, cols, upper));
  }

  void set_var_bounds(Eigen::Index index, double lower, double upper) {
    var_lower_[index] = lower;
    var_upper_[index] = upper;
  }

  Eigen::Index n_vars() const { return n_vars_; }
  Eigen::Index n_nonlinear_rows() const { return n_rows_; }

  void add_linear_row(const std::vector<std::pair<Eigen::Index, double>>& coeffs, double lower,
                      double upper) {
    for (const auto& [col, value] : coeffs) {
      lin_triplets_.emplace_back(static_cast<int>(n_lin_rows_), static_cast<int>(col), value);
    }
    lin_lower_.push_back(lower);
    lin_upper_.push_back(upper);
    ++n_lin_rows_;
  }

  // Appends a block of nonlinear constraint rows. `row_deps` lists, per row,
  // the decision-variable indices that can influence it.
  Eigen::Index add_block(VectorFn fn, Eigen::VectorXd lower, Eigen::VectorXd upper,
                         std::vector<std::vector<Eigen::Index>> row_deps, bool is_defect = false) {
    const Eigen::Index n = lower.size();
    if (upper.size() != n || static_cast<Eigen::Index>(row_deps.size()) != n) {
      throw std::invalid_argument("nlp builder: block sizes inconsistent");
    }
    const Eigen::Index first_row = n_rows_;
    blocks_.push_back({std::move(fn), n});
    for (Eigen::Index r = 0; r < n; ++r) {
      for (const Eigen::Index col : row_deps[static_cast<std::size_t>(r)]) {
        pattern_.add(first_row + r, col);
      }
      if (is_defect) defect_rows_.push_back(first_row + r);
    }
    con_lower_.conservativeResize(n_rows_ + n);
    con_upper_.conservativeResize(n_rows_ + n);
    con_lower_.tail(n) = lower;
    con_upper_.tail(n) = upper;
    n_rows_ += n;
    return first_row;
  }

  void add_objective_term(ScalarFn fn, std::vector<Eigen::Index> deps) {
    terms_.push_back(std::move(fn));
    for (const Eigen::Index col : deps) {
      term_pattern_.add(static_cast<Eigen::Index>(terms_.size()) - 1, col);
    }
  }

  const std::vector<Eigen::Index>& defect_rows() const { return defect_rows_; }

  NlpProblem build() {
    NlpProblem nlp;
    nlp.layout = Layout::build(fields_);
    nlp.n_vars = n_vars_;
    nlp.var_lower = var_lower_;
    nlp.var_upper = var_upper_;

    nlp.n_constraints = n_rows_;
    nlp.con_lower = con_lower_;
    nlp.con_upper = con_upper_;
    if (n_rows_ > 0) {
      nlp.constraints = [blocks = blocks_, total = n_rows_](const Eigen::VectorXd& z) {
        Eigen::VectorXd out(total);
        Eigen::Index at = 0;
        for (const auto& block : blocks) {
          out.segment(at, block.rows) = block.fn(z);
          at += block.rows;
        }
        return out;
      };
    }
    nlp.sparsity = pattern_;
    nlp.sparsity.rows = n_rows_;
    nlp.sparsity.cols = n_vars_;
    nlp.sparsity.sort_unique();

    nlp.linear_rows.resize(n_lin_rows_, n_vars_);
    nlp.linear_rows.setFromTriplets(lin_triplets_.begin(), lin_triplets_.end());
    nlp.lin_lower.resize(n_lin_rows_);
    nlp.lin_upper.resize(n_lin_rows_);
    for (Eigen::Index i = 0; i < n_lin_rows_; ++i) {
      nlp.lin_lower[i] = lin_lower_[static_cast<std::size_t>(i)];
      nlp.lin_upper[i] = lin_upper_[static_cast<std::size_t>(i)];
    }

    nlp.n_objective_terms = static_cast<Eigen::Index>(terms_.size());
    nlp.objective = [terms = terms_](const Eigen::VectorXd& z) {
      double total = 0.0;
      for (const auto& term : terms) total += term(z);
      return total;
    };
    nlp.objective_terms = [terms = terms_](const Eigen::VectorXd& z) {
      Eigen::VectorXd out(static_cast<Eigen::Index>(terms.size()));
      for (std::size_t i = 0; i < terms.size(); ++i) out[static_cast<Eigen::Index>(i)] = terms[i](z);
      return out;
    };
    nlp.term_sparsity = term_pattern_;
    nlp.term_sparsity.rows = nlp.n_objective_terms;
    nlp.term_sparsity.cols = n_vars_;
    nlp.term_sparsity.sort_unique();
    return nlp;
  }

 private:
  struct Block {
    VectorFn fn;
    Eigen::Index rows;
  };

  std::vector<FieldSpec> fields_;
  Eigen::Index n_vars_ = 0;
  Eigen::VectorXd var_lower_, var_upper_;

  std::vector<Block> blocks_;
  Eigen::Index n_rows_ = 0;
  Eigen::VectorXd con_lower_, con_upper_;
  SparsityPattern pattern_;
  std::vector<Eigen::Index> defect_rows_;

  std::vector<Eigen::Triplet<double>> lin_triplets_;
  std::vector<double> lin_lower_, lin_upper_;
  Eigen::Index n_lin_rows_ = 0;

  std::vector<ScalarFn> terms_;
  SparsityPattern term_pattern_;
};

// ---------------------------------------------------------------------------
// Augmented-Lagrangian solver

enum class SolveStatus { Optimal, FeasibleStalled, Infeasible, IterationLimit };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::FeasibleStalled: return "feasible_stalled";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::IterationLimit: return "iteration_limit";
  }
  return "unknown";
}

struct SolveOptions {
  double feas_tol = 1e-6;
  double opt_tol = 1e-6;
  int max_outer = 50;
  int max_inner = 500;
  double penalty_init = 10.0;
  double penalty_growth = 10.0;
  double fd_step_scale = default_fd_step();
  std::uint64_t seed = 0;  // carried through for guess construction; the solver itself is
                           // deterministic and draws no random numbers
  int threads = 1;
  bool verbose = false;
};

struct SolveReport {
  SolveStatus status = SolveStatus::IterationLimit;
  int outer_iters = 0;
  int inner_iters = 0;
  double objective = std::numeric_limits<double>::quiet_NaN();
  double max_violation = std::numeric_limits<double>::quiet_NaN();
  double kkt_residual = std::numeric_limits<double>::quiet_NaN();  // projected AL gradient
  std::vector<std::pair<double, double>> history;                  // per outer: (objective, violation)
};

struct SolveResult {
  Eigen::VectorXd z;
  SolveReport report;
};

namespace detail {

class AugLagSolver {
 public:
  AugLagSolver(const NlpProblem& nlp, const SolveOptions& opts) : nlp_(nlp), opts_(opts) {
    m_nl_ = nlp.n_constraints;
    m_lin_ = nlp.linear_rows.rows();
    m_ = m_nl_ + m_lin_;
    c_lower_.resize(m_);
    c_upper_.resize(m_);
    if (m_nl_ > 0) {
      c_lower_.head(m_nl_) = nlp.con_lower;
      c_upper_.head(m_nl_) = nlp.con_upper;
    }
    if (m_lin_ > 0) {
      c_lower_.tail(m_lin_) = nlp.lin_lower;
      c_upper_.tail(m_lin_) = nlp.lin_upper;
    }
    is_equality_.resize(static_cast<std::size_t>(m_));
    for (Eigen::Index i = 0; i < m_; ++i) {
      is_equality_[static_cast<std::size_t>(i)] = c_lower_[i] == c_upper_[i];
    }
    lam_eq_ = Eigen::VectorXd::Zero(m_);
    lam_lo_ = Eigen::VectorXd::Zero(m_);
    lam_hi_ = Eigen::VectorXd::Zero(m_);

    use_terms_ = nlp.objective_terms && nlp.n_objective_terms > 0;
    stacked_pattern_.rows = m_nl_ + (use_terms_ ? nlp.n_objective_terms : 0);
    stacked_pattern_.cols = nlp.n_vars;
    stacked_pattern_.entries = nlp.sparsity.entries;
    if (use_terms_) {
      for (const auto& [r, c] : nlp.term_sparsity.entries) {
        stacked_pattern_.entries.emplace_back(m_nl_ + r, c);
      }
    }
    stacked_pattern_.sort_unique();
  }

  SolveResult run(Eigen::VectorXd z0) {
    if (z0.size() != nlp_.n_vars) {
      throw std::invalid_argument("solve: start point has length " + std::to_string(z0.size()) +
                                  ", expected " + std::to_string(nlp_.n_vars));
    }
    Eigen::VectorXd z = project(z0);
    if (!std::isfinite(nlp_.objective(z))) {
      throw std::runtime_error("solve: objective is non-finite at the start point");
    }

    SolveReport report;
    mu_ = opts_.penalty_init;
    double omega = std::max(1e-2, opts_.opt_tol);  // relative inner stationarity target
    double eta = std::max(1e-1, opts_.feas_tol);   // feasibility gate
    if (m_ == 0) omega = opts_.opt_tol;
    double last_objective = nlp_.objective(z);

    double best_violation = std::numeric_limits<double>::infinity();
    int stagnant = 0;

    for (int outer = 0; outer < opts_.max_outer; ++outer) {
      ++report.outer_iters;
      // Gradient magnitudes grow with the objective and the multipliers, so
      // the stationarity test is applied on that scale.
      const double kkt_scale = 1.0 + std::abs(last_objective) + multiplier_norm();
      const InnerResult inner = minimize_inner(z, std::max(omega, opts_.opt_tol) * kkt_scale);
      report.inner_iters += inner.iters;
      z = inner.z;

      const Eigen::VectorXd c = eval_constraints(z);
      const double violation = max_violation(c);
      const double objective = nlp_.objective(z);
      last_objective = objective;
      report.history.emplace_back(objective, violation);
      report.objective = objective;
      report.max_violation = violation;
      report.kkt_residual = inner.pg_norm;

      if (opts_.verbose) {
        std::fprintf(stderr, "  outer %3d  J=%+.8e  viol=%.3e  pg=%.3e  mu=%.1e  inner=%d\n",
                     outer + 1, objective, violation, inner.pg_norm, mu_, inner.iters);
      }

      const bool stationary =
          inner.pg_norm <= opts_.opt_tol * kkt_scale || inner.at_noise_floor;
      if (violation <= opts_.feas_tol && stationary && omega <= opts_.opt_tol) {
        report.status = SolveStatus::Optimal;
        return {z, report};
      }

      if (inner.line_search_failed) {
        // The inner model cannot make progress; report honestly rather than
        // looping on a dead penalty surface.
        if (violation <= opts_.feas_tol || ++line_search_failures_ >= 3) {
          report.status = SolveStatus::FeasibleStalled;
          return {z, report};
        }
        mu_ *= opts_.penalty_growth;
        continue;
      }

      if (m_ == 0) {
        // Unconstrained: the inner solve either hit the tolerance or the
        // iteration cap.
        if (stationary) {
          report.status = SolveStatus::Optimal;
          return {z, report};
        }
        continue;
      }

      if (violation <= std::max(eta, opts_.feas_tol)) {
        update_multipliers(c);
        omega = std::max(0.2 * omega, opts_.opt_tol);
        eta = std::max(0.2 * eta, 0.1 * opts_.feas_tol);
      } else {
        mu_ *= opts_.penalty_growth;
        omega = std::max(0.5 * omega, opts_.opt_tol);
        if (violation < 0.9 * best_violation) {
          stagnant = 0;
        } else {
          ++stagnant;
        }
        if (mu_ > 1e12 && stagnant >= 3) {
          report.status = SolveStatus::Infeasible;
          return {z, report};
        }
      }
      best_violation = std::min(best_violation, violation);
    }
    report.status = SolveStatus::IterationLimit;
    return {z, report};
  }

  double multiplier_norm() const {
    double m = 0.0;
    if (m_ > 0) {
      m = std::max({lam_eq_.lpNorm<Eigen::Infinity>(), lam_lo_.lpNorm<Eigen::Infinity>(),
                    lam_hi_.lpNorm<Eigen::Infinity>()});
    }
    return m;
  }

 private:
  struct InnerResult {
    Eigen::VectorXd z;
    int iters = 0;
    double pg_norm = 0.0;
    bool line_search_failed = false;
    bool at_noise_floor = false;  // no resolvable descent left at this precision
  };

  Eigen::VectorXd project(const Eigen::VectorXd& z) const {
    return z.cwiseMax(nlp_.var_lower).cwiseMin(nlp_.var_upper);
  }

  Eigen::VectorXd eval_constraints(const Eigen::VectorXd& z) const {
    Eigen::VectorXd c(m_);
    if (m_nl_ > 0) c.head(m_nl_) = nlp_.constraints(z);
    if (m_lin_ > 0) c.tail(m_lin_) = nlp_.linear_rows * z;
    return c;
  }

  double max_violation(const Eigen::VectorXd& c) const {
    double v = 0.0;
    for (Eigen::Index i = 0; i < m_; ++i) {
      v = std::max(v, std::max(c_lower_[i] - c[i], c[i] - c_upper_[i]));
    }
    return v;
  }

  // Augmented-Lagrangian penalty for one row value, plus its derivative
  // with respect to the row value.
  double row_penalty(Eigen::Index i, double ci, double* dpsi) const {
    if (is_equality_[static_cast<std::size_t>(i)]) {
      const double r = ci - c_lower_[i];
      *dpsi = lam_eq_[i] + mu_ * r;
      return lam_eq_[i] * r + 0.5 * mu_ * r * r;
    }
    double value = 0.0;
    double d = 0.0;
    if (std::isfinite(c_lower_[i])) {
      const double g = c_lower_[i] - ci;  // feasible when <= 0
      const double t = std::max(0.0, lam_lo_[i] + mu_ * g);
      value += (t * t - lam_lo_[i] * lam_lo_[i]) / (2.0 * mu_);
      d -= t;
    }
    if (std::isfinite(c_upper_[i])) {
      const double g = ci - c_upper_[i];
      const double t = std::max(0.0, lam_hi_[i] + mu_ * g);
      value += (t * t - lam_hi_[i] * lam_hi_[i]) / (2.0 * mu_);
      d += t;
    }
    *dpsi = d;
    return value;
  }

  double auglag_value(const Eigen::VectorXd& z, const Eigen::VectorXd& c) const {
    double value = nlp_.objective(z);
    double dpsi = 0.0;
    for (Eigen::Index i = 0; i < m_; ++i) value += row_penalty(i, c[i], &dpsi);
    return value;
  }

  // dL/dC weights for the current multipliers and penalty.
  Eigen::VectorXd penalty_weights(const Eigen::VectorXd& c) const {
    Eigen::VectorXd w(m_);
    for (Eigen::Index i = 0; i < m_; ++i) {
      double dpsi = 0.0;
      row_penalty(i, c[i], &dpsi);
      w[i] = dpsi;
    }
    return w;
  }

  Eigen::VectorXd auglag_gradient(const Eigen::VectorXd& z, const Eigen::VectorXd& c) const {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(nlp_.n_vars);

    if (use_terms_ || m_nl_ > 0) {
      VectorFn stacked = [this](const Eigen::VectorXd& zz) {
        Eigen::VectorXd out(stacked_pattern_.rows);
        if (m_nl_ > 0) out.head(m_nl_) = nlp_.constraints(zz);
        if (use_terms_) out.tail(nlp_.n_objective_terms) = nlp_.objective_terms(zz);
        return out;
      };
      const Eigen::SparseMatrix<double> jac =
          fd_jacobian(stacked, z, stacked_pattern_, opts_.fd_step_scale, opts_.threads);
      Eigen::VectorXd w = Eigen::VectorXd::Zero(stacked_pattern_.rows);
      if (m_nl_ > 0) w.head(m_nl_) = penalty_weights(c).head(m_nl_);
      if (use_terms_) w.tail(nlp_.n_objective_terms).setOnes();
      grad += jac.transpose() * w;
    }
    if (!use_terms_) {
      grad += fd_gradient(nlp_.objective, z, opts_.fd_step_scale);
    }
    if (m_lin_ > 0) {
      const Eigen::VectorXd w_lin = penalty_weights(c).tail(m_lin_);
      grad += nlp_.linear_rows.transpose() * w_lin;
    }
    return grad;
  }

  double pg_norm(const Eigen::VectorXd& z, const Eigen::VectorXd& grad) const {
    return (z - project(z - grad)).lpNorm<Eigen::Infinity>();
  }

  // Gradient with the components that push into an active bound zeroed out;
  // the quasi-Newton model lives in the free subspace.
  Eigen::VectorXd reduced_gradient(const Eigen::VectorXd& z, const Eigen::VectorXd& grad) const {
    Eigen::VectorXd r = grad;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const bool at_lower = z[i] <= nlp_.var_lower[i] && grad[i] > 0.0;
      const bool at_upper = z[i] >= nlp_.var_upper[i] && grad[i] < 0.0;
      const bool pinned = nlp_.var_lower[i] == nlp_.var_upper[i];
      if (at_lower || at_upper || pinned) r[i] = 0.0;
    }
    return r;
  }

  // Projected limited-memory BFGS with Armijo backtracking. Trial steps
  // whose predicted decrease falls below rounding noise count as convergence
  // at the noise floor, not as failure.
  InnerResult minimize_inner(Eigen::VectorXd z, double tol) {
    InnerResult result;
    constexpr int kMemory = 20;
    std::vector<Eigen::VectorXd> s_hist, y_hist;
    std::vector<double> rho_hist;
    double steepest_alpha = 0.0;  // carried over between steepest steps
    const auto clear_memory = [&] {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    };

    Eigen::VectorXd c = eval_constraints(z);
    double value = auglag_value(z, c);
    Eigen::VectorXd grad = auglag_gradient(z, c);
    Eigen::VectorXd grad_red = reduced_gradient(z, grad);

    for (int iter = 0; iter < opts_.max_inner; ++iter) {
      result.pg_norm = pg_norm(z, grad);
      if (result.pg_norm <= tol) break;
      ++result.iters;

      const double noise = 1e-13 * (1.0 + std::abs(value));
      bool accepted = false;
      bool at_noise_floor = false;
      Eigen::VectorXd z_new, c_new;
      double value_new = 0.0;

      for (int attempt = 0; attempt < 2 && !accepted && !at_noise_floor; ++attempt) {
        Eigen::VectorXd dir;
        bool steepest = attempt == 1 || s_hist.empty();
        if (steepest) {
          dir = -grad_red;
        } else {
          dir = lbfgs_direction(grad_red, s_hist, y_hist, rho_hist);
          if (dir.dot(grad_red) >= -1e-14 * (1.0 + dir.norm() * grad_red.norm())) {
            clear_memory();
            dir = -grad_red;
            steepest = true;
          }
        }
        double alpha = 1.0;
        if (steepest) {
          alpha = steepest_alpha > 0.0 ? std::min(1e3, 2.0 * steepest_alpha)
                                       : std::min(1.0, 1.0 / (1.0 + grad_red.norm()));
        }
        for (int ls = 0; ls < 60; ++ls) {
          z_new = project(z + alpha * dir);
          const Eigen::VectorXd step = z_new - z;
          const double predicted = grad.dot(step);
          if (predicted > -noise) {
            // Nothing left to gain along this direction at this precision.
            if (steepest) {
              at_noise_floor = true;
            } else {
              clear_memory();
            }
            break;
          }
          c_new = eval_constraints(z_new);
          value_new = auglag_value(z_new, c_new);
          if (std::isfinite(value_new) && value_new <= value + 1e-4 * predicted) {
            accepted = true;
            if (steepest) steepest_alpha = alpha;
            break;
          }
          alpha *= 0.5;
        }
      }
      if (at_noise_floor) {
        result.at_noise_floor = true;
        break;
      }
      if (!accepted) {
        result.line_search_failed = true;
        break;
      }

      Eigen::VectorXd grad_new = auglag_gradient(z_new, c_new);
      Eigen::VectorXd grad_red_new = reduced_gradient(z_new, grad_new);
      const Eigen::VectorXd s = z_new - z;
      const Eigen::VectorXd y = grad_red_new - grad_red;
      const double sy = s.dot(y);
      if (sy > 1e-12 * s.norm() * y.norm()) {
        s_hist.push_back(s);
        y_hist.push_back(y);
        rho_hist.push_back(1.0 / sy);
        if (static_cast<int>(s_hist.size()) > kMemory) {
          s_hist.erase(s_hist.begin());
          y_hist.erase(y_hist.begin());
          rho_hist.erase(rho_hist.begin());
        }
      }
      z = std::move(z_new);
      c = std::move(c_new);
      value = value_new;
      grad = std::move(grad_new);
      grad_red = std::move(grad_red_new);
      result.pg_norm = pg_norm(z, grad);
    }
    result.z = std::move(z);
    return result;
  }

  static Eigen::VectorXd lbfgs_direction(const Eigen::VectorXd& grad,
                                         const std::vector<Eigen::VectorXd>& s_hist,
                                         const std::vector<Eigen::VectorXd>& y_hist,
                                         const std::vector<double>& rho_hist) {
    if (s_hist.empty()) return -grad;
    const int k = static_cast<int>(s_hist.size());
    Eigen::VectorXd q = grad;
    std::vector<double> alpha(static_cast<std::size_t>(k));
    for (int i = k - 1; i >= 0; --i) {
      alpha[static_cast<std::size_t>(i)] = rho_hist[static_cast<std::size_t>(i)] *
                                           s_hist[static_cast<std::size_t>(i)].dot(q);
      q -= alpha[static_cast<std::size_t>(i)] * y_hist[static_cast<std::size_t>(i)];
    }
    const Eigen::VectorXd& s_last = s_hist.back();
    const Eigen::VectorXd& y_last = y_hist.back();
    q *= s_last.dot(y_last) / y_last.dot(y_last);
    for (int i = 0; i < k; ++i) {
      const double beta = rho_hist[static_cast<std::size_t>(i)] *
                          y_hist[static_cast<std::size_t>(i)].dot(q);
      q += (alpha[static_cast<std::size_t>(i)] - beta) * s_hist[static_cast<std::size_t>(i)];
    }
    return -q;
  }

  void update_multipliers(const Eigen::VectorXd& c) {
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (is_equality_[static_cast<std::size_t>(i)]) {
        lam_eq_[i] += mu_ * (c[i] - c_lower_[i]);
      } else {
        if (std::isfinite(c_lower_[i])) {
          lam_lo_[i] = std::max(0.0, lam_lo_[i] + mu_ * (c_lower_[i] - c[i]));
        }
        if (std::isfinite(c_upper_[i])) {
          lam_hi_[i] = std::max(0.0, lam_hi_[i] + mu_ * (c[i] - c_upper_[i]));
        }
      }
    }
  }

  const NlpProblem& nlp_;
  const SolveOptions& opts_;

  Eigen::Index m_nl_ = 0, m_lin_ = 0, m_ = 0;
  Eigen::VectorXd c_lower_, c_upper_;
  std::vector<bool> is_equality_;
  Eigen::VectorXd lam_eq_, lam_lo_, lam_hi_;
  double mu_ = 1.0;
  bool use_terms_ = false;
  SparsityPattern stacked_pattern_;
  int line_search_failures_ = 0;
};

}  // namespace detail

// Solves the NLP from z0 (clipped into the variable bounds first). Two calls
// with identical inputs produce bit-identical iterates.
inline SolveResult solve(const NlpProblem& nlp, const Eigen::VectorXd& z0,
                         const SolveOptions& opts = {}) {
  if (!(opts.feas_tol > 0.0) || !(opts.opt_tol > 0.0)) {
    throw std::invalid_argument("solve: tolerances must be positive");
  }
  if (!(opts.penalty_growth > 1.0)) {
    throw std::invalid_argument("solve: penalty growth must exceed 1");
  }
  detail::AugLagSolver solver(nlp, opts);
  return solver.run(z0);
}

}  // namespace trajkit
