#pragma once

// Chebyshev-Lobatto grids with the machinery pseudospectral methods need:
// barycentric interpolation, spectral differentiation and Clenshaw-Curtis
// quadrature, all precomputed once per grid.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace trajkit {

// Chebyshev-Lobatto points t_i = cos(i*pi/n), i = 0..n. Descending, with
// t_0 = 1 and t_n = -1 pinned exactly so endpoint constraints see no rounding.
inline Eigen::VectorXd cheb_points(int n) {
  if (n < 1) throw std::invalid_argument("cheb_points: order must be >= 1");
  Eigen::VectorXd pts(n + 1);
  for (int i = 0; i <= n; ++i) pts[i] = std::cos(i * std::numbers::pi / n);
  pts[0] = 1.0;
  pts[n] = -1.0;
  if (n % 2 == 0) pts[n / 2] = 0.0;
  return pts;
}

// Barycentric weights for the Lobatto points: lambda_i = (-1)^i, halved at
// both endpoints. Any common rescaling cancels in the interpolation formula.
inline Eigen::VectorXd barycentric_weights(int n) {
  if (n < 1) throw std::invalid_argument("barycentric_weights: order must be >= 1");
  Eigen::VectorXd w(n + 1);
  for (int i = 0; i <= n; ++i) w[i] = (i % 2 == 0) ? 1.0 : -1.0;
  w[0] *= 0.5;
  w[n] *= 0.5;
  return w;
}

// Differentiation matrix: (D v)_i = p'(x_i) for the polynomial p
// interpolating v on the given nodes. Diagonal entries come from negative
// row sums so D annihilates constants exactly.
inline Eigen::MatrixXd barycentric_diff_matrix(const Eigen::VectorXd& points,
                                               const Eigen::VectorXd& bary_weights) {
  const Eigen::Index m = points.size();
  Eigen::MatrixXd d(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    double row_sum = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (i == j) continue;
      d(i, j) = (bary_weights[j] / bary_weights[i]) / (points[i] - points[j]);
      row_sum += d(i, j);
    }
    d(i, i) = -row_sum;
  }
  return d;
}

inline Eigen::MatrixXd cheb_diff_matrix(int n) {
  return barycentric_diff_matrix(cheb_points(n), barycentric_weights(n));
}

// Clenshaw-Curtis weights on the Lobatto points, by the cosine-sum formula.
// Integrates polynomials of degree <= n exactly over [-1, 1].
inline Eigen::VectorXd clenshaw_curtis_weights(int n) {
  if (n < 1) throw std::invalid_argument("clenshaw_curtis_weights: order must be >= 1");
  Eigen::VectorXd w(n + 1);
  const int half = n / 2;
  for (int k = 0; k <= n; ++k) {
    double s = 1.0;
    for (int j = 1; j <= half; ++j) {
      const double b = (2 * j == n) ? 1.0 : 2.0;
      s -= b / (4.0 * j * j - 1.0) * std::cos(2.0 * j * k * std::numbers::pi / n);
    }
    const double c = (k == 0 || k == n) ? 1.0 : 2.0;
    w[k] = c * s / n;
  }
  return w;
}

struct ChebGrid {
  int order = 0;
  Eigen::VectorXd points;        // n+1 nodes, descending
  Eigen::VectorXd bary_weights;  // n+1
  Eigen::VectorXd quad_weights;  // n+1, sums to the interval length
  Eigen::MatrixXd diff_matrix;   // (n+1) x (n+1)

  static ChebGrid build(int n) {
    ChebGrid g;
    g.order = n;
    g.points = cheb_points(n);
    g.bary_weights = barycentric_weights(n);
    g.quad_weights = clenshaw_curtis_weights(n);
    g.diff_matrix = barycentric_diff_matrix(g.points, g.bary_weights);
    return g;
  }
};

// Evaluates the interpolating polynomial through (points_i, values_i) at x.
// Exact node hits return the stored value directly; otherwise the weighted
// ratio formula applies.
inline double barycentric_interp(const Eigen::VectorXd& points,
                                 const Eigen::VectorXd& bary_weights,
                                 const Eigen::VectorXd& values, double x) {
  double num = 0.0;
  double den = 0.0;
  for (Eigen::Index i = 0; i < points.size(); ++i) {
    const double dx = x - points[i];
    if (dx == 0.0) return values[i];
    const double q = bary_weights[i] / dx;
    num += q * values[i];
    den += q;
  }
  return num / den;
}

inline double barycentric_interp(const ChebGrid& grid, const Eigen::VectorXd& values, double x) {
  return barycentric_interp(grid.points, grid.bary_weights, values, x);
}

// Affine change of interval. Differentiation picks up 2/(tf-t0), quadrature
// (tf-t0)/2; barycentric weights are scale invariant.
inline ChebGrid scale_to_interval(const ChebGrid& grid, double t0, double tf) {
  if (!(tf > t0)) throw std::invalid_argument("scale_to_interval: requires tf > t0");
  const double half = 0.5 * (tf - t0);
  const double mid = 0.5 * (tf + t0);
  ChebGrid out = grid;
  out.points = (grid.points.array() * half + mid).matrix();
  out.quad_weights = grid.quad_weights * half;
  out.diff_matrix = grid.diff_matrix / half;
  return out;
}

// Same grid with node index running in ascending-coordinate order, which is
// what time-marching code wants. The differentiation matrix is permuted to
// match: D'(i,j) = D(n-i, n-j).
inline ChebGrid ascending(const ChebGrid& grid) {
  ChebGrid out;
  out.order = grid.order;
  out.points = grid.points.reverse();
  out.bary_weights = grid.bary_weights.reverse();
  out.quad_weights = grid.quad_weights.reverse();
  out.diff_matrix = grid.diff_matrix.reverse();  // reverses both dimensions
  return out;
}

}  // namespace trajkit
