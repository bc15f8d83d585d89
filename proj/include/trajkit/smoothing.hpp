#pragma once

// Smooth surrogates and exact slack reformulations for the nonsmooth
// primitives that break gradient-based optimization: |x|, max, and the
// ramp/clamp family. Surrogates trade accuracy for smoothness; the slack
// encoding is exact but adds variables and one equality row.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "trajkit/nlp.hpp"

namespace trajkit {

// x * tanh(x / alpha): even, bounded above by |x|, and within about
// 0.28 * alpha of it everywhere (worst case near |x| ~ 0.64 * alpha).
inline double smooth_abs(double x, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("smooth_abs: alpha must be positive");
  return x * std::tanh(x / alpha);
}

// alpha * log(sum exp(v / alpha)), evaluated with max subtraction so huge
// entries cannot overflow. Lies in [max(v), max(v) + alpha * ln n].
inline double smooth_max(const Eigen::VectorXd& v, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("smooth_max: alpha must be positive");
  if (v.size() == 0) throw std::invalid_argument("smooth_max: empty vector");
  const double m = v.maxCoeff();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) acc += std::exp((v[i] - m) / alpha);
  return m + alpha * std::log(acc);
}

// Once-differentiable ramp: 0 below -delta, identity above +delta, and the
// quadratic (x + delta)^2 / (4 delta) in between, which matches value and
// slope at both seams.
inline double smooth_ramp(double x, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("smooth_ramp: delta must be positive");
  if (x <= -delta) return 0.0;
  if (x >= delta) return x;
  const double s = x + delta;
  return s * s / (4.0 * delta);
}

// Slack encoding of |x|: two nonnegative variables with x = x1 - x2, so that
// x1 + x2 equals |x| at any optimum that minimizes it.
struct AbsSlack {
  Eigen::Index plus_index;   // x1
  Eigen::Index minus_index;  // x2
};

// Adds the slack pair and the linear row x - x1 + x2 = 0 to the builder.
// With objective_weight > 0 the term weight * (x1 + x2) joins the objective,
// which is the usual way to minimize |x| exactly.
inline AbsSlack abs_via_slacks(NlpBuilder& builder, Eigen::Index var_index,
                               double objective_weight = 0.0) {
  if (var_index < 0 || var_index >= builder.n_vars()) {
    throw std::invalid_argument("abs_via_slacks: variable index out of range");
  }
  const std::string tag = "abs_slack_" + std::to_string(var_index);
  const Layout::Span span =
      builder.add_var(tag, 2, 1, 0.0, std::numeric_limits<double>::infinity());
  const AbsSlack slack{span.offset, span.offset + 1};
  builder.add_linear_row(
      {{var_index, 1.0}, {slack.plus_index, -1.0}, {slack.minus_index, 1.0}}, 0.0, 0.0);
  if (objective_weight > 0.0) {
    builder.add_objective_term(
        [slack, objective_weight](const Eigen::VectorXd& z) {
          return objective_weight * (z[slack.plus_index] + z[slack.minus_index]);
        },
        {slack.plus_index, slack.minus_index});
  }
  return slack;
}

}  // namespace trajkit
