#pragma once

// Declarative optimal control problem model: one or more continuous phases
// joined by discrete transition maps, with path constraints, bounds and
// Mayer + Lagrange cost terms. Problems are plain values; all attached
// functions must be pure.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "trajkit/integrate.hpp"

namespace trajkit {

using PathConstraintFn =
    std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& x, const Eigen::VectorXd& u)>;
using BoundaryFn = std::function<Eigen::VectorXd(double t0, const Eigen::VectorXd& x0, double tf,
                                                 const Eigen::VectorXd& xf)>;
using MayerFn = std::function<double(double t0, const Eigen::VectorXd& x0, double tf,
                                     const Eigen::VectorXd& xf)>;
using TransitionFn = std::function<Eigen::VectorXd(const Eigen::VectorXd& x_minus)>;
// Recovers the control from a state/derivative pair; used by polynomial-fit
// initialization for control-affine systems.
using InverseDynamicsFn = std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& x,
                                                        const Eigen::VectorXd& xdot)>;

inline double inf() { return std::numeric_limits<double>::infinity(); }

struct Bounds {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  Eigen::Index size() const { return lower.size(); }

  static Bounds unbounded(Eigen::Index n) {
    return {Eigen::VectorXd::Constant(n, -inf()), Eigen::VectorXd::Constant(n, inf())};
  }
  static Bounds equal(const Eigen::VectorXd& v) { return {v, v}; }
  static Bounds box(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) { return {lo, hi}; }
  static Bounds symmetric(Eigen::Index n, double limit) {
    return {Eigen::VectorXd::Constant(n, -limit), Eigen::VectorXd::Constant(n, limit)};
  }
};

struct Phase {
  int state_dim = 0;
  int control_dim = 0;
  DynamicsFn dynamics;

  PathConstraintFn path_constraint;  // optional
  Bounds path_bounds;                // sized to the path constraint output

  RunningCostFn running_cost;  // optional, treated as zero when absent

  Bounds state_bounds;    // per component
  Bounds control_bounds;  // per component

  double duration_min = 1.0;
  double duration_max = 1.0;

  // Trailing control channels that must stay constant over the phase
  // (parameters smuggled in as controls).
  int param_channels = 0;

  InverseDynamicsFn inverse_dynamics;  // optional

  // Initialization hints; empty when not set.
  Eigen::VectorXd guess_start;
  Eigen::VectorXd guess_end;

  bool fixed_duration() const { return duration_min == duration_max; }
};

struct Problem {
  std::string name;
  std::vector<Phase> phases;

  // One map per phase boundary; with periodic = true the last map carries
  // the final state of the last phase back onto the first phase's start.
  std::vector<TransitionFn> transitions;

  BoundaryFn boundary_constraint;  // optional
  Bounds boundary_bounds;

  MayerFn mayer_cost;  // optional

  bool periodic = false;

  // When non-empty, the first phase starts exactly here.
  Eigen::VectorXd fixed_initial_state;

  std::size_t num_phases() const { return phases.size(); }
};

struct PhaseTrajectory {
  Eigen::VectorXd state_times;    // ascending; may repeat at interior knots
  Eigen::MatrixXd states;         // state_dim x state_times.size()
  Eigen::VectorXd control_times;  // breakpoints of the control parameterization
  Eigen::MatrixXd controls;       // one column per sample (see ControlKind)
  ControlKind control_kind = ControlKind::PiecewiseLinear;
  double duration = 0.0;

  double start_time() const { return state_times[0]; }
  double end_time() const { return state_times[state_times.size() - 1]; }
  Eigen::VectorXd initial_state() const { return states.col(0); }
  Eigen::VectorXd final_state() const { return states.col(states.cols() - 1); }

  ControlInterpolant control_interpolant() const {
    return {control_kind, control_times, controls};
  }
};

struct Trajectory {
  std::vector<PhaseTrajectory> phases;

  double total_duration() const {
    double total = 0.0;
    for (const auto& p : phases) total += p.duration;
    return total;
  }
};

namespace detail {

inline Eigen::VectorXd probe_point(const Bounds& b) {
  Eigen::VectorXd p(b.size());
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    const double lo = b.lower[i];
    const double hi = b.upper[i];
    if (std::isfinite(lo) && std::isfinite(hi)) {
      p[i] = 0.5 * (lo + hi);
    } else if (std::isfinite(lo)) {
      p[i] = lo;
    } else if (std::isfinite(hi)) {
      p[i] = hi;
    } else {
      p[i] = 0.0;
    }
  }
  return p;
}

inline void check_bounds(const Bounds& b, Eigen::Index expected, const std::string& what,
                         std::vector<std::string>& out) {
  if (b.lower.size() != expected || b.upper.size() != expected) {
    out.push_back(what + ": bound arrays sized " + std::to_string(b.lower.size()) + "/" +
                  std::to_string(b.upper.size()) + ", expected " + std::to_string(expected));
    return;
  }
  for (Eigen::Index i = 0; i < expected; ++i) {
    if (!(b.lower[i] <= b.upper[i])) {
      out.push_back(what + ": component " + std::to_string(i) + " has lower bound " +
                    std::to_string(b.lower[i]) + " above upper bound " +
                    std::to_string(b.upper[i]));
    }
  }
}

}  // namespace detail

// Structural checks plus a finiteness probe of every attached function at
// the midpoint of its bounds. Returns diagnostics; empty means well formed.
inline std::vector<std::string> validate(const Problem& problem) {
  std::vector<std::string> diags;
  if (problem.phases.empty()) {
    diags.push_back("problem has no phases");
    return diags;
  }

  const std::size_t expected_transitions =
      problem.periodic ? problem.phases.size() : problem.phases.size() - 1;
  if (problem.transitions.size() != expected_transitions) {
    diags.push_back("problem: expected " + std::to_string(expected_transitions) +
                    " transition maps, got " + std::to_string(problem.transitions.size()));
  }

  for (std::size_t p = 0; p < problem.phases.size(); ++p) {
    const Phase& ph = problem.phases[p];
    const std::string tag = "phase " + std::to_string(p);
    if (ph.state_dim < 1) diags.push_back(tag + ": state_dim must be positive");
    if (ph.control_dim < 0) diags.push_back(tag + ": control_dim must be nonnegative");
    if (!ph.dynamics) diags.push_back(tag + ": missing dynamics");
    if (!(ph.duration_min > 0.0)) {
      diags.push_back(tag + ": duration lower bound must be strictly positive");
    }
    if (!(ph.duration_min <= ph.duration_max)) {
      diags.push_back(tag + ": duration bounds out of order");
    }
    detail::check_bounds(ph.state_bounds, ph.state_dim, tag + " state bounds", diags);
    detail::check_bounds(ph.control_bounds, ph.control_dim, tag + " control bounds", diags);
    if (ph.param_channels < 0 || ph.param_channels > ph.control_dim) {
      diags.push_back(tag + ": param_channels outside [0, control_dim]");
    }

    if (!diags.empty()) continue;  // probe only structurally sound phases

    const double t_probe = 0.5 * (ph.duration_min + ph.duration_max) * 0.5;
    const Eigen::VectorXd x_probe = detail::probe_point(ph.state_bounds);
    const Eigen::VectorXd u_probe = detail::probe_point(ph.control_bounds);
    const Eigen::VectorXd dx = ph.dynamics(t_probe, x_probe, u_probe);
    if (dx.size() != ph.state_dim) {
      diags.push_back(tag + ": dynamics output has size " + std::to_string(dx.size()) +
                      ", expected " + std::to_string(ph.state_dim));
    } else if (!dx.allFinite()) {
      diags.push_back(tag + ": dynamics non-finite at probe point");
    }
    if (ph.path_constraint) {
      const Eigen::VectorXd c = ph.path_constraint(t_probe, x_probe, u_probe);
      detail::check_bounds(ph.path_bounds, c.size(), tag + " path bounds", diags);
      if (!c.allFinite()) diags.push_back(tag + ": path constraint non-finite at probe point");
    }
    if (ph.running_cost) {
      const double g = ph.running_cost(t_probe, x_probe, u_probe);
      if (!std::isfinite(g)) diags.push_back(tag + ": running cost non-finite at probe point");
    }
  }

  if (problem.fixed_initial_state.size() > 0 &&
      problem.fixed_initial_state.size() != problem.phases.front().state_dim) {
    diags.push_back("fixed initial state size does not match first phase state_dim");
  }

  if (problem.boundary_constraint && diags.empty()) {
    const Phase& first = problem.phases.front();
    const Phase& last = problem.phases.back();
    const Eigen::VectorXd x0 = problem.fixed_initial_state.size() > 0
                                   ? problem.fixed_initial_state
                                   : detail::probe_point(first.state_bounds);
    const Eigen::VectorXd xf = detail::probe_point(last.state_bounds);
    double tf = 0.0;
    for (const auto& ph : problem.phases) tf += 0.5 * (ph.duration_min + ph.duration_max);
    const Eigen::VectorXd b = problem.boundary_constraint(0.0, x0, tf, xf);
    detail::check_bounds(problem.boundary_bounds, b.size(), "boundary bounds", diags);
    if (!b.allFinite()) diags.push_back("boundary constraint non-finite at probe point");
    if (problem.mayer_cost && !std::isfinite(problem.mayer_cost(0.0, x0, tf, xf))) {
      diags.push_back("mayer cost non-finite at probe point");
    }
  }

  if (diags.empty()) {
    for (std::size_t k = 0; k < problem.transitions.size(); ++k) {
      if (!problem.transitions[k]) {
        diags.push_back("transition " + std::to_string(k) + " is empty");
        continue;
      }
      const std::size_t from = k;
      const std::size_t to = problem.periodic && k + 1 == problem.phases.size() ? 0 : k + 1;
      const Eigen::VectorXd x_minus = detail::probe_point(problem.phases[from].state_bounds);
      const Eigen::VectorXd x_plus = problem.transitions[k](x_minus);
      if (x_plus.size() != problem.phases[to].state_dim) {
        diags.push_back("transition " + std::to_string(k) + " maps to size " +
                        std::to_string(x_plus.size()) + ", expected " +
                        std::to_string(problem.phases[to].state_dim));
      }
    }
  }

  return diags;
}

}  // namespace trajkit
