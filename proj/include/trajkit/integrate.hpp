#pragma once

// Fixed-step explicit integrators for shooting transcription, plus an
// embedded adaptive pair kept strictly for a-posteriori verification. The
// fixed-step code executes the identical arithmetic for every input of the
// same shape, so finite-difference gradients of a simulation stay reliable;
// the adaptive integrator trades that consistency for accuracy and must
// never run inside a transcription.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace trajkit {

using DynamicsFn =
    std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& x, const Eigen::VectorXd& u)>;
using RunningCostFn =
    std::function<double(double t, const Eigen::VectorXd& x, const Eigen::VectorXd& u)>;
using ControlSignal = std::function<Eigen::VectorXd(double t)>;

enum class ControlKind { HoldConstant, PiecewiseLinear };
enum class IntegratorKind { Euler, Rk4 };

inline const char* to_string(ControlKind k) {
  return k == ControlKind::HoldConstant ? "hold" : "linear";
}
inline const char* to_string(IntegratorKind k) {
  return k == IntegratorKind::Euler ? "euler" : "rk4";
}

// Control trajectory over one time interval. Hold-constant keeps one sample
// per breakpoint interval; piecewise-linear keeps one sample per breakpoint.
class ControlInterpolant {
 public:
  ControlInterpolant(ControlKind kind, Eigen::VectorXd times, Eigen::MatrixXd samples)
      : kind_(kind), times_(std::move(times)), samples_(std::move(samples)) {
    if (times_.size() < 2) {
      throw std::invalid_argument("control interpolant: need at least two breakpoints");
    }
    for (Eigen::Index i = 0; i + 1 < times_.size(); ++i) {
      if (!(times_[i] < times_[i + 1])) {
        throw std::invalid_argument("control interpolant: breakpoints must be strictly ascending");
      }
    }
    const Eigen::Index expected =
        kind_ == ControlKind::HoldConstant ? times_.size() - 1 : times_.size();
    if (samples_.cols() != expected) {
      throw std::invalid_argument("control interpolant: expected " + std::to_string(expected) +
                                  " samples, got " + std::to_string(samples_.cols()));
    }
  }

  static ControlInterpolant constant(const Eigen::VectorXd& u, double t0, double t1) {
    Eigen::VectorXd times(2);
    times << t0, t1;
    return {ControlKind::HoldConstant, times, u};
  }

  ControlKind kind() const { return kind_; }
  const Eigen::VectorXd& times() const { return times_; }
  const Eigen::MatrixXd& samples() const { return samples_; }
  Eigen::Index dim() const { return samples_.rows(); }

  Eigen::VectorXd operator()(double t) const {
    const Eigen::Index k = interval_of(t);
    if (kind_ == ControlKind::HoldConstant) return samples_.col(k);
    const double span = times_[k + 1] - times_[k];
    const double a = (t - times_[k]) / span;
    return samples_.col(k) + a * (samples_.col(k + 1) - samples_.col(k));
  }

 private:
  // Interval index with t in [times_k, times_{k+1}); the last interval is
  // closed on the right.
  Eigen::Index interval_of(double t) const {
    Eigen::Index lo = 0;
    Eigen::Index hi = times_.size() - 2;
    while (lo < hi) {
      const Eigen::Index mid = (lo + hi + 1) / 2;
      if (t >= times_[mid]) {
        lo = mid;
      } else {
        hi = mid - 1;
      }
    }
    return lo;
  }

  ControlKind kind_;
  Eigen::VectorXd times_;
  Eigen::MatrixXd samples_;
};

namespace detail {

inline void require_finite(const Eigen::VectorXd& v, double t, const char* where) {
  if (!v.allFinite()) {
    throw std::runtime_error(std::string("integrator: non-finite dynamics output at ") + where +
                             ", t = " + std::to_string(t));
  }
}

}  // namespace detail

// One explicit Euler step: x + h f(t, x, u).
inline Eigen::VectorXd euler_step(const DynamicsFn& f, double t, const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& u, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("euler_step: step size must be positive");
  Eigen::VectorXd k = f(t, x, u);
  detail::require_finite(k, t, "euler stage");
  return x + h * k;
}

// Classical four-stage Runge-Kutta step with weights 1/6, 2/6, 2/6, 1/6.
// The control is sampled at t, t + h/2 and t + h.
template <typename ControlFn>
Eigen::VectorXd rk4_step(const DynamicsFn& f, double t, const Eigen::VectorXd& x, ControlFn&& u,
                         double h) {
  if (!(h > 0.0)) throw std::invalid_argument("rk4_step: step size must be positive");
  const double th = t + 0.5 * h;
  const Eigen::VectorXd u0 = u(t);
  const Eigen::VectorXd uh = u(th);
  const Eigen::VectorXd u1 = u(t + h);
  const Eigen::VectorXd k1 = f(t, x, u0);
  detail::require_finite(k1, t, "rk4 stage 1");
  const Eigen::VectorXd k2 = f(th, x + 0.5 * h * k1, uh);
  detail::require_finite(k2, th, "rk4 stage 2");
  const Eigen::VectorXd k3 = f(th, x + 0.5 * h * k2, uh);
  detail::require_finite(k3, th, "rk4 stage 3");
  const Eigen::VectorXd k4 = f(t + h, x + h * k3, u1);
  detail::require_finite(k4, t + h, "rk4 stage 4");
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// States at uniform substeps, including both endpoints.
struct StepTrace {
  Eigen::VectorXd times;   // n_steps + 1
  Eigen::MatrixXd states;  // state_dim x (n_steps + 1)

  double final_time() const { return times[times.size() - 1]; }
  Eigen::VectorXd final_state() const { return states.col(states.cols() - 1); }
};

// Simulates n_steps uniform substeps of size h from (t0, x0). Hold-constant
// control breakpoints must land on substep boundaries, matching the rule
// that control discontinuities line up with integration steps; the control
// is then held fixed across every stage of a step. Substep times accumulate
// as t_{k+1} = t_k + h, so a trace continued from its own endpoint is
// bit-identical to one longer simulation.
inline StepTrace simulate_segment(const DynamicsFn& f, double t0, const Eigen::VectorXd& x0,
                                  const ControlInterpolant& u, double h, int n_steps,
                                  IntegratorKind method) {
  if (n_steps < 1) throw std::invalid_argument("simulate_segment: n_steps must be >= 1");
  if (!(h > 0.0)) throw std::invalid_argument("simulate_segment: step size must be positive");

  if (u.kind() == ControlKind::HoldConstant) {
    for (Eigen::Index i = 0; i < u.times().size(); ++i) {
      const double offset = (u.times()[i] - t0) / h;
      if (std::abs(offset - std::round(offset)) > 1e-9 * std::max(1.0, std::abs(offset))) {
        throw std::invalid_argument(
            "simulate_segment: hold-constant control breakpoint at t = " +
            std::to_string(u.times()[i]) + " is not aligned with a substep boundary");
      }
    }
  }

  StepTrace trace;
  trace.times.resize(n_steps + 1);
  trace.states.resize(x0.size(), n_steps + 1);
  trace.times[0] = t0;
  trace.states.col(0) = x0;

  double t = t0;
  Eigen::VectorXd x = x0;
  for (int k = 0; k < n_steps; ++k) {
    if (u.kind() == ControlKind::HoldConstant) {
      // One constant sample for the whole step, looked up mid-step so
      // boundary ties cannot flip the interval.
      const Eigen::VectorXd uk = u(t + 0.5 * h);
      if (method == IntegratorKind::Euler) {
        x = euler_step(f, t, x, uk, h);
      } else {
        x = rk4_step(f, t, x, [&uk](double) { return uk; }, h);
      }
    } else {
      if (method == IntegratorKind::Euler) {
        x = euler_step(f, t, x, u(t), h);
      } else {
        x = rk4_step(f, t, x, [&u](double s) { return u(s); }, h);
      }
    }
    t += h;
    trace.times[k + 1] = t;
    trace.states.col(k + 1) = x;
  }
  return trace;
}

// Appends one state component whose derivative is the running cost, so the
// cost integral rides through the same integrator as the dynamics. The
// added component starts at zero by convention.
inline DynamicsFn augment_cost_integrand(DynamicsFn f, RunningCostFn g) {
  return [f = std::move(f), g = std::move(g)](double t, const Eigen::VectorXd& xa,
                                              const Eigen::VectorXd& u) {
    const Eigen::Index n = xa.size() - 1;
    const Eigen::VectorXd x = xa.head(n);
    Eigen::VectorXd out(n + 1);
    out.head(n) = f(t, x, u);
    out[n] = g(t, x, u);
    return out;
  };
}

// Accepted steps of an adaptive run, with dense cubic-Hermite evaluation
// between them.
struct DenseTrajectory {
  Eigen::VectorXd times;   // accepted step endpoints, ascending
  Eigen::MatrixXd states;  // state_dim x times.size()
  Eigen::MatrixXd derivs;  // dynamics at each accepted point

  std::size_t n_steps() const { return times.size() == 0 ? 0 : times.size() - 1; }

  Eigen::VectorXd eval(double t) const {
    const Eigen::Index m = times.size();
    if (t <= times[0]) return states.col(0);
    if (t >= times[m - 1]) return states.col(m - 1);
    Eigen::Index lo = 0, hi = m - 2;
    while (lo < hi) {
      const Eigen::Index mid = (lo + hi + 1) / 2;
      if (t >= times[mid]) {
        lo = mid;
      } else {
        hi = mid - 1;
      }
    }
    const double h = times[lo + 1] - times[lo];
    const double s = (t - times[lo]) / h;
    const double s2 = s * s;
    const double s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1;
    const double h10 = s3 - 2 * s2 + s;
    const double h01 = -2 * s3 + 3 * s2;
    const double h11 = s3 - s2;
    return h00 * states.col(lo) + h10 * h * derivs.col(lo) + h01 * states.col(lo + 1) +
           h11 * h * derivs.col(lo + 1);
  }
};

// Embedded Dormand-Prince 4(5) pair with standard step-size control. Used
// only to re-check solutions; transcription goes through the fixed-step
// routines above.
inline DenseTrajectory adaptive_rk45(const DynamicsFn& f, double t0, const Eigen::VectorXd& x0,
                                     double tf, const ControlSignal& u, double rel_tol,
                                     double abs_tol) {
  if (!(tf > t0)) throw std::invalid_argument("adaptive_rk45: requires tf > t0");
  if (!(rel_tol > 0.0) || !(abs_tol > 0.0)) {
    throw std::invalid_argument("adaptive_rk45: tolerances must be positive");
  }

  static const double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static const double a21 = 1.0 / 5;
  static const double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static const double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static const double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                      a54 = -212.0 / 729;
  static const double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                      a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static const double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                      b6 = 11.0 / 84;
  // Difference between the 5th and embedded 4th order weights.
  static const double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                      e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

  const auto eval = [&](double t, const Eigen::VectorXd& x) {
    Eigen::VectorXd k = f(t, x, u(t));
    detail::require_finite(k, t, "rk45 stage");
    return k;
  };

  std::vector<double> times{t0};
  std::vector<Eigen::VectorXd> states{x0};
  std::vector<Eigen::VectorXd> derivs;

  double t = t0;
  Eigen::VectorXd x = x0;
  Eigen::VectorXd k1 = eval(t, x);
  derivs.push_back(k1);

  double h = (tf - t0) / 100.0;
  const double h_min = 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(tf));
  const int max_steps = 1000000;

  for (int step = 0; step < max_steps && t < tf; ++step) {
    h = std::min(h, tf - t);
    if (h < h_min) {
      throw std::runtime_error("adaptive_rk45: step size underflow at t = " + std::to_string(t) +
                               " (stiff or discontinuous dynamics)");
    }

    const Eigen::VectorXd k2 = eval(t + c2 * h, x + h * (a21 * k1));
    const Eigen::VectorXd k3 = eval(t + c3 * h, x + h * (a31 * k1 + a32 * k2));
    const Eigen::VectorXd k4 = eval(t + c4 * h, x + h * (a41 * k1 + a42 * k2 + a43 * k3));
    const Eigen::VectorXd k5 =
        eval(t + c5 * h, x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    const Eigen::VectorXd k6 =
        eval(t + h, x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    const Eigen::VectorXd x_new = x + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const Eigen::VectorXd k7 = eval(t + h, x_new);  // FSAL
    const Eigen::VectorXd err_vec =
        h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

    double err = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double scale = abs_tol + rel_tol * std::max(std::abs(x[i]), std::abs(x_new[i]));
      const double e = err_vec[i] / scale;
      err += e * e;
    }
    err = std::sqrt(err / std::max<Eigen::Index>(1, x.size()));

    if (err <= 1.0) {
      t += h;
      x = x_new;
      k1 = k7;
      times.push_back(t);
      states.push_back(x);
      derivs.push_back(k1);
    }
    const double factor =
        (err == 0.0) ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
    h *= factor;
  }
  if (t < tf) {
    throw std::runtime_error("adaptive_rk45: exceeded step budget before reaching tf");
  }

  DenseTrajectory out;
  out.times.resize(static_cast<Eigen::Index>(times.size()));
  out.states.resize(x0.size(), static_cast<Eigen::Index>(times.size()));
  out.derivs.resize(x0.size(), static_cast<Eigen::Index>(times.size()));
  for (std::size_t i = 0; i < times.size(); ++i) {
    out.times[static_cast<Eigen::Index>(i)] = times[i];
    out.states.col(static_cast<Eigen::Index>(i)) = states[i];
    out.derivs.col(static_cast<Eigen::Index>(i)) = derivs[i];
  }
  return out;
}

}  // namespace trajkit
