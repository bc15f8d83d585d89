#pragma once

// A-posteriori solution checking: re-run the optimal controls open loop
// through the adaptive integrator and compare against the reported
// trajectory. Fixed-step transcription errors compound over time, so the
// pass criterion allows an exponential envelope around the base tolerance.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "trajkit/integrate.hpp"
#include "trajkit/ocp.hpp"
#include "trajkit/transcribe.hpp"

namespace trajkit {

struct VerifyOptions {
  double rel_tol = 1e-9;   // re-simulation tolerance
  double abs_tol = 1e-11;  // re-simulation tolerance
  double tol_base = 1e-4;  // base error allowance at t = t0
  double growth_rate_cap = 5.0;   // lambda cap, per time unit
  double growth_scale_cap = 10.0;  // C cap
};

struct VerificationReport {
  Eigen::VectorXd sample_times;
  Eigen::VectorXd sample_errors;  // weighted infinity norm per sample
  double max_error = 0.0;
  double fit_scale = 0.0;  // C of the fitted bound C * exp(lambda (t - t0))
  double fit_rate = 0.0;   // lambda of the fitted bound
  bool pass = false;
  double defect_max = std::numeric_limits<double>::quiet_NaN();
  std::string failure;  // empty when the re-simulation ran to completion
};

namespace detail {

// Control signal in real time for one phase, tolerant of repeated sample
// times (orthogonal collocation duplicates knots).
inline ControlSignal control_signal_for(const PhaseTrajectory& pt) {
  if (pt.controls.rows() == 0) {
    return [](double) { return Eigen::VectorXd(); };
  }
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < pt.control_times.size(); ++i) {
    if (keep.empty() || pt.control_times[i] > pt.control_times[keep.back()]) {
      keep.push_back(i);
    }
  }
  Eigen::VectorXd times(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) times[static_cast<Eigen::Index>(i)] =
      pt.control_times[keep[i]];

  Eigen::MatrixXd samples;
  if (pt.control_kind == ControlKind::HoldConstant) {
    samples.resize(pt.controls.rows(), times.size() - 1);
    for (Eigen::Index k = 0; k + 1 < times.size(); ++k) {
      samples.col(k) = pt.controls.col(std::min<Eigen::Index>(k, pt.controls.cols() - 1));
    }
  } else {
    samples.resize(pt.controls.rows(), times.size());
    for (std::size_t i = 0; i < keep.size(); ++i) {
      samples.col(static_cast<Eigen::Index>(i)) = pt.controls.col(keep[i]);
    }
  }
  ControlInterpolant interp(pt.control_kind, times, samples);
  return [interp](double t) { return interp(t); };
}

}  // namespace detail

// Integrates each phase with the adaptive integrator, chaining the final
// state of one phase through the transition map into the next, and samples
// the weighted error against the given solution at its own grid points.
inline VerificationReport resimulate(const Problem& problem, const Trajectory& solution,
                                     const VerifyOptions& opts = {}) {
  if (solution.phases.size() != problem.phases.size()) {
    throw std::invalid_argument("resimulate: trajectory/problem phase count mismatch");
  }

  VerificationReport report;
  std::vector<double> times;
  std::vector<double> errors;
  const double t_start = solution.phases.front().start_time();

  Eigen::VectorXd x_chain = solution.phases.front().initial_state();
  for (std::size_t p = 0; p < problem.phases.size(); ++p) {
    const PhaseTrajectory& pt = solution.phases[p];
    if (p > 0) x_chain = problem.transitions[p - 1](x_chain);

    const ControlSignal u = detail::control_signal_for(pt);
    DenseTrajectory dense;
    try {
      dense = adaptive_rk45(problem.phases[p].dynamics, pt.start_time(), x_chain, pt.end_time(), u,
                            opts.rel_tol, opts.abs_tol);
    } catch (const std::exception& e) {
      report.failure = "phase " + std::to_string(p) + ": " + e.what();
      report.pass = false;
      return report;
    }

    for (Eigen::Index k = 0; k < pt.state_times.size(); ++k) {
      const Eigen::VectorXd x_ref = pt.states.col(k);
      const Eigen::VectorXd x_sim = dense.eval(pt.state_times[k]);
      double err = 0.0;
      for (Eigen::Index i = 0; i < x_ref.size(); ++i) {
        const double scale = std::max(1.0, std::abs(x_ref[i]));
        err = std::max(err, std::abs(x_ref[i] - x_sim[i]) / scale);
      }
      times.push_back(pt.state_times[k]);
      errors.push_back(err);
    }
    x_chain = dense.eval(pt.end_time());
  }

  const Eigen::Index n = static_cast<Eigen::Index>(times.size());
  report.sample_times.resize(n);
  report.sample_errors.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    report.sample_times[i] = times[static_cast<std::size_t>(i)];
    report.sample_errors[i] = errors[static_cast<std::size_t>(i)];
  }
  report.max_error = n > 0 ? report.sample_errors.maxCoeff() : 0.0;

  // Fit log(err) = log(C) + lambda (t - t0) over the samples with
  // appreciable error; reported for diagnostics, the pass bound always uses
  // the configured caps.
  {
    double sum_t = 0, sum_y = 0, sum_tt = 0, sum_ty = 0;
    int count = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (report.sample_errors[i] > 1e-12) {
        const double dt = report.sample_times[i] - t_start;
        const double y = std::log(report.sample_errors[i]);
        sum_t += dt;
        sum_y += y;
        sum_tt += dt * dt;
        sum_ty += dt * y;
        ++count;
      }
    }
    if (count >= 2 && sum_tt * count - sum_t * sum_t > 1e-15) {
      report.fit_rate = (count * sum_ty - sum_t * sum_y) / (count * sum_tt - sum_t * sum_t);
      report.fit_scale = std::exp((sum_y - report.fit_rate * sum_t) / count);
    } else if (count >= 1) {
      report.fit_rate = 0.0;
      report.fit_scale = std::exp(sum_y / count);
    }
  }

  report.pass = true;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double allowance = opts.growth_scale_cap *
                             std::exp(opts.growth_rate_cap * (report.sample_times[i] - t_start)) *
                             opts.tol_base;
    if (report.sample_errors[i] > allowance) {
      report.pass = false;
      break;
    }
  }
  return report;
}

// Infinity norm over the transcription's defect rows only.
inline double defect_report(const Transcription& t, const Eigen::VectorXd& z) {
  if (t.defect_rows.empty()) return 0.0;
  const Eigen::VectorXd c = t.nlp.constraints(z);
  double worst = 0.0;
  for (const Eigen::Index row : t.defect_rows) {
    worst = std::max(worst, std::abs(c[row]));
  }
  return worst;
}

}  // namespace trajkit
