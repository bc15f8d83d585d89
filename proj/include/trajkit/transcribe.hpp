#pragma once

// Converts a Problem plus a grid specification into a sparse NLP by one of
// five transcriptions: single shooting, multiple shooting, direct
// transcription, direct collocation, or orthogonal collocation. Phases run
// on a normalized internal clock tau in [0, 1]; the phase duration enters
// as a decision variable multiplying the dynamics, so grids stay fixed
// while durations move.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "trajkit/chebyshev.hpp"
#include "trajkit/integrate.hpp"
#include "trajkit/nlp.hpp"
#include "trajkit/ocp.hpp"
#include "trajkit/packing.hpp"

namespace trajkit {

enum class Method {
  SingleShooting,
  MultipleShooting,
  DirectTranscription,
  DirectCollocation,
  OrthogonalCollocation,
};

inline const char* to_string(Method m) {
  switch (m) {
    case Method::SingleShooting: return "single_shooting";
    case Method::MultipleShooting: return "multiple_shooting";
    case Method::DirectTranscription: return "direct_transcription";
    case Method::DirectCollocation: return "direct_collocation";
    case Method::OrthogonalCollocation: return "orthogonal_collocation";
  }
  return "unknown";
}

inline Method method_from_string(const std::string& s) {
  if (s == "single_shooting") return Method::SingleShooting;
  if (s == "multiple_shooting") return Method::MultipleShooting;
  if (s == "direct_transcription") return Method::DirectTranscription;
  if (s == "direct_collocation") return Method::DirectCollocation;
  if (s == "orthogonal_collocation") return Method::OrthogonalCollocation;
  throw std::invalid_argument(
      "unknown method '" + s +
      "'; valid: single_shooting, multiple_shooting, direct_transcription, direct_collocation, "
      "orthogonal_collocation");
}

struct GridSpec {
  Method method = Method::MultipleShooting;
  std::vector<int> segments_per_phase;  // one entry per phase, or one entry for all
  int substeps = 4;                     // integration substeps per segment (shooting)
  IntegratorKind integrator = IntegratorKind::Rk4;
  ControlKind control_kind = ControlKind::PiecewiseLinear;
  int poly_order = 0;  // orthogonal collocation only

  int segments_for(std::size_t phase) const {
    if (segments_per_phase.empty()) {
      throw std::invalid_argument("grid: segments_per_phase is empty");
    }
    if (segments_per_phase.size() == 1) return segments_per_phase[0];
    if (phase >= segments_per_phase.size()) {
      throw std::invalid_argument("grid: no segment count for phase " + std::to_string(phase));
    }
    return segments_per_phase[phase];
  }
};

// Marks a problem's trailing control channels as time-invariant parameters:
// control_dim grows by param_dims, the given bounds attach to the new
// channels, and every transcription emits linear rows pinning consecutive
// samples of those channels equal. The phase functions receive the
// parameters through their control argument.
inline Problem parameter_as_constant_control(Problem problem, int param_dims,
                                             const Eigen::VectorXd& lower,
                                             const Eigen::VectorXd& upper) {
  if (param_dims < 1) throw std::invalid_argument("parameter_as_constant_control: param_dims >= 1");
  if (lower.size() != param_dims || upper.size() != param_dims) {
    throw std::invalid_argument("parameter_as_constant_control: bound sizes must match param_dims");
  }
  for (auto& ph : problem.phases) {
    const int m = ph.control_dim;
    ph.control_dim = m + param_dims;
    Eigen::VectorXd lo(m + param_dims), hi(m + param_dims);
    lo.head(m) = ph.control_bounds.lower;
    hi.head(m) = ph.control_bounds.upper;
    lo.tail(param_dims) = lower;
    hi.tail(param_dims) = upper;
    ph.control_bounds = Bounds::box(lo, hi);
    ph.param_channels += param_dims;
  }
  return problem;
}

// Adds weight * |u|^2 to each phase's running cost; the transcription then
// integrates it with the same quadrature as the rest of the cost, i.e. the
// objective gains weight * sum of u^2 * dt over the grid. Weight zero leaves
// objective values unchanged.
inline Problem add_regularization(Problem problem, double weight) {
  if (weight < 0.0) throw std::invalid_argument("add_regularization: weight must be >= 0");
  for (auto& ph : problem.phases) {
    if (ph.running_cost) {
      ph.running_cost = [g = ph.running_cost, weight](double t, const Eigen::VectorXd& x,
                                                      const Eigen::VectorXd& u) {
        return g(t, x, u) + weight * u.squaredNorm();
      };
    } else {
      ph.running_cost = [weight](double, const Eigen::VectorXd&, const Eigen::VectorXd& u) {
        return weight * u.squaredNorm();
      };
    }
  }
  return problem;
}

namespace detail {

struct PhaseMeta {
  int n = 0;  // state dim
  int m = 0;  // control dim
  int N = 0;  // segments
  int S = 1;  // integration substeps per segment

  bool has_duration_var = false;
  double fixed_duration = 0.0;

  Layout::Span x_span{0, 0};      // state columns (meaning depends on method)
  Layout::Span u_span{0, 0};      // control sample columns
  Layout::Span t_span{0, 0};      // duration variable
  Layout::Span xinit_span{0, 0};  // single shooting only

  Eigen::Index n_state_cols = 0;
  Eigen::Index n_control_cols = 0;

  Eigen::VectorXd state_tau;           // normalized time per decoded state column
  Eigen::VectorXd control_break_tau;   // interpolant breakpoints
  Eigen::VectorXd control_sample_tau;  // normalized time per control column
  ControlKind control_kind = ControlKind::PiecewiseLinear;

  // Orthogonal collocation per-segment reference data (ascending node order).
  ChebGrid seg_grid;
};

struct Ctx {
  Problem problem;
  GridSpec grid;
  Method method;
  std::vector<PhaseMeta> phases;

  double duration(const Eigen::VectorXd& z, std::size_t p) const {
    const PhaseMeta& pm = phases[p];
    return pm.has_duration_var ? z[pm.t_span.offset] : pm.fixed_duration;
  }

  double phase_start(const Eigen::VectorXd& z, std::size_t p) const {
    double t = 0.0;
    for (std::size_t q = 0; q < p; ++q) t += duration(z, q);
    return t;
  }

  double total_duration(const Eigen::VectorXd& z) const { return phase_start(z, phases.size()); }

  // State variable columns as stored in z (multiple shooting stores one per
  // segment start; decode adds the simulated phase end on top).
  Eigen::Map<const Eigen::MatrixXd> states_of(const Eigen::VectorXd& z, std::size_t p) const {
    const PhaseMeta& pm = phases[p];
    return {z.data() + pm.x_span.offset, pm.n, pm.x_span.size / pm.n};
  }

  Eigen::Map<const Eigen::MatrixXd> controls_of(const Eigen::VectorXd& z, std::size_t p) const {
    const PhaseMeta& pm = phases[p];
    return {z.data() + pm.u_span.offset, pm.m, pm.n_control_cols};
  }

  Eigen::VectorXd state_col(const Eigen::VectorXd& z, std::size_t p, Eigen::Index col) const {
    const PhaseMeta& pm = phases[p];
    return z.segment(pm.x_span.offset + col * pm.n, pm.n);
  }

  ControlInterpolant control_interp(const Eigen::VectorXd& z, std::size_t p) const {
    const PhaseMeta& pm = phases[p];
    return {pm.control_kind, pm.control_break_tau, controls_of(z, p)};
  }

  // Dynamics on the normalized phase clock: dx/dtau = T f(t0 + tau T, x, u).
  DynamicsFn scaled_dynamics(double t0_global, double T, std::size_t p) const {
    const DynamicsFn& f = problem.phases[p].dynamics;
    return [&f, t0_global, T](double tau, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
      return Eigen::VectorXd(T * f(t0_global + tau * T, x, u));
    };
  }

  // Scaled dynamics with the running cost riding as an extra state.
  DynamicsFn scaled_augmented(double t0_global, double T, std::size_t p) const {
    const DynamicsFn& f = problem.phases[p].dynamics;
    const RunningCostFn& g = problem.phases[p].running_cost;
    return augment_cost_integrand(
        [&f, t0_global, T](double tau, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
          return Eigen::VectorXd(T * f(t0_global + tau * T, x, u));
        },
        [&g, t0_global, T](double tau, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
          return T * g(t0_global + tau * T, x, u);
        });
  }

  // Final state of one shooting segment, starting from the stored segment
  // start variable.
  Eigen::VectorXd simulate_segment_end(const Eigen::VectorXd& z, std::size_t p,
                                       Eigen::Index seg) const {
    const PhaseMeta& pm = phases[p];
    const double T = duration(z, p);
    const double t0g = phase_start(z, p);
    const DynamicsFn f = scaled_dynamics(t0g, T, p);
    const ControlInterpolant u = control_interp(z, p);
    const double h = 1.0 / (static_cast<double>(pm.N) * pm.S);
    const double tau0 = static_cast<double>(seg) / pm.N;
    const StepTrace trace =
        simulate_segment(f, tau0, state_col(z, p, seg), u, h, pm.S, grid.integrator);
    return trace.final_state();
  }

  // Chained single-shooting pass. Calls `visit(p, node, tau, x)` at every
  // segment node of every phase, including both phase endpoints, and returns
  // the final state of the last phase.
  template <typename Visitor>
  Eigen::VectorXd shoot_chain(const Eigen::VectorXd& z, Visitor&& visit) const {
    Eigen::VectorXd x;
    if (problem.fixed_initial_state.size() > 0) {
      x = problem.fixed_initial_state;
    } else {
      x = z.segment(phases[0].xinit_span.offset, phases[0].n);
    }
    for (std::size_t p = 0; p < phases.size(); ++p) {
      const PhaseMeta& pm = phases[p];
      if (p > 0) x = problem.transitions[p - 1](x);
      const double T = duration(z, p);
      const double t0g = phase_start(z, p);
      const DynamicsFn f = scaled_dynamics(t0g, T, p);
      const ControlInterpolant u = control_interp(z, p);
      const double h = 1.0 / (static_cast<double>(pm.N) * pm.S);
      visit(p, Eigen::Index{0}, 0.0, x);
      for (int seg = 0; seg < pm.N; ++seg) {
        const double tau0 = static_cast<double>(seg) / pm.N;
        const StepTrace trace = simulate_segment(f, tau0, x, u, h, pm.S, grid.integrator);
        x = trace.final_state();
        visit(p, Eigen::Index{seg + 1}, static_cast<double>(seg + 1) / pm.N, x);
      }
    }
    return x;
  }

  Eigen::VectorXd problem_initial_state(const Eigen::VectorXd& z) const {
    if (method == Method::SingleShooting) {
      if (problem.fixed_initial_state.size() > 0) return problem.fixed_initial_state;
      return z.segment(phases[0].xinit_span.offset, phases[0].n);
    }
    return state_col(z, 0, 0);
  }

  Eigen::VectorXd phase_final_state(const Eigen::VectorXd& z, std::size_t p) const {
    const PhaseMeta& pm = phases[p];
    switch (method) {
      case Method::SingleShooting:
        return shoot_chain(z, [](std::size_t, Eigen::Index, double, const Eigen::VectorXd&) {});
      case Method::MultipleShooting:
        return simulate_segment_end(z, p, pm.N - 1);
      default:
        return state_col(z, p, pm.n_state_cols - 1);
    }
  }
};

inline void append_span(std::vector<Eigen::Index>& out, Layout::Span span) {
  for (Eigen::Index i = 0; i < span.size; ++i) out.push_back(span.offset + i);
}

inline void append_state_col(std::vector<Eigen::Index>& out, const PhaseMeta& pm,
                             Eigen::Index col) {
  for (Eigen::Index i = 0; i < pm.n; ++i) out.push_back(pm.x_span.offset + col * pm.n + i);
}

inline void append_control_col(std::vector<Eigen::Index>& out, const PhaseMeta& pm,
                               Eigen::Index col) {
  for (Eigen::Index i = 0; i < pm.m; ++i) out.push_back(pm.u_span.offset + col * pm.m + i);
}

// Control sample columns that can influence segment `seg`.
inline void append_segment_controls(std::vector<Eigen::Index>& out, const PhaseMeta& pm,
                                    Eigen::Index seg) {
  if (pm.control_kind == ControlKind::HoldConstant) {
    append_control_col(out, pm, seg);
  } else {
    append_control_col(out, pm, seg);
    append_control_col(out, pm, seg + 1);
  }
}

// Control sample columns that determine u at node `node`.
inline void append_node_controls(std::vector<Eigen::Index>& out, const PhaseMeta& pm,
                                 Eigen::Index node) {
  if (pm.control_kind == ControlKind::HoldConstant) {
    append_control_col(out, pm, std::min<Eigen::Index>(node, pm.n_control_cols - 1));
  } else {
    append_control_col(out, pm, node);
  }
}

inline std::vector<Eigen::Index> duration_vars_up_to(const Ctx& ctx, std::size_t p_inclusive) {
  std::vector<Eigen::Index> out;
  for (std::size_t q = 0; q <= p_inclusive && q < ctx.phases.size(); ++q) {
    if (ctx.phases[q].has_duration_var) out.push_back(ctx.phases[q].t_span.offset);
  }
  return out;
}

// Piecewise-linear resample of column data; zero-width source intervals
// (duplicated knot times) are skipped. Queries outside the source range
// clamp to the nearest endpoint.
inline Eigen::MatrixXd resample_linear(const Eigen::VectorXd& src_t, const Eigen::MatrixXd& src_v,
                                       const Eigen::VectorXd& dst_t) {
  Eigen::MatrixXd out(src_v.rows(), dst_t.size());
  for (Eigen::Index q = 0; q < dst_t.size(); ++q) {
    const double t = dst_t[q];
    if (t <= src_t[0]) {
      out.col(q) = src_v.col(0);
      continue;
    }
    const Eigen::Index last = src_t.size() - 1;
    if (t >= src_t[last]) {
      out.col(q) = src_v.col(last);
      continue;
    }
    Eigen::Index k = 0;
    while (k + 1 < last && src_t[k + 1] <= t) ++k;
    const double span = src_t[k + 1] - src_t[k];
    if (span <= 0.0) {
      out.col(q) = src_v.col(k + 1);
      continue;
    }
    const double a = (t - src_t[k]) / span;
    out.col(q) = src_v.col(k) + a * (src_v.col(k + 1) - src_v.col(k));
  }
  return out;
}

}  // namespace detail

struct Transcription {
  std::shared_ptr<const detail::Ctx> ctx;
  NlpProblem nlp;
  std::vector<Eigen::Index> defect_rows;  // nonlinear constraint rows that are defects

  const Problem& problem() const { return ctx->problem; }
  const GridSpec& grid() const { return ctx->grid; }

  Trajectory decode(const Eigen::VectorXd& z) const;
  Eigen::VectorXd encode(const Trajectory& traj) const;
};

inline const SparsityPattern& jacobian_sparsity(const Transcription& t) { return t.nlp.sparsity; }

namespace detail {

class Transcriber {
 public:
  Transcriber(const Problem& problem, const GridSpec& grid) {
    const auto diags = validate(problem);
    if (!diags.empty()) {
      std::string msg = "transcribe: problem fails validation:";
      for (const auto& d : diags) msg += "\n  - " + d;
      throw std::invalid_argument(msg);
    }
    if (grid.substeps < 1) throw std::invalid_argument("transcribe: substeps must be >= 1");
    if (grid.method == Method::MultipleShooting) {
      for (std::size_t p = 0; p < problem.phases.size(); ++p) {
        if (grid.segments_for(p) < 2) {
          throw std::invalid_argument(
              "transcribe: multiple shooting needs >= 2 segments per phase; use single shooting "
              "for one segment");
        }
      }
    }
    if (grid.method == Method::OrthogonalCollocation && grid.poly_order < 2) {
      throw std::invalid_argument("transcribe: orthogonal collocation needs poly_order >= 2");
    }

    ctx_ = std::make_shared<Ctx>();
    ctx_->problem = problem;
    ctx_->grid = grid;
    ctx_->method = grid.method;
  }

  Transcription build() {
    layout_variables();
    switch (ctx_->method) {
      case Method::SingleShooting: build_single_shooting(); break;
      case Method::MultipleShooting: build_multiple_shooting(); break;
      case Method::DirectTranscription: build_direct_transcription(); break;
      case Method::DirectCollocation: build_direct_collocation(); break;
      case Method::OrthogonalCollocation: build_orthogonal_collocation(); break;
    }
    add_path_constraints();
    add_boundary_rows();
    add_cost_terms();
    add_param_constancy_rows();

    Transcription out;
    out.ctx = ctx_;
    out.defect_rows = builder_.defect_rows();
    out.nlp = builder_.build();
    return out;
  }

 private:
  void layout_variables() {
    const Problem& problem = ctx_->problem;
    const GridSpec& grid = ctx_->grid;
    for (std::size_t p = 0; p < problem.phases.size(); ++p) {
      const Phase& ph = problem.phases[p];
      PhaseMeta pm;
      pm.n = ph.state_dim;
      pm.m = ph.control_dim;
      pm.N = grid.segments_for(p);
      pm.S = grid.substeps;
      pm.has_duration_var = !ph.fixed_duration();
      pm.fixed_duration = ph.duration_min;
      const std::string id = std::to_string(p);

      // Control parameterization per method. The segment boundaries carry
      // the control samples; shooting substeps only refine the integration.
      switch (ctx_->method) {
        case Method::DirectTranscription: pm.control_kind = ControlKind::HoldConstant; break;
        case Method::DirectCollocation: pm.control_kind = ControlKind::PiecewiseLinear; break;
        case Method::OrthogonalCollocation: pm.control_kind = ControlKind::PiecewiseLinear; break;
        default: pm.control_kind = grid.control_kind; break;
      }

      if (ctx_->method == Method::OrthogonalCollocation) {
        pm.seg_grid = ascending(ChebGrid::build(grid.poly_order));
        const Eigen::Index nodes_per_seg = grid.poly_order + 1;
        pm.n_state_cols = pm.N * nodes_per_seg;
        pm.n_control_cols = pm.n_state_cols;
        pm.state_tau.resize(pm.n_state_cols);
        for (int seg = 0; seg < pm.N; ++seg) {
          for (Eigen::Index i = 0; i < nodes_per_seg; ++i) {
            pm.state_tau[seg * nodes_per_seg + i] =
                (seg + 0.5 * (pm.seg_grid.points[i] + 1.0)) / pm.N;
          }
        }
        pm.control_sample_tau = pm.state_tau;
        pm.control_break_tau = pm.state_tau;  // per-node samples; knots may jump
      } else {
        pm.n_state_cols = pm.N + 1;  // decoded trajectory nodes
        pm.state_tau.setLinSpaced(pm.N + 1, 0.0, 1.0);
        pm.control_break_tau.setLinSpaced(pm.N + 1, 0.0, 1.0);
        if (pm.control_kind == ControlKind::HoldConstant) {
          pm.n_control_cols = pm.N;
          pm.control_sample_tau.resize(pm.N);
          for (int k = 0; k < pm.N; ++k) pm.control_sample_tau[k] = (k + 0.5) / pm.N;
        } else {
          pm.n_control_cols = pm.N + 1;
          pm.control_sample_tau = pm.control_break_tau;
        }
      }

      // State variables.
      if (ctx_->method == Method::SingleShooting) {
        if (p == 0 && problem.fixed_initial_state.size() == 0) {
          pm.xinit_span = builder_.add_var("xinit" + id, pm.n, 1, ph.state_bounds.lower,
                                           ph.state_bounds.upper);
        }
      } else {
        const Eigen::Index cols =
            ctx_->method == Method::MultipleShooting ? pm.N : pm.n_state_cols;
        Eigen::MatrixXd lo = ph.state_bounds.lower.replicate(1, cols);
        Eigen::MatrixXd hi = ph.state_bounds.upper.replicate(1, cols);
        if (p == 0 && problem.fixed_initial_state.size() > 0) {
          lo.col(0) = problem.fixed_initial_state;
          hi.col(0) = problem.fixed_initial_state;
        }
        pm.x_span = builder_.add_var("x" + id, pm.n, cols, lo, hi);
      }

      // Control samples.
      if (pm.m > 0) {
        pm.u_span = builder_.add_var("u" + id, pm.m, pm.n_control_cols,
                                     ph.control_bounds.lower.replicate(1, pm.n_control_cols),
                                     ph.control_bounds.upper.replicate(1, pm.n_control_cols));
      }

      // Phase duration.
      if (pm.has_duration_var) {
        pm.t_span = builder_.add_var("T" + id, 1, 1, ph.duration_min, ph.duration_max);
      }

      ctx_->phases.push_back(std::move(pm));
    }
  }

  // --- shooting methods -----------------------------------------------

  void build_single_shooting() {
    // Dynamics live entirely inside the simulations; no defect rows. A
    // periodic problem still needs its wrap row, emitted with the boundary
    // rows below.
  }

  void build_multiple_shooting() {
    const auto ctx = ctx_;
    for (std::size_t p = 0; p < ctx->phases.size(); ++p) {
      const PhaseMeta& pm = ctx->phases[p];
      // Interior defects: simulated end of segment k-1 minus the stored
      // start of segment k.
      for (Eigen::Index k = 1; k < pm.N; ++k) {
        std::vector<Eigen::Index> deps;
        append_state_col(deps, pm, k - 1);
        append_segment_controls(deps, pm, k - 1);
        append_state_col(deps, pm, k);
        for (const Eigen::Index t : duration_vars_up_to(*ctx, p)) deps.push_back(t);
        add_equality_block(
            [ctx, p, k](const Eigen::VectorXd& z) {
              return Eigen::VectorXd(ctx->simulate_segment_end(z, p, k - 1) -
                                     ctx->state_col(z, p, k));
            },
            pm.n, deps, /*is_defect=*/true);
      }
    }
    add_transition_rows(/*as_defects=*/true);
  }

  // --- simultaneous methods ---------------------------------------------

  void build_direct_transcription() {
    const auto ctx = ctx_;
    for (std::size_t p = 0; p < ctx->phases.size(); ++p) {
      const PhaseMeta& pm = ctx->phases[p];
      const double h_tau = 1.0 / pm.N;
      for (Eigen::Index k = 0; k < pm.N; ++k) {
        std::vector<Eigen::Index> deps;
        append_state_col(deps, pm, k);
        append_control_col(deps, pm, k);
        append_state_col(deps, pm, k + 1);
        for (const Eigen::Index t : duration_vars_up_to(*ctx, p)) deps.push_back(t);
        add_equality_block(
            [ctx, p, k, h_tau](const Eigen::VectorXd& z) {
              const PhaseMeta& pm = ctx->phases[p];
              const double T = ctx->duration(z, p);
              const double t_k = ctx->phase_start(z, p) + (static_cast<double>(k) / pm.N) * T;
              const Eigen::VectorXd x_k = ctx->state_col(z, p, k);
              const Eigen::VectorXd u_k = ctx->controls_of(z, p).col(k);
              const Eigen::VectorXd f_k = ctx->problem.phases[p].dynamics(t_k, x_k, u_k);
              return Eigen::VectorXd(x_k + h_tau * T * f_k - ctx->state_col(z, p, k + 1));
            },
            pm.n, deps, /*is_defect=*/true);
      }
    }
    add_transition_rows(/*as_defects=*/true);
  }

  void build_direct_collocation() {
    // Hermite cubic on each interval: with f_k = f(t_k, x_k, u_k) the cubic
    // through (x_k, f_k) and (x_{k+1}, f_{k+1}) has midpoint value
    //   x_m = (x_k + x_{k+1})/2 + h/8 (f_k - f_{k+1})
    // and midpoint slope
    //   xdot_m = -3/(2h) (x_k - x_{k+1}) - (f_k + f_{k+1})/4,
    // which the collocation defect pins to the dynamics at the midpoint.
    const auto ctx = ctx_;
    for (std::size_t p = 0; p < ctx->phases.size(); ++p) {
      const PhaseMeta& pm = ctx->phases[p];
      for (Eigen::Index k = 0; k < pm.N; ++k) {
        std::vector<Eigen::Index> deps;
        append_state_col(deps, pm, k);
        append_state_col(deps, pm, k + 1);
        append_control_col(deps, pm, k);
        append_control_col(deps, pm, k + 1);
        for (const Eigen::Index t : duration_vars_up_to(*ctx, p)) deps.push_back(t);
        add_equality_block(
            [ctx, p, k](const Eigen::VectorXd& z) {
              const PhaseMeta& pm = ctx->phases[p];
              const DynamicsFn& f = ctx->problem.phases[p].dynamics;
              const double T = ctx->duration(z, p);
              const double h = T / pm.N;
              const double t_k = ctx->phase_start(z, p) + (static_cast<double>(k) / pm.N) * T;
              const Eigen::VectorXd x_k = ctx->state_col(z, p, k);
              const Eigen::VectorXd x_k1 = ctx->state_col(z, p, k + 1);
              const Eigen::VectorXd u_k = ctx->controls_of(z, p).col(k);
              const Eigen::VectorXd u_k1 = ctx->controls_of(z, p).col(k + 1);
              const Eigen::VectorXd f_k = f(t_k, x_k, u_k);
              const Eigen::VectorXd f_k1 = f(t_k + h, x_k1, u_k1);
              const Eigen::VectorXd x_m =
                  0.5 * (x_k + x_k1) + (h / 8.0) * (f_k - f_k1);
              const Eigen::VectorXd xdot_m =
                  -(1.5 / h) * (x_k - x_k1) - 0.25 * (f_k + f_k1);
              const Eigen::VectorXd u_m = 0.5 * (u_k + u_k1);
              return Eigen::VectorXd(xdot_m - f(t_k + 0.5 * h, x_m, u_m));
            },
            pm.n, deps, /*is_defect=*/true);
      }
    }
    add_transition_rows(/*as_defects=*/true);
  }

  void build_orthogonal_collocation() {
    const auto ctx = ctx_;
    for (std::size_t p = 0; p < ctx->phases.size(); ++p) {
      const PhaseMeta& pm = ctx->phases[p];
      const Eigen::Index nodes = pm.seg_grid.points.size();
      for (Eigen::Index seg = 0; seg < pm.N; ++seg) {
        // Derivative-form defects at every node of the segment:
        // p'(t_i) - f(t_i, p(t_i), u_i) = 0, with p' from the
        // differentiation matrix scaled to the segment width T/N.
        std::vector<std::vector<Eigen::Index>> row_deps;
        std::vector<Eigen::Index> seg_state_deps;
        for (Eigen::Index i = 0; i < nodes; ++i) {
          append_state_col(seg_state_deps, pm, seg * nodes + i);
        }
        const auto durations = duration_vars_up_to(*ctx, p);
        for (Eigen::Index i = 0; i < nodes; ++i) {
          std::vector<Eigen::Index> deps = seg_state_deps;
          append_control_col(deps, pm, seg * nodes + i);
          for (const Eigen::Index t : durations) deps.push_back(t);
          std::sort(deps.begin(), deps.end());
          for (Eigen::Index r = 0; r < pm.n; ++r) row_deps.push_back(deps);
        }
        builder_.add_block(
            [ctx, p, seg, nodes](const Eigen::VectorXd& z) {
              const PhaseMeta& pm = ctx->phases[p];
              const DynamicsFn& f = ctx->problem.phases[p].dynamics;
              const double T = ctx->duration(z, p);
              const double t0g = ctx->phase_start(z, p);
              const double width = T / pm.N;  // real segment width
              Eigen::MatrixXd x_nodes(pm.n, nodes);
              for (Eigen::Index i = 0; i < nodes; ++i) {
                x_nodes.col(i) = ctx->state_col(z, p, seg * nodes + i);
              }
              // d/dt on the segment: reference matrix carries 2/width.
              const Eigen::MatrixXd dx = x_nodes * ctx->phases[p].seg_grid.diff_matrix.transpose() *
                                         (2.0 / width);
              Eigen::VectorXd out(pm.n * nodes);
              for (Eigen::Index i = 0; i < nodes; ++i) {
                const double tau = pm.state_tau[seg * nodes + i];
                const double t_i = t0g + tau * T;
                const Eigen::VectorXd u_i = ctx->controls_of(z, p).col(seg * nodes + i);
                out.segment(i * pm.n, pm.n) = dx.col(i) - f(t_i, x_nodes.col(i), u_i);
              }
              return out;
            },
            Eigen::VectorXd::Zero(pm.n * nodes), Eigen::VectorXd::Zero(pm.n * nodes),
            std::move(row_deps), /*is_defect=*/true);
      }
      // Knot continuity: shared endpoint states of adjacent segments match;
      // the control may jump.
      for (Eigen::Index seg = 0; seg + 1 < pm.N; ++seg) {
        std::vector<Eigen::Index> deps;
        append_state_col(deps, pm, seg * nodes + (nodes - 1));
        append_state_col(deps, pm, (seg + 1) * nodes);
        add_equality_block(
            [ctx, p, seg, nodes](const Eigen::VectorXd& z) {
              return Eigen::VectorXd(ctx->state_col(z, p, seg * nodes + nodes - 1) -
                                     ctx->state_col(z, p, (seg + 1) * nodes));
            },
            pm.n, deps, /*is_defect=*/true);
      }
    }
    add_transition_rows(/*as_defects=*/true);
  }

  // --- shared row groups ------------------------------------------------

  // Phase-linking rows x_plus - trans(x_minus) = 0, including the periodic
  // wrap from the last phase back onto the first.
  void add_transition_rows(bool as_defects) {
    const auto ctx = ctx_;
    const Problem& problem = ctx->problem;
    const std::size_t n_phases = ctx->phases.size();
    for (std::size_t k = 0; k < problem.transitions.size(); ++k) {
      const std::size_t from = k;
      const bool wrap = k + 1 == n_phases;  // periodic only
      const std::size_t to = wrap ? 0 : k + 1;
      const PhaseMeta& pm_from = ctx->phases[from];
      const PhaseMeta& pm_to = ctx->phases[to];

      std::vector<Eigen::Index> deps;
      if (ctx->method == Method::MultipleShooting) {
        append_state_col(deps, pm_from, pm_from.N - 1);
        append_segment_controls(deps, pm_from, pm_from.N - 1);
        for (const Eigen::Index t : duration_vars_up_to(*ctx, from)) deps.push_back(t);
      } else {
        append_state_col(deps, pm_from, pm_from.n_state_cols - 1);
      }
      append_state_col(deps, pm_to, 0);

      add_equality_block(
          [ctx, from, to](const Eigen::VectorXd& z) {
            const Eigen::VectorXd x_minus = ctx->phase_final_state(z, from);
            return Eigen::VectorXd(ctx->problem.transitions[from](x_minus) -
                                   ctx->state_col(z, to, 0));
          },
          pm_to.n, deps, as_defects);
    }
  }

  void add_path_constraints() {
    const auto ctx = ctx_;
    if (ctx->method == Method::SingleShooting) {
      add_single_shooting_path_rows();
      return;
    }
    for (std::size_t p = 0; p < ctx->phases.size(); ++p) {
      const Phase& ph = ctx->problem.phases[p];
      if (!ph.path_constraint) continue;
      const PhaseMeta& pm = ctx->phases[p];
      const Eigen::Index nc = ph.path_bounds.size();
      const Eigen::Index n_nodes = pm.n_state_cols;
      for (Eigen::Index node = 0; node < n_nodes; ++node) {
        const bool simulated_end =
            ctx->method == Method::MultipleShooting && node == n_nodes - 1;
        std::vector<Eigen::Index> deps;
        if (simulated_end) {
          append_state_col(deps, pm, pm.N - 1);
          append_segment_controls(deps, pm, pm.N - 1);
        } else {
          append_state_col(deps, pm, node);
        }
        append_node_controls(deps, pm, node);
        for (const Eigen::Index t : duration_vars_up_to(*ctx, p)) deps.push_back(t);
        builder_.add_block(
            [ctx, p, node, simulated_end](const Eigen::VectorXd& z) {
              const PhaseMeta& pm = ctx->phases[p];
              const double T = ctx->duration(z, p);
              const double tau = pm.state_tau[node];
              const double t = ctx->phase_start(z, p) + tau * T;
              const Eigen::VectorXd x = simulated_end
                                            ? ctx->simulate_segment_end(z, p, pm.N - 1)
                                            : ctx->state_col(z, p, node);
              // Orthogonal collocation has a control sample at every node;
              // the shooting and transcription grids interpolate.
              const Eigen::VectorXd u = ctx->method == Method::OrthogonalCollocation
                                            ? Eigen::VectorXd(ctx->controls_of(z, p).col(node))
                                            : ctx->control_interp(z, p)(tau);
              return ctx->problem.phases[p].path_constraint(t, x, u);
            },
            ph.path_bounds.lower, ph.path_bounds.upper,
            std::vector<std::vector<Eigen::Index>>(static_cast<std::size_t>(nc),
                                                   sorted(std::move(deps))),
            /*is_defect=*/false);
      }
    }
  }

  void add_single_shooting_path_rows() {
    const auto ctx = ctx_;
    Eigen::Index total_rows = 0;
    std::vector<std::vector<Eigen::Index>> row_deps;
    std::vector<double> lo, hi;
    // Everything simulated from the very start can depend on every control
    // decision up to that point; single shooting pays for its small variable
    // count with dense rows.
    for (std::size_t p = 0; p < ctx->phases.size(); ++p) {
      const Phase& ph = ctx->problem.phases[p];
      if (!ph.path_constraint) continue;
      const PhaseMeta& pm = ctx->phases[p];
      std::vector<Eigen::Index> deps = chain_deps(p);
      std::sort(deps.begin(), deps.end());
      for (Eigen::Index node = 0; node <= pm.N; ++node) {
        for (Eigen::Index r = 0; r < ph.path_bounds.size(); ++r) {
          row_deps.push_back(deps);
          lo.push_back(ph.path_bounds.lower[r]);
          hi.push_back(ph.path_bounds.upper[r]);
          ++total_rows;
        }
      }
    }
    if (total_rows == 0) return;

    Eigen::VectorXd lower(total_rows), upper(total_rows);
    for (Eigen::Index i = 0; i < total_rows; ++i) {
      lower[i] = lo[static_cast<std::size_t>(i)];
      upper[i] = hi[static_cast<std::size_t>(i)];
    }
    builder_.add_block(
        [ctx, total_rows](const Eigen::VectorXd& z) {
          Eigen::VectorXd out(total_rows);
          Eigen::Index at = 0;
          ctx->shoot_chain(z, [&](std::size_t p, Eigen::Index, double tau,
                                  const Eigen::VectorXd& x) {
            const Phase& ph = ctx->problem.phases[p];
            if (!ph.path_constraint) return;
            const double T = ctx->duration(z, p);
            const double t = ctx->phase_start(z, p) + tau * T;
            const Eigen::VectorXd u = ctx->control_interp(z, p)(tau);
            out.segment(at, ph.path_bounds.size()) = ph.path_constraint(t, x, u);
            at += ph.path_bounds.size();
          });
          return out;
        },
        lower, upper, std::move(row_deps), /*is_defect=*/false);
  }

  void add_boundary_rows() {
    const auto ctx = ctx_;
    const Problem& problem = ctx->problem;
    const std::size_t last = ctx->phases.size() - 1;

    if (problem.boundary_constraint) {
      std::vector<Eigen::Index> deps = final_state_deps();
      append_initial_state_deps(deps);
      for (const Eigen::Index t : duration_vars_up_to(*ctx, last)) deps.push_back(t);
      builder_.add_block(
          [ctx, last](const Eigen::VectorXd& z) {
            return ctx->problem.boundary_constraint(0.0, ctx->problem_initial_state(z),
                                                    ctx->total_duration(z),
                                                    ctx->phase_final_state(z, last));
          },
          problem.boundary_bounds.lower, problem.boundary_bounds.upper,
          std::vector<std::vector<Eigen::Index>>(
              static_cast<std::size_t>(problem.boundary_bounds.size()), sorted(std::move(deps))),
          /*is_defect=*/false);
    }

    // Single shooting handles transitions inside its chain, so only the
    // periodic wrap needs an explicit row; it stays out of the defect map
    // because no shooting defects exist in this method.
    if (ctx->method == Method::SingleShooting && problem.periodic) {
      std::vector<Eigen::Index> deps = final_state_deps();
      append_initial_state_deps(deps);
      for (const Eigen::Index t : duration_vars_up_to(*ctx, last)) deps.push_back(t);
      add_equality_block(
          [ctx, last](const Eigen::VectorXd& z) {
            const Eigen::VectorXd x_end = ctx->phase_final_state(z, last);
            return Eigen::VectorXd(ctx->problem.transitions.back()(x_end) -
                                   ctx->problem_initial_state(z));
          },
          ctx->phases[0].n, deps, /*is_defect=*/false);
    }
  }

  void add_cost_terms() {
    const auto ctx = ctx_;
    for (std::size_t p = 0; p < ctx->phases.size(); ++p) {
      if (!ctx->problem.phases[p].running_cost) continue;
      switch (ctx->method) {
        case Method::SingleShooting: add_single_shooting_cost(p); break;
        case Method::MultipleShooting: add_multiple_shooting_cost(p); break;
        case Method::DirectTranscription: add_direct_transcription_cost(p); break;
        case Method::DirectCollocation: add_direct_collocation_cost(p); break;
        case Method::OrthogonalCollocation: add_orthogonal_collocation_cost(p); break;
      }
    }
    if (ctx->problem.mayer_cost) {
      const std::size_t last = ctx->phases.size() - 1;
      std::vector<Eigen::Index> deps = final_state_deps();
      append_initial_state_deps(deps);
      for (const Eigen::Index t : duration_vars_up_to(*ctx, last)) deps.push_back(t);
      builder_.add_objective_term(
          [ctx, last](const Eigen::VectorXd& z) {
            return ctx->problem.mayer_cost(0.0, ctx->problem_initial_state(z),
                                           ctx->total_duration(z),
                                           ctx->phase_final_state(z, last));
          },
          sorted(std::move(deps)));
    }
  }

  void add_single_shooting_cost(std::size_t p) {
    const auto ctx = ctx_;
    builder_.add_objective_term(
        [ctx, p](const Eigen::VectorXd& z) {
          // Chain up to phase p, then integrate the phase with the cost
          // state appended.
          Eigen::VectorXd x;
          if (ctx->problem.fixed_initial_state.size() > 0) {
            x = ctx->problem.fixed_initial_state;
          } else {
            x = z.segment(ctx->phases[0].xinit_span.offset, ctx->phases[0].n);
          }
          for (std::size_t q = 0; q < p; ++q) {
            if (q > 0) x = ctx->problem.transitions[q - 1](x);
            const PhaseMeta& pmq = ctx->phases[q];
            const StepTrace trace = simulate_segment(
                ctx->scaled_dynamics(ctx->phase_start(z, q), ctx->duration(z, q), q), 0.0, x,
                ctx->control_interp(z, q), 1.0 / (static_cast<double>(pmq.N) * pmq.S),
                pmq.N * pmq.S, ctx->grid.integrator);
            x = trace.final_state();
          }
          if (p > 0) x = ctx->problem.transitions[p - 1](x);
          const PhaseMeta& pm = ctx->phases[p];
          Eigen::VectorXd xa(pm.n + 1);
          xa.head(pm.n) = x;
          xa[pm.n] = 0.0;
          const StepTrace trace = simulate_segment(
              ctx->scaled_augmented(ctx->phase_start(z, p), ctx->duration(z, p), p), 0.0, xa,
              ctx->control_interp(z, p), 1.0 / (static_cast<double>(pm.N) * pm.S), pm.N * pm.S,
              ctx->grid.integrator);
          return trace.final_state()[pm.n];
        },
        sorted(chain_deps(p)));
  }

  void add_multiple_shooting_cost(std::size_t p) {
    const auto ctx = ctx_;
    const PhaseMeta& pm = ctx->phases[p];
    for (Eigen::Index seg = 0; seg < pm.N; ++seg) {
      std::vector<Eigen::Index> deps;
      append_state_col(deps, pm, seg);
      append_segment_controls(deps, pm, seg);
      for (const Eigen::Index t : duration_vars_up_to(*ctx, p)) deps.push_back(t);
      builder_.add_objective_term(
          [ctx, p, seg](const Eigen::VectorXd& z) {
            const PhaseMeta& pm = ctx->phases[p];
            Eigen::VectorXd xa(pm.n + 1);
            xa.head(pm.n) = ctx->state_col(z, p, seg);
            xa[pm.n] = 0.0;
            const StepTrace trace = simulate_segment(
                ctx->scaled_augmented(ctx->phase_start(z, p), ctx->duration(z, p), p),
                static_cast<double>(seg) / pm.N, xa, ctx->control_interp(z, p),
                1.0 / (static_cast<double>(pm.N) * pm.S), pm.S, ctx->grid.integrator);
            return trace.final_state()[pm.n];
          },
          sorted(std::move(deps)));
    }
  }

  void add_direct_transcription_cost(std::size_t p) {
    const auto ctx = ctx_;
    const PhaseMeta& pm = ctx->phases[p];
    for (Eigen::Index k = 0; k < pm.N; ++k) {
      std::vector<Eigen::Index> deps;
      append_state_col(deps, pm, k);
      append_control_col(deps, pm, k);
      for (const Eigen::Index t : duration_vars_up_to(*ctx, p)) deps.push_back(t);
      builder_.add_objective_term(
          [ctx, p, k](const Eigen::VectorXd& z) {
            const PhaseMeta& pm = ctx->phases[p];
            const double T = ctx->duration(z, p);
            const double t_k = ctx->phase_start(z, p) + (static_cast<double>(k) / pm.N) * T;
            return (T / pm.N) * ctx->problem.phases[p].running_cost(
                                    t_k, ctx->state_col(z, p, k), ctx->controls_of(z, p).col(k));
          },
          sorted(std::move(deps)));
    }
  }

  void add_direct_collocation_cost(std::size_t p) {
    // Simpson quadrature with the collocation midpoint; exactly the integral
    // of a cost state driven through the same Hermite cubic.
    const auto ctx = ctx_;
    const PhaseMeta& pm = ctx->phases[p];
    for (Eigen::Index k = 0; k < pm.N; ++k) {
      std::vector<Eigen::Index> deps;
      append_state_col(deps, pm, k);
      append_state_col(deps, pm, k + 1);
      append_control_col(deps, pm, k);
      append_control_col(deps, pm, k + 1);
      for (const Eigen::Index t : duration_vars_up_to(*ctx, p)) deps.push_back(t);
      builder_.add_objective_term(
          [ctx, p, k](const Eigen::VectorXd& z) {
            const PhaseMeta& pm = ctx->phases[p];
            const DynamicsFn& f = ctx->problem.phases[p].dynamics;
            const RunningCostFn& g = ctx->problem.phases[p].running_cost;
            const double T = ctx->duration(z, p);
            const double h = T / pm.N;
            const double t_k = ctx->phase_start(z, p) + (static_cast<double>(k) / pm.N) * T;
            const Eigen::VectorXd x_k = ctx->state_col(z, p, k);
            const Eigen::VectorXd x_k1 = ctx->state_col(z, p, k + 1);
            const Eigen::VectorXd u_k = ctx->controls_of(z, p).col(k);
            const Eigen::VectorXd u_k1 = ctx->controls_of(z, p).col(k + 1);
            const Eigen::VectorXd f_k = f(t_k, x_k, u_k);
            const Eigen::VectorXd f_k1 = f(t_k + h, x_k1, u_k1);
            const Eigen::VectorXd x_m = 0.5 * (x_k + x_k1) + (h / 8.0) * (f_k - f_k1);
            const Eigen::VectorXd u_m = 0.5 * (u_k + u_k1);
            return (h / 6.0) * (g(t_k, x_k, u_k) + 4.0 * g(t_k + 0.5 * h, x_m, u_m) +
                                g(t_k + h, x_k1, u_k1));
          },
          sorted(std::move(deps)));
    }
  }

  void add_orthogonal_collocation_cost(std::size_t p) {
    const auto ctx = ctx_;
    const PhaseMeta& pm = ctx->phases[p];
    const Eigen::Index nodes = pm.seg_grid.points.size();
    for (Eigen::Index seg = 0; seg < pm.N; ++seg) {
      std::vector<Eigen::Index> deps;
      for (Eigen::Index i = 0; i < nodes; ++i) {
        append_state_col(deps, pm, seg * nodes + i);
        append_control_col(deps, pm, seg * nodes + i);
      }
      for (const Eigen::Index t : duration_vars_up_to(*ctx, p)) deps.push_back(t);
      builder_.add_objective_term(
          [ctx, p, seg, nodes](const Eigen::VectorXd& z) {
            const PhaseMeta& pm = ctx->phases[p];
            const RunningCostFn& g = ctx->problem.phases[p].running_cost;
            const double T = ctx->duration(z, p);
            const double t0g = ctx->phase_start(z, p);
            const double width = T / pm.N;
            double total = 0.0;
            for (Eigen::Index i = 0; i < nodes; ++i) {
              const double tau = pm.state_tau[seg * nodes + i];
              // Reference weights sum to 2; scale by half the segment width.
              total += 0.5 * width * pm.seg_grid.quad_weights[i] *
                       g(t0g + tau * T, ctx->state_col(z, p, seg * nodes + i),
                         ctx->controls_of(z, p).col(seg * nodes + i));
            }
            return total;
          },
          sorted(std::move(deps)));
    }
  }

  // Linear constancy rows for parameter channels: consecutive samples of a
  // marked channel must be equal across the whole phase (and across phase
  // boundaries in multi-phase problems).
  void add_param_constancy_rows() {
    const auto ctx = ctx_;
    for (std::size_t p = 0; p < ctx->phases.size(); ++p) {
      const PhaseMeta& pm = ctx->phases[p];
      const int params = ctx->problem.phases[p].param_channels;
      for (int ch = pm.m - params; ch < pm.m; ++ch) {
        for (Eigen::Index k = 0; k + 1 < pm.n_control_cols; ++k) {
          builder_.add_linear_row({{pm.u_span.offset + (k + 1) * pm.m + ch, 1.0},
                                   {pm.u_span.offset + k * pm.m + ch, -1.0}},
                                  0.0, 0.0);
        }
        if (p + 1 < ctx->phases.size() &&
            ctx->problem.phases[p + 1].param_channels == params) {
          const PhaseMeta& pm_next = ctx->phases[p + 1];
          builder_.add_linear_row(
              {{pm_next.u_span.offset + ch, 1.0},
               {pm.u_span.offset + (pm.n_control_cols - 1) * pm.m + ch, -1.0}},
              0.0, 0.0);
        }
      }
    }
  }

  // --- helpers ------------------------------------------------------------

  static std::vector<Eigen::Index> sorted(std::vector<Eigen::Index> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
  }

  void add_equality_block(VectorFn fn, Eigen::Index rows, std::vector<Eigen::Index> deps,
                          bool is_defect) {
    builder_.add_block(std::move(fn), Eigen::VectorXd::Zero(rows), Eigen::VectorXd::Zero(rows),
                       std::vector<std::vector<Eigen::Index>>(static_cast<std::size_t>(rows),
                                                              sorted(std::move(deps))),
                       is_defect);
  }

  // Everything a single-shooting quantity evaluated in phase p can depend on.
  std::vector<Eigen::Index> chain_deps(std::size_t p_inclusive) const {
    std::vector<Eigen::Index> deps;
    if (ctx_->phases[0].xinit_span.size > 0) append_span(deps, ctx_->phases[0].xinit_span);
    for (std::size_t q = 0; q <= p_inclusive; ++q) {
      append_span(deps, ctx_->phases[q].u_span);
      if (ctx_->phases[q].has_duration_var) deps.push_back(ctx_->phases[q].t_span.offset);
    }
    return deps;
  }

  std::vector<Eigen::Index> final_state_deps() const {
    const std::size_t last = ctx_->phases.size() - 1;
    const PhaseMeta& pm = ctx_->phases[last];
    std::vector<Eigen::Index> deps;
    switch (ctx_->method) {
      case Method::SingleShooting:
        return chain_deps(last);
      case Method::MultipleShooting:
        append_state_col(deps, pm, pm.N - 1);
        append_segment_controls(deps, pm, pm.N - 1);
        for (const Eigen::Index t : duration_vars_up_to(*ctx_, last)) deps.push_back(t);
        return deps;
      default:
        append_state_col(deps, pm, pm.n_state_cols - 1);
        return deps;
    }
  }

  void append_initial_state_deps(std::vector<Eigen::Index>& deps) const {
    if (ctx_->method == Method::SingleShooting) {
      if (ctx_->phases[0].xinit_span.size > 0) append_span(deps, ctx_->phases[0].xinit_span);
    } else {
      append_state_col(deps, ctx_->phases[0], 0);
    }
  }

  std::shared_ptr<Ctx> ctx_;
  NlpBuilder builder_;
};

}  // namespace detail

inline Transcription transcribe(const Problem& problem, const GridSpec& grid) {
  detail::Transcriber t(problem, grid);
  return t.build();
}

inline Transcription transcribe_single_shooting(const Problem& problem, GridSpec grid) {
  grid.method = Method::SingleShooting;
  return transcribe(problem, grid);
}
inline Transcription transcribe_multiple_shooting(const Problem& problem, GridSpec grid) {
  grid.method = Method::MultipleShooting;
  return transcribe(problem, grid);
}
inline Transcription transcribe_direct_transcription(const Problem& problem, GridSpec grid) {
  grid.method = Method::DirectTranscription;
  return transcribe(problem, grid);
}
inline Transcription transcribe_direct_collocation(const Problem& problem, GridSpec grid) {
  grid.method = Method::DirectCollocation;
  return transcribe(problem, grid);
}
inline Transcription transcribe_orthogonal_collocation(const Problem& problem, GridSpec grid) {
  grid.method = Method::OrthogonalCollocation;
  return transcribe(problem, grid);
}

inline Transcription add_regularization(const Transcription& t, double weight) {
  return transcribe(add_regularization(t.problem(), weight), t.grid());
}

// ---------------------------------------------------------------------------
// Decode / encode

inline Trajectory Transcription::decode(const Eigen::VectorXd& z) const {
  if (z.size() != nlp.n_vars) {
    throw std::invalid_argument("decode: vector length " + std::to_string(z.size()) +
                                " does not match n_vars " + std::to_string(nlp.n_vars));
  }
  Trajectory traj;
  for (std::size_t p = 0; p < ctx->phases.size(); ++p) {
    const detail::PhaseMeta& pm = ctx->phases[p];
    const double T = ctx->duration(z, p);
    const double t0g = ctx->phase_start(z, p);

    PhaseTrajectory pt;
    pt.duration = T;
    pt.control_kind = pm.control_kind;
    pt.control_times = (pm.control_break_tau.array() * T + t0g).matrix();
    pt.controls = ctx->controls_of(z, p);
    pt.state_times = (pm.state_tau.array() * T + t0g).matrix();

    switch (ctx->method) {
      case Method::SingleShooting: {
        pt.states.resize(pm.n, pm.N + 1);
        break;
      }
      case Method::MultipleShooting: {
        pt.states.resize(pm.n, pm.N + 1);
        pt.states.leftCols(pm.N) = ctx->states_of(z, p);
        pt.states.col(pm.N) = ctx->simulate_segment_end(z, p, pm.N - 1);
        break;
      }
      default: {
        pt.states = ctx->states_of(z, p);
        break;
      }
    }
    traj.phases.push_back(std::move(pt));
  }
  if (ctx->method == Method::SingleShooting) {
    ctx->shoot_chain(z, [&traj](std::size_t p, Eigen::Index node, double,
                                const Eigen::VectorXd& x) {
      traj.phases[p].states.col(node) = x;
    });
  }
  return traj;
}

inline Eigen::VectorXd Transcription::encode(const Trajectory& traj) const {
  if (traj.phases.size() != ctx->phases.size()) {
    throw std::invalid_argument("encode: trajectory has " + std::to_string(traj.phases.size()) +
                                " phases, transcription expects " +
                                std::to_string(ctx->phases.size()));
  }
  Eigen::VectorXd z = Eigen::VectorXd::Zero(nlp.n_vars);

  for (std::size_t p = 0; p < ctx->phases.size(); ++p) {
    const detail::PhaseMeta& pm = ctx->phases[p];
    const PhaseTrajectory& pt = traj.phases[p];
    const Phase& ph = ctx->problem.phases[p];

    if (pt.state_times.size() != pt.states.cols() || pt.states.rows() != pm.n) {
      throw std::invalid_argument("encode: phase " + std::to_string(p) +
                                  " has inconsistent state sample shapes");
    }

    const double T = pm.has_duration_var
                         ? std::clamp(pt.duration, ph.duration_min, ph.duration_max)
                         : pm.fixed_duration;
    if (pm.has_duration_var) z[pm.t_span.offset] = T;

    // When the sample grid matches this transcription's own shape (same
    // counts, same normalized times), copy columns directly so that
    // decode/encode round-trips are exact. Otherwise resample linearly in
    // normalized phase time.
    const double src_T = pt.duration > 0.0 ? pt.duration : 1.0;
    Eigen::VectorXd src_state_tau = (pt.state_times.array() - pt.state_times[0]) / src_T;
    Eigen::VectorXd src_control_tau =
        pt.control_times.size() > 0
            ? Eigen::VectorXd((pt.control_times.array() - pt.state_times[0]) / src_T)
            : Eigen::VectorXd();

    // States.
    if (pm.x_span.size > 0) {
      const Eigen::Index want_cols = pm.x_span.size / pm.n;
      const bool same_shape =
          pt.states.cols() == pm.state_tau.size() && pt.states.rows() == pm.n &&
          (src_state_tau - pm.state_tau).lpNorm<Eigen::Infinity>() <= 1e-9;
      Eigen::Map<Eigen::MatrixXd> dst(z.data() + pm.x_span.offset, pm.n, want_cols);
      if (same_shape) {
        dst = pt.states.leftCols(want_cols);
      } else {
        dst = detail::resample_linear(src_state_tau, pt.states, pm.state_tau.head(want_cols));
      }
    }
    if (pm.xinit_span.size > 0) {
      z.segment(pm.xinit_span.offset, pm.n) = pt.states.col(0);
    }

    // Controls.
    if (pm.u_span.size > 0) {
      Eigen::Map<Eigen::MatrixXd> dst(z.data() + pm.u_span.offset, pm.m, pm.n_control_cols);
      const bool same_shape =
          pt.controls.cols() == pm.n_control_cols && pt.controls.rows() == pm.m &&
          pt.control_kind == pm.control_kind &&
          src_control_tau.size() == pm.control_break_tau.size() &&
          (src_control_tau - pm.control_break_tau).lpNorm<Eigen::Infinity>() <= 1e-9;
      if (same_shape) {
        dst = pt.controls;
      } else if (pt.controls.cols() > 0) {
        // Sample times of the source parameterization.
        Eigen::VectorXd src_sample_tau;
        if (pt.control_kind == ControlKind::HoldConstant) {
          src_sample_tau.resize(pt.controls.cols());
          for (Eigen::Index k = 0; k < pt.controls.cols(); ++k) {
            src_sample_tau[k] = 0.5 * (src_control_tau[k] + src_control_tau[k + 1]);
          }
        } else {
          src_sample_tau = src_control_tau;
        }
        dst = detail::resample_linear(src_sample_tau, pt.controls, pm.control_sample_tau);
      }
    }
  }
  return z;
}

// ---------------------------------------------------------------------------
// Initial guesses

// Straight-line states between the phase guess endpoints, zero controls,
// durations at the midpoint of their bounds. Optional uniform noise of the
// given amplitude lands on the control samples only, from an explicitly
// seeded generator.
inline Eigen::VectorXd initial_guess_linear(const Transcription& t, double noise_amplitude = 0.0,
                                            std::uint64_t seed = 0) {
  const auto& ctx = *t.ctx;
  Trajectory guess;
  double t_accum = 0.0;
  for (std::size_t p = 0; p < ctx.phases.size(); ++p) {
    const Phase& ph = ctx.problem.phases[p];
    const detail::PhaseMeta& pm = ctx.phases[p];
    const double T = pm.has_duration_var ? 0.5 * (ph.duration_min + ph.duration_max)
                                         : pm.fixed_duration;
    Eigen::VectorXd start;
    if (p == 0 && ctx.problem.fixed_initial_state.size() > 0) {
      start = ctx.problem.fixed_initial_state;
    } else if (ph.guess_start.size() > 0) {
      start = ph.guess_start;
    } else {
      start = Eigen::VectorXd::Zero(pm.n);
    }
    const Eigen::VectorXd end = ph.guess_end.size() > 0 ? ph.guess_end : start;

    PhaseTrajectory pt;
    pt.duration = T;
    pt.state_times.resize(2);
    pt.state_times << t_accum, t_accum + T;
    pt.states.resize(pm.n, 2);
    pt.states.col(0) = start;
    pt.states.col(1) = end;
    pt.control_kind = ControlKind::PiecewiseLinear;
    pt.control_times = pt.state_times;
    pt.controls = Eigen::MatrixXd::Zero(pm.m, 2);
    guess.phases.push_back(std::move(pt));
    t_accum += T;
  }
  Eigen::VectorXd z = t.encode(guess);

  if (noise_amplitude > 0.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-noise_amplitude, noise_amplitude);
    for (const auto& pm : ctx.phases) {
      for (Eigen::Index i = 0; i < pm.u_span.size; ++i) {
        z[pm.u_span.offset + i] += dist(rng);
      }
    }
  }
  return z;
}

// Least-squares polynomial fit through user waypoints, one fit per state
// channel; the control guess comes from differentiating the fit and running
// the phase's inverse dynamics when available, zero otherwise. Single-phase
// problems only.
inline Eigen::VectorXd initial_guess_polyfit(
    const Transcription& t, const std::vector<std::pair<double, Eigen::VectorXd>>& waypoints,
    int degree) {
  const auto& ctx = *t.ctx;
  if (ctx.phases.size() != 1) {
    throw std::invalid_argument("initial_guess_polyfit: only single-phase problems supported");
  }
  if (degree < 0) throw std::invalid_argument("initial_guess_polyfit: degree must be >= 0");
  if (static_cast<int>(waypoints.size()) < degree + 1) {
    throw std::invalid_argument("initial_guess_polyfit: need at least degree + 1 = " +
                                std::to_string(degree + 1) + " waypoints, got " +
                                std::to_string(waypoints.size()));
  }
  const Phase& ph = ctx.problem.phases[0];
  const detail::PhaseMeta& pm = ctx.phases[0];
  const double T = pm.has_duration_var ? 0.5 * (ph.duration_min + ph.duration_max)
                                       : pm.fixed_duration;
  for (const auto& [tw, xw] : waypoints) {
    if (tw < -1e-9 || tw > T * (1.0 + 1e-9)) {
      throw std::invalid_argument("initial_guess_polyfit: waypoint time " + std::to_string(tw) +
                                  " outside the phase duration " + std::to_string(T));
    }
    if (xw.size() != pm.n) {
      throw std::invalid_argument("initial_guess_polyfit: waypoint state size mismatch");
    }
  }

  const Eigen::Index w = static_cast<Eigen::Index>(waypoints.size());
  Eigen::MatrixXd vander(w, degree + 1);
  Eigen::MatrixXd rhs(w, pm.n);
  for (Eigen::Index i = 0; i < w; ++i) {
    const double tw = waypoints[static_cast<std::size_t>(i)].first;
    double powt = 1.0;
    for (int j = 0; j <= degree; ++j) {
      vander(i, j) = powt;
      powt *= tw;
    }
    rhs.row(i) = waypoints[static_cast<std::size_t>(i)].second.transpose();
  }
  // coeffs(j, ch): coefficient of t^j for state channel ch.
  const Eigen::MatrixXd coeffs = vander.colPivHouseholderQr().solve(rhs);

  const auto fit_state = [&](double time) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(pm.n);
    double powt = 1.0;
    for (int j = 0; j <= degree; ++j) {
      x += coeffs.row(j).transpose() * powt;
      powt *= time;
    }
    return x;
  };
  const auto fit_derivative = [&](double time) {
    Eigen::VectorXd dx = Eigen::VectorXd::Zero(pm.n);
    double powt = 1.0;
    for (int j = 1; j <= degree; ++j) {
      dx += coeffs.row(j).transpose() * (j * powt);
      powt *= time;
    }
    return dx;
  };

  PhaseTrajectory pt;
  pt.duration = T;
  pt.control_kind = pm.control_kind;
  pt.state_times = (pm.state_tau.array() * T).matrix();
  pt.states.resize(pm.n, pm.state_tau.size());
  for (Eigen::Index k = 0; k < pm.state_tau.size(); ++k) {
    pt.states.col(k) = fit_state(pt.state_times[k]);
  }
  pt.control_times = (pm.control_break_tau.array() * T).matrix();
  pt.controls.resize(pm.m, pm.n_control_cols);
  for (Eigen::Index k = 0; k < pm.n_control_cols; ++k) {
    const double time = pm.control_sample_tau[k] * T;
    if (ph.inverse_dynamics) {
      pt.controls.col(k) = ph.inverse_dynamics(time, fit_state(time), fit_derivative(time));
    } else {
      pt.controls.col(k).setZero();
    }
  }

  Trajectory guess;
  guess.phases.push_back(std::move(pt));
  return t.encode(guess);
}

}  // namespace trajkit
