#pragma once

// Built-in benchmark problems. All are dimensionless desk-scale instances;
// block_move has the closed-form optimum u*(t) = 6 - 12 t with J* = 12,
// which anchors most of the test suite.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "trajkit/ocp.hpp"

namespace trajkit {

inline std::vector<std::string> example_names() {
  return {"block_move", "pendulum_swingup", "particle_field", "cannon", "hammer"};
}

namespace examples {

// Double integrator moving a unit mass from rest at 0 to rest at 1 in unit
// time, minimizing integral of u^2. Euler-Lagrange gives u*(t) = 6 - 12 t,
// x*(t) = 3 t^2 - 2 t^3, J* = 12.
inline Problem block_move() {
  Phase ph;
  ph.state_dim = 2;
  ph.control_dim = 1;
  ph.dynamics = [](double, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    Eigen::VectorXd dx(2);
    dx << x[1], u[0];
    return dx;
  };
  ph.running_cost = [](double, const Eigen::VectorXd&, const Eigen::VectorXd& u) {
    return u[0] * u[0];
  };
  ph.state_bounds = Bounds::unbounded(2);
  ph.control_bounds = Bounds::unbounded(1);
  ph.duration_min = ph.duration_max = 1.0;
  ph.inverse_dynamics = [](double, const Eigen::VectorXd&, const Eigen::VectorXd& xdot) {
    return Eigen::VectorXd::Constant(1, xdot[1]);
  };
  ph.guess_start = Eigen::Vector2d(0.0, 0.0);
  ph.guess_end = Eigen::Vector2d(1.0, 0.0);

  Problem p;
  p.name = "block_move";
  p.phases = {ph};
  p.fixed_initial_state = Eigen::Vector2d(0.0, 0.0);
  p.boundary_constraint = [](double, const Eigen::VectorXd&, double, const Eigen::VectorXd& xf) {
    return xf;
  };
  p.boundary_bounds = Bounds::equal(Eigen::Vector2d(1.0, 0.0));
  return p;
}

// Torque-limited pendulum swing-up from hanging rest to upright rest over a
// fixed five-unit horizon, minimizing integral of u^2.
inline Problem pendulum_swingup() {
  Phase ph;
  ph.state_dim = 2;
  ph.control_dim = 1;
  ph.dynamics = [](double, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    Eigen::VectorXd dx(2);
    dx << x[1], -std::sin(x[0]) + u[0];
    return dx;
  };
  ph.running_cost = [](double, const Eigen::VectorXd&, const Eigen::VectorXd& u) {
    return u[0] * u[0];
  };
  ph.state_bounds = Bounds::box(Eigen::Vector2d(-2.0 * std::numbers::pi, -8.0),
                                Eigen::Vector2d(2.0 * std::numbers::pi, 8.0));
  ph.control_bounds = Bounds::symmetric(1, 2.0);
  ph.duration_min = ph.duration_max = 5.0;
  ph.inverse_dynamics = [](double, const Eigen::VectorXd& x, const Eigen::VectorXd& xdot) {
    return Eigen::VectorXd::Constant(1, xdot[1] + std::sin(x[0]));
  };
  ph.guess_start = Eigen::Vector2d(0.0, 0.0);
  ph.guess_end = Eigen::Vector2d(std::numbers::pi, 0.0);

  Problem p;
  p.name = "pendulum_swingup";
  p.phases = {ph};
  p.fixed_initial_state = Eigen::Vector2d(0.0, 0.0);
  p.boundary_constraint = [](double, const Eigen::VectorXd&, double, const Eigen::VectorXd& xf) {
    return xf;
  };
  p.boundary_bounds = Bounds::equal(Eigen::Vector2d(std::numbers::pi, 0.0));
  return p;
}

// Planar particle steered through a horizontal wind field
// w(x, y) = (0.4 sin(pi y), 0) from the origin to (1, 1) in unit time,
// minimizing integral of |u|^2.
inline Problem particle_field() {
  Phase ph;
  ph.state_dim = 2;
  ph.control_dim = 2;
  ph.dynamics = [](double, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    Eigen::VectorXd dx(2);
    dx << u[0] + 0.4 * std::sin(std::numbers::pi * x[1]), u[1];
    return dx;
  };
  ph.running_cost = [](double, const Eigen::VectorXd&, const Eigen::VectorXd& u) {
    return u.squaredNorm();
  };
  ph.state_bounds = Bounds::unbounded(2);
  ph.control_bounds = Bounds::symmetric(2, 10.0);
  ph.duration_min = ph.duration_max = 1.0;
  ph.inverse_dynamics = [](double, const Eigen::VectorXd& x, const Eigen::VectorXd& xdot) {
    Eigen::VectorXd u(2);
    u << xdot[0] - 0.4 * std::sin(std::numbers::pi * x[1]), xdot[1];
    return u;
  };
  ph.guess_start = Eigen::Vector2d(0.0, 0.0);
  ph.guess_end = Eigen::Vector2d(1.0, 1.0);

  Problem p;
  p.name = "particle_field";
  p.phases = {ph};
  p.fixed_initial_state = Eigen::Vector2d(0.0, 0.0);
  p.boundary_constraint = [](double, const Eigen::VectorXd&, double, const Eigen::VectorXd& xf) {
    return xf;
  };
  p.boundary_bounds = Bounds::equal(Eigen::Vector2d(1.0, 1.0));
  return p;
}

// Projectile aimed at a target 10 units downrange. Muzzle speed v and
// elevation theta are time-invariant design parameters entering the
// dynamics as constant control channels; the unit flight time makes the
// integral of v^2 equal v^2, a proxy for the powder charge.
inline Problem cannon() {
  constexpr double g = 9.81;
  Phase ph;
  ph.state_dim = 2;  // (x, y)
  ph.control_dim = 2;  // (v, theta), both parameters
  ph.param_channels = 2;
  ph.dynamics = [g](double t, const Eigen::VectorXd&, const Eigen::VectorXd& u) {
    const double v = u[0];
    const double theta = u[1];
    Eigen::VectorXd dx(2);
    dx << v * std::cos(theta), v * std::sin(theta) - g * t;
    return dx;
  };
  ph.running_cost = [](double, const Eigen::VectorXd&, const Eigen::VectorXd& u) {
    return u[0] * u[0];
  };
  ph.state_bounds = Bounds::box(Eigen::Vector2d(-1.0, -1.0), Eigen::Vector2d(20.0, 20.0));
  ph.control_bounds = Bounds::box(Eigen::Vector2d(0.0, 0.0),
                                  Eigen::Vector2d(50.0, 0.5 * std::numbers::pi));
  ph.duration_min = ph.duration_max = 1.0;
  ph.guess_start = Eigen::Vector2d(0.0, 0.0);
  ph.guess_end = Eigen::Vector2d(10.0, 0.0);

  Problem p;
  p.name = "cannon";
  p.phases = {ph};
  p.fixed_initial_state = Eigen::Vector2d(0.0, 0.0);
  p.boundary_constraint = [](double, const Eigen::VectorXd&, double, const Eigen::VectorXd& xf) {
    return xf;
  };
  p.boundary_bounds = Bounds::equal(Eigen::Vector2d(10.0, 0.0));
  return p;
}

// Point-mass pendulum hammer striking a surface at theta = 0, one strike
// per cycle. The impact map keeps the angle and reverses the angular rate
// with restitution 0.8; the cycle is closed periodically through that map.
// The strike must arrive with angular rate <= -1 so the rest trajectory is
// excluded. Parameters (restitution, torque limit, strike speed, duration
// window) are implementation choices for a feasible desk-scale instance.
inline Problem hammer() {
  constexpr double restitution = 0.8;
  Phase ph;
  ph.state_dim = 2;  // (theta, theta_dot)
  ph.control_dim = 1;
  ph.dynamics = [](double, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    Eigen::VectorXd dx(2);
    dx << x[1], -std::sin(x[0]) + u[0];
    return dx;
  };
  ph.running_cost = [](double, const Eigen::VectorXd&, const Eigen::VectorXd& u) {
    return u[0] * u[0];
  };
  ph.state_bounds = Bounds::box(Eigen::Vector2d(0.0, -10.0),
                                Eigen::Vector2d(std::numbers::pi, 10.0));
  ph.control_bounds = Bounds::symmetric(1, 3.0);
  ph.duration_min = 0.5;
  ph.duration_max = 5.0;
  ph.inverse_dynamics = [](double, const Eigen::VectorXd& x, const Eigen::VectorXd& xdot) {
    return Eigen::VectorXd::Constant(1, xdot[1] + std::sin(x[0]));
  };
  ph.guess_start = Eigen::Vector2d(0.0, 1.0);
  ph.guess_end = Eigen::Vector2d(0.0, -1.25);

  Problem p;
  p.name = "hammer";
  p.phases = {ph};
  p.periodic = true;
  p.transitions = {[restitution](const Eigen::VectorXd& x) {
    Eigen::VectorXd x_plus(2);
    x_plus << x[0], -restitution * x[1];
    return x_plus;
  }};
  // Strike at the surface (theta_f = 0) with speed at least 1.
  p.boundary_constraint = [](double, const Eigen::VectorXd&, double, const Eigen::VectorXd& xf) {
    return xf;
  };
  p.boundary_bounds = Bounds::box(Eigen::Vector2d(0.0, -inf()), Eigen::Vector2d(0.0, -1.0));
  return p;
}

}  // namespace examples

inline Problem build_example(const std::string& name) {
  if (name == "block_move") return examples::block_move();
  if (name == "pendulum_swingup") return examples::pendulum_swingup();
  if (name == "particle_field") return examples::particle_field();
  if (name == "cannon") return examples::cannon();
  if (name == "hammer") return examples::hammer();
  std::string valid;
  for (const auto& n : example_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw std::invalid_argument("unknown problem '" + name + "'; valid names: " + valid);
}

}  // namespace trajkit
