#pragma once

#include <Eigen/Cholesky>
#include <functional>

#include "bcadmm/linalg.hpp"

namespace bcadmm {

// Extended-real objective: value may return +inf outside the (open) domain;
// grad/hess are only requested at points with finite value.
struct SmoothObjective {
  std::function<double(const Vec&)> value;
  std::function<double(const Vec&, Vec&)> value_grad;
  std::function<double(const Vec&, Vec&, Mat&)> value_grad_hess;
};

struct InnerResult {
  Vec x;
  bool converged = false;
  int iters = 0;
};

/// Damped Newton for a smooth strongly convex extended-real objective.
/// Feasible-interior: the start must have finite value and every accepted
/// trial point keeps the value finite (the line search first halves the step
/// until the value is finite, then until Armijo decrease holds). Levenberg
/// regularization is escalated when the Hessian factorization fails or the
/// direction is not a descent direction.
inline InnerResult solve_small_convex(const SmoothObjective& obj, const Vec& x0,
                                      double tol, int max_iters = 200) {
  constexpr double kArmijoC = 1e-4;
  constexpr double kShrink = 0.5;
  InnerResult res;
  res.x = x0;
  Vec g;
  Mat H;
  double f = obj.value_grad_hess(res.x, g, H);
  if (!std::isfinite(f))
    throw std::invalid_argument("solve_small_convex: infeasible start");
  const int n = static_cast<int>(x0.size());
  for (int it = 0; it < max_iters; ++it) {
    res.iters = it;
    if (g.lpNorm<Eigen::Infinity>() <= tol) {
      res.converged = true;
      return res;
    }
    // Newton direction with Levenberg fallback.
    double mu = 0.0;
    Vec dir;
    const double scale = std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
    for (;;) {
      Mat Hreg = H;
      if (mu > 0.0) Hreg.diagonal().array() += mu;
      Eigen::LLT<Mat> llt(Hreg);
      if (llt.info() == Eigen::Success) {
        dir = llt.solve(-g);
        if (g.dot(dir) < 0.0) break;
      }
      mu = (mu == 0.0) ? 1e-10 * scale : mu * 10.0;
      if (mu > 1e12 * scale) {
        dir = -g;  // steepest descent as last resort
        break;
      }
    }
    const double slope = g.dot(dir);
    // Newton decrement below double resolution: the iterate is optimal to
    // machine precision even if the raw gradient norm sits above tol.
    if (-slope <= 4.0 * std::numeric_limits<double>::epsilon() *
                      (1.0 + std::abs(f))) {
      res.converged = true;
      return res;
    }
    double step = 1.0;
    double f_new = kInf;
    Vec x_new(n);
    for (int ls = 0; ls < 80; ++ls) {
      x_new = res.x + step * dir;
      f_new = obj.value(x_new);
      if (std::isfinite(f_new) && f_new <= f + kArmijoC * step * slope) break;
      step *= kShrink;
    }
    if (!std::isfinite(f_new) || f_new > f + kArmijoC * step * slope) {
      // Line search stalled; report the best iterate so far.
      return res;
    }
    res.x = x_new;
    f = obj.value_grad_hess(res.x, g, H);
  }
  res.iters = max_iters;
  res.converged = g.lpNorm<Eigen::Infinity>() <= tol;
  return res;
}

// Objective with value and gradient only; value may be +inf.
struct ProjectedObjective {
  std::function<double(const Vec&)> value;
  std::function<double(const Vec&, Vec&)> value_grad;
};

/// Projected gradient descent with backtracking on a convex set. Terminates
/// when the projected-gradient measure ||z - P(z - s*grad)|| / s drops below
/// tol for the accepted step size s.
inline InnerResult solve_projected_convex(
    const ProjectedObjective& obj, const std::function<Vec(const Vec&)>& project,
    const Vec& z0, double tol, int max_iters = 5000) {
  InnerResult res;
  res.x = project(z0);
  Vec g;
  double f = obj.value_grad(res.x, g);
  if (!std::isfinite(f))
    throw std::invalid_argument("solve_projected_convex: infeasible start");
  double step = 1.0;
  for (int it = 0; it < max_iters; ++it) {
    res.iters = it;
    Vec z_new;
    double f_new = kInf;
    bool accepted = false;
    for (int ls = 0; ls < 120; ++ls) {
      z_new = project(res.x - step * g);
      const Vec d = z_new - res.x;
      f_new = obj.value(z_new);
      // Sufficient decrease against the proximal quadratic model.
      if (std::isfinite(f_new) &&
          f_new <= f + g.dot(d) + d.squaredNorm() / (2.0 * step) + 1e-16) {
        accepted = true;
        break;
      }
      step *= 0.5;
      if (step < 1e-16) break;
    }
    if (!accepted) return res;
    const double move = (z_new - res.x).norm() / step;
    res.x = z_new;
    f = obj.value_grad(res.x, g);
    if (move <= tol) {
      res.converged = true;
      return res;
    }
    step *= 1.5;  // cautious re-expansion
  }
  return res;
}

}  // namespace bcadmm
