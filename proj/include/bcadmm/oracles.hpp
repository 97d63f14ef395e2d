#pragma once

#include <functional>
#include <utility>

#include "bcadmm/linalg.hpp"

namespace bcadmm {

/// Two-stage brute force minimizer: dense grid over a box, then repeated
/// local refinement of the window around the incumbent. Independent of the
/// gradient-based solvers; the objective may return +inf.
inline std::pair<Vec, double> grid_refine(
    const std::function<double(const Vec&)>& f, Vec lo, Vec hi,
    int pts_per_axis = 17, int levels = 26) {
  const int d = static_cast<int>(lo.size());
  Vec best_x = 0.5 * (lo + hi);
  double best = f(best_x);
  for (int level = 0; level < levels; ++level) {
    Vec x(d);
    std::vector<int> idx(d, 0);
    for (;;) {
      for (int i = 0; i < d; ++i)
        x(i) = lo(i) + (hi(i) - lo(i)) * idx[i] / (pts_per_axis - 1);
      const double v = f(x);
      if (v < best) {
        best = v;
        best_x = x;
      }
      int c = 0;
      while (c < d && ++idx[c] == pts_per_axis) idx[c++] = 0;
      if (c == d) break;
    }
    // Recenter on the incumbent with a generous window (halves each level)
    // so the minimizer cannot escape between levels.
    const Vec span = (hi - lo) / (pts_per_axis - 1);
    lo = best_x - 4.0 * span;
    hi = best_x + 4.0 * span;
  }
  // Compass-search polish from the grid incumbent.
  double step = (hi - lo).maxCoeff();
  while (step > 1e-12) {
    bool moved = false;
    for (int i = 0; i < d; ++i) {
      for (double s : {step, -step}) {
        Vec x = best_x;
        x(i) += s;
        const double v = f(x);
        if (v < best) {
          best = v;
          best_x = x;
          moved = true;
        }
      }
    }
    if (!moved) step *= 0.5;
  }
  return {best_x, best};
}

/// Central finite-difference gradient of a scalar function.
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& y,
                       double h) {
  Vec g(y.size());
  for (int i = 0; i < y.size(); ++i) {
    Vec yp = y, ym = y;
    yp(i) += h;
    ym(i) -= h;
    g(i) = (f(yp) - f(ym)) / (2.0 * h);
  }
  return g;
}

/// Central finite-difference Hessian from function values only, with one
/// Richardson extrapolation step to cancel the O(h^2) truncation error.
inline Mat fd_hessian(const std::function<double(const Vec&)>& f, const Vec& y,
                      double h) {
  const int n = static_cast<int>(y.size());
  auto second_diff = [&](double hh) {
    Mat H(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j <= i; ++j) {
        Vec pp = y, pm = y, mp = y, mm = y;
        pp(i) += hh; pp(j) += hh;
        pm(i) += hh; pm(j) -= hh;
        mp(i) -= hh; mp(j) += hh;
        mm(i) -= hh; mm(j) -= hh;
        H(i, j) = H(j, i) = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * hh * hh);
      }
    }
    return H;
  };
  const Mat coarse = second_diff(h);
  const Mat fine = second_diff(0.5 * h);
  return (4.0 * fine - coarse) / 3.0;
}

/// Largest eigenvalue of A^T A through a dense symmetric eigensolve.
inline double dense_opnorm_sq(const SparseMatrix& A) {
  Mat dense = Mat(A.eigen());
  Eigen::SelfAdjointEigenSolver<Mat> eig(dense.transpose() * dense);
  return eig.eigenvalues().maxCoeff();
}

/// Polar rotation by Newton (matrix-sign) iteration; independent of the SVD
/// route used by the library. Requires det F > 0.
inline Mat polar_newton(const Mat& F) {
  Mat R = F;
  for (int i = 0; i < 200; ++i) {
    const Mat next = 0.5 * (R + R.inverse().transpose());
    if ((next - R).norm() < 1e-15) return next;
    R = next;
  }
  return R;
}

}  // namespace bcadmm
