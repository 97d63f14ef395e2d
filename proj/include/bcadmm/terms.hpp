#pragma once

#include <algorithm>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "bcadmm/barrier.hpp"
#include "bcadmm/inner_solvers.hpp"
#include "bcadmm/linalg.hpp"

namespace bcadmm {

struct InfeasiblePoint : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateSpring : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InfeasibleZ : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class TermKind { Collision, MassSpring, Arap, Cable, VelocityBound };

inline const char* term_kind_name(TermKind k) {
  switch (k) {
    case TermKind::Collision: return "collision";
    case TermKind::MassSpring: return "mass-spring";
    case TermKind::Arap: return "arap";
    case TermKind::Cable: return "cable";
    case TermKind::VelocityBound: return "velocity-bound";
  }
  return "?";
}

/// Constraint descriptor for one z block. project() is idempotent.
struct ZDomain {
  enum class Kind { Free, UnitBall, UnitSphere, RotationGroup };
  Kind kind = Kind::Free;
  int dim = 0;  // block length; RotationGroup stores a row-major d x d matrix

  Vec project(const Vec& v) const {
    switch (kind) {
      case Kind::Free:
        return v;
      case Kind::UnitBall: {
        const double n = v.norm();
        return n <= 1.0 ? v : Vec(v / n);
      }
      case Kind::UnitSphere: {
        const double n = v.norm();
        if (n < 1e-12) throw DegenerateSpring("ZDomain: cannot normalize ~0");
        return v / n;
      }
      case Kind::RotationGroup: {
        const int d = dim == 4 ? 2 : 3;
        Mat F(d, d);
        for (int i = 0; i < d; ++i)
          for (int j = 0; j < d; ++j) F(i, j) = v(i * d + j);
        Mat R = polar_rotation(F);
        Vec out(dim);
        for (int i = 0; i < d; ++i)
          for (int j = 0; j < d; ++j) out(i * d + j) = R(i, j);
        return out;
      }
    }
    return v;
  }
};

/// One extended-real bi-convex energy term g_i(y_i, z_i). y_i is a contiguous
/// slice of the stacked slack vector; z_i an (optionally empty) block of the
/// plane/direction/rotation variables. Terms are immutable after assembly and
/// all member functions are pure.
class PotentialTerm {
 public:
  virtual ~PotentialTerm() = default;

  TermKind kind() const { return kind_; }
  int y_dim() const { return y_dim_; }
  int z_dim() const { return z_dim_; }
  const std::vector<ZDomain>& z_domains() const { return z_domains_; }

  /// Extended-real energy; +inf exactly when a barrier argument is <= 0 or an
  /// indicator is violated, never NaN.
  virtual double eval(const Vec& y, const Vec& z) const = 0;

  /// Analytic gradient/Hessian of the smooth part wrt the y slice. Throws
  /// InfeasiblePoint if the value is infinite.
  virtual double grad_hess_y(const Vec& y, const Vec& z, Vec& g, Mat& H) const = 0;

  virtual double grad_y(const Vec& y, const Vec& z, Vec& g) const {
    Mat H;
    return grad_hess_y(y, z, g, H);
  }

  /// z_i(y_i): minimize g_i(y_i, .) over the term's Z set, warm started at z.
  virtual void solve_z(const Vec& /*y*/, Vec& /*z*/, double /*tol*/) const {}

  /// Find any finite-energy z at the given y (used at insertion); false if no
  /// such z exists (the term is violated at y).
  virtual bool init_z(const Vec& /*y*/, Vec& /*z*/) const { return true; }

  /// y-subproblem of the decoupled update:
  ///   min_y g_i(y, z) - lambda^T y + beta/2 ||a - y||^2 + beta_y/2 ||y - y0||^2
  InnerResult solve_y(const Vec& a, const Vec& lambda, const Vec& z,
                      const Vec& y0, double beta, double beta_y, double tol,
                      int max_iters = 200) const {
    SmoothObjective obj;
    obj.value = [&](const Vec& y) {
      const double v = eval(y, z);
      if (!std::isfinite(v)) return kInf;
      return v - lambda.dot(y) + 0.5 * beta * (a - y).squaredNorm() +
             0.5 * beta_y * (y - y0).squaredNorm();
    };
    obj.value_grad_hess = [&](const Vec& y, Vec& g, Mat& H) {
      const double v = grad_hess_y(y, z, g, H);
      g += -lambda + beta * (y - a) + beta_y * (y - y0);
      H.diagonal().array() += beta + beta_y;
      return v - lambda.dot(y) + 0.5 * beta * (a - y).squaredNorm() +
             0.5 * beta_y * (y - y0).squaredNorm();
    };
    return solve_small_convex(obj, y0, tol, max_iters);
  }

 protected:
  PotentialTerm(TermKind kind, int y_dim, int z_dim)
      : kind_(kind), y_dim_(y_dim), z_dim_(z_dim) {}

  TermKind kind_;
  int y_dim_;
  int z_dim_;
  std::vector<ZDomain> z_domains_;
};

// ---------------------------------------------------------------------------
// Convex-hull helpers (closest points / separating planes).

/// Euclidean projection onto the probability simplex {w >= 0, sum w = 1}.
inline Vec project_simplex(const Vec& v) {
  const int n = static_cast<int>(v.size());
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cum = 0.0, tau = 0.0;
  int rho = 0;
  for (int j = 0; j < n; ++j) {
    cum += u[j];
    const double t = (cum - 1.0) / (j + 1);
    if (u[j] - t > 0.0) {
      rho = j + 1;
      tau = t;
    }
  }
  Vec w(n);
  for (int i = 0; i < n; ++i) w(i) = std::max(v(i) - tau, 0.0);
  return w;
}

/// Closest pair of points between the convex hulls of two point sets.
inline std::pair<Vec, Vec> hull_closest_points(const std::vector<Vec>& hull1,
                                               const std::vector<Vec>& hull2) {
  const int n1 = static_cast<int>(hull1.size());
  const int n2 = static_cast<int>(hull2.size());
  const int d = static_cast<int>(hull1.front().size());
  if (n1 == 1 && n2 == 1) return {hull1[0], hull2[0]};
  Mat V1(d, n1), V2(d, n2);
  for (int i = 0; i < n1; ++i) V1.col(i) = hull1[i];
  for (int i = 0; i < n2; ++i) V2.col(i) = hull2[i];
  auto project = [&](const Vec& w) {
    Vec out(n1 + n2);
    out.head(n1) = project_simplex(w.head(n1));
    out.tail(n2) = project_simplex(w.tail(n2));
    return out;
  };
  ProjectedObjective obj;
  auto diff = [&](const Vec& w) -> Vec { return V1 * w.head(n1) - V2 * w.tail(n2); };
  obj.value = [&](const Vec& w) { return diff(w).squaredNorm(); };
  obj.value_grad = [&](const Vec& w, Vec& g) {
    const Vec p = diff(w);
    g.resize(n1 + n2);
    g.head(n1) = 2.0 * V1.transpose() * p;
    g.tail(n2) = -2.0 * V2.transpose() * p;
    return p.squaredNorm();
  };
  Vec w0 = Vec::Zero(n1 + n2);
  w0.head(n1).setConstant(1.0 / n1);
  w0.tail(n2).setConstant(1.0 / n2);
  auto res = solve_projected_convex(obj, project, w0, 1e-12, 20000);
  return {V1 * res.x.head(n1), V2 * res.x.tail(n2)};
}

inline double hull_distance(const std::vector<Vec>& hull1,
                            const std::vector<Vec>& hull2) {
  auto [p, q] = hull_closest_points(hull1, hull2);
  return (p - q).norm();
}

// ---------------------------------------------------------------------------

/// Separating-plane collision potential between two convex hulls. Each hull
/// combines movable vertices (drawn from the y slice, hull1 first) with
/// constant geometry. z = (n, d); hull1 lies on the positive plane side.
class CollisionTerm : public PotentialTerm {
 public:
  CollisionTerm(int dim, int n_movable1, int n_movable2,
                std::vector<Vec> static1, std::vector<Vec> static2, double r,
                double eps, double sigma)
      : PotentialTerm(TermKind::Collision, (n_movable1 + n_movable2) * dim,
                      dim + 1),
        dim_(dim),
        n1_(n_movable1),
        n2_(n_movable2),
        static1_(std::move(static1)),
        static2_(std::move(static2)),
        r_(r),
        barrier_(eps),
        sigma_(sigma) {
    z_domains_ = {{ZDomain::Kind::UnitBall, dim}, {ZDomain::Kind::Free, 1}};
  }

  int dim() const { return dim_; }
  double radius() const { return r_; }
  double sigma() const { return sigma_; }
  double barrier_eps() const { return barrier_.eps; }
  int movable1() const { return n1_; }
  int movable2() const { return n2_; }
  const std::vector<Vec>& static1() const { return static1_; }
  const std::vector<Vec>& static2() const { return static2_; }

  Vec movable_vertex(const Vec& y, int idx) const {
    return y.segment(idx * dim_, dim_);
  }

  double eval(const Vec& y, const Vec& z) const override {
    const Vec n = z.head(dim_);
    const double d = z(dim_);
    double total = 0.5 * sigma_ * z.squaredNorm();
    for (int i = 0; i < n1_; ++i) {
      const double m = movable_vertex(y, i).dot(n) + d - r_;
      if (m <= 0.0) return kInf;
      total += barrier_.value(m);
    }
    for (const auto& v : static1_) {
      const double m = v.dot(n) + d - r_;
      if (m <= 0.0) return kInf;
      total += barrier_.value(m);
    }
    for (int i = 0; i < n2_; ++i) {
      const double m = -movable_vertex(y, n1_ + i).dot(n) - d - r_;
      if (m <= 0.0) return kInf;
      total += barrier_.value(m);
    }
    for (const auto& v : static2_) {
      const double m = -v.dot(n) - d - r_;
      if (m <= 0.0) return kInf;
      total += barrier_.value(m);
    }
    return total;
  }

  double grad_hess_y(const Vec& y, const Vec& z, Vec& g, Mat& H) const override {
    const double v = eval(y, z);
    if (!std::isfinite(v)) throw InfeasiblePoint("collision grad at infinite point");
    const Vec n = z.head(dim_);
    const double d = z(dim_);
    g = Vec::Zero(y_dim_);
    H = Mat::Zero(y_dim_, y_dim_);
    const Mat nn = n * n.transpose();
    for (int i = 0; i < n1_ + n2_; ++i) {
      const bool first = i < n1_;
      const double m = first ? movable_vertex(y, i).dot(n) + d - r_
                             : -movable_vertex(y, i).dot(n) - d - r_;
      const double sgn = first ? 1.0 : -1.0;
      g.segment(i * dim_, dim_) += sgn * barrier_.d1(m) * n;
      H.block(i * dim_, i * dim_, dim_, dim_) += barrier_.d2(m) * nn;
    }
    return v;
  }

  void solve_z(const Vec& y, Vec& z, double tol) const override {
    if (!std::isfinite(eval(y, z)))
      throw InfeasibleZ("collision_z_solve: warm start has infinite energy");
    ProjectedObjective obj;
    obj.value = [&](const Vec& zz) { return eval(y, zz); };
    obj.value_grad = [&](const Vec& zz, Vec& g) { return z_value_grad(y, zz, g); };
    auto project = [&](const Vec& zz) {
      Vec out = zz;
      const double nn = out.head(dim_).norm();
      if (nn > 1.0) out.head(dim_) /= nn;
      return out;
    };
    auto res = solve_projected_convex(obj, project, z, tol, 20000);
    z = res.x;
  }

  bool init_z(const Vec& y, Vec& z) const override {
    auto [h1, h2] = gather_hulls(y);
    // Fast path: plane orthogonal to the centroid axis.
    Vec c1 = Vec::Zero(dim_), c2 = Vec::Zero(dim_);
    for (const auto& v : h1) c1 += v;
    for (const auto& v : h2) c2 += v;
    c1 /= static_cast<double>(h1.size());
    c2 /= static_cast<double>(h2.size());
    if ((c1 - c2).norm() > 1e-12 && try_axis(h1, h2, c1 - c2, z)) return true;
    // Complete fallback: axis through the hulls' closest points.
    auto [p1, p2] = hull_closest_points(h1, h2);
    if ((p1 - p2).norm() < 1e-12) return false;
    return try_axis(h1, h2, p1 - p2, z);
  }

  std::pair<std::vector<Vec>, std::vector<Vec>> gather_hulls(const Vec& y) const {
    std::vector<Vec> h1, h2;
    for (int i = 0; i < n1_; ++i) h1.push_back(movable_vertex(y, i));
    for (const auto& v : static1_) h1.push_back(v);
    for (int i = 0; i < n2_; ++i) h2.push_back(movable_vertex(y, n1_ + i));
    for (const auto& v : static2_) h2.push_back(v);
    return {h1, h2};
  }

 private:
  double z_value_grad(const Vec& y, const Vec& z, Vec& g) const {
    const Vec n = z.head(dim_);
    const double d = z(dim_);
    g = sigma_ * z;
    double total = 0.5 * sigma_ * z.squaredNorm();
    auto accumulate = [&](const Vec& v, bool first) {
      const double m = first ? v.dot(n) + d - r_ : -v.dot(n) - d - r_;
      total += barrier_.value(m);
      if (m <= 0.0) return;
      const double d1 = barrier_.d1(m);
      const double sgn = first ? 1.0 : -1.0;
      g.head(dim_) += sgn * d1 * v;
      g(dim_) += sgn * d1;
    };
    for (int i = 0; i < n1_; ++i) accumulate(movable_vertex(y, i), true);
    for (const auto& v : static1_) accumulate(v, true);
    for (int i = 0; i < n2_; ++i) accumulate(movable_vertex(y, n1_ + i), false);
    for (const auto& v : static2_) accumulate(v, false);
    return total;
  }

  bool try_axis(const std::vector<Vec>& h1, const std::vector<Vec>& h2,
                const Vec& axis, Vec& z) const {
    const Vec n = axis / axis.norm();
    double s1 = kInf, s2 = -kInf;
    for (const auto& v : h1) s1 = std::min(s1, v.dot(n));
    for (const auto& v : h2) s2 = std::max(s2, v.dot(n));
    if (s1 - s2 <= 2.0 * r_) return false;
    z.resize(dim_ + 1);
    z.head(dim_) = n;
    z(dim_) = -0.5 * (s1 + s2);
    return std::isfinite(eval_movable_free(h1, h2, z));
  }

  // eval() over explicit hulls (used before a y slice exists).
  double eval_movable_free(const std::vector<Vec>& h1, const std::vector<Vec>& h2,
                           const Vec& z) const {
    const Vec n = z.head(dim_);
    const double d = z(dim_);
    double total = 0.5 * sigma_ * z.squaredNorm();
    for (const auto& v : h1) {
      const double m = v.dot(n) + d - r_;
      if (m <= 0.0) return kInf;
      total += barrier_.value(m);
    }
    for (const auto& v : h2) {
      const double m = -v.dot(n) - d - r_;
      if (m <= 0.0) return kInf;
      total += barrier_.value(m);
    }
    return total;
  }

  int dim_;
  int n1_, n2_;
  std::vector<Vec> static1_, static2_;
  double r_;
  LogBarrier barrier_;
  double sigma_;
};

/// Mass-spring potential with a compression strain limit and an optional
/// inextensible stretch limit. y = (y_i, y_j), z a unit direction.
class SpringTerm : public PotentialTerm {
 public:
  SpringTerm(int dim, double k, double rest, double lmin,
             std::optional<double> lmax, double eps,
             std::optional<double> eps_max = std::nullopt)
      : PotentialTerm(TermKind::MassSpring, 2 * dim, dim),
        dim_(dim),
        k_(k),
        rest_(rest),
        lmin_(lmin),
        lmax_(lmax),
        barrier_(eps),
        barrier_max_(eps_max.value_or(lmax ? 0.1 * (*lmax - rest) : 1.0)) {
    z_domains_ = {{ZDomain::Kind::UnitSphere, dim}};
  }

  double stiffness() const { return k_; }
  double rest_length() const { return rest_; }
  double lower_limit() const { return lmin_; }
  std::optional<double> upper_limit() const { return lmax_; }

  double eval(const Vec& y, const Vec& z) const override {
    const Vec u = y.head(dim_) - y.tail(dim_);
    double total = 0.5 * k_ * (u - rest_ * z).squaredNorm();
    const double m = z.dot(u) - lmin_;
    if (m <= 0.0) return kInf;
    total += barrier_.value(m);
    if (lmax_) {
      const double mm = *lmax_ - u.norm();
      if (mm <= 0.0) return kInf;
      total += barrier_max_.value(mm);
    }
    return total;
  }

  double grad_hess_y(const Vec& y, const Vec& z, Vec& g, Mat& H) const override {
    const double v = eval(y, z);
    if (!std::isfinite(v)) throw InfeasiblePoint("spring grad at infinite point");
    const Vec u = y.head(dim_) - y.tail(dim_);
    Vec gu = k_ * (u - rest_ * z);
    Mat Hu = k_ * Mat::Identity(dim_, dim_);
    const double m = z.dot(u) - lmin_;
    gu += barrier_.d1(m) * z;
    Hu += barrier_.d2(m) * z * z.transpose();
    if (lmax_) {
      const double len = u.norm();
      const Vec uh = u / len;
      const double mm = *lmax_ - len;
      gu += barrier_max_.d1(mm) * (-uh);
      Hu += barrier_max_.d2(mm) * uh * uh.transpose() -
            barrier_max_.d1(mm) * (Mat::Identity(dim_, dim_) - uh * uh.transpose()) / len;
    }
    g.resize(2 * dim_);
    g.head(dim_) = gu;
    g.tail(dim_) = -gu;
    H.resize(2 * dim_, 2 * dim_);
    H.topLeftCorner(dim_, dim_) = Hu;
    H.bottomRightCorner(dim_, dim_) = Hu;
    H.topRightCorner(dim_, dim_) = -Hu;
    H.bottomLeftCorner(dim_, dim_) = -Hu;
    return v;
  }

  // Closed form: z(y) = (y_i - y_j) / ||y_i - y_j||.
  void solve_z(const Vec& y, Vec& z, double /*tol*/) const override {
    const Vec u = y.head(dim_) - y.tail(dim_);
    const double len = u.norm();
    if (len < 1e-12) throw DegenerateSpring("spring_z_solve: coincident endpoints");
    z = u / len;
  }

  bool init_z(const Vec& y, Vec& z) const override {
    const Vec u = y.head(dim_) - y.tail(dim_);
    if (u.norm() < 1e-12) return false;
    z = u / u.norm();
    return std::isfinite(eval(y, z));
  }

 private:
  int dim_;
  double k_, rest_, lmin_;
  std::optional<double> lmax_;
  LogBarrier barrier_;
  LogBarrier barrier_max_;
};

/// Strain-limited ARAP element energy. y = (y0, y1, ..., y_{d+1}) where y0 is
/// the auxiliary interior point; z = (n_1, ..., n_{d+1}, R) with the plane
/// normals separating y0 from each face and R the element rotation. With
/// strain limiting off the energy reduces to ||F - R||_F^2 and z = (R).
class ArapTerm : public PotentialTerm {
 public:
  ArapTerm(int dim, const Mat& rest, double sigma, double eps, bool strain_limit)
      : PotentialTerm(TermKind::Arap,
                      strain_limit ? (dim + 2) * dim : (dim + 1) * dim,
                      strain_limit ? (dim + 1) * dim + dim * dim : dim * dim),
        dim_(dim),
        strain_limit_(strain_limit),
        rest_inv_(rest.inverse()),
        sigma_(sigma),
        barrier_(eps) {
    if (std::abs(rest.determinant()) < 1e-14)
      throw std::invalid_argument("ArapTerm: singular rest matrix");
    // X = Y * E with E mapping vertices to edge columns; C = E * rest_inv.
    Mat E = Mat::Zero(dim_ + 1, dim_);
    for (int c = 0; c < dim_; ++c) {
      E(0, c) = -1.0;
      E(c + 1, c) = 1.0;
    }
    C_ = E * rest_inv_;
    if (strain_limit_) {
      for (int i = 0; i < dim_ + 1; ++i)
        z_domains_.push_back({ZDomain::Kind::UnitBall, dim_});
    }
    z_domains_.push_back({ZDomain::Kind::RotationGroup, dim_ * dim_});
  }

  int dim() const { return dim_; }
  bool strain_limited() const { return strain_limit_; }
  double sigma() const { return sigma_; }
  double barrier_eps() const { return barrier_.eps; }

  // Vertex j of the slice; with strain limiting j=0 is the interior point and
  // j=1..d+1 the element vertices, otherwise j=0..d are the element vertices.
  Vec vertex(const Vec& y, int j) const { return y.segment(j * dim_, dim_); }

  Mat deformation_gradient(const Vec& y) const {
    const int base = strain_limit_ ? 1 : 0;
    Mat X(dim_, dim_);
    for (int c = 0; c < dim_; ++c)
      X.col(c) = vertex(y, base + c + 1) - vertex(y, base);
    return X * rest_inv_;
  }

  Mat rotation(const Vec& z) const {
    const int off = strain_limit_ ? (dim_ + 1) * dim_ : 0;
    Mat R(dim_, dim_);
    for (int i = 0; i < dim_; ++i)
      for (int j = 0; j < dim_; ++j) R(i, j) = z(off + i * dim_ + j);
    return R;
  }

  double eval(const Vec& y, const Vec& z) const override {
    const Mat F = deformation_gradient(y);
    const Mat R = rotation(z);
    double total = (F - R).squaredNorm();
    if (!strain_limit_) return total;
    if (!(F.determinant() > 0.0)) return kInf;
    if (!inside_simplex(y)) return kInf;
    const Vec y0 = vertex(y, 0);
    for (int i = 1; i <= dim_ + 1; ++i) {
      const Vec n = z.segment((i - 1) * dim_, dim_);
      total += 0.5 * sigma_ * n.squaredNorm();
      for (int j = 1; j <= dim_ + 1; ++j) {
        if (j == i) continue;
        const double t = n.dot(vertex(y, j) - y0);
        if (t <= 0.0) return kInf;
        total += barrier_.value(t);
      }
    }
    return total;
  }

  double grad_hess_y(const Vec& y, const Vec& z, Vec& g, Mat& H) const override {
    const double v = eval(y, z);
    if (!std::isfinite(v)) throw InfeasiblePoint("arap grad at infinite point");
    const int nv = y_dim_ / dim_;
    g = Vec::Zero(y_dim_);
    H = Mat::Zero(y_dim_, y_dim_);
    const int base = strain_limit_ ? 1 : 0;
    // Elastic part ||YC - R||^2, quadratic in the element vertices.
    const Mat F = deformation_gradient(y);
    const Mat G = 2.0 * (F - rotation(z)) * C_.transpose();  // d x (d+1)
    const Mat CCt = 2.0 * C_ * C_.transpose();
    for (int a = 0; a < dim_ + 1; ++a) {
      g.segment((base + a) * dim_, dim_) += G.col(a);
      for (int b = 0; b < dim_ + 1; ++b)
        H.block((base + a) * dim_, (base + b) * dim_, dim_, dim_) +=
            CCt(a, b) * Mat::Identity(dim_, dim_);
    }
    if (!strain_limit_) return v;
    const Vec y0 = vertex(y, 0);
    for (int i = 1; i <= dim_ + 1; ++i) {
      const Vec n = z.segment((i - 1) * dim_, dim_);
      const Mat nn = n * n.transpose();
      for (int j = 1; j <= dim_ + 1; ++j) {
        if (j == i) continue;
        const double t = n.dot(vertex(y, j) - y0);
        const double d1 = barrier_.d1(t);
        const double d2 = barrier_.d2(t);
        g.segment(j * dim_, dim_) += d1 * n;
        g.segment(0, dim_) -= d1 * n;
        H.block(j * dim_, j * dim_, dim_, dim_) += d2 * nn;
        H.block(0, 0, dim_, dim_) += d2 * nn;
        H.block(j * dim_, 0, dim_, dim_) -= d2 * nn;
        H.block(0, j * dim_, dim_, dim_) -= d2 * nn;
      }
    }
    (void)nv;
    return v;
  }

  void solve_z(const Vec& y, Vec& z, double tol) const override {
    const Mat R = polar_rotation(deformation_gradient(y));
    const int off = strain_limit_ ? (dim_ + 1) * dim_ : 0;
    for (int i = 0; i < dim_; ++i)
      for (int j = 0; j < dim_; ++j) z(off + i * dim_ + j) = R(i, j);
    if (!strain_limit_) return;
    const Vec y0 = vertex(y, 0);
    for (int i = 1; i <= dim_ + 1; ++i) {
      std::vector<Vec> edges;
      for (int j = 1; j <= dim_ + 1; ++j)
        if (j != i) edges.push_back(vertex(y, j) - y0);
      ProjectedObjective obj;
      obj.value = [&](const Vec& n) {
        double t = 0.5 * sigma_ * n.squaredNorm();
        for (const auto& e : edges) {
          const double m = n.dot(e);
          if (m <= 0.0) return kInf;
          t += barrier_.value(m);
        }
        return t;
      };
      obj.value_grad = [&](const Vec& n, Vec& grad) {
        grad = sigma_ * n;
        double t = 0.5 * sigma_ * n.squaredNorm();
        for (const auto& e : edges) {
          const double m = n.dot(e);
          t += barrier_.value(m);
          if (m > 0.0) grad += barrier_.d1(m) * e;
        }
        return t;
      };
      auto ball = [](const Vec& n) -> Vec {
        const double len = n.norm();
        return len <= 1.0 ? n : Vec(n / len);
      };
      Vec n0 = z.segment((i - 1) * dim_, dim_);
      if (!std::isfinite(obj.value(n0))) {
        if (!feasible_normal(y, i, n0))
          throw InfeasibleZ("arap_z_solve: no feasible plane normal");
      }
      auto res = solve_projected_convex(obj, ball, n0, tol, 20000);
      z.segment((i - 1) * dim_, dim_) = res.x;
    }
  }

  bool init_z(const Vec& y, Vec& z) const override {
    z = Vec::Zero(z_dim_);
    const Mat F = deformation_gradient(y);
    if (strain_limit_ && !(F.determinant() > 0.0)) return false;
    if (strain_limit_ && !inside_simplex(y)) return false;
    Mat R;
    try {
      R = polar_rotation(F);
    } catch (const SingularDeformation&) {
      return false;
    }
    const int off = strain_limit_ ? (dim_ + 1) * dim_ : 0;
    for (int i = 0; i < dim_; ++i)
      for (int j = 0; j < dim_; ++j) z(off + i * dim_ + j) = R(i, j);
    if (!strain_limit_) return true;
    for (int i = 1; i <= dim_ + 1; ++i) {
      Vec n;
      if (!feasible_normal(y, i, n)) return false;
      z.segment((i - 1) * dim_, dim_) = n;
    }
    return std::isfinite(eval(y, z));
  }

  bool inside_simplex(const Vec& y) const {
    // Barycentric test of y0 against the element vertices.
    const Vec y0 = vertex(y, 0);
    Mat X(dim_, dim_);
    for (int c = 0; c < dim_; ++c) X.col(c) = vertex(y, c + 2) - vertex(y, 1);
    Eigen::FullPivLU<Mat> lu(X);
    if (!lu.isInvertible()) return false;
    const Vec u = lu.solve(y0 - vertex(y, 1));
    double w1 = 1.0 - u.sum();
    constexpr double tol = 1e-12;
    if (w1 < -tol || w1 > 1.0 + tol) return false;
    for (int i = 0; i < dim_; ++i)
      if (u(i) < -tol || u(i) > 1.0 + tol) return false;
    return true;
  }

 private:
  // Unit normal of face i (the face spanned by vertices j != i), oriented so
  // that all barrier arguments n^T (y_j - y0) are the positive plane distance.
  bool feasible_normal(const Vec& y, int i, Vec& n) const {
    const Vec y0 = vertex(y, 0);
    std::vector<Vec> face;
    for (int j = 1; j <= dim_ + 1; ++j)
      if (j != i) face.push_back(vertex(y, j));
    Vec normal(dim_);
    if (dim_ == 2) {
      const Vec e = face[1] - face[0];
      normal << -e(1), e(0);
    } else {
      const Vec e1 = face[1] - face[0];
      const Vec e2 = face[2] - face[0];
      normal = Eigen::Vector3d(e1).cross(Eigen::Vector3d(e2));
    }
    const double len = normal.norm();
    if (len < 1e-14) return false;
    normal /= len;
    const double side = normal.dot(face[0] - y0);
    if (side < 0.0) normal = -normal;
    if (normal.dot(face[0] - y0) <= 0.0) return false;
    n = normal;
    return true;
  }

  int dim_;
  bool strain_limit_;
  Mat rest_inv_;
  Mat C_;
  double sigma_;
  LogBarrier barrier_;
};

/// Cable actuator energy a * sqrt(||x_i - x_j||^2 + eps); convex, no z block.
class CableTerm : public PotentialTerm {
 public:
  CableTerm(int dim, double tension, double eps_reg)
      : PotentialTerm(TermKind::Cable, 2 * dim, 0),
        dim_(dim),
        a_(tension),
        eps_(eps_reg) {}

  double tension() const { return a_; }

  double eval(const Vec& y, const Vec& /*z*/) const override {
    const Vec u = y.head(dim_) - y.tail(dim_);
    return a_ * std::sqrt(u.squaredNorm() + eps_);
  }

  double grad_hess_y(const Vec& y, const Vec& /*z*/, Vec& g, Mat& H) const override {
    const Vec u = y.head(dim_) - y.tail(dim_);
    const double s = std::sqrt(u.squaredNorm() + eps_);
    const Vec gu = a_ * u / s;
    const Mat Hu = a_ * (Mat::Identity(dim_, dim_) / s - u * u.transpose() / (s * s * s));
    g.resize(2 * dim_);
    g.head(dim_) = gu;
    g.tail(dim_) = -gu;
    H.resize(2 * dim_, 2 * dim_);
    H.topLeftCorner(dim_, dim_) = Hu;
    H.bottomRightCorner(dim_, dim_) = Hu;
    H.topRightCorner(dim_, dim_) = -Hu;
    H.bottomLeftCorner(dim_, dim_) = -Hu;
    return a_ * s;
  }

 private:
  int dim_;
  double a_, eps_;
};

/// Velocity bound barrier on one derivative control point:
/// barrier(vbar - sqrt(||y||^2 + eps)). Convex, no z block.
class VelocityBoundTerm : public PotentialTerm {
 public:
  VelocityBoundTerm(int dim, double vbar, double eps_reg, double eps_barrier)
      : PotentialTerm(TermKind::VelocityBound, dim, 0),
        dim_(dim),
        vbar_(vbar),
        eps_(eps_reg),
        barrier_(eps_barrier) {
    if (!(vbar > std::sqrt(eps_reg)))
      throw std::invalid_argument("VelocityBoundTerm: vbar <= sqrt(eps)");
  }

  double bound() const { return vbar_; }
  double smoothing() const { return eps_; }

  double eval(const Vec& y, const Vec& /*z*/) const override {
    const double t = vbar_ - std::sqrt(y.squaredNorm() + eps_);
    if (t <= 0.0) return kInf;
    return barrier_.value(t);
  }

  double grad_hess_y(const Vec& y, const Vec& /*z*/, Vec& g, Mat& H) const override {
    const double s = std::sqrt(y.squaredNorm() + eps_);
    const double t = vbar_ - s;
    if (t <= 0.0) throw InfeasiblePoint("velocity grad at infinite point");
    const Vec q = y / s;
    const double d1 = barrier_.d1(t);
    const double d2 = barrier_.d2(t);
    g = -d1 * q;
    H = d2 * q * q.transpose() -
        d1 * (Mat::Identity(dim_, dim_) - q * q.transpose()) / s;
    return barrier_.value(t);
  }

 private:
  int dim_;
  double vbar_, eps_;
  LogBarrier barrier_;
};

}  // namespace bcadmm
