#pragma once

#include <functional>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "bcadmm/parallel.hpp"
#include "bcadmm/terms.hpp"

namespace bcadmm {

struct ShapeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct OverlappingSlices : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InfeasibleInsertion : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// f(x) = x^T Q x / 2 + b^T x + c with Q PSD. The constant c carries the
/// positivity shift for gravity objectives and never affects gradients.
struct QuadraticObjective {
  SparseSymMatrix Q;
  Vec b;
  double c = 0.0;

  int n() const { return static_cast<int>(b.size()); }
  double value(const Vec& x) const { return 0.5 * x.dot(Q.apply(x)) + b.dot(x) + c; }
  Vec gradient(const Vec& x) const { return Q.apply(x) + b; }

  static QuadraticObjective zero(int n) {
    QuadraticObjective f;
    f.Q = SparseSymMatrix::from_lower_triplets(n, {});
    f.b = Vec::Zero(n);
    return f;
  }

  // PSD check: Cholesky of Q + delta*I must succeed.
  void validate() const {
    if (Q.n() != n()) throw ShapeMismatch("QuadraticObjective: Q/b size mismatch");
    const double delta = 1e-12 * std::max(1.0, Mat(Q.eigen()).trace());
    SpMat shifted = Q.eigen();
    SpMat id(Q.n(), Q.n());
    id.setIdentity();
    shifted += delta * id;
    Eigen::SimplicialLLT<SpMat> llt(shifted);
    if (llt.info() != Eigen::Success)
      throw NotPositiveDefinite("QuadraticObjective: Q not PSD");
  }
};

/// Rows of A contributed by one term: rows[k] lists the (x index, coefficient)
/// pairs of the k-th row of the term's y slice. Navigation/cloth/elastic use
/// pure selection rows; derivative-extraction blocks use general rows.
using TermRows = std::vector<std::vector<std::pair<int, double>>>;

struct TermSpec {
  std::shared_ptr<const PotentialTerm> term;
  TermRows rows;
  std::string key;        // dedup identity across detector invocations
  bool violated = false;  // no finite-energy z exists at the probed x
  int y_offset = -1;      // explicit slice start; -1 assigns sequentially
};

struct Metrics {
  double objective;         // f(x) + g(Ax, z)
  double stationarity_inf;  // ||grad f(x) + A^T grad_y g(y, z)||_inf
  double residual_inf;      // ||Ax - y||_inf
  double theta;             // same stacked norm with the previous z
  double lambda_threshold;  // best + (1 - eta) * (g(y,z) - g(y,z_best))
};

class ConsensusProblem;
using Detector =
    std::function<std::vector<TermSpec>(const Vec& x, const ConsensusProblem&)>;

/// f, A and the term list of the consensus form; owns the y/z slice layout.
/// Immutable between insertions; evaluations use a fixed term order so sums
/// are bit-reproducible.
class ConsensusProblem {
 public:
  static ConsensusProblem assemble(QuadraticObjective f,
                                   std::vector<TermSpec> specs) {
    f.validate();
    ConsensusProblem p(std::move(f));
    const bool explicit_offsets =
        !specs.empty() && specs.front().y_offset >= 0;
    if (explicit_offsets) {
      // Validate that the explicit slices partition [0, m).
      std::vector<std::pair<int, int>> ranges;
      for (const auto& s : specs) {
        if (s.y_offset < 0)
          throw ShapeMismatch("assemble: mixed explicit/auto slices");
        ranges.emplace_back(s.y_offset, s.y_offset + s.term->y_dim());
      }
      std::sort(ranges.begin(), ranges.end());
      int cursor = 0;
      for (const auto& [lo, hi] : ranges) {
        if (lo < cursor) throw OverlappingSlices("assemble: overlapping y slices");
        if (lo > cursor) throw ShapeMismatch("assemble: gap in y slices");
        cursor = hi;
      }
      std::sort(specs.begin(), specs.end(),
                [](const TermSpec& a, const TermSpec& b) {
                  return a.y_offset < b.y_offset;
                });
    }
    for (auto& s : specs) p.push_term(std::move(s));
    return p;
  }

  int n() const { return f_.n(); }
  int m() const { return m_; }
  int z_size() const { return z_size_; }
  int term_count() const { return static_cast<int>(terms_.size()); }

  const QuadraticObjective& f() const { return f_; }
  const PotentialTerm& term(int t) const { return *terms_[t]; }
  const std::string& term_key(int t) const { return keys_[t]; }
  int y_offset(int t) const { return y_offsets_[t]; }
  int z_offset(int t) const { return z_offsets_[t]; }

  void set_detector(Detector d) { detector_ = std::move(d); }
  bool has_detector() const { return static_cast<bool>(detector_); }

  const SparseMatrix& A() const {
    if (a_dirty_) {
      a_cache_ = SparseMatrix(m_, n(), a_triplets_);
      a_dirty_ = false;
    }
    return a_cache_;
  }

  Vec apply_A(const Vec& x) const { return A().apply(x); }

  // g(y, z) = sum_i g_i(y_i, z_i), extended real, summed in term order.
  double eval_g(const Vec& y, const Vec& z) const {
    double total = 0.0;
    for (int t = 0; t < term_count(); ++t) {
      const double v = terms_[t]->eval(slice_y(y, t), slice_z(z, t));
      if (!std::isfinite(v)) return kInf;
      total += v;
    }
    return total;
  }

  double eval_objective(const Vec& x, const Vec& z) const {
    const double fx = f_.value(x);
    const double g = term_count() == 0 ? 0.0 : eval_g(apply_A(x), z);
    return std::isfinite(g) ? fx + g : kInf;
  }

  // grad_y g(y, z) stacked over slices; requires every term finite.
  Vec grad_g_y(const Vec& y, const Vec& z) const {
    Vec gy = Vec::Zero(m_);
    for (int t = 0; t < term_count(); ++t) {
      Vec g;
      terms_[t]->grad_y(slice_y(y, t), slice_z(z, t), g);
      gy.segment(y_offsets_[t], terms_[t]->y_dim()) = g;
    }
    return gy;
  }

  // Per-term z solve at the given y, warm started in place.
  void solve_z_all(const Vec& y, Vec& z, double tol, int workers = 1) const {
    parallel_for(term_count(), workers, [&](int t) {
      Vec zt = slice_z(z, t);
      if (zt.size() == 0) return;
      terms_[t]->solve_z(slice_y(y, t), zt, tol);
      z.segment(z_offsets_[t], terms_[t]->z_dim()) = zt;
    });
  }

  // Feasible z initialization for every term; false if some term has none.
  bool init_z_all(const Vec& y, Vec& z) const {
    z = Vec::Zero(z_size_);
    for (int t = 0; t < term_count(); ++t) {
      Vec zt = Vec::Zero(terms_[t]->z_dim());
      if (!terms_[t]->init_z(slice_y(y, t), zt)) return false;
      z.segment(z_offsets_[t], terms_[t]->z_dim()) = zt;
    }
    return true;
  }

  /// All five Alg.-1 metrics: theta uses the previous z, lambda_threshold
  /// the best pair's z. Any quantity whose y slice is infeasible for the z
  /// it uses comes back +inf.
  Metrics eval_metrics(const Vec& x, const Vec& y, const Vec& z,
                       const Vec& z_prev, const Vec& z_best, double best_obj,
                       double eta) const {
    Metrics mtr{};
    const Vec ax = apply_A(x);
    mtr.residual_inf = m_ == 0 ? 0.0 : (ax - y).lpNorm<Eigen::Infinity>();
    mtr.objective = eval_objective(x, z);
    const Vec gf = f_.gradient(x);
    mtr.stationarity_inf = stationarity(gf, y, z);
    const double theta_grad = stationarity(gf, y, z_prev);
    mtr.theta = std::max(theta_grad, mtr.residual_inf);
    mtr.lambda_threshold = lambda_threshold(y, z, z_best, best_obj, eta);
    return mtr;
  }

  double lambda_threshold(const Vec& y, const Vec& z_new, const Vec& z_best,
                          double best_obj, double eta) const {
    const double g_new = eval_g(y, z_new);
    const double g_best = eval_g(y, z_best);
    if (!std::isfinite(g_new) || !std::isfinite(g_best) ||
        !std::isfinite(best_obj))
      return kInf;
    return best_obj + (1.0 - eta) * (g_new - g_best);
  }

  // ||grad f(x) + A^T grad_y g(y,z)||_inf, +inf if any term infeasible.
  double stationarity(const Vec& grad_f, const Vec& y, const Vec& z) const {
    Vec gy = Vec::Zero(m_);
    for (int t = 0; t < term_count(); ++t) {
      const Vec ys = slice_y(y, t);
      const Vec zs = slice_z(z, t);
      if (!std::isfinite(terms_[t]->eval(ys, zs))) return kInf;
      Vec g;
      terms_[t]->grad_y(ys, zs, g);
      gy.segment(y_offsets_[t], terms_[t]->y_dim()) = g;
    }
    Vec total = grad_f;
    if (m_ > 0) total += A().applyT(gy);
    return total.lpNorm<Eigen::Infinity>();
  }

  /// Detector hook: proximity term specs not yet present, each tagged
  /// feasible or violated at the probed x.
  std::vector<TermSpec> detect_constraints(const Vec& x) const {
    if (!detector_) return {};
    std::vector<TermSpec> out;
    for (auto& spec : detector_(x, *this)) {
      if (known_keys_.count(spec.key)) continue;
      out.push_back(std::move(spec));
    }
    return out;
  }

  /// Inserts detected terms: A gains rows, y gains (Ax)|new, lambda gains
  /// grad g_i at that point and z gains z_i(y_i). y/lambda may be null for
  /// solvers without a slack state.
  void insert_terms(const std::vector<TermSpec>& specs, const Vec& x, Vec* y,
                    Vec* lambda, Vec* z, double ztol) {
    for (const auto& spec : specs) {
      const int t = term_count();
      push_term_copy(spec);
      const auto& term = *terms_[t];
      const Vec y_new = gather_rows(spec.rows, x);
      Vec z_new = Vec::Zero(term.z_dim());
      if (term.z_dim() > 0) {
        if (!term.init_z(y_new, z_new))
          throw InfeasibleInsertion("insert_terms: no finite-energy z for " +
                                    spec.key);
        term.solve_z(y_new, z_new, ztol);
      }
      if (!std::isfinite(term.eval(y_new, z_new)))
        throw InfeasibleInsertion("insert_terms: inserted term infeasible at x");
      if (y) append(*y, y_new);
      if (lambda) {
        Vec g;
        term.grad_y(y_new, z_new, g);
        append(*lambda, g);
      }
      if (z) append(*z, z_new);
    }
  }

  Vec slice_y(const Vec& y, int t) const {
    return y.segment(y_offsets_[t], terms_[t]->y_dim());
  }
  Vec slice_z(const Vec& z, int t) const {
    return z.segment(z_offsets_[t], terms_[t]->z_dim());
  }

 private:
  explicit ConsensusProblem(QuadraticObjective f) : f_(std::move(f)) {}

  static void append(Vec& v, const Vec& tail) {
    Vec out(v.size() + tail.size());
    out << v, tail;
    v = std::move(out);
  }

  Vec gather_rows(const TermRows& rows, const Vec& x) const {
    Vec out = Vec::Zero(static_cast<Eigen::Index>(rows.size()));
    for (size_t k = 0; k < rows.size(); ++k)
      for (const auto& [col, val] : rows[k]) out(k) += val * x(col);
    return out;
  }

  void push_term(TermSpec&& spec) { push_term_copy(spec); }

  void push_term_copy(const TermSpec& spec) {
    if (!spec.term) throw ShapeMismatch("assemble: null term");
    if (static_cast<int>(spec.rows.size()) != spec.term->y_dim())
      throw ShapeMismatch("assemble: row count != term y dimension for " +
                          spec.key);
    for (const auto& row : spec.rows)
      for (const auto& [col, val] : row) {
        if (col < 0 || col >= n())
          throw ShapeMismatch("assemble: x index out of range");
        (void)val;
      }
    const int y_off = m_;
    for (size_t k = 0; k < spec.rows.size(); ++k)
      for (const auto& [col, val] : spec.rows[k])
        a_triplets_.emplace_back(y_off + static_cast<int>(k), col, val);
    terms_.push_back(spec.term);
    keys_.push_back(spec.key);
    y_offsets_.push_back(y_off);
    z_offsets_.push_back(z_size_);
    m_ += spec.term->y_dim();
    z_size_ += spec.term->z_dim();
    known_keys_.insert(spec.key);
    a_dirty_ = true;
  }

  QuadraticObjective f_;
  std::vector<std::shared_ptr<const PotentialTerm>> terms_;
  std::vector<std::string> keys_;
  std::vector<int> y_offsets_;
  std::vector<int> z_offsets_;
  std::set<std::string> known_keys_;
  int m_ = 0;
  int z_size_ = 0;
  std::vector<Triplet> a_triplets_;
  Detector detector_;
  mutable SparseMatrix a_cache_;
  mutable bool a_dirty_ = true;
};

}  // namespace bcadmm
