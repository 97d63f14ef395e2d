#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>

#include "bcadmm/problem.hpp"

namespace bcadmm {

struct InfeasibleStart : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SubproblemFailure : std::runtime_error {
  SubproblemFailure(const std::string& what, int term)
      : std::runtime_error(what), term_index(term) {}
  int term_index;
};
struct StaleFactorization : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BcAdmmConfig {
  double eps = 1e-4;
  double beta = 100.0;
  double beta_y = 1.0;
  double kappa = 2.1;
  double kappa_y = 2.0;
  double gamma = 0.95;
  double eta = 1.0 - 1e-5;
  int max_iters = 100000;
  bool lazy_check = true;  // false: the NoCheck variant
  double inner_tol = 1e-10;
  double time_budget = 0.0;  // seconds, 0 = unlimited
  int workers = 1;

  void validate() const {
    if (!(kappa > kappa_y && kappa_y > 1.0))
      throw std::invalid_argument("config: need kappa > kappa_y > 1");
    if (!(gamma > 0.0 && gamma < 1.0))
      throw std::invalid_argument("config: gamma outside (0,1)");
    if (!(eta > 0.0 && eta < 1.0))
      throw std::invalid_argument("config: eta outside (0,1)");
    if (!(beta > 0.0 && beta_y > 0.0 && eps > 0.0))
      throw std::invalid_argument("config: beta, beta_y, eps must be positive");
  }
};

struct IterationRecord {
  int iter = 0;
  double wall_time_s = 0.0;
  double objective = 0.0;
  double stationarity_inf = 0.0;
  double residual_inf = 0.0;
  double best_obj = 0.0;
  double beta = 0.0;
  double beta_y = 0.0;
  double beta_x = 0.0;
  int K = 0;
  int z_accepted = 0;
  int restarted = 0;
  int terms_count = 0;
  bool has_beta = true;  // baselines serialize the beta/K columns empty
};

using Recorder = std::function<void(const IterationRecord&)>;

enum class StepOutcome { Continue, Converged, Restarted, TermsInserted };

enum class SolveStatus {
  Converged,
  MaxIterations,
  TimeBudget,
  DetectorViolation,
  LineSearchStalled,
  RegularizationExhausted
};

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxIterations: return "max-iterations";
    case SolveStatus::TimeBudget: return "time-budget";
    case SolveStatus::DetectorViolation: return "detector-violation";
    case SolveStatus::LineSearchStalled: return "line-search-stalled";
    case SolveStatus::RegularizationExhausted: return "regularization-exhausted";
  }
  return "?";
}

struct SolverState {
  Vec x, y, z, lambda;
  Vec best_x, best_z;
  double best_obj = kInf;
  int K = 1;
  double beta = 0.0, beta_y = 0.0, beta_x = 0.0;
  double eps_x = 0.0, eps_y = 0.0;
  double a_norm_sq = 0.0;
  int iter = 0;
  int restarts = 0;
  std::vector<int> z_accept_log;
};

struct SolveResult {
  Vec x, y, z;
  SolveStatus status = SolveStatus::MaxIterations;
  Vec best_x, best_z;
  double best_obj = kInf;
  int iters = 0;
  int restarts = 0;
  std::vector<int> z_accept_log;
  bool lazy_check = true;
};

/// The practical bi-convex ADMM loop: proximal x/y updates, per-term z solve,
/// lazy z acceptance, best-pair tracking, detector-driven term insertion and
/// feasibility restarts with geometric penalty growth.
class BcAdmmSolver {
 public:
  BcAdmmSolver(ConsensusProblem problem, BcAdmmConfig cfg)
      : p_(std::move(problem)), cfg_(cfg) {
    cfg_.validate();
  }

  const ConsensusProblem& problem() const { return p_; }
  const SolverState& state() const { return s_; }
  const BcAdmmConfig& config() const { return cfg_; }

  void init(const Vec& x0) {
    if (x0.size() != p_.n()) throw ShapeMismatch("init: x0 dimension mismatch");
    s_ = SolverState{};
    s_.x = x0;
    s_.y = p_.apply_A(x0);
    if (!p_.init_z_all(s_.y, s_.z))
      throw InfeasibleStart("init: a term has no finite-energy z at x0");
    p_.solve_z_all(s_.y, s_.z, cfg_.inner_tol, cfg_.workers);
    const double obj = p_.f().value(x0) + p_.eval_g(s_.y, s_.z);
    if (!std::isfinite(obj)) throw InfeasibleStart("init: infinite objective at x0");
    s_.lambda = p_.m() > 0 ? p_.grad_g_y(s_.y, s_.z) : Vec::Zero(0);
    s_.beta = cfg_.beta;
    s_.beta_y = cfg_.beta_y;
    refresh_coupling();
    refresh_a_norm();
    refactorize();
    s_.best_x = s_.x;
    s_.best_z = s_.z;
    s_.best_obj = obj;
    s_.K = 1;
    t_start_ = Clock::now();
  }

  /// Eq. 14a: with quadratic f the proximal x subproblem is one linear solve
  /// of (Q + beta A^T A + beta_x I) x = beta_x x^k + beta A^T y - A^T lambda - b.
  Vec x_update() {
    Vec rhs = s_.beta_x * s_.x - p_.f().b;
    if (p_.m() > 0)
      rhs += p_.A().applyT(Vec(s_.beta * s_.y - s_.lambda));
    const Vec x_new = x_factor_->solve(rhs);
    const Vec resid = system_apply(x_new) - rhs;
    if (resid.lpNorm<Eigen::Infinity>() >
        1e-8 * (1.0 + rhs.lpNorm<Eigen::Infinity>()))
      throw StaleFactorization("x_update: normal equation residual too large");
    s_.x = x_new;
    return x_new;
  }

  /// Eq. 14b: independent strongly convex solves per term, warm started at
  /// the previous slice.
  Vec y_update() {
    const Vec ax = p_.apply_A(s_.x);
    Vec y_new = s_.y;
    std::vector<int> failed(p_.term_count(), 0);
    parallel_for(p_.term_count(), cfg_.workers, [&](int t) {
      const auto& term = p_.term(t);
      const int off = p_.y_offset(t);
      const auto res = term.solve_y(
          ax.segment(off, term.y_dim()), s_.lambda.segment(off, term.y_dim()),
          p_.slice_z(s_.z, t), s_.y.segment(off, term.y_dim()), s_.beta,
          s_.beta_y, cfg_.inner_tol, 500);
      if (!res.converged) failed[t] = 1;
      y_new.segment(off, term.y_dim()) = res.x;
    });
    for (int t = 0; t < p_.term_count(); ++t)
      if (failed[t])
        throw SubproblemFailure("y_update: inner solver failed", t);
    s_.y = y_new;
    return y_new;
  }

  /// Eq. 14c: per-term z(y^{ k+1}), warm started; returns the candidate
  /// without committing it (the lazy gate decides).
  Vec z_update() {
    Vec z_cand = s_.z;
    p_.solve_z_all(s_.y, z_cand, cfg_.inner_tol, cfg_.workers);
    return z_cand;
  }

  StepOutcome step(const Recorder& recorder = {}) {
    x_update();
    y_update();
    const Vec z_prev = s_.z;
    const Vec z_cand = z_update();

    Metrics mtr = p_.eval_metrics(s_.x, s_.y, z_cand, z_prev, s_.best_z,
                                  s_.best_obj, cfg_.eta);

    // Termination uses the fresh candidate.
    if (std::max(mtr.stationarity_inf, mtr.residual_inf) <= cfg_.eps) {
      s_.z = z_cand;
      s_.z_accept_log.push_back(s_.iter);
      if (mtr.objective < s_.best_obj) {
        s_.best_x = s_.x;
        s_.best_z = s_.z;
        s_.best_obj = mtr.objective;
      }
      record(recorder, mtr, /*z_accepted=*/1, /*restarted=*/0);
      ++s_.iter;
      return StepOutcome::Converged;
    }

    const bool gate =
        !cfg_.lazy_check ||
        (mtr.objective < mtr.lambda_threshold && theta_small(mtr.theta));
    bool z_accepted = false;
    if (gate) {
      auto specs = p_.detect_constraints(s_.x);
      if (!specs.empty()) {
        rollback_to_best();
        p_.insert_terms(specs, s_.x, &s_.y, &s_.lambda, &s_.z, cfg_.inner_tol);
        p_.solve_z_all(s_.y, s_.z, cfg_.inner_tol, cfg_.workers);
        refresh_best_after_insertion();
        refresh_a_norm();
        s_.beta_x = s_.beta * (1.0 / s_.eps_x - 1.0) * s_.a_norm_sq / cfg_.gamma;
        refactorize();
        Metrics m2 = p_.eval_metrics(s_.x, s_.y, s_.z, s_.z, s_.best_z,
                                     s_.best_obj, cfg_.eta);
        record(recorder, m2, 0, 0);
        ++s_.iter;
        return StepOutcome::TermsInserted;
      }
      if (cfg_.lazy_check) {
        s_.best_x = s_.x;
        s_.best_z = z_cand;
        s_.best_obj = mtr.objective;
        ++s_.K;
        s_.z = z_cand;
        z_accepted = true;
      } else {
        // NoCheck: always take the candidate; keep the best pair guarded so
        // restarts always have a finite anchor.
        s_.z = z_cand;
        z_accepted = true;
        if (mtr.objective < s_.best_obj) {
          s_.best_x = s_.x;
          s_.best_z = z_cand;
          s_.best_obj = mtr.objective;
        }
      }
      s_.z_accept_log.push_back(s_.iter);
    }
    // else: z stays at z^k (lazy rejection)

    if (p_.m() > 0) s_.lambda += s_.beta * (p_.apply_A(s_.x) - s_.y);

    // Feasibility restart on an infinite objective at the final z.
    const double obj_now = p_.eval_objective(s_.x, s_.z);
    if (!std::isfinite(obj_now)) {
      rollback_to_best();
      s_.beta_y *= cfg_.kappa_y;
      s_.beta *= cfg_.kappa;
      refresh_coupling();
      s_.beta_x = s_.beta * (1.0 / s_.eps_x - 1.0) * s_.a_norm_sq / cfg_.gamma;
      refactorize();
      ++s_.restarts;
      IterationRecord row = base_record(mtr, z_accepted ? 1 : 0, 1);
      row.objective = kInf;  // the objective that forced the restart
      if (recorder) recorder(row);
      ++s_.iter;
      return StepOutcome::Restarted;
    }

    Metrics final_mtr = mtr;
    if (!z_accepted)
      final_mtr = p_.eval_metrics(s_.x, s_.y, s_.z, z_prev, s_.best_z,
                                  s_.best_obj, cfg_.eta);
    record(recorder, final_mtr, z_accepted ? 1 : 0, 0);
    ++s_.iter;
    return StepOutcome::Continue;
  }

  SolveResult solve(const Vec& x0, const Recorder& recorder = {}) {
    init(x0);
    SolveResult result;
    result.lazy_check = cfg_.lazy_check;
    result.status = SolveStatus::MaxIterations;
    while (s_.iter < cfg_.max_iters) {
      if (cfg_.time_budget > 0.0 && elapsed() > cfg_.time_budget) {
        result.status = SolveStatus::TimeBudget;
        break;
      }
      if (step(recorder) == StepOutcome::Converged) {
        result.status = SolveStatus::Converged;
        break;
      }
    }
    result.x = s_.x;
    result.y = s_.y;
    result.z = s_.z;
    result.best_x = s_.best_x;
    result.best_z = s_.best_z;
    result.best_obj = s_.best_obj;
    result.iters = s_.iter;
    result.restarts = s_.restarts;
    result.z_accept_log = s_.z_accept_log;
    return result;
  }

  double elapsed() const {
    return std::chrono::duration<double>(Clock::now() - t_start_).count();
  }

 private:
  using Clock = std::chrono::steady_clock;

  void refresh_coupling() {
    s_.eps_x = s_.beta_y * cfg_.gamma / (s_.beta_y + s_.beta * cfg_.gamma);
    s_.eps_y = s_.beta * cfg_.gamma / (s_.beta_y + s_.beta * cfg_.gamma);
  }

  void refresh_a_norm() {
    if (p_.m() == 0) {
      s_.a_norm_sq = 0.0;
    } else {
      s_.a_norm_sq = operator_norm_sq(p_.A());
    }
    s_.beta_x = s_.beta * (1.0 / s_.eps_x - 1.0) * s_.a_norm_sq / cfg_.gamma;
  }

  Vec system_apply(const Vec& x) const {
    Vec out = p_.f().Q.apply(x) + s_.beta_x * x;
    if (p_.m() > 0) out += p_.A().applyT(Vec(s_.beta * p_.apply_A(x)));
    return out;
  }

  void refactorize() {
    SpMat sys = p_.f().Q.eigen();
    if (p_.m() > 0) {
      const SpMat& a = p_.A().eigen();
      sys = sys + SpMat(s_.beta * (a.transpose() * a).pruned());
    }
    SpMat id(p_.n(), p_.n());
    id.setIdentity();
    sys = sys + SpMat(s_.beta_x * id);
    SparseSymMatrix wrapped;
    wrapped.eigen() = sys;
    x_factor_.emplace(wrapped);
  }

  // theta <= eta^K evaluated in log space to dodge pow underflow on long runs.
  bool theta_small(double theta) const {
    if (theta == 0.0) return true;
    if (!std::isfinite(theta)) return false;
    return std::log(theta) <= static_cast<double>(s_.K) * std::log(cfg_.eta);
  }

  void rollback_to_best() {
    s_.x = s_.best_x;
    s_.z = s_.best_z;
    s_.y = p_.apply_A(s_.x);
    s_.lambda = p_.m() > 0 ? p_.grad_g_y(s_.y, s_.z) : Vec::Zero(0);
  }

  void refresh_best_after_insertion() {
    s_.best_x = s_.x;
    s_.best_z = s_.z;
    s_.best_obj = p_.f().value(s_.x) + p_.eval_g(s_.y, s_.z);
  }

  IterationRecord base_record(const Metrics& mtr, int z_accepted,
                              int restarted) const {
    IterationRecord row;
    row.iter = s_.iter;
    row.wall_time_s = elapsed();
    row.objective = mtr.objective;
    row.stationarity_inf = mtr.stationarity_inf;
    row.residual_inf = mtr.residual_inf;
    row.best_obj = s_.best_obj;
    row.beta = s_.beta;
    row.beta_y = s_.beta_y;
    row.beta_x = s_.beta_x;
    row.K = s_.K;
    row.z_accepted = z_accepted;
    row.restarted = restarted;
    row.terms_count = p_.term_count();
    return row;
  }

  void record(const Recorder& recorder, const Metrics& mtr, int z_accepted,
              int restarted) const {
    if (recorder) recorder(base_record(mtr, z_accepted, restarted));
  }

  ConsensusProblem p_;
  BcAdmmConfig cfg_;
  SolverState s_;
  std::optional<CholeskyFactor> x_factor_;
  Clock::time_point t_start_;
};

}  // namespace bcadmm
