#pragma once

// Two-level additive Schwarz preconditioner and a PCG driver that recovers
// the Lanczos tridiagonal from the CG coefficients for condition estimates.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "hem/error.hpp"
#include "hem/linalg.hpp"
#include "hem/parallel.hpp"

namespace hem {

enum class SchwarzMode { two_level, coarse_only, local_only };

/// M^{-1} r = R0^T A0^{-1} R0 r + sum_i E_i A_i^{-1} E_i^T r.
class Preconditioner {
 public:
  Preconditioner(const SparseMatrix& a, std::vector<std::vector<std::size_t>> local_dofs, std::span<const SparseVector> coarse_basis,
                 SchwarzMode mode = SchwarzMode::two_level, std::size_t threads = 1)
      : n_(a.rows()), mode_(mode), threads_(threads) {
    if (a.rows() != a.cols()) throw UsageError("Preconditioner: matrix must be square");
    if (mode != SchwarzMode::local_only && !coarse_basis.empty()) {
      r0_ = rows_to_matrix(coarse_basis, n_);
      r0t_ = r0_.transpose();
      const auto a0 = multiply(multiply(r0_, a), r0t_);
      try {
        a0_ = SpdFactorization(a0, 1e-12);
      } catch (const SpdError& e) {
        throw SpdError("Preconditioner: coarse matrix is not SPD (basis dependent or degenerate) at coarse function " +
                           std::to_string(e.row()),
                       e.row());
      }
      has_coarse_ = true;
    }
    if (mode != SchwarzMode::coarse_only) {
      local_.resize(local_dofs.size());
      parallel_for(local_dofs.size(), threads_, [&](std::size_t s) {
        auto& blk = local_[s];
        blk.dofs = std::move(local_dofs[s]);
        for (auto d : blk.dofs) {
          if (d >= n_) throw UsageError("Preconditioner: local dof out of range in subdomain " + std::to_string(s));
        }
        try {
          blk.factor = SpdFactorization(a.extract(blk.dofs, blk.dofs));
        } catch (const SpdError& e) {
          throw SpdError("Preconditioner: local block of subdomain " + std::to_string(s) + " is not SPD", e.row());
        }
      });
    }
  }

  std::size_t size() const noexcept { return n_; }
  std::size_t coarse_dimension() const noexcept { return has_coarse_ ? r0_.rows() : 0; }
  std::size_t num_local() const noexcept { return local_.size(); }
  SchwarzMode mode() const noexcept { return mode_; }

  Vector apply(std::span<const double> r) const {
    if (r.size() != n_) throw UsageError("Preconditioner::apply: dimension mismatch");
    Vector z(n_, 0.0);
    if (has_coarse_) {
      const auto y = a0_.solve(spmv(r0_, r));
      const auto t = spmv(r0t_, y);
      for (std::size_t k = 0; k < n_; ++k) z[k] += t[k];
    }
    std::vector<Vector> parts(local_.size());
    parallel_for(local_.size(), threads_, [&](std::size_t s) {
      const auto& blk = local_[s];
      Vector rs(blk.dofs.size());
      for (std::size_t k = 0; k < rs.size(); ++k) rs[k] = r[blk.dofs[k]];
      parts[s] = blk.factor.solve(rs);
    });
    // fixed summation order keeps results independent of the thread count
    for (std::size_t s = 0; s < local_.size(); ++s) {
      for (std::size_t k = 0; k < parts[s].size(); ++k) z[local_[s].dofs[k]] += parts[s][k];
    }
    return z;
  }

 private:
  struct Local {
    std::vector<std::size_t> dofs;
    SpdFactorization factor;
  };
  std::size_t n_;
  SchwarzMode mode_;
  std::size_t threads_;
  bool has_coarse_ = false;
  SparseMatrix r0_;
  SparseMatrix r0t_;
  SpdFactorization a0_;
  std::vector<Local> local_;
};

struct IdentityPreconditioner {
  Vector apply(std::span<const double> r) const { return {r.begin(), r.end()}; }
};

struct PcgOptions {
  double tol = 1e-6;
  std::size_t maxit = 2000;
};

struct SolveReport {
  std::size_t iterations = 0;
  bool converged = false;
  Vector solution;
  Vector residual_history;  // ||r_i|| / ||r_0||, starting with 1
  Vector lanczos_diag;
  Vector lanczos_offdiag;
  double kappa_estimate = 1.0;
  double final_relres = 0.0;
  std::size_t coarse_dim = 0;
  double lambda_m_plus_1 = std::numeric_limits<double>::infinity();
  double wall_time = 0.0;  // seconds
};

/// Ascending eigenvalues of the leading k x k block of the Lanczos matrix.
inline Vector ritz_values(std::span<const double> diag, std::span<const double> off, std::size_t k) {
  k = std::min(k, diag.size());
  if (k == 0) return {};
  return tridiagonal_eigenvalues(Vector(diag.begin(), diag.begin() + k), Vector(off.begin(), off.begin() + (k - 1)));
}

inline double kappa_from_ritz(std::span<const double> ritz) {
  if (ritz.empty()) return 1.0;
  const double lo = ritz.front(), hi = ritz.back();
  if (!(lo > 0.0)) throw NumericalError("pcg: non-positive Ritz value; operator or preconditioner is not SPD", 0);
  return std::max(1.0, hi / lo);
}

/// Preconditioned CG from a zero initial guess, stopping on the relative
/// l2 residual. Row j of the Lanczos matrix is 1/alpha_j + beta_{j-1}/alpha_{j-1}
/// on the diagonal and sqrt(beta_j)/alpha_j beside it.
template <class P>
SolveReport pcg(const SparseMatrix& a, const P& prec, std::span<const double> b, const PcgOptions& opt = {}) {
  if (!(opt.tol > 0.0 && opt.tol < 1.0)) throw UsageError("pcg: tol must lie in (0, 1)");
  if (b.size() != a.rows()) throw UsageError("pcg: right-hand side has the wrong size");
  const auto start = std::chrono::steady_clock::now();
  const auto n = b.size();
  SolveReport rep;
  rep.solution.assign(n, 0.0);
  Vector r(b.begin(), b.end());
  const double r0 = norm2(r);
  rep.residual_history.push_back(1.0);
  if (r0 == 0.0) {
    rep.converged = true;
    rep.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
  }
  Vector z = prec.apply(r);
  Vector p = z;
  double rz = dot(r, z);
  double prev_alpha = 0.0, prev_beta = 0.0;
  Vector ap(n);
  while (rep.iterations < opt.maxit) {
    a.multiply(p, ap);
    const double pap = dot(p, ap);
    if (!(pap > 0.0) || !(rz > 0.0)) throw NumericalError("pcg: loss of positive definiteness", rep.iterations);
    const double alpha = rz / pap;
    const auto j = rep.iterations;
    rep.lanczos_diag.push_back(j == 0 ? 1.0 / alpha : 1.0 / alpha + prev_beta / prev_alpha);
    axpy(alpha, p, rep.solution);
    axpy(-alpha, ap, r);
    ++rep.iterations;
    const double rel = norm2(r) / r0;
    rep.residual_history.push_back(rel);
    if (!std::isfinite(rel)) throw NumericalError("pcg: residual is not finite", rep.iterations);
    if (rel <= opt.tol) {
      rep.converged = true;
      break;
    }
    z = prec.apply(r);
    const double rz_next = dot(r, z);
    const double beta = rz_next / rz;
    rep.lanczos_offdiag.push_back(std::sqrt(beta) / alpha);
    for (std::size_t k = 0; k < n; ++k) p[k] = z[k] + beta * p[k];
    rz = rz_next;
    prev_alpha = alpha;
    prev_beta = beta;
  }
  rep.final_relres = rep.residual_history.back();
  rep.lanczos_offdiag.resize(rep.lanczos_diag.empty() ? 0 : rep.lanczos_diag.size() - 1);
  rep.kappa_estimate = kappa_from_ritz(ritz_values(rep.lanczos_diag, rep.lanczos_offdiag, rep.lanczos_diag.size()));
  rep.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

struct ConditionOracle {
  Vector eigenvalues;  // ascending spectrum of M^{-1} A
  double kappa = 1.0;
};

inline constexpr std::size_t kOracleMaxSize = 2000;

/// Exact spectrum of M^{-1}A via the similar symmetric matrix L^T M^{-1} L
/// with A = L L^T.
template <class P>
ConditionOracle dense_condition_oracle(const SparseMatrix& a, const P& prec) {
  const auto n = a.rows();
  if (n > kOracleMaxSize) {
    throw UsageError("dense_condition_oracle: " + std::to_string(n) + " dofs exceeds the limit of " + std::to_string(kOracleMaxSize));
  }
  const auto l = dense_cholesky(DenseMatrix::from_sparse(a));
  // W = M^{-1} L, one column at a time
  DenseMatrix w(n, n);
  Vector col(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) col[i] = l(i, j);
    const auto z = prec.apply(col);
    for (std::size_t i = 0; i < n; ++i) w(i, j) = z[i];
  }
  DenseMatrix c(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = i; k < n; ++k) s += l(k, i) * w(k, j);
      c(i, j) = s;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) c(i, j) = c(j, i) = 0.5 * (c(i, j) + c(j, i));
  }
  ConditionOracle out;
  out.eigenvalues = symmetric_eigen(c, false).values;
  if (n > 0) {
    if (!(out.eigenvalues.front() > 0.0)) throw NumericalError("dense_condition_oracle: preconditioned operator is not positive", 0);
    out.kappa = out.eigenvalues.back() / out.eigenvalues.front();
  }
  return out;
}

}  // namespace hem
