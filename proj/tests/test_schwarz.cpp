#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hem/coarse.hpp"
#include "hem/schwarz.hpp"

using namespace hem;

namespace {

CoefficientField random_field(const Mesh& m, std::uint64_t seed, double decades) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, decades);
  CoefficientField f{Vector(m.num_elements())};
  for (auto& v : f.values) v = std::pow(10.0, u(rng));
  return f;
}

Vector random_vector(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vector v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

std::vector<std::vector<std::size_t>> local_dofs(const Discretization& d, std::size_t delta) {
  const auto o = extend_overlap(d.mesh, d.partition, delta);
  std::vector<std::vector<std::size_t>> out;
  for (const auto& nodes : o.nodes) {
    std::vector<std::size_t> dofs;
    for (auto v : nodes) dofs.push_back(d.system.dof(v));
    out.push_back(std::move(dofs));
  }
  return out;
}

Vector exact_solve(const SparseMatrix& a, std::span<const double> r) { return spd_solve(spd_factorize(a), r); }

double max_diff(std::span<const double> x, std::span<const double> y) {
  double m = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) m = std::max(m, std::abs(x[k] - y[k]));
  return m;
}

}  // namespace

TEST(Pcg, IdentityConvergesInOneStep) {
  const auto a = SparseMatrix::identity(5);
  const Vector b{1, 2, 3, 4, 5};
  const auto rep = pcg(a, IdentityPreconditioner{}, b);
  EXPECT_TRUE(rep.converged);
  EXPECT_EQ(rep.iterations, 1u);
  EXPECT_NEAR(rep.kappa_estimate, 1.0, 1e-14);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(rep.solution[k], b[k], 1e-14);
  EXPECT_EQ(rep.residual_history.front(), 1.0);
}

TEST(Pcg, DiagonalTwoByTwo) {
  const auto a = SparseMatrix::from_triplets(2, 2, {{0, 0, 1.0}, {1, 1, 4.0}});
  const auto rep = pcg(a, IdentityPreconditioner{}, Vector{1.0, 1.0}, {1e-12, 10});
  EXPECT_TRUE(rep.converged);
  EXPECT_EQ(rep.iterations, 2u);
  EXPECT_NEAR(rep.solution[0], 1.0, 1e-12);
  EXPECT_NEAR(rep.solution[1], 0.25, 1e-12);
  EXPECT_NEAR(rep.kappa_estimate, 4.0, 1e-10);
  EXPECT_NEAR(dense_condition_oracle(a, IdentityPreconditioner{}).kappa, 4.0, 1e-12);
}

TEST(Pcg, ZeroRightHandSide) {
  const auto a = SparseMatrix::identity(3);
  const auto rep = pcg(a, IdentityPreconditioner{}, Vector(3, 0.0));
  EXPECT_TRUE(rep.converged);
  EXPECT_EQ(rep.iterations, 0u);
  EXPECT_EQ(rep.solution, Vector(3, 0.0));
}

TEST(Pcg, InputValidationAndBreakdown) {
  const auto a = SparseMatrix::identity(3);
  EXPECT_THROW(pcg(a, IdentityPreconditioner{}, Vector(3, 1.0), {0.0, 10}), UsageError);
  EXPECT_THROW(pcg(a, IdentityPreconditioner{}, Vector(3, 1.0), {1.0, 10}), UsageError);
  EXPECT_THROW(pcg(a, IdentityPreconditioner{}, Vector(2, 1.0)), UsageError);
  const auto indef = SparseMatrix::from_triplets(2, 2, {{0, 0, 1.0}, {1, 1, -1.0}});
  EXPECT_THROW(pcg(indef, IdentityPreconditioner{}, Vector{0.0, 1.0}), NumericalError);
}

TEST(Pcg, MaxitReportsNonConvergence) {
  const auto mesh = build_structured_mesh(16);
  const auto sys = assemble_system(mesh, random_field(mesh, 1, 4.0));
  const auto rep = pcg(sys.A, IdentityPreconditioner{}, sys.b, {1e-10, 3});
  EXPECT_FALSE(rep.converged);
  EXPECT_EQ(rep.iterations, 3u);
  EXPECT_GT(rep.final_relres, 1e-10);
  EXPECT_EQ(rep.residual_history.size(), 4u);
}

TEST(Ritz, InterlacingAndInsideSpectrum) {
  const auto mesh = build_structured_mesh(10);
  const auto sys = assemble_system(mesh, random_field(mesh, 2, 3.0));
  const auto rep = pcg(sys.A, IdentityPreconditioner{}, sys.b, {1e-10, 500});
  const auto exact = dense_condition_oracle(sys.A, IdentityPreconditioner{});
  for (std::size_t k = 2; k <= rep.lanczos_diag.size(); ++k) {
    const auto small = ritz_values(rep.lanczos_diag, rep.lanczos_offdiag, k - 1);
    const auto big = ritz_values(rep.lanczos_diag, rep.lanczos_offdiag, k);
    for (std::size_t i = 0; i + 1 < k; ++i) {
      EXPECT_LE(big[i], small[i] * (1 + 1e-9));
      EXPECT_GE(big[i + 1], small[i] * (1 - 1e-9));
    }
  }
  const auto ritz = ritz_values(rep.lanczos_diag, rep.lanczos_offdiag, rep.lanczos_diag.size());
  EXPECT_GE(ritz.front(), exact.eigenvalues.front() * (1 - 1e-6));
  EXPECT_LE(ritz.back(), exact.eigenvalues.back() * (1 + 1e-6));
  EXPECT_LE(rep.kappa_estimate, exact.kappa * (1 + 1e-6));
}

TEST(Ritz, KappaFromRitzRejectsNonPositive) {
  EXPECT_EQ(kappa_from_ritz(Vector{}), 1.0);
  EXPECT_EQ(kappa_from_ritz(Vector{2.0, 8.0}), 4.0);
  EXPECT_THROW(kappa_from_ritz(Vector{-1.0, 1.0}), NumericalError);
}

TEST(Preconditioner, SingleFullSubdomainIsExactInverse) {
  const auto mesh = build_structured_mesh(8);
  const auto sys = assemble_system(mesh, random_field(mesh, 3, 6.0));
  std::vector<std::size_t> all(sys.size());
  for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
  const Preconditioner p(sys.A, {all}, {}, SchwarzMode::local_only);
  std::mt19937_64 rng(1);
  const auto r = random_vector(rng, sys.size());
  EXPECT_LT(max_diff(p.apply(r), exact_solve(sys.A, r)), 1e-10 * norm2(exact_solve(sys.A, r)));
  EXPECT_EQ(p.coarse_dimension(), 0u);
}

TEST(Preconditioner, NonoverlappingOhemIsExactInverse) {
  const auto mesh = build_structured_mesh(16);
  const Discretization d(mesh, random_field(mesh, 4, 6.0), 4);
  const CoarseContext ctx(d);
  const auto ohem = build_ohem(ctx);
  const Preconditioner p(d.system.A, local_dofs(d, 0), ohem.basis);
  EXPECT_EQ(p.coarse_dimension(), ohem.dimension());
  std::mt19937_64 rng(2);
  for (int t = 0; t < 3; ++t) {
    const auto r = random_vector(rng, d.system.size());
    const auto x = exact_solve(d.system.A, r);
    EXPECT_LT(max_diff(p.apply(r), x), 1e-10 * std::max(1.0, norm2(x)));
  }
  const auto rep = pcg(d.system.A, p, d.system.b);
  EXPECT_LE(rep.iterations, 1u);

  const Preconditioner coarse_only(d.system.A, local_dofs(d, 0), ohem.basis, SchwarzMode::coarse_only);
  const auto r = random_vector(rng, d.system.size());
  EXPECT_GT(max_diff(coarse_only.apply(r), exact_solve(d.system.A, r)), 1e-6);
  EXPECT_EQ(coarse_only.num_local(), 0u);
}

TEST(Preconditioner, SymmetricAndZeroPreserving) {
  const auto mesh = build_structured_mesh(16);
  const Discretization d(mesh, random_field(mesh, 5, 4.0), 4);
  const CoarseContext ctx(d);
  const auto cs = build_coarse_space(ctx, {CoarseType::shem, 1, {}});
  const Preconditioner p(d.system.A, local_dofs(d, 2), cs.basis);
  std::mt19937_64 rng(3);
  for (int t = 0; t < 5; ++t) {
    const auto x = random_vector(rng, d.system.size()), y = random_vector(rng, d.system.size());
    const double xy = dot(x, p.apply(y)), yx = dot(y, p.apply(x));
    EXPECT_NEAR(xy, yx, 1e-10 * std::max(std::abs(xy), 1.0));
  }
  const auto z = p.apply(Vector(d.system.size(), 0.0));
  for (auto v : z) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(p.apply(Vector(3, 0.0)), UsageError);
}

TEST(Preconditioner, ThreadCountDoesNotChangeResult) {
  const auto mesh = build_structured_mesh(16);
  const Discretization d(mesh, random_field(mesh, 6, 4.0), 4);
  const CoarseContext ctx(d);
  const auto cs = build_coarse_space(ctx, {CoarseType::shem, 2, {}});
  const Preconditioner p1(d.system.A, local_dofs(d, 1), cs.basis, SchwarzMode::two_level, 1);
  const Preconditioner p4(d.system.A, local_dofs(d, 1), cs.basis, SchwarzMode::two_level, 4);
  std::mt19937_64 rng(4);
  const auto r = random_vector(rng, d.system.size());
  EXPECT_EQ(p1.apply(r), p4.apply(r));
  const auto a = pcg(d.system.A, p1, d.system.b), b = pcg(d.system.A, p4, d.system.b);
  EXPECT_EQ(a.iterations, b.iterations);
  EXPECT_EQ(a.solution, b.solution);
}

TEST(Preconditioner, DependentCoarseBasisIsReported) {
  const auto mesh = build_structured_mesh(8);
  const Discretization d(mesh, random_field(mesh, 7, 2.0), 4);
  const CoarseContext ctx(d);
  auto basis = build_multiscale_basis(ctx);
  basis.push_back(basis.front());
  EXPECT_THROW(Preconditioner(d.system.A, local_dofs(d, 1), basis), SpdError);
}

TEST(Oracle, MultiscaleEstimateMatchesDenseSpectrum) {
  const auto mesh = build_structured_mesh(16);
  const Discretization d(mesh, random_field(mesh, 8, 3.0), 4);
  const CoarseContext ctx(d);
  const auto cs = build_coarse_space(ctx, {CoarseType::ms, 0, {}});
  const Preconditioner p(d.system.A, local_dofs(d, 2), cs.basis);
  const auto rep = pcg(d.system.A, p, d.system.b, {1e-10, 500});
  const auto oracle = dense_condition_oracle(d.system.A, p);
  EXPECT_TRUE(rep.converged);
  EXPECT_NEAR(rep.kappa_estimate, oracle.kappa, 0.05 * oracle.kappa);
  EXPECT_LE(rep.kappa_estimate, oracle.kappa * (1 + 1e-8));
  // additive Schwarz with a coarse level: lambda_max bounded by 1 + max overlap multiplicity
  EXPECT_LE(oracle.eigenvalues.back(), 5.0 + 1e-8);
}

TEST(Oracle, EnrichmentRaisesSmallestEigenvalue) {
  // a larger coarse space admits more decompositions, so lambda_min cannot drop;
  // lambda_max is only bounded by the overlap colouring and may move either way
  const auto mesh = build_structured_mesh(16);
  const std::vector<Inclusion> incs{{1.0 / 16, 1.0 / 16, 15.0 / 16, 2.0 / 16, 1e6}, {1.0 / 16, 9.0 / 16, 15.0 / 16, 10.0 / 16, 1e6}};
  const Discretization d(mesh, build_coefficient_field(mesh, 1.0, incs), 4);
  const CoarseContext ctx(d);
  double prev = 0.0;
  double kappa_ms = 0.0, kappa_last = 0.0;
  for (std::size_t m = 0; m <= 3; ++m) {
    const auto cs = build_coarse_space(ctx, {m == 0 ? CoarseType::ms : CoarseType::shem, m, {}});
    const Preconditioner p(d.system.A, local_dofs(d, 1), cs.basis);
    const auto o = dense_condition_oracle(d.system.A, p);
    EXPECT_GE(o.eigenvalues.front(), prev * (1 - 1e-8)) << "m=" << m;
    EXPECT_LE(o.eigenvalues.back(), 5.0 + 1e-8);
    prev = o.eigenvalues.front();
    if (m == 0) kappa_ms = o.kappa;
    kappa_last = o.kappa;
  }
  EXPECT_LT(kappa_last, 0.2 * kappa_ms);
}

TEST(Oracle, SizeLimit) {
  const auto a = SparseMatrix::identity(kOracleMaxSize + 1);
  EXPECT_THROW(dense_condition_oracle(a, IdentityPreconditioner{}), UsageError);
}
