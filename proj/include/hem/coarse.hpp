#pragma once

// Harmonically enriched multiscale coarse spaces.
//
// Every coarse function is determined by its values on the skeleton (the
// union of subdomain boundaries) and is discrete harmonic inside each
// subdomain. The multiscale hats carry the vertex values; enrichment functions
// carry interface traces and vanish at the coarse vertices. Spectral traces
// are eigenvectors of the weighted interface problem abar(psi, v) =
// lambda b(psi, v); non-spectral traces solve abar(phi, v) = b(g^k, v) for a
// fixed family of load functions g^k.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hem/assembly.hpp"
#include "hem/error.hpp"
#include "hem/linalg.hpp"
#include "hem/mesh.hpp"
#include "hem/parallel.hpp"
#include "hem/partition.hpp"

namespace hem {

/// Everything the coarse and Schwarz layers need about one discretized problem.
struct Discretization {
  Mesh mesh;
  CoefficientField field;
  LinearSystem system;
  Partition partition;

  Discretization(Mesh m, CoefficientField f, std::size_t h_cells, double source = 1.0)
      : mesh(std::move(m)), field(std::move(f)), system(assemble_system(mesh, field, source)),
        partition(build_partition(mesh, h_cells)) {}
};

/// Discrete harmonic extension into the nonoverlapping subdomains.
class HarmonicExtension {
 public:
  HarmonicExtension(const Discretization& d, std::size_t threads = 1) {
    const auto& p = d.partition;
    const auto& sys = d.system;
    blocks_.resize(p.num_subdomains());
    parallel_for(p.num_subdomains(), threads, [&](std::size_t s) {
      auto& blk = blocks_[s];
      for (auto v : p.subdomains[s].interior_nodes) blk.interior.push_back(sys.dof(v));
      for (auto v : p.subdomains[s].boundary_nodes) {
        if (sys.dof(v) != npos) blk.boundary.push_back(sys.dof(v));
      }
      blk.coupling = sys.A.extract(blk.interior, blk.boundary);
      try {
        blk.factor = SpdFactorization(sys.A.extract(blk.interior, blk.interior));
      } catch (const SpdError& e) {
        throw SpdError(std::string("harmonic extension: subdomain ") + std::to_string(s) + " block is not SPD", e.row());
      }
    });
  }

  std::size_t num_subdomains() const noexcept { return blocks_.size(); }
  const std::vector<std::size_t>& interior_dofs(std::size_t s) const { return blocks_[s].interior; }
  const std::vector<std::size_t>& boundary_dofs(std::size_t s) const { return blocks_[s].boundary; }

  /// Interior values of the extension of boundary data `g` (aligned with
  /// boundary_dofs(s); outer-boundary nodes are zero and carry no entry).
  Vector harmonic_extend(std::size_t s, std::span<const double> g) const {
    const auto& blk = blocks_.at(s);
    if (g.size() != blk.boundary.size()) throw UsageError("harmonic_extend: boundary data has the wrong size");
    Vector rhs = spmv(blk.coupling, g);
    for (auto& r : rhs) r = -r;
    return blk.factor.solve(rhs);
  }

  /// Overwrites the interior dofs of subdomain `s` in the global dof vector
  /// `u` with the extension of u's values on the subdomain boundary.
  void extend(std::size_t s, std::span<double> u) const {
    const auto& blk = blocks_.at(s);
    Vector g(blk.boundary.size());
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = u[blk.boundary[k]];
    const auto x = harmonic_extend(s, g);
    for (std::size_t k = 0; k < x.size(); ++k) u[blk.interior[k]] = x[k];
  }

 private:
  struct Block {
    std::vector<std::size_t> interior;
    std::vector<std::size_t> boundary;
    SparseMatrix coupling;
    SpdFactorization factor;
  };
  std::vector<Block> blocks_;
};

/// Ascending eigenpairs of one interface problem; eigenvectors are
/// b-orthonormal columns.
struct InterfaceSpectrum {
  std::size_t interface_id = 0;
  Vector eigenvalues;
  DenseMatrix eigenvectors;

  std::size_t size() const noexcept { return eigenvalues.size(); }
  Vector mode(std::size_t k) const { return eigenvectors.column(k); }
};

inline InterfaceSpectrum solve_interface_eigenproblem(const TraceForms& forms) {
  auto eig = dense_sym_generalized_eig(forms.stiffness(), forms.b_diag);
  return {forms.interface_id, std::move(eig.eigenvalues), std::move(eig.eigenvectors)};
}

/// Interface data shared by all coarse space builders for one problem.
class CoarseContext {
 public:
  explicit CoarseContext(const Discretization& d, std::size_t threads = 1)
      : disc_(&d), extension_(d, threads), forms_(build_all_trace_forms(d.mesh, d.field, d.partition)) {
    spectra_.resize(forms_.size());
    parallel_for(forms_.size(), threads, [&](std::size_t f) { spectra_[f] = solve_interface_eigenproblem(forms_[f]); });
  }

  const Discretization& disc() const noexcept { return *disc_; }
  const Partition& partition() const noexcept { return disc_->partition; }
  const LinearSystem& system() const noexcept { return disc_->system; }
  const HarmonicExtension& extension() const noexcept { return extension_; }
  const std::vector<TraceForms>& forms() const noexcept { return forms_; }
  const std::vector<InterfaceSpectrum>& spectra() const noexcept { return spectra_; }
  std::size_t num_dofs() const noexcept { return disc_->system.size(); }

  /// Writes `trace` onto the interface nodes of the dof vector `u`.
  void write_trace(std::size_t interface_id, std::span<const double> trace, std::span<double> u) const {
    const auto& f = partition().interfaces[interface_id];
    for (std::size_t k = 0; k < f.size(); ++k) u[system().dof(f.nodes[k])] = trace[k];
  }

  Vector read_trace(std::size_t interface_id, std::span<const double> u) const {
    const auto& f = partition().interfaces[interface_id];
    Vector t(f.size());
    for (std::size_t k = 0; k < f.size(); ++k) t[k] = u[system().dof(f.nodes[k])];
    return t;
  }

  /// Extends skeleton data held in `scratch` into `subdomains`, gathers the
  /// result over their closures and clears the touched entries of `scratch`.
  SparseVector harvest(std::span<const std::size_t> subdomains, std::span<double> scratch) const {
    for (auto s : subdomains) extension_.extend(s, scratch);
    std::vector<std::size_t> support;
    for (auto s : subdomains) {
      for (auto v : partition().subdomains[s].closure_nodes) {
        const auto dof = system().dof(v);
        if (dof != npos) support.push_back(dof);
      }
    }
    std::sort(support.begin(), support.end());
    support.erase(std::unique(support.begin(), support.end()), support.end());
    SparseVector out;
    for (auto dof : support) {
      if (scratch[dof] != 0.0) {
        out.index.push_back(dof);
        out.value.push_back(scratch[dof]);
      }
      scratch[dof] = 0.0;
    }
    return out;
  }

  /// Harmonic lift of an interface trace into both neighbouring subdomains,
  /// zero on the rest of their boundaries and outside them.
  SparseVector lift_trace(std::size_t interface_id, std::span<const double> trace) const {
    Vector scratch(num_dofs(), 0.0);
    write_trace(interface_id, trace, scratch);
    const auto& f = partition().interfaces[interface_id];
    const std::size_t subs[2] = {f.i, f.j};
    return harvest(subs, scratch);
  }

 private:
  const Discretization* disc_;
  HarmonicExtension extension_;
  std::vector<TraceForms> forms_;
  std::vector<InterfaceSpectrum> spectra_;
};

/// Pi_m v = sum_{k<=m} b(v, psi^k) psi^k on one interface.
inline Vector project_trace(const TraceForms& forms, const InterfaceSpectrum& spectrum, std::size_t m, std::span<const double> v) {
  if (m > spectrum.size()) throw UsageError("project_trace: m exceeds the number of modes");
  Vector out(v.size(), 0.0);
  for (std::size_t k = 0; k < m; ++k) {
    const auto psi = spectrum.mode(k);
    axpy(forms.b_inner(v, psi), psi, out);
  }
  return out;
}

/// Energies entering the interface approximation lemma for one trace v.
struct ProjectionCheck {
  double energy_v = 0.0;     // |v|^2
  double energy_proj = 0.0;  // |Pi_m v|^2
  double energy_rest = 0.0;  // |v - Pi_m v|^2
  double b_rest = 0.0;       // ||v - Pi_m v||_B^2
  double lambda_next = std::numeric_limits<double>::infinity();

  /// Relative slack of each property; all must be <= tolerance.
  double stability_excess() const { return std::max(energy_proj, energy_rest) / energy_v - 1.0; }
  double pythagoras_defect() const { return std::abs(energy_v - energy_proj - energy_rest) / energy_v; }
  double approximation_excess() const {
    if (std::isinf(lambda_next)) return b_rest / std::max(energy_v, 1e-300);
    const double bound = energy_rest / lambda_next;
    return bound > 0.0 ? b_rest / bound - 1.0 : b_rest / std::max(energy_v, 1e-300);
  }
  bool holds(double slack = 1e-10) const {
    return stability_excess() <= slack && pythagoras_defect() <= slack && approximation_excess() <= slack;
  }
};

inline ProjectionCheck check_trace_projection(const TraceForms& forms, const InterfaceSpectrum& spectrum, std::size_t m,
                                              std::span<const double> v) {
  const auto proj = project_trace(forms, spectrum, m, v);
  Vector rest(v.begin(), v.end());
  axpy(-1.0, proj, rest);
  ProjectionCheck c;
  c.energy_v = forms.energy(v);
  c.energy_proj = forms.energy(proj);
  c.energy_rest = forms.energy(rest);
  c.b_rest = forms.b_inner(rest, rest);
  if (m < spectrum.size()) c.lambda_next = spectrum.eigenvalues[m];
  return c;
}

/// Multiscale hat functions, one per interior coarse vertex, in vertex order.
inline std::vector<SparseVector> build_multiscale_basis(const CoarseContext& ctx) {
  const auto& p = ctx.partition();
  std::vector<SparseVector> basis;
  basis.reserve(p.vertices.size());
  Vector scratch(ctx.num_dofs(), 0.0);
  for (std::size_t v = 0; v < p.vertices.size(); ++v) {
    scratch[ctx.system().dof(p.vertices[v].node)] = 1.0;
    for (auto fid : p.interfaces_at_vertex(v)) {
      const auto& f = p.interfaces[fid];
      const double g0 = f.endpoint_vertex[0] == v ? 1.0 : 0.0;
      const double g1 = f.endpoint_vertex[1] == v ? 1.0 : 0.0;
      const Vector zero(f.size(), 0.0);
      ctx.write_trace(fid, ctx.forms()[fid].solve(zero, g0, g1), scratch);
    }
    const auto subs = p.subdomains_at_vertex(v);
    basis.push_back(ctx.harvest(subs, scratch));
  }
  return basis;
}

/// Lifts of the first m[f] eigenvectors of every interface f, ordered by
/// interface then mode.
inline std::vector<SparseVector> build_spectral_basis(const CoarseContext& ctx, std::span<const std::size_t> m) {
  const auto& p = ctx.partition();
  if (m.size() != p.interfaces.size()) throw UsageError("build_spectral_basis: one enrichment count per interface required");
  std::vector<SparseVector> basis;
  for (std::size_t f = 0; f < p.interfaces.size(); ++f) {
    const auto& spec = ctx.spectra()[f];
    if (m[f] > spec.size()) {
      throw UsageError("build_spectral_basis: interface " + std::to_string(f) + " has only " + std::to_string(spec.size()) +
                       " modes, " + std::to_string(m[f]) + " requested");
    }
    for (std::size_t k = 0; k < m[f]; ++k) basis.push_back(ctx.lift_trace(f, spec.mode(k)));
  }
  return basis;
}

enum class NonspectralKind { alternating, sine, hierarchical };

/// k-th load function (k >= 1) sampled at the M interior interface nodes,
/// t = j/(M+1) measured from the lower-left endpoint.
inline Vector nonspectral_load(NonspectralKind kind, std::size_t k, std::size_t m) {
  if (k == 0) throw UsageError("nonspectral_load: k starts at 1");
  Vector g(m);
  const auto segments = m + 1;
  for (std::size_t j = 1; j <= m; ++j) {
    const double t = static_cast<double>(j) / static_cast<double>(segments);
    switch (kind) {
      case NonspectralKind::alternating: {
        // piece l covers (l/k, (l+1)/k]; the first piece also holds t = 0
        const auto l = (j * k + segments - 1) / segments - 1;
        g[j - 1] = l % 2 == 0 ? 1.0 : -1.0;
        break;
      }
      case NonspectralKind::sine:
        g[j - 1] = std::sin(static_cast<double>(k) * std::numbers::pi * t);
        break;
      case NonspectralKind::hierarchical: {
        const auto level = static_cast<std::size_t>(std::bit_width(k));
        const auto slot = k - (std::size_t{1} << (level - 1));
        const double half = std::ldexp(1.0, -static_cast<int>(level));
        const double center = static_cast<double>(2 * slot + 1) * half;
        g[j - 1] = std::max(0.0, 1.0 - std::abs(t - center) / half);
        break;
      }
    }
  }
  return g;
}

/// Interface trace solving abar(phi, v) = b(g^k, v) with zero endpoints.
inline Vector nonspectral_trace(const TraceForms& forms, NonspectralKind kind, std::size_t k) {
  auto g = nonspectral_load(kind, k, forms.size());
  for (std::size_t j = 0; j < g.size(); ++j) g[j] *= forms.b_diag[j];
  return forms.solve(g);
}

/// Condition number of the b-Gram matrix of a set of traces; infinity when
/// the Gram matrix is singular.
inline double trace_gram_condition(const TraceForms& forms, std::span<const Vector> traces) {
  const auto m = traces.size();
  if (m == 0) return 1.0;
  DenseMatrix gram(m, m);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b <= a; ++b) gram(a, b) = gram(b, a) = forms.b_inner(traces[a], traces[b]);
  }
  const auto eig = symmetric_eigen(gram, false);
  if (!(eig.values.front() > 0.0)) return std::numeric_limits<double>::infinity();
  return eig.values.back() / eig.values.front();
}

inline constexpr double kMaxGramCondition = 1e12;

inline std::vector<SparseVector> build_nonspectral_basis(const CoarseContext& ctx, NonspectralKind kind,
                                                         std::span<const std::size_t> m) {
  const auto& p = ctx.partition();
  if (m.size() != p.interfaces.size()) throw UsageError("build_nonspectral_basis: one enrichment count per interface required");
  std::vector<SparseVector> basis;
  for (std::size_t f = 0; f < p.interfaces.size(); ++f) {
    const auto& forms = ctx.forms()[f];
    if (m[f] > forms.size()) {
      throw UsageError("build_nonspectral_basis: interface " + std::to_string(f) + " has only " + std::to_string(forms.size()) +
                       " nodes, " + std::to_string(m[f]) + " functions requested");
    }
    std::vector<Vector> traces;
    for (std::size_t k = 1; k <= m[f]; ++k) traces.push_back(nonspectral_trace(forms, kind, k));
    const double cond = trace_gram_condition(forms, traces);
    if (!(cond <= kMaxGramCondition)) {
      throw NumericalError("build_nonspectral_basis: enrichment traces are numerically dependent on interface", f);
    }
    for (const auto& t : traces) basis.push_back(ctx.lift_trace(f, t));
  }
  return basis;
}

/// Number of modes with eigenvalue <= tau; at least one when `min_one`.
inline std::size_t select_adaptive(const InterfaceSpectrum& spectrum, double tau, bool min_one) {
  if (!(tau > 0.0)) throw UsageError("select_adaptive: tau must be positive");
  std::size_t m = 0;
  while (m < spectrum.size() && spectrum.eigenvalues[m] <= tau) ++m;
  if (min_one && m == 0 && spectrum.size() > 0) m = 1;
  return m;
}

enum class CoarseType { ms, shem, nshem_alternating, nshem_sine, nshem_hierarchical, ohem };

inline std::string to_string(CoarseType t) {
  switch (t) {
    case CoarseType::ms: return "ms";
    case CoarseType::shem: return "shem";
    case CoarseType::nshem_alternating: return "nshem-alt";
    case CoarseType::nshem_sine: return "nshem-sin";
    case CoarseType::nshem_hierarchical: return "nshem-hier";
    case CoarseType::ohem: return "ohem";
  }
  return "?";
}

inline CoarseType coarse_type_from_string(const std::string& s) {
  for (auto t : {CoarseType::ms, CoarseType::shem, CoarseType::nshem_alternating, CoarseType::nshem_sine,
                 CoarseType::nshem_hierarchical, CoarseType::ohem}) {
    if (to_string(t) == s) return t;
  }
  throw UsageError("unknown coarse space type '" + s + "'");
}

struct AdaptiveSpec {
  double tau = 1.0 / 32.0;
  bool min_one = true;
  // threshold tau * lambda_1 of the unit-coefficient problem on the same interface
  bool laplacian_relative = false;
};

struct CoarseSpec {
  CoarseType type = CoarseType::ms;
  std::size_t m = 0;
  std::optional<AdaptiveSpec> adaptive;  // SHEM only
};

enum class BasisKind { multiscale, spectral, nonspectral };

struct BasisTag {
  BasisKind kind = BasisKind::multiscale;
  std::size_t owner = 0;  // coarse vertex or interface id
  std::size_t k = 0;      // 1-based mode index for enrichments
};

struct CoarseSpace {
  CoarseType type = CoarseType::ms;
  bool adaptive = false;
  std::vector<SparseVector> basis;
  std::vector<BasisTag> tags;
  std::vector<std::size_t> enrichment;  // m_ij per interface
  double lambda_m_plus_1 = std::numeric_limits<double>::infinity();

  std::size_t dimension() const noexcept { return basis.size(); }
  bool eigen_based() const noexcept {
    return type == CoarseType::ms || type == CoarseType::shem || type == CoarseType::ohem;
  }
  std::string label() const { return adaptive ? "shem-adapt" : to_string(type); }
};

/// min over interfaces of lambda_{m_ij + 1}; infinity when every interface is
/// fully enriched.
inline double smallest_excluded_eigenvalue(const CoarseContext& ctx, std::span<const std::size_t> m) {
  double lam = std::numeric_limits<double>::infinity();
  for (std::size_t f = 0; f < ctx.spectra().size(); ++f) {
    const auto& s = ctx.spectra()[f];
    if (m[f] < s.size()) lam = std::min(lam, s.eigenvalues[m[f]]);
  }
  return lam;
}

inline std::vector<std::size_t> adaptive_enrichment(const CoarseContext& ctx, const AdaptiveSpec& spec) {
  const auto& d = ctx.disc();
  std::vector<std::size_t> m(ctx.spectra().size());
  std::optional<CoefficientField> unit;
  if (spec.laplacian_relative) unit = CoefficientField{Vector(d.mesh.num_elements(), 1.0)};
  for (std::size_t f = 0; f < m.size(); ++f) {
    double tau = spec.tau;
    if (unit) {
      const auto reference = solve_interface_eigenproblem(build_trace_forms(d.mesh, *unit, d.partition, f));
      if (reference.size() > 0) tau *= reference.eigenvalues.front();
    }
    m[f] = select_adaptive(ctx.spectra()[f], tau, spec.min_one);
  }
  return m;
}

inline CoarseSpace build_coarse_space(const CoarseContext& ctx, const CoarseSpec& spec) {
  const auto& p = ctx.partition();
  CoarseSpace cs;
  cs.type = spec.type;
  cs.adaptive = spec.adaptive.has_value();
  if (cs.adaptive && spec.type != CoarseType::shem) throw UsageError("adaptive enrichment is only defined for shem");

  cs.basis = build_multiscale_basis(ctx);
  for (std::size_t v = 0; v < cs.basis.size(); ++v) cs.tags.push_back({BasisKind::multiscale, v, 0});

  const auto nf = p.interfaces.size();
  switch (spec.type) {
    case CoarseType::ms:
      cs.enrichment.assign(nf, 0);
      break;
    case CoarseType::ohem:
      cs.enrichment.resize(nf);
      for (std::size_t f = 0; f < nf; ++f) cs.enrichment[f] = ctx.spectra()[f].size();
      break;
    case CoarseType::shem:
      cs.enrichment = cs.adaptive ? adaptive_enrichment(ctx, *spec.adaptive) : std::vector<std::size_t>(nf, spec.m);
      break;
    default:
      cs.enrichment.assign(nf, spec.m);
      break;
  }

  std::vector<SparseVector> extra;
  BasisKind kind = BasisKind::spectral;
  switch (spec.type) {
    case CoarseType::ms:
      break;
    case CoarseType::shem:
    case CoarseType::ohem:
      extra = build_spectral_basis(ctx, cs.enrichment);
      break;
    case CoarseType::nshem_alternating:
      extra = build_nonspectral_basis(ctx, NonspectralKind::alternating, cs.enrichment);
      kind = BasisKind::nonspectral;
      break;
    case CoarseType::nshem_sine:
      extra = build_nonspectral_basis(ctx, NonspectralKind::sine, cs.enrichment);
      kind = BasisKind::nonspectral;
      break;
    case CoarseType::nshem_hierarchical:
      extra = build_nonspectral_basis(ctx, NonspectralKind::hierarchical, cs.enrichment);
      kind = BasisKind::nonspectral;
      break;
  }
  for (std::size_t f = 0; f < nf; ++f) {
    for (std::size_t k = 1; k <= cs.enrichment[f]; ++k) cs.tags.push_back({kind, f, k});
  }
  for (auto& v : extra) cs.basis.push_back(std::move(v));
  cs.lambda_m_plus_1 = smallest_excluded_eigenvalue(ctx, cs.enrichment);
  return cs;
}

/// The full discrete harmonic space: every eigenvector lift on every interface.
inline CoarseSpace build_ohem(const CoarseContext& ctx) { return build_coarse_space(ctx, {CoarseType::ohem, 0, {}}); }

/// I_0 u = I_ms u + Pi_m (u - I_ms u) for an eigen-based coarse space.
inline Vector coarse_interpolate(const CoarseContext& ctx, const CoarseSpace& cs, std::span<const double> u) {
  if (!cs.eigen_based()) throw UsageError("coarse_interpolate: needs an eigenvector-based coarse space");
  if (u.size() != ctx.num_dofs()) throw UsageError("coarse_interpolate: dimension mismatch");
  const auto& p = ctx.partition();
  Vector ims(u.size(), 0.0);
  for (std::size_t b = 0; b < cs.dimension(); ++b) {
    if (cs.tags[b].kind != BasisKind::multiscale) continue;
    const double vertex_value = u[ctx.system().dof(p.vertices[cs.tags[b].owner].node)];
    cs.basis[b].scatter_add(vertex_value, ims);
  }
  Vector w(u.begin(), u.end());
  axpy(-1.0, ims, w);

  Vector out = ims;
  std::vector<Vector> traces(p.interfaces.size());
  for (std::size_t b = 0; b < cs.dimension(); ++b) {
    const auto& tag = cs.tags[b];
    if (tag.kind != BasisKind::spectral) continue;
    auto& trace = traces[tag.owner];
    if (trace.empty()) trace = ctx.read_trace(tag.owner, w);
    const double coeff = ctx.forms()[tag.owner].b_inner(trace, ctx.spectra()[tag.owner].mode(tag.k - 1));
    cs.basis[b].scatter_add(coeff, out);
  }
  return out;
}

/// Interior-row residual of A v inside every subdomain; zero for discrete
/// harmonic functions.
inline double harmonic_residual(const CoarseContext& ctx, std::span<const double> v) {
  const auto av = spmv(ctx.system().A, v);
  double worst = 0.0;
  for (std::size_t s = 0; s < ctx.partition().num_subdomains(); ++s) {
    for (auto dof : ctx.extension().interior_dofs(s)) worst = std::max(worst, std::abs(av[dof]));
  }
  return worst;
}

inline double energy(const SparseMatrix& a, std::span<const double> v) { return dot(v, spmv(a, v)); }

struct StableDecomposition {
  Vector u0;
  std::vector<SparseVector> local;  // u_i on dofs
  double ratio = 1.0;               // (a(u0,u0) + sum a(u_i,u_i)) / a(u,u)
  double partition_defect = 0.0;    // max |sum u_i - (u - u0)|
};

/// u_0 = I_0 u and u_i = I_h(theta_i (u - u_0)).
inline StableDecomposition verify_stable_decomposition(const CoarseContext& ctx, const CoarseSpace& cs, const OverlapSet& overlap,
                                                       const PartitionOfUnity& pou, std::span<const double> u) {
  const auto& sys = ctx.system();
  StableDecomposition out;
  out.u0 = coarse_interpolate(ctx, cs, u);
  Vector w(u.begin(), u.end());
  axpy(-1.0, out.u0, w);

  double total = energy(sys.A, out.u0);
  Vector sum(w.size(), 0.0);
  Vector local(w.size(), 0.0);
  for (std::size_t s = 0; s < overlap.nodes.size(); ++s) {
    SparseVector ui;
    for (std::size_t k = 0; k < overlap.nodes[s].size(); ++k) {
      const double th = pou.theta[s][k];
      if (th == 0.0) continue;
      const auto dof = sys.dof(overlap.nodes[s][k]);
      ui.index.push_back(dof);
      ui.value.push_back(th * w[dof]);
    }
    ui.scatter_add(1.0, local);
    total += energy(sys.A, local);
    ui.scatter_add(1.0, sum);
    for (auto dof : ui.index) local[dof] = 0.0;
    out.local.push_back(std::move(ui));
  }
  for (std::size_t k = 0; k < w.size(); ++k) out.partition_defect = std::max(out.partition_defect, std::abs(sum[k] - w[k]));
  const double denom = energy(sys.A, u);
  out.ratio = denom > 0.0 ? total / denom : 1.0;
  return out;
}

}  // namespace hem
