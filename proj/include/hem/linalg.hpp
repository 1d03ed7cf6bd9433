#pragma once

// Minimal numerical kernel: CSR storage, sparse SPD factorization and a dense
// symmetric (generalized) eigensolver sized for interface problems.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hem/error.hpp"

namespace hem {

using Vector = std::vector<double>;

inline constexpr std::size_t npos = static_cast<std::size_t>(-1);

inline double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw UsageError("dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

inline double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

// y += a * x
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw UsageError("axpy: dimension mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

struct Triplet {
  std::size_t row;
  std::size_t col;
  double value;
};

/// Compressed sparse row matrix. Column indices are strictly increasing
/// within every row.
class SparseMatrix {
 public:
  SparseMatrix() : row_offsets_(1, 0) {}

  SparseMatrix(std::size_t n_rows, std::size_t n_cols, std::vector<std::size_t> row_offsets,
               std::vector<std::size_t> col_indices, Vector values)
      : n_rows_(n_rows),
        n_cols_(n_cols),
        row_offsets_(std::move(row_offsets)),
        col_indices_(std::move(col_indices)),
        values_(std::move(values)) {
    validate();
  }

  /// Duplicates are summed in input order, so assembly is reproducible.
  static SparseMatrix from_triplets(std::size_t n_rows, std::size_t n_cols, std::vector<Triplet> entries) {
    for (const auto& t : entries) {
      if (t.row >= n_rows || t.col >= n_cols) throw UsageError("from_triplets: index out of bounds");
    }
    std::stable_sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
      return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    std::vector<std::size_t> offsets(n_rows + 1, 0);
    std::vector<std::size_t> cols;
    Vector vals;
    cols.reserve(entries.size());
    vals.reserve(entries.size());
    for (std::size_t k = 0; k < entries.size();) {
      const auto r = entries[k].row;
      const auto c = entries[k].col;
      double sum = 0.0;
      while (k < entries.size() && entries[k].row == r && entries[k].col == c) sum += entries[k++].value;
      cols.push_back(c);
      vals.push_back(sum);
      ++offsets[r + 1];
    }
    std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
    return SparseMatrix(n_rows, n_cols, std::move(offsets), std::move(cols), std::move(vals));
  }

  static SparseMatrix identity(std::size_t n) {
    std::vector<std::size_t> offsets(n + 1);
    std::iota(offsets.begin(), offsets.end(), std::size_t{0});
    std::vector<std::size_t> cols(n);
    std::iota(cols.begin(), cols.end(), std::size_t{0});
    return SparseMatrix(n, n, std::move(offsets), std::move(cols), Vector(n, 1.0));
  }

  std::size_t rows() const noexcept { return n_rows_; }
  std::size_t cols() const noexcept { return n_cols_; }
  std::size_t nnz() const noexcept { return values_.size(); }
  const std::vector<std::size_t>& row_offsets() const noexcept { return row_offsets_; }
  const std::vector<std::size_t>& col_indices() const noexcept { return col_indices_; }
  const Vector& values() const noexcept { return values_; }

  double at(std::size_t i, std::size_t j) const {
    if (i >= n_rows_ || j >= n_cols_) throw UsageError("SparseMatrix::at: index out of bounds");
    const auto first = col_indices_.begin() + static_cast<std::ptrdiff_t>(row_offsets_[i]);
    const auto last = col_indices_.begin() + static_cast<std::ptrdiff_t>(row_offsets_[i + 1]);
    const auto it = std::lower_bound(first, last, j);
    return (it != last && *it == j) ? values_[static_cast<std::size_t>(it - col_indices_.begin())] : 0.0;
  }

  /// Exact structural and numerical symmetry.
  bool is_symmetric() const {
    if (n_rows_ != n_cols_) return false;
    for (std::size_t i = 0; i < n_rows_; ++i) {
      for (std::size_t k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) {
        if (at(col_indices_[k], i) != values_[k]) return false;
      }
    }
    return true;
  }

  SparseMatrix transpose() const {
    std::vector<std::size_t> offsets(n_cols_ + 1, 0);
    for (auto c : col_indices_) ++offsets[c + 1];
    std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
    std::vector<std::size_t> cols(nnz());
    Vector vals(nnz());
    std::vector<std::size_t> cursor(offsets.begin(), offsets.end() - 1);
    for (std::size_t i = 0; i < n_rows_; ++i) {
      for (std::size_t k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) {
        const auto dst = cursor[col_indices_[k]]++;
        cols[dst] = i;
        vals[dst] = values_[k];
      }
    }
    return SparseMatrix(n_cols_, n_rows_, std::move(offsets), std::move(cols), std::move(vals));
  }

  /// Submatrix on the given (sorted or unsorted, duplicate-free) row and
  /// column index lists; local numbering follows list order.
  SparseMatrix extract(std::span<const std::size_t> row_list, std::span<const std::size_t> col_list) const {
    std::vector<std::size_t> col_map(n_cols_, npos);
    for (std::size_t k = 0; k < col_list.size(); ++k) {
      if (col_list[k] >= n_cols_) throw UsageError("extract: column out of bounds");
      col_map[col_list[k]] = k;
    }
    std::vector<Triplet> entries;
    for (std::size_t r = 0; r < row_list.size(); ++r) {
      const auto i = row_list[r];
      if (i >= n_rows_) throw UsageError("extract: row out of bounds");
      for (std::size_t k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) {
        const auto c = col_map[col_indices_[k]];
        if (c != npos) entries.push_back({r, c, values_[k]});
      }
    }
    return from_triplets(row_list.size(), col_list.size(), std::move(entries));
  }

  void multiply(std::span<const double> x, std::span<double> y) const {
    if (x.size() != n_cols_ || y.size() != n_rows_) throw UsageError("spmv: dimension mismatch");
    for (std::size_t i = 0; i < n_rows_; ++i) {
      double s = 0.0;
      for (std::size_t k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) s += values_[k] * x[col_indices_[k]];
      y[i] = s;
    }
  }

 private:
  void validate() const {
    if (row_offsets_.size() != n_rows_ + 1 || row_offsets_.front() != 0 || row_offsets_.back() != col_indices_.size() ||
        col_indices_.size() != values_.size()) {
      throw UsageError("SparseMatrix: inconsistent CSR arrays");
    }
    for (std::size_t i = 0; i < n_rows_; ++i) {
      if (row_offsets_[i] > row_offsets_[i + 1]) throw UsageError("SparseMatrix: row offsets decrease");
      for (std::size_t k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) {
        if (col_indices_[k] >= n_cols_) throw UsageError("SparseMatrix: column index out of bounds");
        if (k > row_offsets_[i] && col_indices_[k] <= col_indices_[k - 1]) {
          throw UsageError("SparseMatrix: column indices not strictly increasing in row " + std::to_string(i));
        }
      }
    }
  }

  std::size_t n_rows_ = 0;
  std::size_t n_cols_ = 0;
  std::vector<std::size_t> row_offsets_;
  std::vector<std::size_t> col_indices_;
  Vector values_;
};

inline Vector spmv(const SparseMatrix& a, std::span<const double> x) {
  if (x.size() != a.cols()) throw UsageError("spmv: dimension mismatch");
  Vector y(a.rows());
  a.multiply(x, y);
  return y;
}

/// Sparse-sparse product (row-wise Gustavson).
inline SparseMatrix multiply(const SparseMatrix& a, const SparseMatrix& b) {
  if (a.cols() != b.rows()) throw UsageError("multiply: dimension mismatch");
  std::vector<std::size_t> offsets(a.rows() + 1, 0);
  std::vector<std::size_t> cols;
  Vector vals;
  Vector accum(b.cols(), 0.0);
  std::vector<std::size_t> marker(b.cols(), npos);
  std::vector<std::size_t> pattern;
  const auto& ao = a.row_offsets();
  const auto& ac = a.col_indices();
  const auto& av = a.values();
  const auto& bo = b.row_offsets();
  const auto& bc = b.col_indices();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    pattern.clear();
    for (std::size_t ka = ao[i]; ka < ao[i + 1]; ++ka) {
      const auto k = ac[ka];
      for (std::size_t kb = bo[k]; kb < bo[k + 1]; ++kb) {
        const auto j = bc[kb];
        if (marker[j] != i) {
          marker[j] = i;
          accum[j] = 0.0;
          pattern.push_back(j);
        }
        accum[j] += av[ka] * bv[kb];
      }
    }
    std::sort(pattern.begin(), pattern.end());
    for (auto j : pattern) {
      cols.push_back(j);
      vals.push_back(accum[j]);
    }
    offsets[i + 1] = cols.size();
  }
  return SparseMatrix(a.rows(), b.cols(), std::move(offsets), std::move(cols), std::move(vals));
}

/// Sorted-index sparse vector.
struct SparseVector {
  std::vector<std::size_t> index;
  Vector value;

  std::size_t nnz() const noexcept { return index.size(); }

  void scatter_add(double scale, std::span<double> dense) const {
    for (std::size_t k = 0; k < index.size(); ++k) dense[index[k]] += scale * value[k];
  }

  double dot(std::span<const double> dense) const {
    double s = 0.0;
    for (std::size_t k = 0; k < index.size(); ++k) s += value[k] * dense[index[k]];
    return s;
  }

  Vector to_dense(std::size_t n) const {
    Vector out(n, 0.0);
    scatter_add(1.0, out);
    return out;
  }
};

/// Stacks sparse vectors as the rows of a CSR matrix with `n_cols` columns.
inline SparseMatrix rows_to_matrix(std::span<const SparseVector> rows, std::size_t n_cols) {
  std::vector<std::size_t> offsets(rows.size() + 1, 0);
  std::vector<std::size_t> cols;
  Vector vals;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    cols.insert(cols.end(), rows[r].index.begin(), rows[r].index.end());
    vals.insert(vals.end(), rows[r].value.begin(), rows[r].value.end());
    offsets[r + 1] = cols.size();
  }
  return SparseMatrix(rows.size(), n_cols, std::move(offsets), std::move(cols), std::move(vals));
}

/// Row-major dense matrix.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    DenseMatrix m(rows.size(), rows.size() == 0 ? 0 : rows.begin()->size());
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != m.cols_) throw UsageError("DenseMatrix: ragged rows");
      std::size_t j = 0;
      for (double v : row) m(i, j++) = v;
      ++i;
    }
    return m;
  }

  static DenseMatrix from_sparse(const SparseMatrix& a) {
    DenseMatrix m(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
      for (std::size_t k = a.row_offsets()[i]; k < a.row_offsets()[i + 1]; ++k) m(i, a.col_indices()[k]) = a.values()[k];
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  Vector column(std::size_t j) const {
    Vector c(rows_);
    for (std::size_t i = 0; i < rows_; ++i) c[i] = (*this)(i, j);
    return c;
  }

  Vector apply(std::span<const double> x) const {
    if (x.size() != cols_) throw UsageError("DenseMatrix::apply: dimension mismatch");
    Vector y(rows_, 0.0);
    for (std::size_t i = 0; i < rows_; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols_; ++j) s += (*this)(i, j) * x[j];
      y[i] = s;
    }
    return y;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

namespace detail {

// Reverse Cuthill-McKee on the symmetric pattern of `a`.
inline std::vector<std::size_t> reverse_cuthill_mckee(const SparseMatrix& a) {
  const auto n = a.rows();
  std::vector<std::size_t> degree(n);
  for (std::size_t i = 0; i < n; ++i) degree[i] = a.row_offsets()[i + 1] - a.row_offsets()[i];
  std::vector<std::size_t> order;
  order.reserve(n);
  std::vector<bool> visited(n, false);
  std::vector<std::size_t> nbrs;

  auto bfs_levels = [&](std::size_t root, std::vector<std::size_t>& level) {
    std::fill(level.begin(), level.end(), npos);
    std::queue<std::size_t> q;
    q.push(root);
    level[root] = 0;
    std::size_t last = root;
    while (!q.empty()) {
      const auto v = q.front();
      q.pop();
      last = v;
      for (std::size_t k = a.row_offsets()[v]; k < a.row_offsets()[v + 1]; ++k) {
        const auto w = a.col_indices()[k];
        if (level[w] == npos) {
          level[w] = level[v] + 1;
          q.push(w);
        }
      }
    }
    return last;
  };

  std::vector<std::size_t> level(n);
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (visited[seed]) continue;
    // pseudo-peripheral start: a few sweeps of "farthest node"
    std::size_t root = seed;
    std::size_t ecc = 0;
    for (int sweep = 0; sweep < 4; ++sweep) {
      const auto far = bfs_levels(root, level);
      if (level[far] <= ecc && sweep > 0) break;
      ecc = level[far];
      root = far;
    }
    // with an unsymmetric pattern the root may not reach back to the seed
    for (auto start : {root, seed}) {
      if (visited[start]) continue;
      std::queue<std::size_t> q;
      q.push(start);
      visited[start] = true;
      while (!q.empty()) {
        const auto v = q.front();
        q.pop();
        order.push_back(v);
        nbrs.clear();
        for (std::size_t k = a.row_offsets()[v]; k < a.row_offsets()[v + 1]; ++k) {
          const auto w = a.col_indices()[k];
          if (!visited[w]) {
            visited[w] = true;
            nbrs.push_back(w);
          }
        }
        std::sort(nbrs.begin(), nbrs.end(), [&](std::size_t x, std::size_t y) {
          return degree[x] != degree[y] ? degree[x] < degree[y] : x < y;
        });
        for (auto w : nbrs) q.push(w);
      }
    }
  }
  std::reverse(order.begin(), order.end());
  return order;
}

}  // namespace detail

/// Envelope (profile) Cholesky factorization A = P^T L L^T P under a
/// reverse Cuthill-McKee ordering.
class SpdFactorization {
 public:
  SpdFactorization() = default;

  /// `relative_pivot_floor` rejects pivots d with d <= floor * a_ii; the
  /// default only rejects non-positive pivots.
  explicit SpdFactorization(const SparseMatrix& a, double relative_pivot_floor = 0.0) {
    if (a.rows() != a.cols()) throw UsageError("spd_factorize: matrix is not square");
    n_ = a.rows();
    perm_ = detail::reverse_cuthill_mckee(a);
    std::vector<std::size_t> inverse(n_);
    for (std::size_t k = 0; k < n_; ++k) inverse[perm_[k]] = k;

    first_.assign(n_, 0);
    for (std::size_t k = 0; k < n_; ++k) first_[k] = k;
    for (std::size_t i = 0; i < n_; ++i) {
      const auto pi = inverse[i];
      for (std::size_t k = a.row_offsets()[i]; k < a.row_offsets()[i + 1]; ++k) {
        const auto pj = inverse[a.col_indices()[k]];
        if (pj < pi) first_[pi] = std::min(first_[pi], pj);
      }
    }
    start_.assign(n_ + 1, 0);
    for (std::size_t k = 0; k < n_; ++k) start_[k + 1] = start_[k] + (k - first_[k] + 1);
    env_.assign(start_[n_], 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      const auto pi = inverse[i];
      for (std::size_t k = a.row_offsets()[i]; k < a.row_offsets()[i + 1]; ++k) {
        const auto pj = inverse[a.col_indices()[k]];
        if (pj <= pi) entry(pi, pj) = a.values()[k];
      }
    }

    for (std::size_t i = 0; i < n_; ++i) {
      const double original_diag = entry(i, i);
      for (std::size_t j = first_[i]; j < i; ++j) {
        const auto lo = std::max(first_[i], first_[j]);
        double s = entry(i, j);
        const double* li = &env_[start_[i] + (lo - first_[i])];
        const double* lj = &env_[start_[j] + (lo - first_[j])];
        for (std::size_t k = lo; k < j; ++k) s -= *li++ * *lj++;
        entry(i, j) = s / entry(j, j);
      }
      double d = entry(i, i);
      const double* li = &env_[start_[i]];
      for (std::size_t k = first_[i]; k < i; ++k, ++li) d -= *li * *li;
      if (!(d > relative_pivot_floor * original_diag) || !std::isfinite(d)) {
        throw SpdError("spd_factorize: non-positive pivot, matrix is not SPD", perm_[i]);
      }
      entry(i, i) = std::sqrt(d);
    }
  }

  std::size_t size() const noexcept { return n_; }
  std::size_t envelope_size() const noexcept { return env_.size(); }

  Vector solve(std::span<const double> b) const {
    if (b.size() != n_) throw UsageError("spd_solve: dimension mismatch");
    Vector y(n_);
    for (std::size_t k = 0; k < n_; ++k) y[k] = b[perm_[k]];
    for (std::size_t i = 0; i < n_; ++i) {
      double s = y[i];
      const double* li = &env_[start_[i]];
      for (std::size_t k = first_[i]; k < i; ++k) s -= *li++ * y[k];
      y[i] = s / *li;
    }
    for (std::size_t i = n_; i-- > 0;) {
      y[i] /= entry(i, i);
      const double xi = y[i];
      const double* li = &env_[start_[i]];
      for (std::size_t k = first_[i]; k < i; ++k) y[k] -= *li++ * xi;
    }
    Vector x(n_);
    for (std::size_t k = 0; k < n_; ++k) x[perm_[k]] = y[k];
    return x;
  }

 private:
  double& entry(std::size_t i, std::size_t j) { return env_[start_[i] + (j - first_[i])]; }
  double entry(std::size_t i, std::size_t j) const { return env_[start_[i] + (j - first_[i])]; }

  std::size_t n_ = 0;
  std::vector<std::size_t> perm_;   // perm_[k] = original index at position k
  std::vector<std::size_t> first_;  // first stored column of each permuted row
  std::vector<std::size_t> start_;
  Vector env_;
};

inline SpdFactorization spd_factorize(const SparseMatrix& a) { return SpdFactorization(a); }

inline Vector spd_solve(const SpdFactorization& f, std::span<const double> b) { return f.solve(b); }

/// Dense lower Cholesky factor; throws SpdError on a non-positive pivot.
inline DenseMatrix dense_cholesky(const DenseMatrix& a) {
  const auto n = a.rows();
  DenseMatrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) throw SpdError("dense_cholesky: non-positive pivot", j);
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

/// Solves an SPD tridiagonal system (diagonal `d`, off-diagonal `e` of length
/// n-1) by elimination without pivoting.
inline Vector solve_spd_tridiagonal(std::span<const double> d, std::span<const double> e, std::span<const double> rhs) {
  const auto n = d.size();
  if (rhs.size() != n || (n > 0 && e.size() != n - 1)) throw UsageError("solve_spd_tridiagonal: dimension mismatch");
  Vector c(n), x(rhs.begin(), rhs.end());
  double pivot = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    pivot = d[i] - (i > 0 ? e[i - 1] * c[i - 1] : 0.0);
    if (!(pivot > 0.0)) throw SpdError("solve_spd_tridiagonal: non-positive pivot", i);
    if (i + 1 < n) c[i] = e[i] / pivot;
    x[i] = (x[i] - (i > 0 ? e[i - 1] * x[i - 1] : 0.0)) / pivot;
  }
  for (std::size_t i = n; i-- > 1;) x[i - 1] -= c[i - 1] * x[i];
  return x;
}

struct SymEigResult {
  Vector values;        // ascending
  DenseMatrix vectors;  // columns; empty when not requested
};

namespace detail {

// Householder reduction to tridiagonal form; on exit `v` holds the
// accumulated transformation when `want_vectors`, `d` the diagonal and `e`
// the subdiagonal in e[1..n-1].
inline void householder_tridiagonalize(DenseMatrix& v, Vector& d, Vector& e, bool want_vectors) {
  const auto n = v.rows();
  d.assign(n, 0.0);
  e.assign(n, 0.0);
  if (n == 0) return;
  for (std::size_t j = 0; j < n; ++j) d[j] = v(n - 1, j);

  for (std::size_t i = n - 1; i > 0; --i) {
    double scale = 0.0;
    double h = 0.0;
    for (std::size_t k = 0; k < i; ++k) scale += std::abs(d[k]);
    if (scale == 0.0) {
      e[i] = d[i - 1];
      for (std::size_t j = 0; j < i; ++j) {
        d[j] = v(i - 1, j);
        v(i, j) = 0.0;
        v(j, i) = 0.0;
      }
    } else {
      for (std::size_t k = 0; k < i; ++k) {
        d[k] /= scale;
        h += d[k] * d[k];
      }
      double f = d[i - 1];
      double g = std::sqrt(h);
      if (f > 0) g = -g;
      e[i] = scale * g;
      h -= f * g;
      d[i - 1] = f - g;
      for (std::size_t j = 0; j < i; ++j) e[j] = 0.0;
      for (std::size_t j = 0; j < i; ++j) {
        f = d[j];
        v(j, i) = f;
        g = e[j] + v(j, j) * f;
        for (std::size_t k = j + 1; k <= i - 1; ++k) {
          g += v(k, j) * d[k];
          e[k] += v(k, j) * f;
        }
        e[j] = g;
      }
      f = 0.0;
      for (std::size_t j = 0; j < i; ++j) {
        e[j] /= h;
        f += e[j] * d[j];
      }
      const double hh = f / (h + h);
      for (std::size_t j = 0; j < i; ++j) e[j] -= hh * d[j];
      for (std::size_t j = 0; j < i; ++j) {
        f = d[j];
        g = e[j];
        for (std::size_t k = j; k <= i - 1; ++k) v(k, j) -= (f * e[k] + g * d[k]);
        d[j] = v(i - 1, j);
        v(i, j) = 0.0;
      }
    }
    d[i] = h;
  }

  if (!want_vectors) {
    for (std::size_t j = 0; j < n; ++j) d[j] = v(j, j);
    e[0] = 0.0;
    return;
  }

  for (std::size_t i = 0; i + 1 < n; ++i) {
    v(n - 1, i) = v(i, i);
    v(i, i) = 1.0;
    const double h = d[i + 1];
    if (h != 0.0) {
      for (std::size_t k = 0; k <= i; ++k) d[k] = v(k, i + 1) / h;
      for (std::size_t j = 0; j <= i; ++j) {
        double g = 0.0;
        for (std::size_t k = 0; k <= i; ++k) g += v(k, i + 1) * v(k, j);
        for (std::size_t k = 0; k <= i; ++k) v(k, j) -= g * d[k];
      }
    }
    for (std::size_t k = 0; k <= i; ++k) v(k, i + 1) = 0.0;
  }
  for (std::size_t j = 0; j < n; ++j) {
    d[j] = v(n - 1, j);
    v(n - 1, j) = 0.0;
  }
  v(n - 1, n - 1) = 1.0;
  e[0] = 0.0;
}

// Implicit QL on a symmetric tridiagonal matrix (subdiagonal in e[1..n-1]).
// Rotations are applied to `v` when it is non-null.
inline void tridiagonal_ql(Vector& d, Vector& e, DenseMatrix* v) {
  const auto n = d.size();
  if (n == 0) return;
  for (std::size_t i = 1; i < n; ++i) e[i - 1] = e[i];
  e[n - 1] = 0.0;

  double f = 0.0;
  double tst1 = 0.0;
  const double eps = std::numeric_limits<double>::epsilon();
  constexpr int max_iterations = 60;
  for (std::size_t l = 0; l < n; ++l) {
    tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
    std::size_t m = l;
    while (m < n - 1) {
      if (std::abs(e[m]) <= eps * tst1) break;
      ++m;
    }
    if (m > l) {
      int iter = 0;
      do {
        if (++iter > max_iterations) throw NumericalError("symmetric eigensolver did not converge", l);
        double g = d[l];
        double p = (d[l + 1] - g) / (2.0 * e[l]);
        double r = std::hypot(p, 1.0);
        if (p < 0) r = -r;
        d[l] = e[l] / (p + r);
        d[l + 1] = e[l] * (p + r);
        const double dl1 = d[l + 1];
        double h = g - d[l];
        for (std::size_t i = l + 2; i < n; ++i) d[i] -= h;
        f += h;

        p = d[m];
        double c = 1.0, c2 = 1.0, c3 = 1.0;
        const double el1 = e[l + 1];
        double s = 0.0, s2 = 0.0;
        for (std::size_t i = m; i-- > l;) {
          c3 = c2;
          c2 = c;
          s2 = s;
          g = c * e[i];
          h = c * p;
          r = std::hypot(p, e[i]);
          e[i + 1] = s * r;
          s = e[i] / r;
          c = p / r;
          p = c * d[i] - s * g;
          d[i + 1] = h + s * (c * g + s * d[i]);
          if (v != nullptr) {
            for (std::size_t k = 0; k < n; ++k) {
              h = (*v)(k, i + 1);
              (*v)(k, i + 1) = s * (*v)(k, i) + c * h;
              (*v)(k, i) = c * (*v)(k, i) - s * h;
            }
          }
        }
        p = -s * s2 * c3 * el1 * e[l] / dl1;
        e[l] = s * p;
        d[l] = c * p;
      } while (std::abs(e[l]) > eps * tst1);
    }
    d[l] += f;
    e[l] = 0.0;
  }
}

inline void sort_eigenpairs(Vector& d, DenseMatrix* v) {
  const auto n = d.size();
  for (std::size_t i = 0; i + 1 < n; ++i) {
    std::size_t k = i;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (d[j] < d[k]) k = j;
    }
    if (k != i) {
      std::swap(d[k], d[i]);
      if (v != nullptr) {
        for (std::size_t j = 0; j < n; ++j) std::swap((*v)(j, i), (*v)(j, k));
      }
    }
  }
}

}  // namespace detail

/// All eigenvalues (and optionally orthonormal eigenvectors) of a dense
/// symmetric matrix. Only the lower triangle is read.
inline SymEigResult symmetric_eigen(const DenseMatrix& a, bool want_vectors = true) {
  if (a.rows() != a.cols()) throw UsageError("symmetric_eigen: matrix is not square");
  const auto n = a.rows();
  DenseMatrix v(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) v(i, j) = v(j, i) = a(i, j);
  }
  Vector d, e;
  detail::householder_tridiagonalize(v, d, e, want_vectors);
  detail::tridiagonal_ql(d, e, want_vectors ? &v : nullptr);
  detail::sort_eigenpairs(d, want_vectors ? &v : nullptr);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(d[i])) throw NumericalError("symmetric_eigen: non-finite eigenvalue", i);
  }
  SymEigResult out;
  out.values = std::move(d);
  if (want_vectors) out.vectors = std::move(v);
  return out;
}

/// Eigenvalues of the symmetric tridiagonal matrix with diagonal `diag` and
/// off-diagonal `off` (length n-1), ascending.
inline Vector tridiagonal_eigenvalues(std::span<const double> diag, std::span<const double> off) {
  const auto n = diag.size();
  if (n > 0 && off.size() + 1 != n) throw UsageError("tridiagonal_eigenvalues: dimension mismatch");
  Vector d(diag.begin(), diag.end());
  Vector e(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) e[i] = off[i - 1];
  detail::tridiagonal_ql(d, e, nullptr);
  std::sort(d.begin(), d.end());
  return d;
}

struct DenseSymEigResult {
  Vector eigenvalues;       // ascending
  DenseMatrix eigenvectors;  // B-orthonormal columns
};

/// Solves A v = lambda B v for symmetric A and positive diagonal B by the
/// symmetric reduction B^{-1/2} A B^{-1/2}. Each eigenvector's first
/// significant component is made positive.
inline DenseSymEigResult dense_sym_generalized_eig(const DenseMatrix& a, std::span<const double> b_diag) {
  const auto n = a.rows();
  if (a.cols() != n || b_diag.size() != n) throw UsageError("dense_sym_generalized_eig: dimension mismatch");
  Vector inv_sqrt_b(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(b_diag[i] > 0.0)) throw UsageError("dense_sym_generalized_eig: B entry " + std::to_string(i) + " is not positive");
    inv_sqrt_b[i] = 1.0 / std::sqrt(b_diag[i]);
  }
  DenseMatrix c(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) c(i, j) = a(i, j) * inv_sqrt_b[i] * inv_sqrt_b[j];
  }
  auto eig = symmetric_eigen(c, true);
  DenseSymEigResult out;
  out.eigenvalues = std::move(eig.values);
  out.eigenvectors = DenseMatrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    double amax = 0.0;
    for (std::size_t i = 0; i < n; ++i) amax = std::max(amax, std::abs(eig.vectors(i, k)));
    double sign = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (std::abs(eig.vectors(i, k)) > 1e-12 * amax) {
        sign = eig.vectors(i, k) > 0 ? 1.0 : -1.0;
        break;
      }
    }
    for (std::size_t i = 0; i < n; ++i) out.eigenvectors(i, k) = sign * eig.vectors(i, k) * inv_sqrt_b[i];
  }
  return out;
}

}  // namespace hem
