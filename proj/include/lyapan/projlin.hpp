#pragma once

// Matrices acting on projective space: canonical projective points, the sine
// distance between lines, singular values and second exterior powers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lyapan/errors.hpp"

namespace lyapan {

inline constexpr double kDetRelTol = 1e-12;
inline constexpr double kSignTol = 1e-12;

inline std::string format_matrix(const Eigen::MatrixXd& m) {
  std::ostringstream os;
  os.precision(17);
  os << '[';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    os << (i ? "; " : "");
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? ", " : "") << m(i, j);
  }
  os << ']';
  return os.str();
}

/// Real invertible square matrix. Invertibility is checked scale-free:
/// |det g| must exceed 1e-12 times the product of the column norms.
class Matrix {
 public:
  Matrix() : m_(Eigen::MatrixXd::Identity(2, 2)) {}

  explicit Matrix(Eigen::MatrixXd m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols() || m_.rows() < 1)
      throw DomainError("matrix must be square with dimension >= 1, got " +
                        std::to_string(m_.rows()) + "x" + std::to_string(m_.cols()));
    if (!m_.allFinite()) throw DomainError("matrix has non-finite entries: " + format_matrix(m_));
    double colprod = 1.0;
    for (Eigen::Index j = 0; j < m_.cols(); ++j) colprod *= m_.col(j).norm();
    const double det = m_.determinant();
    if (!(colprod > 0.0) || !(std::abs(det) > kDetRelTol * colprod))
      throw DomainError("matrix is singular (|det| = " + std::to_string(std::abs(det)) +
                        "): " + format_matrix(m_));
  }

  /// Row-major construction, the layout used by scenario files.
  static Matrix from_row_major(std::size_t d, const std::vector<double>& entries) {
    if (entries.size() != d * d)
      throw DomainError("expected " + std::to_string(d * d) + " entries, got " +
                        std::to_string(entries.size()));
    Eigen::MatrixXd m(d, d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) m(i, j) = entries[i * d + j];
    return Matrix(std::move(m));
  }

  static Matrix identity(std::size_t d) { return Matrix(Eigen::MatrixXd::Identity(d, d)); }

  /// Product of two valid matrices; invertibility is inherited so no re-check.
  static Matrix product(const Matrix& a, const Matrix& b) {
    Matrix out(Unchecked{});
    out.m_.noalias() = a.m_ * b.m_;
    return out;
  }

  /// Wraps a matrix known to be invertible (e.g. a restriction to an invariant block).
  static Matrix trusted(Eigen::MatrixXd m) {
    Matrix out(Unchecked{});
    out.m_ = std::move(m);
    return out;
  }

  std::size_t dim() const { return static_cast<std::size_t>(m_.rows()); }
  const Eigen::MatrixXd& eigen() const { return m_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }
  double determinant() const { return m_.determinant(); }
  double max_abs() const { return m_.cwiseAbs().maxCoeff(); }

  friend Matrix operator*(const Matrix& a, const Matrix& b) { return product(a, b); }
  friend Matrix operator*(double c, const Matrix& a) {
    if (c == 0.0) throw DomainError("scaling a matrix by zero");
    return trusted(c * a.m_);
  }

 private:
  struct Unchecked {};
  explicit Matrix(Unchecked) {}
  Eigen::MatrixXd m_;
};

/// A line in R^d, stored as its unit representative whose first coordinate
/// exceeding 1e-12 in magnitude is positive.
class ProjectivePoint {
 public:
  ProjectivePoint() = default;
  const Eigen::VectorXd& vec() const { return v_; }
  std::size_t dim() const { return static_cast<std::size_t>(v_.size()); }
  double operator[](Eigen::Index i) const { return v_(i); }

 private:
  friend ProjectivePoint project(const Eigen::VectorXd& v);
  friend ProjectivePoint project_unchecked(Eigen::VectorXd v);
  Eigen::VectorXd v_;
};

/// Normalizes in place and fixes the sign; the caller guarantees v != 0.
inline ProjectivePoint project_unchecked(Eigen::VectorXd v) {
  v /= v.norm();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v(i)) > kSignTol) {
      if (v(i) < 0.0) v = -v;
      break;
    }
  }
  ProjectivePoint p;
  p.v_ = std::move(v);
  return p;
}

inline ProjectivePoint project(const Eigen::VectorXd& v) {
  if (v.size() < 1) throw DomainError("cannot project an empty vector");
  if (!v.allFinite()) throw DomainError("cannot project a non-finite vector");
  const double n = v.norm();
  if (!(n > 0.0)) throw DomainError("cannot project the zero vector");
  return project_unchecked(v);
}

inline ProjectivePoint project(std::initializer_list<double> coords) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(coords.size()));
  Eigen::Index i = 0;
  for (double c : coords) v(i++) = c;
  return project(v);
}

namespace detail {

inline bool lex_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a(i) < b(i)) return true;
    if (b(i) < a(i)) return false;
  }
  return false;
}

// ||p ^ q|| for unit p, q via the component of one orthogonal to the other.
// Arguments are put in a canonical order first so the result is exactly symmetric.
inline double unit_wedge_norm(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  if (p.size() == 2) return std::abs(p(0) * q(1) - p(1) * q(0));
  const Eigen::VectorXd& a = lex_less(q, p) ? q : p;
  const Eigen::VectorXd& b = lex_less(q, p) ? p : q;
  const double c = a.dot(b);
  return (a - c * b).norm();
}

}  // namespace detail

/// delta(p, q) = ||p ^ q|| / (||p|| ||q||), the sine of the angle between the lines.
inline double projective_distance(const ProjectivePoint& p, const ProjectivePoint& q) {
  if (p.dim() != q.dim()) throw DomainError("projective points of different dimension");
  if (p.dim() == 1 || p.vec() == q.vec()) return 0.0;
  return std::clamp(detail::unit_wedge_norm(p.vec(), q.vec()), 0.0, 1.0);
}

inline ProjectivePoint act(const Matrix& g, const ProjectivePoint& p) {
  if (g.dim() != p.dim()) throw DomainError("matrix and point dimensions differ");
  return project_unchecked(g.eigen() * p.vec());
}

/// Descending singular values s_1 >= ... >= s_d > 0.
struct SingularValues {
  std::vector<double> values;
  double s1() const { return values.front(); }
  double s2() const { return values.size() > 1 ? values[1] : values.front(); }
  double smin() const { return values.back(); }
  double condition() const { return values.front() / values.back(); }
};

inline SingularValues singular_values(const Matrix& g) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(g.eigen());
  const Eigen::VectorXd& s = svd.singularValues();
  if (svd.info() != Eigen::Success || !s.allFinite() || !(s(s.size() - 1) > 0.0))
    throw NumericError("singular value decomposition failed for " + format_matrix(g.eigen()));
  SingularValues out;
  out.values.assign(s.data(), s.data() + s.size());
  return out;
}

/// ||wedge_2 g|| = s_1 s_2. For d = 1 there is no second exterior power; returns |g|.
inline double wedge2_norm(const Matrix& g) {
  const auto sv = singular_values(g);
  return g.dim() == 1 ? sv.s1() : sv.s1() * sv.s2();
}

/// Matrix of 2x2 minors: the action of g on the second exterior power, in the
/// basis e_i ^ e_j (i < j) ordered lexicographically. For d = 2 this is [det g].
inline Matrix exterior2(const Matrix& g) {
  const auto d = static_cast<Eigen::Index>(g.dim());
  if (d < 2) throw DomainError("second exterior power needs d >= 2");
  const Eigen::Index k = d * (d - 1) / 2;
  Eigen::MatrixXd w(k, k);
  const auto& m = g.eigen();
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = i + 1; j < d; ++j, ++r) {
      Eigen::Index c = 0;
      for (Eigen::Index a = 0; a < d; ++a)
        for (Eigen::Index b = a + 1; b < d; ++b, ++c) w(r, c) = m(i, a) * m(j, b) - m(i, b) * m(j, a);
    }
  return Matrix::trusted(std::move(w));
}

namespace detail {

// delta(g p, g q) / delta(p, q) for unit p, q without forming either distance:
// near-coincident pairs would lose about 1e-16 / delta of relative accuracy.
// In d = 2 the ratio is |det g| / (|g p| |g q|). Otherwise, with h = q - p
// (exact for nearby points), both wedges are orthogonal components of h and g h.
inline double unit_ratio(const Eigen::MatrixXd& g, const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  const Eigen::VectorXd gp = g * p;
  if (p.size() == 2) {
    const double det = g(0, 0) * g(1, 1) - g(0, 1) * g(1, 0);
    return std::abs(det) / (gp.norm() * (g * q).norm());
  }
  const Eigen::VectorXd h = (p.dot(q) < 0.0 ? -q : q) - p;
  const Eigen::VectorXd gh = g * h;
  const Eigen::VectorXd u = gp / gp.norm();
  const double num = (gh - gh.dot(u) * u).norm();
  const double den = (h - h.dot(p) * p).norm();
  return num / (den * (g * q).norm());
}

}  // namespace detail

/// delta(g p, g q) / delta(p, q).
inline double contraction_ratio(const Matrix& g, const ProjectivePoint& p, const ProjectivePoint& q) {
  if (g.dim() != p.dim()) throw DomainError("matrix and point dimensions differ");
  const double base = projective_distance(p, q);
  if (!(base > 1e-12)) throw DomainError("contraction ratio needs distinct projective points");
  return detail::unit_ratio(g.eigen(), p.vec(), q.vec());
}

inline Matrix rotation(double theta) {
  Eigen::MatrixXd r(2, 2);
  r << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  return Matrix(std::move(r));
}

inline Matrix diagonal(std::initializer_list<double> entries) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(entries.size()));
  Eigen::Index i = 0;
  for (double e : entries) v(i++) = e;
  return Matrix(Eigen::MatrixXd(v.asDiagonal()));
}

inline Matrix matrix2(double a, double b, double c, double d) {
  Eigen::MatrixXd m(2, 2);
  m << a, b, c, d;
  return Matrix(std::move(m));
}

}  // namespace lyapan
