#pragma once
// Ridge-regularized least-squares regression on polynomial or Gaussian
// radial bases, the conditional-expectation estimator of the backward
// solver.
//
// The design matrix is factored once per time step (Householder QR on the
// ridge-augmented system) and reused for every regression target at that
// step. Normal equations are never formed; an unregularized rank-deficient
// system is rejected with a hint to raise the ridge weight.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "qbsde/linalg.hpp"

namespace qbsde::regression {

struct BasisSpec {
  enum class Kind { polynomial, gaussian_rbf };
  Kind kind = Kind::polynomial;
  int degree = 4;     // total degree of the monomial basis
  Mat centers;        // rbf centers, one per row
  double width = 1.0; // rbf length scale

  void validate() const {
    if (kind == Kind::polynomial && degree < 0)
      throw std::invalid_argument("basis: polynomial degree must be >= 0");
    if (kind == Kind::gaussian_rbf && (centers.rows() == 0 || !(width > 0.0)))
      throw std::invalid_argument("basis: rbf needs centers and width > 0");
  }
};

namespace detail {

// Enumerates monomial exponent tuples of total degree <= degree.
inline void enumerate_monomials(int dim, int degree, std::vector<std::vector<int>>& out) {
  std::vector<int> current(dim, 0);
  std::function<void(int, int)> rec = [&](int pos, int remaining) {
    if (pos == dim) {
      out.push_back(current);
      return;
    }
    for (int e = 0; e <= remaining; ++e) {
      current[pos] = e;
      rec(pos + 1, remaining - e);
    }
    current[pos] = 0;
  };
  rec(0, degree);
}

}  // namespace detail

/// Per-step regression: fit once against a sample of states, then evaluate
/// the fitted conditional expectation at arbitrary states.
class Fit {
 public:
  /// xs: one state per row (n x d). Columns are standardized before the
  /// basis is applied; near-constant columns map to zero, which makes the
  /// fit collapse to the sample mean (the correct conditional expectation
  /// at a degenerate point cloud).
  Fit(const Mat& xs, const BasisSpec& basis, double ridge) : basis_(basis) {
    basis.validate();
    if (!(ridge >= 0.0)) throw std::invalid_argument("regression: ridge must be >= 0");
    const Eigen::Index n = xs.rows();
    const Eigen::Index d = xs.cols();
    mean_ = xs.colwise().mean();
    scale_ = Vec::Ones(d);
    for (Eigen::Index j = 0; j < d; ++j) {
      const double sd = std::sqrt((xs.col(j).array() - mean_[j]).square().sum() /
                                  std::max<Eigen::Index>(1, n - 1));
      scale_[j] = sd > 1e-12 ? sd : 0.0;  // zero disables the column
    }
    if (basis_.kind == BasisSpec::Kind::polynomial)
      detail::enumerate_monomials(static_cast<int>(d), basis_.degree, exponents_);

    const Eigen::Index b = n_basis(d);
    Mat design(n + b, b);
    design.setZero();
    for (Eigen::Index i = 0; i < n; ++i)
      design.row(i) = eval_basis(xs.row(i).transpose()).transpose();
    const double ridge_sqrt = std::sqrt(ridge);
    for (Eigen::Index j = 0; j < b; ++j) design(n + j, j) = ridge_sqrt;

    qr_.compute(design);
    const Vec diag = qr_.matrixQR().diagonal().head(b).cwiseAbs();
    const double dmax = diag.maxCoeff();
    const double dmin = diag.minCoeff();
    if (ridge == 0.0 && (dmin == 0.0 || dmax / dmin > 1e6))
      throw std::runtime_error(
          "regression: design matrix is rank deficient or ill conditioned "
          "(condition > 1e6); increase the ridge weight");
    n_rows_ = n;
  }

  Eigen::Index n_basis(Eigen::Index dim) const {
    if (basis_.kind == BasisSpec::Kind::polynomial)
      return static_cast<Eigen::Index>(exponents_.size());
    return basis_.centers.rows() + 1;  // rbf bumps plus a constant
  }

  /// Least-squares coefficients for one target vector (length n).
  Vec coefficients(const Vec& target) const {
    Vec rhs = Vec::Zero(qr_.rows());
    rhs.head(n_rows_) = target;
    return qr_.solve(rhs);
  }

  double evaluate(const Vec& coeffs, const Vec& x) const {
    return eval_basis(x).dot(coeffs);
  }

  /// Fitted values at the sample states used for the factorization are
  /// obtained by evaluating coefficient-wise; callers keep the sample.
  Vec eval_basis(const Vec& x) const {
    const Eigen::Index d = mean_.size();
    Vec xhat(d);
    for (Eigen::Index j = 0; j < d; ++j)
      xhat[j] = scale_[j] > 0.0 ? (x[j] - mean_[j]) / scale_[j] : 0.0;
    if (basis_.kind == BasisSpec::Kind::polynomial) {
      Vec phi(static_cast<Eigen::Index>(exponents_.size()));
      for (size_t m = 0; m < exponents_.size(); ++m) {
        double v = 1.0;
        for (Eigen::Index j = 0; j < d; ++j)
          for (int e = 0; e < exponents_[m][static_cast<size_t>(j)]; ++e) v *= xhat[j];
        phi[static_cast<Eigen::Index>(m)] = v;
      }
      return phi;
    }
    Vec phi(basis_.centers.rows() + 1);
    phi[0] = 1.0;
    for (Eigen::Index c = 0; c < basis_.centers.rows(); ++c) {
      Vec chat(d);
      for (Eigen::Index j = 0; j < d; ++j)
        chat[j] = scale_[j] > 0.0 ? (basis_.centers(c, j) - mean_[j]) / scale_[j] : 0.0;
      phi[c + 1] = std::exp(-(xhat - chat).squaredNorm() / (2.0 * basis_.width * basis_.width));
    }
    return phi;
  }

 private:
  BasisSpec basis_;
  Vec mean_, scale_;
  std::vector<std::vector<int>> exponents_;
  Eigen::HouseholderQR<Mat> qr_;
  Eigen::Index n_rows_ = 0;
};

}  // namespace qbsde::regression
