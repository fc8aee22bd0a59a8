#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "pelab/errors.hpp"

namespace pelab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Rank-3 component array T(a, b, c), dimension n in every slot.
/// For Christoffel symbols the layout is Gamma(k, i, j) = Gamma^k_{ij}.
class Tensor3 {
 public:
  Tensor3() = default;
  explicit Tensor3(int n) : n_(n), data_(static_cast<std::size_t>(n) * n * n, 0.0) {}

  int dim() const { return n_; }
  double& operator()(int a, int b, int c) { return data_[idx(a, b, c)]; }
  double operator()(int a, int b, int c) const { return data_[idx(a, b, c)]; }

  Tensor3& operator+=(const Tensor3& o) {
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor3& operator-=(const Tensor3& o) {
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor3& operator*=(double s) {
    for (auto& v : data_) v *= s;
    return *this;
  }
  friend Tensor3 operator+(Tensor3 a, const Tensor3& b) { return a += b; }
  friend Tensor3 operator-(Tensor3 a, const Tensor3& b) { return a -= b; }
  friend Tensor3 operator*(double s, Tensor3 a) { return a *= s; }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

 private:
  std::size_t idx(int a, int b, int c) const {
    return (static_cast<std::size_t>(a) * n_ + b) * n_ + c;
  }
  int n_ = 0;
  std::vector<double> data_;
};

/// Rank-4 array, used for the Riemann tensor Rm(a, b, c, d).
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(int n) : n_(n), data_(static_cast<std::size_t>(n) * n * n * n, 0.0) {}
  int dim() const { return n_; }
  double& operator()(int a, int b, int c, int d) { return data_[idx(a, b, c, d)]; }
  double operator()(int a, int b, int c, int d) const { return data_[idx(a, b, c, d)]; }

 private:
  std::size_t idx(int a, int b, int c, int d) const {
    return ((static_cast<std::size_t>(a) * n_ + b) * n_ + c) * n_ + d;
  }
  int n_ = 0;
  std::vector<double> data_;
};

inline Mat sym(const Mat& m) { return 0.5 * (m + m.transpose()); }

/// Inverse with a conditioning guard; throws SingularMetric.
inline Mat checked_inverse(const Mat& g) {
  Eigen::FullPivLU<Mat> lu(g);
  if (!lu.isInvertible()) throw SingularMetric("matrix is singular");
  const double scale = g.cwiseAbs().maxCoeff();
  if (!(std::abs(lu.determinant()) > 1e-300) || lu.rcond() < 1e-14 || !(scale > 0.0))
    throw SingularMetric("matrix is numerically singular");
  return lu.inverse();
}

/// Pointwise norm of a symmetric 2-tensor t with respect to the metric g:
/// |t|_g^2 = g^{ia} g^{jb} t_ij t_ab.
inline double tensor_norm(const Mat& ginv, const Mat& t) {
  const Mat a = ginv * t;
  return std::sqrt(std::max(0.0, (a * a.transpose()).trace()));
}

/// g-inner product of two symmetric 2-tensors.
inline double tensor_dot(const Mat& ginv, const Mat& s, const Mat& t) {
  return (ginv * s * ginv * t.transpose()).trace();
}

inline double covector_norm(const Mat& ginv, const Vec& w) {
  return std::sqrt(std::max(0.0, w.dot(ginv * w)));
}

/// |T|^2 for a rank-3 covariant tensor.
inline double tensor3_norm_sq(const Mat& ginv, const Tensor3& t) {
  const int n = t.dim();
  double s = 0.0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < n; ++c) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k)
              acc += ginv(a, i) * ginv(b, j) * ginv(c, k) * t(i, j, k);
        s += acc * t(a, b, c);
      }
  return s;
}

}  // namespace pelab
