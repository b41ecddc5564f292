#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace sdd {

// Dense row-major matrix. float in production, double in grad-check mode.
template <class T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, T(0)) {}

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  T& operator()(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  const T& operator()(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  T* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
  const T* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }
  size_t size() const { return v.size(); }
  void set_zero() { std::fill(v.begin(), v.end(), T(0)); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

namespace la {

template <class T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Map = Eigen::Map<RowMajor<T>, 0, Eigen::OuterStride<>>;
template <class T>
using CMap = Eigen::Map<const RowMajor<T>, 0, Eigen::OuterStride<>>;

// C (m x n) = / += A (m x k) * B (k x n). Row-major with leading dimensions.
template <class T>
inline void gemm_nn(bool acc, int m, int k, int n, const T* a, int lda, const T* b, int ldb,
                    T* c, int ldc) {
  CMap<T> ma(a, m, k, Eigen::OuterStride<>(lda));
  CMap<T> mb(b, k, n, Eigen::OuterStride<>(ldb));
  Map<T> mc(c, m, n, Eigen::OuterStride<>(ldc));
  if (acc)
    mc.noalias() += ma * mb;
  else
    mc.noalias() = ma * mb;
}

// C (m x n) = / += A (m x k) * B^T where B is (n x k) row-major.
template <class T>
inline void gemm_nt(bool acc, int m, int k, int n, const T* a, int lda, const T* b, int ldb,
                    T* c, int ldc) {
  CMap<T> ma(a, m, k, Eigen::OuterStride<>(lda));
  CMap<T> mb(b, n, k, Eigen::OuterStride<>(ldb));
  Map<T> mc(c, m, n, Eigen::OuterStride<>(ldc));
  if (acc)
    mc.noalias() += ma * mb.transpose();
  else
    mc.noalias() = ma * mb.transpose();
}

// C (m x n) = / += A^T * B where A is (k x m) row-major and B is (k x n).
template <class T>
inline void gemm_tn(bool acc, int m, int k, int n, const T* a, int lda, const T* b, int ldb,
                    T* c, int ldc) {
  CMap<T> ma(a, k, m, Eigen::OuterStride<>(lda));
  CMap<T> mb(b, k, n, Eigen::OuterStride<>(ldb));
  Map<T> mc(c, m, n, Eigen::OuterStride<>(ldc));
  if (acc)
    mc.noalias() += ma.transpose() * mb;
  else
    mc.noalias() = ma.transpose() * mb;
}

}  // namespace la
}  // namespace sdd
