#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace kgs2s {

// Dense row-major matrix of doubles. A vector is a 1xN matrix.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }

  double* row(int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return a.data() + static_cast<std::size_t>(r) * cols; }

  std::size_t size() const { return a.size(); }
  void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

// C += A * B   (A: m x k, B: k x n, C: m x n). ikj order keeps B reads sequential.
inline void gemm_acc(const Mat& A, const Mat& B, Mat& C) {
  assert(A.cols == B.rows && A.rows == C.rows && B.cols == C.cols);
  const int m = A.rows, k = A.cols, n = B.cols;
  for (int i = 0; i < m; ++i) {
    const double* arow = A.row(i);
    double* crow = C.row(i);
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = B.row(p);
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A^T * B  (A: k x m, B: k x n, C: m x n).
inline void gemm_at_b_acc(const Mat& A, const Mat& B, Mat& C) {
  assert(A.rows == B.rows && A.cols == C.rows && B.cols == C.cols);
  const int k = A.rows, m = A.cols, n = B.cols;
  for (int p = 0; p < k; ++p) {
    const double* arow = A.row(p);
    const double* brow = B.row(p);
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = C.row(i);
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A * B^T  (A: m x k, B: n x k, C: m x n).
inline void gemm_a_bt_acc(const Mat& A, const Mat& B, Mat& C) {
  assert(A.cols == B.cols && A.rows == C.rows && B.rows == C.cols);
  const int m = A.rows, k = A.cols, n = B.rows;
  for (int i = 0; i < m; ++i) {
    const double* arow = A.row(i);
    double* crow = C.row(i);
    for (int j = 0; j < n; ++j) {
      const double* brow = B.row(j);
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

inline Mat matmul(const Mat& A, const Mat& B) {
  Mat C(A.rows, B.cols);
  gemm_acc(A, B, C);
  return C;
}

}  // namespace kgs2s
