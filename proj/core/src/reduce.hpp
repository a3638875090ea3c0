#pragma once

// Fixed-order reductions. Eigen's vectorised sum() peels to the buffer's
// alignment, so the same data can round differently depending on where the
// allocator put it; gradients must not.

#include <Eigen/Core>

namespace camfp::detail {

/// out[r] += sum_c m(r, c)
template <typename Mat, typename Out>
void add_row_sums(const Mat& m, Out& out) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    typename Mat::Scalar s(0);
    for (Eigen::Index c = 0; c < m.cols(); ++c) s += m(r, c);
    out(r) += s;
  }
}

/// out[c] += sum_r m(r, c)
template <typename Mat, typename Out>
void add_col_sums(const Mat& m, Out& out) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out(c) += m(r, c);
  }
}

}  // namespace camfp::detail
