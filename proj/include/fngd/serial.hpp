#pragma once

// Single-threaded reference versions of the parallel kernels in linalg.hpp.
// They accumulate every output entry in the same order as the OpenMP
// kernels, so the two agree bit for bit. Tests and the kernel benchmark use
// them; the training code does not.

#include "fngd/linalg.hpp"

namespace fngd::serial {

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix khatri_rao(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale_columns(const Matrix& a, const Vector& w);

}  // namespace fngd::serial
