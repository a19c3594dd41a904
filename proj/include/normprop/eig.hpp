// SPDX-License-Identifier: Apache-2.0
#ifndef NORMPROP_EIG_HPP
#define NORMPROP_EIG_HPP

#include <vector>

#include "normprop/tensor.hpp"

namespace normprop {

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending
/// order. Input must be symmetric within 1e-10.
std::vector<real> symmetric_eigenvalues(const Tensor& a);

}  // namespace normprop

#endif
