// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace fedsim {

// Violated precondition of an operation (bad sizes, empty inputs, ...).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Tensor shapes that cannot be combined.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

// A value that promised to be finite is NaN or infinite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fedsim
