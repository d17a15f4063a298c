#pragma once

#include <string_view>

#include <Eigen/Core>

namespace orthoeraser {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class PromptClass { kSensitive, kNonSensitive };

std::string_view to_string(PromptClass c);
PromptClass prompt_class_from_string(std::string_view text);

/// Bitwise equality, shape included. Eigen's operator== asserts on shape.
inline bool identical(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}
inline bool identical(const Vector& a, const Vector& b) {
  return a.size() == b.size() && (a.array() == b.array()).all();
}

}  // namespace orthoeraser
