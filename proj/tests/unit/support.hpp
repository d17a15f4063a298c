#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <doctest.h>

#include <Eigen/QR>

#include "orthoeraser/error.hpp"
#include "orthoeraser/rng.hpp"
#include "orthoeraser/sae.hpp"
#include "orthoeraser/types.hpp"

namespace test {

using orthoeraser::Matrix;
using orthoeraser::Vector;

/// Code of the orthoeraser::Error thrown by `fn`; fails the test if none is.
template <typename F>
orthoeraser::ErrorCode error_code(F&& fn) {
  try {
    fn();
  } catch (const orthoeraser::Error& e) {
    return e.code();
  }
  FAIL("expected an orthoeraser::Error");
  return orthoeraser::ErrorCode::kIo;
}

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, orthoeraser::Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
  return m;
}

inline Vector gaussian(Eigen::Index n, orthoeraser::Rng& rng) { return gaussian(n, 1, rng).col(0); }

inline Vector unit(Eigen::Index n, Eigen::Index i) { return Vector::Unit(n, i); }

/// Zero biases, encoder tied to the decoder.
inline orthoeraser::SaeModel tied_model(const Matrix& decoder, std::size_t k) {
  orthoeraser::SaeModel m;
  m.decoder_weight = decoder;
  m.encoder_weight = decoder.transpose();
  m.encoder_bias = Vector::Zero(decoder.cols());
  m.decoder_bias = Vector::Zero(decoder.rows());
  m.k = k;
  return m;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("orthoeraser-" + tag + "-" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace test
