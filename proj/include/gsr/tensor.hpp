#pragma once

#include <cstddef>
#include <initializer_list>
#include <random>
#include <vector>

namespace gsr {

/// Dense row-major matrix of 32-bit floats. Vectors are 1xD rows; scalars 1x1.
/// Reductions (sums, means, normalization constants) accumulate in 64-bit.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols);  // zero-filled

  static Tensor zeros(int rows, int cols);
  static Tensor full(int rows, int cols, float value);
  static Tensor randn(int rows, int cols, float stddev, std::mt19937& rng);
  static Tensor from_rows(std::initializer_list<std::initializer_list<float>> rows);
  static Tensor row(const std::vector<float>& values);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }

  float& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  float operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  const float* row_ptr(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  float* row_ptr(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  std::vector<float> row_vec(int r) const;

  bool same_shape(const Tensor& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const;
  void fill(float value);

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<float> data_;
};

// Elementwise exponential linear unit. Output is strictly greater than -1 on
// every finite input (the negative branch is clamped one ulp above -1 where
// expm1 would round to it).
float elu_scalar(float x);
Tensor elu(const Tensor& x);

// elu(x) + 1 evaluated in fused form (x > 0 ? x + 1 : exp(x)) so the result
// stays strictly positive across the whole float range.
float elu_plus_one_scalar(float x);
Tensor elu_plus_one(const Tensor& x);

// Row softmax with masking. `allowed` has the same shape; entries equal to 0
// are forbidden and receive weight exactly 0. Masking is realized by a large
// negative additive offset before exponentiation plus explicit zeroing, so a
// fully forbidden row yields an all-zero row rather than NaN.
Tensor softmax_rows(const Tensor& m, const Tensor& allowed);

Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Normalization over the last axis followed by the affine transform
// gain * x_hat + bias; gain and bias are 1xC rows.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps);

}  // namespace gsr
