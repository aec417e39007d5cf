#include "gsr/tensor.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace gsr {

Tensor::Tensor(int rows, int cols) : rows_(rows), cols_(cols) {
  if (rows < 0 || cols < 0) {
    throw std::invalid_argument("Tensor: negative dimension");
  }
  data_.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), 0.0f);
}

Tensor Tensor::zeros(int rows, int cols) { return Tensor(rows, cols); }

Tensor Tensor::full(int rows, int cols, float value) {
  Tensor t(rows, cols);
  t.fill(value);
  return t;
}

Tensor Tensor::randn(int rows, int cols, float stddev, std::mt19937& rng) {
  Tensor t(rows, cols);
  std::normal_distribution<float> dist(0.0f, stddev);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = dist(rng);
  }
  return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  const int r = static_cast<int>(rows.size());
  const int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
  Tensor t(r, c);
  int i = 0;
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != c) {
      throw std::invalid_argument("Tensor::from_rows: ragged rows");
    }
    int j = 0;
    for (float v : row) {
      t(i, j++) = v;
    }
    ++i;
  }
  return t;
}

Tensor Tensor::row(const std::vector<float>& values) {
  Tensor t(1, static_cast<int>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    t[i] = values[i];
  }
  return t;
}

std::vector<float> Tensor::row_vec(int r) const {
  return std::vector<float>(row_ptr(r), row_ptr(r) + cols_);
}

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) {
      return false;
    }
  }
  return true;
}

void Tensor::fill(float value) { data_.assign(data_.size(), value); }

float elu_scalar(float x) {
  if (x > 0.0f) {
    return x;
  }
  const float e = static_cast<float>(std::expm1(static_cast<double>(x)));
  // expm1 rounds to -1 in float for x below about -17; keep the range open.
  return std::max(e, std::nextafter(-1.0f, 0.0f));
}

Tensor elu(const Tensor& x) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = elu_scalar(x[i]);
  }
  return out;
}

float elu_plus_one_scalar(float x) {
  if (x > 0.0f) {
    return x + 1.0f;
  }
  // exp underflows to 0 below about -87; keep the range strictly positive.
  return std::max(static_cast<float>(std::exp(static_cast<double>(x))),
                  std::numeric_limits<float>::min());
}

Tensor elu_plus_one(const Tensor& x) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = elu_plus_one_scalar(x[i]);
  }
  return out;
}

namespace {
constexpr float kMaskOffset = -1e9f;
}

Tensor softmax_rows(const Tensor& m, const Tensor& allowed) {
  if (!m.same_shape(allowed)) {
    throw std::invalid_argument("softmax_rows: mask shape mismatch");
  }
  Tensor out(m.rows(), m.cols());
  for (int r = 0; r < m.rows(); ++r) {
    float rowmax = -std::numeric_limits<float>::infinity();
    for (int c = 0; c < m.cols(); ++c) {
      const float shifted = allowed(r, c) != 0.0f ? m(r, c) : m(r, c) + kMaskOffset;
      rowmax = std::max(rowmax, shifted);
    }
    double sum = 0.0;
    for (int c = 0; c < m.cols(); ++c) {
      if (allowed(r, c) == 0.0f) {
        out(r, c) = 0.0f;  // explicit zeroing of forbidden entries
        continue;
      }
      const float e = static_cast<float>(std::exp(static_cast<double>(m(r, c) - rowmax)));
      out(r, c) = e;
      sum += e;
    }
    if (sum > 0.0) {
      const float inv = static_cast<float>(1.0 / sum);
      for (int c = 0; c < m.cols(); ++c) {
        out(r, c) *= inv;
      }
    }
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree");
  }
  Tensor out(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i) {
    const float* arow = a.row_ptr(i);
    float* orow = out.row_ptr(i);
    for (int k = 0; k < a.cols(); ++k) {
      const float aik = arow[k];
      if (aik == 0.0f) {
        continue;
      }
      const float* brow = b.row_ptr(k);
      for (int j = 0; j < b.cols(); ++j) {
        orow[j] += aik * brow[j];
      }
    }
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("matmul_nt: inner dimensions disagree");
  }
  Tensor out(a.rows(), b.rows());
  for (int i = 0; i < a.rows(); ++i) {
    const float* arow = a.row_ptr(i);
    for (int j = 0; j < b.rows(); ++j) {
      const float* brow = b.row_ptr(j);
      float acc = 0.0f;
      for (int k = 0; k < a.cols(); ++k) {
        acc += arow[k] * brow[k];
      }
      out(i, j) = acc;
    }
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 || bias.cols() != x.cols()) {
    throw std::invalid_argument("layer_norm: gain/bias shape mismatch with last axis");
  }
  if (eps <= 0.0f) {
    throw std::invalid_argument("layer_norm: eps must be positive");
  }
  Tensor out(x.rows(), x.cols());
  const int c = x.cols();
  for (int r = 0; r < x.rows(); ++r) {
    const float* row = x.row_ptr(r);
    double mean = 0.0;
    for (int j = 0; j < c; ++j) {
      mean += row[j];
    }
    mean /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= c;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j) {
      const float xhat = static_cast<float>((row[j] - mean) * inv);
      out(r, j) = xhat * gain[static_cast<std::size_t>(j)] + bias[static_cast<std::size_t>(j)];
    }
  }
  return out;
}

}  // namespace gsr
