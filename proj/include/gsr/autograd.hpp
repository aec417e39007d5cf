#pragma once

#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gsr/tensor.hpp"

namespace gsr {

/// Handle to a value stored on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode gradient tape over the operator set the model needs.
///
/// A forward pass appends operations in execution order; backward() replays
/// them in reverse, accumulating gradients into per-slot buffers. Values are
/// immutable once produced and a pass owns its tape exclusively; parameters
/// registered through leaf() are referenced, not copied, and must outlive
/// the tape.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  /// Registers a trainable parameter. Gradients accumulate for it on backward.
  Var leaf(const Tensor& param);
  /// Registers a non-differentiable input owned by the tape.
  Var constant(Tensor value);

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, float c);
  Var add_scalar(Var a, float c);
  Var matmul(Var a, Var b);
  /// a * b^T
  Var matmul_nt(Var a, Var b);
  /// Broadcasts a 1xC row over every row of m.
  Var add_row(Var m, Var row);
  Var elu(Var a);
  Var elu_plus_one(Var a);
  Var sqrt(Var a);
  Var square(Var a);
  Var softplus(Var a);
  Var gather_rows(Var table, const std::vector<int>& ids);
  Var softmax_rows(Var logits, const Tensor& allowed);
  Var layer_norm(Var x, Var gain, Var bias, float eps);
  /// Inverted dropout; identity when rate == 0. Masks are drawn from `rng`
  /// at record time, so a fixed seed reproduces the pass exactly.
  Var dropout(Var x, float rate, std::mt19937& rng);
  /// RxC -> Rx1 row sums.
  Var row_sums(Var a);
  /// -> 1x1 scalar.
  Var sum(Var a);
  /// Sum of squared entries, optionally skipping the first `skip_rows` rows.
  Var sum_squares(Var a, int skip_rows = 0);
  /// Elementwise product with a constant mask of matching shape.
  Var mul_mask(Var x, const Tensor& mask);

  /// Populates gradients for every value on a path to `loss` (a 1x1 scalar).
  /// Gradients of leaves not on any such path stay exactly zero. Throws if
  /// called twice without a new forward pass.
  void backward(Var loss);

 private:
  struct Slot {
    const Tensor* external = nullptr;
    Tensor owned;
    Tensor grad;
    bool requires_grad = false;
  };

  const Tensor& val(int id) const;
  Tensor& grad_of(int id);
  Var emplace(Tensor value, bool requires_grad);
  void record(std::function<void()> backward_fn);

  std::vector<Slot> slots_;
  std::vector<std::function<void()>> ops_;
  bool recording_ = true;
  bool backward_done_ = false;
};

/// Central finite-difference verification of analytic gradients.
///
/// `loss` re-evaluates the forward pass against the current parameter values
/// and returns the scalar loss; parameters are perturbed in place. Relative
/// error uses max(|analytic| + |fd|, denom_floor) as the denominator so
/// that genuinely zero gradients compare exactly.
struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

GradCheckReport check_gradients(const std::function<double()>& loss,
                                const std::vector<std::pair<std::string, Tensor*>>& params,
                                const std::vector<const Tensor*>& analytic_grads,
                                double step = 1e-3, double denom_floor = 1e-3);

}  // namespace gsr
