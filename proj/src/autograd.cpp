#include "gsr/autograd.hpp"

#include <cmath>
#include <stdexcept>

namespace gsr {

namespace {

// a^T * b for a: MxK, b: MxN -> KxN.
Tensor mat_tn(const Tensor& a, const Tensor& b) {
  Tensor out(a.cols(), b.cols());
  for (int m = 0; m < a.rows(); ++m) {
    const float* arow = a.row_ptr(m);
    const float* brow = b.row_ptr(m);
    for (int k = 0; k < a.cols(); ++k) {
      const float v = arow[k];
      if (v == 0.0f) {
        continue;
      }
      float* orow = out.row_ptr(k);
      for (int n = 0; n < b.cols(); ++n) {
        orow[n] += v * brow[n];
      }
    }
  }
  return out;
}

void accumulate(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] += src[i];
  }
}

}  // namespace

Var Tape::leaf(const Tensor& param) {
  Slot slot;
  slot.external = &param;
  slot.grad = Tensor(param.rows(), param.cols());
  slot.requires_grad = true;
  slots_.push_back(std::move(slot));
  return Var{static_cast<int>(slots_.size()) - 1};
}

Var Tape::constant(Tensor value) {
  Slot slot;
  slot.owned = std::move(value);
  slot.requires_grad = false;
  slots_.push_back(std::move(slot));
  return Var{static_cast<int>(slots_.size()) - 1};
}

const Tensor& Tape::value(Var v) const { return val(v.id); }

const Tensor& Tape::grad(Var v) const {
  const Slot& slot = slots_.at(static_cast<std::size_t>(v.id));
  if (!slot.requires_grad) {
    throw std::logic_error("Tape::grad: value does not require gradients");
  }
  return slot.grad;
}

const Tensor& Tape::val(int id) const {
  const Slot& slot = slots_.at(static_cast<std::size_t>(id));
  return slot.external != nullptr ? *slot.external : slot.owned;
}

Tensor& Tape::grad_of(int id) { return slots_[static_cast<std::size_t>(id)].grad; }

Var Tape::emplace(Tensor value, bool requires_grad) {
  Slot slot;
  slot.owned = std::move(value);
  slot.requires_grad = requires_grad;
  if (requires_grad) {
    slot.grad = Tensor(slot.owned.rows(), slot.owned.cols());
  }
  slots_.push_back(std::move(slot));
  return Var{static_cast<int>(slots_.size()) - 1};
}

void Tape::record(std::function<void()> backward_fn) {
  ops_.push_back(std::move(backward_fn));
}

#define GSR_REQUIRES(a) slots_[static_cast<std::size_t>((a).id)].requires_grad

Var Tape::add(Var a, Var b) {
  const Tensor& x = val(a.id);
  const Tensor& y = val(b.id);
  if (!x.same_shape(y)) {
    throw std::invalid_argument("add: shape mismatch");
  }
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i] + y[i];
  }
  const bool req = GSR_REQUIRES(a) || GSR_REQUIRES(b);
  Var o = emplace(std::move(out), req);
  if (recording_ && req) {
    record([this, a, b, o] {
      const Tensor& g = grad_of(o.id);
      if (GSR_REQUIRES(a)) accumulate(grad_of(a.id), g);
      if (GSR_REQUIRES(b)) accumulate(grad_of(b.id), g);
    });
  }
  return o;
}

Var Tape::sub(Var a, Var b) {
  const Tensor& x = val(a.id);
  const Tensor& y = val(b.id);
  if (!x.same_shape(y)) {
    throw std::invalid_argument("sub: shape mismatch");
  }
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i] - y[i];
  }
  const bool req = GSR_REQUIRES(a) || GSR_REQUIRES(b);
  Var o = emplace(std::move(out), req);
  if (recording_ && req) {
    record([this, a, b, o] {
      const Tensor& g = grad_of(o.id);
      if (GSR_REQUIRES(a)) accumulate(grad_of(a.id), g);
      if (GSR_REQUIRES(b)) {
        Tensor& gb = grad_of(b.id);
        for (std::size_t i = 0; i < gb.size(); ++i) {
          gb[i] -= g[i];
        }
      }
    });
  }
  return o;
}

Var Tape::mul(Var a, Var b) {
  const Tensor& x = val(a.id);
  const Tensor& y = val(b.id);
  if (!x.same_shape(y)) {
    throw std::invalid_argument("mul: shape mismatch");
  }
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i] * y[i];
  }
  const bool req = GSR_REQUIRES(a) || GSR_REQUIRES(b);
  Var o = emplace(std::move(out), req);
  if (recording_ && req) {
    record([this, a, b, o] {
      const Tensor& g = grad_of(o.id);
      const Tensor& x2 = val(a.id);
      const Tensor& y2 = val(b.id);
      if (GSR_REQUIRES(a)) {
        Tensor& ga = grad_of(a.id);
        for (std::size_t i = 0; i < ga.size(); ++i) {
          ga[i] += g[i] * y2[i];
        }
      }
      if (GSR_REQUIRES(b)) {
        Tensor& gb = grad_of(b.id);
        for (std::size_t i = 0; i < gb.size(); ++i) {
          gb[i] += g[i] * x2[i];
        }
      }
    });
  }
  return o;
}

Var Tape::scale(Var a, float c) {
  const Tensor& x = val(a.id);
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i] * c;
  }
  const bool req = GSR_REQUIRES(a);
  Var o = emplace(std::move(out), req);
  if (recording_ && req) {
    record([this, a, o, c] {
      const Tensor& g = grad_of(o.id);
      Tensor& ga = grad_of(a.id);
      for (std::size_t i = 0; i < ga.size(); ++i) {
        ga[i] += g[i] * c;
      }
    });
  }
  return o;
}

Var Tape::add_scalar(Var a, float c) {
  const Tensor& x = val(a.id);
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i] + c;
  }
  const bool req = GSR_REQUIRES(a);
  Var o = emplace(std::move(out), req);
  if (recording_ && req) {
    record([this, a, o] { accumulate(grad_of(a.id), grad_of(o.id)); });
  }
  return o;
}

Var Tape::matmul(Var a, Var b) {
  Tensor out = gsr::matmul(val(a.id), val(b.id));
  const bool req = GSR_REQUIRES(a) || GSR_REQUIRES(b);
  Var o = emplace(std::move(out), req);
  if (recording_ && req) {
    record([this, a, b, o] {
      const Tensor& g = grad_of(o.id);
      if (GSR_REQUIRES(a)) accumulate(grad_of(a.id), gsr::matmul_nt(g, val(b.id)));
      if (GSR_REQUIRES(b)) accumulate(grad_of(b.id), mat_tn(val(a.id), g));
    });
  }
  return o;
}

Var Tape::matmul_nt(Var a, Var b) {
  Tensor out = gsr::matmul_nt(val(a.id), val(b.id));
  const bool req = GSR_REQUIRES(a) || GSR_REQUIRES(b);
  Var o = emplace(std::move(out), req);
  if (recording_ && req) {
    record([this, a, b, o] {
      const Tensor& g = grad_of(o.id);
      if (GSR_REQUIRES(a)) accumulate(grad_of(a.id), gsr::matmul(g, val(b.id)));
      if (GSR_REQUIRES(b)) accumulate(grad_of(b.id), mat_tn(g, val(a.id)));
    });
  }
  return o;
}

Var Tape::add_row(Var m, Var row) {
  const Tensor& x = val(m.id);
  const Tensor& r = val(row.id);
  if (r.rows() != 1 || r.cols() != x.cols()) {
    throw std::invalid_argument("add_row: row must be 1 x cols");
  }
  Tensor out(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) {
      out(i, j) = x(i, j) + r[static_cast<std::size_t>(j)];
    }
  }
  const bool req = GSR_REQUIRES(m) || GSR_REQUIRES(row);
  Var o = emplace(std::move(out), req);
  if (recording_ && req) {
    record([this, m, row, o] {
      const Tensor& g = grad_of(o.id);
      if (GSR_REQUIRES(m)) accumulate(grad_of(m.id), g);
      if (GSR_REQUIRES(row)) {
        Tensor& gr = grad_of(row.id);
        for (int i = 0; i < g.rows(); ++i) {
          for (int j = 0; j < g.cols(); ++j) {
            gr[static_cast<std::size_t>(j)] += g(i, j);
          }
        }
      }
    });
  }
  return o;
}

Var Tape::elu(Var a) {
  Tensor out = gsr::elu(val(a.id));
  const bool req = GSR_REQUIRES(a);
  Var o = emplace(std::move(out), req);
  if (recording_ && req) {
    record([this, a, o] {
      const Tensor& g = grad_of(o.id);
      const Tensor& x = val(a.id);
      Tensor& ga = grad_of(a.id);
      for (std::size_t i = 0; i < ga.size(); ++i) {
        const float d = x[i] > 0.0f
                            ? 1.0f
                            : static_cast<float>(std::exp(static_cast<double>(x[i])));
        ga[i] += g[i] * d;
      }
    });
  }
  return o;
}

Var Tape::elu_plus_one(Var a) {
  Tensor out = gsr::elu_plus_one(val(a.id));
  const bool req = GSR_REQUIRES(a);
  Var o = emplace(std::move(out), req);
  if (recording_ && req) {
    record([this, a, o] {
      const Tensor& g = grad_of(o.id);
      const Tensor& x = val(a.id);
      const Tensor& y = val(o.id);  // exp(x) on the negative branch
      Tensor& ga = grad_of(a.id);
      for (std::size_t i = 0; i < ga.size(); ++i) {
        ga[i] += g[i] * (x[i] > 0.0f ? 1.0f : y[i]);
      }
    });
  }
  return o;
}

Var Tape::sqrt(Var a) {
  const Tensor& x = val(a.id);
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (x[i] < 0.0f) {
      throw std::domain_error("sqrt: negative input");
    }
    out[i] = std::sqrt(x[i]);
  }
  const bool req = GSR_REQUIRES(a);
  Var o = emplace(std::move(out), req);
  if (recording_ && req) {
    record([this, a, o] {
      const Tensor& g = grad_of(o.id);
      const Tensor& y = val(o.id);
      Tensor& ga = grad_of(a.id);
      for (std::size_t i = 0; i < ga.size(); ++i) {
        ga[i] += g[i] * 0.5f / y[i];
      }
    });
  }
  return o;
}

Var Tape::square(Var a) {
  const Tensor& x = val(a.id);
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i] * x[i];
  }
  const bool req = GSR_REQUIRES(a);
  Var o = emplace(std::move(out), req);
  if (recording_ && req) {
    record([this, a, o] {
      const Tensor& g = grad_of(o.id);
      const Tensor& x2 = val(a.id);
      Tensor& ga = grad_of(a.id);
      for (std::size_t i = 0; i < ga.size(); ++i) {
        ga[i] += 2.0f * x2[i] * g[i];
      }
    });
  }
  return o;
}

Var Tape::softplus(Var a) {
  const Tensor& x = val(a.id);
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = static_cast<double>(x[i]);
    out[i] = static_cast<float>(v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)));
  }
  const bool req = GSR_REQUIRES(a);
  Var o = emplace(std::move(out), req);
  if (recording_ && req) {
    record([this, a, o] {
      const Tensor& g = grad_of(o.id);
      const Tensor& x2 = val(a.id);
      Tensor& ga = grad_of(a.id);
      for (std::size_t i = 0; i < ga.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(x2[i])));
        ga[i] += g[i] * static_cast<float>(s);
      }
    });
  }
  return o;
}

Var Tape::gather_rows(Var table, const std::vector<int>& ids) {
  const Tensor& t = val(table.id);
  Tensor out(static_cast<int>(ids.size()), t.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || id >= t.rows()) {
      throw std::out_of_range("gather_rows: id out of range");
    }
    const float* src = t.row_ptr(id);
    float* dst = out.row_ptr(static_cast<int>(i));
    for (int j = 0; j < t.cols(); ++j) {
      dst[j] = src[j];
    }
  }
  const bool req = GSR_REQUIRES(table);
  Var o = emplace(std::move(out), req);
  if (recording_ && req) {
    record([this, table, o, ids] {
      const Tensor& g = grad_of(o.id);
      Tensor& gt = grad_of(table.id);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const float* src = g.row_ptr(static_cast<int>(i));
        float* dst = gt.row_ptr(ids[i]);
        for (int j = 0; j < g.cols(); ++j) {
          dst[j] += src[j];
        }
      }
    });
  }
  return o;
}

Var Tape::softmax_rows(Var logits, const Tensor& allowed) {
  Tensor out = gsr::softmax_rows(val(logits.id), allowed);
  const bool req = GSR_REQUIRES(logits);
  Var o = emplace(std::move(out), req);
  if (recording_ && req) {
    record([this, logits, o] {
      const Tensor& g = grad_of(o.id);
      const Tensor& y = val(o.id);
      Tensor& gx = grad_of(logits.id);
      for (int r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (int c = 0; c < y.cols(); ++c) {
          dot += static_cast<double>(g(r, c)) * y(r, c);
        }
        for (int c = 0; c < y.cols(); ++c) {
          gx(r, c) += y(r, c) * (g(r, c) - static_cast<float>(dot));
        }
      }
    });
  }
  return o;
}

Var Tape::layer_norm(Var x, Var gain, Var bias, float eps) {
  Tensor out = gsr::layer_norm(val(x.id), val(gain.id), val(bias.id), eps);
  const bool req = GSR_REQUIRES(x) || GSR_REQUIRES(gain) || GSR_REQUIRES(bias);
  Var o = emplace(std::move(out), req);
  if (recording_ && req) {
    record([this, x, gain, bias, o, eps] {
      const Tensor& g = grad_of(o.id);
      const Tensor& xin = val(x.id);
      const Tensor& gn = val(gain.id);
      const int cols = xin.cols();
      for (int r = 0; r < xin.rows(); ++r) {
        const float* row = xin.row_ptr(r);
        double mean = 0.0;
        for (int j = 0; j < cols; ++j) {
          mean += row[j];
        }
        mean /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) {
          const double d = row[j] - mean;
          var += d * d;
        }
        var /= cols;
        const double inv = 1.0 / std::sqrt(var + eps);

        double s1 = 0.0, s2 = 0.0;
        for (int j = 0; j < cols; ++j) {
          const double xhat = (row[j] - mean) * inv;
          const double gy = static_cast<double>(g(r, j)) * gn[static_cast<std::size_t>(j)];
          s1 += gy;
          s2 += gy * xhat;
        }
        if (GSR_REQUIRES(x)) {
          Tensor& gx = grad_of(x.id);
          for (int j = 0; j < cols; ++j) {
            const double xhat = (row[j] - mean) * inv;
            const double gy = static_cast<double>(g(r, j)) * gn[static_cast<std::size_t>(j)];
            gx(r, j) += static_cast<float>(inv * (gy - (s1 + xhat * s2) / cols));
          }
        }
        if (GSR_REQUIRES(gain)) {
          Tensor& gg = grad_of(gain.id);
          for (int j = 0; j < cols; ++j) {
            const double xhat = (row[j] - mean) * inv;
            gg[static_cast<std::size_t>(j)] += static_cast<float>(g(r, j) * xhat);
          }
        }
        if (GSR_REQUIRES(bias)) {
          Tensor& gb = grad_of(bias.id);
          for (int j = 0; j < cols; ++j) {
            gb[static_cast<std::size_t>(j)] += g(r, j);
          }
        }
      }
    });
  }
  return o;
}

Var Tape::dropout(Var x, float rate, std::mt19937& rng) {
  if (rate < 0.0f || rate >= 1.0f) {
    throw std::invalid_argument("dropout: rate must be in [0, 1)");
  }
  if (rate == 0.0f) {
    return x;
  }
  const Tensor& xin = val(x.id);
  Tensor mask(xin.rows(), xin.cols());
  const float keep_scale = 1.0f / (1.0f - rate);
  std::uniform_real_distribution<float> unif(0.0f, 1.0f);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = unif(rng) >= rate ? keep_scale : 0.0f;
  }
  Tensor out(xin.rows(), xin.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xin[i] * mask[i];
  }
  const bool req = GSR_REQUIRES(x);
  Var o = emplace(std::move(out), req);
  if (recording_ && req) {
    record([this, x, o, mask = std::move(mask)] {
      const Tensor& g = grad_of(o.id);
      Tensor& gx = grad_of(x.id);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        gx[i] += g[i] * mask[i];
      }
    });
  }
  return o;
}

Var Tape::row_sums(Var a) {
  const Tensor& x = val(a.id);
  Tensor out(x.rows(), 1);
  for (int r = 0; r < x.rows(); ++r) {
    double acc = 0.0;
    const float* row = x.row_ptr(r);
    for (int c = 0; c < x.cols(); ++c) {
      acc += row[c];
    }
    out(r, 0) = static_cast<float>(acc);
  }
  const bool req = GSR_REQUIRES(a);
  Var o = emplace(std::move(out), req);
  if (recording_ && req) {
    record([this, a, o] {
      const Tensor& g = grad_of(o.id);
      Tensor& ga = grad_of(a.id);
      for (int r = 0; r < ga.rows(); ++r) {
        const float gr = g(r, 0);
        float* row = ga.row_ptr(r);
        for (int c = 0; c < ga.cols(); ++c) {
          row[c] += gr;
        }
      }
    });
  }
  return o;
}

Var Tape::sum(Var a) {
  const Tensor& x = val(a.id);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    acc += x[i];
  }
  Tensor out(1, 1);
  out[0] = static_cast<float>(acc);
  const bool req = GSR_REQUIRES(a);
  Var o = emplace(std::move(out), req);
  if (recording_ && req) {
    record([this, a, o] {
      const float g = grad_of(o.id)[0];
      Tensor& ga = grad_of(a.id);
      for (std::size_t i = 0; i < ga.size(); ++i) {
        ga[i] += g;
      }
    });
  }
  return o;
}

Var Tape::sum_squares(Var a, int skip_rows) {
  const Tensor& x = val(a.id);
  double acc = 0.0;
  for (int r = skip_rows; r < x.rows(); ++r) {
    const float* row = x.row_ptr(r);
    for (int c = 0; c < x.cols(); ++c) {
      acc += static_cast<double>(row[c]) * row[c];
    }
  }
  Tensor out(1, 1);
  out[0] = static_cast<float>(acc);
  const bool req = GSR_REQUIRES(a);
  Var o = emplace(std::move(out), req);
  if (recording_ && req) {
    record([this, a, o, skip_rows] {
      const float g = grad_of(o.id)[0];
      const Tensor& x2 = val(a.id);
      Tensor& ga = grad_of(a.id);
      for (int r = skip_rows; r < ga.rows(); ++r) {
        for (int c = 0; c < ga.cols(); ++c) {
          ga(r, c) += 2.0f * x2(r, c) * g;
        }
      }
    });
  }
  return o;
}

Var Tape::mul_mask(Var x, const Tensor& mask) {
  const Tensor& xin = val(x.id);
  if (!xin.same_shape(mask)) {
    throw std::invalid_argument("mul_mask: shape mismatch");
  }
  Tensor out(xin.rows(), xin.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xin[i] * mask[i];
  }
  const bool req = GSR_REQUIRES(x);
  Var o = emplace(std::move(out), req);
  if (recording_ && req) {
    record([this, x, o, mask] {
      const Tensor& g = grad_of(o.id);
      Tensor& gx = grad_of(x.id);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        gx[i] += g[i] * mask[i];
      }
    });
  }
  return o;
}

void Tape::backward(Var loss) {
  if (backward_done_) {
    throw std::logic_error("Tape::backward called twice without a new forward pass");
  }
  if (!recording_) {
    throw std::logic_error("Tape::backward on a non-recording tape");
  }
  const Tensor& l = val(loss.id);
  if (l.rows() != 1 || l.cols() != 1) {
    throw std::invalid_argument("Tape::backward: loss must be a 1x1 scalar");
  }
  if (!slots_[static_cast<std::size_t>(loss.id)].requires_grad) {
    throw std::invalid_argument("Tape::backward: loss does not depend on any leaf");
  }
  backward_done_ = true;
  grad_of(loss.id)[0] = 1.0f;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    (*it)();
  }
}

#undef GSR_REQUIRES

GradCheckReport check_gradients(const std::function<double()>& loss,
                                const std::vector<std::pair<std::string, Tensor*>>& params,
                                const std::vector<const Tensor*>& analytic_grads,
                                double step, double denom_floor) {
  if (params.size() != analytic_grads.size()) {
    throw std::invalid_argument("check_gradients: params/grads size mismatch");
  }
  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p].second;
    const Tensor& g = *analytic_grads[p];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const float saved = t[i];
      t[i] = static_cast<float>(static_cast<double>(saved) + step);
      const double up = loss();
      t[i] = static_cast<float>(static_cast<double>(saved) - step);
      const double down = loss();
      t[i] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double a = static_cast<double>(g[i]);
      const double denom = std::max(std::abs(fd) + std::abs(a), denom_floor);
      const double rel = std::abs(fd - a) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = params[p].first;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace gsr
