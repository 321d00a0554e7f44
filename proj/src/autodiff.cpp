#include "fbkws/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fbkws::ad {

namespace {

std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

[[noreturn]] void shape_error(const char* op, const Var& a, const Var& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              shape_str(a->shape) + " vs " +
                              shape_str(b->shape));
}

Var make_like(const Var& a, bool requires_grad) {
  auto out = std::make_shared<TensorData>();
  out->shape = a->shape;
  out->val.resize(a->numel());
  out->requires_grad = requires_grad;
  return out;
}

Var make_out(std::vector<int> shape, bool requires_grad) {
  auto out = std::make_shared<TensorData>();
  out->shape = std::move(shape);
  out->val.resize(out->numel());
  out->requires_grad = requires_grad;
  // allocate the gradient up front: a node whose output never reaches the
  // loss still has its backward closure run, which reads out->grad
  if (requires_grad) out->ensure_grad();
  return out;
}

bool is_scalar(const Var& a) { return a->numel() == 1; }

}  // namespace

bool TensorData::has_nan() const {
  for (double v : val)
    if (!std::isfinite(v)) return true;
  return false;
}

Var make_param(std::vector<int> shape, std::vector<double> vals,
               std::string name) {
  auto out = std::make_shared<TensorData>();
  out->shape = std::move(shape);
  out->val = std::move(vals);
  out->requires_grad = true;
  out->name = std::move(name);
  if (out->val.size() != out->numel())
    throw std::invalid_argument("param " + out->name + ": value count " +
                                std::to_string(out->val.size()) +
                                " does not match shape " + shape_str(out->shape));
  return out;
}

Var make_const(std::vector<int> shape, std::vector<double> vals) {
  auto out = std::make_shared<TensorData>();
  out->shape = std::move(shape);
  out->val = std::move(vals);
  if (out->val.size() != out->numel())
    throw std::invalid_argument("const: value count mismatch");
  return out;
}

Var make_scalar(double v, bool requires_grad, std::string name) {
  auto out = std::make_shared<TensorData>();
  out->shape = {1};
  out->val = {v};
  out->requires_grad = requires_grad;
  out->name = std::move(name);
  return out;
}

void zero_grads(const std::vector<Var>& params) {
  for (const auto& p : params) p->zero_grad();
}

void Tape::backward(const Var& loss) {
  if (loss->numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss->shape));
  if (!back_.empty() && consumed_ == back_.size())
    throw std::logic_error(
        "backward called twice without re-running the forward pass");
  loss->ensure_grad();
  loss->grad[0] += 1.0;
  for (auto it = back_.rbegin(); it != back_.rend(); ++it) (*it)();
  consumed_ = back_.size();
}

// ---------------------------------------------------------------- elementwise

Var add(Tape& t, const Var& a, const Var& b) {
  if (a->shape != b->shape && !is_scalar(a) && !is_scalar(b))
    shape_error("add", a, b);
  const Var &big = is_scalar(a) && !is_scalar(b) ? b : a;
  Var out = make_like(big, a->requires_grad || b->requires_grad);
  const size_t n = out->numel();
  for (size_t i = 0; i < n; ++i)
    out->val[i] = a->val[is_scalar(a) ? 0 : i] + b->val[is_scalar(b) ? 0 : i];
  if (out->requires_grad)
    t.record([a, b, out, n] {
      if (a->requires_grad) {
        a->ensure_grad();
        for (size_t i = 0; i < n; ++i) a->grad[is_scalar(a) ? 0 : i] += out->grad[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (size_t i = 0; i < n; ++i) b->grad[is_scalar(b) ? 0 : i] += out->grad[i];
      }
    });
  return out;
}

Var neg(Tape& t, const Var& a) { return mul_scalar(t, a, -1.0); }

Var sub(Tape& t, const Var& a, const Var& b) {
  return add(t, a, neg(t, b));
}

Var mul(Tape& t, const Var& a, const Var& b) {
  if (a->shape != b->shape && !is_scalar(a) && !is_scalar(b))
    shape_error("mul", a, b);
  const Var &big = is_scalar(a) && !is_scalar(b) ? b : a;
  Var out = make_like(big, a->requires_grad || b->requires_grad);
  const size_t n = out->numel();
  for (size_t i = 0; i < n; ++i)
    out->val[i] = a->val[is_scalar(a) ? 0 : i] * b->val[is_scalar(b) ? 0 : i];
  if (out->requires_grad)
    t.record([a, b, out, n] {
      if (a->requires_grad) {
        a->ensure_grad();
        for (size_t i = 0; i < n; ++i)
          a->grad[is_scalar(a) ? 0 : i] += out->grad[i] * b->val[is_scalar(b) ? 0 : i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (size_t i = 0; i < n; ++i)
          b->grad[is_scalar(b) ? 0 : i] += out->grad[i] * a->val[is_scalar(a) ? 0 : i];
      }
    });
  return out;
}

Var add_scalar(Tape& t, const Var& a, double c) {
  Var out = make_like(a, a->requires_grad);
  for (size_t i = 0; i < out->numel(); ++i) out->val[i] = a->val[i] + c;
  if (out->requires_grad)
    t.record([a, out] {
      a->ensure_grad();
      for (size_t i = 0; i < a->val.size(); ++i) a->grad[i] += out->grad[i];
    });
  return out;
}

Var mul_scalar(Tape& t, const Var& a, double c) {
  Var out = make_like(a, a->requires_grad);
  for (size_t i = 0; i < out->numel(); ++i) out->val[i] = a->val[i] * c;
  if (out->requires_grad)
    t.record([a, out, c] {
      a->ensure_grad();
      for (size_t i = 0; i < a->val.size(); ++i) a->grad[i] += c * out->grad[i];
    });
  return out;
}

Var div_by(Tape& t, const Var& a, const Var& s) {
  if (!is_scalar(s)) throw std::invalid_argument("div_by: divisor must be scalar");
  Var out = make_like(a, a->requires_grad || s->requires_grad);
  const double inv = 1.0 / s->val[0];
  for (size_t i = 0; i < out->numel(); ++i) out->val[i] = a->val[i] * inv;
  if (out->requires_grad)
    t.record([a, s, out, inv] {
      if (a->requires_grad) {
        a->ensure_grad();
        for (size_t i = 0; i < a->val.size(); ++i) a->grad[i] += out->grad[i] * inv;
      }
      if (s->requires_grad) {
        s->ensure_grad();
        double g = 0.0;
        for (size_t i = 0; i < a->val.size(); ++i)
          g -= out->grad[i] * a->val[i] * inv * inv;
        s->grad[0] += g;
      }
    });
  return out;
}

Var relu(Tape& t, const Var& a) {
  Var out = make_like(a, a->requires_grad);
  for (size_t i = 0; i < out->numel(); ++i)
    out->val[i] = a->val[i] > 0.0 ? a->val[i] : 0.0;
  if (out->requires_grad)
    t.record([a, out] {
      a->ensure_grad();
      // subgradient at exactly 0 is 0
      for (size_t i = 0; i < a->val.size(); ++i)
        if (a->val[i] > 0.0) a->grad[i] += out->grad[i];
    });
  return out;
}

Var clamp_min(Tape& t, const Var& a, double s) {
  Var out = make_like(a, a->requires_grad);
  for (size_t i = 0; i < out->numel(); ++i)
    out->val[i] = a->val[i] < s ? s : a->val[i];
  if (out->requires_grad)
    t.record([a, out, s] {
      a->ensure_grad();
      // tie x == s routes the gradient to x
      for (size_t i = 0; i < a->val.size(); ++i)
        if (a->val[i] >= s) a->grad[i] += out->grad[i];
    });
  return out;
}

Var vlog(Tape& t, const Var& a) {
  Var out = make_like(a, a->requires_grad);
  for (size_t i = 0; i < out->numel(); ++i) out->val[i] = std::log(a->val[i]);
  if (out->requires_grad)
    t.record([a, out] {
      a->ensure_grad();
      for (size_t i = 0; i < a->val.size(); ++i)
        a->grad[i] += out->grad[i] / a->val[i];
    });
  return out;
}

Var vexp(Tape& t, const Var& a) {
  Var out = make_like(a, a->requires_grad);
  for (size_t i = 0; i < out->numel(); ++i) out->val[i] = std::exp(a->val[i]);
  if (out->requires_grad)
    t.record([a, out] {
      a->ensure_grad();
      for (size_t i = 0; i < a->val.size(); ++i)
        a->grad[i] += out->grad[i] * out->val[i];
    });
  return out;
}

Var vcos(Tape& t, const Var& a) {
  Var out = make_like(a, a->requires_grad);
  for (size_t i = 0; i < out->numel(); ++i) out->val[i] = std::cos(a->val[i]);
  if (out->requires_grad)
    t.record([a, out] {
      a->ensure_grad();
      for (size_t i = 0; i < a->val.size(); ++i)
        a->grad[i] -= out->grad[i] * std::sin(a->val[i]);
    });
  return out;
}

Var square(Tape& t, const Var& a) {
  Var out = make_like(a, a->requires_grad);
  for (size_t i = 0; i < out->numel(); ++i) out->val[i] = a->val[i] * a->val[i];
  if (out->requires_grad)
    t.record([a, out] {
      a->ensure_grad();
      for (size_t i = 0; i < a->val.size(); ++i)
        a->grad[i] += 2.0 * a->val[i] * out->grad[i];
    });
  return out;
}

Var pow_vs(Tape& t, const Var& base, const Var& n) {
  if (!is_scalar(n)) throw std::invalid_argument("pow_vs: exponent must be scalar");
  Var out = make_like(base, base->requires_grad || n->requires_grad);
  const double e = n->val[0];
  for (size_t i = 0; i < out->numel(); ++i) {
    if (base->val[i] <= 0.0)
      throw std::domain_error("pow_vs: base entries must be positive");
    out->val[i] = std::pow(base->val[i], e);
  }
  if (out->requires_grad)
    t.record([base, n, out, e] {
      if (base->requires_grad) {
        base->ensure_grad();
        for (size_t i = 0; i < base->val.size(); ++i)
          base->grad[i] += out->grad[i] * e * out->val[i] / base->val[i];
      }
      if (n->requires_grad) {
        n->ensure_grad();
        double g = 0.0;
        for (size_t i = 0; i < base->val.size(); ++i)
          g += out->grad[i] * out->val[i] * std::log(base->val[i]);
        n->grad[0] += g;
      }
    });
  return out;
}

// ------------------------------------------------------------ shape / reduce

Var slice1d(Tape& t, const Var& a, int start, int len) {
  if (start < 0 || len < 0 || size_t(start + len) > a->numel())
    throw std::out_of_range("slice1d: range out of bounds");
  Var out = make_out({len}, a->requires_grad);
  std::copy(a->val.begin() + start, a->val.begin() + start + len,
            out->val.begin());
  if (out->requires_grad)
    t.record([a, out, start, len] {
      a->ensure_grad();
      for (int i = 0; i < len; ++i) a->grad[start + i] += out->grad[i];
    });
  return out;
}

Var concat1d(Tape& t, const std::vector<Var>& parts) {
  int total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    total += int(p->numel());
    rg = rg || p->requires_grad;
  }
  Var out = make_out({total}, rg);
  size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->val.begin(), p->val.end(), out->val.begin() + off);
    off += p->numel();
  }
  if (rg)
    t.record([parts, out] {
      size_t off = 0;
      for (const auto& p : parts) {
        if (p->requires_grad) {
          p->ensure_grad();
          for (size_t i = 0; i < p->numel(); ++i) p->grad[i] += out->grad[off + i];
        }
        off += p->numel();
      }
    });
  return out;
}

Var select(Tape& t, const Var& a, int index) {
  if (index < 0 || size_t(index) >= a->numel())
    throw std::out_of_range("select: index out of bounds");
  Var out = make_out({1}, a->requires_grad);
  out->val[0] = a->val[index];
  if (out->requires_grad)
    t.record([a, out, index] {
      a->ensure_grad();
      a->grad[index] += out->grad[0];
    });
  return out;
}

Var sum_all(Tape& t, const Var& a) {
  Var out = make_out({1}, a->requires_grad);
  double s = 0.0;
  for (double v : a->val) s += v;
  out->val[0] = s;
  if (out->requires_grad)
    t.record([a, out] {
      a->ensure_grad();
      for (size_t i = 0; i < a->val.size(); ++i) a->grad[i] += out->grad[0];
    });
  return out;
}

Var mean_all(Tape& t, const Var& a) {
  return mul_scalar(t, sum_all(t, a), 1.0 / double(a->numel()));
}

Var reduce_max_abs(Tape& t, const Var& a) {
  size_t am = 0;
  double best = std::abs(a->val[0]);
  for (size_t i = 1; i < a->val.size(); ++i)
    if (std::abs(a->val[i]) > best) {
      best = std::abs(a->val[i]);
      am = i;
    }
  Var out = make_out({1}, a->requires_grad);
  out->val[0] = best;
  if (out->requires_grad)
    t.record([a, out, am] {
      a->ensure_grad();
      double sign = a->val[am] > 0.0 ? 1.0 : (a->val[am] < 0.0 ? -1.0 : 0.0);
      a->grad[am] += sign * out->grad[0];
    });
  return out;
}

Var reshape(Tape& t, const Var& a, std::vector<int> shape) {
  Var out = make_out(std::move(shape), a->requires_grad);
  if (out->numel() != a->numel())
    throw std::invalid_argument("reshape: element count mismatch " +
                                shape_str(a->shape) + " -> " +
                                shape_str(out->shape));
  out->val = a->val;
  if (out->requires_grad)
    t.record([a, out] {
      a->ensure_grad();
      for (size_t i = 0; i < a->val.size(); ++i) a->grad[i] += out->grad[i];
    });
  return out;
}

// ---------------------------------------------------------- linalg / conv

Var matmul(Tape& t, const Var& a, const Var& b) {
  if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
    shape_error("matmul", a, b);
  const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
  Var out = make_out({m, n}, a->requires_grad || b->requires_grad);
  const double* A = a->val.data();
  const double* B = b->val.data();
  double* C = out->val.data();
  std::fill(out->val.begin(), out->val.end(), 0.0);
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const double av = A[size_t(i) * k + p];
      const double* brow = B + size_t(p) * n;
      double* crow = C + size_t(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  if (out->requires_grad)
    t.record([a, b, out, m, k, n] {
      const double* G = out->grad.data();
      if (a->requires_grad) {
        a->ensure_grad();  // dA = G * B^T
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            const double* grow = G + size_t(i) * n;
            const double* brow = b->val.data() + size_t(p) * n;
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
            a->grad[size_t(i) * k + p] += s;
          }
      }
      if (b->requires_grad) {
        b->ensure_grad();  // dB = A^T * G
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            const double av = a->val[size_t(i) * k + p];
            const double* grow = G + size_t(i) * n;
            double* brow = b->grad.data() + size_t(p) * n;
            for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
      }
    });
  return out;
}

Var add_rowvec(Tape& t, const Var& m, const Var& v) {
  if (m->shape.size() != 2 || int(v->numel()) != m->shape[1])
    shape_error("add_rowvec", m, v);
  const int r = m->shape[0], c = m->shape[1];
  Var out = make_out({r, c}, m->requires_grad || v->requires_grad);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out->val[size_t(i) * c + j] = m->val[size_t(i) * c + j] + v->val[j];
  if (out->requires_grad)
    t.record([m, v, out, r, c] {
      if (m->requires_grad) {
        m->ensure_grad();
        for (size_t i = 0; i < m->val.size(); ++i) m->grad[i] += out->grad[i];
      }
      if (v->requires_grad) {
        v->ensure_grad();
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) v->grad[j] += out->grad[size_t(i) * c + j];
      }
    });
  return out;
}

Var conv1d(Tape& t, const Var& x, const Var& k, ConvMode mode) {
  if (x->shape.size() != 1 || k->shape.size() != 1)
    throw std::invalid_argument("conv1d expects 1-D operands");
  const int L = int(x->numel()), Lk = int(k->numel());
  if (L < Lk) throw std::invalid_argument("conv1d: signal shorter than kernel");
  // full convolution z[n] = sum_j x[j] k[n-j]
  const int out_len = mode == ConvMode::kValid ? L - Lk + 1 : L;
  const int off = mode == ConvMode::kValid ? Lk - 1 : (Lk - 1) / 2;
  Var out = make_out({out_len}, x->requires_grad || k->requires_grad);
  for (int i = 0; i < out_len; ++i) {
    const int n = i + off;
    double s = 0.0;
    const int jlo = std::max(0, n - L + 1), jhi = std::min(Lk - 1, n);
    for (int j = jlo; j <= jhi; ++j) s += k->val[j] * x->val[n - j];
    out->val[i] = s;
  }
  if (out->requires_grad)
    t.record([x, k, out, out_len, off, L, Lk] {
      for (int i = 0; i < out_len; ++i) {
        const double g = out->grad[i];
        if (g == 0.0) continue;
        const int n = i + off;
        const int jlo = std::max(0, n - L + 1), jhi = std::min(Lk - 1, n);
        if (k->requires_grad) {
          k->ensure_grad();
          for (int j = jlo; j <= jhi; ++j) k->grad[j] += g * x->val[n - j];
        }
        if (x->requires_grad) {
          x->ensure_grad();
          for (int j = jlo; j <= jhi; ++j) x->grad[n - j] += g * k->val[j];
        }
      }
    });
  return out;
}

Var conv1d_bank(Tape& t, const Var& x, const std::vector<Var>& kernels) {
  if (x->shape.size() != 2)
    throw std::invalid_argument("conv1d_bank expects x of shape (B,L)");
  const int B = x->shape[0], L = x->shape[1];
  const int K = int(kernels.size());
  bool rg = x->requires_grad;
  for (const auto& k : kernels) rg = rg || k->requires_grad;
  Var out = make_out({B, K, L}, rg);
  for (int k = 0; k < K; ++k) {
    const int Lk = int(kernels[k]->numel());
    const int off = (Lk - 1) / 2;
    const double* g = kernels[k]->val.data();
    for (int b = 0; b < B; ++b) {
      const double* xs = x->val.data() + size_t(b) * L;
      double* ys = out->val.data() + (size_t(b) * K + k) * L;
      for (int i = 0; i < L; ++i) {
        const int n = i + off;
        const int jlo = std::max(0, n - L + 1), jhi = std::min(Lk - 1, n);
        double s = 0.0;
        for (int j = jlo; j <= jhi; ++j) s += g[j] * xs[n - j];
        ys[i] = s;
      }
    }
  }
  if (rg)
    t.record([x, kernels, out, B, L, K] {
      for (int k = 0; k < K; ++k) {
        const auto& ker = kernels[k];
        const int Lk = int(ker->numel());
        const int off = (Lk - 1) / 2;
        if (ker->requires_grad) {
          ker->ensure_grad();
          for (int b = 0; b < B; ++b) {
            const double* xs = x->val.data() + size_t(b) * L;
            const double* gy = out->grad.data() + (size_t(b) * K + k) * L;
            for (int j = 0; j < Lk; ++j) {
              // y[i] touches kernel j when x index i+off-j is valid
              const int ilo = std::max(0, j - off);
              const int ihi = std::min(L - 1, L - 1 + j - off);
              double s = 0.0;
              for (int i = ilo; i <= ihi; ++i) s += gy[i] * xs[i + off - j];
              ker->grad[j] += s;
            }
          }
        }
        if (x->requires_grad) {
          x->ensure_grad();
          for (int b = 0; b < B; ++b) {
            double* gx = x->grad.data() + size_t(b) * L;
            const double* gy = out->grad.data() + (size_t(b) * K + k) * L;
            for (int i = 0; i < L; ++i) {
              const double g = gy[i];
              if (g == 0.0) continue;
              const int n = i + off;
              const int jlo = std::max(0, n - L + 1), jhi = std::min(Lk - 1, n);
              for (int j = jlo; j <= jhi; ++j) gx[n - j] += g * ker->val[j];
            }
          }
        }
      }
    });
  return out;
}

Var conv2d(Tape& t, const Var& x, const Var& w, int dilation) {
  if (x->shape.size() != 4 || w->shape.size() != 4 || x->shape[1] != w->shape[1])
    shape_error("conv2d", x, w);
  const int B = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  const int OC = w->shape[0], kh = w->shape[2], kw = w->shape[3];
  const int d = dilation;
  const int ph = ((kh - 1) * d) / 2, pw = ((kw - 1) * d) / 2;
  Var out = make_out({B, OC, H, W}, x->requires_grad || w->requires_grad);
  std::fill(out->val.begin(), out->val.end(), 0.0);
  auto xat = [&](int b, int c) {
    return x->val.data() + ((size_t(b) * C + c) * H) * W;
  };
  auto yat = [&](int b, int oc, double* base) {
    return base + ((size_t(b) * OC + oc) * H) * W;
  };
  // Row-outer order: each output row stays hot in L1 while every
  // (channel, tap) contribution is accumulated into it, instead of
  // re-streaming whole planes from L2 once per kernel tap.
  for (int b = 0; b < B; ++b)
    for (int oc = 0; oc < OC; ++oc) {
      double* y = yat(b, oc, out->val.data());
      const double* woc = w->val.data() + (size_t(oc) * C) * kh * kw;
      for (int i = 0; i < H; ++i) {
        double* __restrict yr = y + size_t(i) * W;
        for (int c = 0; c < C; ++c) {
          const double* xs = xat(b, c);
          const double* wk = woc + size_t(c) * kh * kw;
          for (int u = 0; u < kh; ++u) {
            const int ii = i + u * d - ph;
            if (ii < 0 || ii >= H) continue;
            const double* xrow = xs + size_t(ii) * W;
            for (int v = 0; v < kw; ++v) {
              const double wv = wk[size_t(u) * kw + v];
              if (wv == 0.0) continue;
              const int dj = v * d - pw;
              const int jlo = std::max(0, -dj),
                        jhi = std::min(W - 1, W - 1 - dj);
              const double* __restrict xr = xrow + dj;
              for (int j = jlo; j <= jhi; ++j) yr[j] += wv * xr[j];
            }
          }
        }
      }
    }
  if (out->requires_grad)
    t.record([x, w, out, B, C, H, W, OC, kh, kw, d, ph, pw] {
      if (w->requires_grad) {
        w->ensure_grad();
        // Batch-outer order keeps each activation/grad plane pair resident in
        // cache while all kernel taps are accumulated in a single pass.
        std::vector<double> wacc(w->val.size(), 0.0);
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            const double* xs = x->val.data() + ((size_t(b) * C + c) * H) * W;
            for (int oc = 0; oc < OC; ++oc) {
              const double* gy =
                  out->grad.data() + ((size_t(b) * OC + oc) * H) * W;
              double* wa = wacc.data() + ((size_t(oc) * C + c) * kh) * kw;
              for (int u = 0; u < kh; ++u)
                for (int v = 0; v < kw; ++v) {
                  const int di = u * d - ph, dj = v * d - pw;
                  const int ilo = std::max(0, -di),
                            ihi = std::min(H - 1, H - 1 - di);
                  const int jlo = std::max(0, -dj),
                            jhi = std::min(W - 1, W - 1 - dj);
                  double s = 0.0;
                  for (int i = ilo; i <= ihi; ++i) {
                    const double* __restrict xr = xs + size_t(i + di) * W + dj;
                    const double* __restrict gr = gy + size_t(i) * W;
                    // four-lane accumulation breaks the dependence chain so
                    // the reduction vectorizes without reassociation flags
                    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
                    int j = jlo;
                    for (; j + 3 <= jhi; j += 4) {
                      s0 += gr[j] * xr[j];
                      s1 += gr[j + 1] * xr[j + 1];
                      s2 += gr[j + 2] * xr[j + 2];
                      s3 += gr[j + 3] * xr[j + 3];
                    }
                    for (; j <= jhi; ++j) s0 += gr[j] * xr[j];
                    s += ((s0 + s1) + (s2 + s3));
                  }
                  wa[size_t(u) * kw + v] += s;
                }
            }
          }
        for (size_t i = 0; i < wacc.size(); ++i) w->grad[i] += wacc[i];
      }
      if (x->requires_grad) {
        x->ensure_grad();
        // Row-outer gather form of the scatter gx[i+di][j+dj] += wv*gy[i][j]:
        // each input-gradient row stays hot in L1 across all taps.
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            double* gx = x->grad.data() + ((size_t(b) * C + c) * H) * W;
            for (int ix = 0; ix < H; ++ix) {
              double* __restrict gxr = gx + size_t(ix) * W;
              for (int oc = 0; oc < OC; ++oc) {
                const double* gy =
                    out->grad.data() + ((size_t(b) * OC + oc) * H) * W;
                const double* wk =
                    w->val.data() + ((size_t(oc) * C + c) * kh) * kw;
                for (int u = 0; u < kh; ++u) {
                  const int iy = ix - (u * d - ph);
                  if (iy < 0 || iy >= H) continue;
                  const double* gyrow = gy + size_t(iy) * W;
                  for (int v = 0; v < kw; ++v) {
                    const double wv = wk[size_t(u) * kw + v];
                    if (wv == 0.0) continue;
                    const int dj = v * d - pw;
                    const int jlo = std::max(0, dj),
                              jhi = std::min(W - 1, W - 1 + dj);
                    const double* __restrict gr = gyrow - dj;
                    for (int j = jlo; j <= jhi; ++j) gxr[j] += wv * gr[j];
                  }
                }
              }
            }
          }
      }
    });
  return out;
}

Var mean_hw(Tape& t, const Var& x) {
  if (x->shape.size() != 4)
    throw std::invalid_argument("mean_hw expects (B,C,H,W)");
  const int B = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  const double inv = 1.0 / (double(H) * W);
  Var out = make_out({B, C}, x->requires_grad);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const double* xs = x->val.data() + ((size_t(b) * C + c) * H) * W;
      double s = 0.0;
      for (int i = 0; i < H * W; ++i) s += xs[i];
      out->val[size_t(b) * C + c] = s * inv;
    }
  if (out->requires_grad)
    t.record([x, out, B, C, H, W, inv] {
      x->ensure_grad();
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const double g = out->grad[size_t(b) * C + c] * inv;
          double* gx = x->grad.data() + ((size_t(b) * C + c) * H) * W;
          for (int i = 0; i < H * W; ++i) gx[i] += g;
        }
    });
  return out;
}

Var stack_maps(Tape& t, const std::vector<Var>& maps) {
  if (maps.empty()) throw std::invalid_argument("stack_maps: no inputs");
  for (const auto& m : maps)
    if (m->shape != maps[0]->shape || m->shape.size() != 3)
      throw std::invalid_argument("stack_maps: inputs must share shape (B,T,K)");
  const int B = maps[0]->shape[0], T = maps[0]->shape[1], K = maps[0]->shape[2];
  const int n = int(maps.size());
  bool rg = false;
  for (const auto& m : maps) rg = rg || m->requires_grad;
  Var out = make_out({B, n, T, K}, rg);
  const size_t plane = size_t(T) * K;
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < n; ++c)
      std::copy(maps[c]->val.begin() + size_t(b) * plane,
                maps[c]->val.begin() + size_t(b + 1) * plane,
                out->val.begin() + (size_t(b) * n + c) * plane);
  if (rg)
    t.record([maps, out, B, n, plane] {
      for (int c = 0; c < n; ++c) {
        if (!maps[c]->requires_grad) continue;
        maps[c]->ensure_grad();
        for (int b = 0; b < B; ++b)
          for (size_t i = 0; i < plane; ++i)
            maps[c]->grad[size_t(b) * plane + i] +=
                out->grad[(size_t(b) * n + c) * plane + i];
      }
    });
  return out;
}

// ----------------------------------------------------------- normalization

void BatchNormState::begin_recalibration() {
  accumulating = true;
  acc_sum.assign(size_t(channels), 0.0);
  acc_sumsq.assign(size_t(channels), 0.0);
  acc_count = 0.0;
}

void BatchNormState::finalize_recalibration() {
  if (!accumulating)
    throw std::logic_error("finalize_recalibration without begin");
  accumulating = false;
  if (acc_count <= 0.0) return;  // nothing seen; keep previous stats
  running_mean.assign(size_t(channels), 0.0);
  running_var.assign(size_t(channels), 0.0);
  for (int c = 0; c < channels; ++c) {
    const double m = acc_sum[c] / acc_count;
    running_mean[c] = m;
    running_var[c] = std::max(0.0, acc_sumsq[c] / acc_count - m * m);
  }
  initialized = true;
}

Var batchnorm(Tape& t, const Var& x, const Var& gamma, const Var& beta,
              BatchNormState& state, BNLayout layout, bool train) {
  const int C = state.channels;
  if (int(gamma->numel()) != C || int(beta->numel()) != C)
    throw std::invalid_argument("batchnorm: gamma/beta size mismatch");
  int outer, inner;
  if (layout == BNLayout::kChannelsLast) {
    if (x->shape.back() != C)
      throw std::invalid_argument("batchnorm: last dim != channels");
    outer = int(x->numel()) / C;
    inner = 1;
  } else {
    if (x->shape.size() != 4 || x->shape[1] != C)
      throw std::invalid_argument("batchnorm: NCHW channel dim != channels");
    outer = x->shape[0];
    inner = x->shape[2] * x->shape[3];
  }
  const size_t N = size_t(outer) * inner;
  if (state.running_mean.empty()) {
    state.running_mean.assign(C, 0.0);
    state.running_var.assign(C, 1.0);
  }
  if (!train && !state.initialized)
    throw std::logic_error("batchnorm eval requested before any train step");

  auto idx = [layout, C, inner](int o, int c, int i) {
    return layout == BNLayout::kChannelsLast
               ? size_t(o) * C + c
               : (size_t(o) * C + c) * inner + i;
  };

  auto mean_v = std::make_shared<std::vector<double>>(C);
  auto var_v = std::make_shared<std::vector<double>>(C);
  if (train) {
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int o = 0; o < outer; ++o)
        for (int i = 0; i < inner; ++i) s += x->val[idx(o, c, i)];
      const double m = s / double(N);
      double v = 0.0;
      for (int o = 0; o < outer; ++o)
        for (int i = 0; i < inner; ++i) {
          const double dd = x->val[idx(o, c, i)] - m;
          v += dd * dd;
        }
      (*mean_v)[c] = m;
      (*var_v)[c] = v / double(N);
      if (state.accumulating) {
        state.acc_sum[c] += s;
        state.acc_sumsq[c] += ((*var_v)[c] + m * m) * double(N);
      }
      state.running_mean[c] = state.initialized
                                  ? state.momentum * state.running_mean[c] +
                                        (1.0 - state.momentum) * m
                                  : m;
      state.running_var[c] = state.initialized
                                 ? state.momentum * state.running_var[c] +
                                       (1.0 - state.momentum) * (*var_v)[c]
                                 : (*var_v)[c];
    }
    state.initialized = true;
    if (state.accumulating) state.acc_count += double(N);
  } else {
    *mean_v = state.running_mean;
    *var_v = state.running_var;
  }

  Var out = make_like(
      x, x->requires_grad || gamma->requires_grad || beta->requires_grad);
  auto xhat = std::make_shared<std::vector<double>>(x->numel());
  const double eps = state.eps;
  for (int c = 0; c < C; ++c) {
    const double inv_std = 1.0 / std::sqrt((*var_v)[c] + eps);
    const double m = (*mean_v)[c];
    const double g = gamma->val[c], bta = beta->val[c];
    for (int o = 0; o < outer; ++o)
      for (int i = 0; i < inner; ++i) {
        const size_t id = idx(o, c, i);
        const double xh = (x->val[id] - m) * inv_std;
        (*xhat)[id] = xh;
        out->val[id] = g * xh + bta;
      }
  }
  if (out->requires_grad)
    t.record([x, gamma, beta, out, mean_v, var_v, xhat, eps, outer, inner, C,
              N, idx, train] {
      for (int c = 0; c < C; ++c) {
        const double inv_std = 1.0 / std::sqrt((*var_v)[c] + eps);
        const double g = gamma->val[c];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int o = 0; o < outer; ++o)
          for (int i = 0; i < inner; ++i) {
            const size_t id = idx(o, c, i);
            sum_dy += out->grad[id];
            sum_dy_xhat += out->grad[id] * (*xhat)[id];
          }
        if (gamma->requires_grad) {
          gamma->ensure_grad();
          gamma->grad[c] += sum_dy_xhat;
        }
        if (beta->requires_grad) {
          beta->ensure_grad();
          beta->grad[c] += sum_dy;
        }
        if (x->requires_grad) {
          x->ensure_grad();
          for (int o = 0; o < outer; ++o)
            for (int i = 0; i < inner; ++i) {
              const size_t id = idx(o, c, i);
              if (train) {
                // batch statistics participate in the graph
                x->grad[id] += g * inv_std *
                               (out->grad[id] - sum_dy / double(N) -
                                (*xhat)[id] * sum_dy_xhat / double(N));
              } else {
                x->grad[id] += g * inv_std * out->grad[id];
              }
            }
        }
      }
    });
  return out;
}

Var softmax_crossentropy(Tape& t, const Var& logits,
                         const std::vector<int>& labels) {
  if (logits->shape.size() != 2 || size_t(logits->shape[0]) != labels.size())
    throw std::invalid_argument("softmax_crossentropy: logits (B,C) with B labels");
  const int B = logits->shape[0], C = logits->shape[1];
  auto probs = std::make_shared<std::vector<double>>(logits->numel());
  double loss = 0.0;
  for (int b = 0; b < B; ++b) {
    const double* z = logits->val.data() + size_t(b) * C;
    double zmax = z[0];
    for (int c = 1; c < C; ++c) zmax = std::max(zmax, z[c]);
    double denom = 0.0;
    for (int c = 0; c < C; ++c) denom += std::exp(z[c] - zmax);
    const double logden = std::log(denom) + zmax;
    for (int c = 0; c < C; ++c)
      (*probs)[size_t(b) * C + c] = std::exp(z[c] - logden);
    if (labels[b] < 0 || labels[b] >= C)
      throw std::out_of_range("label out of range");
    loss -= z[labels[b]] - logden;
  }
  Var out = make_out({1}, logits->requires_grad);
  out->val[0] = loss / double(B);
  if (out->requires_grad)
    t.record([logits, out, probs, labels, B, C] {
      logits->ensure_grad();
      const double g = out->grad[0] / double(B);
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
          logits->grad[size_t(b) * C + c] +=
              g * ((*probs)[size_t(b) * C + c] - (labels[b] == c ? 1.0 : 0.0));
    });
  return out;
}

Var cochlea_energy(Tape& t, const Var& x, int frame_length, int hop,
                   CochleaMode mode) {
  if (x->shape.size() != 3)
    throw std::invalid_argument("cochlea_energy expects (B,K,L)");
  const int B = x->shape[0], K = x->shape[1], L = x->shape[2];
  const int M = frame_length;
  if (L < M) throw std::invalid_argument("cochlea_energy: signal shorter than M");
  const int T = (L - M) / hop + 1;
  std::vector<double> win(M, 1.0);
  if (mode == CochleaMode::kParsevalHann)
    for (int m = 0; m < M; ++m)
      win[m] = 0.5 - 0.5 * std::cos(2.0 * 3.14159265358979323846 * m / M);
  Var out = make_out({B, T, K}, x->requires_grad);
  auto argmax = std::make_shared<std::vector<int>>();
  if (mode == CochleaMode::kMaxPool) argmax->resize(size_t(B) * T * K);
  for (int b = 0; b < B; ++b)
    for (int k = 0; k < K; ++k) {
      const double* xs = x->val.data() + (size_t(b) * K + k) * L;
      for (int tt = 0; tt < T; ++tt) {
        const int s0 = tt * hop;
        double e;
        if (mode == CochleaMode::kMaxPool) {
          int am = s0;
          double best = std::abs(xs[s0]);
          for (int m = 1; m < M; ++m)
            if (std::abs(xs[s0 + m]) > best) {
              best = std::abs(xs[s0 + m]);
              am = s0 + m;
            }
          (*argmax)[(size_t(b) * T + tt) * K + k] = am;
          e = double(M) * best * best;
        } else {
          double s = 0.0;
          for (int m = 0; m < M; ++m) {
            const double wv = win[m] * xs[s0 + m];
            s += wv * wv;
          }
          e = double(M) * s;
        }
        out->val[(size_t(b) * T + tt) * K + k] = e;
      }
    }
  if (out->requires_grad)
    t.record([x, out, argmax, win, mode, B, K, L, T, M, hop] {
      x->ensure_grad();
      for (int b = 0; b < B; ++b)
        for (int k = 0; k < K; ++k) {
          const double* xs = x->val.data() + (size_t(b) * K + k) * L;
          double* gx = x->grad.data() + (size_t(b) * K + k) * L;
          for (int tt = 0; tt < T; ++tt) {
            const double g = out->grad[(size_t(b) * T + tt) * K + k];
            if (g == 0.0) continue;
            const int s0 = tt * hop;
            if (mode == CochleaMode::kMaxPool) {
              const int am = (*argmax)[(size_t(b) * T + tt) * K + k];
              gx[am] += g * 2.0 * double(M) * xs[am];
            } else {
              for (int m = 0; m < M; ++m)
                gx[s0 + m] +=
                    g * 2.0 * double(M) * win[m] * win[m] * xs[s0 + m];
            }
          }
        }
    });
  return out;
}

// ------------------------------------------------------------- checkpoints

namespace {
constexpr char kMagic[4] = {'F', 'B', 'K', 'W'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ofstream& out, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)(v >> 8 & 0xff),
                        (unsigned char)(v >> 16 & 0xff),
                        (unsigned char)(v >> 24 & 0xff)};
  out.write((const char*)b, 4);
}

uint32_t get_u32(std::ifstream& in) {
  unsigned char b[4];
  in.read((char*)b, 4);
  if (!in) throw std::runtime_error("checkpoint truncated");
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
         uint32_t(b[3]) << 24;
}
}  // namespace

void save_checkpoint(const std::string& path, const std::vector<Var>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, uint32_t(params.size()));
  for (const auto& p : params) {
    put_u32(out, uint32_t(p->name.size()));
    out.write(p->name.data(), std::streamsize(p->name.size()));
    put_u32(out, uint32_t(p->shape.size()));
    for (int d : p->shape) put_u32(out, uint32_t(d));
    static_assert(sizeof(double) == 8);
    out.write((const char*)p->val.data(), std::streamsize(p->val.size() * 8));
  }
}

void load_checkpoint(const std::string& path, const std::vector<Var>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("bad checkpoint magic in " + path);
  if (get_u32(in) != kVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path);
  const uint32_t count = get_u32(in);
  std::vector<std::pair<std::string, std::vector<double>>> loaded;
  std::vector<std::vector<int>> shapes;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = get_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    uint32_t rank = get_u32(in);
    std::vector<int> shape(rank);
    size_t n = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      shape[r] = int(get_u32(in));
      n *= size_t(shape[r]);
    }
    std::vector<double> vals(n);
    in.read((char*)vals.data(), std::streamsize(n * 8));
    if (!in) throw std::runtime_error("checkpoint truncated: " + path);
    loaded.emplace_back(std::move(name), std::move(vals));
    shapes.push_back(std::move(shape));
  }
  for (const auto& p : params) {
    bool found = false;
    for (size_t i = 0; i < loaded.size(); ++i) {
      if (loaded[i].first != p->name) continue;
      if (shapes[i] != p->shape)
        throw std::runtime_error("checkpoint shape mismatch for " + p->name);
      p->val = loaded[i].second;
      found = true;
      break;
    }
    if (!found)
      throw std::runtime_error("checkpoint missing tensor " + p->name);
  }
}

// ----------------------------------------------------------- grad checking

GradCheckReport grad_check(const std::function<Var(Tape&)>& build_loss,
                           const std::vector<Var>& params, double step,
                           double tolerance) {
  GradCheckReport report;
  zero_grads(params);
  {
    Tape tape;
    Var loss = build_loss(tape);
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    p->ensure_grad();
    analytic.push_back(p->grad);
  }

  auto eval = [&]() {
    Tape tape;
    return build_loss(tape)->val[0];
  };

  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    for (size_t i = 0; i < p->val.size(); ++i) {
      const double saved = p->val[i];
      auto central = [&](double h) {
        p->val[i] = saved + h;
        const double up = eval();
        p->val[i] = saved - h;
        const double down = eval();
        p->val[i] = saved;
        return (up - down) / (2.0 * h);
      };
      const double d1 = central(step);
      const double d2 = central(step / 2.0);

      GradCheckEntry e;
      e.param = p->name.empty() ? ("param" + std::to_string(pi)) : p->name;
      e.index = int(i);
      e.analytic = analytic[pi][i];
      e.numeric = d1;
      const double scale = std::max({std::abs(e.analytic), std::abs(d1), 1e-8});
      e.rel_err = std::abs(e.analytic - d1) / scale;
      // two central estimates that disagree signal a kink at the sample point
      const double fd_scale = std::max({std::abs(d1), std::abs(d2), 1e-8});
      e.unreliable = std::abs(d1 - d2) / fd_scale > 0.05 &&
                     std::abs(d1 - d2) > 10.0 * step;
      e.pass = e.unreliable || e.rel_err <= tolerance;
      if (!e.pass) report.passed = false;
      report.entries.push_back(e);
    }
  }
  return report;
}

}  // namespace fbkws::ad
