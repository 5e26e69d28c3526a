#include "evc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace evc {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

void check_finite(const std::string& op, const std::vector<Scalar>& v) {
  for (Scalar x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(op + ": non-finite value produced");
    }
  }
}

void check_shape_positive(const std::string& op, const Shape& shape) {
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == 0) {
      throw ShapeError(op + ": extent of axis " + std::to_string(i) + " is zero");
    }
  }
}

std::shared_ptr<TensorNode> make_leaf(Shape shape, std::vector<Scalar> data,
                                      bool requires_grad) {
  check_shape_positive("tensor", shape);
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match data length " +
                     std::to_string(data.size()));
  }
  check_finite("tensor", data);
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return n;
}

void ensure_grad(TensorNode& n) {
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
}

void require_same_shape(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return;
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  std::size_t axis = 0;
  if (sa.size() == sb.size()) {
    while (axis < sa.size() && sa[axis] == sb[axis]) ++axis;
  }
  throw ShapeError(op + ": shape mismatch " + shape_str(sa) + " vs " + shape_str(sb) +
                   " (first differing axis " + std::to_string(axis) + ")");
}

}  // namespace

Tensor Tensor::zeros(Shape shape) {
  std::size_t n = shape_numel(shape);
  return wrap(make_leaf(std::move(shape), std::vector<Scalar>(n, 0.0), false));
}

Tensor Tensor::full(Shape shape, Scalar v) {
  std::size_t n = shape_numel(shape);
  return wrap(make_leaf(std::move(shape), std::vector<Scalar>(n, v), false));
}

Tensor Tensor::from(Shape shape, std::vector<Scalar> data) {
  return wrap(make_leaf(std::move(shape), std::move(data), false));
}

Tensor Tensor::param(Shape shape, std::vector<Scalar> data) {
  return wrap(make_leaf(std::move(shape), std::move(data), true));
}

TensorNode& Tensor::node() const {
  if (!node_) throw ContractError("tensor: use of undefined tensor");
  return *node_;
}

const std::vector<Scalar>& Tensor::grad() const {
  if (node().grad.empty()) {
    throw ContractError("tensor: gradient not populated; run backward first");
  }
  return node().grad;
}

void Tensor::zero_grad() { node().grad.clear(); }

Scalar Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("tensor: item() on tensor of shape " + shape_str(shape()));
  }
  return node().value[0];
}

void quantize_f32(std::vector<Scalar>& data) {
  for (Scalar& v : data) v = static_cast<Scalar>(static_cast<float>(v));
}

void quantize_f32(Tensor& t) { quantize_f32(t.mutable_value()); }

Tensor Graph::record(Shape shape, std::vector<Scalar> value, std::string op,
                     std::vector<Tensor> parents,
                     std::function<void(TensorNode&)> backward_fn) {
  check_finite(op, value);
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = std::move(op);
  bool req = false;
  n->parents.reserve(parents.size());
  for (const Tensor& p : parents) {
    req = req || p.node().requires_grad;
    n->parents.push_back(p.node_ptr());
  }
  n->requires_grad = req;
  n->backward_fn = std::move(backward_fn);
  tape_.push_back(n);
  return Tensor::wrap(n);
}

void Graph::backward(const Tensor& loss) {
  if (tape_.empty()) throw ContractError("backward: graph is empty");
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(loss.shape()));
  }
  // Fresh gradients for recorded nodes; leaves accumulate.
  for (auto& n : tape_) {
    n->grad.assign(n->value.size(), 0.0);
    for (auto& p : n->parents) ensure_grad(*p);
  }
  ensure_grad(loss.node());
  loss.node().grad[0] = 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
    TensorNode& n = **it;
    if (!n.backward_fn) continue;
    // nodes that received no adjoint contribute nothing
    bool live = false;
    for (Scalar gv : n.grad) {
      if (gv != 0.0) {
        live = true;
        break;
      }
    }
    if (live) n.backward_fn(n);
  }
}

// --- elementwise -----------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(Graph& g, const Tensor& a, const std::string& name, Fwd fwd, Bwd bwd) {
  const auto& av = a.value();
  std::vector<Scalar> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  auto ap = a.node_ptr();
  return g.record(a.shape(), std::move(out), name, {a}, [ap, bwd](TensorNode& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      ap->grad[i] += n.grad[i] * bwd(ap->value[i], n.value[i]);
    }
  });
}

}  // namespace

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<Scalar> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  auto ap = a.node_ptr();
  auto bp = b.node_ptr();
  return g.record(a.shape(), std::move(out), "add", {a, b}, [ap, bp](TensorNode& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      ap->grad[i] += n.grad[i];
      bp->grad[i] += n.grad[i];
    }
  });
}

Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<Scalar> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  auto ap = a.node_ptr();
  auto bp = b.node_ptr();
  return g.record(a.shape(), std::move(out), "sub", {a, b}, [ap, bp](TensorNode& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      ap->grad[i] += n.grad[i];
      bp->grad[i] -= n.grad[i];
    }
  });
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<Scalar> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  auto ap = a.node_ptr();
  auto bp = b.node_ptr();
  return g.record(a.shape(), std::move(out), "mul", {a, b}, [ap, bp](TensorNode& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      ap->grad[i] += n.grad[i] * bp->value[i];
      bp->grad[i] += n.grad[i] * ap->value[i];
    }
  });
}

Tensor scale(Graph& g, const Tensor& a, Scalar c) {
  return unary_op(
      g, a, "scale", [c](Scalar x) { return x * c; },
      [c](Scalar, Scalar) { return c; });
}

Tensor add_scalar(Graph& g, const Tensor& a, Scalar c) {
  return unary_op(
      g, a, "add_scalar", [c](Scalar x) { return x + c; },
      [](Scalar, Scalar) { return 1.0; });
}

Tensor neg(Graph& g, const Tensor& a) { return scale(g, a, -1.0); }

Tensor abs(Graph& g, const Tensor& a) {
  return unary_op(
      g, a, "abs", [](Scalar x) { return std::fabs(x); },
      [](Scalar x, Scalar) { return x >= 0.0 ? 1.0 : -1.0; });
}

Tensor log(Graph& g, const Tensor& a) {
  for (Scalar x : a.value()) {
    if (x <= 0.0) throw NumericError("log: non-positive input");
  }
  return unary_op(
      g, a, "log", [](Scalar x) { return std::log(x); },
      [](Scalar x, Scalar) { return 1.0 / x; });
}

Tensor sigmoid(Graph& g, const Tensor& a) {
  return unary_op(
      g, a, "sigmoid",
      [](Scalar x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                     : std::exp(x) / (1.0 + std::exp(x)); },
      [](Scalar, Scalar y) { return y * (1.0 - y); });
}

Tensor tanh(Graph& g, const Tensor& a) {
  return unary_op(
      g, a, "tanh", [](Scalar x) { return std::tanh(x); },
      [](Scalar, Scalar y) { return 1.0 - y * y; });
}

Tensor clamp(Graph& g, const Tensor& a, Scalar lo, Scalar hi) {
  return unary_op(
      g, a, "clamp",
      [lo, hi](Scalar x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](Scalar x, Scalar) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// --- reductions ------------------------------------------------------------

Tensor sum(Graph& g, const Tensor& a) {
  Scalar s = 0.0;
  for (Scalar x : a.value()) s += x;
  auto ap = a.node_ptr();
  return g.record({1}, {s}, "sum", {a}, [ap](TensorNode& n) {
    for (Scalar& gi : ap->grad) gi += n.grad[0];
  });
}

Tensor mean(Graph& g, const Tensor& a) {
  Scalar s = 0.0;
  for (Scalar x : a.value()) s += x;
  Scalar inv = 1.0 / static_cast<Scalar>(a.numel());
  auto ap = a.node_ptr();
  return g.record({1}, {s * inv}, "mean", {a}, [ap, inv](TensorNode& n) {
    for (Scalar& gi : ap->grad) gi += n.grad[0] * inv;
  });
}

Tensor mean_axis(Graph& g, const Tensor& a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) {
    throw ShapeError("mean_axis: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  std::size_t n = s[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out_shape.push_back(s[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  const auto& av = a.value();
  std::vector<Scalar> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < n; ++k) {
      const Scalar* src = av.data() + (o * n + k) * inner;
      Scalar* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  Scalar inv = 1.0 / static_cast<Scalar>(n);
  for (Scalar& v : out) v *= inv;
  auto ap = a.node_ptr();
  return g.record(std::move(out_shape), std::move(out), "mean_axis", {a},
                  [ap, outer, n, inner, inv](TensorNode& nd) {
                    for (std::size_t o = 0; o < outer; ++o) {
                      for (std::size_t k = 0; k < n; ++k) {
                        Scalar* dst = ap->grad.data() + (o * n + k) * inner;
                        const Scalar* src = nd.grad.data() + o * inner;
                        for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] * inv;
                      }
                    }
                  });
}

// --- structure --------------------------------------------------------------

Tensor reshape(Graph& g, const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  }
  auto ap = a.node_ptr();
  return g.record(std::move(shape), a.value(), "reshape", {a}, [ap](TensorNode& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) ap->grad[i] += n.grad[i];
  });
}

namespace {

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

}  // namespace

Tensor permute(Graph& g, const Tensor& a, const std::vector<std::size_t>& perm) {
  const Shape& s = a.shape();
  if (perm.size() != s.size()) {
    throw ShapeError("permute: permutation rank " + std::to_string(perm.size()) +
                     " does not match tensor rank " + std::to_string(s.size()));
  }
  std::vector<bool> seen(perm.size(), false);
  Shape out_shape(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] >= s.size() || seen[perm[i]]) {
      throw ShapeError("permute: invalid permutation");
    }
    seen[perm[i]] = true;
    out_shape[i] = s[perm[i]];
  }
  auto in_strides = row_major_strides(s);
  auto out_strides = row_major_strides(out_shape);
  std::size_t total = a.numel();
  // map: source flat index for each output flat index
  std::vector<std::size_t> src_index(total);
  std::vector<std::size_t> idx(perm.size(), 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rem = flat;
    std::size_t src = 0;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      std::size_t c = rem / out_strides[i];
      rem %= out_strides[i];
      src += c * in_strides[perm[i]];
    }
    src_index[flat] = src;
  }
  const auto& av = a.value();
  std::vector<Scalar> out(total);
  for (std::size_t i = 0; i < total; ++i) out[i] = av[src_index[i]];
  auto ap = a.node_ptr();
  auto map = std::make_shared<std::vector<std::size_t>>(std::move(src_index));
  return g.record(std::move(out_shape), std::move(out), "permute", {a},
                  [ap, map](TensorNode& n) {
                    for (std::size_t i = 0; i < n.grad.size(); ++i) {
                      ap->grad[(*map)[i]] += n.grad[i];
                    }
                  });
}

Tensor add_time_table(Graph& g, const Tensor& x, const Tensor& table) {
  if (x.rank() != 3 || table.rank() != 2 || x.shape()[1] != table.shape()[0] ||
      x.shape()[2] != table.shape()[1]) {
    throw ShapeError("add_time_table: expected x[B,T,D] " + shape_str(x.shape()) +
                     " and table[T,D] " + shape_str(table.shape()));
  }
  std::size_t B = x.shape()[0], n = table.numel();
  const auto& xv = x.value();
  const auto& tv = table.value();
  std::vector<Scalar> out(xv.size());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < n; ++i) out[b * n + i] = xv[b * n + i] + tv[i];
  }
  auto xp = x.node_ptr();
  auto tp = table.node_ptr();
  return g.record(x.shape(), std::move(out), "add_time_table", {x, table},
                  [xp, tp, B, n](TensorNode& nd) {
                    for (std::size_t b = 0; b < B; ++b) {
                      for (std::size_t i = 0; i < n; ++i) {
                        xp->grad[b * n + i] += nd.grad[b * n + i];
                        tp->grad[i] += nd.grad[b * n + i];
                      }
                    }
                  });
}

Tensor channel_affine(Graph& g, const Tensor& x, const std::vector<Scalar>& scale,
                      const std::vector<Scalar>& shift, bool invert) {
  if (x.rank() < 2) {
    throw ShapeError("channel_affine: expected rank >= 2, got " + shape_str(x.shape()));
  }
  std::size_t B = x.shape()[0], C = x.shape()[1];
  std::size_t inner = x.numel() / (B * C);
  if ((scale.size() != 1 && scale.size() != C) ||
      (shift.size() != 1 && shift.size() != C)) {
    throw ShapeError("channel_affine: scale/shift must have size 1 or C (axis 1)");
  }
  for (Scalar s : scale) {
    if (s == 0.0 || !std::isfinite(s)) {
      throw NumericError("channel_affine: zero or non-finite scale");
    }
  }
  const auto& xv = x.value();
  std::vector<Scalar> out(xv.size());
  std::vector<Scalar> dydx(C);
  for (std::size_t c = 0; c < C; ++c) {
    Scalar sc = scale[scale.size() == 1 ? 0 : c];
    dydx[c] = invert ? sc : 1.0 / sc;
  }
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      Scalar sc = scale[scale.size() == 1 ? 0 : c];
      Scalar sh = shift[shift.size() == 1 ? 0 : c];
      const Scalar* src = xv.data() + (b * C + c) * inner;
      Scalar* dst = out.data() + (b * C + c) * inner;
      if (invert) {
        for (std::size_t i = 0; i < inner; ++i) dst[i] = src[i] * sc + sh;
      } else {
        for (std::size_t i = 0; i < inner; ++i) dst[i] = (src[i] - sh) / sc;
      }
    }
  }
  auto xp = x.node_ptr();
  return g.record(x.shape(), std::move(out), "channel_affine", {x},
                  [xp, B, C, inner, dydx](TensorNode& nd) {
                    for (std::size_t b = 0; b < B; ++b) {
                      for (std::size_t c = 0; c < C; ++c) {
                        Scalar d = dydx[c];
                        std::size_t base = (b * C + c) * inner;
                        for (std::size_t i = 0; i < inner; ++i) {
                          xp->grad[base + i] += nd.grad[base + i] * d;
                        }
                      }
                    }
                  });
}

// --- linear algebra ----------------------------------------------------------

Tensor linear(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2) throw ShapeError("linear: weight must be rank 2");
  std::size_t D = w.shape()[0], M = w.shape()[1];
  if (x.shape().back() != D) {
    throw ShapeError("linear: input last axis " + std::to_string(x.shape().back()) +
                     " does not match weight rows " + std::to_string(D));
  }
  bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.shape()[0] != M)) {
    throw ShapeError("linear: bias must have shape [M]");
  }
  std::size_t R = x.numel() / D;
  const auto& xv = x.value();
  const auto& wv = w.value();
  std::vector<Scalar> out(R * M, 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    const Scalar* xr = xv.data() + r * D;
    Scalar* yr = out.data() + r * M;
    for (std::size_t d = 0; d < D; ++d) {
      Scalar xd = xr[d];
      const Scalar* wd = wv.data() + d * M;
      for (std::size_t m = 0; m < M; ++m) yr[m] += xd * wd[m];
    }
    if (has_bias) {
      const auto& bv = b.value();
      for (std::size_t m = 0; m < M; ++m) yr[m] += bv[m];
    }
  }
  Shape out_shape = x.shape();
  out_shape.back() = M;
  auto xp = x.node_ptr();
  auto wp = w.node_ptr();
  std::vector<Tensor> parents = {x, w};
  if (has_bias) parents.push_back(b);
  std::shared_ptr<TensorNode> bp = has_bias ? b.node_ptr() : nullptr;
  return g.record(std::move(out_shape), std::move(out), "linear", std::move(parents),
                  [xp, wp, bp, R, D, M](TensorNode& nd) {
                    for (std::size_t r = 0; r < R; ++r) {
                      const Scalar* gy = nd.grad.data() + r * M;
                      const Scalar* xr = xp->value.data() + r * D;
                      Scalar* gx = xp->grad.data() + r * D;
                      for (std::size_t d = 0; d < D; ++d) {
                        const Scalar* wd = wp->value.data() + d * M;
                        Scalar* gw = wp->grad.data() + d * M;
                        Scalar acc = 0.0;
                        for (std::size_t m = 0; m < M; ++m) {
                          acc += gy[m] * wd[m];
                          gw[m] += gy[m] * xr[d];
                        }
                        gx[d] += acc;
                      }
                      if (bp) {
                        for (std::size_t m = 0; m < M; ++m) bp->grad[m] += gy[m];
                      }
                    }
                  });
}

Tensor bmm(Graph& g, const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0]) {
    throw ShapeError("bmm: expected [N,P,Q] x [N,Q,R] with matching batch axis 0");
  }
  std::size_t N = a.shape()[0], P = a.shape()[1], Q = a.shape()[2];
  std::size_t R = transpose_b ? b.shape()[1] : b.shape()[2];
  std::size_t bq = transpose_b ? b.shape()[2] : b.shape()[1];
  if (bq != Q) {
    throw ShapeError("bmm: contraction axis mismatch " + std::to_string(Q) + " vs " +
                     std::to_string(bq));
  }
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<Scalar> out(N * P * R, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    const Scalar* an = av.data() + n * P * Q;
    const Scalar* bn = bv.data() + n * (transpose_b ? R * Q : Q * R);
    Scalar* yn = out.data() + n * P * R;
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t r = 0; r < R; ++r) {
        Scalar acc = 0.0;
        if (transpose_b) {
          const Scalar* br = bn + r * Q;
          const Scalar* ap = an + p * Q;
          for (std::size_t q = 0; q < Q; ++q) acc += ap[q] * br[q];
        } else {
          const Scalar* ap = an + p * Q;
          for (std::size_t q = 0; q < Q; ++q) acc += ap[q] * bn[q * R + r];
        }
        yn[p * R + r] = acc;
      }
    }
  }
  auto ap_ = a.node_ptr();
  auto bp_ = b.node_ptr();
  return g.record({N, P, R}, std::move(out), "bmm", {a, b},
                  [ap_, bp_, N, P, Q, R, transpose_b](TensorNode& nd) {
                    for (std::size_t n = 0; n < N; ++n) {
                      const Scalar* gy = nd.grad.data() + n * P * R;
                      const Scalar* an = ap_->value.data() + n * P * Q;
                      Scalar* ga = ap_->grad.data() + n * P * Q;
                      const Scalar* bn = bp_->value.data() + n * (transpose_b ? R * Q : Q * R);
                      Scalar* gb = bp_->grad.data() + n * (transpose_b ? R * Q : Q * R);
                      for (std::size_t p = 0; p < P; ++p) {
                        for (std::size_t r = 0; r < R; ++r) {
                          Scalar gyv = gy[p * R + r];
                          if (transpose_b) {
                            for (std::size_t q = 0; q < Q; ++q) {
                              ga[p * Q + q] += gyv * bn[r * Q + q];
                              gb[r * Q + q] += gyv * an[p * Q + q];
                            }
                          } else {
                            for (std::size_t q = 0; q < Q; ++q) {
                              ga[p * Q + q] += gyv * bn[q * R + r];
                              gb[q * R + r] += gyv * an[p * Q + q];
                            }
                          }
                        }
                      }
                    }
                  });
}

Tensor softmax_lastdim(Graph& g, const Tensor& a) {
  std::size_t L = a.shape().back();
  std::size_t R = a.numel() / L;
  const auto& av = a.value();
  std::vector<Scalar> out(av.size());
  for (std::size_t r = 0; r < R; ++r) {
    const Scalar* x = av.data() + r * L;
    Scalar* y = out.data() + r * L;
    Scalar mx = x[0];
    for (std::size_t i = 1; i < L; ++i) mx = std::max(mx, x[i]);
    Scalar z = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
      y[i] = std::exp(x[i] - mx);
      z += y[i];
    }
    Scalar inv = 1.0 / z;
    for (std::size_t i = 0; i < L; ++i) y[i] *= inv;
  }
  auto ap = a.node_ptr();
  return g.record(a.shape(), std::move(out), "softmax", {a},
                  [ap, R, L](TensorNode& nd) {
                    for (std::size_t r = 0; r < R; ++r) {
                      const Scalar* y = nd.value.data() + r * L;
                      const Scalar* gy = nd.grad.data() + r * L;
                      Scalar* gx = ap->grad.data() + r * L;
                      Scalar dot = 0.0;
                      for (std::size_t i = 0; i < L; ++i) dot += gy[i] * y[i];
                      for (std::size_t i = 0; i < L; ++i) {
                        gx[i] += y[i] * (gy[i] - dot);
                      }
                    }
                  });
}

// --- convolution --------------------------------------------------------------

namespace {

std::size_t same_pad(std::size_t in, std::size_t kernel, std::size_t stride) {
  std::size_t out = (in + stride - 1) / stride;
  std::size_t needed = (out - 1) * stride + kernel;
  if (needed <= in) return 0;
  return (needed - in + 1) / 2;
}

}  // namespace

std::size_t conv_out_length(std::size_t in, std::size_t kernel, std::size_t stride,
                            Padding padding) {
  std::size_t pad = padding == Padding::Same ? same_pad(in, kernel, stride) : 0;
  if (kernel > in + 2 * pad) {
    throw ContractError("conv: kernel " + std::to_string(kernel) +
                        " exceeds padded input length " + std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

Tensor conv1d(Graph& g, const Tensor& input, const Tensor& kernel, std::size_t stride,
              Padding padding) {
  if (input.rank() != 3) {
    throw ShapeError("conv1d: input must be [B,C_in,T], got " + shape_str(input.shape()));
  }
  if (kernel.rank() != 3) {
    throw ShapeError("conv1d: kernel must be [C_out,C_in,K], got " +
                     shape_str(kernel.shape()));
  }
  if (stride < 1) throw ContractError("conv1d: stride must be >= 1");
  std::size_t B = input.shape()[0], Cin = input.shape()[1], T = input.shape()[2];
  std::size_t Cout = kernel.shape()[0], K = kernel.shape()[2];
  if (kernel.shape()[1] != Cin) {
    throw ShapeError("conv1d: input channels (axis 1) = " + std::to_string(Cin) +
                     " do not match kernel C_in = " + std::to_string(kernel.shape()[1]));
  }
  std::size_t pad = padding == Padding::Same ? same_pad(T, K, stride) : 0;
  if (K > T + 2 * pad) {
    throw ContractError("conv1d: kernel K=" + std::to_string(K) +
                        " exceeds padded length T+2*pad=" + std::to_string(T + 2 * pad));
  }
  std::size_t To = (T + 2 * pad - K) / stride + 1;
  // valid output range per tap k: 0 <= to*stride + k - pad < T
  auto tap_range = [T, To, stride, pad](std::size_t k, std::size_t& lo, std::size_t& hi) {
    std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad);
    std::ptrdiff_t s = static_cast<std::ptrdiff_t>(stride);
    std::ptrdiff_t first = off < 0 ? (-off + s - 1) / s : 0;
    std::ptrdiff_t last = (static_cast<std::ptrdiff_t>(T) - 1 - off) / s;
    lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(first, 0));
    hi = static_cast<std::size_t>(
        std::min<std::ptrdiff_t>(last, static_cast<std::ptrdiff_t>(To) - 1));
  };
  const auto& xv = input.value();
  const auto& wv = kernel.value();
  std::vector<Scalar> out(B * Cout * To, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t co = 0; co < Cout; ++co) {
      Scalar* y = out.data() + (b * Cout + co) * To;
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const Scalar* x = xv.data() + (b * Cin + ci) * T;
        const Scalar* w = wv.data() + (co * Cin + ci) * K;
        for (std::size_t k = 0; k < K; ++k) {
          std::size_t lo, hi;
          tap_range(k, lo, hi);
          if (lo > hi) continue;
          Scalar wk = w[k];
          const Scalar* xs = x + lo * stride + k - pad;
          if (stride == 1) {
            for (std::size_t to = lo; to <= hi; ++to) y[to] += xs[to - lo] * wk;
          } else {
            for (std::size_t to = lo; to <= hi; ++to) {
              y[to] += xs[(to - lo) * stride] * wk;
            }
          }
        }
      }
    }
  }
  auto xp = input.node_ptr();
  auto wp = kernel.node_ptr();
  return g.record(
      {B, Cout, To}, std::move(out), "conv1d", {input, kernel},
      [xp, wp, B, Cin, T, Cout, K, To, stride, pad, tap_range](TensorNode& nd) {
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t co = 0; co < Cout; ++co) {
            const Scalar* gy = nd.grad.data() + (b * Cout + co) * To;
            for (std::size_t ci = 0; ci < Cin; ++ci) {
              const Scalar* x = xp->value.data() + (b * Cin + ci) * T;
              Scalar* gx = xp->grad.data() + (b * Cin + ci) * T;
              const Scalar* w = wp->value.data() + (co * Cin + ci) * K;
              Scalar* gw = wp->grad.data() + (co * Cin + ci) * K;
              for (std::size_t k = 0; k < K; ++k) {
                std::size_t lo, hi;
                tap_range(k, lo, hi);
                if (lo > hi) continue;
                Scalar wk = w[k];
                std::size_t base = lo * stride + k - pad;
                Scalar acc = 0.0;
                for (std::size_t to = lo; to <= hi; ++to) {
                  std::size_t ti = base + (to - lo) * stride;
                  gx[ti] += gy[to] * wk;
                  acc += gy[to] * x[ti];
                }
                gw[k] += acc;
              }
            }
          }
        }
      });
}

Tensor conv2d(Graph& g, const Tensor& input, const Tensor& kernel, std::size_t stride_h,
              std::size_t stride_w, Padding padding) {
  if (input.rank() != 4) {
    throw ShapeError("conv2d: input must be [B,C_in,H,W], got " +
                     shape_str(input.shape()));
  }
  if (kernel.rank() != 4) {
    throw ShapeError("conv2d: kernel must be [C_out,C_in,Kh,Kw], got " +
                     shape_str(kernel.shape()));
  }
  if (stride_h < 1 || stride_w < 1) throw ContractError("conv2d: stride must be >= 1");
  std::size_t B = input.shape()[0], Cin = input.shape()[1];
  std::size_t H = input.shape()[2], W = input.shape()[3];
  std::size_t Cout = kernel.shape()[0];
  std::size_t Kh = kernel.shape()[2], Kw = kernel.shape()[3];
  if (kernel.shape()[1] != Cin) {
    throw ShapeError("conv2d: input channels (axis 1) = " + std::to_string(Cin) +
                     " do not match kernel C_in = " + std::to_string(kernel.shape()[1]));
  }
  std::size_t ph = padding == Padding::Same ? same_pad(H, Kh, stride_h) : 0;
  std::size_t pw = padding == Padding::Same ? same_pad(W, Kw, stride_w) : 0;
  if (Kh > H + 2 * ph || Kw > W + 2 * pw) {
    throw ContractError("conv2d: kernel exceeds padded input extent");
  }
  std::size_t Ho = (H + 2 * ph - Kh) / stride_h + 1;
  std::size_t Wo = (W + 2 * pw - Kw) / stride_w + 1;
  auto tap_range = [](std::size_t in, std::size_t out_n, std::size_t stride,
                      std::size_t pad, std::size_t k, std::size_t& lo, std::size_t& hi) {
    std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad);
    std::ptrdiff_t s = static_cast<std::ptrdiff_t>(stride);
    std::ptrdiff_t first = off < 0 ? (-off + s - 1) / s : 0;
    std::ptrdiff_t last = (static_cast<std::ptrdiff_t>(in) - 1 - off) / s;
    lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(first, 0));
    hi = static_cast<std::size_t>(
        std::min<std::ptrdiff_t>(last, static_cast<std::ptrdiff_t>(out_n) - 1));
  };
  const auto& xv = input.value();
  const auto& wv = kernel.value();
  std::vector<Scalar> out(B * Cout * Ho * Wo, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t co = 0; co < Cout; ++co) {
      Scalar* y = out.data() + (b * Cout + co) * Ho * Wo;
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const Scalar* x = xv.data() + (b * Cin + ci) * H * W;
        const Scalar* w = wv.data() + (co * Cin + ci) * Kh * Kw;
        for (std::size_t kh = 0; kh < Kh; ++kh) {
          std::size_t hlo, hhi;
          tap_range(H, Ho, stride_h, ph, kh, hlo, hhi);
          if (hlo > hhi) continue;
          for (std::size_t kw = 0; kw < Kw; ++kw) {
            std::size_t wlo, whi;
            tap_range(W, Wo, stride_w, pw, kw, wlo, whi);
            if (wlo > whi) continue;
            Scalar wk = w[kh * Kw + kw];
            for (std::size_t ho = hlo; ho <= hhi; ++ho) {
              std::size_t hi_in = ho * stride_h + kh - ph;
              const Scalar* xr = x + hi_in * W + wlo * stride_w + kw - pw;
              Scalar* yr = y + ho * Wo;
              for (std::size_t wo = wlo; wo <= whi; ++wo) {
                yr[wo] += xr[(wo - wlo) * stride_w] * wk;
              }
            }
          }
        }
      }
    }
  }
  auto xp = input.node_ptr();
  auto wp = kernel.node_ptr();
  return g.record(
      {B, Cout, Ho, Wo}, std::move(out), "conv2d", {input, kernel},
      [xp, wp, B, Cin, H, W, Cout, Kh, Kw, Ho, Wo, stride_h, stride_w, ph, pw,
       tap_range](TensorNode& nd) {
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t co = 0; co < Cout; ++co) {
            const Scalar* gy = nd.grad.data() + (b * Cout + co) * Ho * Wo;
            for (std::size_t ci = 0; ci < Cin; ++ci) {
              const Scalar* x = xp->value.data() + (b * Cin + ci) * H * W;
              Scalar* gx = xp->grad.data() + (b * Cin + ci) * H * W;
              const Scalar* w = wp->value.data() + (co * Cin + ci) * Kh * Kw;
              Scalar* gw = wp->grad.data() + (co * Cin + ci) * Kh * Kw;
              for (std::size_t kh = 0; kh < Kh; ++kh) {
                std::size_t hlo, hhi;
                tap_range(H, Ho, stride_h, ph, kh, hlo, hhi);
                if (hlo > hhi) continue;
                for (std::size_t kw = 0; kw < Kw; ++kw) {
                  std::size_t wlo, whi;
                  tap_range(W, Wo, stride_w, pw, kw, wlo, whi);
                  if (wlo > whi) continue;
                  Scalar wk = w[kh * Kw + kw];
                  Scalar acc = 0.0;
                  for (std::size_t ho = hlo; ho <= hhi; ++ho) {
                    std::size_t hi_in = ho * stride_h + kh - ph;
                    const Scalar* xr = x + hi_in * W + wlo * stride_w + kw - pw;
                    Scalar* gxr = gx + hi_in * W + wlo * stride_w + kw - pw;
                    const Scalar* gyr = gy + ho * Wo;
                    for (std::size_t wo = wlo; wo <= whi; ++wo) {
                      Scalar gyv = gyr[wo];
                      gxr[(wo - wlo) * stride_w] += gyv * wk;
                      acc += gyv * xr[(wo - wlo) * stride_w];
                    }
                  }
                  gw[kh * Kw + kw] += acc;
                }
              }
            }
          }
        }
      });
}

Tensor bias_add_channels(Graph& g, const Tensor& x, const Tensor& bias) {
  if (x.rank() < 2 || bias.rank() != 1 || bias.shape()[0] != x.shape()[1]) {
    throw ShapeError("bias_add_channels: bias " + shape_str(bias.shape()) +
                     " does not match channel axis 1 of " + shape_str(x.shape()));
  }
  std::size_t B = x.shape()[0], C = x.shape()[1];
  std::size_t inner = x.numel() / (B * C);
  const auto& xv = x.value();
  const auto& bv = bias.value();
  std::vector<Scalar> out(xv.size());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const Scalar* src = xv.data() + (b * C + c) * inner;
      Scalar* dst = out.data() + (b * C + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] = src[i] + bv[c];
    }
  }
  auto xp = x.node_ptr();
  auto bp = bias.node_ptr();
  return g.record(x.shape(), std::move(out), "bias_add_channels", {x, bias},
                  [xp, bp, B, C, inner](TensorNode& nd) {
                    for (std::size_t b = 0; b < B; ++b) {
                      for (std::size_t c = 0; c < C; ++c) {
                        std::size_t base = (b * C + c) * inner;
                        Scalar acc = 0.0;
                        for (std::size_t i = 0; i < inner; ++i) {
                          xp->grad[base + i] += nd.grad[base + i];
                          acc += nd.grad[base + i];
                        }
                        bp->grad[c] += acc;
                      }
                    }
                  });
}

Tensor glu_gate(Graph& g, const Tensor& features, const Tensor& gate_logits) {
  require_same_shape("glu_gate", features, gate_logits);
  const auto& fv = features.value();
  const auto& gv = gate_logits.value();
  std::vector<Scalar> out(fv.size());
  std::vector<Scalar> gates(fv.size());
  for (std::size_t i = 0; i < fv.size(); ++i) {
    Scalar z = gv[i];
    Scalar s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    gates[i] = s;
    out[i] = fv[i] * s;
  }
  auto fp = features.node_ptr();
  auto gp = gate_logits.node_ptr();
  auto gt = std::make_shared<std::vector<Scalar>>(std::move(gates));
  return g.record(features.shape(), std::move(out), "glu_gate", {features, gate_logits},
                  [fp, gp, gt](TensorNode& nd) {
                    for (std::size_t i = 0; i < nd.grad.size(); ++i) {
                      Scalar s = (*gt)[i];
                      fp->grad[i] += nd.grad[i] * s;
                      gp->grad[i] += nd.grad[i] * fp->value[i] * s * (1.0 - s);
                    }
                  });
}

Tensor instance_norm(Graph& g, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     Scalar eps) {
  if (eps <= 0.0) throw ContractError("instance_norm: eps must be > 0");
  if (x.rank() < 3) {
    throw ShapeError("instance_norm: input must be [B,C,...], got " +
                     shape_str(x.shape()));
  }
  std::size_t B = x.shape()[0], C = x.shape()[1];
  std::size_t N = x.numel() / (B * C);
  if (N <= 1) {
    throw ContractError(
        "instance_norm: normalization axis has a single element (degenerate variance)");
  }
  if (gamma.rank() != 1 || gamma.shape()[0] != C || beta.rank() != 1 ||
      beta.shape()[0] != C) {
    throw ShapeError("instance_norm: gamma/beta must have shape [C]");
  }
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  std::vector<Scalar> out(xv.size());
  std::vector<Scalar> inv_std(B * C);
  std::vector<Scalar> means(B * C);
  Scalar invN = 1.0 / static_cast<Scalar>(N);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const Scalar* src = xv.data() + bc * N;
    Scalar mu = 0.0;
    for (std::size_t i = 0; i < N; ++i) mu += src[i];
    mu *= invN;
    Scalar var = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      Scalar d = src[i] - mu;
      var += d * d;
    }
    var *= invN;
    Scalar inv = 1.0 / std::sqrt(var + eps);
    means[bc] = mu;
    inv_std[bc] = inv;
    std::size_t c = bc % C;
    Scalar* dst = out.data() + bc * N;
    for (std::size_t i = 0; i < N; ++i) {
      dst[i] = gv[c] * ((src[i] - mu) * inv) + bv[c];
    }
  }
  auto xp = x.node_ptr();
  auto gp = gamma.node_ptr();
  auto bp = beta.node_ptr();
  auto mu_s = std::make_shared<std::vector<Scalar>>(std::move(means));
  auto inv_s = std::make_shared<std::vector<Scalar>>(std::move(inv_std));
  return g.record(
      x.shape(), std::move(out), "instance_norm", {x, gamma, beta},
      [xp, gp, bp, mu_s, inv_s, B, C, N, invN](TensorNode& nd) {
        for (std::size_t bc = 0; bc < B * C; ++bc) {
          std::size_t c = bc % C;
          Scalar mu = (*mu_s)[bc];
          Scalar inv = (*inv_s)[bc];
          Scalar gam = gp->value[c];
          const Scalar* src = xp->value.data() + bc * N;
          const Scalar* gy = nd.grad.data() + bc * N;
          Scalar* gx = xp->grad.data() + bc * N;
          Scalar sum_gy = 0.0, sum_gy_xhat = 0.0;
          for (std::size_t i = 0; i < N; ++i) {
            Scalar xhat = (src[i] - mu) * inv;
            sum_gy += gy[i];
            sum_gy_xhat += gy[i] * xhat;
            gp->grad[c] += gy[i] * xhat;
            bp->grad[c] += gy[i];
          }
          Scalar m_gy = sum_gy * invN;
          Scalar m_gyx = sum_gy_xhat * invN;
          for (std::size_t i = 0; i < N; ++i) {
            Scalar xhat = (src[i] - mu) * inv;
            gx[i] += gam * inv * (gy[i] - m_gy - xhat * m_gyx);
          }
        }
      });
}

Tensor dropout(Graph& g, const Tensor& x, Scalar p) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout: rate must be in [0, 1)");
  if (p == 0.0) return x;
  const auto& xv = x.value();
  std::vector<Scalar> out(xv.size());
  auto mask = std::make_shared<std::vector<Scalar>>(xv.size());
  Scalar keep = 1.0 - p;
  Scalar inv_keep = 1.0 / keep;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    Scalar m = g.rng().uniform() < keep ? inv_keep : 0.0;
    (*mask)[i] = m;
    out[i] = xv[i] * m;
  }
  auto xp = x.node_ptr();
  return g.record(x.shape(), std::move(out), "dropout", {x}, [xp, mask](TensorNode& nd) {
    for (std::size_t i = 0; i < nd.grad.size(); ++i) {
      xp->grad[i] += nd.grad[i] * (*mask)[i];
    }
  });
}

Tensor positional_embedding(std::size_t T, std::size_t D) {
  if (T < 1 || D < 1) throw ShapeError("positional_embedding: T and D must be >= 1");
  std::vector<Scalar> table(T * D);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t d = 0; d < D; ++d) {
      std::size_t pair = d - (d % 2);
      Scalar freq = std::pow(10000.0, -static_cast<Scalar>(pair) / static_cast<Scalar>(D));
      Scalar angle = static_cast<Scalar>(t) * freq;
      table[t * D + d] = (d % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from({T, D}, std::move(table));
}

Tensor multi_head_attention(Graph& g, const Tensor& x, const AttentionParams& p,
                            std::size_t heads, Scalar dropout_p,
                            std::vector<std::vector<Scalar>>* attn_rows) {
  if (x.rank() != 3) {
    throw ShapeError("multi_head_attention: input must be [B,T,D], got " +
                     shape_str(x.shape()));
  }
  std::size_t B = x.shape()[0], T = x.shape()[1], D = x.shape()[2];
  if (heads == 0 || D % heads != 0) {
    throw ConfigError("multi_head_attention: D=" + std::to_string(D) +
                      " not divisible by heads=" + std::to_string(heads));
  }
  if (dropout_p < 0.0 || dropout_p >= 1.0) {
    throw ContractError("multi_head_attention: dropout must be in [0, 1)");
  }
  std::size_t dh = D / heads;
  Tensor q = linear(g, x, p.wq, p.bq);
  Tensor k = linear(g, x, p.wk, p.bk);
  Tensor v = linear(g, x, p.wv, p.bv);
  auto split = [&](const Tensor& t) {
    Tensor r = reshape(g, t, {B, T, heads, dh});
    r = permute(g, r, {0, 2, 1, 3});  // [B,h,T,dh]
    return reshape(g, r, {B * heads, T, dh});
  };
  Tensor qh = split(q);
  Tensor kh = split(k);
  Tensor vh = split(v);
  Tensor scores = scale(g, bmm(g, qh, kh, /*transpose_b=*/true),
                        1.0 / std::sqrt(static_cast<Scalar>(dh)));
  Tensor attn = softmax_lastdim(g, scores);
  if (attn_rows) {
    attn_rows->clear();
    const auto& av = attn.value();
    for (std::size_t bh = 0; bh < B * heads; ++bh) {
      attn_rows->emplace_back(av.begin() + bh * T * T, av.begin() + (bh + 1) * T * T);
    }
  }
  attn = dropout(g, attn, dropout_p);
  Tensor ctx = bmm(g, attn, vh);  // [B*h, T, dh]
  ctx = reshape(g, ctx, {B, heads, T, dh});
  ctx = permute(g, ctx, {0, 2, 1, 3});
  ctx = reshape(g, ctx, {B, T, D});
  return linear(g, ctx, p.wo, p.bo);
}

}  // namespace evc
