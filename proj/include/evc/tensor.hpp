#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "evc/errors.hpp"
#include "evc/rng.hpp"

namespace evc {

// 64-bit throughout; parameters are kept on the float32 grid so checkpoint
// round-trips are lossless (see quantize_f32).
using Scalar = double;
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<Scalar> value;
  std::vector<Scalar> grad;  // sized lazily by Graph::backward
  bool requires_grad = false;
  std::string op;  // empty for leaves
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Accumulates into parents' grad buffers; set only for recorded ops.
  std::function<void(TensorNode&)> backward_fn;
};

// Value-semantics handle over a shared node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, Scalar v);
  static Tensor from(Shape shape, std::vector<Scalar> data);
  // Leaf that participates in gradient computation.
  static Tensor param(Shape shape, std::vector<Scalar> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t numel() const { return node().value.size(); }

  const std::vector<Scalar>& value() const { return node().value; }
  std::vector<Scalar>& mutable_value() { return node().value; }
  const std::vector<Scalar>& grad() const;
  bool has_grad() const { return !node().grad.empty(); }
  void zero_grad();

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool on) { node().requires_grad = on; }

  // Value of a single-element tensor.
  Scalar item() const;

  std::shared_ptr<TensorNode> node_ptr() const { return node_; }
  TensorNode& node() const;

  static Tensor wrap(std::shared_ptr<TensorNode> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Rounds every element to the nearest float32. Parameters and serialized
// features live on this grid so that f32 files reload bit-exactly.
void quantize_f32(std::vector<Scalar>& data);
void quantize_f32(Tensor& t);

// Ordered record of executed operations plus the RNG for stochastic ops.
// Forward replay with the same seed is bit-identical; backward walks the
// record in exact reverse execution order.
class Graph {
 public:
  explicit Graph(std::uint64_t seed = 0) : seed_(seed), rng_(seed) {}

  std::uint64_t seed() const { return seed_; }
  Rng& rng() { return rng_; }
  std::size_t size() const { return tape_.size(); }

  // Records an executed op; called by the op implementations.
  Tensor record(Shape shape, std::vector<Scalar> value, std::string op,
                std::vector<Tensor> parents,
                std::function<void(TensorNode&)> backward_fn);

  // Reverse-mode sweep from a scalar loss. Gradients accumulate into the
  // grad buffers of every node reachable from the tape.
  void backward(const Tensor& loss);

 private:
  std::uint64_t seed_;
  Rng rng_;
  std::vector<std::shared_ptr<TensorNode>> tape_;
};

enum class Padding { Valid, Same };

// --- elementwise / reduction ---------------------------------------------
Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& a, Scalar c);
Tensor add_scalar(Graph& g, const Tensor& a, Scalar c);
Tensor neg(Graph& g, const Tensor& a);
Tensor abs(Graph& g, const Tensor& a);
Tensor log(Graph& g, const Tensor& a);
Tensor sigmoid(Graph& g, const Tensor& a);
Tensor tanh(Graph& g, const Tensor& a);
Tensor clamp(Graph& g, const Tensor& a, Scalar lo, Scalar hi);
Tensor sum(Graph& g, const Tensor& a);
Tensor mean(Graph& g, const Tensor& a);
Tensor mean_axis(Graph& g, const Tensor& a, std::size_t axis);

// --- structure ------------------------------------------------------------
Tensor reshape(Graph& g, const Tensor& a, Shape shape);
Tensor permute(Graph& g, const Tensor& a, const std::vector<std::size_t>& perm);
// x[B,T,D] + table[T,D], broadcast over the leading batch axis.
Tensor add_time_table(Graph& g, const Tensor& x, const Tensor& table);
// Per-channel affine on axis 1: (x - shift[c]) / scale[c], or the inverse
// x * scale[c] + shift[c]. scale/shift have size C or 1 (broadcast).
Tensor channel_affine(Graph& g, const Tensor& x, const std::vector<Scalar>& scale,
                      const std::vector<Scalar>& shift, bool invert);

// --- linear algebra -------------------------------------------------------
// x[..., D] x w[D, M] + b[M]; b may be an undefined tensor for no bias.
Tensor linear(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b);
// a[N,P,Q] x b[N,Q,R] (or b[N,R,Q] with transpose_b).
Tensor bmm(Graph& g, const Tensor& a, const Tensor& b, bool transpose_b = false);
Tensor softmax_lastdim(Graph& g, const Tensor& a);

// --- network primitives ----------------------------------------------------
Tensor conv1d(Graph& g, const Tensor& input, const Tensor& kernel,
              std::size_t stride, Padding padding);
Tensor conv2d(Graph& g, const Tensor& input, const Tensor& kernel,
              std::size_t stride_h, std::size_t stride_w, Padding padding);
// x[B,C,...] + bias[C].
Tensor bias_add_channels(Graph& g, const Tensor& x, const Tensor& bias);
Tensor glu_gate(Graph& g, const Tensor& features, const Tensor& gate_logits);
Tensor instance_norm(Graph& g, const Tensor& x, const Tensor& gamma,
                     const Tensor& beta, Scalar eps);
// Inverted dropout driven by the graph RNG; identity when p == 0.
Tensor dropout(Graph& g, const Tensor& x, Scalar p);

// Fixed sinusoidal table [T, D], base 10000.
Tensor positional_embedding(std::size_t T, std::size_t D);

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

// Scaled dot-product self-attention over x[B,T,D]. When attn_rows is given it
// receives the post-softmax attention matrices, one [T*T] row-major block per
// (batch, head).
Tensor multi_head_attention(Graph& g, const Tensor& x, const AttentionParams& p,
                            std::size_t heads, Scalar dropout_p,
                            std::vector<std::vector<Scalar>>* attn_rows = nullptr);

// Output length of a 1-D convolution axis under this library's padding rule.
std::size_t conv_out_length(std::size_t in, std::size_t kernel, std::size_t stride,
                            Padding padding);

}  // namespace evc
