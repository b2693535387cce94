#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape owns every value computed during one forward pass. Each op appends
// a node holding its output and, when any operand requires a gradient, a
// closure that pushes the output gradient back to the operands. Nodes are
// appended in execution order, so walking the tape from the end visits them
// in reverse topological order.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "dap/tensor.hpp"

namespace dap::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the tape, the node's own id and its accumulated gradient.
  using BackwardFn =
      std::function<void(Tape&, std::size_t self, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Input tensor. Gradients are only tracked for requires_grad leaves.
  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records an op output. `backward` is dropped when no input needs a
  /// gradient.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  /// Reverse sweep from a scalar. Gradients accumulate additively, so call
  /// once per tape.
  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const {
    return nodes_.at(id).requires_grad;
  }

  /// Gradient of the last backward() target with respect to `v`; zeros if
  /// `v` did not influence it.
  Tensor grad(Var v) const;

  /// Accumulator for node `id`, allocated on first use. Used by op closures.
  Tensor& grad_ref(std::size_t id);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

enum class Padding { Same, Valid };
enum class Resample { Down2, Up2 };

// Convolution and resampling on [B, C, H, W] tensors.

/// Cross-correlation. kernel is [Cout, Cin, k, k] with k odd, bias is [Cout].
Var conv2d(Var input, Var kernel, Var bias, std::size_t stride = 1,
           Padding padding = Padding::Same);

/// Down2 is 2x2 average pooling, Up2 nearest-neighbour duplication.
Var resample(Var input, Resample mode);

/// Softmax taken jointly over the H x W plane of every (batch, channel).
Var spatial_softmax(Var logits);

// Elementwise ops. Operands must have identical shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scalar_mul(Var a, real s);
Var add_scalar(Var a, real s);
Var relu(Var a);
Var log(Var a);
Var exp(Var a);

// Reductions.
Var sum_all(Var a);
Var mean_all(Var a);
/// [B, C, H, W] -> [B, C, 1, 1]
Var sum_spatial(Var a);
Var mean_spatial(Var a);

// Shape ops.
Var reshape(Var a, Shape shape);
Var concat_channels(std::span<const Var> parts);
Var slice_channels(Var a, std::size_t begin, std::size_t count);
/// [B, 1, H, W] -> [B, n, H, W] by copying the single channel.
Var broadcast_channels(Var a, std::size_t n);

/// [M, K] x [K, N] -> [M, N]
Var matmul(Var a, Var b);
/// Batched product of rank-3 tensors, optionally transposing the trailing
/// two axes of either operand.
Var bmm(Var a, Var b, bool transpose_a = false, bool transpose_b = false);

}  // namespace dap::ad
