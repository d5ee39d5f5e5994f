#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "metassl/tensor.hpp"

namespace metassl {

class Gradients;

/// Single-use reverse-mode gradient tape.
///
/// Nodes are appended in evaluation order, which is already a topological
/// order; backward() walks them once in reverse and accumulates adjoints
/// additively, so fan-out is handled without extra bookkeeping. A tape may be
/// replayed backward exactly once.
class Tape {
 public:
  struct Var {
    std::size_t id;
  };

  /// Maps the adjoint of a node's output to adjoints of each of its inputs.
  using BackwardFn = std::function<std::vector<Tensor>(const Tensor& upstream)>;

  Var input(Tensor value);
  Var constant(Tensor value);

  Var matmul(Var a, Var b);
  Var add_row(Var a, Var bias);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var square(Var a);
  Var relu(Var a);
  Var tanh(Var a);
  Var softmax(Var logits);
  Var sum(Var a);

  /// Escape hatch for composite primitives with closed-form adjoints
  /// (losses). `backward` must return one adjoint per input.
  Var custom(std::vector<Var> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  /// Scalar outputs are seeded with 1.
  Gradients backward(Var output);
  Gradients backward(Var output, const Tensor& seed);

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;  // empty for leaves
  };

  Var push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

class Gradients {
 public:
  /// Adjoint of `v`; zeros when `v` does not influence the output.
  Tensor of(Tape::Var v) const;

 private:
  friend class Tape;
  std::vector<std::optional<Tensor>> adjoints_;
  std::vector<std::vector<std::size_t>> shapes_;
};

}  // namespace metassl
