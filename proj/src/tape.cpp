#include "metassl/tape.hpp"

#include <cmath>
#include <string>

#include "metassl/errors.hpp"

namespace metassl {

Tape::Var Tape::push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  if (consumed_) throw UsageError("tape: cannot record on a consumed tape");
  require_finite(value, "tape");
  nodes_.push_back({std::move(value), std::move(inputs), std::move(backward)});
  return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw UsageError("tape: variable does not belong to this tape");
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

Tape::Var Tape::input(Tensor value) { return push(std::move(value), {}, nullptr); }
Tape::Var Tape::constant(Tensor value) { return push(std::move(value), {}, nullptr); }

Tape::Var Tape::matmul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  Tensor out = ops::matmul(av, bv);
  return push(std::move(out), {a.id, b.id}, [av, bv](const Tensor& g) {
    return std::vector<Tensor>{ops::matmul_nt(g, bv), ops::matmul_tn(av, g)};
  });
}

Tape::Var Tape::add_row(Var a, Var bias) {
  const Tensor& bv = value(bias);
  Tensor out = ops::add_row(value(a), bv);
  auto bias_shape = bv.shape();
  return push(std::move(out), {a.id, bias.id}, [bias_shape](const Tensor& g) {
    return std::vector<Tensor>{g, ops::column_sums(g).reshaped(bias_shape)};
  });
}

Tape::Var Tape::add(Var a, Var b) {
  Tensor out = ops::add(value(a), value(b));
  return push(std::move(out), {a.id, b.id}, [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Tape::Var Tape::sub(Var a, Var b) {
  Tensor out = ops::sub(value(a), value(b));
  return push(std::move(out), {a.id, b.id},
              [](const Tensor& g) { return std::vector<Tensor>{g, ops::scale(g, -1.0)}; });
}

Tape::Var Tape::mul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  Tensor out = ops::mul(av, bv);
  return push(std::move(out), {a.id, b.id}, [av, bv](const Tensor& g) {
    return std::vector<Tensor>{ops::mul(g, bv), ops::mul(g, av)};
  });
}

Tape::Var Tape::scale(Var a, double s) {
  Tensor out = ops::scale(value(a), s);
  return push(std::move(out), {a.id}, [s](const Tensor& g) { return std::vector<Tensor>{ops::scale(g, s)}; });
}

Tape::Var Tape::square(Var a) {
  const Tensor& av = value(a);
  Tensor out = ops::mul(av, av);
  return push(std::move(out), {a.id},
              [av](const Tensor& g) { return std::vector<Tensor>{ops::scale(ops::mul(g, av), 2.0)}; });
}

Tape::Var Tape::relu(Var a) {
  const Tensor& av = value(a);
  Tensor out = ops::relu(av);
  return push(std::move(out), {a.id}, [av](const Tensor& g) {
    Tensor d = g;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (!(av[i] > 0.0)) d[i] = 0.0;
    }
    return std::vector<Tensor>{std::move(d)};
  });
}

Tape::Var Tape::tanh(Var a) {
  Tensor out = ops::tanh(value(a));
  Tensor y = out;
  return push(std::move(out), {a.id}, [y](const Tensor& g) {
    Tensor d = g;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] *= 1.0 - y[i] * y[i];
    return std::vector<Tensor>{std::move(d)};
  });
}

Tape::Var Tape::softmax(Var logits) {
  Tensor out = ops::softmax_rows(value(logits));
  Tensor p = out;
  return push(std::move(out), {logits.id}, [p](const Tensor& g) {
    // dz = p ⊙ (g − ⟨g, p⟩) row-wise
    Tensor d(p.shape());
    for (std::size_t i = 0; i < p.rows(); ++i) {
      const double inner = ops::dot(g.row(i), p.row(i));
      for (std::size_t j = 0; j < p.cols(); ++j) d(i, j) = p(i, j) * (g(i, j) - inner);
    }
    return std::vector<Tensor>{std::move(d)};
  });
}

Tape::Var Tape::sum(Var a) {
  const auto shape = value(a).shape();
  Tensor out = Tensor::vector({ops::sum(value(a).values())});
  return push(std::move(out), {a.id},
              [shape](const Tensor& g) { return std::vector<Tensor>{Tensor::filled(shape, g[0])}; });
}

Tape::Var Tape::custom(std::vector<Var> inputs, Tensor value, BackwardFn backward) {
  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  for (Var v : inputs) {
    node(v);
    ids.push_back(v.id);
  }
  return push(std::move(value), std::move(ids), std::move(backward));
}

Gradients Tape::backward(Var output) {
  const Tensor& out = value(output);
  if (out.size() != 1) {
    throw UsageError("tape: backward without seed requires a scalar output, got " + out.shape_string());
  }
  return backward(output, Tensor(out.shape(), {1.0}));
}

Gradients Tape::backward(Var output, const Tensor& seed) {
  if (consumed_) throw UsageError("tape: already consumed by a previous backward pass");
  const Node& out = node(output);
  if (seed.size() != out.value.size()) {
    throw DimensionError("tape: seed " + seed.shape_string() + " does not match output " +
                         out.value.shape_string());
  }
  consumed_ = true;

  Gradients grads;
  grads.adjoints_.resize(nodes_.size());
  grads.shapes_.reserve(nodes_.size());
  for (const Node& n : nodes_) grads.shapes_.push_back(n.value.shape());
  grads.adjoints_[output.id] = seed.reshaped(out.value.shape());

  for (std::size_t k = output.id + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!grads.adjoints_[k] || !n.backward) continue;
    std::vector<Tensor> in_grads = n.backward(*grads.adjoints_[k]);
    if (in_grads.size() != n.inputs.size()) {
      throw UsageError("tape: backward returned " + std::to_string(in_grads.size()) + " adjoints for " +
                       std::to_string(n.inputs.size()) + " inputs");
    }
    for (std::size_t j = 0; j < n.inputs.size(); ++j) {
      auto& slot = grads.adjoints_[n.inputs[j]];
      Tensor g = in_grads[j].reshaped(nodes_[n.inputs[j]].value.shape());
      if (slot) {
        *slot = ops::add(*slot, g);
      } else {
        slot = std::move(g);
      }
    }
    // Release saved activations as soon as the node is done.
    n.backward = nullptr;
  }
  return grads;
}

Tensor Gradients::of(Tape::Var v) const {
  if (v.id >= adjoints_.size()) throw UsageError("gradients: unknown variable");
  if (adjoints_[v.id]) return *adjoints_[v.id];
  return Tensor(shapes_[v.id]);
}

}  // namespace metassl
