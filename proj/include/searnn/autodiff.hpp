#pragma once

#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "searnn/tensor.hpp"

namespace searnn {

/// Record of primitive applications supporting one reverse sweep.
///
/// Nodes are appended in evaluation order, so operands always precede
/// results and a single backward pass visits each record exactly once.
class Tape {
 public:
  using Handle = int;
  using NodeId = int;

  // ---- leaves ----

  NodeId constant(Tensor v) {
    if (!v.all_finite()) throw ContractError("non-finite values entering the graph");
    return push(std::move(v), {});
  }

  NodeId param(ParameterStore& store, const std::string& name) {
    Tensor v = store.value(name);
    if (!v.all_finite()) throw ContractError("non-finite parameter: " + name);
    const NodeId id = push(std::move(v), {});
    nodes_[id].sink = &store.grad(name);
    return id;
  }

  // ---- primitives ----

  NodeId matmul(NodeId a, NodeId b) {
    Tensor out;
    kernels::matmul(value(a), value(b), out);
    const NodeId id = push(std::move(out), {a, b});
    nodes_[id].pull = [a, b](Tape& t, const Tensor& g) {
      const Tensor& A = t.value(a);
      const Tensor& B = t.value(b);
      Tensor& ga = t.grad_buf(a);
      Tensor& gb = t.grad_buf(b);
      const int m = A.dim(0), k = A.dim(1);
      if (B.ndim() == 1) {
        for (int i = 0; i < m; ++i) {
          const double gi = g[i];
          for (int j = 0; j < k; ++j) {
            ga.at(i, j) += gi * B[j];
            gb[j] += gi * A.at(i, j);
          }
        }
      } else {
        const int n = B.dim(1);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const double gij = g.at(i, j);
            for (int p = 0; p < k; ++p) {
              ga.at(i, p) += gij * B.at(p, j);
              gb.at(p, j) += gij * A.at(i, p);
            }
          }
      }
    };
    return id;
  }

  NodeId add(NodeId a, NodeId b) {
    Tensor out;
    kernels::add(value(a), value(b), out);
    const NodeId id = push(std::move(out), {a, b});
    nodes_[id].pull = [a, b](Tape& t, const Tensor& g) {
      t.accumulate_broadcast(a, g);
      t.accumulate_broadcast(b, g);
    };
    return id;
  }

  NodeId mul(NodeId a, NodeId b) {
    Tensor out;
    kernels::mul(value(a), value(b), out);
    const NodeId id = push(std::move(out), {a, b});
    nodes_[id].pull = [a, b](Tape& t, const Tensor& g) {
      t.accumulate_product(a, t.value(b), g);
      t.accumulate_product(b, t.value(a), g);
    };
    return id;
  }

  NodeId sigmoid(NodeId a) {
    Tensor out;
    kernels::sigmoid(value(a), out);
    const NodeId id = push(std::move(out), {a});
    nodes_[id].pull = [a, id](Tape& t, const Tensor& g) {
      const Tensor& y = t.value(id);
      Tensor& ga = t.grad_buf(a);
      for (int i = 0; i < y.numel(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    };
    return id;
  }

  NodeId tanh(NodeId a) {
    Tensor out;
    kernels::tanh(value(a), out);
    const NodeId id = push(std::move(out), {a});
    nodes_[id].pull = [a, id](Tape& t, const Tensor& g) {
      const Tensor& y = t.value(id);
      Tensor& ga = t.grad_buf(a);
      for (int i = 0; i < y.numel(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    };
    return id;
  }

  NodeId softmax(NodeId a) {
    Tensor out;
    kernels::softmax(value(a), out);
    const NodeId id = push(std::move(out), {a});
    nodes_[id].pull = [a, id](Tape& t, const Tensor& g) {
      const Tensor& y = t.value(id);
      Tensor& ga = t.grad_buf(a);
      double dot = 0.0;
      for (int i = 0; i < y.numel(); ++i) dot += g[i] * y[i];
      for (int i = 0; i < y.numel(); ++i) ga[i] += y[i] * (g[i] - dot);
    };
    return id;
  }

  NodeId log_softmax(NodeId a) {
    Tensor out;
    kernels::log_softmax(value(a), out);
    const NodeId id = push(std::move(out), {a});
    nodes_[id].pull = [a, id](Tape& t, const Tensor& g) {
      const Tensor& y = t.value(id);  // y_i = a_i - lse(a); softmax = exp(y)
      Tensor& ga = t.grad_buf(a);
      double gsum = 0.0;
      for (int i = 0; i < y.numel(); ++i) gsum += g[i];
      for (int i = 0; i < y.numel(); ++i) ga[i] += g[i] - std::exp(y[i]) * gsum;
    };
    return id;
  }

  // Row lookup with scatter-add adjoint.
  NodeId embed(NodeId table, int row) {
    Tensor out;
    kernels::embed_row(value(table), row, out);
    const NodeId id = push(std::move(out), {table});
    nodes_[id].pull = [table, row](Tape& t, const Tensor& g) {
      Tensor& gt = t.grad_buf(table);
      const int e = gt.dim(1);
      for (int j = 0; j < e; ++j) gt.at(row, j) += g[j];
    };
    return id;
  }

  NodeId gather(NodeId v, std::vector<int> idx) {
    Tensor out;
    kernels::gather(value(v), idx, out);
    const NodeId id = push(std::move(out), {v});
    nodes_[id].pull = [v, idx = std::move(idx)](Tape& t, const Tensor& g) {
      Tensor& gv = t.grad_buf(v);
      for (int j = 0; j < static_cast<int>(idx.size()); ++j) gv[idx[j]] += g[j];
    };
    return id;
  }

  NodeId concat(std::span<const NodeId> parts) {
    if (parts.empty()) throw DimensionError("concat: nothing to concatenate");
    std::vector<const Tensor*> vals;
    vals.reserve(parts.size());
    for (NodeId p : parts) vals.push_back(&value(p));
    Tensor out;
    kernels::concat(vals, out);
    std::vector<NodeId> ps(parts.begin(), parts.end());
    const NodeId id = push(std::move(out), ps);
    nodes_[id].pull = [ps](Tape& t, const Tensor& g) {
      int o = 0;
      for (NodeId p : ps) {
        Tensor& gp = t.grad_buf(p);
        for (int i = 0; i < gp.numel(); ++i) gp[i] += g[o++];
      }
    };
    return id;
  }
  NodeId concat(std::initializer_list<NodeId> parts) {
    return concat(std::span<const NodeId>(parts.begin(), parts.size()));
  }
  NodeId concat(const std::vector<NodeId>& parts) {
    return concat(std::span<const NodeId>(parts.data(), parts.size()));
  }

  NodeId sum(NodeId a) {
    Tensor out;
    kernels::reduce_sum(value(a), out);
    const NodeId id = push(std::move(out), {a});
    nodes_[id].pull = [a](Tape& t, const Tensor& g) {
      Tensor& ga = t.grad_buf(a);
      for (int i = 0; i < ga.numel(); ++i) ga[i] += g[0];
    };
    return id;
  }

  // Max reduction; the subgradient flows to the lowest-index maximizer.
  NodeId max(NodeId a) {
    Tensor out;
    int arg = 0;
    kernels::reduce_max(value(a), out, &arg);
    const NodeId id = push(std::move(out), {a});
    nodes_[id].pull = [a, arg](Tape& t, const Tensor& g) { t.grad_buf(a)[arg] += g[0]; };
    return id;
  }

  NodeId scale_add(NodeId a, double alpha, double beta) {
    Tensor out;
    kernels::scale_add(value(a), alpha, beta, out);
    const NodeId id = push(std::move(out), {a});
    nodes_[id].pull = [a, alpha](Tape& t, const Tensor& g) {
      Tensor& ga = t.grad_buf(a);
      for (int i = 0; i < ga.numel(); ++i) ga[i] += alpha * g[i];
    };
    return id;
  }

  // ---- composed helpers ----

  NodeId pick(NodeId v, int i) { return gather(v, std::vector<int>{i}); }
  NodeId neg(NodeId a) { return scale_add(a, -1.0, 0.0); }
  NodeId sub(NodeId a, NodeId b) { return add(a, neg(b)); }

  // ---- access & reverse sweep ----

  const Tensor& value(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  std::size_t size() const { return nodes_.size(); }

  // Computes d(root)/d(node) for every node, then adds leaf gradients into
  // their parameter sinks. May be called repeatedly; sinks accumulate.
  void backward(NodeId root) {
    if (root < 0 || root >= static_cast<int>(nodes_.size()))
      throw ContractError("backward: root is not a tape node");
    if (value(root).numel() != 1) throw ContractError("backward: root must be scalar");
    grads_.assign(nodes_.size(), Tensor());
    grad_buf(root)[0] = 1.0;
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      if (grads_[static_cast<std::size_t>(id)].empty()) continue;
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.pull) n.pull(*this, grads_[static_cast<std::size_t>(id)]);
      if (n.sink) {
        const Tensor& g = grads_[static_cast<std::size_t>(id)];
        for (int i = 0; i < g.numel(); ++i) (*n.sink)[i] += g[i];
      }
    }
  }

  // Gradient of the last backward() root with respect to this node
  // (zeros when the node does not influence the root).
  const Tensor& grad(NodeId id) {
    if (grads_.size() != nodes_.size()) throw ContractError("grad: run backward first");
    return grad_buf(id);
  }

 private:
  struct Node {
    Tensor value;
    std::vector<NodeId> parents;
    std::function<void(Tape&, const Tensor&)> pull;
    Tensor* sink = nullptr;
  };

  NodeId push(Tensor value, std::vector<NodeId> parents) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  Tensor& grad_buf(NodeId id) {
    Tensor& g = grads_[static_cast<std::size_t>(id)];
    if (g.empty()) g = Tensor(nodes_[static_cast<std::size_t>(id)].value.shape());
    return g;
  }

  // Adjoint of broadcastable add: reduce when the operand was scalar.
  void accumulate_broadcast(NodeId a, const Tensor& g) {
    Tensor& ga = grad_buf(a);
    if (ga.numel() == g.numel()) {
      for (int i = 0; i < g.numel(); ++i) ga[i] += g[i];
    } else {
      double s = 0.0;
      for (int i = 0; i < g.numel(); ++i) s += g[i];
      ga[0] += s;
    }
  }

  // Adjoint of broadcastable mul: ga += g * other, reduced if a was scalar.
  void accumulate_product(NodeId a, const Tensor& other, const Tensor& g) {
    Tensor& ga = grad_buf(a);
    if (ga.numel() == g.numel()) {
      if (other.numel() == 1) {
        for (int i = 0; i < g.numel(); ++i) ga[i] += g[i] * other[0];
      } else {
        for (int i = 0; i < g.numel(); ++i) ga[i] += g[i] * other[i];
      }
    } else {
      double s = 0.0;
      for (int i = 0; i < g.numel(); ++i) s += g[i] * other[i];
      ga[0] += s;
    }
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

/// Eager evaluation with the same operation surface as Tape, for
/// gradient-free forward passes. Results live in an internal arena that is
/// recycled by reset(); handles obtained before a reset become invalid.
class ValueBackend {
 public:
  using Handle = const Tensor*;

  Handle constant(const Tensor& t) { return &t; }

  Handle matmul(Handle a, Handle b) {
    Tensor& o = alloc();
    kernels::matmul(*a, *b, o);
    return &o;
  }
  Handle add(Handle a, Handle b) {
    Tensor& o = alloc();
    kernels::add(*a, *b, o);
    return &o;
  }
  Handle mul(Handle a, Handle b) {
    Tensor& o = alloc();
    kernels::mul(*a, *b, o);
    return &o;
  }
  Handle sigmoid(Handle a) {
    Tensor& o = alloc();
    kernels::sigmoid(*a, o);
    return &o;
  }
  Handle tanh(Handle a) {
    Tensor& o = alloc();
    kernels::tanh(*a, o);
    return &o;
  }
  Handle softmax(Handle a) {
    Tensor& o = alloc();
    kernels::softmax(*a, o);
    return &o;
  }
  Handle log_softmax(Handle a) {
    Tensor& o = alloc();
    kernels::log_softmax(*a, o);
    return &o;
  }
  Handle embed(Handle table, int row) {
    Tensor& o = alloc();
    kernels::embed_row(*table, row, o);
    return &o;
  }
  Handle gather(Handle v, std::vector<int> idx) {
    Tensor& o = alloc();
    kernels::gather(*v, idx, o);
    return &o;
  }
  Handle concat(std::span<const Handle> parts) {
    Tensor& o = alloc();
    std::vector<const Tensor*> vals(parts.begin(), parts.end());
    kernels::concat(vals, o);
    return &o;
  }
  Handle concat(std::initializer_list<Handle> parts) {
    return concat(std::span<const Handle>(parts.begin(), parts.size()));
  }
  Handle concat(const std::vector<Handle>& parts) {
    return concat(std::span<const Handle>(parts.data(), parts.size()));
  }
  Handle sum(Handle a) {
    Tensor& o = alloc();
    kernels::reduce_sum(*a, o);
    return &o;
  }
  Handle max(Handle a) {
    Tensor& o = alloc();
    kernels::reduce_max(*a, o);
    return &o;
  }
  Handle scale_add(Handle a, double alpha, double beta) {
    Tensor& o = alloc();
    kernels::scale_add(*a, alpha, beta, o);
    return &o;
  }
  Handle pick(Handle v, int i) { return gather(v, std::vector<int>{i}); }

  const Tensor& value(Handle h) const { return *h; }

  void reset() { used_ = 0; }

 private:
  Tensor& alloc() {
    if (used_ == pool_.size()) pool_.push_back(std::make_unique<Tensor>());
    return *pool_[used_++];
  }
  std::vector<std::unique_ptr<Tensor>> pool_;
  std::size_t used_ = 0;
};

}  // namespace searnn
