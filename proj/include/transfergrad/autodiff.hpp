#pragma once

#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "transfergrad/tensor.hpp"

namespace tg {

// Reverse-mode tape. Operations append nodes in topological order (inputs
// always precede their consumers); backward() replays the tape in reverse.
// A graph is confined to one thread; independent graphs may run in parallel.
template <typename Scalar>
class GraphT {
 public:
  using Var = int;
  using T = TensorT<Scalar>;
  using GradMap = std::unordered_map<Var, T>;

  // Marked differentiable leaf.
  Var input(T value, bool requires_grad = true) {
    Node n;
    n.op = Op::Input;
    n.value = std::move(value);
    n.needs_grad = requires_grad;
    return push(std::move(n));
  }

  // Non-differentiable value (frozen parameters, labels encoded elsewhere).
  Var constant(T value) { return input(std::move(value), false); }

  const T& value(Var v) const { return at(v).value; }
  Index size() const { return Index(nodes_.size()); }

  Var add(Var a, Var b) { return binary(Op::Add, a, b, tg::add(val(a), val(b))); }
  Var sub(Var a, Var b) { return binary(Op::Sub, a, b, tg::sub(val(a), val(b))); }
  Var mul(Var a, Var b) { return binary(Op::Mul, a, b, tg::mul(val(a), val(b))); }

  Var scale(Var a, Scalar c) {
    Node n = unary(Op::Scale, a, tg::scale(val(a), c));
    n.scalar = c;
    return push(std::move(n));
  }

  Var matmul(Var a, Var b) {
    return binary(Op::Matmul, a, b, tg::matmul(val(a), val(b)));
  }

  Var bias_add(Var x, Var b) {
    return binary(Op::BiasAdd, x, b, tg::bias_add(val(x), val(b)));
  }

  Var channel_bias_add(Var x, Var b) {
    return binary(Op::ChannelBiasAdd, x, b,
                  tg::channel_bias_add(val(x), val(b)));
  }

  Var conv2d(Var x, Var k, Index pad) {
    const auto g = conv2d_geometry(val(x), val(k), pad);
    Node n;
    n.op = Op::Conv2d;
    n.a = x;
    n.b = k;
    n.pad = pad;
    n.aux = im2col(val(x), g);  // patch matrix kept for the backward pass
    {
      const T km = conv2d_kernel_matrix(val(k));
      T prod({g.n * g.hout * g.wout, g.f});
      prod.matrix().noalias() = n.aux.matrix() * km.matrix();
      T out({g.n, g.f, g.hout, g.wout});
      const Index hw = g.hout * g.wout;
      for (Index i = 0; i < g.n; ++i)
        for (Index r = 0; r < hw; ++r)
          for (Index f = 0; f < g.f; ++f)
            out[(i * g.f + f) * hw + r] = prod[(i * hw + r) * g.f + f];
      n.value = std::move(out);
    }
    n.needs_grad = at(x).needs_grad || at(k).needs_grad;
    return push(std::move(n));
  }

  Var relu(Var a) { return push(unary(Op::Relu, a, tg::relu(val(a)))); }

  Var maxpool2(Var a) {
    Node n;
    n.op = Op::MaxPool2;
    n.a = a;
    n.value = tg::maxpool2(val(a), &n.arg);
    n.needs_grad = at(a).needs_grad;
    return push(std::move(n));
  }

  Var reshape(Var a, Shape shape) {
    return push(unary(Op::Reshape, a, val(a).reshaped(std::move(shape))));
  }

  Var sum(Var a) { return push(unary(Op::Sum, a, sum_all(val(a)))); }
  Var mean(Var a) { return push(unary(Op::Mean, a, mean_all(val(a)))); }

  // Per-row softmax cross-entropy against integer labels; output shape (n,).
  Var softmax_cross_entropy(Var logits, std::vector<int> labels) {
    Node n;
    n.op = Op::SoftmaxXent;
    n.a = logits;
    n.labels = std::move(labels);
    n.value = tg::softmax_cross_entropy(val(logits), n.labels, &n.aux);
    n.needs_grad = at(logits).needs_grad;
    return push(std::move(n));
  }

  // Gradient of a scalar loss for every marked leaf. Leaves the loss does
  // not reach receive zero gradients of the leaf's shape. Deterministic:
  // re-running on the same tape is bitwise identical.
  GradMap backward(Var loss) const {
    const Node& ln = at(loss);
    if (!ln.value.is_scalar() && ln.value.numel() != 1)
      throw ShapeError("backward: loss must be scalar, got " +
                       shape_str(ln.value.shape()));

    std::vector<T> grads(nodes_.size());
    std::vector<char> touched(nodes_.size(), 0);
    auto accum = [&](Var v, const T& g) {
      if (!at(v).needs_grad) return;
      if (!touched[size_t(v)]) {
        grads[size_t(v)] = g;
        touched[size_t(v)] = 1;
      } else {
        grads[size_t(v)].array() += g.array();
      }
    };

    if (ln.needs_grad) {
      grads[size_t(loss)] = T::full(ln.value.shape(), Scalar(1));
      touched[size_t(loss)] = 1;
    }

    for (Var v = loss; v >= 0; --v) {
      if (!touched[size_t(v)]) continue;
      const Node& n = at(v);
      const T& g = grads[size_t(v)];
      switch (n.op) {
        case Op::Input:
          break;
        case Op::Add:
          accum(n.a, g);
          accum(n.b, g);
          break;
        case Op::Sub: {
          accum(n.a, g);
          if (at(n.b).needs_grad) accum(n.b, tg::scale(g, Scalar(-1)));
          break;
        }
        case Op::Mul:
          if (at(n.a).needs_grad) accum(n.a, tg::mul(g, val(n.b)));
          if (at(n.b).needs_grad) accum(n.b, tg::mul(g, val(n.a)));
          break;
        case Op::Scale:
          if (at(n.a).needs_grad) accum(n.a, tg::scale(g, n.scalar));
          break;
        case Op::Matmul: {
          if (at(n.a).needs_grad) {
            T da({val(n.a).dim(0), val(n.a).dim(1)});
            da.matrix().noalias() = g.matrix() * val(n.b).matrix().transpose();
            accum(n.a, da);
          }
          if (at(n.b).needs_grad) {
            T db({val(n.b).dim(0), val(n.b).dim(1)});
            db.matrix().noalias() = val(n.a).matrix().transpose() * g.matrix();
            accum(n.b, db);
          }
          break;
        }
        case Op::BiasAdd: {
          accum(n.a, g);
          if (at(n.b).needs_grad) {
            T db({val(n.b).dim(0)});
            auto gm = g.matrix();
            for (Index r = 0; r < gm.rows(); ++r)
              for (Index c = 0; c < gm.cols(); ++c) db[c] += gm(r, c);
            accum(n.b, db);
          }
          break;
        }
        case Op::ChannelBiasAdd: {
          accum(n.a, g);
          if (at(n.b).needs_grad) {
            T db({val(n.b).dim(0)});
            const Index nn = g.dim(0), c = g.dim(1), hw = g.dim(2) * g.dim(3);
            for (Index i = 0; i < nn; ++i)
              for (Index j = 0; j < c; ++j) {
                const Scalar* row = g.data() + (i * c + j) * hw;
                Scalar s = Scalar(0);
                for (Index k = 0; k < hw; ++k) s += row[k];
                db[j] += s;
              }
            accum(n.b, db);
          }
          break;
        }
        case Op::Conv2d: {
          const auto geom = conv2d_geometry(val(n.a), val(n.b), n.pad);
          const Index hw = geom.hout * geom.wout;
          // regroup grad (n,f,hout,wout) -> (n*hout*wout, f)
          T gm({geom.n * hw, geom.f});
          for (Index i = 0; i < geom.n; ++i)
            for (Index r = 0; r < hw; ++r)
              for (Index f = 0; f < geom.f; ++f)
                gm[(i * hw + r) * geom.f + f] = g[(i * geom.f + f) * hw + r];
          if (at(n.b).needs_grad) {
            T dkm({geom.c * geom.kh * geom.kw, geom.f});
            dkm.matrix().noalias() = n.aux.matrix().transpose() * gm.matrix();
            // (c*kh*kw, f) -> (f,c,kh,kw)
            T dk(val(n.b).shape());
            const Index csz = geom.c * geom.kh * geom.kw;
            for (Index f = 0; f < geom.f; ++f)
              for (Index i = 0; i < csz; ++i) dk[f * csz + i] = dkm[i * geom.f + f];
            accum(n.b, dk);
          }
          if (at(n.a).needs_grad) {
            const T km = conv2d_kernel_matrix(val(n.b));
            T dcols({geom.n * hw, geom.c * geom.kh * geom.kw});
            dcols.matrix().noalias() = gm.matrix() * km.matrix().transpose();
            T dx(val(n.a).shape());
            col2im_add(dcols, geom, dx);
            accum(n.a, dx);
          }
          break;
        }
        case Op::Relu: {
          if (at(n.a).needs_grad) {
            T da(g.shape());
            const T& x = val(n.a);
            // subgradient 0 at exactly 0
            for (Index i = 0; i < x.numel(); ++i)
              da[i] = x[i] > Scalar(0) ? g[i] : Scalar(0);
            accum(n.a, da);
          }
          break;
        }
        case Op::MaxPool2: {
          if (at(n.a).needs_grad) {
            T da(val(n.a).shape());
            for (Index i = 0; i < g.numel(); ++i)
              da[n.arg[size_t(i)]] += g[i];
            accum(n.a, da);
          }
          break;
        }
        case Op::Reshape:
          if (at(n.a).needs_grad) accum(n.a, g.reshaped(val(n.a).shape()));
          break;
        case Op::Sum: {
          if (at(n.a).needs_grad)
            accum(n.a, T::full(val(n.a).shape(), g[0]));
          break;
        }
        case Op::Mean: {
          if (at(n.a).needs_grad)
            accum(n.a,
                  T::full(val(n.a).shape(), g[0] / Scalar(val(n.a).numel())));
          break;
        }
        case Op::SoftmaxXent: {
          if (at(n.a).needs_grad) {
            const T& probs = n.aux;
            T da(probs.shape());
            const Index rows = probs.dim(0), k = probs.dim(1);
            for (Index i = 0; i < rows; ++i) {
              const Scalar gi = g[i];
              const Scalar* p = probs.data() + i * k;
              Scalar* d = da.data() + i * k;
              for (Index j = 0; j < k; ++j) d[j] = gi * p[j];
              d[n.labels[size_t(i)]] -= gi;
            }
            accum(n.a, da);
          }
          break;
        }
      }
    }

    GradMap out;
    for (Var v = 0; v < Var(nodes_.size()); ++v) {
      const Node& n = at(v);
      if (n.op == Op::Input && n.needs_grad) {
        if (touched[size_t(v)])
          out.emplace(v, std::move(grads[size_t(v)]));
        else
          out.emplace(v, T::zeros(n.value.shape()));
      }
    }
    return out;
  }

  // Gradient of one marked leaf; errors if v was not a marked leaf.
  static const T& leaf_gradient(const GradMap& grads, Var v) {
    auto it = grads.find(v);
    if (it == grads.end())
      throw Error("backward: variable " + std::to_string(v) +
                  " is not a marked leaf of this record");
    return it->second;
  }

 private:
  enum class Op {
    Input, Add, Sub, Mul, Scale, Matmul, BiasAdd, ChannelBiasAdd,
    Conv2d, Relu, MaxPool2, Reshape, Sum, Mean, SoftmaxXent,
  };

  struct Node {
    Op op = Op::Input;
    Var a = -1, b = -1;
    T value;
    Scalar scalar = Scalar(0);
    Index pad = 0;
    T aux;                    // im2col patches / softmax probabilities
    std::vector<Index> arg;   // maxpool argmax
    std::vector<int> labels;  // cross-entropy targets
    bool needs_grad = false;
  };

  const Node& at(Var v) const { return nodes_[size_t(v)]; }
  const T& val(Var v) const { return nodes_[size_t(v)].value; }

  Node unary(Op op, Var a, T value) {
    Node n;
    n.op = op;
    n.a = a;
    n.value = std::move(value);
    n.needs_grad = at(a).needs_grad;
    return n;
  }

  Var binary(Op op, Var a, Var b, T value) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.value = std::move(value);
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    return push(std::move(n));
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
};

using Graph = GraphT<float>;

// Central finite differences, the independent gradient oracle. fn must be a
// deterministic map from a tensor to a scalar.
template <typename S>
TensorT<S> finite_diff_gradient(const std::function<S(const TensorT<S>&)>& fn,
                                const TensorT<S>& x, S h) {
  if (!(h > S(0))) throw Error("finite_diff_gradient: step must be positive");
  TensorT<S> grad(x.shape());
  TensorT<S> probe = x;
  for (Index i = 0; i < x.numel(); ++i) {
    const S orig = probe[i];
    probe[i] = orig + h;
    const S up = fn(probe);
    probe[i] = orig - h;
    const S down = fn(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (S(2) * h);
  }
  return grad;
}

}  // namespace tg
