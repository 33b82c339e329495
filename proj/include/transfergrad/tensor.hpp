#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "transfergrad/errors.hpp"

namespace tg {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

// Dense multi-dimensional array with contiguous row-major storage (last
// dimension fastest). Values are immutable by convention once an operation
// has produced them; mutating accessors exist for construction and for the
// optimizer's in-place parameter updates.
template <typename Scalar>
class TensorT {
 public:
  using ArrayType = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using MatrixRM =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  TensorT() = default;

  explicit TensorT(Shape shape)
      : shape_(std::move(shape)), data_(ArrayType::Zero(shape_numel(shape_))) {
    check_shape();
  }

  TensorT(Shape shape, ArrayType data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_numel(shape_))
      throw ShapeError("tensor: data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

  static TensorT full(Shape shape, Scalar v) {
    TensorT t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  static TensorT scalar(Scalar v) { return full({}, v); }

  static TensorT from(Shape shape, std::initializer_list<Scalar> vals) {
    TensorT t(std::move(shape));
    if (Index(vals.size()) != t.numel())
      throw ShapeError("tensor: initializer length " +
                       std::to_string(vals.size()) + " does not match shape " +
                       shape_str(t.shape()));
    Index i = 0;
    for (Scalar v : vals) t.data_[i++] = v;
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return Index(shape_.size()); }
  Index dim(Index i) const { return shape_[size_t(i)]; }
  Index numel() const { return data_.size(); }
  bool is_scalar() const { return shape_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  ArrayType& array() { return data_; }
  const ArrayType& array() const { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar value() const {
    if (numel() != 1)
      throw ShapeError("tensor: value() on non-scalar " + shape_str(shape_));
    return data_[0];
  }

  // Rank-2 view as a row-major matrix.
  Eigen::Map<const MatrixRM> matrix() const {
    require_rank(2, "matrix view");
    return Eigen::Map<const MatrixRM>(data_.data(), shape_[0], shape_[1]);
  }
  Eigen::Map<MatrixRM> matrix() {
    require_rank(2, "matrix view");
    return Eigen::Map<MatrixRM>(data_.data(), shape_[0], shape_[1]);
  }

  template <typename T>
  TensorT<T> cast() const {
    return TensorT<T>(shape_, data_.template cast<T>());
  }

  TensorT reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " +
                       shape_str(shape));
    return TensorT(std::move(shape), data_);
  }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  bool all_finite() const { return data_.isFinite().all(); }

  void require_rank(Index r, const char* what) const {
    if (rank() != r)
      throw ShapeError(std::string(what) + ": expected rank " +
                       std::to_string(r) + ", got " + shape_str(shape_));
  }

 private:
  void check_shape() const {
    for (Index d : shape_)
      if (d <= 0)
        throw ShapeError("tensor: non-positive dimension in " +
                         shape_str(shape_));
  }

  Shape shape_;
  ArrayType data_;
};

using Tensor = TensorT<float>;
using Image = Tensor;  // rank-3 (C,H,W), values in [0,1]

namespace detail {

template <typename Scalar>
void require_same_shape(const char* op, const TensorT<Scalar>& a,
                        const TensorT<Scalar>& b) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise primitives. No broadcasting beyond scalar*tensor: mixed shapes
// are errors.
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require_same_shape("add", a, b);
  return TensorT<S>(a.shape(), a.array() + b.array());
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require_same_shape("sub", a, b);
  return TensorT<S>(a.shape(), a.array() - b.array());
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require_same_shape("mul", a, b);
  return TensorT<S>(a.shape(), a.array() * b.array());
}

template <typename S>
TensorT<S> scale(const TensorT<S>& a, S c) {
  return TensorT<S>(a.shape(), a.array() * c);
}

template <typename S>
TensorT<S> relu(const TensorT<S>& a) {
  return TensorT<S>(a.shape(), a.array().max(S(0)));
}

// Elementwise clamp to [lo, hi].
template <typename S>
TensorT<S> clamp(const TensorT<S>& a, S lo, S hi) {
  return TensorT<S>(a.shape(), a.array().max(lo).min(hi));
}

template <typename S>
S max_abs_diff(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require_same_shape("max_abs_diff", a, b);
  if (a.numel() == 0) return S(0);
  return (a.array() - b.array()).abs().maxCoeff();
}

// Elementwise sign with sign(0) == 0.
template <typename S>
TensorT<S> sign(const TensorT<S>& a) {
  TensorT<S> out(a.shape());
  for (Index i = 0; i < a.numel(); ++i) {
    S v = a[i];
    out[i] = v > S(0) ? S(1) : (v < S(0) ? S(-1) : S(0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra primitives.
// ---------------------------------------------------------------------------

// (n,k) x (k,m) -> (n,m)
template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  a.require_rank(2, "matmul lhs");
  b.require_rank(2, "matmul rhs");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions differ, " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  TensorT<S> out({a.dim(0), b.dim(1)});
  out.matrix().noalias() = a.matrix() * b.matrix();
  return out;
}

// (n,m) + row vector (m), added to every row.
template <typename S>
TensorT<S> bias_add(const TensorT<S>& x, const TensorT<S>& b) {
  x.require_rank(2, "bias_add input");
  b.require_rank(1, "bias_add bias");
  if (x.dim(1) != b.dim(0))
    throw ShapeError("bias_add: width " + std::to_string(x.dim(1)) +
                     " vs bias length " + std::to_string(b.dim(0)));
  TensorT<S> out = x;
  auto m = out.matrix();
  for (Index r = 0; r < m.rows(); ++r)
    m.row(r) += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(b.data(),
                                                                      b.dim(0));
  return out;
}

// (n,c,h,w) + per-channel vector (c).
template <typename S>
TensorT<S> channel_bias_add(const TensorT<S>& x, const TensorT<S>& b) {
  x.require_rank(4, "channel_bias_add input");
  b.require_rank(1, "channel_bias_add bias");
  if (x.dim(1) != b.dim(0))
    throw ShapeError("channel_bias_add: channels " + std::to_string(x.dim(1)) +
                     " vs bias length " + std::to_string(b.dim(0)));
  TensorT<S> out = x;
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  S* p = out.data();
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < c; ++j) {
      const S bv = b[j];
      S* row = p + (i * c + j) * hw;
      for (Index k = 0; k < hw; ++k) row[k] += bv;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution via explicit patch expansion (im2col). Stride 1, zero padding,
// odd kernels only.
// ---------------------------------------------------------------------------

template <typename S>
struct Conv2dGeom {
  Index n, c, h, w;    // input
  Index f, kh, kw;     // kernel
  Index pad;
  Index hout, wout;
};

template <typename S>
Conv2dGeom<S> conv2d_geometry(const TensorT<S>& x, const TensorT<S>& k,
                              Index pad) {
  x.require_rank(4, "conv2d input");
  k.require_rank(4, "conv2d kernel");
  Conv2dGeom<S> g;
  g.n = x.dim(0); g.c = x.dim(1); g.h = x.dim(2); g.w = x.dim(3);
  g.f = k.dim(0); g.kh = k.dim(2); g.kw = k.dim(3);
  g.pad = pad;
  if (k.dim(1) != g.c)
    throw ShapeError("conv2d: kernel channels " + std::to_string(k.dim(1)) +
                     " vs input channels " + std::to_string(g.c));
  if (g.kh % 2 == 0 || g.kw % 2 == 0)
    throw ShapeError("conv2d: kernel must be odd, got " +
                     shape_str(k.shape()));
  if (pad < 0) throw ShapeError("conv2d: negative padding");
  g.hout = g.h + 2 * pad - g.kh + 1;
  g.wout = g.w + 2 * pad - g.kw + 1;
  if (g.hout <= 0 || g.wout <= 0)
    throw ShapeError("conv2d: kernel " + shape_str(k.shape()) +
                     " larger than padded input " + shape_str(x.shape()));
  return g;
}

// Patch matrix of shape (n*hout*wout, c*kh*kw); row (i*hout+ho)*wout+wo.
template <typename S>
TensorT<S> im2col(const TensorT<S>& x, const Conv2dGeom<S>& g) {
  TensorT<S> cols({g.n * g.hout * g.wout, g.c * g.kh * g.kw});
  S* out = cols.data();
  const S* in = x.data();
  const Index patch = g.c * g.kh * g.kw;
  for (Index i = 0; i < g.n; ++i)
    for (Index ho = 0; ho < g.hout; ++ho)
      for (Index wo = 0; wo < g.wout; ++wo) {
        S* row = out + ((i * g.hout + ho) * g.wout + wo) * patch;
        for (Index c = 0; c < g.c; ++c)
          for (Index dy = 0; dy < g.kh; ++dy) {
            const Index hy = ho + dy - g.pad;
            for (Index dx = 0; dx < g.kw; ++dx) {
              const Index wx = wo + dx - g.pad;
              S v = S(0);
              if (hy >= 0 && hy < g.h && wx >= 0 && wx < g.w)
                v = in[((i * g.c + c) * g.h + hy) * g.w + wx];
              row[(c * g.kh + dy) * g.kw + dx] = v;
            }
          }
      }
  return cols;
}

// Scatter-add transpose of im2col.
template <typename S>
void col2im_add(const TensorT<S>& cols, const Conv2dGeom<S>& g,
                TensorT<S>& dx) {
  const S* in = cols.data();
  S* out = dx.data();
  const Index patch = g.c * g.kh * g.kw;
  for (Index i = 0; i < g.n; ++i)
    for (Index ho = 0; ho < g.hout; ++ho)
      for (Index wo = 0; wo < g.wout; ++wo) {
        const S* row = in + ((i * g.hout + ho) * g.wout + wo) * patch;
        for (Index c = 0; c < g.c; ++c)
          for (Index dy = 0; dy < g.kh; ++dy) {
            const Index hy = ho + dy - g.pad;
            if (hy < 0 || hy >= g.h) continue;
            for (Index dx = 0; dx < g.kw; ++dx) {
              const Index wx = wo + dx - g.pad;
              if (wx < 0 || wx >= g.w) continue;
              out[((i * g.c + c) * g.h + hy) * g.w + wx] +=
                  row[(c * g.kh + dy) * g.kw + dx];
            }
          }
      }
}

// Kernel as a (c*kh*kw, f) matrix, column f = flattened filter f.
template <typename S>
TensorT<S> conv2d_kernel_matrix(const TensorT<S>& k) {
  const Index f = k.dim(0), csz = k.numel() / k.dim(0);
  TensorT<S> km({csz, f});
  auto m = km.matrix();
  for (Index j = 0; j < f; ++j)
    for (Index i = 0; i < csz; ++i) m(i, j) = k[j * csz + i];
  return km;
}

// (n,c,h,w) * (f,c,kh,kw) -> (n,f,hout,wout)
template <typename S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& k, Index pad) {
  const auto g = conv2d_geometry(x, k, pad);
  const TensorT<S> cols = im2col(x, g);
  const TensorT<S> km = conv2d_kernel_matrix(k);
  TensorT<S> prod({g.n * g.hout * g.wout, g.f});
  prod.matrix().noalias() = cols.matrix() * km.matrix();
  // (n*hout*wout, f) -> (n, f, hout, wout)
  TensorT<S> out({g.n, g.f, g.hout, g.wout});
  const Index hw = g.hout * g.wout;
  const S* p = prod.data();
  S* o = out.data();
  for (Index i = 0; i < g.n; ++i)
    for (Index r = 0; r < hw; ++r)
      for (Index f = 0; f < g.f; ++f)
        o[(i * g.f + f) * hw + r] = p[(i * hw + r) * g.f + f];
  return out;
}

// ---------------------------------------------------------------------------
// Pooling and reductions.
// ---------------------------------------------------------------------------

// 2x2 max pool, stride 2. Even spatial dims required. argmax (flat input
// index per output element, first maximum wins) is optionally exported for
// the backward pass.
template <typename S>
TensorT<S> maxpool2(const TensorT<S>& x, std::vector<Index>* argmax = nullptr) {
  x.require_rank(4, "maxpool2 input");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("maxpool2: spatial dims must be even, got " +
                     shape_str(x.shape()));
  TensorT<S> out({n, c, h / 2, w / 2});
  if (argmax) argmax->assign(size_t(out.numel()), 0);
  const S* in = x.data();
  S* o = out.data();
  Index oi = 0;
  for (Index i = 0; i < n * c; ++i) {
    const S* plane = in + i * h * w;
    for (Index y = 0; y < h; y += 2)
      for (Index xw = 0; xw < w; xw += 2) {
        Index best = y * w + xw;
        S bv = plane[best];
        const Index cand[3] = {y * w + xw + 1, (y + 1) * w + xw,
                               (y + 1) * w + xw + 1};
        for (Index k = 0; k < 3; ++k)
          if (plane[cand[k]] > bv) { bv = plane[cand[k]]; best = cand[k]; }
        o[oi] = bv;
        if (argmax) (*argmax)[size_t(oi)] = i * h * w + best;
        ++oi;
      }
  }
  return out;
}

template <typename S>
TensorT<S> sum_all(const TensorT<S>& a) {
  return TensorT<S>::scalar(a.array().sum());
}

// Mean over all elements; reduces a per-example loss vector to the batch
// mean.
template <typename S>
TensorT<S> mean_all(const TensorT<S>& a) {
  return TensorT<S>::scalar(a.array().sum() / S(a.numel()));
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy.
// ---------------------------------------------------------------------------

template <typename S>
void require_labels(const TensorT<S>& logits, const std::vector<int>& labels) {
  logits.require_rank(2, "softmax_cross_entropy logits");
  if (Index(labels.size()) != logits.dim(0))
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(logits.dim(0)) + " rows");
  for (int y : labels)
    if (y < 0 || Index(y) >= logits.dim(1))
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(y) +
                       " out of range [0," + std::to_string(logits.dim(1)) +
                       ")");
}

// Numerically stable row softmax; probs has the logits' shape.
template <typename S>
TensorT<S> softmax_rows(const TensorT<S>& logits) {
  logits.require_rank(2, "softmax logits");
  TensorT<S> probs(logits.shape());
  const Index n = logits.dim(0), k = logits.dim(1);
  for (Index i = 0; i < n; ++i) {
    const S* z = logits.data() + i * k;
    S* p = probs.data() + i * k;
    S mx = z[0];
    for (Index j = 1; j < k; ++j) mx = std::max(mx, z[j]);
    S sum = S(0);
    for (Index j = 0; j < k; ++j) { p[j] = std::exp(z[j] - mx); sum += p[j]; }
    for (Index j = 0; j < k; ++j) p[j] /= sum;
  }
  return probs;
}

// Per-row loss vector (n,). probs_out, when given, receives the softmax for
// reuse in the backward rule.
template <typename S>
TensorT<S> softmax_cross_entropy(const TensorT<S>& logits,
                                 const std::vector<int>& labels,
                                 TensorT<S>* probs_out = nullptr) {
  require_labels(logits, labels);
  const Index n = logits.dim(0), k = logits.dim(1);
  TensorT<S> loss({n});
  TensorT<S> probs(logits.shape());
  for (Index i = 0; i < n; ++i) {
    const S* z = logits.data() + i * k;
    S* p = probs.data() + i * k;
    S mx = z[0];
    for (Index j = 1; j < k; ++j) mx = std::max(mx, z[j]);
    S sum = S(0);
    for (Index j = 0; j < k; ++j) { p[j] = std::exp(z[j] - mx); sum += p[j]; }
    const S lse = mx + std::log(sum);
    for (Index j = 0; j < k; ++j) p[j] /= sum;
    loss[i] = lse - z[labels[size_t(i)]];
  }
  if (probs_out) *probs_out = std::move(probs);
  return loss;
}

// Rank-1 convenience: single logit vector against one label.
template <typename S>
S softmax_cross_entropy(const TensorT<S>& logits, int label) {
  logits.require_rank(1, "softmax_cross_entropy logits");
  const TensorT<S> l2 = logits.reshaped({Index(1), logits.dim(0)});
  return softmax_cross_entropy(l2, std::vector<int>{label}).value();
}

template <typename S>
Index argmax(const TensorT<S>& v) {
  Index best = 0;
  for (Index i = 1; i < v.numel(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace tg
