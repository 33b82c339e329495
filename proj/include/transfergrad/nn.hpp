#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "transfergrad/autodiff.hpp"
#include "transfergrad/data.hpp"
#include "transfergrad/rng.hpp"
#include "transfergrad/tensor.hpp"

namespace tg {

enum class ModelKind { Mlp, Cnn };

// Shape of a small classifier. MLP: flatten, then a dense+relu stack over
// `hidden`, then a dense head. CNN: conv(kernel, same padding)+relu+maxpool2
// per entry of `conv_channels`, then the MLP tail.
struct ArchitectureSpec {
  ModelKind kind = ModelKind::Mlp;
  std::vector<int> conv_channels;  // cnn only
  int kernel = 3;                  // odd
  std::vector<int> hidden;
  Index in_channels = 1, in_height = 32, in_width = 32;
  int classes = 10;
  // bias-free relu stacks are positively homogeneous: rescaling the input
  // rescales every logit, which keeps prediction ranking scale-invariant
  bool bias = true;

  void validate() const;
  Index flat_input() const { return in_channels * in_height * in_width; }
  std::string describe() const;
};

struct TrainConfig {
  int epochs = 10;
  int batch = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  uint64_t seed = 0;

  void validate() const;
};

struct TrainMeta {
  uint64_t seed = 0;
  int epochs = 0;
  double final_train_accuracy = 0.0;
  double final_test_accuracy = 0.0;
};

struct EpochMetrics {
  int epoch;
  double train_loss;
  double train_accuracy;
  double test_accuracy;
};

template <typename Scalar>
struct NamedTensorT {
  std::string name;
  TensorT<Scalar> value;
};

// f(x; theta): an architecture plus named parameters. Instances are plain
// values; prediction never mutates them, so a trained classifier can be
// shared read-only across threads.
template <typename Scalar>
struct ClassifierT {
  ArchitectureSpec spec;
  std::vector<NamedTensorT<Scalar>> params;
  TrainMeta meta;

  template <typename T>
  ClassifierT<T> cast() const {
    ClassifierT<T> out;
    out.spec = spec;
    out.meta = meta;
    for (const auto& p : params)
      out.params.push_back({p.name, p.value.template cast<T>()});
    return out;
  }

  // Builds the forward graph from an already-registered batch variable and
  // one variable per parameter (same order as `params`).
  typename GraphT<Scalar>::Var logits(
      GraphT<Scalar>& g, typename GraphT<Scalar>::Var batch,
      const std::vector<typename GraphT<Scalar>::Var>& param_vars) const {
    using Var = typename GraphT<Scalar>::Var;
    if (param_vars.size() != params.size())
      throw Error("classifier: wrong number of parameter variables");
    size_t pi = 0;
    auto next = [&]() -> Var { return param_vars[pi++]; };
    Var h = batch;
    const Index n = g.value(batch).dim(0);
    if (spec.kind == ModelKind::Cnn) {
      for (size_t li = 0; li < spec.conv_channels.size(); ++li) {
        const Var w = next();
        h = g.conv2d(h, w, spec.kernel / 2);
        if (spec.bias) h = g.channel_bias_add(h, next());
        h = g.relu(h);
        h = g.maxpool2(h);
      }
    }
    h = g.reshape(h, {n, g.value(h).numel() / n});
    for (size_t li = 0; li < spec.hidden.size(); ++li) {
      h = g.matmul(h, next());
      if (spec.bias) h = g.bias_add(h, next());
      h = g.relu(h);
    }
    h = g.matmul(h, next());
    if (spec.bias) h = g.bias_add(h, next());
    return h;
  }

  // Forward pass with frozen parameters.
  TensorT<Scalar> predict_logits(const TensorT<Scalar>& batch) const {
    GraphT<Scalar> g;
    auto x = g.constant(batch);
    std::vector<typename GraphT<Scalar>::Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(g.constant(p.value));
    return g.value(logits(g, x, vars));
  }

  int predict(const TensorT<Scalar>& image) const {
    image.require_rank(3, "predict input");
    const auto batch =
        image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
    const auto l = predict_logits(batch);
    return int(argmax(l.reshaped({l.numel()})));
  }
};

using Classifier = ClassifierT<float>;

// Seeded uniform fan-in initialization; identical (spec, seed) pairs yield
// bitwise-identical parameters.
Classifier build_classifier(const ArchitectureSpec& spec, uint64_t seed);

std::vector<EpochMetrics> train(Classifier& model, const Dataset& data,
                                const TrainConfig& cfg);

double accuracy(const Classifier& model, const Dataset& data, Split split);

// Loss and gradient with respect to the input pixels; parameters untouched.
std::pair<float, Tensor> loss_and_input_grad(const Classifier& model,
                                             const Tensor& image, int label);

// Generic-scalar variant used by the float/double consistency checks.
template <typename Scalar>
std::pair<Scalar, TensorT<Scalar>> loss_and_input_grad_t(
    const ClassifierT<Scalar>& model, const TensorT<Scalar>& image,
    int label) {
  image.require_rank(3, "loss_and_input_grad input");
  if (image.dim(0) != model.spec.in_channels ||
      image.dim(1) != model.spec.in_height ||
      image.dim(2) != model.spec.in_width)
    throw ShapeError("loss_and_input_grad: image shape " +
                     shape_str(image.shape()) + " does not match model input");
  if (label < 0 || label >= model.spec.classes)
    throw ShapeError("loss_and_input_grad: label " + std::to_string(label) +
                     " out of range");
  GraphT<Scalar> g;
  auto x = g.input(
      image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}), true);
  std::vector<typename GraphT<Scalar>::Var> vars;
  for (const auto& p : model.params) vars.push_back(g.constant(p.value));
  auto logit_var = model.logits(g, x, vars);
  auto loss = g.mean(g.softmax_cross_entropy(logit_var, {label}));
  auto grads = g.backward(loss);
  TensorT<Scalar> grad =
      GraphT<Scalar>::leaf_gradient(grads, x).reshaped(image.shape());
  return {g.value(loss).value(), std::move(grad)};
}

// Model container: magic, version, architecture, train metadata, named
// little-endian float32 tensors, trailing FNV-1a checksum.
void save_model(const Classifier& model, const std::string& path);
Classifier load_model(const std::string& path);

}  // namespace tg
