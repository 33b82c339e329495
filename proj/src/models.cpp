#include "transfergrad/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "transfergrad/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "model container assumes a little-endian host");

namespace tg {

void ArchitectureSpec::validate() const {
  if (classes < 2) throw ConfigError("architecture: need at least 2 classes");
  if (in_channels < 1 || in_height < 1 || in_width < 1)
    throw ConfigError("architecture: bad input shape");
  if (kind == ModelKind::Cnn) {
    if (conv_channels.empty())
      throw ConfigError("architecture: cnn needs at least one conv layer");
    if (kernel < 1 || kernel % 2 == 0)
      throw ConfigError("architecture: conv kernel must be odd");
    Index h = in_height, w = in_width;
    for (size_t i = 0; i < conv_channels.size(); ++i) {
      if (conv_channels[i] < 1)
        throw ConfigError("architecture: non-positive channel count");
      if (h % 2 != 0 || w % 2 != 0)
        throw ConfigError(
            "architecture: spatial dims must stay even through every "
            "pooling stage, got " +
            std::to_string(h) + "x" + std::to_string(w));
      h /= 2;
      w /= 2;
    }
  } else if (!conv_channels.empty()) {
    throw ConfigError("architecture: conv_channels given for an mlp");
  }
  for (int hdim : hidden)
    if (hdim < 1) throw ConfigError("architecture: non-positive hidden width");
}

std::string ArchitectureSpec::describe() const {
  std::string s = kind == ModelKind::Cnn ? "cnn" : "mlp";
  s += " " + std::to_string(in_channels) + "x" + std::to_string(in_height) +
       "x" + std::to_string(in_width);
  if (kind == ModelKind::Cnn) {
    s += " conv=";
    for (size_t i = 0; i < conv_channels.size(); ++i)
      s += (i ? "," : "") + std::to_string(conv_channels[i]);
  }
  s += " hidden=";
  for (size_t i = 0; i < hidden.size(); ++i)
    s += (i ? "," : "") + std::to_string(hidden[i]);
  s += " classes=" + std::to_string(classes);
  return s;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train: negative epochs");
  if (batch < 1) throw ConfigError("train: batch must be >= 1");
  if (learning_rate <= 0) throw ConfigError("train: learning rate must be > 0");
  if (momentum < 0 || momentum >= 1)
    throw ConfigError("train: momentum must be in [0,1)");
}

namespace {

Tensor uniform_fan_in(Shape shape, Index fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(3.0 / double(fan_in));  // variance 1/fan_in
  for (Index i = 0; i < t.numel(); ++i)
    t[i] = float(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

Classifier build_classifier(const ArchitectureSpec& spec, uint64_t seed) {
  spec.validate();
  Classifier model;
  model.spec = spec;
  model.meta.seed = seed;
  Rng rng = Rng(seed).stream("init");

  Index c = spec.in_channels, h = spec.in_height, w = spec.in_width;
  if (spec.kind == ModelKind::Cnn) {
    for (size_t i = 0; i < spec.conv_channels.size(); ++i) {
      const Index f = spec.conv_channels[i];
      const Index fan_in = c * spec.kernel * spec.kernel;
      model.params.push_back(
          {"conv" + std::to_string(i) + ".w",
           uniform_fan_in({f, c, spec.kernel, spec.kernel}, fan_in, rng)});
      if (spec.bias)
        model.params.push_back(
            {"conv" + std::to_string(i) + ".b", Tensor::zeros({f})});
      c = f;
      h /= 2;
      w /= 2;
    }
  }
  Index width = c * h * w;
  for (size_t i = 0; i < spec.hidden.size(); ++i) {
    const Index out = spec.hidden[i];
    model.params.push_back({"fc" + std::to_string(i) + ".w",
                            uniform_fan_in({width, out}, width, rng)});
    if (spec.bias)
      model.params.push_back(
          {"fc" + std::to_string(i) + ".b", Tensor::zeros({out})});
    width = out;
  }
  model.params.push_back(
      {"head.w", uniform_fan_in({width, Index(spec.classes)}, width, rng)});
  if (spec.bias)
    model.params.push_back({"head.b", Tensor::zeros({Index(spec.classes)})});
  return model;
}

namespace {

Tensor assemble_batch(const Dataset& data, const std::vector<int>& idx,
                      size_t begin, size_t end, std::vector<int>& labels) {
  const Index b = Index(end - begin);
  Tensor batch({b, data.channels, data.height, data.width});
  labels.clear();
  const Index per = data.channels * data.height * data.width;
  for (size_t i = begin; i < end; ++i) {
    const Tensor& img = data.images[size_t(idx[i])];
    std::memcpy(batch.data() + Index(i - begin) * per, img.data(),
                size_t(per) * sizeof(float));
    labels.push_back(data.labels[size_t(idx[i])]);
  }
  return batch;
}

double split_accuracy(const Classifier& model, const Dataset& data,
                      const std::vector<int>& idx) {
  if (idx.empty()) return 0.0;
  size_t correct = 0;
  const size_t chunk = 64;
  std::vector<int> labels;
  for (size_t begin = 0; begin < idx.size(); begin += chunk) {
    const size_t end = std::min(begin + chunk, idx.size());
    const Tensor batch = assemble_batch(data, idx, begin, end, labels);
    const Tensor logits = model.predict_logits(batch);
    const Index k = logits.dim(1);
    for (Index r = 0; r < logits.dim(0); ++r) {
      const Tensor row = Tensor({k}, logits.array().segment(r * k, k));
      if (int(argmax(row)) == labels[size_t(r)]) ++correct;
    }
  }
  return double(correct) / double(idx.size());
}

}  // namespace

double accuracy(const Classifier& model, const Dataset& data, Split split) {
  return split_accuracy(model, data, data.indices_of(split));
}

std::vector<EpochMetrics> train(Classifier& model, const Dataset& data,
                                const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  for (int label : data.labels)
    if (label >= model.spec.classes)
      throw DataError(DataError::Kind::Malformed,
                      "train: label " + std::to_string(label) +
                          " outside the model's " +
                          std::to_string(model.spec.classes) + " classes");

  const std::vector<int> train_idx = data.indices_of(Split::Train);
  if (train_idx.empty())
    throw DataError(DataError::Kind::Malformed, "train: empty train split");

  std::vector<Tensor> velocity;
  velocity.reserve(model.params.size());
  for (const auto& p : model.params)
    velocity.push_back(Tensor::zeros(p.value.shape()));

  std::vector<EpochMetrics> metrics;
  const Rng base = Rng(cfg.seed).stream("train");
  std::vector<int> order = train_idx;
  std::vector<int> labels;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng = base.stream(uint64_t(epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[size_t(rng.below(uint64_t(i)))]);

    double loss_sum = 0.0;
    size_t batches = 0;
    for (size_t begin = 0; begin < order.size(); begin += size_t(cfg.batch)) {
      const size_t end = std::min(begin + size_t(cfg.batch), order.size());
      const Tensor batch = assemble_batch(data, order, begin, end, labels);

      Graph g;
      auto x = g.constant(batch);
      std::vector<Graph::Var> vars;
      vars.reserve(model.params.size());
      for (const auto& p : model.params) vars.push_back(g.input(p.value, true));
      auto loss = g.mean(g.softmax_cross_entropy(model.logits(g, x, vars),
                                                 labels));
      const float loss_value = g.value(loss).value();
      if (!std::isfinite(loss_value))
        throw NumericalError("train: non-finite loss " +
                             std::to_string(loss_value) + " at epoch " +
                             std::to_string(epoch) + ", batch " +
                             std::to_string(batches) +
                             " -- lower the learning rate");
      loss_sum += loss_value;
      ++batches;

      const auto grads = g.backward(loss);
      for (size_t pi = 0; pi < model.params.size(); ++pi) {
        const Tensor& grad = Graph::leaf_gradient(grads, vars[pi]);
        auto& v = velocity[pi].array();
        v = float(cfg.momentum) * v - float(cfg.learning_rate) * grad.array();
        model.params[pi].value.array() += v;
      }
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = batches ? loss_sum / double(batches) : 0.0;
    m.train_accuracy = split_accuracy(model, data, train_idx);
    m.test_accuracy = accuracy(model, data, Split::Test);
    metrics.push_back(m);
  }

  model.meta.epochs += cfg.epochs;
  if (!metrics.empty()) {
    model.meta.final_train_accuracy = metrics.back().train_accuracy;
    model.meta.final_test_accuracy = metrics.back().test_accuracy;
  }
  return metrics;
}

std::pair<float, Tensor> loss_and_input_grad(const Classifier& model,
                                             const Tensor& image, int label) {
  return loss_and_input_grad_t<float>(model, image, label);
}

// ---------------------------------------------------------------------------
// Model container.
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'T', 'G', 'M', 'D'};
constexpr uint32_t kVersion = 1;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
}
void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}
void put_f64(std::vector<uint8_t>& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}
void put_string(std::vector<uint8_t>& out, const std::string& s) {
  put_u32(out, uint32_t(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

struct Reader {
  const uint8_t* p;
  size_t len;
  size_t pos = 0;
  std::string path;

  void need(size_t n) const {
    if (pos + n > len)
      throw DataError(DataError::Kind::Truncated,
                      path + ": model file ends mid-record");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(p[pos + size_t(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(p[pos + size_t(i)]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    const uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(p + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_model(const Classifier& model, const std::string& path) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kVersion);

  const ArchitectureSpec& s = model.spec;
  out.push_back(s.kind == ModelKind::Cnn ? 1 : 0);
  out.push_back(s.bias ? 1 : 0);
  put_u32(out, uint32_t(s.in_channels));
  put_u32(out, uint32_t(s.in_height));
  put_u32(out, uint32_t(s.in_width));
  put_u32(out, uint32_t(s.classes));
  put_u32(out, uint32_t(s.kernel));
  put_u32(out, uint32_t(s.conv_channels.size()));
  for (int c : s.conv_channels) put_u32(out, uint32_t(c));
  put_u32(out, uint32_t(s.hidden.size()));
  for (int h : s.hidden) put_u32(out, uint32_t(h));

  put_u64(out, model.meta.seed);
  put_u32(out, uint32_t(model.meta.epochs));
  put_f64(out, model.meta.final_train_accuracy);
  put_f64(out, model.meta.final_test_accuracy);

  put_u32(out, uint32_t(model.params.size()));
  for (const auto& p : model.params) {
    put_string(out, p.name);
    put_u32(out, uint32_t(p.value.rank()));
    for (Index d : p.value.shape()) put_u64(out, uint64_t(d));
    const size_t bytes = size_t(p.value.numel()) * sizeof(float);
    const size_t off = out.size();
    out.resize(off + bytes);
    std::memcpy(out.data() + off, p.value.data(), bytes);
  }

  put_u64(out, fnv1a64(out.data(), out.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f)
    throw DataError(DataError::Kind::NotFound, "cannot write model " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          std::streamsize(out.size()));
  if (!f)
    throw DataError(DataError::Kind::Malformed, "short write on " + path);
}

Classifier load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw DataError(DataError::Kind::NotFound, "cannot open model " + path);
  f.seekg(0, std::ios::end);
  const std::streamoff len = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(len), 0);
  if (len > 0) f.read(reinterpret_cast<char*>(bytes.data()), len);

  if (bytes.size() < 16)
    throw DataError(DataError::Kind::Truncated,
                    path + ": too short for a model file");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw DataError(DataError::Kind::BadMagic,
                    path + ": bad model magic bytes");

  uint64_t stored = 0;
  for (int i = 0; i < 8; ++i)
    stored |= uint64_t(bytes[bytes.size() - 8 + size_t(i)]) << (8 * i);
  if (fnv1a64(bytes.data(), bytes.size() - 8) != stored)
    throw DataError(DataError::Kind::ChecksumMismatch,
                    path + ": checksum mismatch (file corrupt or truncated)");

  Reader r{bytes.data(), bytes.size() - 8, 4, path};
  const uint32_t version = r.u32();
  if (version != kVersion)
    throw DataError(DataError::Kind::VersionMismatch,
                    path + ": model format version " + std::to_string(version) +
                        ", expected " + std::to_string(kVersion));

  Classifier model;
  r.need(2);
  model.spec.kind = bytes[r.pos++] == 1 ? ModelKind::Cnn : ModelKind::Mlp;
  model.spec.bias = bytes[r.pos++] == 1;
  model.spec.in_channels = Index(r.u32());
  model.spec.in_height = Index(r.u32());
  model.spec.in_width = Index(r.u32());
  model.spec.classes = int(r.u32());
  model.spec.kernel = int(r.u32());
  const uint32_t n_conv = r.u32();
  for (uint32_t i = 0; i < n_conv; ++i)
    model.spec.conv_channels.push_back(int(r.u32()));
  const uint32_t n_hidden = r.u32();
  for (uint32_t i = 0; i < n_hidden; ++i)
    model.spec.hidden.push_back(int(r.u32()));

  model.meta.seed = r.u64();
  model.meta.epochs = int(r.u32());
  model.meta.final_train_accuracy = r.f64();
  model.meta.final_test_accuracy = r.f64();

  const uint32_t n_tensors = r.u32();
  for (uint32_t i = 0; i < n_tensors; ++i) {
    const std::string name = r.str();
    const uint32_t rank = r.u32();
    Shape shape;
    for (uint32_t d = 0; d < rank; ++d) shape.push_back(Index(r.u64()));
    Tensor t(shape);
    const size_t nbytes = size_t(t.numel()) * sizeof(float);
    r.need(nbytes);
    std::memcpy(t.data(), r.p + r.pos, nbytes);
    r.pos += nbytes;
    model.params.push_back({name, std::move(t)});
  }
  if (r.pos != r.len)
    throw DataError(DataError::Kind::Malformed,
                    path + ": trailing bytes inside model payload");
  model.spec.validate();
  return model;
}

}  // namespace tg
