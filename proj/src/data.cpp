#include "transfergrad/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "transfergrad/errors.hpp"
#include "transfergrad/rng.hpp"

namespace tg {

std::vector<int> Dataset::indices_of(Split s) const {
  std::vector<int> out;
  for (size_t i = 0; i < split.size(); ++i)
    if (split[i] == s) out.push_back(int(i));
  return out;
}

std::vector<int> Dataset::per_class_count(Split s) const {
  std::vector<int> counts(size_t(classes), 0);
  for (size_t i = 0; i < split.size(); ++i)
    if (split[i] == s) counts[size_t(labels[i])]++;
  return counts;
}

void Dataset::validate() const {
  if (images.size() != labels.size() || images.size() != split.size())
    throw DataError(DataError::Kind::CountMismatch,
                    "dataset: images/labels/split lengths differ (" +
                        std::to_string(images.size()) + "/" +
                        std::to_string(labels.size()) + "/" +
                        std::to_string(split.size()) + ")");
  for (size_t i = 0; i < images.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw DataError(DataError::Kind::Malformed,
                      "dataset: label " + std::to_string(labels[i]) +
                          " out of range for " + std::to_string(classes) +
                          " classes");
    if (images[i].rank() != 3 || images[i].dim(0) != channels ||
        images[i].dim(1) != height || images[i].dim(2) != width)
      throw DataError(DataError::Kind::Malformed,
                      "dataset: image " + std::to_string(i) + " has shape " +
                          shape_str(images[i].shape()));
  }
}

std::vector<LabeledExample> examples_of(const Dataset& data,
                                        const std::vector<int>& indices) {
  std::vector<LabeledExample> out;
  out.reserve(indices.size());
  for (int i : indices)
    out.push_back({data.images[size_t(i)], data.labels[size_t(i)]});
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic templates.
// ---------------------------------------------------------------------------

namespace {

constexpr int kTemplateCount = 10;

float template_pixel(int cls, int size, int y, int x, float bg, float fg) {
  const double s = double(size);
  const double cx = (s - 1.0) / 2.0, cy = (s - 1.0) / 2.0;
  const double dx = x - cx, dy = y - cy;
  const double r = std::sqrt(dx * dx + dy * dy);
  const int band = std::max(1, size / 4);
  const int thin = std::max(1, size / 8);
  auto on = [&](bool b) { return b ? fg : bg; };
  switch (cls) {
    case 0: return on((y / band) % 2 == 0);                    // horizontal bars
    case 1: return on((x / band) % 2 == 0);                    // vertical bars
    case 2: return on(r <= 0.33 * s);                          // disk
    case 3: return on(r >= 0.20 * s && r <= 0.42 * s);         // ring
    case 4: return on(std::abs(dx) <= thin || std::abs(dy) <= thin);  // cross
    case 5: return on(((x / band) + (y / band)) % 2 == 0);     // checkerboard
    case 6:                                                    // diagonal gradient
      return bg + (fg - bg) * float(x + y) / float(2 * (size - 1));
    case 7: return on(((x + y) / band) % 2 == 0);              // diagonal stripes
    case 8:                                                    // square frame
      return on(std::min(std::min(x, y), std::min(size - 1 - x, size - 1 - y)) <
                thin);
    case 9: {                                                  // four dots
      const double q = s / 4.0, rad = s / 8.0;
      const double qs[2] = {q, 3.0 * q};
      for (double py : qs)
        for (double px : qs) {
          const double ddx = x - px, ddy = y - py;
          if (std::sqrt(ddx * ddx + ddy * ddy) <= rad) return fg;
        }
      return bg;
    }
    default: return bg;
  }
}

}  // namespace

int synthetic_template_count() { return kTemplateCount; }

// Deterministic texture shared by all classes: a dark field with a sparse
// bright minority, so pixel values span [0,1] while the mean stays low.
// The class pattern rides on top of it.
static float texture_field(int y, int x) {
  const uint64_t h =
      splitmix64((uint64_t(uint32_t(y)) << 32) |
                 (uint64_t(uint32_t(x)) ^ 0x9e3779b97f4a7c15ULL));
  const double u = double(h >> 11) * 0x1.0p-53;
  const uint64_t h2 = splitmix64(h);
  const double v = double(h2 >> 11) * 0x1.0p-53;
  if (u < 0.15) return float(0.72 + 0.28 * v);  // bright speck
  return float(0.04 + 0.16 * v);                // dark ground
}

// analytic mean of texture_field
static constexpr float kTextureMean =
    0.15f * (0.72f + 0.14f) + 0.85f * (0.04f + 0.08f);

Tensor synthetic_template(int cls, int size, double background,
                          double foreground, double texture) {
  if (cls < 0 || cls >= kTemplateCount)
    throw DataError(DataError::Kind::Malformed,
                    "gen_synthetic: class " + std::to_string(cls) +
                        " exceeds available templates (" +
                        std::to_string(kTemplateCount) + ")");
  if (size < 8)
    throw ConfigError("gen_synthetic: image size must be >= 8");
  if (background < 0.0 || foreground > 1.0 || background >= foreground)
    throw ConfigError("gen_synthetic: need 0 <= background < foreground <= 1");
  if (texture < 0.0 || texture > 1.0)
    throw ConfigError("gen_synthetic: texture amplitude must be in [0,1]");
  Tensor t({1, size, size});
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const float pattern = template_pixel(cls, size, y, x, float(background),
                                           float(foreground));
      const float tex =
          float(texture) * (texture_field(y, x) - kTextureMean);
      t[Index(y * size + x)] = std::clamp(pattern + tex, 0.0f, 1.0f);
    }
  return t;
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2)
    throw ConfigError("gen_synthetic: need at least 2 classes");
  if (spec.classes > kTemplateCount)
    throw DataError(DataError::Kind::Malformed,
                    "gen_synthetic: " + std::to_string(spec.classes) +
                        " classes exceed the " +
                        std::to_string(kTemplateCount) +
                        " available templates");
  if (spec.per_class < 2)
    throw ConfigError("gen_synthetic: per_class must be >= 2");
  if (spec.train_frac <= 0.0 || spec.train_frac >= 1.0)
    throw ConfigError("gen_synthetic: train_frac must be in (0,1)");

  Dataset data;
  data.classes = spec.classes;
  data.channels = 1;
  data.height = spec.size;
  data.width = spec.size;

  const int n_train = std::clamp(
      int(std::lround(spec.train_frac * spec.per_class)), 1, spec.per_class - 1);
  const Rng base = Rng(spec.seed).stream("synthetic");
  for (int cls = 0; cls < spec.classes; ++cls) {
    const Tensor tmpl = synthetic_template(cls, spec.size, spec.background,
                                           spec.foreground, spec.texture);
    const Rng class_rng = base.stream(uint64_t(cls));
    for (int j = 0; j < spec.per_class; ++j) {
      Rng rng = class_rng.stream(uint64_t(j));
      Tensor img = tmpl;
      if (spec.sigma > 0.0) {
        for (Index i = 0; i < img.numel(); ++i)
          img[i] = float(img[i] + spec.sigma * rng.normal());
        img = clamp(img, 0.0f, 1.0f);
      }
      data.images.push_back(std::move(img));
      data.labels.push_back(cls);
      data.split.push_back(j < n_train ? Split::Train : Split::Test);
    }
  }
  return data;
}

// ---------------------------------------------------------------------------
// IDX i/o.
// ---------------------------------------------------------------------------

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw DataError(DataError::Kind::NotFound, "cannot open file: " + path);
  f.seekg(0, std::ios::end);
  const std::streamoff len = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(len), 0);
  if (len > 0) f.read(reinterpret_cast<char*>(bytes.data()), len);
  if (!f)
    throw DataError(DataError::Kind::Truncated, "short read on " + path);
  return bytes;
}

uint32_t be32(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) |
         (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void put_be32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(uint8_t(v >> 24));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v));
}

struct IdxHeader {
  int ndim = 0;
  std::vector<uint32_t> dims;
  size_t payload_offset = 0;
  size_t payload_len = 0;
};

IdxHeader parse_idx(const std::vector<uint8_t>& bytes, const std::string& path,
                    std::initializer_list<int> allowed_ndim) {
  if (bytes.size() < 4)
    throw DataError(DataError::Kind::Truncated,
                    path + ": file shorter than the 4-byte IDX magic");
  if (bytes[0] != 0 || bytes[1] != 0)
    throw DataError(DataError::Kind::BadMagic,
                    path + ": bad IDX magic (leading bytes not zero)");
  if (bytes[2] != 0x08)
    throw DataError(DataError::Kind::BadMagic,
                    path + ": unsupported IDX dtype 0x" +
                        std::to_string(int(bytes[2])) +
                        " (only unsigned byte 0x08)");
  IdxHeader h;
  h.ndim = bytes[3];
  bool ok = false;
  for (int a : allowed_ndim) ok = ok || (a == h.ndim);
  if (!ok)
    throw DataError(DataError::Kind::BadDims,
                    path + ": unsupported IDX rank " + std::to_string(h.ndim));
  const size_t header_len = 4 + 4 * size_t(h.ndim);
  if (bytes.size() < header_len)
    throw DataError(DataError::Kind::Truncated,
                    path + ": truncated IDX dimension table");
  size_t numel = 1;
  for (int i = 0; i < h.ndim; ++i) {
    const uint32_t d = be32(bytes.data() + 4 + 4 * size_t(i));
    if (d == 0)
      throw DataError(DataError::Kind::BadDims,
                      path + ": zero-sized IDX dimension");
    h.dims.push_back(d);
    numel *= d;
  }
  h.payload_offset = header_len;
  h.payload_len = numel;
  if (bytes.size() < header_len + numel)
    throw DataError(DataError::Kind::Truncated,
                    path + ": payload truncated (expected " +
                        std::to_string(numel) + " bytes, have " +
                        std::to_string(bytes.size() - header_len) + ")");
  if (bytes.size() > header_len + numel)
    throw DataError(DataError::Kind::Malformed,
                    path + ": trailing bytes after IDX payload");
  return h;
}

}  // namespace

std::vector<Tensor> load_idx_images(const std::string& path) {
  const auto bytes = read_file(path);
  const auto h = parse_idx(bytes, path, {3, 4});
  const uint32_t n = h.dims[0];
  const Index c = h.ndim == 4 ? Index(h.dims[1]) : 1;
  const Index height = Index(h.dims[size_t(h.ndim) - 2]);
  const Index width = Index(h.dims[size_t(h.ndim) - 1]);
  std::vector<Tensor> images;
  images.reserve(n);
  const uint8_t* p = bytes.data() + h.payload_offset;
  const Index per = c * height * width;
  for (uint32_t i = 0; i < n; ++i) {
    Tensor img({c, height, width});
    for (Index j = 0; j < per; ++j)
      img[j] = float(p[size_t(i) * size_t(per) + size_t(j)]) / 255.0f;
    images.push_back(std::move(img));
  }
  return images;
}

std::vector<int> load_idx_labels(const std::string& path) {
  const auto bytes = read_file(path);
  const auto h = parse_idx(bytes, path, {1});
  std::vector<int> labels(h.dims[0]);
  const uint8_t* p = bytes.data() + h.payload_offset;
  for (size_t i = 0; i < labels.size(); ++i) labels[i] = p[i];
  return labels;
}

std::pair<std::vector<Tensor>, std::vector<int>> load_idx(
    const std::string& images_path, const std::string& labels_path) {
  auto images = load_idx_images(images_path);
  auto labels = load_idx_labels(labels_path);
  if (images.size() != labels.size())
    throw DataError(DataError::Kind::CountMismatch,
                    "idx: " + std::to_string(images.size()) + " images in " +
                        images_path + " vs " + std::to_string(labels.size()) +
                        " labels in " + labels_path);
  return {std::move(images), std::move(labels)};
}

void save_idx_images(const std::string& path,
                     const std::vector<Tensor>& images) {
  std::vector<uint8_t> out;
  if (images.empty())
    throw DataError(DataError::Kind::Malformed, "save_idx: no images");
  const auto& shape = images[0].shape();
  const bool multi_channel = shape[0] > 1;
  out.push_back(0);
  out.push_back(0);
  out.push_back(0x08);
  out.push_back(multi_channel ? 4 : 3);
  put_be32(out, uint32_t(images.size()));
  if (multi_channel) put_be32(out, uint32_t(shape[0]));
  put_be32(out, uint32_t(shape[1]));
  put_be32(out, uint32_t(shape[2]));
  for (const Tensor& img : images) {
    if (img.shape() != shape)
      throw DataError(DataError::Kind::Malformed,
                      "save_idx: inconsistent image shapes");
    for (Index i = 0; i < img.numel(); ++i) {
      const float v = std::clamp(img[i], 0.0f, 1.0f);
      out.push_back(uint8_t(std::lround(v * 255.0f)));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError(DataError::Kind::NotFound, "cannot write " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          std::streamsize(out.size()));
}

void save_idx_labels(const std::string& path, const std::vector<int>& labels) {
  std::vector<uint8_t> out;
  out.push_back(0);
  out.push_back(0);
  out.push_back(0x08);
  out.push_back(1);
  put_be32(out, uint32_t(labels.size()));
  for (int l : labels) {
    if (l < 0 || l > 255)
      throw DataError(DataError::Kind::Malformed,
                      "save_idx: label out of byte range");
    out.push_back(uint8_t(l));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError(DataError::Kind::NotFound, "cannot write " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          std::streamsize(out.size()));
}

Dataset make_dataset(std::vector<Tensor> train_images,
                     std::vector<int> train_labels,
                     std::vector<Tensor> test_images,
                     std::vector<int> test_labels, int classes) {
  Dataset data;
  data.classes = classes;
  if (train_images.empty() || test_images.empty())
    throw DataError(DataError::Kind::Malformed,
                    "make_dataset: empty train or test split");
  data.channels = train_images[0].dim(0);
  data.height = train_images[0].dim(1);
  data.width = train_images[0].dim(2);
  for (size_t i = 0; i < train_images.size(); ++i) {
    data.images.push_back(std::move(train_images[i]));
    data.labels.push_back(train_labels[i]);
    data.split.push_back(Split::Train);
  }
  for (size_t i = 0; i < test_images.size(); ++i) {
    data.images.push_back(std::move(test_images[i]));
    data.labels.push_back(test_labels[i]);
    data.split.push_back(Split::Test);
  }
  data.validate();
  return data;
}

std::vector<int> choose_attack_indices(const Dataset& data, int count,
                                       uint64_t seed) {
  std::vector<int> test = data.indices_of(Split::Test);
  if (count <= 0 || test.empty())
    throw ConfigError("choose_attack_indices: need a positive count and a "
                      "non-empty test split");
  if (size_t(count) > test.size()) count = int(test.size());
  Rng rng = Rng(seed).stream("attack-split");
  // partial Fisher-Yates, then ascending for stable downstream order
  for (int i = 0; i < count; ++i) {
    const size_t j = size_t(i) + size_t(rng.below(uint64_t(test.size() - size_t(i))));
    std::swap(test[size_t(i)], test[j]);
  }
  test.resize(size_t(count));
  std::sort(test.begin(), test.end());
  return test;
}

uint64_t fnv1a64(const void* data, size_t len) {
  const uint8_t* p = static_cast<const uint8_t*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t fnv1a64_file(const std::string& path) {
  const auto bytes = read_file(path);
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace tg
