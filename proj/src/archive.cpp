#include "transfergrad/archive.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "transfergrad/data.hpp"
#include "transfergrad/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "archive assumes a little-endian host");

namespace tg {

namespace fs = std::filesystem;
using nlohmann::json;

void AdversarialArchive::validate() const {
  const size_t n = adversarials.size();
  if (originals.size() != n || labels.size() != n || linf.size() != n)
    throw DataError(DataError::Kind::CountMismatch,
                    "archive: originals/adversarials/labels/linf counts "
                    "disagree");
  for (size_t i = 0; i < n; ++i) {
    const Shape want{channels, height, width};
    if (originals[i].shape() != want || adversarials[i].shape() != want)
      throw DataError(DataError::Kind::Malformed,
                      "archive: image " + std::to_string(i) +
                          " deviates from the declared shape");
  }
}

namespace {

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)v);
  return buf;
}

uint64_t parse_hex64(const std::string& s) {
  return std::strtoull(s.c_str(), nullptr, 16);
}

void write_file(const fs::path& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f)
    throw DataError(DataError::Kind::NotFound,
                    "cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()),
          std::streamsize(bytes.size()));
  if (!f)
    throw DataError(DataError::Kind::Malformed,
                    "short write on " + path.string());
}

std::vector<uint8_t> read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw DataError(DataError::Kind::NotFound,
                    "cannot open " + path.string());
  f.seekg(0, std::ios::end);
  const std::streamoff len = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(len), 0);
  if (len > 0) f.read(reinterpret_cast<char*>(bytes.data()), len);
  if (!f)
    throw DataError(DataError::Kind::Truncated,
                    "short read on " + path.string());
  return bytes;
}

std::vector<uint8_t> pack_images(const std::vector<Tensor>& images) {
  std::vector<uint8_t> out;
  for (const Tensor& t : images) {
    const size_t off = out.size();
    const size_t bytes = size_t(t.numel()) * sizeof(float);
    out.resize(off + bytes);
    std::memcpy(out.data() + off, t.data(), bytes);
  }
  return out;
}

std::vector<Tensor> unpack_images(const std::vector<uint8_t>& bytes, size_t n,
                                  const Shape& shape, const std::string& what) {
  const size_t per = size_t(shape_numel(shape)) * sizeof(float);
  if (bytes.size() != n * per)
    throw DataError(DataError::Kind::Truncated,
                    what + ": expected " + std::to_string(n * per) +
                        " bytes, have " + std::to_string(bytes.size()));
  std::vector<Tensor> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    Tensor t(shape);
    std::memcpy(t.data(), bytes.data() + i * per, per);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

void write_archive(const std::string& dir, const AdversarialArchive& archive) {
  archive.validate();
  fs::create_directories(dir);

  const auto originals = pack_images(archive.originals);
  const auto adversarials = pack_images(archive.adversarials);
  std::vector<uint8_t> labels;
  for (int l : archive.labels) {
    const int32_t v = l;
    const size_t off = labels.size();
    labels.resize(off + 4);
    std::memcpy(labels.data() + off, &v, 4);
  }

  write_file(fs::path(dir) / "originals.f32", originals);
  write_file(fs::path(dir) / "adversarials.f32", adversarials);
  write_file(fs::path(dir) / "labels.i32", labels);

  json manifest;
  manifest["format"] = "tg-adversarial-archive";
  manifest["version"] = 1;
  manifest["attack"] = archive.attack;
  manifest["surrogate"] = archive.surrogate;
  manifest["epsilon"] = archive.epsilon;
  manifest["seed"] = archive.seed;
  manifest["config_hash"] = hex64(archive.config_hash);
  manifest["count"] = archive.size();
  manifest["image_shape"] = {archive.channels, archive.height, archive.width};
  manifest["files"] = {
      {"originals",
       {{"path", "originals.f32"},
        {"fnv64", hex64(fnv1a64(originals.data(), originals.size()))}}},
      {"adversarials",
       {{"path", "adversarials.f32"},
        {"fnv64", hex64(fnv1a64(adversarials.data(), adversarials.size()))}}},
      {"labels",
       {{"path", "labels.i32"},
        {"fnv64", hex64(fnv1a64(labels.data(), labels.size()))}}},
  };
  manifest["linf"] = archive.linf;

  std::ofstream mf(fs::path(dir) / "manifest.json",
                   std::ios::binary | std::ios::trunc);
  if (!mf)
    throw DataError(DataError::Kind::NotFound,
                    "cannot write manifest in " + dir);
  mf << manifest.dump(2) << '\n';
}

AdversarialArchive read_archive(const std::string& dir) {
  const fs::path base(dir);
  const auto manifest_bytes = read_file(base / "manifest.json");
  json manifest;
  try {
    manifest = json::parse(manifest_bytes.begin(), manifest_bytes.end());
  } catch (const json::exception& e) {
    throw DataError(DataError::Kind::Malformed,
                    dir + "/manifest.json: " + e.what());
  }
  if (manifest.value("format", "") != "tg-adversarial-archive")
    throw DataError(DataError::Kind::BadMagic,
                    dir + ": not an adversarial archive");
  if (manifest.value("version", 0) != 1)
    throw DataError(DataError::Kind::VersionMismatch,
                    dir + ": unsupported archive version");

  AdversarialArchive a;
  a.attack = manifest.value("attack", "");
  a.surrogate = manifest.value("surrogate", "");
  a.epsilon = manifest.at("epsilon").get<double>();
  a.seed = manifest.at("seed").get<uint64_t>();
  a.config_hash = parse_hex64(manifest.value("config_hash", "0"));
  const auto shape = manifest.at("image_shape");
  a.channels = shape.at(0).get<Index>();
  a.height = shape.at(1).get<Index>();
  a.width = shape.at(2).get<Index>();
  const size_t count = manifest.at("count").get<size_t>();

  auto load_checked = [&](const char* key) {
    const auto& entry = manifest.at("files").at(key);
    const auto bytes = read_file(base / entry.at("path").get<std::string>());
    const uint64_t want = parse_hex64(entry.at("fnv64").get<std::string>());
    if (fnv1a64(bytes.data(), bytes.size()) != want)
      throw DataError(DataError::Kind::ChecksumMismatch,
                      dir + ": checksum mismatch for " + std::string(key));
    return bytes;
  };

  const Shape img_shape{a.channels, a.height, a.width};
  a.originals = unpack_images(load_checked("originals"), count, img_shape,
                              dir + "/originals.f32");
  a.adversarials = unpack_images(load_checked("adversarials"), count,
                                 img_shape, dir + "/adversarials.f32");
  const auto label_bytes = load_checked("labels");
  if (label_bytes.size() != count * 4)
    throw DataError(DataError::Kind::Truncated,
                    dir + "/labels.i32: wrong length");
  for (size_t i = 0; i < count; ++i) {
    int32_t v;
    std::memcpy(&v, label_bytes.data() + i * 4, 4);
    a.labels.push_back(v);
  }
  a.linf = manifest.at("linf").get<std::vector<double>>();
  a.validate();

  // recompute norms and audit the ball; stored values must match exactly
  for (size_t i = 0; i < count; ++i) {
    const double linf = double(max_abs_diff(a.adversarials[i], a.originals[i]));
    if (linf != a.linf[i])
      throw DataError(DataError::Kind::ChecksumMismatch,
                      dir + ": stored linf norm disagrees with payload at " +
                          std::to_string(i));
    if (linf > a.epsilon + 1e-6)
      throw NumericalError(dir + ": archived adversarial " +
                           std::to_string(i) + " exceeds the epsilon ball");
  }
  return a;
}

}  // namespace tg
