#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "transfergrad/tensor.hpp"

namespace tg {

// One crafted run: originals, adversarials and labels stored as raw
// little-endian tensors next to a JSON manifest with checksums, so budget
// audits see exactly the bytes the attack produced (no lossy codec).
struct AdversarialArchive {
  std::string attack;
  std::string surrogate;
  double epsilon = 0.0;
  uint64_t seed = 0;
  uint64_t config_hash = 0;
  Index channels = 0, height = 0, width = 0;
  std::vector<Tensor> originals;
  std::vector<Tensor> adversarials;
  std::vector<int> labels;
  std::vector<double> linf;  // per-image max |adv - original|

  size_t size() const { return adversarials.size(); }
  void validate() const;
};

void write_archive(const std::string& dir, const AdversarialArchive& archive);

// Verifies file checksums, recomputes per-image norms against the manifest
// and audits the epsilon ball before returning.
AdversarialArchive read_archive(const std::string& dir);

}  // namespace tg
