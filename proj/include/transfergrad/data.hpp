#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "transfergrad/tensor.hpp"

namespace tg {

enum class Split { Train, Test };

struct LabeledExample {
  Tensor image;  // (C,H,W) in [0,1]
  int label = 0;
};

// In-memory corpus with per-example split tags. The attack subset is chosen
// from the test split at evaluation time, so it is never seen in training.
struct Dataset {
  int classes = 0;
  Index channels = 0, height = 0, width = 0;
  std::vector<Tensor> images;
  std::vector<int> labels;
  std::vector<Split> split;

  size_t size() const { return images.size(); }
  std::vector<int> indices_of(Split s) const;
  std::vector<int> per_class_count(Split s) const;
  void validate() const;
};

std::vector<LabeledExample> examples_of(const Dataset& data,
                                        const std::vector<int>& indices);

// ---------------------------------------------------------------------------
// Synthetic corpus: one fixed geometric template per class plus seeded
// Gaussian pixel noise, clipped to [0,1].
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  int classes = 8;
  int per_class = 300;
  int size = 32;          // square, single channel
  double sigma = 0.05;    // noise level; 0 gives zero within-class variance
  double train_frac = 0.8;
  uint64_t seed = 0;
  // pattern intensities; a narrow gap keeps the task attackable at small
  // epsilon budgets, a wide one makes it nearly robust
  double background = 0.14;
  double foreground = 0.26;
  // amplitude of the fixed full-range texture shared by every class; spreads
  // pixel values across [0,1] without adding class information
  double texture = 1.0;
};

int synthetic_template_count();
Tensor synthetic_template(int cls, int size, double background = 0.14,
                          double foreground = 0.26, double texture = 1.0);
Dataset gen_synthetic(const SyntheticSpec& spec);

// ---------------------------------------------------------------------------
// IDX container (the MNIST binary layout): magic (0,0,dtype,ndim),
// big-endian u32 dims, raw payload. Only dtype 0x08 (unsigned byte) is
// supported; pixels map linearly to [0,1].
// ---------------------------------------------------------------------------

std::vector<Tensor> load_idx_images(const std::string& path);
std::vector<int> load_idx_labels(const std::string& path);

// Both files together; counts must agree.
std::pair<std::vector<Tensor>, std::vector<int>> load_idx(
    const std::string& images_path, const std::string& labels_path);

// Images are quantized to bytes with round-to-nearest.
void save_idx_images(const std::string& path, const std::vector<Tensor>& images);
void save_idx_labels(const std::string& path, const std::vector<int>& labels);

Dataset make_dataset(std::vector<Tensor> train_images,
                     std::vector<int> train_labels,
                     std::vector<Tensor> test_images,
                     std::vector<int> test_labels, int classes);

// Seeded sample of `count` test indices (without replacement, ascending).
std::vector<int> choose_attack_indices(const Dataset& data, int count,
                                       uint64_t seed);

uint64_t fnv1a64(const void* data, size_t len);
uint64_t fnv1a64_file(const std::string& path);

}  // namespace tg
