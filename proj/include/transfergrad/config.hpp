#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "transfergrad/attacks.hpp"
#include "transfergrad/data.hpp"
#include "transfergrad/nn.hpp"

namespace tg {

struct ModelEntry {
  ArchitectureSpec arch;
  TrainConfig train;
};

struct DatasetSection {
  std::string source = "synthetic";  // synthetic | idx | dir
  SyntheticSpec synthetic;
  bool synthetic_seed_set = false;
  std::string dir;  // output of gen-data
  std::string train_images, train_labels, test_images, test_labels;
  int idx_classes = 0;  // 0: infer from labels
};

struct EvalSection {
  int images = 200;
  int replicates = 1;
  std::vector<std::string> surrogates;  // empty: all models
  std::vector<std::string> attacks;     // empty: all attacks
};

struct SweepSection {
  std::string parameter = "r";
  std::vector<double> grid;
  std::string surrogate;
  std::string attack;
  int images = 100;
  int replicates = 3;
};

// Declarative description of one reproducible run. Unknown keys are
// rejected at parse time; every referenced name must resolve.
struct RunConfig {
  std::optional<uint64_t> seed;
  std::string output_dir = "out";
  int threads = 1;
  DatasetSection dataset;
  std::vector<std::pair<std::string, ModelEntry>> models;
  std::vector<std::pair<std::string, AttackConfig>> attacks;
  EvalSection eval;
  SweepSection sweep;

  uint64_t require_seed() const;
  const ModelEntry& model(const std::string& name) const;
  const AttackConfig& attack(const std::string& name) const;
  void validate() const;
};

// Plain-text config: nested [section] headers with key = value leaves,
// '#' comments. Numeric values accept plain decimals and a/b fractions
// (epsilon = 16/255).
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);

// Re-ingestible rendering with every default filled in.
std::string print_config(const RunConfig& cfg);

// Grid syntax: "start:stop:step" (inclusive) or a comma list.
std::vector<double> parse_grid(const std::string& text);

double parse_double_value(const std::string& text, const std::string& what);

// Builds the in-memory dataset a config describes.
Dataset load_dataset(const DatasetSection& section, uint64_t master_seed);

}  // namespace tg
