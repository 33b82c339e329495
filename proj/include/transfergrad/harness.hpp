#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "transfergrad/attacks.hpp"
#include "transfergrad/data.hpp"
#include "transfergrad/nn.hpp"

namespace tg {

// Deterministic parallel map: item i always produces the same result no
// matter how many workers run. Worker exceptions are rethrown in the caller.
void parallel_for(long n, int threads, const std::function<void(long)>& fn);

// raw: misclassified fraction over all adversarials. filtered: misclassified
// fraction among examples the model gets right in clean form; undefined when
// the model gets nothing right.
struct SuccessRate {
  double raw = 0.0;
  double filtered = 0.0;
  bool filtered_defined = false;
  double clean_error = 0.0;
  int n = 0;
};

SuccessRate success_rate(const Classifier& model,
                         const std::vector<Tensor>& adversarials,
                         const std::vector<int>& labels,
                         const std::vector<Tensor>& originals);

// Independent L-inf ball re-verification of crafted adversarials.
void audit_budget(const std::vector<Tensor>& adversarials,
                  const std::vector<Tensor>& originals, double epsilon);

struct CraftOutput {
  std::vector<Tensor> adversarials;
  std::vector<double> linf;
  std::vector<std::vector<double>> loss_traces;
  long gradient_queries = 0;
};

// Runs cfg over every example, one independent RNG stream per image, so the
// result is a pure function of (model, cfg, examples, master_seed).
CraftOutput craft_adversarials(const Classifier& model, const AttackConfig& cfg,
                               const std::vector<LabeledExample>& examples,
                               uint64_t master_seed,
                               const std::string& stream_name, int threads);

struct TransferCell {
  std::string surrogate;
  std::string victim;
  std::string attack;
  SuccessRate rate;
  uint64_t seed = 0;
  bool white_box = false;
};

struct TransferReport {
  std::vector<TransferCell> rows;
  std::vector<std::string> model_names;
  std::vector<std::string> attack_names;
  int attack_count = 0;
  uint64_t seed = 0;
};

struct TransferOptions {
  int attack_count = 200;
  uint64_t seed = 0;
  int threads = 1;
  std::vector<std::string> surrogates;  // empty: every model crafts
};

// For each (surrogate, attack): craft once on the surrogate's attack split,
// audit the budget, then score every victim. Rows are ordered
// surrogate-major, then attack, then victim.
TransferReport transfer_matrix(
    const std::vector<std::pair<std::string, Classifier>>& models,
    const std::vector<std::pair<std::string, AttackConfig>>& attack_cfgs,
    const Dataset& data, const TransferOptions& opts);

enum class SweepParam { Lower, Upper, Range, Copies };

SweepParam sweep_param_from_name(const std::string& name);
const char* sweep_param_name(SweepParam p);

struct SweepRow {
  std::string parameter;
  double value = 0.0;
  std::string victim;
  SuccessRate rate;
  uint64_t seed = 0;
};

struct SweepReport {
  std::string parameter;
  std::vector<double> grid;
  std::vector<SweepRow> rows;
};

struct SweepOptions {
  int attack_count = 100;
  uint64_t seed = 0;
  int replicates = 3;
  int threads = 1;
};

// One row per (grid value, victim, replicate); the surrogate itself is not
// scored. The grid must be strictly increasing and within the parameter's
// legal range.
SweepReport ablation_sweep(
    SweepParam parameter, const std::vector<double>& grid,
    const AttackConfig& base_cfg, const std::string& surrogate,
    const std::vector<std::pair<std::string, Classifier>>& models,
    const Dataset& data, const SweepOptions& opts);

// CSV renderings; fixed 6-decimal rates, "na" for undefined filtered rates.
std::string transfer_csv(const std::vector<TransferCell>& rows);
std::string sweep_csv(const std::vector<SweepRow>& rows);

struct AttackSummary {
  std::string attack;
  double mean_transfer_raw = 0.0;
  double mean_transfer_filtered = 0.0;
  int transfer_rows = 0;
};

// Mean off-diagonal rates per attack, ranked by raw rate.
std::vector<AttackSummary> summarize_transfer(
    const std::vector<TransferCell>& rows);
std::string summary_csv(const std::vector<AttackSummary>& rows);

std::vector<TransferCell> parse_transfer_csv(const std::string& text);

// Fraction of loss traces that are non-decreasing across iterations.
double monotone_trace_fraction(const std::vector<std::vector<double>>& traces);

}  // namespace tg
