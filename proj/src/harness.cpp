#include "transfergrad/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "transfergrad/errors.hpp"

namespace tg {

void parallel_for(long n, int threads, const std::function<void(long)>& fn) {
  if (n <= 0) return;
  if (threads <= 1 || n == 1) {
    for (long i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<long> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto worker = [&]() {
    for (;;) {
      const long i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int count = int(std::min<long>(threads, n));
  pool.reserve(size_t(count));
  for (int t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

SuccessRate success_rate(const Classifier& model,
                         const std::vector<Tensor>& adversarials,
                         const std::vector<int>& labels,
                         const std::vector<Tensor>& originals) {
  if (adversarials.size() != labels.size() ||
      adversarials.size() != originals.size())
    throw DataError(DataError::Kind::CountMismatch,
                    "success_rate: " + std::to_string(adversarials.size()) +
                        " adversarials, " + std::to_string(labels.size()) +
                        " labels, " + std::to_string(originals.size()) +
                        " originals");
  SuccessRate out;
  out.n = int(adversarials.size());
  if (out.n == 0) return out;

  int fooled = 0, clean_correct = 0, fooled_among_correct = 0;
  for (size_t i = 0; i < adversarials.size(); ++i) {
    const bool adv_wrong = model.predict(adversarials[i]) != labels[i];
    const bool clean_right = model.predict(originals[i]) == labels[i];
    if (adv_wrong) ++fooled;
    if (clean_right) {
      ++clean_correct;
      if (adv_wrong) ++fooled_among_correct;
    }
  }
  out.raw = double(fooled) / double(out.n);
  out.clean_error = 1.0 - double(clean_correct) / double(out.n);
  if (clean_correct > 0) {
    out.filtered = double(fooled_among_correct) / double(clean_correct);
    out.filtered_defined = true;
  }
  return out;
}

void audit_budget(const std::vector<Tensor>& adversarials,
                  const std::vector<Tensor>& originals, double epsilon) {
  if (adversarials.size() != originals.size())
    throw DataError(DataError::Kind::CountMismatch,
                    "audit_budget: adversarial/original counts differ");
  for (size_t i = 0; i < adversarials.size(); ++i) {
    const Tensor& a = adversarials[i];
    const Tensor& o = originals[i];
    if (!a.same_shape(o))
      throw DataError(DataError::Kind::Malformed,
                      "audit_budget: shape mismatch at index " +
                          std::to_string(i));
    double linf = 0.0;
    for (Index j = 0; j < a.numel(); ++j) {
      linf = std::max(linf, std::abs(double(a[j]) - double(o[j])));
      if (a[j] < 0.0f || a[j] > 1.0f)
        throw NumericalError("audit_budget: adversarial " + std::to_string(i) +
                             " leaves [0,1]");
    }
    if (linf > epsilon + 1e-6)
      throw NumericalError("audit_budget: adversarial " + std::to_string(i) +
                           " exceeds the budget (linf=" + std::to_string(linf) +
                           ", epsilon=" + std::to_string(epsilon) + ")");
  }
}

CraftOutput craft_adversarials(const Classifier& model, const AttackConfig& cfg,
                               const std::vector<LabeledExample>& examples,
                               uint64_t master_seed,
                               const std::string& stream_name, int threads) {
  cfg.validate();
  const size_t n = examples.size();
  CraftOutput out;
  out.adversarials.resize(n);
  out.linf.resize(n);
  out.loss_traces.resize(n);
  std::vector<long> queries(n, 0);

  // per-label clean mix pools, built once
  std::vector<std::vector<LabeledExample>> pool_by_label;
  if (cfg.uses_mix()) {
    int max_label = 0;
    for (const auto& e : examples) max_label = std::max(max_label, e.label);
    pool_by_label.resize(size_t(max_label) + 1);
    for (int y = 0; y <= max_label; ++y)
      for (const auto& e : examples)
        if (e.label != y) pool_by_label[size_t(y)].push_back(e);
  }
  static const std::vector<LabeledExample> kEmptyPool;

  const uint64_t base =
      hash_combine(master_seed, hash_string("craft:" + stream_name));
  parallel_for(long(n), threads, [&](long i) {
    const auto& ex = examples[size_t(i)];
    AttackConfig local = cfg;
    local.seed = hash_combine(base, uint64_t(i));
    const auto& pool =
        cfg.uses_mix() ? pool_by_label[size_t(ex.label)] : kEmptyPool;
    AttackResult r = run_attack(model, ex.image, ex.label, local, pool);
    out.linf[size_t(i)] = double(max_abs_diff(r.adversarial, ex.image));
    out.adversarials[size_t(i)] = std::move(r.adversarial);
    out.loss_traces[size_t(i)] = std::move(r.loss_trace);
    queries[size_t(i)] = r.gradient_queries;
  });
  for (long q : queries) out.gradient_queries += q;
  return out;
}

TransferReport transfer_matrix(
    const std::vector<std::pair<std::string, Classifier>>& models,
    const std::vector<std::pair<std::string, AttackConfig>>& attack_cfgs,
    const Dataset& data, const TransferOptions& opts) {
  if (models.size() < 2)
    throw ConfigError("transfer_matrix: need at least 2 models");
  if (attack_cfgs.empty())
    throw ConfigError("transfer_matrix: need at least one attack");

  const std::vector<int> idx =
      choose_attack_indices(data, opts.attack_count, opts.seed);
  const std::vector<LabeledExample> examples = examples_of(data, idx);
  std::vector<Tensor> originals;
  std::vector<int> labels;
  for (const auto& e : examples) {
    originals.push_back(e.image);
    labels.push_back(e.label);
  }

  TransferReport report;
  report.attack_count = int(examples.size());
  report.seed = opts.seed;
  for (const auto& [name, _] : models) report.model_names.push_back(name);
  for (const auto& [name, _] : attack_cfgs) report.attack_names.push_back(name);

  for (const auto& [surrogate_name, surrogate] : models) {
    if (!opts.surrogates.empty() &&
        std::find(opts.surrogates.begin(), opts.surrogates.end(),
                  surrogate_name) == opts.surrogates.end())
      continue;
    for (const auto& [attack_name, cfg] : attack_cfgs) {
      const CraftOutput crafted = craft_adversarials(
          surrogate, cfg, examples, opts.seed,
          surrogate_name + "/" + attack_name, opts.threads);
      audit_budget(crafted.adversarials, originals, cfg.budget.epsilon);
      for (const auto& [victim_name, victim] : models) {
        TransferCell cell;
        cell.surrogate = surrogate_name;
        cell.victim = victim_name;
        cell.attack = attack_name;
        cell.rate =
            success_rate(victim, crafted.adversarials, labels, originals);
        cell.seed = opts.seed;
        cell.white_box = victim_name == surrogate_name;
        report.rows.push_back(std::move(cell));
      }
    }
  }
  return report;
}

SweepParam sweep_param_from_name(const std::string& name) {
  if (name == "L") return SweepParam::Lower;
  if (name == "H") return SweepParam::Upper;
  if (name == "r") return SweepParam::Range;
  if (name == "m") return SweepParam::Copies;
  throw ConfigError("unknown sweep parameter '" + name +
                    "' (valid: L, H, r, m)");
}

const char* sweep_param_name(SweepParam p) {
  switch (p) {
    case SweepParam::Lower: return "L";
    case SweepParam::Upper: return "H";
    case SweepParam::Range: return "r";
    case SweepParam::Copies: return "m";
  }
  return "?";
}

namespace {

AttackConfig apply_sweep_value(const AttackConfig& base, SweepParam p,
                               double v) {
  AttackConfig cfg = base;
  switch (p) {
    case SweepParam::Lower:
      if (v < 0.0 || v > cfg.scale.upper)
        throw ConfigError("sweep: L value " + std::to_string(v) +
                          " outside [0, H]");
      cfg.scale.lower = v;
      break;
    case SweepParam::Upper:
      if (v < cfg.scale.lower || v > 1.0)
        throw ConfigError("sweep: H value " + std::to_string(v) +
                          " outside [L, 1]");
      cfg.scale.upper = v;
      break;
    case SweepParam::Range:
      if (v < 0.0 || v > 1.0)
        throw ConfigError("sweep: r value " + std::to_string(v) +
                          " outside [0, 1]");
      cfg.mix.range = v;
      break;
    case SweepParam::Copies: {
      const double rounded = std::round(v);
      if (std::abs(v - rounded) > 1e-9 || rounded < 1.0)
        throw ConfigError("sweep: m value " + std::to_string(v) +
                          " must be a positive integer");
      cfg.scale.copies = int(rounded);
      break;
    }
  }
  return cfg;
}

}  // namespace

SweepReport ablation_sweep(
    SweepParam parameter, const std::vector<double>& grid,
    const AttackConfig& base_cfg, const std::string& surrogate,
    const std::vector<std::pair<std::string, Classifier>>& models,
    const Dataset& data, const SweepOptions& opts) {
  if (grid.empty()) throw ConfigError("sweep: empty grid");
  for (size_t i = 1; i < grid.size(); ++i)
    if (grid[i] <= grid[i - 1])
      throw ConfigError("sweep: grid must be strictly increasing");
  const Classifier* surrogate_model = nullptr;
  for (const auto& [name, model] : models)
    if (name == surrogate) surrogate_model = &model;
  if (!surrogate_model)
    throw ConfigError("sweep: unknown surrogate '" + surrogate + "'");
  if (opts.replicates < 1) throw ConfigError("sweep: replicates must be >= 1");

  const std::vector<int> idx =
      choose_attack_indices(data, opts.attack_count, opts.seed);
  const std::vector<LabeledExample> examples = examples_of(data, idx);
  std::vector<Tensor> originals;
  std::vector<int> labels;
  for (const auto& e : examples) {
    originals.push_back(e.image);
    labels.push_back(e.label);
  }

  SweepReport report;
  report.parameter = sweep_param_name(parameter);
  report.grid = grid;

  for (double value : grid) {
    const AttackConfig cfg = apply_sweep_value(base_cfg, parameter, value);
    for (int rep = 0; rep < opts.replicates; ++rep) {
      const uint64_t rep_seed =
          hash_combine(opts.seed, hash_string("sweep-rep") + uint64_t(rep));
      const CraftOutput crafted = craft_adversarials(
          *surrogate_model, cfg, examples, rep_seed,
          std::string("sweep/") + report.parameter, opts.threads);
      audit_budget(crafted.adversarials, originals, cfg.budget.epsilon);
      for (const auto& [victim_name, victim] : models) {
        if (victim_name == surrogate) continue;
        SweepRow row;
        row.parameter = report.parameter;
        row.value = value;
        row.victim = victim_name;
        row.rate = success_rate(victim, crafted.adversarials, labels, originals);
        row.seed = rep_seed;
        report.rows.push_back(std::move(row));
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// CSV renderings.
// ---------------------------------------------------------------------------

namespace {

std::string fmt_rate(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt_filtered(const SuccessRate& r) {
  return r.filtered_defined ? fmt_rate(r.filtered) : std::string("na");
}

std::string fmt_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string transfer_csv(const std::vector<TransferCell>& rows) {
  std::ostringstream os;
  os << "surrogate,victim,attack,raw_rate,filtered_rate,clean_error,n,seed\n";
  for (const auto& r : rows)
    os << r.surrogate << ',' << r.victim << ',' << r.attack << ','
       << fmt_rate(r.rate.raw) << ',' << fmt_filtered(r.rate) << ','
       << fmt_rate(r.rate.clean_error) << ',' << r.rate.n << ',' << r.seed
       << '\n';
  return os.str();
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "parameter,value,victim,raw_rate,filtered_rate,seed\n";
  for (const auto& r : rows)
    os << r.parameter << ',' << fmt_value(r.value) << ',' << r.victim << ','
       << fmt_rate(r.rate.raw) << ',' << fmt_filtered(r.rate) << ',' << r.seed
       << '\n';
  return os.str();
}

std::vector<AttackSummary> summarize_transfer(
    const std::vector<TransferCell>& rows) {
  std::vector<AttackSummary> out;
  auto find = [&](const std::string& attack) -> AttackSummary& {
    for (auto& s : out)
      if (s.attack == attack) return s;
    out.push_back({attack, 0.0, 0.0, 0});
    return out.back();
  };
  for (const auto& r : rows) {
    if (r.white_box || r.surrogate == r.victim) continue;
    AttackSummary& s = find(r.attack);
    s.mean_transfer_raw += r.rate.raw;
    if (r.rate.filtered_defined) s.mean_transfer_filtered += r.rate.filtered;
    s.transfer_rows++;
  }
  for (auto& s : out) {
    if (s.transfer_rows > 0) {
      s.mean_transfer_raw /= double(s.transfer_rows);
      s.mean_transfer_filtered /= double(s.transfer_rows);
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const AttackSummary& a, const AttackSummary& b) {
                     if (a.mean_transfer_raw != b.mean_transfer_raw)
                       return a.mean_transfer_raw > b.mean_transfer_raw;
                     return a.attack < b.attack;
                   });
  return out;
}

std::string summary_csv(const std::vector<AttackSummary>& rows) {
  std::ostringstream os;
  os << "attack,mean_transfer_raw,mean_transfer_filtered,transfer_rows\n";
  for (const auto& r : rows)
    os << r.attack << ',' << fmt_rate(r.mean_transfer_raw) << ','
       << fmt_rate(r.mean_transfer_filtered) << ',' << r.transfer_rows << '\n';
  return os.str();
}

std::vector<TransferCell> parse_transfer_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line))
    throw DataError(DataError::Kind::Malformed, "transfer csv: empty file");
  if (line != "surrogate,victim,attack,raw_rate,filtered_rate,clean_error,n,seed")
    throw DataError(DataError::Kind::Malformed,
                    "transfer csv: unexpected header '" + line + "'");
  std::vector<TransferCell> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (fields.size() != 8)
      throw DataError(DataError::Kind::Malformed,
                      "transfer csv: bad row '" + line + "'");
    TransferCell c;
    c.surrogate = fields[0];
    c.victim = fields[1];
    c.attack = fields[2];
    c.rate.raw = std::stod(fields[3]);
    if (fields[4] != "na") {
      c.rate.filtered = std::stod(fields[4]);
      c.rate.filtered_defined = true;
    }
    c.rate.clean_error = std::stod(fields[5]);
    c.rate.n = std::stoi(fields[6]);
    c.seed = std::stoull(fields[7]);
    c.white_box = c.surrogate == c.victim;
    rows.push_back(std::move(c));
  }
  return rows;
}

double monotone_trace_fraction(
    const std::vector<std::vector<double>>& traces) {
  if (traces.empty()) return 0.0;
  int monotone = 0;
  for (const auto& t : traces) {
    bool ok = true;
    for (size_t i = 1; i < t.size(); ++i)
      if (t[i] < t[i - 1]) { ok = false; break; }
    if (ok) ++monotone;
  }
  return double(monotone) / double(traces.size());
}

}  // namespace tg
