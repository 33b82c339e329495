// Command-line front end: dataset generation, training, attack crafting,
// transfer evaluation and ablation sweeps, all driven by one config file.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "transfergrad/archive.hpp"
#include "transfergrad/attacks.hpp"
#include "transfergrad/config.hpp"
#include "transfergrad/data.hpp"
#include "transfergrad/errors.hpp"
#include "transfergrad/harness.hpp"
#include "transfergrad/nn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tg;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct GlobalArgs {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> output_dir;
  bool print_config_only = false;
};

RunConfig load_run_config(const GlobalArgs& g) {
  RunConfig cfg;
  if (!g.config_path.empty()) cfg = parse_config_file(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  if (!cfg.seed) {
    if (const char* env = std::getenv("TRANSFERGRAD_SEED"))
      cfg.seed = std::stoull(env);
  }
  if (g.threads) cfg.threads = *g.threads;
  if (g.output_dir) cfg.output_dir = *g.output_dir;
  cfg.validate();
  return cfg;
}

// every command announces the merged, re-ingestible configuration first
void announce(const RunConfig& cfg, const std::string& command) {
  std::cout << "# transfergrad " << command << "\n"
            << "# resolved configuration:\n"
            << print_config(cfg) << "# master seed = "
            << (cfg.seed ? std::to_string(*cfg.seed) : std::string("unset"))
            << "\n";
}

std::string model_path(const RunConfig& cfg, const std::string& name) {
  return (fs::path(cfg.output_dir) / "models" / (name + ".bin")).string();
}

// architecture input geometry comes from the dataset, not the config file
ArchitectureSpec resolve_arch(const ArchitectureSpec& arch,
                              const Dataset& data) {
  ArchitectureSpec out = arch;
  out.in_channels = data.channels;
  out.in_height = data.height;
  out.in_width = data.width;
  out.classes = data.classes;
  return out;
}

Classifier load_model_checked(const RunConfig& cfg, const std::string& name,
                              const Dataset& data) {
  const std::string path = model_path(cfg, name);
  if (!fs::exists(path))
    throw DataError(DataError::Kind::NotFound,
                    "model file " + path + " not found; run `transfergrad "
                    "train --model " + name + "` first");
  Classifier model = load_model(path);
  if (model.spec.in_channels != data.channels ||
      model.spec.in_height != data.height ||
      model.spec.in_width != data.width || model.spec.classes != data.classes)
    throw DataError(DataError::Kind::Malformed,
                    "model " + name + " was trained for " +
                        model.spec.describe() +
                        ", which does not match the configured dataset");
  return model;
}

void write_text_file(const std::string& path, const std::string& text) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError(DataError::Kind::NotFound, "cannot write " + path);
  f << text;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)v);
  return buf;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  std::optional<int> classes, per_class, size;
  std::optional<double> sigma, train_frac, background, foreground, texture;
  bool force = false;
};

int cmd_gen_data(RunConfig& cfg, const GenDataArgs& args) {
  SyntheticSpec spec = cfg.dataset.synthetic;
  if (args.classes) spec.classes = *args.classes;
  if (args.per_class) spec.per_class = *args.per_class;
  if (args.size) spec.size = *args.size;
  if (args.sigma) spec.sigma = *args.sigma;
  if (args.train_frac) spec.train_frac = *args.train_frac;
  if (args.background) spec.background = *args.background;
  if (args.foreground) spec.foreground = *args.foreground;
  if (args.texture) spec.texture = *args.texture;
  spec.seed = cfg.dataset.synthetic_seed_set ? cfg.dataset.synthetic.seed
                                             : cfg.require_seed();
  cfg.dataset.source = "synthetic";
  cfg.dataset.synthetic = spec;
  cfg.dataset.synthetic_seed_set = true;
  announce(cfg, "gen-data");

  if (fs::exists(fs::path(args.out) / "manifest.json") && !args.force)
    throw DataError(DataError::Kind::AlreadyExists,
                    args.out + " already holds a dataset; pass --force to "
                    "overwrite");

  const Dataset data = gen_synthetic(spec);
  fs::create_directories(args.out);

  const auto train_idx = data.indices_of(Split::Train);
  const auto test_idx = data.indices_of(Split::Test);
  auto subset_images = [&](const std::vector<int>& idx) {
    std::vector<Tensor> out;
    for (int i : idx) out.push_back(data.images[size_t(i)]);
    return out;
  };
  auto subset_labels = [&](const std::vector<int>& idx) {
    std::vector<int> out;
    for (int i : idx) out.push_back(data.labels[size_t(i)]);
    return out;
  };

  const struct {
    const char* key;
    const char* file;
  } files[] = {
      {"train_images", "train-images.idx"},
      {"train_labels", "train-labels.idx"},
      {"test_images", "test-images.idx"},
      {"test_labels", "test-labels.idx"},
  };
  save_idx_images((fs::path(args.out) / files[0].file).string(),
                  subset_images(train_idx));
  save_idx_labels((fs::path(args.out) / files[1].file).string(),
                  subset_labels(train_idx));
  save_idx_images((fs::path(args.out) / files[2].file).string(),
                  subset_images(test_idx));
  save_idx_labels((fs::path(args.out) / files[3].file).string(),
                  subset_labels(test_idx));

  json manifest;
  manifest["format"] = "tg-dataset";
  manifest["version"] = 1;
  manifest["classes"] = spec.classes;
  manifest["per_class"] = spec.per_class;
  manifest["size"] = spec.size;
  manifest["sigma"] = spec.sigma;
  manifest["train_frac"] = spec.train_frac;
  manifest["background"] = spec.background;
  manifest["foreground"] = spec.foreground;
  manifest["texture"] = spec.texture;
  manifest["seed"] = spec.seed;
  manifest["images"] = data.size();
  manifest["counts"] = {
      {"train", train_idx.size()},
      {"test", test_idx.size()},
      {"per_class_train", data.per_class_count(Split::Train)},
      {"per_class_test", data.per_class_count(Split::Test)},
  };
  json file_entries;
  for (const auto& f : files) {
    const std::string path = (fs::path(args.out) / f.file).string();
    file_entries[f.key] = {{"path", f.file},
                           {"fnv64", hex64(fnv1a64_file(path))}};
  }
  manifest["files"] = file_entries;
  write_text_file((fs::path(args.out) / "manifest.json").string(),
                  manifest.dump(2) + "\n");

  std::cout << "wrote " << data.size() << " images (" << train_idx.size()
            << " train / " << test_idx.size() << " test) to " << args.out
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(RunConfig& cfg, const std::string& model_name,
              std::optional<int> epochs_override) {
  if (epochs_override) {
    for (auto& [name, entry] : cfg.models)
      if (name == model_name) entry.train.epochs = *epochs_override;
  }
  announce(cfg, "train");
  const uint64_t master = cfg.require_seed();
  const ModelEntry& entry = cfg.model(model_name);
  const Dataset data = load_dataset(cfg.dataset, master);

  Classifier model =
      build_classifier(resolve_arch(entry.arch, data), entry.train.seed);
  std::cout << "training " << model_name << ": " << model.spec.describe()
            << "\n";
  const auto metrics = train(model, data, entry.train);
  for (const auto& m : metrics)
    std::printf("epoch %d  loss %.4f  train %.4f  test %.4f\n", m.epoch,
                m.train_loss, m.train_accuracy, m.test_accuracy);

  const std::string path = model_path(cfg, model_name);
  fs::create_directories(fs::path(path).parent_path());
  save_model(model, path);

  std::string csv = "epoch,train_loss,train_accuracy,test_accuracy\n";
  for (const auto& m : metrics) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f\n", m.epoch,
                  m.train_loss, m.train_accuracy, m.test_accuracy);
    csv += buf;
  }
  const std::string metrics_path =
      (fs::path(cfg.output_dir) / "metrics" / (model_name + ".csv")).string();
  write_text_file(metrics_path, csv);
  std::cout << "saved " << path << " and " << metrics_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------------

struct AttackArgs {
  std::string surrogate;
  std::string attack;
  std::string out;
  std::optional<int> images;
  bool force = false;
  // overrides
  std::optional<std::string> family;
  std::optional<double> epsilon, alpha, mu, lower, upper, range, eta;
  std::optional<int> iterations, copies, copies_us, mix_count;
};

int cmd_attack(RunConfig& cfg, const AttackArgs& args) {
  AttackConfig attack;
  if (args.family) {
    attack = default_attack_config(family_from_name(*args.family));
  } else {
    attack = cfg.attack(args.attack);
  }
  if (args.epsilon) attack.budget.epsilon = *args.epsilon;
  if (args.iterations) attack.budget.iterations = *args.iterations;
  if (args.alpha) attack.budget.step = *args.alpha;
  if (args.mu) attack.momentum = *args.mu;
  if (args.copies) attack.scale.copies = *args.copies;
  if (args.copies_us) attack.scale.copies = *args.copies_us;
  if (args.lower) attack.scale.lower = *args.lower;
  if (args.upper) attack.scale.upper = *args.upper;
  if (args.mix_count) attack.mix.mix_count = *args.mix_count;
  if (args.range) attack.mix.range = *args.range;
  if (args.eta) attack.mix.ratio = *args.eta;
  attack.validate();

  // reflect the overrides in the announced configuration
  const std::string attack_label =
      args.attack.empty() ? std::string(family_name(attack.family))
                          : args.attack;
  bool replaced = false;
  for (auto& [name, a] : cfg.attacks)
    if (name == attack_label) {
      a = attack;
      replaced = true;
    }
  if (!replaced) cfg.attacks.emplace_back(attack_label, attack);
  announce(cfg, "attack");

  const uint64_t master = cfg.require_seed();
  const Dataset data = load_dataset(cfg.dataset, master);
  const Classifier surrogate = load_model_checked(cfg, args.surrogate, data);

  const int count = args.images ? *args.images : cfg.eval.images;
  const auto idx = choose_attack_indices(data, count, master);
  const auto examples = examples_of(data, idx);

  const CraftOutput crafted =
      craft_adversarials(surrogate, attack, examples, master,
                         args.surrogate + "/" + attack_label, cfg.threads);
  std::vector<Tensor> originals;
  for (const auto& e : examples) originals.push_back(e.image);
  audit_budget(crafted.adversarials, originals, attack.budget.epsilon);

  const std::string out_dir =
      !args.out.empty()
          ? args.out
          : (fs::path(cfg.output_dir) / "archives" /
             (args.surrogate + "." + attack_label))
                .string();
  if (fs::exists(fs::path(out_dir) / "manifest.json") && !args.force)
    throw DataError(DataError::Kind::AlreadyExists,
                    out_dir + " already holds an archive; pass --force to "
                    "overwrite");

  AdversarialArchive archive;
  archive.attack = attack_label;
  archive.surrogate = args.surrogate;
  archive.epsilon = attack.budget.epsilon;
  archive.seed = master;
  // hash the path-independent attack description so reruns in different
  // directories stay byte-identical
  RunConfig attack_only;
  attack_only.seed = master;
  attack_only.attacks.emplace_back(attack_label, attack);
  const std::string printed = print_config(attack_only);
  archive.config_hash = fnv1a64(printed.data(), printed.size());
  archive.channels = data.channels;
  archive.height = data.height;
  archive.width = data.width;
  archive.originals = originals;
  archive.adversarials = crafted.adversarials;
  for (const auto& e : examples) archive.labels.push_back(e.label);
  archive.linf = crafted.linf;
  write_archive(out_dir, archive);

  double max_linf = 0.0;
  for (double v : crafted.linf) max_linf = std::max(max_linf, v);
  std::printf(
      "crafted %zu adversarials with %s: max linf %.6f (epsilon %.6f), "
      "%ld gradient queries\n",
      archive.size(), attack_label.c_str(), max_linf, attack.budget.epsilon,
      crafted.gradient_queries);
  std::cout << "archive written to " << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval / sweep / report
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string out;
  std::optional<int> images, replicates;
};

int cmd_eval(RunConfig& cfg, const EvalArgs& args) {
  if (args.images) cfg.eval.images = *args.images;
  if (args.replicates) cfg.eval.replicates = *args.replicates;
  announce(cfg, "eval");
  const uint64_t master = cfg.require_seed();
  const Dataset data = load_dataset(cfg.dataset, master);

  if (cfg.models.size() < 2)
    throw ConfigError("eval needs at least 2 configured models");
  std::vector<std::pair<std::string, Classifier>> models;
  for (const auto& [name, _] : cfg.models)
    models.emplace_back(name, load_model_checked(cfg, name, data));

  std::vector<std::pair<std::string, AttackConfig>> attacks;
  if (cfg.eval.attacks.empty()) {
    for (const auto& entry : cfg.attacks) attacks.push_back(entry);
  } else {
    for (const auto& name : cfg.eval.attacks)
      attacks.emplace_back(name, cfg.attack(name));
  }
  if (attacks.empty()) throw ConfigError("eval: no attacks configured");

  std::vector<TransferCell> rows;
  for (int rep = 0; rep < cfg.eval.replicates; ++rep) {
    TransferOptions opts;
    opts.attack_count = cfg.eval.images;
    opts.seed = hash_combine(master, uint64_t(rep));
    opts.threads = cfg.threads;
    opts.surrogates = cfg.eval.surrogates;
    const TransferReport report = transfer_matrix(models, attacks, data, opts);
    rows.insert(rows.end(), report.rows.begin(), report.rows.end());
  }

  const std::string out_path =
      !args.out.empty() ? args.out
                        : (fs::path(cfg.output_dir) / "transfer.csv").string();
  write_text_file(out_path, transfer_csv(rows));
  std::cout << "wrote " << rows.size() << " rows to " << out_path << "\n";
  std::cout << summary_csv(summarize_transfer(rows));
  return 0;
}

struct SweepArgs {
  std::string out;
  std::optional<std::string> param, grid, surrogate, attack;
  std::optional<int> images, replicates;
};

int cmd_sweep(RunConfig& cfg, const SweepArgs& args) {
  if (args.param) cfg.sweep.parameter = *args.param;
  if (args.grid) cfg.sweep.grid = parse_grid(*args.grid);
  if (args.surrogate) cfg.sweep.surrogate = *args.surrogate;
  if (args.attack) cfg.sweep.attack = *args.attack;
  if (args.images) cfg.sweep.images = *args.images;
  if (args.replicates) cfg.sweep.replicates = *args.replicates;
  announce(cfg, "sweep");

  if (cfg.sweep.grid.empty()) throw ConfigError("sweep: no grid given");
  if (cfg.sweep.surrogate.empty())
    throw ConfigError("sweep: no surrogate given");
  if (cfg.sweep.attack.empty()) throw ConfigError("sweep: no attack given");

  const uint64_t master = cfg.require_seed();
  const Dataset data = load_dataset(cfg.dataset, master);
  std::vector<std::pair<std::string, Classifier>> models;
  for (const auto& [name, _] : cfg.models)
    models.emplace_back(name, load_model_checked(cfg, name, data));

  SweepOptions opts;
  opts.attack_count = cfg.sweep.images;
  opts.seed = master;
  opts.replicates = cfg.sweep.replicates;
  opts.threads = cfg.threads;
  const SweepReport report = ablation_sweep(
      sweep_param_from_name(cfg.sweep.parameter), cfg.sweep.grid,
      cfg.attack(cfg.sweep.attack), cfg.sweep.surrogate, models, data, opts);

  const std::string out_path =
      !args.out.empty() ? args.out
                        : (fs::path(cfg.output_dir) / "sweep.csv").string();
  write_text_file(out_path, sweep_csv(report.rows));
  std::cout << "wrote " << report.rows.size() << " rows to " << out_path
            << "\n";
  return 0;
}

int cmd_report(RunConfig& cfg, const std::vector<std::string>& inputs,
               const std::string& out) {
  announce(cfg, "report");
  if (inputs.empty()) throw ConfigError("report: no input CSVs given");
  std::vector<TransferCell> rows;
  for (const auto& path : inputs) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(DataError::Kind::NotFound, "cannot open " + path);
    std::ostringstream buffer;
    buffer << f.rdbuf();
    const auto parsed = parse_transfer_csv(buffer.str());
    rows.insert(rows.end(), parsed.begin(), parsed.end());
  }
  const std::string text = summary_csv(summarize_transfer(rows));
  std::cout << text;
  if (!out.empty()) write_text_file(out, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "transfergrad: desk-scale benchmark for transfer-based adversarial "
      "attacks (fgsm, bim, mifgsm, dim, tim, sim, admix, usm, mm, sim_mm, "
      "us_mm)"};
  app.require_subcommand(0, 1);

  GlobalArgs global;
  app.add_option("-c,--config", global.config_path, "config file path");
  app.add_option("--seed", global.seed,
                 "master seed (fallback: config, then TRANSFERGRAD_SEED)");
  app.add_option("--threads", global.threads, "worker thread cap");
  app.add_option("--output-dir", global.output_dir, "run output directory");
  app.add_flag("--print-config", global.print_config_only,
               "print the merged configuration and exit");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  GenDataArgs gen_args;
  gen->add_option("--out", gen_args.out, "output directory")->required();
  gen->add_option("--classes", gen_args.classes);
  gen->add_option("--per-class", gen_args.per_class);
  gen->add_option("--size", gen_args.size);
  gen->add_option("--sigma", gen_args.sigma);
  gen->add_option("--train-frac", gen_args.train_frac);
  gen->add_option("--background", gen_args.background);
  gen->add_option("--foreground", gen_args.foreground);
  gen->add_option("--texture", gen_args.texture);
  gen->add_flag("--force", gen_args.force, "overwrite an existing dataset");

  auto* train_cmd = app.add_subcommand("train", "train one configured model");
  std::string train_model;
  std::optional<int> train_epochs;
  train_cmd->add_option("--model", train_model, "model name from the config")
      ->required();
  train_cmd->add_option("--epochs", train_epochs,
                        "override the configured epoch count");

  auto* attack_cmd =
      app.add_subcommand("attack", "craft an adversarial archive");
  AttackArgs attack_args;
  attack_cmd->add_option("--surrogate", attack_args.surrogate)->required();
  attack_cmd->add_option("--attack", attack_args.attack,
                         "attack name from the config");
  attack_cmd->add_option("--out", attack_args.out, "archive directory");
  attack_cmd->add_option("--images", attack_args.images);
  attack_cmd->add_flag("--force", attack_args.force);
  attack_cmd->add_option("--family", attack_args.family,
                         "attack family (overrides --attack)");
  attack_cmd->add_option("--epsilon", attack_args.epsilon);
  attack_cmd->add_option("-T,--iterations", attack_args.iterations);
  attack_cmd->add_option("--alpha", attack_args.alpha);
  attack_cmd->add_option("--mu", attack_args.mu);
  attack_cmd->add_option("--m", attack_args.copies);
  attack_cmd->add_option("--m-us", attack_args.copies_us);
  attack_cmd->add_option("--L", attack_args.lower);
  attack_cmd->add_option("--H", attack_args.upper);
  attack_cmd->add_option("--m-mix", attack_args.mix_count);
  attack_cmd->add_option("--r", attack_args.range);
  attack_cmd->add_option("--eta", attack_args.eta);

  auto* eval_cmd =
      app.add_subcommand("eval", "transfer matrix over models x attacks");
  EvalArgs eval_args;
  eval_cmd->add_option("--out", eval_args.out, "transfer CSV path");
  eval_cmd->add_option("--images", eval_args.images);
  eval_cmd->add_option("--replicates", eval_args.replicates);

  auto* sweep_cmd = app.add_subcommand("sweep", "hyper-parameter sweep");
  SweepArgs sweep_args;
  sweep_cmd->add_option("--out", sweep_args.out, "sweep CSV path");
  sweep_cmd->add_option("--param", sweep_args.param, "L, H, r or m");
  sweep_cmd->add_option("--grid", sweep_args.grid,
                        "start:stop:step or comma list");
  sweep_cmd->add_option("--surrogate", sweep_args.surrogate);
  sweep_cmd->add_option("--attack", sweep_args.attack);
  sweep_cmd->add_option("--images", sweep_args.images);
  sweep_cmd->add_option("--replicates", sweep_args.replicates);

  auto* report_cmd =
      app.add_subcommand("report", "rank attacks from transfer CSVs");
  std::vector<std::string> report_inputs;
  std::string report_out;
  report_cmd->add_option("--in", report_inputs, "transfer CSVs")
      ->required()
      ->delimiter(',');
  report_cmd->add_option("--out", report_out, "summary CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    RunConfig cfg = load_run_config(global);
    if (global.print_config_only) {
      std::cout << print_config(cfg);
      return 0;
    }
    if (gen->parsed()) return cmd_gen_data(cfg, gen_args);
    if (train_cmd->parsed()) return cmd_train(cfg, train_model, train_epochs);
    if (attack_cmd->parsed()) {
      if (attack_args.attack.empty() && !attack_args.family)
        throw ConfigError("attack: pass --attack <name> or --family <family>");
      return cmd_attack(cfg, attack_args);
    }
    if (eval_cmd->parsed()) return cmd_eval(cfg, eval_args);
    if (sweep_cmd->parsed()) return cmd_sweep(cfg, sweep_args);
    if (report_cmd->parsed()) return cmd_report(cfg, report_inputs, report_out);
    std::cout << app.help();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
