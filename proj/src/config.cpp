#include "transfergrad/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "transfergrad/errors.hpp"

namespace tg {

using nlohmann::json;

uint64_t RunConfig::require_seed() const {
  if (!seed)
    throw ConfigError(
        "no seed: pass --seed, set `seed =` in the config, or export "
        "TRANSFERGRAD_SEED");
  return *seed;
}

const ModelEntry& RunConfig::model(const std::string& name) const {
  for (const auto& [n, m] : models)
    if (n == name) return m;
  throw ConfigError("unknown model '" + name + "' (configured: " +
                    [&] {
                      std::string s;
                      for (const auto& [n, _] : models)
                        s += (s.empty() ? "" : ", ") + n;
                      return s.empty() ? std::string("none") : s;
                    }() +
                    ")");
}

const AttackConfig& RunConfig::attack(const std::string& name) const {
  for (const auto& [n, a] : attacks)
    if (n == name) return a;
  throw ConfigError("unknown attack '" + name + "' (configured: " +
                    [&] {
                      std::string s;
                      for (const auto& [n, _] : attacks)
                        s += (s.empty() ? "" : ", ") + n;
                      return s.empty() ? std::string("none") : s;
                    }() +
                    ")");
}

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("threads must be >= 1");
  std::set<std::string> model_names;
  for (const auto& [n, m] : models) {
    if (!model_names.insert(n).second)
      throw ConfigError("duplicate model name '" + n + "'");
    m.train.validate();
  }
  std::set<std::string> attack_names;
  for (const auto& [n, a] : attacks) {
    if (!attack_names.insert(n).second)
      throw ConfigError("duplicate attack name '" + n + "'");
    a.validate();
  }
  for (const auto& n : eval.surrogates) model(n);
  for (const auto& n : eval.attacks) attack(n);
  if (eval.images < 1) throw ConfigError("eval: images must be >= 1");
  if (eval.replicates < 1) throw ConfigError("eval: replicates must be >= 1");
  if (!sweep.surrogate.empty()) model(sweep.surrogate);
  if (!sweep.attack.empty()) attack(sweep.attack);
}

// ---------------------------------------------------------------------------
// Value parsing.
// ---------------------------------------------------------------------------

double parse_double_value(const std::string& text, const std::string& what) {
  const auto slash = text.find('/');
  auto one = [&](const std::string& s) {
    size_t used = 0;
    double v = 0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      throw ConfigError(what + ": cannot parse number '" + s + "'");
    }
    if (used != s.size())
      throw ConfigError(what + ": trailing characters in number '" + s + "'");
    return v;
  };
  if (slash == std::string::npos) return one(text);
  const double denom = one(text.substr(slash + 1));
  if (denom == 0.0) throw ConfigError(what + ": division by zero");
  return one(text.substr(0, slash)) / denom;
}

namespace {

int parse_int_value(const std::string& text, const std::string& what) {
  size_t used = 0;
  long v = 0;
  try {
    v = std::stol(text, &used);
  } catch (const std::exception&) {
    throw ConfigError(what + ": cannot parse integer '" + text + "'");
  }
  if (used != text.size())
    throw ConfigError(what + ": trailing characters in integer '" + text + "'");
  return int(v);
}

uint64_t parse_u64_value(const std::string& text, const std::string& what) {
  size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &used);
  } catch (const std::exception&) {
    throw ConfigError(what + ": cannot parse seed '" + text + "'");
  }
  if (used != text.size())
    throw ConfigError(what + ": trailing characters in '" + text + "'");
  return v;
}

bool parse_bool_value(const std::string& text, const std::string& what) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(what + ": expected a boolean, got '" + text + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(text);
  while (std::getline(is, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& text,
                                const std::string& what) {
  std::vector<int> out;
  for (const auto& s : split_list(text)) out.push_back(parse_int_value(s, what));
  return out;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i)
    s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string join_strings(const std::vector<std::string>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

}  // namespace

std::vector<double> parse_grid(const std::string& text) {
  const auto colons = std::count(text.begin(), text.end(), ':');
  std::vector<double> grid;
  if (colons == 2) {
    const auto c1 = text.find(':');
    const auto c2 = text.find(':', c1 + 1);
    const double start = parse_double_value(text.substr(0, c1), "grid start");
    const double stop = parse_double_value(text.substr(c1 + 1, c2 - c1 - 1),
                                           "grid stop");
    const double step = parse_double_value(text.substr(c2 + 1), "grid step");
    if (step <= 0.0) throw ConfigError("grid: step must be > 0");
    if (stop < start) throw ConfigError("grid: stop below start");
    const int n = int(std::lround((stop - start) / step)) + 1;
    if (n < 1 || n > 10000) throw ConfigError("grid: bad point count");
    for (int i = 0; i < n; ++i)
      grid.push_back(i == n - 1 ? stop : start + double(i) * step);
  } else if (colons == 0) {
    for (const auto& s : split_list(text))
      grid.push_back(parse_double_value(s, "grid value"));
  } else {
    throw ConfigError("grid: expected start:stop:step or a comma list, got '" +
                      text + "'");
  }
  if (grid.empty()) throw ConfigError("grid: empty");
  for (size_t i = 1; i < grid.size(); ++i)
    if (grid[i] <= grid[i - 1])
      throw ConfigError("grid: values must be strictly increasing");
  return grid;
}

// ---------------------------------------------------------------------------
// Config text parsing.
// ---------------------------------------------------------------------------

namespace {

struct Entry {
  std::string section;
  std::string key;
  std::string value;
  int line;
  bool consumed = false;
};

std::vector<Entry> tokenize(const std::string& text) {
  std::vector<Entry> entries;
  std::istringstream is(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": unterminated section header");
      section = line.substr(1, line.size() - 2);
      if (section.empty())
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value");
    auto trim = [](std::string s) {
      const auto bb = s.find_first_not_of(" \t");
      if (bb == std::string::npos) return std::string();
      const auto ee = s.find_last_not_of(" \t");
      return s.substr(bb, ee - bb + 1);
    };
    Entry entry;
    entry.section = section;
    entry.key = trim(line.substr(0, eq));
    entry.value = trim(line.substr(eq + 1));
    entry.line = line_no;
    if (entry.key.empty())
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": empty key");
    entries.push_back(std::move(entry));
  }
  return entries;
}

class Section {
 public:
  Section(std::vector<Entry>& entries, std::string name)
      : entries_(entries), name_(std::move(name)) {}

  const std::string* find(const std::string& key) {
    const std::string* out = nullptr;
    for (auto& e : entries_)
      if (e.section == name_ && e.key == key) {
        e.consumed = true;
        out = &e.value;  // last occurrence wins
      }
    return out;
  }

  bool get(const std::string& key, std::string& into) {
    if (const std::string* v = find(key)) { into = *v; return true; }
    return false;
  }
  bool get(const std::string& key, double& into) {
    if (const std::string* v = find(key)) {
      into = parse_double_value(*v, where(key));
      return true;
    }
    return false;
  }
  bool get(const std::string& key, int& into) {
    if (const std::string* v = find(key)) {
      into = parse_int_value(*v, where(key));
      return true;
    }
    return false;
  }
  bool get(const std::string& key, bool& into) {
    if (const std::string* v = find(key)) {
      into = parse_bool_value(*v, where(key));
      return true;
    }
    return false;
  }
  bool get(const std::string& key, uint64_t& into) {
    if (const std::string* v = find(key)) {
      into = parse_u64_value(*v, where(key));
      return true;
    }
    return false;
  }
  bool get(const std::string& key, std::vector<int>& into) {
    if (const std::string* v = find(key)) {
      into = parse_int_list(*v, where(key));
      return true;
    }
    return false;
  }
  bool get(const std::string& key, std::vector<std::string>& into) {
    if (const std::string* v = find(key)) {
      into = split_list(*v);
      return true;
    }
    return false;
  }

  std::string where(const std::string& key) const {
    return name_.empty() ? key : "[" + name_ + "] " + key;
  }

 private:
  std::vector<Entry>& entries_;
  std::string name_;
};

void bind_attack(Section& s, AttackConfig& cfg) {
  std::string family_name_str;
  if (!s.get("family", family_name_str))
    throw ConfigError(s.where("family") + " is required");
  cfg = default_attack_config(family_from_name(family_name_str));

  s.get("epsilon", cfg.budget.epsilon);
  s.get("iterations", cfg.budget.iterations);
  s.get("alpha", cfg.budget.step);
  s.get("mu", cfg.momentum);
  int copies;
  if (s.get("m", copies)) cfg.scale.copies = copies;
  if (s.get("m_us", copies)) cfg.scale.copies = copies;
  s.get("L", cfg.scale.lower);
  s.get("H", cfg.scale.upper);
  s.get("m_mix", cfg.mix.mix_count);
  s.get("r", cfg.mix.range);
  s.get("eta", cfg.mix.ratio);
  s.get("dim_p", cfg.baseline.resize_probability);
  s.get("dim_max_fraction", cfg.baseline.resize_max_fraction);
  s.get("tim_kernel", cfg.baseline.smooth_kernel);
  s.get("tim_sigma", cfg.baseline.smooth_sigma);
  s.get("jacobian_correction", cfg.jacobian_correction);
  s.get("fixed_mix_pool", cfg.fixed_mix_pool);
}

void bind_model(Section& s, ModelEntry& entry) {
  std::string kind = "mlp";
  s.get("kind", kind);
  if (kind == "mlp")
    entry.arch.kind = ModelKind::Mlp;
  else if (kind == "cnn")
    entry.arch.kind = ModelKind::Cnn;
  else
    throw ConfigError(s.where("kind") + ": expected mlp or cnn, got '" + kind +
                      "'");
  s.get("hidden", entry.arch.hidden);
  s.get("conv_channels", entry.arch.conv_channels);
  s.get("kernel", entry.arch.kernel);
  s.get("bias", entry.arch.bias);
  s.get("seed", entry.train.seed);
  s.get("epochs", entry.train.epochs);
  s.get("batch", entry.train.batch);
  s.get("lr", entry.train.learning_rate);
  s.get("momentum", entry.train.momentum);
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  std::vector<Entry> entries = tokenize(text);
  RunConfig cfg;

  Section root(entries, "");
  uint64_t seed;
  if (root.get("seed", seed)) cfg.seed = seed;
  root.get("output_dir", cfg.output_dir);
  root.get("threads", cfg.threads);

  Section dataset(entries, "dataset");
  dataset.get("source", cfg.dataset.source);
  dataset.get("classes", cfg.dataset.synthetic.classes);
  dataset.get("per_class", cfg.dataset.synthetic.per_class);
  dataset.get("size", cfg.dataset.synthetic.size);
  dataset.get("sigma", cfg.dataset.synthetic.sigma);
  dataset.get("train_frac", cfg.dataset.synthetic.train_frac);
  dataset.get("background", cfg.dataset.synthetic.background);
  dataset.get("foreground", cfg.dataset.synthetic.foreground);
  dataset.get("texture", cfg.dataset.synthetic.texture);
  if (dataset.get("seed", cfg.dataset.synthetic.seed))
    cfg.dataset.synthetic_seed_set = true;
  dataset.get("path", cfg.dataset.dir);
  dataset.get("train_images", cfg.dataset.train_images);
  dataset.get("train_labels", cfg.dataset.train_labels);
  dataset.get("test_images", cfg.dataset.test_images);
  dataset.get("test_labels", cfg.dataset.test_labels);
  dataset.get("idx_classes", cfg.dataset.idx_classes);
  if (cfg.dataset.source != "synthetic" && cfg.dataset.source != "idx" &&
      cfg.dataset.source != "dir")
    throw ConfigError("[dataset] source: expected synthetic, idx or dir, got '" +
                      cfg.dataset.source + "'");

  // named sections in file order
  std::vector<std::string> seen;
  for (const auto& e : entries) {
    if (std::find(seen.begin(), seen.end(), e.section) != seen.end()) continue;
    seen.push_back(e.section);
    if (e.section.rfind("model.", 0) == 0) {
      const std::string name = e.section.substr(6);
      if (name.empty() || name.find('.') != std::string::npos)
        throw ConfigError("bad model section name [" + e.section + "]");
      Section s(entries, e.section);
      ModelEntry entry;
      bind_model(s, entry);
      cfg.models.emplace_back(name, std::move(entry));
    } else if (e.section.rfind("attack.", 0) == 0) {
      const std::string name = e.section.substr(7);
      if (name.empty() || name.find('.') != std::string::npos)
        throw ConfigError("bad attack section name [" + e.section + "]");
      Section s(entries, e.section);
      AttackConfig attack;
      bind_attack(s, attack);
      cfg.attacks.emplace_back(name, std::move(attack));
    } else if (!e.section.empty() && e.section != "dataset" &&
               e.section != "eval" && e.section != "sweep") {
      throw ConfigError("unknown section [" + e.section + "] at line " +
                        std::to_string(e.line));
    }
  }

  Section eval(entries, "eval");
  eval.get("images", cfg.eval.images);
  eval.get("replicates", cfg.eval.replicates);
  eval.get("surrogates", cfg.eval.surrogates);
  eval.get("attacks", cfg.eval.attacks);

  Section sweep(entries, "sweep");
  sweep.get("param", cfg.sweep.parameter);
  std::string grid_text;
  if (sweep.get("grid", grid_text)) cfg.sweep.grid = parse_grid(grid_text);
  sweep.get("surrogate", cfg.sweep.surrogate);
  sweep.get("attack", cfg.sweep.attack);
  sweep.get("images", cfg.sweep.images);
  sweep.get("replicates", cfg.sweep.replicates);

  for (const auto& e : entries)
    if (!e.consumed)
      throw ConfigError("unknown key '" + e.key + "' in " +
                        (e.section.empty() ? "the top level"
                                           : "[" + e.section + "]") +
                        " (line " + std::to_string(e.line) + ")");
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f)
    throw DataError(DataError::Kind::NotFound,
                    "cannot open config file " + path);
  std::ostringstream buffer;
  buffer << f.rdbuf();
  return parse_config_text(buffer.str());
}

// ---------------------------------------------------------------------------
// Printing.
// ---------------------------------------------------------------------------

std::string print_config(const RunConfig& cfg) {
  std::ostringstream os;
  if (cfg.seed) os << "seed = " << *cfg.seed << "\n";
  os << "output_dir = " << cfg.output_dir << "\n";
  os << "threads = " << cfg.threads << "\n";

  os << "\n[dataset]\n";
  os << "source = " << cfg.dataset.source << "\n";
  if (cfg.dataset.source == "synthetic") {
    const auto& s = cfg.dataset.synthetic;
    os << "classes = " << s.classes << "\n";
    os << "per_class = " << s.per_class << "\n";
    os << "size = " << s.size << "\n";
    os << "sigma = " << fmt_double(s.sigma) << "\n";
    os << "train_frac = " << fmt_double(s.train_frac) << "\n";
    os << "background = " << fmt_double(s.background) << "\n";
    os << "foreground = " << fmt_double(s.foreground) << "\n";
    os << "texture = " << fmt_double(s.texture) << "\n";
    if (cfg.dataset.synthetic_seed_set) os << "seed = " << s.seed << "\n";
  } else if (cfg.dataset.source == "dir") {
    os << "path = " << cfg.dataset.dir << "\n";
  } else {
    os << "train_images = " << cfg.dataset.train_images << "\n";
    os << "train_labels = " << cfg.dataset.train_labels << "\n";
    os << "test_images = " << cfg.dataset.test_images << "\n";
    os << "test_labels = " << cfg.dataset.test_labels << "\n";
    if (cfg.dataset.idx_classes > 0)
      os << "idx_classes = " << cfg.dataset.idx_classes << "\n";
  }

  for (const auto& [name, m] : cfg.models) {
    os << "\n[model." << name << "]\n";
    os << "kind = " << (m.arch.kind == ModelKind::Cnn ? "cnn" : "mlp") << "\n";
    if (m.arch.kind == ModelKind::Cnn) {
      os << "conv_channels = " << join_ints(m.arch.conv_channels) << "\n";
      os << "kernel = " << m.arch.kernel << "\n";
    }
    os << "hidden = " << join_ints(m.arch.hidden) << "\n";
    os << "bias = " << (m.arch.bias ? "true" : "false") << "\n";
    os << "seed = " << m.train.seed << "\n";
    os << "epochs = " << m.train.epochs << "\n";
    os << "batch = " << m.train.batch << "\n";
    os << "lr = " << fmt_double(m.train.learning_rate) << "\n";
    os << "momentum = " << fmt_double(m.train.momentum) << "\n";
  }

  for (const auto& [name, a] : cfg.attacks) {
    os << "\n[attack." << name << "]\n";
    os << "family = " << family_name(a.family) << "\n";
    os << "epsilon = " << fmt_double(a.budget.epsilon) << "\n";
    os << "iterations = " << a.budget.iterations << "\n";
    if (a.budget.step > 0.0) os << "alpha = " << fmt_double(a.budget.step) << "\n";
    os << "mu = " << fmt_double(a.momentum) << "\n";
    if (a.uses_scale()) {
      const bool uniform = a.scale.family == ScaleFamily::Uniform;
      os << (uniform ? "m_us = " : "m = ") << a.scale.copies << "\n";
      if (uniform) {
        os << "L = " << fmt_double(a.scale.lower) << "\n";
        os << "H = " << fmt_double(a.scale.upper) << "\n";
      }
    }
    if (a.uses_mix()) {
      os << "m_mix = " << a.mix.mix_count << "\n";
      if (a.family != AttackFamily::Admix)
        os << "r = " << fmt_double(a.mix.range) << "\n";
      if (a.family == AttackFamily::Admix)
        os << "eta = " << fmt_double(a.mix.ratio) << "\n";
    }
    if (a.family == AttackFamily::Dim) {
      os << "dim_p = " << fmt_double(a.baseline.resize_probability) << "\n";
      os << "dim_max_fraction = " << fmt_double(a.baseline.resize_max_fraction)
         << "\n";
    }
    if (a.family == AttackFamily::Tim) {
      os << "tim_kernel = " << a.baseline.smooth_kernel << "\n";
      os << "tim_sigma = " << fmt_double(a.baseline.smooth_sigma) << "\n";
    }
    if (a.jacobian_correction) os << "jacobian_correction = true\n";
    if (a.fixed_mix_pool) os << "fixed_mix_pool = true\n";
  }

  os << "\n[eval]\n";
  os << "images = " << cfg.eval.images << "\n";
  os << "replicates = " << cfg.eval.replicates << "\n";
  if (!cfg.eval.surrogates.empty())
    os << "surrogates = " << join_strings(cfg.eval.surrogates) << "\n";
  if (!cfg.eval.attacks.empty())
    os << "attacks = " << join_strings(cfg.eval.attacks) << "\n";

  os << "\n[sweep]\n";
  os << "param = " << cfg.sweep.parameter << "\n";
  if (!cfg.sweep.grid.empty()) {
    os << "grid = ";
    for (size_t i = 0; i < cfg.sweep.grid.size(); ++i)
      os << (i ? "," : "") << fmt_double(cfg.sweep.grid[i]);
    os << "\n";
  }
  if (!cfg.sweep.surrogate.empty())
    os << "surrogate = " << cfg.sweep.surrogate << "\n";
  if (!cfg.sweep.attack.empty()) os << "attack = " << cfg.sweep.attack << "\n";
  os << "images = " << cfg.sweep.images << "\n";
  os << "replicates = " << cfg.sweep.replicates << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Dataset resolution.
// ---------------------------------------------------------------------------

Dataset load_dataset(const DatasetSection& section, uint64_t master_seed) {
  if (section.source == "synthetic") {
    SyntheticSpec spec = section.synthetic;
    if (!section.synthetic_seed_set) spec.seed = master_seed;
    return gen_synthetic(spec);
  }
  if (section.source == "dir") {
    if (section.dir.empty())
      throw ConfigError("[dataset] path required for source = dir");
    const std::string manifest_path = section.dir + "/manifest.json";
    std::ifstream mf(manifest_path);
    if (!mf)
      throw DataError(DataError::Kind::NotFound,
                      "cannot open dataset manifest " + manifest_path);
    json manifest;
    try {
      mf >> manifest;
    } catch (const json::exception& e) {
      throw DataError(DataError::Kind::Malformed,
                      manifest_path + ": " + e.what());
    }
    if (manifest.value("format", "") != "tg-dataset")
      throw DataError(DataError::Kind::BadMagic,
                      manifest_path + ": not a dataset manifest");
    const int classes = manifest.at("classes").get<int>();
    auto file = [&](const char* key) {
      const auto& entry = manifest.at("files").at(key);
      const std::string path =
          section.dir + "/" + entry.at("path").get<std::string>();
      const uint64_t want =
          std::strtoull(entry.at("fnv64").get<std::string>().c_str(), nullptr,
                        16);
      if (fnv1a64_file(path) != want)
        throw DataError(DataError::Kind::ChecksumMismatch,
                        path + ": checksum mismatch against manifest");
      return path;
    };
    auto [train_images, train_labels] =
        load_idx(file("train_images"), file("train_labels"));
    auto [test_images, test_labels] =
        load_idx(file("test_images"), file("test_labels"));
    return make_dataset(std::move(train_images), std::move(train_labels),
                        std::move(test_images), std::move(test_labels),
                        classes);
  }
  // raw idx pairs
  if (section.train_images.empty() || section.train_labels.empty() ||
      section.test_images.empty() || section.test_labels.empty())
    throw ConfigError(
        "[dataset] source = idx needs train_images, train_labels, "
        "test_images and test_labels");
  auto [train_images, train_labels] =
      load_idx(section.train_images, section.train_labels);
  auto [test_images, test_labels] =
      load_idx(section.test_images, section.test_labels);
  int classes = section.idx_classes;
  if (classes == 0) {
    for (int l : train_labels) classes = std::max(classes, l + 1);
    for (int l : test_labels) classes = std::max(classes, l + 1);
  }
  return make_dataset(std::move(train_images), std::move(train_labels),
                      std::move(test_images), std::move(test_labels), classes);
}

}  // namespace tg
