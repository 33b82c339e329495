// Acceptance suite: one pass/fail line per criterion, covering autodiff
// correctness, the exact transform algebra, attack soundness, the desk-scale
// benchmark behaviour, pipeline determinism and dataset ingestion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "transfergrad/archive.hpp"
#include "transfergrad/attacks.hpp"
#include "transfergrad/autodiff.hpp"
#include "transfergrad/config.hpp"
#include "transfergrad/data.hpp"
#include "transfergrad/errors.hpp"
#include "transfergrad/harness.hpp"
#include "transfergrad/nn.hpp"
#include "transfergrad/rng.hpp"
#include "transfergrad/tensor.hpp"
#include "transfergrad/transforms.hpp"

namespace fs = std::filesystem;
using namespace tg;

namespace {

struct Options {
  std::string cli;
  std::string workdir = "acceptance_tmp";
  int threads = 2;
  int only = 0;  // 0: all criteria
};

struct Check {
  bool ok = true;
  std::string detail;

  void expect(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

using DTensor = TensorT<double>;
using DGraph = GraphT<double>;

double max_rel_err(const DTensor& got, const DTensor& want) {
  const double scale = std::max(1e-8, double(want.array().abs().maxCoeff()));
  return double((got.array() - want.array()).abs().maxCoeff()) / scale;
}

DTensor random_tensor(Shape shape, Rng& rng, double lo = -1.0,
                      double hi = 1.0) {
  DTensor t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

Tensor random_image(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = float(rng.uniform(lo, hi));
  return t;
}

// ---------------------------------------------------------------------------
// Desk-scale benchmark fixture, shared by criteria 6-8: an 8-class synthetic
// corpus and four architecturally distinct classifiers. The bias-free pair
// is positively homogeneous (scale-tolerant); the biased pair degrades on
// nearly black inputs, which is what the scale-copy sweeps exercise.
// ---------------------------------------------------------------------------

struct Benchmark {
  Dataset data;
  std::vector<std::pair<std::string, Classifier>> models;
  std::vector<std::pair<std::string, AttackConfig>> attacks;
};

Benchmark& benchmark(int threads) {
  static Benchmark bench;
  static bool ready = false;
  if (ready) return bench;
  (void)threads;

  SyntheticSpec spec;
  spec.classes = 8;
  spec.per_class = 60;
  spec.size = 16;
  spec.sigma = 0.10;
  spec.train_frac = 0.8;
  spec.seed = 1;
  bench.data = gen_synthetic(spec);

  auto arch = [&](ModelKind kind, std::vector<int> conv,
                  std::vector<int> hidden, bool bias) {
    ArchitectureSpec a;
    a.kind = kind;
    a.conv_channels = std::move(conv);
    a.hidden = std::move(hidden);
    a.in_channels = bench.data.channels;
    a.in_height = bench.data.height;
    a.in_width = bench.data.width;
    a.classes = bench.data.classes;
    a.bias = bias;
    return a;
  };
  struct Entry {
    const char* name;
    ArchitectureSpec arch;
    TrainConfig train;
  };
  const Entry entries[] = {
      {"mlp_a", arch(ModelKind::Mlp, {}, {48}, false),
       {12, 32, 0.03, 0.9, 11}},
      {"mlp_b", arch(ModelKind::Mlp, {}, {64, 32}, true),
       {12, 32, 0.03, 0.9, 22}},
      {"cnn_a", arch(ModelKind::Cnn, {6, 12}, {32}, false),
       {12, 32, 0.05, 0.9, 33}},
      {"cnn_b", arch(ModelKind::Cnn, {8}, {24}, true),
       {16, 32, 0.05, 0.9, 44}},
  };
  for (const auto& e : entries) {
    Classifier m = build_classifier(e.arch, e.train.seed);
    train(m, bench.data, e.train);
    bench.models.emplace_back(e.name, std::move(m));
  }
  for (auto fam : {AttackFamily::Mifgsm, AttackFamily::Sim,
                   AttackFamily::Admix, AttackFamily::UsMm})
    bench.attacks.emplace_back(family_name(fam), default_attack_config(fam));
  ready = true;
  return bench;
}

constexpr int kBenchmarkImages = 96;  // the full held-out test split
constexpr uint64_t kBenchmarkSeed = 20260808;

// ---------------------------------------------------------------------------
// Criterion 1: autodiff vs central finite differences (64-bit), < 30 s.
// ---------------------------------------------------------------------------

Check criterion1() {
  Check c;
  Rng rng(101);
  const double tol = 1e-4;

  auto check_op =
      [&](const char* name, const DTensor& x0,
          const std::function<DGraph::Var(DGraph&, DGraph::Var)>& op) {
        DGraph g;
        auto x = g.input(x0);
        auto loss = op(g, x);
        const auto grads = g.backward(loss);
        const DTensor& analytic = DGraph::leaf_gradient(grads, x);
        const DTensor numeric = finite_diff_gradient<double>(
            [&](const DTensor& probe) {
              DGraph gg;
              auto xx = gg.input(probe);
              return gg.value(op(gg, xx)).value();
            },
            x0, 1e-5);
        const double err = max_rel_err(analytic, numeric);
        c.expect(err < tol, std::string(name) + " rel err " +
                                std::to_string(err));
      };

  const DTensor w = random_tensor({6, 4}, rng);
  const DTensor kern = random_tensor({3, 2, 3, 3}, rng);
  const DTensor other = random_tensor({2, 3}, rng);
  const DTensor img = random_tensor({2, 2, 6, 6}, rng);
  const DTensor mat54 = random_tensor({5, 4}, rng);
  const DTensor img2344 = random_tensor({2, 3, 4, 4}, rng);

  check_op("add", random_tensor({2, 3}, rng), [&](DGraph& g, DGraph::Var x) {
    return g.sum(g.mul(g.add(x, g.constant(other)), g.constant(other)));
  });
  check_op("sub", random_tensor({2, 3}, rng), [&](DGraph& g, DGraph::Var x) {
    return g.sum(g.mul(g.sub(g.constant(other), x), g.constant(other)));
  });
  check_op("mul", random_tensor({2, 3}, rng),
           [&](DGraph& g, DGraph::Var x) { return g.sum(g.mul(x, x)); });
  check_op("scale", random_tensor({2, 3}, rng),
           [&](DGraph& g, DGraph::Var x) { return g.sum(g.scale(x, -2.5)); });
  check_op("matmul", random_tensor({5, 6}, rng),
           [&](DGraph& g, DGraph::Var x) {
             return g.sum(g.matmul(x, g.constant(w)));
           });
  check_op("bias_add", random_tensor({4}, rng), [&](DGraph& g, DGraph::Var x) {
    auto y = g.bias_add(g.constant(mat54), x);
    return g.sum(g.mul(y, y));
  });
  check_op("channel_bias_add", random_tensor({3}, rng),
           [&](DGraph& g, DGraph::Var x) {
             auto y = g.channel_bias_add(g.constant(img2344), x);
             return g.sum(g.mul(y, y));
           });
  check_op("conv2d", img, [&](DGraph& g, DGraph::Var x) {
    auto y = g.conv2d(x, g.constant(kern), 1);
    return g.sum(g.mul(y, y));
  });
  check_op("conv2d-kernel", kern, [&](DGraph& g, DGraph::Var x) {
    auto y = g.conv2d(g.constant(img), x, 1);
    return g.sum(g.mul(y, y));
  });
  check_op("relu",
           [&] {
             DTensor t = random_tensor({4, 4}, rng);
             for (Index i = 0; i < t.numel(); ++i)
               while (std::abs(t[i]) < 0.05) t[i] = rng.uniform(-1.0, 1.0);
             return t;
           }(),
           [&](DGraph& g, DGraph::Var x) {
             auto y = g.relu(x);
             return g.sum(g.mul(y, y));
           });
  check_op("maxpool2", random_tensor({1, 2, 4, 4}, rng),
           [&](DGraph& g, DGraph::Var x) {
             auto y = g.maxpool2(x);
             return g.sum(g.mul(y, y));
           });
  check_op("mean", random_tensor({3, 5}, rng),
           [&](DGraph& g, DGraph::Var x) { return g.mean(g.mul(x, x)); });
  check_op("softmax_cross_entropy", random_tensor({3, 4}, rng),
           [&](DGraph& g, DGraph::Var x) {
             return g.mean(g.softmax_cross_entropy(x, {1, 0, 3}));
           });
  check_op("reshape", random_tensor({2, 6}, rng),
           [&](DGraph& g, DGraph::Var x) {
             auto y = g.reshape(x, {3, 4});
             return g.sum(g.mul(y, y));
           });

  // three random small networks, loss gradient with respect to the input
  const ArchitectureSpec nets[] = {
      {ModelKind::Mlp, {}, 3, {16, 8}, 1, 6, 6, 4, true},
      {ModelKind::Cnn, {4}, 3, {10}, 1, 8, 8, 3, true},
      {ModelKind::Cnn, {3, 6}, 3, {12}, 2, 8, 8, 5, false},
  };
  for (size_t i = 0; i < 3; ++i) {
    const auto model = build_classifier(nets[i], 500 + uint64_t(i))
                           .cast<double>();
    DTensor image({nets[i].in_channels, nets[i].in_height, nets[i].in_width});
    for (Index j = 0; j < image.numel(); ++j) image[j] = rng.uniform(0.0, 1.0);
    const int label = int(rng.below(uint64_t(nets[i].classes)));
    const auto [loss, analytic] =
        loss_and_input_grad_t<double>(model, image, label);
    c.expect(std::isfinite(loss), "net loss finite");
    const DTensor numeric = finite_diff_gradient<double>(
        [&](const DTensor& probe) {
          return loss_and_input_grad_t<double>(model, probe, label).first;
        },
        image, 1e-3);
    const double err = max_rel_err(analytic, numeric);
    c.expect(err < tol,
             "network " + std::to_string(i) + " rel err " +
                 std::to_string(err));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Criterion 2: closed-form scale suite.
// ---------------------------------------------------------------------------

Check criterion2() {
  Check c;
  const double want[5] = {0.1, 0.2625, 0.425, 0.5875, 0.75};
  for (int i = 0; i < 5; ++i)
    c.expect(uniform_scale_factor(i, 5, 0.1, 0.75) == want[i],
             "uniform factor " + std::to_string(i) + " not exact");

  Rng rng(202);
  const Tensor x = random_image({1, 8, 8}, rng);
  for (int i = 0; i <= 20; ++i) {
    const Tensor a = sim_scale(x, i);
    const Tensor b = bounded_scale(x, i, 0.0, 1.0);
    c.expect(std::memcmp(a.data(), b.data(),
                         size_t(a.numel()) * sizeof(float)) == 0,
             "bounded_scale(0,1) != sim_scale at i=" + std::to_string(i));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Criterion 3: randomized mask suite, < 10 s.
// ---------------------------------------------------------------------------

Check criterion3() {
  Check c;
  Rng rng(303);
  for (int trial = 0; trial < 10000; ++trial) {
    const double r = rng.uniform();
    const Tensor mix = random_image({1, 4, 4}, rng);
    const Tensor mask = make_mix_mask(mix, r);
    c.expect(mask.array().minCoeff() >= float(1.0 - r) - 1e-6f &&
                 mask.array().maxCoeff() <= float(1.0 + r) + 1e-6f,
             "mask bounds violated at trial " + std::to_string(trial));
    const Tensor x = random_image({1, 4, 4}, rng);
    const Tensor out = apply_mix_mask(x, mask);
    c.expect(out.array().minCoeff() >= 0.0f && out.array().maxCoeff() <= 1.0f,
             "masked image left [0,1] at trial " + std::to_string(trial));
    if (!c.ok) break;
  }
  // r = 0 identity behaviour
  Rng rng2(304);
  const Tensor x = random_image({1, 5, 5}, rng2);
  const Tensor out = apply_mix_mask(x, make_mix_mask(Tensor({1, 5, 5}), 0.0));
  c.expect(std::memcmp(x.data(), out.data(),
                       size_t(x.numel()) * sizeof(float)) == 0,
           "r=0 mask is not the identity");
  return c;
}

// ---------------------------------------------------------------------------
// Criterion 4: budget soundness fuzz over 500 random configs, plus the
// query-count law.
// ---------------------------------------------------------------------------

Check criterion4(int threads) {
  Check c;
  (void)threads;
  const ArchitectureSpec arch{ModelKind::Mlp, {}, 3, {10}, 1, 6, 6, 4, true};
  const Classifier model = build_classifier(arch, 404);
  Rng rng(405);
  std::vector<LabeledExample> pool;
  for (int i = 0; i < 16; ++i)
    pool.push_back({random_image({1, 6, 6}, rng), i % 4});

  const AttackFamily families[] = {
      AttackFamily::Fgsm,  AttackFamily::Bim, AttackFamily::Mifgsm,
      AttackFamily::Dim,   AttackFamily::Tim, AttackFamily::Sim,
      AttackFamily::Admix, AttackFamily::Usm, AttackFamily::Mm,
      AttackFamily::SimMm, AttackFamily::UsMm};

  for (int trial = 0; trial < 500; ++trial) {
    AttackConfig cfg = default_attack_config(families[rng.below(11)]);
    cfg.budget.epsilon = rng.uniform(0.01, 0.25);
    cfg.budget.iterations =
        cfg.family == AttackFamily::Fgsm ? 1 : 1 + int(rng.below(4));
    cfg.budget.step = 0.0;
    if (cfg.family == AttackFamily::Fgsm) cfg.budget.step = cfg.budget.epsilon;
    cfg.momentum = (cfg.family == AttackFamily::Fgsm ||
                    cfg.family == AttackFamily::Bim)
                       ? 0.0
                       : rng.uniform(0.0, 1.2);
    cfg.scale.copies = 1 + int(rng.below(5));
    cfg.mix.mix_count = 1 + int(rng.below(3));
    cfg.mix.range = rng.uniform(0.0, 1.0);
    cfg.mix.ratio = rng.uniform(0.0, 0.5);
    cfg.jacobian_correction = rng.bernoulli(0.2);
    cfg.fixed_mix_pool = rng.bernoulli(0.2);
    cfg.seed = rng.next_u64();

    const int y = int(rng.below(4));
    std::vector<LabeledExample> filtered;
    for (const auto& e : pool)
      if (e.label != y) filtered.push_back(e);
    const Tensor x = random_image({1, 6, 6}, rng);

    const AttackResult r = run_attack(model, x, y, cfg, filtered);
    const double linf = double(max_abs_diff(r.adversarial, x));
    c.expect(linf <= cfg.budget.epsilon + 1e-6,
             "trial " + std::to_string(trial) + ": linf " +
                 std::to_string(linf) + " > eps " +
                 std::to_string(cfg.budget.epsilon));
    c.expect(r.adversarial.array().minCoeff() >= 0.0f &&
                 r.adversarial.array().maxCoeff() <= 1.0f,
             "trial " + std::to_string(trial) + ": left the unit cube");
    c.expect(r.gradient_queries ==
                 long(cfg.ensemble_size()) * cfg.budget.iterations,
             "trial " + std::to_string(trial) + ": query count " +
                 std::to_string(r.gradient_queries) + " != ensemble law");
    if (!c.ok) break;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Criterion 5: reduction equivalences, bitwise on the update direction.
// ---------------------------------------------------------------------------

Tensor step_sign(const Classifier& model, const Tensor& x, int y,
                 AttackConfig cfg, const std::vector<LabeledExample>& pool) {
  cfg.validate();
  Rng rng = Rng(cfg.seed).stream(uint64_t(1));
  const Tensor G = aggregate_gradient(model, x, y, cfg, pool, rng);
  MomentumState state;
  state.mu = cfg.momentum;
  state = momentum_step(std::move(state), G);
  return sign(state.g);
}

Check criterion5() {
  Check c;
  const ArchitectureSpec arch{ModelKind::Mlp, {}, 3, {12}, 1, 6, 6, 4, true};
  const Classifier model = build_classifier(arch, 505);
  Rng rng(506);
  std::vector<LabeledExample> pool;
  for (int i = 0; i < 20; ++i)
    pool.push_back({random_image({1, 6, 6}, rng), 1 + int(i % 3)});

  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_image({1, 6, 6}, rng);
    const int y = 0;
    const uint64_t seed = rng.next_u64();
    auto bitwise = [](const Tensor& a, const Tensor& b) {
      return std::memcmp(a.data(), b.data(),
                         size_t(a.numel()) * sizeof(float)) == 0;
    };

    AttackConfig usmm = default_attack_config(AttackFamily::UsMm);
    usmm.mix.range = 0.0;
    usmm.seed = seed;
    AttackConfig usm = default_attack_config(AttackFamily::Usm);
    usm.seed = seed;
    c.expect(bitwise(step_sign(model, x, y, usmm, pool),
                     step_sign(model, x, y, usm, pool)),
             "us_mm(r=0) != usm at trial " + std::to_string(trial));

    AttackConfig mm = default_attack_config(AttackFamily::Mm);
    mm.mix.range = 0.0;
    mm.seed = seed;
    AttackConfig mifgsm = default_attack_config(AttackFamily::Mifgsm);
    mifgsm.seed = seed;
    c.expect(bitwise(step_sign(model, x, y, mm, pool),
                     step_sign(model, x, y, mifgsm, pool)),
             "mm(r=0) != mifgsm at trial " + std::to_string(trial));

    AttackConfig sim = default_attack_config(AttackFamily::Sim);
    sim.scale.copies = 1;
    sim.seed = seed;
    c.expect(bitwise(step_sign(model, x, y, sim, pool),
                     step_sign(model, x, y, mifgsm, pool)),
             "sim(m=1) != mifgsm at trial " + std::to_string(trial));
    if (!c.ok) break;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Criterion 6: white-box potency of MI-FGSM on the benchmark, < 5 min.
// ---------------------------------------------------------------------------

Check criterion6(int threads) {
  Check c;
  Benchmark& bench = benchmark(threads);
  const auto idx = choose_attack_indices(bench.data, kBenchmarkImages,
                                         kBenchmarkSeed);
  const auto examples = examples_of(bench.data, idx);
  std::vector<Tensor> originals;
  std::vector<int> labels;
  for (const auto& e : examples) {
    originals.push_back(e.image);
    labels.push_back(e.label);
  }

  const AttackConfig mifgsm = default_attack_config(AttackFamily::Mifgsm);
  for (const auto& [name, model] : bench.models) {
    const CraftOutput crafted = craft_adversarials(
        model, mifgsm, examples, kBenchmarkSeed, name + "/whitebox", threads);
    audit_budget(crafted.adversarials, originals, mifgsm.budget.epsilon);
    const SuccessRate rate =
        success_rate(model, crafted.adversarials, labels, originals);
    c.expect(rate.filtered_defined,
             name + ": no correctly classified clean images");
    c.expect(rate.filtered >= 0.95,
             name + ": white-box success " + std::to_string(rate.filtered) +
                 " < 0.95");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Criterion 7: qualitative transfer ordering over 3 seeds.
// ---------------------------------------------------------------------------

Check criterion7(int threads) {
  Check c;
  Benchmark& bench = benchmark(threads);

  std::map<std::string, double> sum;
  std::map<std::string, int> count;
  for (int rep = 0; rep < 3; ++rep) {
    TransferOptions opts;
    opts.attack_count = kBenchmarkImages;
    opts.seed = hash_combine(kBenchmarkSeed, uint64_t(rep));
    opts.threads = threads;
    const TransferReport report =
        transfer_matrix(bench.models, bench.attacks, bench.data, opts);
    // white-box beats the mean transfer for every (surrogate, attack)
    std::map<std::string, double> diag;
    std::map<std::string, std::pair<double, int>> off;
    for (const auto& row : report.rows) {
      const std::string key = row.surrogate + "/" + row.attack;
      if (row.white_box) {
        diag[key] = row.rate.raw;
      } else {
        off[key].first += row.rate.raw;
        off[key].second++;
      }
      if (row.white_box) continue;
      sum[row.attack] += row.rate.raw;
      count[row.attack]++;
    }
    for (const auto& [key, d] : diag) {
      const auto& [total, n] = off[key];
      c.expect(d >= total / double(n),
               "white-box below mean transfer for " + key);
    }
  }
  std::map<std::string, double> mean;
  std::string summary;
  for (const auto& [attack, total] : sum) {
    mean[attack] = total / double(count[attack]);
    summary += attack + "=" + std::to_string(mean[attack]) + " ";
  }
  c.expect(mean["us_mm"] >= mean["admix"],
           "us_mm < admix on the mean (" + summary + ")");
  c.expect(mean["admix"] >= mean["sim"],
           "admix < sim on the mean (" + summary + ")");
  c.expect(mean["sim"] >= mean["mifgsm"],
           "sim < mifgsm on the mean (" + summary + ")");
  std::printf("    mean transfer: %s\n", summary.c_str());
  return c;
}

// ---------------------------------------------------------------------------
// Criterion 8: scale-copy sweep, SIM degradation vs USM stability.
// ---------------------------------------------------------------------------

Check criterion8(int threads) {
  Check c;
  Benchmark& bench = benchmark(threads);
  std::vector<double> grid;
  for (int m = 1; m <= 12; ++m) grid.push_back(m);

  SweepOptions opts;
  opts.attack_count = kBenchmarkImages;
  opts.seed = kBenchmarkSeed;
  opts.replicates = 3;
  opts.threads = threads;

  auto mean_curve = [&](AttackFamily fam) {
    const SweepReport report =
        ablation_sweep(SweepParam::Copies, grid, default_attack_config(fam),
                       "cnn_b", bench.models, bench.data, opts);
    std::vector<double> curve(grid.size(), 0.0);
    std::vector<int> n(grid.size(), 0);
    for (const auto& row : report.rows) {
      const size_t i = size_t(row.value - 1.0);
      curve[i] += row.rate.raw;
      n[i]++;
    }
    for (size_t i = 0; i < curve.size(); ++i) curve[i] /= double(n[i]);
    return curve;
  };

  const std::vector<double> sim_curve = mean_curve(AttackFamily::Sim);
  const std::vector<double> usm_curve = mean_curve(AttackFamily::Usm);

  auto print_curve = [&](const char* name, const std::vector<double>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, " m%zu=%.3f", i + 1, v[i]);
      s += buf;
    }
    std::printf("    %s:%s\n", name, s.c_str());
  };
  print_curve("sim", sim_curve);
  print_curve("usm", usm_curve);

  size_t sim_peak = 0;
  for (size_t i = 1; i < sim_curve.size(); ++i)
    if (sim_curve[i] > sim_curve[sim_peak]) sim_peak = i;
  c.expect(sim_curve.back() < sim_curve[sim_peak],
           "sim does not degrade: rate at m=12 equals its peak");
  c.expect(sim_peak != sim_curve.size() - 1,
           "sim peaks at m=12 instead of degrading");
  c.expect(usm_curve.back() >= usm_curve[sim_peak] - 0.02,
           "usm at m=12 (" + std::to_string(usm_curve.back()) +
               ") fell more than 2 points below its rate at sim's peak m (" +
               std::to_string(usm_curve[sim_peak]) + ")");
  return c;
}

// ---------------------------------------------------------------------------
// Criterion 9: byte-identical pipeline reruns through the CLI.
// ---------------------------------------------------------------------------

int run_cli(const std::string& cli, const std::string& args,
            const std::string& log_path) {
  const std::string cmd = cli + " " + args + " > " + log_path + " 2>&1";
  return std::system(cmd.c_str());
}

std::map<std::string, std::string> tree_digest(const fs::path& root) {
  std::map<std::string, std::string> digest;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream f(entry.path(), std::ios::binary);
    std::ostringstream buffer;
    buffer << f.rdbuf();
    const std::string bytes = buffer.str();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  (unsigned long long)fnv1a64(bytes.data(), bytes.size()));
    digest[fs::relative(entry.path(), root).string()] = buf;
  }
  return digest;
}

Check criterion9(const Options& opt) {
  Check c;
  if (opt.cli.empty()) {
    c.expect(false, "no --cli given");
    return c;
  }
  const fs::path base = fs::path(opt.workdir) / "pipeline";
  fs::remove_all(base);
  fs::create_directories(base);

  const std::string config_text = R"(
seed = 424242
threads = 1

[dataset]
source = dir

[model.net_a]
kind = mlp
hidden = 24
seed = 5
epochs = 3
batch = 16
lr = 0.05
momentum = 0.9

[model.net_b]
kind = cnn
conv_channels = 4
hidden = 16
seed = 6
epochs = 3
batch = 16
lr = 0.05
momentum = 0.9

[attack.us_mm]
family = us_mm

[attack.mifgsm]
family = mifgsm

[eval]
images = 12
)";

  for (const char* run : {"a", "b"}) {
    const fs::path dir = base / run;
    fs::create_directories(dir);
    const std::string cfg_path = (dir / "run.conf").string();
    {
      std::ofstream f(cfg_path, std::ios::trunc);
      std::string text = config_text;
      const std::string needle = "source = dir";
      text.replace(text.find(needle), needle.size(),
                   "source = dir\npath = " + (dir / "data").string());
      f << text;
    }
    const std::string out_dir = (dir / "out").string();
    const std::string common =
        "-c " + cfg_path + " --output-dir " + out_dir + " --threads 1";
    int rc = run_cli(opt.cli,
                     common + " gen-data --out " + (dir / "data").string() +
                         " --classes 4 --per-class 20 --size 16",
                     (dir / "gen.log").string());
    c.expect(rc == 0, "gen-data failed in run " + std::string(run));
    rc = run_cli(opt.cli, common + " train --model net_a",
                 (dir / "train_a.log").string());
    c.expect(rc == 0, "train net_a failed in run " + std::string(run));
    rc = run_cli(opt.cli, common + " train --model net_b",
                 (dir / "train_b.log").string());
    c.expect(rc == 0, "train net_b failed in run " + std::string(run));
    rc = run_cli(opt.cli,
                 common + " attack --surrogate net_b --attack us_mm --images 8",
                 (dir / "attack.log").string());
    c.expect(rc == 0, "attack failed in run " + std::string(run));
    rc = run_cli(opt.cli, common + " eval", (dir / "eval.log").string());
    c.expect(rc == 0, "eval failed in run " + std::string(run));
    if (!c.ok) return c;
  }

  const auto da = tree_digest(base / "a" / "out");
  const auto db = tree_digest(base / "b" / "out");
  c.expect(da.size() == db.size() && !da.empty(),
           "output trees differ in file sets");
  for (const auto& [file, hash] : da) {
    auto it = db.find(file);
    c.expect(it != db.end() && it->second == hash,
             "output file differs between reruns: " + file);
    if (!c.ok) break;
  }
  // dataset bytes as well
  const auto ga = tree_digest(base / "a" / "data");
  const auto gb = tree_digest(base / "b" / "data");
  c.expect(ga == gb, "generated datasets differ between reruns");
  return c;
}

// ---------------------------------------------------------------------------
// Criterion 10: IDX fixtures round-trip; corruption raises the right kinds.
// ---------------------------------------------------------------------------

Check criterion10(const Options& opt) {
  Check c;
  const fs::path dir = fs::path(opt.workdir) / "idx";
  fs::remove_all(dir);
  fs::create_directories(dir);

  std::vector<Tensor> images;
  for (int k = 0; k < 2; ++k) {
    Tensor img({1, 3, 4});
    for (Index i = 0; i < img.numel(); ++i)
      img[i] = float((k * 31 + int(i) * 11) % 256) / 255.0f;
    images.push_back(std::move(img));
  }
  save_idx_images((dir / "img.idx").string(), images);
  save_idx_labels((dir / "lbl.idx").string(), {7, 2});
  const auto [loaded, labels] =
      load_idx((dir / "img.idx").string(), (dir / "lbl.idx").string());
  c.expect(labels == std::vector<int>({7, 2}), "labels did not round-trip");
  for (size_t i = 0; i < 2; ++i)
    c.expect(std::memcmp(loaded[i].data(), images[i].data(),
                         size_t(images[i].numel()) * sizeof(float)) == 0,
             "image " + std::to_string(i) + " did not round-trip exactly");

  auto mutate = [&](const char* name,
                    const std::function<void(std::vector<uint8_t>&)>& fn) {
    std::ifstream in(dir / "img.idx", std::ios::binary);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    fn(bytes);
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              std::streamsize(bytes.size()));
    return (dir / name).string();
  };

  auto kind_of = [&](const std::string& path) {
    try {
      load_idx_images(path);
    } catch (const DataError& e) {
      return e.kind;
    }
    return DataError::Kind::Malformed;
  };

  const std::string bad_magic =
      mutate("magic.idx", [](std::vector<uint8_t>& b) { b[0] = 0x55; });
  c.expect(kind_of(bad_magic) == DataError::Kind::BadMagic,
           "corrupted magic not classified as BadMagic");
  const std::string truncated = mutate(
      "trunc.idx", [](std::vector<uint8_t>& b) { b.resize(b.size() - 5); });
  c.expect(kind_of(truncated) == DataError::Kind::Truncated,
           "truncation not classified as Truncated");
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    auto next = [&]() -> std::string {
      if (i + 1 >= argc) {
        std::fprintf(stderr, "missing value for %s\n", arg.c_str());
        std::exit(2);
      }
      return argv[++i];
    };
    if (arg == "--cli") opt.cli = next();
    else if (arg == "--workdir") opt.workdir = next();
    else if (arg == "--threads") opt.threads = std::stoi(next());
    else if (arg == "--criterion") opt.only = std::stoi(next());
    else {
      std::fprintf(stderr, "unknown argument %s\n", arg.c_str());
      return 2;
    }
  }
  fs::create_directories(opt.workdir);

  struct Criterion {
    int id;
    const char* name;
    double limit_seconds;  // 0: none
    std::function<Check()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "autodiff matches central finite differences (64-bit)", 30.0,
       [&] { return criterion1(); }},
      {2, "closed-form scale factors and sim/bounded equivalence", 0.0,
       [&] { return criterion2(); }},
      {3, "randomized mix-mask bounds and identity", 10.0,
       [&] { return criterion3(); }},
      {4, "budget soundness and query-count law over 500 random configs", 0.0,
       [&] { return criterion4(opt.threads); }},
      {5, "reduction equivalences bitwise on the update direction", 0.0,
       [&] { return criterion5(); }},
      {6, "white-box MI-FGSM potency on the desk-scale benchmark", 300.0,
       [&] { return criterion6(opt.threads); }},
      {7, "transfer ordering us_mm >= admix >= sim >= mifgsm", 0.0,
       [&] { return criterion7(opt.threads); }},
      {8, "scale-copy sweep: sim degrades, usm holds", 0.0,
       [&] { return criterion8(opt.threads); }},
      {9, "byte-identical pipeline reruns", 0.0,
       [&] { return criterion9(opt); }},
      {10, "idx ingestion round-trip and error classes", 0.0,
       [&] { return criterion10(opt); }},
  };

  int failures = 0;
  for (const auto& criterion : criteria) {
    if (opt.only != 0 && criterion.id != opt.only) continue;
    const auto start = std::chrono::steady_clock::now();
    Check result;
    try {
      result = criterion.run();
    } catch (const std::exception& e) {
      result.ok = false;
      result.detail = std::string("exception: ") + e.what();
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    if (criterion.limit_seconds > 0.0 && elapsed > criterion.limit_seconds) {
      result.ok = false;
      result.detail = "runtime " + std::to_string(elapsed) + "s over the " +
                      std::to_string(criterion.limit_seconds) + "s limit";
    }
    std::printf("[%s] criterion %2d: %s (%.1fs)%s%s\n",
                result.ok ? "PASS" : "FAIL", criterion.id, criterion.name,
                elapsed, result.ok ? "" : " -- ",
                result.ok ? "" : result.detail.c_str());
    std::fflush(stdout);
    if (!result.ok) ++failures;
  }
  if (failures == 0)
    std::printf("all acceptance criteria passed\n");
  else
    std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
