#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "transfergrad/data.hpp"
#include "transfergrad/nn.hpp"
#include "transfergrad/rng.hpp"
#include "transfergrad/tensor.hpp"
#include "transfergrad/transforms.hpp"

namespace tg {

enum class AttackFamily {
  Fgsm, Bim, Mifgsm, Dim, Tim, Sim, Admix, Usm, Mm, SimMm, UsMm,
};

const char* family_name(AttackFamily f);
AttackFamily family_from_name(const std::string& name);  // ConfigError lists valid names
std::vector<std::string> family_names();

// L-inf radius (unit pixel scale), iteration count, step size. A zero step
// resolves to epsilon / iterations.
struct AttackBudget {
  double epsilon = 16.0 / 255.0;
  int iterations = 10;
  double step = 0.0;

  double resolved_step() const {
    return step > 0.0 ? step : epsilon / double(iterations);
  }
  void validate() const;
};

// Full description of one attack run. `seed` is mandatory; the caller
// derives it per image so parallel crafting stays deterministic.
struct AttackConfig {
  AttackFamily family = AttackFamily::UsMm;
  AttackBudget budget;
  double momentum = 1.0;
  ScaleSpec scale;
  MixSpec mix;
  BaselineParams baseline;
  uint64_t seed = 0;
  bool jacobian_correction = false;  // chain rule through the transform
  bool fixed_mix_pool = false;       // one mix draw per attack instead of per copy

  bool uses_scale() const;
  bool uses_mix() const;
  // Gradient queries per iteration for this family.
  int ensemble_size() const;
  void validate() const;
};

// Family defaults: scale family, copy counts and momentum wired to the
// conventional values for each method.
AttackConfig default_attack_config(AttackFamily family);

struct MomentumState {
  Tensor g;
  double mu = 1.0;
  int stagnation_count = 0;
};

// g <- mu*g + G/mean|G|. A zero-gradient step decays g and flags stagnation.
MomentumState momentum_step(MomentumState state, const Tensor& G);

struct AttackResult {
  Tensor adversarial;
  std::vector<double> loss_trace;  // mean ensemble loss per iteration
  long gradient_queries = 0;
  double elapsed_seconds = 0.0;
};

// One aggregated gradient over the family's transform ensemble at x.
// mix_pool must be pre-filtered to labels != y for mixing families.
// loss_sum, when given, receives the summed ensemble loss.
Tensor aggregate_gradient(const Classifier& model, const Tensor& x, int y,
                          const AttackConfig& cfg,
                          const std::vector<LabeledExample>& mix_pool,
                          Rng& rng, double* loss_sum = nullptr,
                          long* queries = nullptr);

// The full iterative loop: aggregate, momentum, signed step, projection.
AttackResult run_attack(const Classifier& model, const Tensor& x, int y,
                        const AttackConfig& cfg,
                        const std::vector<LabeledExample>& mix_pool);

// m_mix examples drawn uniformly without replacement among labels != y.
std::vector<LabeledExample> sample_mix_images(
    const std::vector<LabeledExample>& pool, int y, int m_mix, Rng& rng);

}  // namespace tg
