#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "plforge/adapter.hpp"
#include "plforge/bundle.hpp"
#include "plforge/common.hpp"
#include "plforge/rng.hpp"
#include "plforge/trainer.hpp"

namespace plforge {

/// Synthetic domain-shift benchmark: Gaussian class clusters, with the
/// target domain produced by a rigid rotation plus translation.
struct SynthSpec {
  int n_classes = 3;
  int dim = 2;
  int per_class = 100;       // samples per class per domain
  double spread = 3.0;       // class-center sphere radius
  double stddev = 0.7;       // intra-class standard deviation
  double shift_angle = 0.6;  // target rotation, radians, first two axes
  std::vector<double> shift_translation;  // defaults to zero
  double label_noise = 0.0;  // fraction of pseudo-labels to flip in stress tests
  std::uint64_t seed = 7;

  void validate() const {
    if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
    if (dim < 1) throw ConfigError("dim must be >= 1");
    if (per_class < 1) throw ConfigError("per_class must be >= 1");
    if (!(spread > 0.0)) throw ConfigError("spread must be > 0");
    if (!(stddev > 0.0)) throw ConfigError("stddev must be > 0");
    if (label_noise < 0.0 || label_noise >= 1.0)
      throw ConfigError("label_noise must lie in [0, 1)");
    if (!shift_translation.empty() &&
        static_cast<int>(shift_translation.size()) != dim)
      throw ConfigError("shift_translation length must equal dim");
  }
};

struct MetricsRow {
  double accuracy = 0.0;
  std::vector<double> per_class;
  std::vector<std::size_t> class_counts;
};

/// Deterministic (source, target) pair; logits are zero until a source
/// model fills them in.
std::pair<FeatureBundle, FeatureBundle> generate(const SynthSpec &spec);

/// Flips the given fraction of labels to a uniformly random other class.
void inject_label_noise(std::vector<int> &labels, double fraction,
                        int n_classes, Rng &rng);

/// Overall and per-class argmax accuracy of the model on a labeled bundle.
MetricsRow evaluate(const AdapterModel &model, const FeatureBundle &bundle);

/// Selection-quality ablation CSV: one row per (method, iteration count).
/// Pseudo-labels get `label_noise` injected before scoring so selection
/// quality is measured against a known corruption.
std::string ablation_table(const FeatureBundle &target,
                           const AdapterModel &model, const TrainConfig &cfg,
                           const std::vector<std::string> &methods,
                           double label_noise, std::uint64_t noise_seed);

}  // namespace plforge
