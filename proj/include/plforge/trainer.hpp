#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "plforge/adapter.hpp"
#include "plforge/bundle.hpp"
#include "plforge/common.hpp"
#include "plforge/losses.hpp"
#include "plforge/rng.hpp"

namespace plforge {

struct TrainConfig {
  int epochs = 15;
  int batch_size = 64;
  double lr = 5e-4;
  int warmup_epochs = 1;
  // APS
  int k = 4;
  double gamma = 0.6;
  int iters = 2;
  // losses
  double tau = 0.1;
  double beta = 0.3;
  double alpha = 0.1;
  // augmentation
  double aug_sigma = 0.1;
  std::uint64_t seed = 0;
  bool use_cacl = true;
  // source pretraining
  int source_epochs = 30;
  double source_lr = 0.05;

  ContrastConfig contrast() const { return {tau, beta, alpha}; }

  void validate() const {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (k < 1) throw ConfigError("k must be >= 1");
    if (!(gamma > 0.0) || gamma > 1.0) throw ConfigError("gamma must lie in (0, 1]");
    if (iters < 1) throw ConfigError("iters must be >= 1");
    if (aug_sigma < 0.0) throw ConfigError("aug_sigma must be >= 0");
    if (source_epochs < 1) throw ConfigError("source_epochs must be >= 1");
    contrast().validate();
  }
};

struct EpochLog {
  int epoch = 0;
  double pl_accuracy = -1.0;           // -1 when ground truth is absent
  double selected_pl_accuracy = -1.0;
  double target_accuracy = -1.0;
  double mean_l_cl = 0.0;
  double mean_l_ce = 0.0;
  double mean_l_im = 0.0;
  double mean_l_all = 0.0;
  std::size_t n_selected = 0;
};

/// Interleaves each input row with a Gaussian-perturbed copy
/// (B x D -> 2B x D; rows 2i original, 2i+1 noisy).
MatD make_views(const MatD &features, double sigma, Rng &rng);

/// Warmup over the first epoch, cosine decay to zero over the rest.
/// `epoch` is 1-based, `iter` is 0-based within the epoch.
double lr_at(int epoch, int iter, int steps_per_epoch, int total_epochs,
             double lr0);

struct SgdState {
  VecD velocity;  // matches the packed (W, b) layout
  double momentum = 0.9;
  double weight_decay = 1e-3;
};

/// v <- m*v + (g + wd*p); p <- p - lr*v.
void sgd_step(AdapterModel &model, const VecD &grad, SgdState &state, double lr);

/// Alternating adaptation loop: per epoch, regenerate pseudo-labels from
/// the current adapter, run KNN-vote selection, then mini-batch updates
/// of the total loss. The classifier stays frozen.
std::pair<AdapterModel, std::vector<EpochLog>> run_adaptation(
    const AdapterModel &source_model, const FeatureBundle &target,
    const TrainConfig &cfg);

/// Label-smoothed source pretraining on a 9:1 train/validation split.
/// Classifier rows are L2-normalized after training. Validation accuracy
/// is written to `val_accuracy_out` when non-null.
AdapterModel train_source(const FeatureBundle &source, const TrainConfig &cfg,
                          double *val_accuracy_out = nullptr);

}  // namespace plforge
