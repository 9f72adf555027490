#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "plforge/adapter.hpp"
#include "plforge/common.hpp"

namespace plforge {

struct ContrastConfig {
  double tau = 0.1;    // contrastive temperature
  double beta = 0.3;   // CE weight in the total loss
  double alpha = 0.1;  // label-smoothing coefficient

  void validate() const {
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    if (beta < 0.0) throw ConfigError("beta must be >= 0");
    if (alpha < 0.0 || alpha >= 1.0) throw ConfigError("alpha must lie in [0, 1)");
  }
};

/// A mini-batch of 2B rows: each sample and its augmented view share the
/// label and the confident-set flag.
struct BatchView {
  std::vector<std::uint32_t> indices;  // underlying sample ids, one per row
  MatD logits;                         // 2B x C
  std::vector<int> labels;             // pseudo-labels, one per row
  std::vector<char> in_h;              // confident-set membership, one per row
};

struct LossReport {
  double l_cl = 0.0;
  double l_ce = 0.0;
  double l_im = 0.0;
  double l_all = 0.0;
  double beta = 0.0;
  VecD grad_adapter;  // d l_all / d (W, b) flattened; empty unless requested
};

/// (1-alpha) * onehot + alpha / C.
VecD smooth_targets(int label, int n_classes, double alpha);

/// Mean label-smoothed cross-entropy over the batch.
double ce_smoothed(const MatD &logits, const std::vector<int> &labels,
                   double alpha);

/// d ce_smoothed / d logits.
MatD ce_smoothed_grad(const MatD &logits, const std::vector<int> &labels,
                      double alpha);

/// Mean -log softmax_{label} over rows flagged in_h; 0 if none qualify.
double ce_pseudo(const BatchView &batch);

/// J(i): indices j != i with matching label where both rows are in H.
std::vector<std::vector<int>> positive_pairs(const BatchView &batch);

/// Supervised contrastive loss over z = logits / ||logits||; anchors with
/// empty J contribute zero but stay in every denominator.
double contrastive_loss(const BatchView &batch, double tau);

/// Mean prediction entropy plus marginal negentropy; minimum is -log C.
double im_loss(const MatD &logits);

/// Loss values only (no gradient); l_all = l_cl + beta*l_ce + l_im.
LossReport total_loss(const BatchView &batch, const ContrastConfig &cfg);

/// Forward + analytic backward through the adapter for a batch of raw
/// input rows. `use_cacl` toggles the contrastive term. When `grad_f_out`
/// is non-null the classifier gradient is also produced (source training).
LossReport adapter_total_loss(const AdapterModel &model, const MatD &x_views,
                              const std::vector<std::uint32_t> &indices,
                              const std::vector<int> &labels,
                              const std::vector<char> &in_h,
                              const ContrastConfig &cfg, bool use_cacl = true);

/// Gradient of each loss component w.r.t. the logit matrix (used by the
/// adapter backward pass; exposed for testing).
MatD ce_pseudo_grad(const BatchView &batch);
MatD contrastive_loss_grad(const BatchView &batch, double tau);
MatD im_loss_grad(const MatD &logits);

/// Max over coordinates of |g_impl - g_fd| / max(1, |g_fd|), with g_fd
/// the central finite difference of `fn` at `params`.
double grad_check(const std::function<double(const VecD &)> &fn,
                  const VecD &grad_impl, const VecD &params, double step);

}  // namespace plforge
