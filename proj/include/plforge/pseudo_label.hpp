#pragma once

#include <vector>

#include "plforge/bundle.hpp"
#include "plforge/common.hpp"

namespace plforge {

/// Two-stage centroid pseudo-labels: soft (prediction-weighted) centroids
/// give an intermediate assignment, hard per-class means refine it once.
struct PseudoLabelState {
  MatD mu0;  // C x D soft centroids
  MatD mu1;  // C x D hard centroids (mu0 row kept where a class is empty)
  std::vector<int> y0;       // intermediate labels
  std::vector<int> y_tilde;  // final pseudo-labels
  std::vector<char> empty_class;  // per class: 1 if no member at stage 1
};

/// Numerically stabilized softmax of one logit row.
VecD softmax(const VecD &logit_row);

/// Row-wise softmax of an M x C logit matrix.
MatD softmax_rows(const MatD &logits);

/// Clamped to [-1, 1]; throws NumericError on a zero-norm input.
double cosine_sim(const VecD &u, const VecD &v);

/// Soft centroids: mu_c = sum_t p_c(t) * x_t / (sum_t p_c(t) + eps),
/// with p = softmax(logits) and eps = 1e-8.
MatD compute_mu0(const MatD &features, const MatD &logits);

/// Nearest-centroid assignment under cosine similarity; ties go to the
/// lowest class index. `usable` (optional) masks centroid rows out of the
/// argmax; throws NumericError if no centroid is usable.
std::vector<int> assign_nearest(const MatD &features, const MatD &centroids,
                                const std::vector<char> *usable = nullptr);

/// Hard-assignment centroid refinement plus one re-assignment. Classes
/// with no members keep their mu0 row and are flagged.
void refine_labels(const MatD &features, const std::vector<int> &y0,
                   const MatD &mu0, MatD &mu1_out,
                   std::vector<int> &y_tilde_out,
                   std::vector<char> &empty_class_out);

PseudoLabelState generate_pseudo_labels(const MatD &features,
                                        const MatD &logits);
PseudoLabelState generate_pseudo_labels(const FeatureBundle &bundle);

}  // namespace plforge
