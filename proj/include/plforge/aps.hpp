#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "plforge/bundle.hpp"
#include "plforge/common.hpp"
#include "plforge/pseudo_label.hpp"

namespace plforge {

/// Exact K-nearest-neighbor graph under cosine similarity, self excluded.
struct KnnGraph {
  MatI neighbors;  // N x K sample indices, by decreasing similarity
  MatD sims;       // N x K matching cosine similarities
  int k = 0;
};

struct ApsResult {
  std::vector<int> y_hat;
  MatD p_hat;             // N x C neighbor-vote posterior
  std::vector<double> q;  // confidence scores
  std::vector<std::uint32_t> selected;  // confident set H, sorted by id
  int iterations_run = 0;
};

/// Exact KNN; similarity ties break toward the lower sample index.
KnnGraph build_knn(const MatD &features, int k);

/// p_t = (1/K) sum_{k in N_t} sim(t,k) * e_{y_k}; raw similarities are
/// used as weights and may be negative.
MatD vote_posterior(const KnnGraph &graph, const std::vector<int> &y_current,
                    int n_classes);

/// Row-wise argmax, ties toward the lowest class index.
std::vector<int> vote_argmax(const MatD &p_hat);

/// Alternates vote_posterior / vote_argmax starting from y_tilde; runs
/// `iters` posterior estimations, relabeling after each.
std::pair<std::vector<int>, MatD> iterate_votes(const KnnGraph &graph,
                                                const std::vector<int> &y_tilde,
                                                int n_classes, int iters);

/// q_t = (1/K) sum_{k in N_t} 1(y_hat_k == y_tilde_t) * sim(t,k).
std::vector<double> confidence_scores(const KnnGraph &graph,
                                      const std::vector<int> &y_hat,
                                      const std::vector<int> &y_tilde);

/// Per pseudo-class top ceil(gamma * n_c) samples by score; within-class
/// ties break toward the lower id; result sorted ascending by id.
std::vector<std::uint32_t> select_confident(const std::vector<double> &q,
                                            const std::vector<int> &y_tilde,
                                            double gamma,
                                            const std::vector<std::uint32_t> &ids);

enum class ScoreKind { Prob, Ent, Cossim };

ScoreKind score_kind_from_string(const std::string &name);

/// Ablation baselines, all mapped to a higher-is-confident convention:
/// Prob = softmax probability of the pseudo-label; Ent = negative
/// normalized prediction entropy; Cossim = cosine to the refined
/// centroid of the assigned class.
std::vector<double> baseline_scores(const FeatureBundle &bundle,
                                    const PseudoLabelState &state,
                                    ScoreKind kind);

/// Full APS pass: iterate votes, score, select.
ApsResult run_aps(const KnnGraph &graph, const std::vector<int> &y_tilde,
                  int n_classes, int iters, double gamma,
                  const std::vector<std::uint32_t> &ids);

}  // namespace plforge
