#include "plforge/aps.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <thread>

namespace plforge {
namespace {

int thread_budget() {
  if (const char *env = std::getenv("PLFORGE_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

void parallel_for(Eigen::Index n, const std::function<void(Eigen::Index)> &fn) {
  const int threads = std::min<Eigen::Index>(thread_budget(), n);
  if (threads <= 1) {
    for (Eigen::Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (Eigen::Index i = t; i < n; i += threads) fn(i);
    });
  }
  for (auto &th : pool) th.join();
}

}  // namespace

KnnGraph build_knn(const MatD &features, int k) {
  const Eigen::Index n = features.rows();
  if (k < 1 || k >= n)
    throw ConfigError("k must satisfy 1 <= k < N (k=" + std::to_string(k) +
                      ", N=" + std::to_string(n) + ")");
  VecD norms(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    norms(i) = features.row(i).norm();
    if (norms(i) == 0.0)
      throw NumericError("zero-norm feature row " + std::to_string(i));
  }

  KnnGraph g;
  g.k = k;
  g.neighbors.resize(n, k);
  g.sims.resize(n, k);

  parallel_for(n, [&](Eigen::Index t) {
    // full similarity row, then partial sort of the k best
    std::vector<std::pair<double, int>> cand;
    cand.reserve(n - 1);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == t) continue;
      const double sim = std::clamp(
          features.row(t).dot(features.row(j)) / (norms(t) * norms(j)), -1.0,
          1.0);
      cand.emplace_back(sim, static_cast<int>(j));
    }
    auto better = [](const std::pair<double, int> &a,
                     const std::pair<double, int> &b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;  // tie: lower index
    };
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end(), better);
    for (int j = 0; j < k; ++j) {
      g.neighbors(t, j) = cand[j].second;
      g.sims(t, j) = cand[j].first;
    }
  });
  return g;
}

MatD vote_posterior(const KnnGraph &graph, const std::vector<int> &y_current,
                    int n_classes) {
  const Eigen::Index n = graph.neighbors.rows();
  MatD p = MatD::Zero(n, n_classes);
  const double inv_k = 1.0 / graph.k;
  for (Eigen::Index t = 0; t < n; ++t)
    for (int j = 0; j < graph.k; ++j)
      p(t, y_current[graph.neighbors(t, j)]) += inv_k * graph.sims(t, j);
  return p;
}

std::vector<int> vote_argmax(const MatD &p_hat) {
  std::vector<int> out(p_hat.rows());
  for (Eigen::Index t = 0; t < p_hat.rows(); ++t) {
    int best = 0;
    for (Eigen::Index c = 1; c < p_hat.cols(); ++c)
      if (p_hat(t, c) > p_hat(t, best)) best = static_cast<int>(c);
    out[t] = best;
  }
  return out;
}

std::pair<std::vector<int>, MatD> iterate_votes(const KnnGraph &graph,
                                                const std::vector<int> &y_tilde,
                                                int n_classes, int iters) {
  if (iters < 1) throw ConfigError("iters must be >= 1");
  std::vector<int> y = y_tilde;
  MatD p;
  for (int i = 0; i < iters; ++i) {
    p = vote_posterior(graph, y, n_classes);
    y = vote_argmax(p);
  }
  return {std::move(y), std::move(p)};
}

std::vector<double> confidence_scores(const KnnGraph &graph,
                                      const std::vector<int> &y_hat,
                                      const std::vector<int> &y_tilde) {
  const Eigen::Index n = graph.neighbors.rows();
  std::vector<double> q(n, 0.0);
  for (Eigen::Index t = 0; t < n; ++t) {
    double acc = 0.0;
    for (int j = 0; j < graph.k; ++j)
      if (y_hat[graph.neighbors(t, j)] == y_tilde[t]) acc += graph.sims(t, j);
    q[t] = acc / graph.k;
  }
  return q;
}

std::vector<std::uint32_t> select_confident(const std::vector<double> &q,
                                            const std::vector<int> &y_tilde,
                                            double gamma,
                                            const std::vector<std::uint32_t> &ids) {
  if (!(gamma > 0.0) || gamma > 1.0)
    throw ConfigError("gamma must lie in (0, 1]");
  const int n_classes =
      y_tilde.empty() ? 0 : *std::max_element(y_tilde.begin(), y_tilde.end()) + 1;
  std::vector<std::vector<std::size_t>> members(n_classes);
  for (std::size_t t = 0; t < y_tilde.size(); ++t)
    members[y_tilde[t]].push_back(t);

  std::vector<std::uint32_t> out;
  for (auto &cls : members) {
    if (cls.empty()) continue;
    const auto take = static_cast<std::size_t>(
        std::ceil(gamma * static_cast<double>(cls.size())));
    std::sort(cls.begin(), cls.end(), [&](std::size_t a, std::size_t b) {
      if (q[a] != q[b]) return q[a] > q[b];
      return ids[a] < ids[b];
    });
    for (std::size_t i = 0; i < take; ++i) out.push_back(ids[cls[i]]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

ScoreKind score_kind_from_string(const std::string &name) {
  if (name == "prob") return ScoreKind::Prob;
  if (name == "ent") return ScoreKind::Ent;
  if (name == "cossim") return ScoreKind::Cossim;
  throw ConfigError("unknown score kind: " + name);
}

std::vector<double> baseline_scores(const FeatureBundle &bundle,
                                    const PseudoLabelState &state,
                                    ScoreKind kind) {
  const Eigen::Index n = bundle.n();
  const Eigen::Index c = bundle.n_classes();
  std::vector<double> out(n);
  const MatD logits = bundle.logits.cast<double>();
  switch (kind) {
    case ScoreKind::Prob: {
      for (Eigen::Index t = 0; t < n; ++t)
        out[t] = softmax(logits.row(t).transpose())(state.y_tilde[t]);
      break;
    }
    case ScoreKind::Ent: {
      for (Eigen::Index t = 0; t < n; ++t) {
        const VecD p = softmax(logits.row(t).transpose());
        double h = 0.0;
        for (Eigen::Index j = 0; j < c; ++j)
          if (p(j) > 0.0) h -= p(j) * std::log(p(j));
        out[t] = -h / static_cast<double>(c);
      }
      break;
    }
    case ScoreKind::Cossim: {
      const MatD feats = bundle.features.cast<double>();
      for (Eigen::Index t = 0; t < n; ++t)
        out[t] = cosine_sim(feats.row(t).transpose(),
                            state.mu1.row(state.y_tilde[t]).transpose());
      break;
    }
  }
  return out;
}

ApsResult run_aps(const KnnGraph &graph, const std::vector<int> &y_tilde,
                  int n_classes, int iters, double gamma,
                  const std::vector<std::uint32_t> &ids) {
  ApsResult r;
  std::tie(r.y_hat, r.p_hat) = iterate_votes(graph, y_tilde, n_classes, iters);
  r.q = confidence_scores(graph, r.y_hat, y_tilde);
  r.selected = select_confident(r.q, y_tilde, gamma, ids);
  r.iterations_run = iters;
  return r;
}

}  // namespace plforge
