#include "plforge/pseudo_label.hpp"

#include <algorithm>
#include <cmath>

namespace plforge {

VecD softmax(const VecD &logit_row) {
  for (Eigen::Index i = 0; i < logit_row.size(); ++i)
    if (!std::isfinite(logit_row(i)))
      throw NumericError("non-finite logit in softmax input");
  const double m = logit_row.maxCoeff();
  VecD e = (logit_row.array() - m).exp();
  return e / e.sum();
}

MatD softmax_rows(const MatD &logits) {
  MatD out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r)
    out.row(r) = softmax(logits.row(r).transpose()).transpose();
  return out;
}

double cosine_sim(const VecD &u, const VecD &v) {
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 || nv == 0.0)
    throw NumericError("cosine similarity of a zero-norm vector");
  return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
}

MatD compute_mu0(const MatD &features, const MatD &logits) {
  constexpr double kEps = 1e-8;
  const MatD probs = softmax_rows(logits);
  // mu = P^T X with per-class mass normalization
  MatD mu = probs.transpose() * features;
  const VecD mass = probs.colwise().sum().transpose();
  for (Eigen::Index c = 0; c < mu.rows(); ++c) mu.row(c) /= mass(c) + kEps;
  return mu;
}

std::vector<int> assign_nearest(const MatD &features, const MatD &centroids,
                                const std::vector<char> *usable) {
  const Eigen::Index n_class = centroids.rows();
  std::vector<double> cnorm(n_class);
  bool any_usable = false;
  for (Eigen::Index c = 0; c < n_class; ++c) {
    cnorm[c] = centroids.row(c).norm();
    const bool ok = cnorm[c] > 0.0 && (!usable || (*usable)[c]);
    if (ok) any_usable = true;
    else cnorm[c] = -1.0;  // mark excluded
  }
  if (!any_usable) throw NumericError("all centroids flagged unusable");

  std::vector<int> out(features.rows());
  for (Eigen::Index t = 0; t < features.rows(); ++t) {
    const double fn = features.row(t).norm();
    if (fn == 0.0) throw NumericError("zero-norm feature row");
    int best = -1;
    double best_sim = 0.0;
    for (Eigen::Index c = 0; c < n_class; ++c) {
      if (cnorm[c] < 0.0) continue;
      const double sim = features.row(t).dot(centroids.row(c)) / (fn * cnorm[c]);
      if (best < 0 || sim > best_sim) {
        best = static_cast<int>(c);
        best_sim = sim;
      }
    }
    out[t] = best;
  }
  return out;
}

void refine_labels(const MatD &features, const std::vector<int> &y0,
                   const MatD &mu0, MatD &mu1_out,
                   std::vector<int> &y_tilde_out,
                   std::vector<char> &empty_class_out) {
  const Eigen::Index n_class = mu0.rows();
  mu1_out = MatD::Zero(n_class, features.cols());
  std::vector<std::int64_t> count(n_class, 0);
  for (Eigen::Index t = 0; t < features.rows(); ++t) {
    mu1_out.row(y0[t]) += features.row(t);
    ++count[y0[t]];
  }
  empty_class_out.assign(n_class, 0);
  std::vector<char> usable(n_class, 1);
  for (Eigen::Index c = 0; c < n_class; ++c) {
    if (count[c] == 0) {
      mu1_out.row(c) = mu0.row(c);
      empty_class_out[c] = 1;
      usable[c] = 0;
    } else {
      mu1_out.row(c) /= static_cast<double>(count[c]);
    }
  }
  y_tilde_out = assign_nearest(features, mu1_out, &usable);
}

PseudoLabelState generate_pseudo_labels(const MatD &features,
                                        const MatD &logits) {
  PseudoLabelState st;
  st.mu0 = compute_mu0(features, logits);
  st.y0 = assign_nearest(features, st.mu0);
  refine_labels(features, st.y0, st.mu0, st.mu1, st.y_tilde, st.empty_class);
  return st;
}

PseudoLabelState generate_pseudo_labels(const FeatureBundle &bundle) {
  return generate_pseudo_labels(bundle.features.cast<double>(),
                                bundle.logits.cast<double>());
}

}  // namespace plforge
