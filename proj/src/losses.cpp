#include "plforge/losses.hpp"

#include <cmath>
#include <limits>

#include "plforge/pseudo_label.hpp"

namespace plforge {

VecD smooth_targets(int label, int n_classes, double alpha) {
  if (label < 0 || label >= n_classes) throw ConfigError("label out of range");
  VecD t = VecD::Constant(n_classes, alpha / n_classes);
  t(label) += 1.0 - alpha;
  return t;
}

double ce_smoothed(const MatD &logits, const std::vector<int> &labels,
                   double alpha) {
  const Eigen::Index n = logits.rows();
  const int c = static_cast<int>(logits.cols());
  double acc = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const VecD t = smooth_targets(labels[r], c, alpha);
    const VecD row = logits.row(r).transpose();
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    acc -= t.dot(row) - lse;  // sum_c t_c * log softmax_c
  }
  return acc / static_cast<double>(n);
}

MatD ce_smoothed_grad(const MatD &logits, const std::vector<int> &labels,
                      double alpha) {
  const Eigen::Index n = logits.rows();
  const int c = static_cast<int>(logits.cols());
  MatD g = softmax_rows(logits);
  for (Eigen::Index r = 0; r < n; ++r)
    g.row(r) -= smooth_targets(labels[r], c, alpha).transpose();
  return g / static_cast<double>(n);
}

double ce_pseudo(const BatchView &batch) {
  double acc = 0.0;
  int count = 0;
  for (Eigen::Index r = 0; r < batch.logits.rows(); ++r) {
    if (!batch.in_h[r]) continue;
    const VecD row = batch.logits.row(r).transpose();
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    acc -= row(batch.labels[r]) - lse;
    ++count;
  }
  return count ? acc / count : 0.0;
}

MatD ce_pseudo_grad(const BatchView &batch) {
  MatD g = MatD::Zero(batch.logits.rows(), batch.logits.cols());
  int count = 0;
  for (Eigen::Index r = 0; r < batch.logits.rows(); ++r)
    if (batch.in_h[r]) ++count;
  if (!count) return g;
  for (Eigen::Index r = 0; r < batch.logits.rows(); ++r) {
    if (!batch.in_h[r]) continue;
    VecD p = softmax(batch.logits.row(r).transpose());
    p(batch.labels[r]) -= 1.0;
    g.row(r) = p.transpose() / count;
  }
  return g;
}

std::vector<std::vector<int>> positive_pairs(const BatchView &batch) {
  const auto m = static_cast<int>(batch.logits.rows());
  std::vector<std::vector<int>> j(m);
  for (int i = 0; i < m; ++i) {
    if (!batch.in_h[i]) continue;
    for (int a = 0; a < m; ++a)
      if (a != i && batch.in_h[a] && batch.labels[a] == batch.labels[i])
        j[i].push_back(a);
  }
  return j;
}

namespace {

MatD normalized_rows(const MatD &logits) {
  MatD z(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double nrm = logits.row(r).norm();
    if (nrm == 0.0)
      throw NumericError("zero-norm logit row " + std::to_string(r) +
                         " in contrastive loss");
    z.row(r) = logits.row(r) / nrm;
  }
  return z;
}

}  // namespace

double contrastive_loss(const BatchView &batch, double tau) {
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  const auto m = static_cast<int>(batch.logits.rows());
  const MatD z = normalized_rows(batch.logits);
  const MatD s = z * z.transpose();
  const auto pairs = positive_pairs(batch);
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    if (pairs[i].empty()) continue;
    // log-sum-exp over all a != i
    double mx = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < m; ++a)
      if (a != i) mx = std::max(mx, s(i, a) / tau);
    double denom = 0.0;
    for (int a = 0; a < m; ++a)
      if (a != i) denom += std::exp(s(i, a) / tau - mx);
    const double lse = mx + std::log(denom);
    double inner = 0.0;
    for (int j : pairs[i]) inner += s(i, j) / tau - lse;
    total -= inner / static_cast<double>(pairs[i].size());
  }
  return total;
}

MatD contrastive_loss_grad(const BatchView &batch, double tau) {
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  const auto m = static_cast<int>(batch.logits.rows());
  const MatD z = normalized_rows(batch.logits);
  const MatD s = z * z.transpose();
  const auto pairs = positive_pairs(batch);

  // d loss / d s
  MatD gs = MatD::Zero(m, m);
  for (int i = 0; i < m; ++i) {
    if (pairs[i].empty()) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < m; ++a)
      if (a != i) mx = std::max(mx, s(i, a) / tau);
    double denom = 0.0;
    for (int a = 0; a < m; ++a)
      if (a != i) denom += std::exp(s(i, a) / tau - mx);
    for (int a = 0; a < m; ++a)
      if (a != i) gs(i, a) += std::exp(s(i, a) / tau - mx) / denom / tau;
    const double w = 1.0 / (tau * static_cast<double>(pairs[i].size()));
    for (int j : pairs[i]) gs(i, j) -= w;
  }

  // s is bilinear in z: d loss / d z = gs * z + gs^T * z
  const MatD gz = gs * z + gs.transpose() * z;

  // back through row normalization z = l / ||l||
  MatD gl(m, batch.logits.cols());
  for (int r = 0; r < m; ++r) {
    const double nrm = batch.logits.row(r).norm();
    const VecD zr = z.row(r).transpose();
    const VecD gr = gz.row(r).transpose();
    gl.row(r) = ((gr - zr * zr.dot(gr)) / nrm).transpose();
  }
  return gl;
}

double im_loss(const MatD &logits) {
  const MatD p = softmax_rows(logits);
  const Eigen::Index n = p.rows();
  double ent = 0.0;
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < p.cols(); ++c)
      if (p(r, c) > 0.0) ent -= p(r, c) * std::log(p(r, c));
  ent /= static_cast<double>(n);
  const VecD marginal = p.colwise().mean().transpose();
  double div = 0.0;
  for (Eigen::Index c = 0; c < marginal.size(); ++c)
    if (marginal(c) > 0.0) div += marginal(c) * std::log(marginal(c));
  return ent + div;
}

MatD im_loss_grad(const MatD &logits) {
  const MatD p = softmax_rows(logits);
  const Eigen::Index n = p.rows();
  const Eigen::Index c = p.cols();
  const VecD marginal = p.colwise().mean().transpose();
  VecD log_marginal(c);
  for (Eigen::Index j = 0; j < c; ++j)
    log_marginal(j) = marginal(j) > 0.0 ? std::log(marginal(j)) : 0.0;

  MatD g(n, c);
  for (Eigen::Index r = 0; r < n; ++r) {
    double h = 0.0;
    for (Eigen::Index j = 0; j < c; ++j)
      if (p(r, j) > 0.0) h -= p(r, j) * std::log(p(r, j));
    const double row_dot = p.row(r).dot(log_marginal.transpose());
    for (Eigen::Index j = 0; j < c; ++j) {
      const double logp = p(r, j) > 0.0 ? std::log(p(r, j)) : 0.0;
      const double d_ent = -p(r, j) * (logp + h);
      const double d_div = p(r, j) * (log_marginal(j) - row_dot);
      g(r, j) = (d_ent + d_div) / static_cast<double>(n);
    }
  }
  return g;
}

LossReport total_loss(const BatchView &batch, const ContrastConfig &cfg) {
  cfg.validate();
  LossReport r;
  r.beta = cfg.beta;
  r.l_cl = contrastive_loss(batch, cfg.tau);
  r.l_ce = ce_pseudo(batch);
  r.l_im = im_loss(batch.logits);
  r.l_all = r.l_cl + cfg.beta * r.l_ce + r.l_im;
  return r;
}

LossReport adapter_total_loss(const AdapterModel &model, const MatD &x_views,
                              const std::vector<std::uint32_t> &indices,
                              const std::vector<int> &labels,
                              const std::vector<char> &in_h,
                              const ContrastConfig &cfg, bool use_cacl) {
  cfg.validate();
  BatchView batch;
  batch.indices = indices;
  batch.labels = labels;
  batch.in_h = in_h;
  batch.logits = model.logits(x_views);

  LossReport r;
  r.beta = cfg.beta;
  r.l_ce = ce_pseudo(batch);
  r.l_im = im_loss(batch.logits);
  MatD g_logits = cfg.beta * ce_pseudo_grad(batch) + im_loss_grad(batch.logits);
  if (use_cacl) {
    r.l_cl = contrastive_loss(batch, cfg.tau);
    g_logits += contrastive_loss_grad(batch, cfg.tau);
  }
  r.l_all = r.l_cl + cfg.beta * r.l_ce + r.l_im;
  if (!std::isfinite(r.l_all)) throw NumericError("non-finite loss");

  // chain rule through logits = (X W^T + b) F^T
  const MatD g_feat = g_logits * model.F;              // M x D_out
  const MatD grad_w = g_feat.transpose() * x_views;    // D_out x D_in
  const VecD grad_b = g_feat.colwise().sum().transpose();

  r.grad_adapter.resize(grad_w.size() + grad_b.size());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < grad_w.rows(); ++i)
    for (Eigen::Index j = 0; j < grad_w.cols(); ++j)
      r.grad_adapter(k++) = grad_w(i, j);
  for (Eigen::Index i = 0; i < grad_b.size(); ++i)
    r.grad_adapter(k++) = grad_b(i);
  return r;
}

double grad_check(const std::function<double(const VecD &)> &fn,
                  const VecD &grad_impl, const VecD &params, double step) {
  if (grad_impl.size() != params.size())
    throw ConfigError("gradient/parameter size mismatch");
  double worst = 0.0;
  VecD p = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    p(i) = params(i) + step;
    const double hi = fn(p);
    p(i) = params(i) - step;
    const double lo = fn(p);
    p(i) = params(i);
    const double fd = (hi - lo) / (2.0 * step);
    const double err = std::abs(grad_impl(i) - fd) / std::max(1.0, std::abs(fd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace plforge
