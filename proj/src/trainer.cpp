#include "plforge/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "plforge/aps.hpp"
#include "plforge/pseudo_label.hpp"

namespace plforge {
namespace {

double label_accuracy(const std::vector<int> &pred,
                      const std::vector<std::int32_t> &truth) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == truth[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

std::vector<int> argmax_rows(const MatD &m) {
  std::vector<int> out(m.rows());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Eigen::Index best;
    m.row(r).maxCoeff(&best);
    out[r] = static_cast<int>(best);
  }
  return out;
}

}  // namespace

MatD make_views(const MatD &features, double sigma, Rng &rng) {
  if (sigma < 0.0) throw ConfigError("sigma must be >= 0");
  MatD out(2 * features.rows(), features.cols());
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    out.row(2 * r) = features.row(r);
    for (Eigen::Index c = 0; c < features.cols(); ++c)
      out(2 * r + 1, c) = features(r, c) + sigma * rng.gaussian();
  }
  return out;
}

double lr_at(int epoch, int iter, int steps_per_epoch, int total_epochs,
             double lr0) {
  if (epoch < 1 || epoch > total_epochs || iter < 0 || iter >= steps_per_epoch)
    throw ConfigError("lr_at index out of schedule");
  if (epoch == 1)
    return lr0 * static_cast<double>(iter + 1) / steps_per_epoch;
  const double progress =
      static_cast<double>((epoch - 2) * steps_per_epoch + iter) /
      static_cast<double>((total_epochs - 1) * steps_per_epoch);
  return lr0 * 0.5 * (1.0 + std::cos(3.141592653589793238462643383279502884 *
                                     progress));
}

void sgd_step(AdapterModel &model, const VecD &grad, SgdState &state,
              double lr) {
  VecD params = model.pack_params();
  if (grad.size() != params.size())
    throw ConfigError("gradient size mismatch in sgd_step");
  if (state.velocity.size() != params.size())
    state.velocity = VecD::Zero(params.size());
  state.velocity = state.momentum * state.velocity +
                   (grad + state.weight_decay * params);
  params -= lr * state.velocity;
  model.unpack_params(params);
}

std::pair<AdapterModel, std::vector<EpochLog>> run_adaptation(
    const AdapterModel &source_model, const FeatureBundle &target,
    const TrainConfig &cfg) {
  cfg.validate();
  target.validate();
  if (target.dim() != source_model.d_in() ||
      target.n_classes() != source_model.n_classes())
    throw ConfigError("bundle dimensions do not match the model");

  AdapterModel model = source_model;
  std::vector<EpochLog> logs;
  if (cfg.epochs == 0) return {std::move(model), std::move(logs)};

  const Eigen::Index n = target.n();
  const int n_classes = static_cast<int>(target.n_classes());
  if (cfg.k >= n) throw ConfigError("k must be < N");
  const MatD x = target.features.cast<double>();
  const int steps_per_epoch =
      static_cast<int>((n + cfg.batch_size - 1) / cfg.batch_size);

  std::unordered_map<std::uint32_t, Eigen::Index> id_to_row;
  for (Eigen::Index i = 0; i < n; ++i) id_to_row[target.ids[i]] = i;

  SgdState sgd;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const MatD feat = model.features(x);
    const MatD logits_all = feat * model.F.transpose();
    const PseudoLabelState st = generate_pseudo_labels(feat, logits_all);
    const KnnGraph graph = build_knn(feat, cfg.k);
    const ApsResult aps = run_aps(graph, st.y_tilde, n_classes, cfg.iters,
                                  cfg.gamma, target.ids);
    std::vector<char> in_h(n, 0);
    for (std::uint32_t id : aps.selected) in_h[id_to_row.at(id)] = 1;

    EpochLog log;
    log.epoch = epoch;
    log.n_selected = aps.selected.size();
    if (target.labels) {
      log.pl_accuracy = label_accuracy(st.y_tilde, *target.labels);
      log.target_accuracy =
          label_accuracy(argmax_rows(logits_all), *target.labels);
      std::size_t hits = 0;
      for (std::uint32_t id : aps.selected) {
        const Eigen::Index row = id_to_row.at(id);
        if (st.y_tilde[row] == (*target.labels)[row]) ++hits;
      }
      log.selected_pl_accuracy =
          aps.selected.empty()
              ? 0.0
              : static_cast<double>(hits) / aps.selected.size();
    }

    Rng shuffle_rng(mix_seed(cfg.seed, kSaltAdaptShuffle + epoch));
    Rng view_rng(mix_seed(cfg.seed, kSaltViewNoise + epoch));
    std::vector<Eigen::Index> perm(n);
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    for (Eigen::Index i = n - 1; i > 0; --i)
      std::swap(perm[i], perm[shuffle_rng.below(i + 1)]);

    for (int iter = 0; iter < steps_per_epoch; ++iter) {
      const Eigen::Index begin = Eigen::Index(iter) * cfg.batch_size;
      const Eigen::Index count =
          std::min<Eigen::Index>(cfg.batch_size, n - begin);
      MatD x_b(count, x.cols());
      std::vector<std::uint32_t> ids2(2 * count);
      std::vector<int> labels2(2 * count);
      std::vector<char> in_h2(2 * count);
      for (Eigen::Index i = 0; i < count; ++i) {
        const Eigen::Index row = perm[begin + i];
        x_b.row(i) = x.row(row);
        for (int v = 0; v < 2; ++v) {
          ids2[2 * i + v] = target.ids[row];
          labels2[2 * i + v] = st.y_tilde[row];
          in_h2[2 * i + v] = in_h[row];
        }
      }
      const MatD views = make_views(x_b, cfg.aug_sigma, view_rng);
      const LossReport report = adapter_total_loss(
          model, views, ids2, labels2, in_h2, cfg.contrast(), cfg.use_cacl);
      const double lr = lr_at(epoch, iter, steps_per_epoch, cfg.epochs, cfg.lr);
      sgd_step(model, report.grad_adapter, sgd, lr);

      log.mean_l_cl += report.l_cl;
      log.mean_l_ce += report.l_ce;
      log.mean_l_im += report.l_im;
      log.mean_l_all += report.l_all;
    }
    log.mean_l_cl /= steps_per_epoch;
    log.mean_l_ce /= steps_per_epoch;
    log.mean_l_im /= steps_per_epoch;
    log.mean_l_all /= steps_per_epoch;
    logs.push_back(log);
  }
  return {std::move(model), std::move(logs)};
}

AdapterModel train_source(const FeatureBundle &source, const TrainConfig &cfg,
                          double *val_accuracy_out) {
  cfg.validate();
  source.validate();
  if (!source.labels)
    throw ConfigError("source training requires a labeled bundle");

  const Eigen::Index n = source.n();
  const Eigen::Index d = source.dim();
  const int n_classes = static_cast<int>(source.n_classes());
  const MatD x = source.features.cast<double>();

  Rng init_rng(mix_seed(cfg.seed, kSaltSourceInit));
  AdapterModel model;
  model.W = MatD::Identity(d, d);
  for (Eigen::Index r = 0; r < d; ++r)
    for (Eigen::Index c = 0; c < d; ++c)
      model.W(r, c) += 0.01 * init_rng.gaussian();
  model.b = VecD::Zero(d);
  model.F.resize(n_classes, d);
  for (Eigen::Index r = 0; r < n_classes; ++r)
    for (Eigen::Index c = 0; c < d; ++c)
      model.F(r, c) = 0.1 * init_rng.gaussian();

  // 9:1 split after a seeded shuffle
  Rng shuffle_rng(mix_seed(cfg.seed, kSaltSourceShuffle));
  std::vector<Eigen::Index> perm(n);
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  for (Eigen::Index i = n - 1; i > 0; --i)
    std::swap(perm[i], perm[shuffle_rng.below(i + 1)]);
  const Eigen::Index n_val = std::max<Eigen::Index>(1, n / 10);
  const Eigen::Index n_train = n - n_val;
  if (n_train < 1) throw ConfigError("source bundle too small for a 9:1 split");

  SgdState sgd_adapter;
  VecD velocity_f = VecD::Zero(model.F.size());
  const double momentum = 0.9;
  const double weight_decay = 1e-3;

  for (int epoch = 0; epoch < cfg.source_epochs; ++epoch) {
    for (Eigen::Index begin = 0; begin < n_train; begin += cfg.batch_size) {
      const Eigen::Index count =
          std::min<Eigen::Index>(cfg.batch_size, n_train - begin);
      MatD x_b(count, d);
      std::vector<int> y_b(count);
      for (Eigen::Index i = 0; i < count; ++i) {
        x_b.row(i) = x.row(perm[begin + i]);
        y_b[i] = (*source.labels)[perm[begin + i]];
      }
      const MatD feat = model.features(x_b);
      const MatD logits = feat * model.F.transpose();
      const MatD g_logits = ce_smoothed_grad(logits, y_b, cfg.alpha);
      const MatD g_feat = g_logits * model.F;
      const MatD grad_w = g_feat.transpose() * x_b;
      const VecD grad_b = g_feat.colwise().sum().transpose();
      const MatD grad_f = g_logits.transpose() * feat;

      VecD grad(grad_w.size() + grad_b.size());
      Eigen::Index k = 0;
      for (Eigen::Index r = 0; r < grad_w.rows(); ++r)
        for (Eigen::Index c = 0; c < grad_w.cols(); ++c) grad(k++) = grad_w(r, c);
      for (Eigen::Index i = 0; i < grad_b.size(); ++i) grad(k++) = grad_b(i);
      sgd_step(model, grad, sgd_adapter, cfg.source_lr);

      k = 0;
      for (Eigen::Index r = 0; r < model.F.rows(); ++r)
        for (Eigen::Index c = 0; c < model.F.cols(); ++c) {
          velocity_f(k) = momentum * velocity_f(k) +
                          (grad_f(r, c) + weight_decay * model.F(r, c));
          model.F(r, c) -= cfg.source_lr * velocity_f(k);
          ++k;
        }
    }
  }

  // weight-norm direction component: keep row directions only, then freeze
  for (Eigen::Index r = 0; r < model.F.rows(); ++r) {
    const double nrm = model.F.row(r).norm();
    if (nrm == 0.0) throw NumericError("classifier row collapsed to zero");
    model.F.row(r) /= nrm;
  }

  if (val_accuracy_out) {
    MatD x_val(n_val, d);
    std::vector<std::int32_t> y_val(n_val);
    for (Eigen::Index i = 0; i < n_val; ++i) {
      x_val.row(i) = x.row(perm[n_train + i]);
      y_val[i] = (*source.labels)[perm[n_train + i]];
    }
    *val_accuracy_out = label_accuracy(argmax_rows(model.logits(x_val)), y_val);
  }
  return model;
}

}  // namespace plforge
