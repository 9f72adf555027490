#include "plforge/synth.hpp"

#include <cmath>
#include <sstream>
#include <unordered_map>

#include "plforge/aps.hpp"
#include "plforge/pseudo_label.hpp"

namespace plforge {
namespace {

// Random unit vector via normalized gaussian draw.
VecD unit_direction(int dim, Rng &rng) {
  VecD v(dim);
  double nrm = 0.0;
  while (nrm == 0.0) {
    for (int i = 0; i < dim; ++i) v(i) = rng.gaussian();
    nrm = v.norm();
  }
  return v / nrm;
}

FeatureBundle draw_domain(const SynthSpec &spec, const MatD &centers,
                          bool shifted, Rng &rng) {
  const int n = spec.n_classes * spec.per_class;
  MatD feats(n, spec.dim);
  std::vector<std::int32_t> labels(n);
  int row = 0;
  for (int c = 0; c < spec.n_classes; ++c) {
    for (int s = 0; s < spec.per_class; ++s, ++row) {
      for (int j = 0; j < spec.dim; ++j)
        feats(row, j) = centers(c, j) + spec.stddev * rng.gaussian();
      labels[row] = c;
    }
  }
  if (shifted) {
    // rigid rotation in the plane of the first two axes, then translation
    if (spec.dim >= 2 && spec.shift_angle != 0.0) {
      const double ca = std::cos(spec.shift_angle);
      const double sa = std::sin(spec.shift_angle);
      for (int r = 0; r < n; ++r) {
        const double x0 = feats(r, 0);
        const double x1 = feats(r, 1);
        feats(r, 0) = ca * x0 - sa * x1;
        feats(r, 1) = sa * x0 + ca * x1;
      }
    }
    if (!spec.shift_translation.empty())
      for (int r = 0; r < n; ++r)
        for (int j = 0; j < spec.dim; ++j)
          feats(r, j) += spec.shift_translation[j];
  }

  FeatureBundle b;
  b.features = feats.cast<float>();
  b.logits = MatF::Zero(n, spec.n_classes);
  b.labels = std::move(labels);
  b.ids.resize(n);
  for (int i = 0; i < n; ++i) b.ids[i] = static_cast<std::uint32_t>(i);
  return b;
}

}  // namespace

std::pair<FeatureBundle, FeatureBundle> generate(const SynthSpec &spec) {
  spec.validate();
  Rng center_rng(mix_seed(spec.seed, kSaltSynthSource));
  MatD centers(spec.n_classes, spec.dim);
  for (int c = 0; c < spec.n_classes; ++c)
    centers.row(c) = (spec.spread * unit_direction(spec.dim, center_rng)).transpose();

  Rng source_rng(mix_seed(spec.seed, kSaltSynthSource + 1));
  Rng target_rng(mix_seed(spec.seed, kSaltSynthTarget));
  FeatureBundle source = draw_domain(spec, centers, false, source_rng);
  FeatureBundle target = draw_domain(spec, centers, true, target_rng);
  return {std::move(source), std::move(target)};
}

void inject_label_noise(std::vector<int> &labels, double fraction,
                        int n_classes, Rng &rng) {
  if (fraction < 0.0 || fraction >= 1.0)
    throw ConfigError("label_noise must lie in [0, 1)");
  const auto n = labels.size();
  const auto n_flip = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(n)));
  // choose flip positions by a partial Fisher-Yates over indices
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < n_flip; ++i)
    std::swap(idx[i], idx[i + rng.below(n - i)]);
  for (std::size_t i = 0; i < n_flip; ++i) {
    const std::size_t t = idx[i];
    const int offset = 1 + static_cast<int>(rng.below(n_classes - 1));
    labels[t] = (labels[t] + offset) % n_classes;
  }
}

MetricsRow evaluate(const AdapterModel &model, const FeatureBundle &bundle) {
  bundle.validate();
  if (!bundle.labels) throw ConfigError("evaluate requires a labeled bundle");
  const MatD logits = model.logits(bundle.features.cast<double>());
  const int n_classes = static_cast<int>(model.n_classes());

  MetricsRow row;
  row.per_class.assign(n_classes, 0.0);
  row.class_counts.assign(n_classes, 0);
  std::size_t hits = 0;
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    Eigen::Index pred;
    logits.row(t).maxCoeff(&pred);
    const int truth = (*bundle.labels)[t];
    ++row.class_counts[truth];
    if (static_cast<int>(pred) == truth) {
      ++hits;
      row.per_class[truth] += 1.0;
    }
  }
  for (int c = 0; c < n_classes; ++c)
    if (row.class_counts[c]) row.per_class[c] /= row.class_counts[c];
  row.accuracy = static_cast<double>(hits) / static_cast<double>(logits.rows());
  return row;
}

std::string ablation_table(const FeatureBundle &target,
                           const AdapterModel &model, const TrainConfig &cfg,
                           const std::vector<std::string> &methods,
                           double label_noise, std::uint64_t noise_seed) {
  cfg.validate();
  target.validate();
  if (!target.labels)
    throw ConfigError("ablation_table requires a labeled bundle");

  const MatD x = target.features.cast<double>();
  const MatD feat = model.features(x);
  const MatD logits = feat * model.F.transpose();
  const int n_classes = static_cast<int>(model.n_classes());
  PseudoLabelState st = generate_pseudo_labels(feat, logits);

  Rng noise_rng(mix_seed(noise_seed, kSaltLabelNoise));
  std::vector<int> y_noisy = st.y_tilde;
  inject_label_noise(y_noisy, label_noise, n_classes, noise_rng);
  st.y_tilde = y_noisy;  // scores rank the (possibly corrupted) labels

  const KnnGraph graph = build_knn(feat, cfg.k);

  std::unordered_map<std::uint32_t, Eigen::Index> id_to_row;
  for (Eigen::Index i = 0; i < x.rows(); ++i) id_to_row[target.ids[i]] = i;

  // bundle view over the model's current representation, for the baselines
  FeatureBundle current;
  current.features = feat.cast<float>();
  current.logits = logits.cast<float>();
  current.labels = target.labels;
  current.ids = target.ids;

  double full_acc = 0.0, target_acc = 0.0;
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    if (y_noisy[t] == (*target.labels)[t]) full_acc += 1.0;
    Eigen::Index pred;
    logits.row(t).maxCoeff(&pred);
    if (static_cast<int>(pred) == (*target.labels)[t]) target_acc += 1.0;
  }
  full_acc /= static_cast<double>(x.rows());
  target_acc /= static_cast<double>(x.rows());

  std::ostringstream csv;
  csv << "method,iters,gamma,n_selected,selected_pl_acc,full_pl_acc,target_acc\n";
  csv.precision(6);
  csv << std::fixed;
  for (const auto &method : methods) {
    for (int iters = 1; iters <= 3; ++iters) {
      std::vector<std::uint32_t> selected;
      if (method == "aps") {
        selected = run_aps(graph, y_noisy, n_classes, iters, cfg.gamma,
                           target.ids)
                       .selected;
      } else {
        const auto scores =
            baseline_scores(current, st, score_kind_from_string(method));
        selected = select_confident(scores, y_noisy, cfg.gamma, target.ids);
      }
      std::size_t hits = 0;
      for (std::uint32_t id : selected) {
        const Eigen::Index row = id_to_row.at(id);
        if (y_noisy[row] == (*target.labels)[row]) ++hits;
      }
      const double sel_acc =
          selected.empty() ? 0.0
                           : static_cast<double>(hits) / selected.size();
      csv << method << ',' << iters << ',' << cfg.gamma << ','
          << selected.size() << ',' << sel_acc << ',' << full_acc << ','
          << target_acc << "\n";
    }
  }
  return csv.str();
}

}  // namespace plforge
