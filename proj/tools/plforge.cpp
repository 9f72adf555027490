#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>

#include "plforge/aps.hpp"
#include "plforge/bundle.hpp"
#include "plforge/pseudo_label.hpp"
#include "plforge/synth.hpp"
#include "plforge/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace plforge;

namespace {

struct RunConfig {
  SynthSpec synth;
  TrainConfig train;
};

// Scalars are overridable by flags; the JSON document is schema-checked
// and unknown keys are rejected.
RunConfig parse_config(const std::string &path) {
  RunConfig cfg;
  cfg.train.seed = cfg.synth.seed;
  if (path.empty()) return cfg;
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error &e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }

  static const char *known[] = {
      "seed",        "n_classes",   "dim",         "per_class",
      "spread",      "stddev",      "shift_angle", "shift_translation",
      "label_noise", "epochs",      "batch_size",  "lr",
      "warmup_epochs", "k",         "gamma",       "iters",
      "tau",         "beta",        "alpha",       "aug_sigma",
      "use_cacl",    "source_epochs", "source_lr"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char *name : known)
      if (it.key() == name) { ok = true; break; }
    if (!ok) throw ConfigError("unknown config key: " + it.key());
  }

  try {
    if (j.contains("seed")) {
      cfg.synth.seed = j["seed"].get<std::uint64_t>();
      cfg.train.seed = cfg.synth.seed;
    }
    if (j.contains("n_classes")) cfg.synth.n_classes = j["n_classes"].get<int>();
    if (j.contains("dim")) cfg.synth.dim = j["dim"].get<int>();
    if (j.contains("per_class")) cfg.synth.per_class = j["per_class"].get<int>();
    if (j.contains("spread")) cfg.synth.spread = j["spread"].get<double>();
    if (j.contains("stddev")) cfg.synth.stddev = j["stddev"].get<double>();
    if (j.contains("shift_angle"))
      cfg.synth.shift_angle = j["shift_angle"].get<double>();
    if (j.contains("shift_translation"))
      cfg.synth.shift_translation =
          j["shift_translation"].get<std::vector<double>>();
    if (j.contains("label_noise"))
      cfg.synth.label_noise = j["label_noise"].get<double>();
    if (j.contains("epochs")) cfg.train.epochs = j["epochs"].get<int>();
    if (j.contains("batch_size"))
      cfg.train.batch_size = j["batch_size"].get<int>();
    if (j.contains("lr")) cfg.train.lr = j["lr"].get<double>();
    if (j.contains("warmup_epochs"))
      cfg.train.warmup_epochs = j["warmup_epochs"].get<int>();
    if (j.contains("k")) cfg.train.k = j["k"].get<int>();
    if (j.contains("gamma")) cfg.train.gamma = j["gamma"].get<double>();
    if (j.contains("iters")) cfg.train.iters = j["iters"].get<int>();
    if (j.contains("tau")) cfg.train.tau = j["tau"].get<double>();
    if (j.contains("beta")) cfg.train.beta = j["beta"].get<double>();
    if (j.contains("alpha")) cfg.train.alpha = j["alpha"].get<double>();
    if (j.contains("aug_sigma"))
      cfg.train.aug_sigma = j["aug_sigma"].get<double>();
    if (j.contains("use_cacl")) cfg.train.use_cacl = j["use_cacl"].get<bool>();
    if (j.contains("source_epochs"))
      cfg.train.source_epochs = j["source_epochs"].get<int>();
    if (j.contains("source_lr"))
      cfg.train.source_lr = j["source_lr"].get<double>();
  } catch (const json::exception &e) {
    throw ConfigError(std::string("config type error: ") + e.what());
  }
  return cfg;
}

void require_dir(const fs::path &dir) {
  if (!fs::is_directory(dir))
    throw ConfigError("output directory does not exist: " + dir.string());
}

void write_epoch_csv(const fs::path &path, std::uint64_t seed,
                     const std::vector<EpochLog> &logs) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << "seed,epoch,pl_accuracy,selected_pl_accuracy,target_accuracy,"
        "mean_l_cl,mean_l_ce,mean_l_im,mean_l_all,n_selected\n";
  os.precision(9);
  for (const auto &log : logs)
    os << seed << ',' << log.epoch << ',' << log.pl_accuracy << ','
       << log.selected_pl_accuracy << ',' << log.target_accuracy << ','
       << log.mean_l_cl << ',' << log.mean_l_ce << ',' << log.mean_l_im << ','
       << log.mean_l_all << ',' << log.n_selected << "\n";
}

int cmd_synth(const RunConfig &cfg, const fs::path &out_dir) {
  require_dir(out_dir);
  auto [source, target] = generate(cfg.synth);
  save_bundle(source, out_dir / "source.fbun", "synth-source");
  save_bundle(target, out_dir / "target.fbun", "synth-target");
  std::cout << "wrote " << (out_dir / "source.fbun").string() << " and "
            << (out_dir / "target.fbun").string() << " (N="
            << source.n() << " each)\n";
  return 0;
}

int cmd_source_train(const fs::path &source_path, const RunConfig &cfg,
                     const fs::path &out_model) {
  FeatureBundle source = load_bundle(source_path);
  if (!source.labels)
    throw ConfigError("source-train requires a labeled bundle");
  double val_acc = 0.0;
  AdapterModel model = train_source(source, cfg.train, &val_acc);
  save_model(model, out_model);
  std::cout << "validation accuracy: " << val_acc << "\n";
  std::cout << "wrote " << out_model.string() << "\n";
  return 0;
}

int cmd_adapt(const fs::path &target_path, const fs::path &model_path,
              const RunConfig &cfg, const fs::path &out_dir) {
  require_dir(out_dir);
  FeatureBundle target = load_bundle(target_path);
  AdapterModel model = load_model(model_path);
  auto [adapted, logs] = run_adaptation(model, target, cfg.train);
  save_model(adapted, out_dir / "adapted.adpt");
  write_epoch_csv(out_dir / "epochs.csv", cfg.train.seed, logs);
  if (!logs.empty())
    std::cout << "final target accuracy: " << logs.back().target_accuracy
              << "\n";
  std::cout << "wrote " << (out_dir / "adapted.adpt").string() << " and "
            << (out_dir / "epochs.csv").string() << "\n";
  return 0;
}

int cmd_select(const fs::path &target_path, const fs::path &model_path,
               const RunConfig &cfg, const std::string &method,
               const fs::path &out_csv) {
  FeatureBundle target = load_bundle(target_path);
  AdapterModel model = load_model(model_path);
  if (target.dim() != model.d_in())
    throw ConfigError("bundle dimensions do not match the model");

  const MatD x = target.features.cast<double>();
  const MatD feat = model.features(x);
  const MatD logits = feat * model.F.transpose();
  PseudoLabelState st = generate_pseudo_labels(feat, logits);
  const int n_classes = static_cast<int>(model.n_classes());
  if (cfg.synth.label_noise > 0.0) {
    Rng noise_rng(mix_seed(cfg.synth.seed, kSaltLabelNoise));
    inject_label_noise(st.y_tilde, cfg.synth.label_noise, n_classes, noise_rng);
  }

  std::vector<double> scores;
  if (method == "aps") {
    const KnnGraph graph = build_knn(feat, cfg.train.k);
    auto [y_hat, p_hat] =
        iterate_votes(graph, st.y_tilde, n_classes, cfg.train.iters);
    scores = confidence_scores(graph, y_hat, st.y_tilde);
  } else {
    FeatureBundle current;
    current.features = feat.cast<float>();
    current.logits = logits.cast<float>();
    current.ids = target.ids;
    scores = baseline_scores(current, st, score_kind_from_string(method));
  }
  const auto selected =
      select_confident(scores, st.y_tilde, cfg.train.gamma, target.ids);
  std::vector<char> in_h(target.n(), 0);
  for (std::uint32_t id : selected)
    for (Eigen::Index r = 0; r < target.n(); ++r)
      if (target.ids[r] == id) in_h[r] = 1;

  std::vector<Eigen::Index> order(target.n());
  for (Eigen::Index i = 0; i < target.n(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return target.ids[a] < target.ids[b];
  });

  std::ofstream os(out_csv);
  if (!os) throw IoError("cannot open for writing: " + out_csv.string());
  os << "id,pseudo_label,score,selected\n";
  os.precision(9);
  for (Eigen::Index r : order)
    os << target.ids[r] << ',' << st.y_tilde[r] << ',' << scores[r] << ','
       << int(in_h[r]) << "\n";
  std::cout << "selected " << selected.size() << " of " << target.n()
            << " samples\n";
  return 0;
}

int cmd_report(const std::vector<std::string> &log_paths,
               const fs::path &out_csv) {
  struct Row {
    std::uint64_t seed;
    int epoch;
    std::string rest;
  };
  std::vector<Row> rows;
  std::string header =
      "seed,epoch,pl_accuracy,selected_pl_accuracy,target_accuracy,"
      "mean_l_cl,mean_l_ce,mean_l_im,mean_l_all,n_selected";
  for (const auto &p : log_paths) {
    std::ifstream is(p);
    if (!is) throw IoError("cannot open: " + p);
    std::string line;
    if (!std::getline(is, line)) continue;
    if (line != header)
      throw ConfigError("unexpected log header in " + p);
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      Row row;
      std::string cell;
      std::getline(ss, cell, ',');
      row.seed = std::stoull(cell);
      std::getline(ss, cell, ',');
      row.epoch = std::stoi(cell);
      std::getline(ss, row.rest);
      rows.push_back(std::move(row));
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row &a, const Row &b) {
    if (a.seed != b.seed) return a.seed < b.seed;
    return a.epoch < b.epoch;
  });
  std::ofstream os(out_csv);
  if (!os) throw IoError("cannot open for writing: " + out_csv.string());
  os << header << "\n";
  for (const auto &row : rows)
    os << row.seed << ',' << row.epoch << ',' << row.rest << "\n";
  std::cout << "wrote " << out_csv.string() << " (" << rows.size()
            << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"feature-level source-free domain adaptation pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON run configuration");

  // scalar overrides, applied on top of the config document
  std::optional<std::uint64_t> opt_seed;
  std::optional<double> opt_gamma, opt_label_noise, opt_beta, opt_tau;
  std::optional<int> opt_iters, opt_epochs, opt_k;
  bool no_cacl = false;
  app.add_option("--seed", opt_seed, "override the run seed");
  app.add_option("--gamma", opt_gamma, "override the selection ratio");
  app.add_option("--iters", opt_iters, "override the vote iteration count");
  app.add_option("--epochs", opt_epochs, "override the epoch count");
  app.add_option("--k", opt_k, "override the neighborhood size");
  app.add_option("--beta", opt_beta, "override the CE loss weight");
  app.add_option("--tau", opt_tau, "override the contrastive temperature");
  app.add_option("--label-noise", opt_label_noise,
                 "override the injected pseudo-label noise fraction");
  app.add_flag("--no-cacl", no_cacl, "drop the contrastive loss term");

  std::string out_dir, out_file, method = "aps";
  std::string bundle_path, model_path;
  std::vector<std::string> log_paths;

  auto *synth = app.add_subcommand("synth", "generate a synthetic benchmark");
  synth->add_option("--out-dir", out_dir, "output directory")->required();

  auto *strain = app.add_subcommand("source-train", "pretrain a source model");
  strain->add_option("source", bundle_path, "labeled source .fbun")->required();
  strain->add_option("--out", out_file, "output .adpt checkpoint")->required();

  auto *adapt = app.add_subcommand("adapt", "run the adaptation loop");
  adapt->add_option("target", bundle_path, "target .fbun")->required();
  adapt->add_option("model", model_path, "source .adpt checkpoint")->required();
  adapt->add_option("--out-dir", out_dir, "output directory")->required();

  auto *select = app.add_subcommand("select", "score and select confident samples");
  select->add_option("target", bundle_path, "target .fbun")->required();
  select->add_option("model", model_path, ".adpt checkpoint")->required();
  select->add_option("--method", method, "aps|prob|ent|cossim");
  select->add_option("--out", out_file, "output CSV")->required();

  auto *report = app.add_subcommand("report", "merge per-epoch logs");
  report->add_option("logs", log_paths, "epoch CSV files");
  report->add_option("--out", out_file, "output CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = parse_config(config_path);
    if (opt_seed) {
      cfg.synth.seed = *opt_seed;
      cfg.train.seed = *opt_seed;
    }
    if (opt_gamma) cfg.train.gamma = *opt_gamma;
    if (opt_iters) cfg.train.iters = *opt_iters;
    if (opt_epochs) cfg.train.epochs = *opt_epochs;
    if (opt_k) cfg.train.k = *opt_k;
    if (opt_beta) cfg.train.beta = *opt_beta;
    if (opt_tau) cfg.train.tau = *opt_tau;
    if (opt_label_noise) cfg.synth.label_noise = *opt_label_noise;
    if (no_cacl) cfg.train.use_cacl = false;
    cfg.train.validate();

    if (synth->parsed()) return cmd_synth(cfg, out_dir);
    if (strain->parsed()) return cmd_source_train(bundle_path, cfg, out_file);
    if (adapt->parsed()) return cmd_adapt(bundle_path, model_path, cfg, out_dir);
    if (select->parsed())
      return cmd_select(bundle_path, model_path, cfg, method, out_file);
    if (report->parsed()) return cmd_report(log_paths, out_file);
  } catch (const ConfigError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
