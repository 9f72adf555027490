#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "plforge/common.hpp"

namespace plforge {

/// Universal dataset carrier: per-sample embedding rows, pre-softmax
/// classifier outputs, optional ground-truth labels and stable ids.
struct FeatureBundle {
  MatF features;  // N x D
  MatF logits;    // N x C
  std::optional<std::vector<std::int32_t>> labels;  // values in [0, C)
  std::vector<std::uint32_t> ids;

  Eigen::Index n() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
  Eigen::Index n_classes() const { return logits.cols(); }

  /// Throws ConfigError on any invariant violation (shape mismatch,
  /// non-finite entries, duplicate ids, out-of-range labels).
  void validate() const;
};

struct Manifest {
  std::uint32_t n_samples = 0;
  std::uint32_t feature_dim = 0;
  std::uint32_t n_classes = 0;
  std::string domain_name;
  bool has_labels = false;
  std::uint64_t checksum = 0;
};

inline constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ull;

/// 64-bit FNV-1a, chainable via the seed argument.
std::uint64_t fnv1a64(const void *data, std::size_t len,
                      std::uint64_t seed = kFnvOffsetBasis);

/// Writes `<path>` in the .fbun binary layout plus a sibling
/// `<path>.manifest.json`. Validates the bundle before touching the disk.
void save_bundle(const FeatureBundle &bundle, const std::filesystem::path &path,
                 const std::string &domain_name = "");

/// Reads a .fbun file, verifying magic, version, lengths and checksum.
FeatureBundle load_bundle(const std::filesystem::path &path);

Manifest load_manifest(const std::filesystem::path &fbun_path);

/// Builds a bundle from numeric CSV files; ids become 0..N-1.
FeatureBundle import_csv(const std::filesystem::path &features_csv,
                         const std::filesystem::path &logits_csv,
                         const std::optional<std::filesystem::path> &labels_csv =
                             std::nullopt);

}  // namespace plforge
