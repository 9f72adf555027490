#pragma once

#include <filesystem>

#include "plforge/common.hpp"

namespace plforge {

/// Linear feature adapter g(x) = W x + b followed by a frozen linear
/// classifier f with L2-normalized rows, so phi(x) = F (W x + b).
struct AdapterModel {
  MatD W;  // D_out x D_in
  VecD b;  // D_out
  MatD F;  // C x D_out, frozen after source training

  Eigen::Index d_in() const { return W.cols(); }
  Eigen::Index d_out() const { return W.rows(); }
  Eigen::Index n_classes() const { return F.rows(); }

  /// Adapter output for a batch of input rows (M x D_in -> M x D_out).
  MatD features(const MatD &x) const {
    return (x * W.transpose()).rowwise() + b.transpose();
  }

  /// Classifier logits (M x C).
  MatD logits(const MatD &x) const { return features(x) * F.transpose(); }

  std::size_t param_count() const {
    return static_cast<std::size_t>(W.size() + b.size());
  }

  /// Trainable parameters (W row-major, then b) as a flat vector.
  VecD pack_params() const;
  void unpack_params(const VecD &flat);
};

/// "ADPT" binary checkpoint, f64 little-endian, checksummed.
void save_model(const AdapterModel &model, const std::filesystem::path &path);
AdapterModel load_model(const std::filesystem::path &path);

}  // namespace plforge
