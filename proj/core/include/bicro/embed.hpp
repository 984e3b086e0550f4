#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace bicro {

using FeatureVector = Eigen::VectorXd;

struct PairRecord {
  std::size_t id = 0;
  FeatureVector image;
  FeatureVector text;
  int label = 1;  // observed correspondence, 0 or 1
  std::optional<bool> true_match;

  friend bool operator==(const PairRecord& a, const PairRecord& b) {
    return a.id == b.id && a.label == b.label && a.true_match == b.true_match &&
           a.image.size() == b.image.size() && a.text.size() == b.text.size() &&
           a.image == b.image && a.text == b.text;
  }
};

struct PairDataset {
  std::vector<PairRecord> records;
  std::size_t image_dim = 0;
  std::size_t text_dim = 0;

  std::size_t size() const { return records.size(); }
  bool has_truth() const;
  std::vector<bool> truth_mask() const;

  // Throws on any violated dataset invariant.
  void validate() const;

  friend bool operator==(const PairDataset&, const PairDataset&) = default;
};

// Column-major feature matrices (column i = pair i) for batched work.
struct FeatureTable {
  Eigen::MatrixXd images;
  Eigen::MatrixXd texts;

  static FeatureTable from(const PairDataset& dataset);
  std::size_t size() const { return static_cast<std::size_t>(images.cols()); }
};

double cosine_similarity(const Eigen::Ref<const Eigen::VectorXd>& a,
                         const Eigen::Ref<const Eigen::VectorXd>& b);

// Cosine distance 1 - cos(a, b), clamped to [0, 2].
double feature_distance(const Eigen::Ref<const Eigen::VectorXd>& a,
                        const Eigen::Ref<const Eigen::VectorXd>& b);

// Exact linear scan; ties go to the smallest index.
std::size_t nearest_neighbor(const FeatureVector& query,
                             std::span<const FeatureVector> pool);

// Same contract over the columns of a matrix.
std::size_t nearest_column(const Eigen::Ref<const Eigen::VectorXd>& query,
                           const Eigen::Ref<const Eigen::MatrixXd>& pool);

}  // namespace bicro
