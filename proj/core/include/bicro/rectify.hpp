#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "bicro/embed.hpp"

namespace bicro {

// Dataset indices treated as clean; sorted ascending.
struct AnchorSet {
  std::vector<std::size_t> indices;

  bool empty() const { return indices.empty(); }
  std::size_t size() const { return indices.size(); }
  bool contains(std::size_t i) const;
};

struct Partition {
  AnchorSet anchors;
  std::vector<std::size_t> noisy;  // complement of anchors, ascending
};

struct PartitionConfig {
  // Exactly one of these selects the anchor rule.
  std::optional<double> delta;            // anchors are p > delta
  std::optional<double> anchor_fraction;  // anchors are the top ceil(qN)
  double theta = 0.0;                     // mismatch threshold
  double epsilon_d = 1e-8;                // denominator floor

  static PartitionConfig fraction(double q) { return {std::nullopt, q}; }
  static PartitionConfig threshold(double d) { return {d, std::nullopt}; }
  void validate() const;
};

struct SoftLabelRecord {
  std::size_t pair_id = 0;
  double y_star = 0.0;
  double c_i2t = 0.0;  // before clipping
  double c_t2i = 0.0;
  std::size_t image_anchor = 0;  // dataset index of the anchor nearest by image
  std::size_t text_anchor = 0;   // dataset index of the anchor nearest by text
};

struct Consistency {
  double value = 0.0;
  std::size_t anchor = 0;  // dataset index
};

Partition partition(std::span<const double> posteriors, const PartitionConfig& cfg);

// Anchor features gathered once; consistency queries then scan this table.
// Features may be raw inputs or encoder outputs; only within-modality
// distances are taken.
class AnchorFeatures {
 public:
  AnchorFeatures(const AnchorSet& anchors, const Eigen::Ref<const Eigen::MatrixXd>& images,
                 const Eigen::Ref<const Eigen::MatrixXd>& texts);
  AnchorFeatures(const AnchorSet& anchors, const FeatureTable& table)
      : AnchorFeatures(anchors, table.images, table.texts) {}
  AnchorFeatures(const AnchorSet& anchors, const PairDataset& dataset)
      : AnchorFeatures(anchors, FeatureTable::from(dataset)) {}

  const AnchorSet& anchors() const { return anchors_; }
  const Eigen::MatrixXd& images() const { return images_; }
  const Eigen::MatrixXd& texts() const { return texts_; }

 private:
  AnchorSet anchors_;
  Eigen::MatrixXd images_;  // one column per anchor
  Eigen::MatrixXd texts_;
};

// D(I_n, I_a) / D(T_n, T_a) with a the anchor nearest by image.
Consistency i2t_consistency(const Eigen::Ref<const Eigen::VectorXd>& image,
                            const Eigen::Ref<const Eigen::VectorXd>& text,
                            const AnchorFeatures& anchors, double eps);
// D(T_n, T_a) / D(I_n, I_a) with a the anchor nearest by text.
Consistency t2i_consistency(const Eigen::Ref<const Eigen::VectorXd>& image,
                            const Eigen::Ref<const Eigen::VectorXd>& text,
                            const AnchorFeatures& anchors, double eps);

SoftLabelRecord bicro_label(std::size_t pair_id,
                            const Eigen::Ref<const Eigen::VectorXd>& image,
                            const Eigen::Ref<const Eigen::VectorXd>& text,
                            const AnchorFeatures& anchors, double eps);

// Dataset-level convenience: raw features of `dataset`.
Consistency i2t_consistency(const PairRecord& pair, const AnchorSet& anchors,
                            const PairDataset& dataset, double eps);
Consistency t2i_consistency(const PairRecord& pair, const AnchorSet& anchors,
                            const PairDataset& dataset, double eps);
SoftLabelRecord bicro_label(const PairRecord& pair, const AnchorSet& anchors,
                            const PairDataset& dataset, double eps);

// Ratio of two distances with the exact-duplicate convention.
double consistency_ratio(double numerator, double denominator, double eps);
// (min(c_i2t, 1) + min(c_t2i, 1)) / 2.
double combine_consistencies(double c_i2t, double c_t2i);

// Labels strictly below theta become 0; theta = 0 is the identity.
std::vector<SoftLabelRecord> apply_mismatch_threshold(std::vector<SoftLabelRecord> records,
                                                      double theta);
double apply_mismatch_threshold(double y_star, double theta);

// Labels for every noisy index of `part` in the given feature space.
std::vector<SoftLabelRecord> rectify_all(const Partition& part,
                                         const Eigen::Ref<const Eigen::MatrixXd>& images,
                                         const Eigen::Ref<const Eigen::MatrixXd>& texts,
                                         const PartitionConfig& cfg, bool mismatch_threshold);

void write_soft_label_table(std::ostream& out, std::span<const SoftLabelRecord> records);

}  // namespace bicro
