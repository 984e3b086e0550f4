#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "bicro/rectify.hpp"

namespace bicro {

enum class Direction { kImageToText, kTextToImage };

// Recalls are percentages in [0, 100].
struct RetrievalReport {
  double i2t_r1 = 0.0, i2t_r5 = 0.0, i2t_r10 = 0.0;
  double t2i_r1 = 0.0, t2i_r5 = 0.0, t2i_r10 = 0.0;
  double sum = 0.0;

  double mean_recall() const { return sum / 6.0; }
};

struct AnchorQuality {
  double precision = 0.0;
  double recall = 0.0;
};

struct RectifyReport {
  double anchor_precision = 0.0;
  double anchor_recall = 0.0;
  double mean_y_true = 0.0;      // over true matches
  double mean_y_mismatch = 0.0;  // over mismatches
  double point_biserial = 0.0;
};

struct SoftLabelQuality {
  double mean_y_true = 0.0;
  double mean_y_mismatch = 0.0;
  double point_biserial = 0.0;
};

// Ground truth is the diagonal. A query's rank counts every competitor whose
// score is >= the true score, so ties are resolved pessimistically.
double recall_at_k(const Eigen::Ref<const Eigen::MatrixXd>& sim, std::size_t k,
                   Direction direction);

// Builds the six-recall report; asserts R@1 <= R@5 <= R@10 per direction.
RetrievalReport retrieval_report(const Eigen::Ref<const Eigen::MatrixXd>& sim);

double sum_score(const RetrievalReport& report);

AnchorQuality anchor_quality(const AnchorSet& anchors, const std::vector<bool>& truth);

// Group means of y* and r_pb = (mu1 - mu0) * sqrt(p (1 - p)) / sigma.
SoftLabelQuality soft_label_quality(std::span<const SoftLabelRecord> records,
                                    const std::vector<bool>& truth);

}  // namespace bicro
