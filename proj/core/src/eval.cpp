#include "bicro/eval.hpp"

#include <cmath>

#include <fmt/format.h>

#include "bicro/error.hpp"

namespace bicro {

double recall_at_k(const Eigen::Ref<const Eigen::MatrixXd>& sim, std::size_t k,
                   Direction direction) {
  const auto n = static_cast<std::size_t>(sim.rows());
  if (sim.rows() != sim.cols() || n == 0) {
    throw Error(ErrorKind::kDomain, "recall needs a non-empty square similarity matrix");
  }
  if (k < 1 || k > n) {
    throw Error(ErrorKind::kDomain, fmt::format("k = {} outside [1, {}]", k, n));
  }
  std::size_t hits = 0;
  for (Eigen::Index q = 0; q < sim.rows(); ++q) {
    const double truth = sim(q, q);
    std::size_t rank = 0;  // competitors scoring at least as high
    for (Eigen::Index c = 0; c < sim.cols(); ++c) {
      if (c == q) continue;
      const double score = direction == Direction::kImageToText ? sim(q, c) : sim(c, q);
      if (score >= truth) ++rank;
    }
    if (rank < k) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(n);
}

double sum_score(const RetrievalReport& r) {
  return r.i2t_r1 + r.i2t_r5 + r.i2t_r10 + r.t2i_r1 + r.t2i_r5 + r.t2i_r10;
}

RetrievalReport retrieval_report(const Eigen::Ref<const Eigen::MatrixXd>& sim) {
  const auto n = static_cast<std::size_t>(sim.rows());
  auto at = [&](std::size_t k, Direction d) { return recall_at_k(sim, std::min(k, n), d); };
  RetrievalReport r;
  r.i2t_r1 = at(1, Direction::kImageToText);
  r.i2t_r5 = at(5, Direction::kImageToText);
  r.i2t_r10 = at(10, Direction::kImageToText);
  r.t2i_r1 = at(1, Direction::kTextToImage);
  r.t2i_r5 = at(5, Direction::kTextToImage);
  r.t2i_r10 = at(10, Direction::kTextToImage);
  r.sum = sum_score(r);
  if (!(r.i2t_r1 <= r.i2t_r5 && r.i2t_r5 <= r.i2t_r10 && r.t2i_r1 <= r.t2i_r5 &&
        r.t2i_r5 <= r.t2i_r10)) {
    throw Error(ErrorKind::kPrecondition, "recall is not monotone in k");
  }
  return r;
}

AnchorQuality anchor_quality(const AnchorSet& anchors, const std::vector<bool>& truth) {
  if (anchors.empty()) {
    throw Error(ErrorKind::kEmptyAnchorSet, "anchor precision is undefined for no anchors");
  }
  std::size_t hits = 0;
  for (std::size_t i : anchors.indices) {
    if (i >= truth.size()) {
      throw Error(ErrorKind::kPrecondition, fmt::format("anchor {} has no ground truth", i));
    }
    if (truth[i]) ++hits;
  }
  std::size_t positives = 0;
  for (bool t : truth) positives += t ? 1 : 0;
  AnchorQuality q;
  q.precision = static_cast<double>(hits) / static_cast<double>(anchors.size());
  q.recall = positives == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(positives);
  return q;
}

SoftLabelQuality soft_label_quality(std::span<const SoftLabelRecord> records,
                                    const std::vector<bool>& truth) {
  double sum1 = 0.0, sum0 = 0.0;
  std::size_t n1 = 0, n0 = 0;
  for (const auto& r : records) {
    if (r.pair_id >= truth.size()) {
      throw Error(ErrorKind::kPrecondition,
                  fmt::format("record {} has no ground truth", r.pair_id));
    }
    if (truth[r.pair_id]) {
      sum1 += r.y_star;
      ++n1;
    } else {
      sum0 += r.y_star;
      ++n0;
    }
  }
  if (n1 == 0 || n0 == 0) {
    throw Error(ErrorKind::kDomain,
                "point-biserial correlation needs both matched and mismatched pairs");
  }
  const double n = static_cast<double>(n1 + n0);
  SoftLabelQuality q;
  q.mean_y_true = sum1 / static_cast<double>(n1);
  q.mean_y_mismatch = sum0 / static_cast<double>(n0);
  const double mean = (sum1 + sum0) / n;
  double ss = 0.0;
  for (const auto& r : records) ss += (r.y_star - mean) * (r.y_star - mean);
  const double sigma = std::sqrt(ss / n);
  const double p = static_cast<double>(n1) / n;
  q.point_biserial =
      sigma == 0.0 ? 0.0 : (q.mean_y_true - q.mean_y_mismatch) * std::sqrt(p * (1.0 - p)) / sigma;
  return q;
}

}  // namespace bicro
