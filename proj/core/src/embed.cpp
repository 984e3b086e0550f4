#include "bicro/embed.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>

#include <fmt/format.h>

#include "bicro/error.hpp"

namespace bicro {

bool PairDataset::has_truth() const {
  return !records.empty() &&
         std::all_of(records.begin(), records.end(),
                     [](const PairRecord& r) { return r.true_match.has_value(); });
}

std::vector<bool> PairDataset::truth_mask() const {
  std::vector<bool> mask;
  mask.reserve(records.size());
  for (const auto& r : records) {
    if (!r.true_match) {
      throw Error(ErrorKind::kPrecondition,
                  fmt::format("record {} has no ground-truth match flag", r.id));
    }
    mask.push_back(*r.true_match);
  }
  return mask;
}

void PairDataset::validate() const {
  if (image_dim == 0 || text_dim == 0) {
    throw Error(ErrorKind::kDimensionMismatch, "dataset dimensions must be positive");
  }
  std::unordered_set<std::size_t> ids;
  ids.reserve(records.size());
  for (const auto& r : records) {
    if (static_cast<std::size_t>(r.image.size()) != image_dim ||
        static_cast<std::size_t>(r.text.size()) != text_dim) {
      throw Error(ErrorKind::kDimensionMismatch,
                  fmt::format("record {} has dims ({}, {}), dataset declares ({}, {})",
                              r.id, r.image.size(), r.text.size(), image_dim, text_dim));
    }
    if (r.label != 0 && r.label != 1) {
      throw Error(ErrorKind::kPrecondition,
                  fmt::format("record {} has label {}, expected 0 or 1", r.id, r.label));
    }
    if (!r.image.allFinite() || !r.text.allFinite()) {
      throw Error(ErrorKind::kDegenerateInput,
                  fmt::format("record {} has non-finite features", r.id));
    }
    if (!ids.insert(r.id).second) {
      throw Error(ErrorKind::kPrecondition, fmt::format("duplicate record id {}", r.id));
    }
  }
}

FeatureTable FeatureTable::from(const PairDataset& dataset) {
  FeatureTable table;
  const auto n = static_cast<Eigen::Index>(dataset.size());
  table.images.resize(static_cast<Eigen::Index>(dataset.image_dim), n);
  table.texts.resize(static_cast<Eigen::Index>(dataset.text_dim), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = dataset.records[static_cast<std::size_t>(i)];
    table.images.col(i) = r.image;
    table.texts.col(i) = r.text;
  }
  return table;
}

double cosine_similarity(const Eigen::Ref<const Eigen::VectorXd>& a,
                         const Eigen::Ref<const Eigen::VectorXd>& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::kDimensionMismatch,
                fmt::format("cosine of vectors with dims {} and {}", a.size(), b.size()));
  }
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) {
    throw Error(ErrorKind::kDegenerateInput, "cosine similarity of a zero-norm vector");
  }
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double feature_distance(const Eigen::Ref<const Eigen::VectorXd>& a,
                        const Eigen::Ref<const Eigen::VectorXd>& b) {
  return std::clamp(1.0 - cosine_similarity(a, b), 0.0, 2.0);
}

std::size_t nearest_neighbor(const FeatureVector& query,
                             std::span<const FeatureVector> pool) {
  if (pool.empty()) {
    throw Error(ErrorKind::kEmptyAnchorSet, "nearest-neighbor search over an empty pool");
  }
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const double d = feature_distance(query, pool[i]);
    if (d < best_dist) {
      best_dist = d;
      best = i;
    }
  }
  return best;
}

std::size_t nearest_column(const Eigen::Ref<const Eigen::VectorXd>& query,
                           const Eigen::Ref<const Eigen::MatrixXd>& pool) {
  if (pool.cols() == 0) {
    throw Error(ErrorKind::kEmptyAnchorSet, "nearest-neighbor search over an empty pool");
  }
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < pool.cols(); ++i) {
    const double d = feature_distance(query, pool.col(i));
    if (d < best_dist) {
      best_dist = d;
      best = static_cast<std::size_t>(i);
    }
  }
  return best;
}

}  // namespace bicro
