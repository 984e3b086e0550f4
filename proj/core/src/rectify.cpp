#include "bicro/rectify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "bicro/error.hpp"

namespace bicro {
namespace {

Eigen::MatrixXd normalized_columns(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const double n = out.col(j).norm();
    if (n == 0.0) {
      throw Error(ErrorKind::kDegenerateInput, "anchor feature with zero norm");
    }
    out.col(j) /= n;
  }
  return out;
}

// Index of the column with the largest cosine to `query`; ties go low.
std::size_t nearest_normalized(const Eigen::Ref<const Eigen::VectorXd>& query,
                               const Eigen::MatrixXd& unit_columns) {
  if (unit_columns.cols() == 0) {
    throw Error(ErrorKind::kEmptyAnchorSet, "no anchors to compare against");
  }
  const double qn = query.norm();
  if (qn == 0.0) {
    throw Error(ErrorKind::kDegenerateInput, "query feature with zero norm");
  }
  const Eigen::VectorXd dots = unit_columns.transpose() * query;
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < dots.size(); ++j) {
    const double d = std::clamp(1.0 - dots[j] / qn, 0.0, 2.0);
    if (d < best_dist) {
      best_dist = d;
      best = static_cast<std::size_t>(j);
    }
  }
  return best;
}

}  // namespace

bool AnchorSet::contains(std::size_t i) const {
  return std::binary_search(indices.begin(), indices.end(), i);
}

void PartitionConfig::validate() const {
  if (delta.has_value() == anchor_fraction.has_value()) {
    throw Error(ErrorKind::kConfig, "exactly one of delta and anchor_fraction must be set");
  }
  if (delta && !(*delta > 0.0 && *delta < 1.0)) {
    throw Error(ErrorKind::kConfig, fmt::format("delta = {} outside (0, 1)", *delta));
  }
  if (anchor_fraction && !(*anchor_fraction > 0.0 && *anchor_fraction <= 1.0)) {
    throw Error(ErrorKind::kConfig,
                fmt::format("anchor_fraction = {} outside (0, 1]", *anchor_fraction));
  }
  if (!(theta >= 0.0 && theta < 1.0)) {
    throw Error(ErrorKind::kConfig, fmt::format("theta = {} outside [0, 1)", theta));
  }
  if (!(epsilon_d > 0.0)) {
    throw Error(ErrorKind::kConfig, "epsilon_d must be positive");
  }
}

Partition partition(std::span<const double> posteriors, const PartitionConfig& cfg) {
  cfg.validate();
  const std::size_t n = posteriors.size();
  std::vector<bool> is_anchor(n, false);
  if (cfg.delta) {
    for (std::size_t i = 0; i < n; ++i) is_anchor[i] = posteriors[i] > *cfg.delta;
  } else {
    const auto k = std::min<std::size_t>(
        n, static_cast<std::size_t>(std::ceil(*cfg.anchor_fraction * static_cast<double>(n) - 1e-9)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return posteriors[a] > posteriors[b];
    });
    for (std::size_t r = 0; r < k; ++r) is_anchor[order[r]] = true;
  }
  Partition part;
  for (std::size_t i = 0; i < n; ++i) {
    (is_anchor[i] ? part.anchors.indices : part.noisy).push_back(i);
  }
  if (part.anchors.empty()) {
    throw Error(ErrorKind::kEmptyAnchorSet,
                fmt::format("no pair passes the anchor rule among {} pairs", n));
  }
  return part;
}

AnchorFeatures::AnchorFeatures(const AnchorSet& anchors,
                               const Eigen::Ref<const Eigen::MatrixXd>& images,
                               const Eigen::Ref<const Eigen::MatrixXd>& texts)
    : anchors_(anchors) {
  if (anchors.empty()) {
    throw Error(ErrorKind::kEmptyAnchorSet, "anchor set is empty");
  }
  Eigen::MatrixXd img(images.rows(), static_cast<Eigen::Index>(anchors.size()));
  Eigen::MatrixXd txt(texts.rows(), static_cast<Eigen::Index>(anchors.size()));
  for (std::size_t j = 0; j < anchors.size(); ++j) {
    const auto idx = static_cast<Eigen::Index>(anchors.indices[j]);
    if (idx >= images.cols() || idx >= texts.cols()) {
      throw Error(ErrorKind::kPrecondition,
                  fmt::format("anchor index {} outside the feature table", idx));
    }
    img.col(static_cast<Eigen::Index>(j)) = images.col(idx);
    txt.col(static_cast<Eigen::Index>(j)) = texts.col(idx);
  }
  images_ = normalized_columns(img);
  texts_ = normalized_columns(txt);
}

double consistency_ratio(double numerator, double denominator, double eps) {
  if (numerator < eps && denominator < eps) return 1.0;
  return numerator / std::max(denominator, eps);
}

double combine_consistencies(double c_i2t, double c_t2i) {
  return 0.5 * (std::min(c_i2t, 1.0) + std::min(c_t2i, 1.0));
}

Consistency i2t_consistency(const Eigen::Ref<const Eigen::VectorXd>& image,
                            const Eigen::Ref<const Eigen::VectorXd>& text,
                            const AnchorFeatures& anchors, double eps) {
  const std::size_t j = nearest_normalized(image, anchors.images());
  const auto col = static_cast<Eigen::Index>(j);
  const double d_img = feature_distance(image, anchors.images().col(col));
  const double d_txt = feature_distance(text, anchors.texts().col(col));
  return {consistency_ratio(d_img, d_txt, eps), anchors.anchors().indices[j]};
}

Consistency t2i_consistency(const Eigen::Ref<const Eigen::VectorXd>& image,
                            const Eigen::Ref<const Eigen::VectorXd>& text,
                            const AnchorFeatures& anchors, double eps) {
  const std::size_t j = nearest_normalized(text, anchors.texts());
  const auto col = static_cast<Eigen::Index>(j);
  const double d_txt = feature_distance(text, anchors.texts().col(col));
  const double d_img = feature_distance(image, anchors.images().col(col));
  return {consistency_ratio(d_txt, d_img, eps), anchors.anchors().indices[j]};
}

SoftLabelRecord bicro_label(std::size_t pair_id, const Eigen::Ref<const Eigen::VectorXd>& image,
                            const Eigen::Ref<const Eigen::VectorXd>& text,
                            const AnchorFeatures& anchors, double eps) {
  const auto i2t = i2t_consistency(image, text, anchors, eps);
  const auto t2i = t2i_consistency(image, text, anchors, eps);
  SoftLabelRecord rec;
  rec.pair_id = pair_id;
  rec.c_i2t = i2t.value;
  rec.c_t2i = t2i.value;
  rec.image_anchor = i2t.anchor;
  rec.text_anchor = t2i.anchor;
  rec.y_star = combine_consistencies(i2t.value, t2i.value);
  return rec;
}

Consistency i2t_consistency(const PairRecord& pair, const AnchorSet& anchors,
                            const PairDataset& dataset, double eps) {
  return i2t_consistency(pair.image, pair.text, AnchorFeatures(anchors, dataset), eps);
}

Consistency t2i_consistency(const PairRecord& pair, const AnchorSet& anchors,
                            const PairDataset& dataset, double eps) {
  return t2i_consistency(pair.image, pair.text, AnchorFeatures(anchors, dataset), eps);
}

SoftLabelRecord bicro_label(const PairRecord& pair, const AnchorSet& anchors,
                            const PairDataset& dataset, double eps) {
  return bicro_label(pair.id, pair.image, pair.text, AnchorFeatures(anchors, dataset), eps);
}

double apply_mismatch_threshold(double y_star, double theta) {
  return y_star < theta ? 0.0 : y_star;
}

std::vector<SoftLabelRecord> apply_mismatch_threshold(std::vector<SoftLabelRecord> records,
                                                      double theta) {
  for (auto& r : records) r.y_star = apply_mismatch_threshold(r.y_star, theta);
  return records;
}

std::vector<SoftLabelRecord> rectify_all(const Partition& part,
                                         const Eigen::Ref<const Eigen::MatrixXd>& images,
                                         const Eigen::Ref<const Eigen::MatrixXd>& texts,
                                         const PartitionConfig& cfg, bool mismatch_threshold) {
  const AnchorFeatures anchors(part.anchors, images, texts);
  std::vector<SoftLabelRecord> out;
  out.reserve(part.noisy.size());
  for (std::size_t i : part.noisy) {
    const auto col = static_cast<Eigen::Index>(i);
    out.push_back(bicro_label(i, images.col(col), texts.col(col), anchors, cfg.epsilon_d));
  }
  if (mismatch_threshold) out = apply_mismatch_threshold(std::move(out), cfg.theta);
  return out;
}

void write_soft_label_table(std::ostream& out, std::span<const SoftLabelRecord> records) {
  fmt::print(out, "pair_id,y_star,c_i2t,c_t2i,image_anchor,text_anchor\n");
  for (const auto& r : records) {
    fmt::print(out, "{},{:.9g},{:.9g},{:.9g},{},{}\n", r.pair_id, r.y_star, r.c_i2t, r.c_t2i,
               r.image_anchor, r.text_anchor);
  }
}

}  // namespace bicro
