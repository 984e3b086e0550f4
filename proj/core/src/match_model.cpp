#include "bicro/match_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "binary_io.hpp"
#include "bicro/error.hpp"

namespace bicro {
namespace {

constexpr std::string_view kCheckpointMagic = "BICROMM1";
constexpr std::uint32_t kCheckpointVersion = 1;

// Column-normalizes in place and returns the pre-normalization norms.
Eigen::VectorXd normalize_columns(Eigen::MatrixXd& m) {
  Eigen::VectorXd norms(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    norms[j] = m.col(j).norm();
    if (!(norms[j] > 0.0) || !std::isfinite(norms[j])) {
      throw Error(ErrorKind::kDegenerateInput,
                  fmt::format("encoder output {} has degenerate norm {}", j, norms[j]));
    }
    m.col(j) /= norms[j];
  }
  return norms;
}

Eigen::MatrixXd affine(const Encoder& e, const Eigen::Ref<const Eigen::MatrixXd>& x) {
  if (static_cast<std::size_t>(x.rows()) != e.input_dim()) {
    throw Error(ErrorKind::kDimensionMismatch,
                fmt::format("encoder expects input dim {}, got {}", e.input_dim(), x.rows()));
  }
  Eigen::MatrixXd a = e.weight * x;
  a.colwise() += e.bias;
  return a;
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& m, std::span<const std::size_t> cols) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    out.col(static_cast<Eigen::Index>(j)) = m.col(static_cast<Eigen::Index>(cols[j]));
  }
  return out;
}

double hinge(double x) { return x > 0.0 ? x : 0.0; }

void check_batch(std::size_t batch, std::size_t y, std::size_t w) {
  if (batch < 2) {
    throw Error(ErrorKind::kPrecondition, "a batch needs at least two pairs for negatives");
  }
  if (y != batch || w != batch) {
    throw Error(ErrorKind::kPrecondition,
                fmt::format("batch of {} pairs with {} labels and {} weights", batch, y, w));
  }
}

void write_encoder(std::ostream& out, const Encoder& e) {
  for (Eigen::Index r = 0; r < e.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < e.weight.cols(); ++c) detail::write_le(out, e.weight(r, c));
  }
  for (Eigen::Index r = 0; r < e.bias.size(); ++r) detail::write_le(out, e.bias[r]);
}

Encoder read_encoder(detail::LeReader& in, std::uint32_t rows, std::uint32_t cols,
                     std::string_view name) {
  Encoder e;
  e.weight.resize(rows, cols);
  e.bias.resize(rows);
  for (Eigen::Index r = 0; r < e.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < e.weight.cols(); ++c) {
      e.weight(r, c) = in.read<double>(fmt::format("{}.weight", name));
    }
  }
  for (Eigen::Index r = 0; r < e.bias.size(); ++r) {
    e.bias[r] = in.read<double>(fmt::format("{}.bias", name));
  }
  return e;
}

}  // namespace

void MatchingModel::validate() const {
  if (f.output_dim() != g.output_dim() || f.output_dim() == 0) {
    throw Error(ErrorKind::kDimensionMismatch,
                fmt::format("encoder output dims differ: {} vs {}", f.output_dim(),
                            g.output_dim()));
  }
  if (static_cast<std::size_t>(f.bias.size()) != f.output_dim() ||
      static_cast<std::size_t>(g.bias.size()) != g.output_dim()) {
    throw Error(ErrorKind::kDimensionMismatch, "bias length does not match encoder output");
  }
  if (!f.weight.allFinite() || !f.bias.allFinite() || !g.weight.allFinite() ||
      !g.bias.allFinite()) {
    throw Error(ErrorKind::kTrainingDivergence, "model has non-finite parameters");
  }
}

void LossConfig::validate() const {
  if (!(alpha > 0.0)) throw Error(ErrorKind::kConfig, fmt::format("alpha = {} must be > 0", alpha));
  if (!(m > 1.0)) throw Error(ErrorKind::kConfig, fmt::format("m = {} must be > 1", m));
}

MatchingModel init_model(std::size_t image_dim, std::size_t text_dim, std::size_t shared_dim,
                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto make = [&](std::size_t in) {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    Encoder e;
    e.weight.resize(static_cast<Eigen::Index>(shared_dim), static_cast<Eigen::Index>(in));
    for (Eigen::Index r = 0; r < e.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < e.weight.cols(); ++c) e.weight(r, c) = normal(rng);
    }
    e.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(shared_dim));
    return e;
  };
  MatchingModel model;
  model.f = make(image_dim);
  model.g = make(text_dim);
  return model;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> encode(const MatchingModel& model,
                                                   const PairRecord& pair) {
  Eigen::MatrixXd u = affine(model.f, pair.image);
  Eigen::MatrixXd v = affine(model.g, pair.text);
  normalize_columns(u);
  normalize_columns(v);
  return {u.col(0), v.col(0)};
}

Eigen::MatrixXd encode_images(const MatchingModel& model,
                              const Eigen::Ref<const Eigen::MatrixXd>& x) {
  Eigen::MatrixXd u = affine(model.f, x);
  normalize_columns(u);
  return u;
}

Eigen::MatrixXd encode_texts(const MatchingModel& model,
                             const Eigen::Ref<const Eigen::MatrixXd>& t) {
  Eigen::MatrixXd v = affine(model.g, t);
  normalize_columns(v);
  return v;
}

Eigen::MatrixXd similarity_matrix(const MatchingModel& model, const FeatureTable& table,
                                  std::span<const std::size_t> batch) {
  if (batch.size() < 2) {
    throw Error(ErrorKind::kPrecondition, "similarity matrix needs a batch of at least 2");
  }
  const Eigen::MatrixXd u = encode_images(model, gather(table.images, batch));
  const Eigen::MatrixXd v = encode_texts(model, gather(table.texts, batch));
  return u.transpose() * v;
}

Eigen::MatrixXd similarity_matrix(const MatchingModel& model, const PairDataset& dataset,
                                  std::span<const std::size_t> batch) {
  return similarity_matrix(model, FeatureTable::from(dataset), batch);
}

HardNegatives hard_negatives(const Eigen::Ref<const Eigen::MatrixXd>& sim, std::size_t i) {
  const auto n = static_cast<std::size_t>(sim.rows());
  if (n < 2 || sim.cols() != sim.rows() || i >= n) {
    throw Error(ErrorKind::kPrecondition, "hard negatives need a square batch of at least 2");
  }
  const auto ii = static_cast<Eigen::Index>(i);
  HardNegatives hn{i == 0 ? 1u : 0u, i == 0 ? 1u : 0u};
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) continue;
    const auto jj = static_cast<Eigen::Index>(j);
    if (sim(ii, jj) > sim(ii, static_cast<Eigen::Index>(hn.text))) hn.text = j;
    if (sim(jj, ii) > sim(static_cast<Eigen::Index>(hn.image), ii)) hn.image = j;
  }
  return hn;
}

double soft_margin(double y_star, const LossConfig& cfg) {
  if (y_star >= 1.0) return cfg.alpha;
  if (y_star <= 0.0) return 0.0;
  return (std::pow(cfg.m, y_star) - 1.0) / (cfg.m - 1.0) * cfg.alpha;
}

namespace {

double loss_with_margin(const Eigen::Ref<const Eigen::MatrixXd>& sim, std::size_t i,
                        double margin) {
  const auto hn = hard_negatives(sim, i);
  const auto ii = static_cast<Eigen::Index>(i);
  const double pos = sim(ii, ii);
  return hinge(margin - pos + sim(ii, static_cast<Eigen::Index>(hn.text))) +
         hinge(margin - pos + sim(static_cast<Eigen::Index>(hn.image), ii));
}

}  // namespace

double loss_hard(const Eigen::Ref<const Eigen::MatrixXd>& sim, std::size_t i,
                 const LossConfig& cfg) {
  return loss_with_margin(sim, i, cfg.alpha);
}

double loss_soft(const Eigen::Ref<const Eigen::MatrixXd>& sim, std::size_t i, double y_star,
                 const LossConfig& cfg) {
  return loss_with_margin(sim, i, soft_margin(y_star, cfg));
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> order,
                                                   std::size_t batch_size) {
  if (batch_size < 2) {
    throw Error(ErrorKind::kPrecondition, "batch_size must be at least 2");
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() >= 2 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

std::vector<double> per_sample_losses(const MatchingModel& model, const FeatureTable& table,
                                      const LossConfig& cfg, std::size_t batch_size,
                                      std::uint64_t seed) {
  const std::size_t n = table.size();
  if (n < 2) throw Error(ErrorKind::kPrecondition, "need at least two pairs for losses");
  const Eigen::MatrixXd u = encode_images(model, table.images);
  const Eigen::MatrixXd v = encode_texts(model, table.texts);
  const auto order = shuffled_order(n, seed);
  std::vector<double> losses(n, 0.0);
  for (const auto& batch : make_batches(order, batch_size)) {
    const Eigen::MatrixXd sim = gather(u, batch).transpose() * gather(v, batch);
    for (std::size_t k = 0; k < batch.size(); ++k) losses[batch[k]] = loss_hard(sim, k, cfg);
  }
  return losses;
}

std::vector<double> per_sample_losses(const MatchingModel& model, const PairDataset& dataset,
                                      const LossConfig& cfg, std::size_t batch_size,
                                      std::uint64_t seed) {
  return per_sample_losses(model, FeatureTable::from(dataset), cfg, batch_size, seed);
}

ModelGradient loss_gradient(const MatchingModel& model, const FeatureTable& table,
                            std::span<const std::size_t> batch, std::span<const double> y_stars,
                            std::span<const double> weights, const LossConfig& cfg) {
  check_batch(batch.size(), y_stars.size(), weights.size());
  const Eigen::MatrixXd x = gather(table.images, batch);
  const Eigen::MatrixXd t = gather(table.texts, batch);
  Eigen::MatrixXd u = affine(model.f, x);
  Eigen::MatrixXd v = affine(model.g, t);
  const Eigen::VectorXd u_norm = normalize_columns(u);
  const Eigen::VectorXd v_norm = normalize_columns(v);
  const Eigen::MatrixXd sim = u.transpose() * v;

  // dL/dS, accumulated hinge by hinge.
  const auto b = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXd ds = Eigen::MatrixXd::Zero(b, b);
  ModelGradient out;
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const double w = weights[k];
    if (w == 0.0) continue;
    const double margin = soft_margin(y_stars[k], cfg);
    const auto hn = hard_negatives(sim, k);
    const auto jt = static_cast<Eigen::Index>(hn.text);
    const auto ji = static_cast<Eigen::Index>(hn.image);
    const double h_text = margin - sim(i, i) + sim(i, jt);
    const double h_image = margin - sim(i, i) + sim(ji, i);
    if (h_text > 0.0) {
      out.loss += w * h_text;
      ds(i, i) -= w;
      ds(i, jt) += w;
    }
    if (h_image > 0.0) {
      out.loss += w * h_image;
      ds(i, i) -= w;
      ds(ji, i) += w;
    }
  }

  // Back through the dot products, then through the L2 normalization.
  Eigen::MatrixXd du = v * ds.transpose();
  Eigen::MatrixXd dv = u * ds;
  for (Eigen::Index j = 0; j < b; ++j) {
    du.col(j) = (du.col(j) - u.col(j) * u.col(j).dot(du.col(j))) / u_norm[j];
    dv.col(j) = (dv.col(j) - v.col(j) * v.col(j).dot(dv.col(j))) / v_norm[j];
  }
  out.grad.f.weight = du * x.transpose();
  out.grad.f.bias = du.rowwise().sum();
  out.grad.g.weight = dv * t.transpose();
  out.grad.g.bias = dv.rowwise().sum();
  return out;
}

double grad_step(MatchingModel& model, const FeatureTable& table,
                 std::span<const std::size_t> batch, std::span<const double> y_stars,
                 std::span<const double> weights, const LossConfig& cfg, double lr) {
  if (!(lr > 0.0)) throw Error(ErrorKind::kPrecondition, "learning rate must be positive");
  const auto g = loss_gradient(model, table, batch, y_stars, weights, cfg);
  if (!g.grad.f.weight.allFinite() || !g.grad.f.bias.allFinite() ||
      !g.grad.g.weight.allFinite() || !g.grad.g.bias.allFinite() || !std::isfinite(g.loss)) {
    throw Error(ErrorKind::kTrainingDivergence, "non-finite gradient");
  }
  if (g.loss == 0.0) return 0.0;
  model.f.weight -= lr * g.grad.f.weight;
  model.f.bias -= lr * g.grad.f.bias;
  model.g.weight -= lr * g.grad.g.weight;
  model.g.bias -= lr * g.grad.g.bias;
  return g.loss;
}

double grad_step(MatchingModel& model, const FeatureTable& table,
                 std::span<const std::size_t> batch, std::span<const double> y_stars,
                 const LossConfig& cfg, double lr) {
  const std::vector<double> weights(batch.size(), 1.0 / static_cast<double>(batch.size()));
  return grad_step(model, table, batch, y_stars, weights, cfg, lr);
}

void save_checkpoint(const MatchingModel& model, const std::filesystem::path& path) {
  model.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, fmt::format("cannot write checkpoint {}", path.string()));
  out.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
  detail::write_le<std::uint32_t>(out, kCheckpointVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.f.output_dim()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.f.input_dim()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.g.input_dim()));
  write_encoder(out, model.f);
  write_encoder(out, model.g);
  if (!out) throw Error(ErrorKind::kIo, fmt::format("failed writing {}", path.string()));
}

MatchingModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, fmt::format("cannot open checkpoint {}", path.string()));
  detail::LeReader reader(in, path.string());
  reader.expect_magic(kCheckpointMagic);
  const auto version = reader.read<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::kFormat,
                fmt::format("{}: unsupported checkpoint version {}", path.string(), version));
  }
  const auto shared = reader.read<std::uint32_t>("shared_dim");
  const auto image_dim = reader.read<std::uint32_t>("image_dim");
  const auto text_dim = reader.read<std::uint32_t>("text_dim");
  if (shared == 0 || image_dim == 0 || text_dim == 0) {
    throw Error(ErrorKind::kFormat, fmt::format("{}: zero dimension in header", path.string()));
  }
  MatchingModel model;
  model.f = read_encoder(reader, shared, image_dim, "f");
  model.g = read_encoder(reader, shared, text_dim, "g");
  reader.expect_end();
  return model;
}

}  // namespace bicro
