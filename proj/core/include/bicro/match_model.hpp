#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bicro/embed.hpp"

namespace bicro {

struct Encoder {
  Eigen::MatrixXd weight;  // shared_dim x input_dim
  Eigen::VectorXd bias;    // shared_dim

  std::size_t input_dim() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(weight.rows()); }

  friend bool operator==(const Encoder& a, const Encoder& b) {
    return a.weight.rows() == b.weight.rows() && a.weight.cols() == b.weight.cols() &&
           a.bias.size() == b.bias.size() && a.weight == b.weight && a.bias == b.bias;
  }
};

// f encodes images, g encodes texts; S is the dot product of unit encodings.
struct MatchingModel {
  Encoder f;
  Encoder g;

  void validate() const;
  friend bool operator==(const MatchingModel&, const MatchingModel&) = default;
};

struct LossConfig {
  double alpha = 0.2;  // margin
  double m = 10.0;     // soft-margin curvature, > 1

  void validate() const;
};

// Gaussian init scaled by 1/sqrt(input_dim), zero bias.
MatchingModel init_model(std::size_t image_dim, std::size_t text_dim, std::size_t shared_dim,
                         std::uint64_t seed);

// Affine map followed by L2 normalization.
std::pair<Eigen::VectorXd, Eigen::VectorXd> encode(const MatchingModel& model,
                                                   const PairRecord& pair);
// Column-wise encoding of a feature matrix.
Eigen::MatrixXd encode_images(const MatchingModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x);
Eigen::MatrixXd encode_texts(const MatchingModel& model, const Eigen::Ref<const Eigen::MatrixXd>& t);

// Entry (i, j) = S(I_i, T_j) for the batch members, in batch order.
Eigen::MatrixXd similarity_matrix(const MatchingModel& model, const PairDataset& dataset,
                                  std::span<const std::size_t> batch);
Eigen::MatrixXd similarity_matrix(const MatchingModel& model, const FeatureTable& table,
                                  std::span<const std::size_t> batch);

struct HardNegatives {
  std::size_t text = 0;   // argmax_{j != i} S(I_i, T_j)
  std::size_t image = 0;  // argmax_{j != i} S(I_j, T_i)
};

HardNegatives hard_negatives(const Eigen::Ref<const Eigen::MatrixXd>& sim, std::size_t i);

// (m^y - 1) / (m - 1) * alpha.
double soft_margin(double y_star, const LossConfig& cfg);
double loss_hard(const Eigen::Ref<const Eigen::MatrixXd>& sim, std::size_t i,
                 const LossConfig& cfg);
double loss_soft(const Eigen::Ref<const Eigen::MatrixXd>& sim, std::size_t i, double y_star,
                 const LossConfig& cfg);

// Shuffles 0..n-1 with `seed` and cuts into batches; a trailing batch of
// size 1 is merged into its predecessor.
std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> order,
                                                   std::size_t batch_size);
std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed);

// Hard loss of every pair with negatives mined inside its batch; result is
// indexed by dataset position.
std::vector<double> per_sample_losses(const MatchingModel& model, const FeatureTable& table,
                                      const LossConfig& cfg, std::size_t batch_size,
                                      std::uint64_t seed);
std::vector<double> per_sample_losses(const MatchingModel& model, const PairDataset& dataset,
                                      const LossConfig& cfg, std::size_t batch_size,
                                      std::uint64_t seed);

struct ModelGradient {
  MatchingModel grad;  // same shapes as the model
  double loss = 0.0;
};

// Gradient of sum_i weights[i] * loss_soft(i) over one batch. Hard negatives
// are held fixed; a hinge at exactly zero contributes nothing.
ModelGradient loss_gradient(const MatchingModel& model, const FeatureTable& table,
                            std::span<const std::size_t> batch, std::span<const double> y_stars,
                            std::span<const double> weights, const LossConfig& cfg);

// One SGD step on the mean soft loss of the batch. Returns the pre-step loss.
double grad_step(MatchingModel& model, const FeatureTable& table,
                 std::span<const std::size_t> batch, std::span<const double> y_stars,
                 const LossConfig& cfg, double lr);
// Weighted variant used by small-loss selection.
double grad_step(MatchingModel& model, const FeatureTable& table,
                 std::span<const std::size_t> batch, std::span<const double> y_stars,
                 std::span<const double> weights, const LossConfig& cfg, double lr);

// Binary checkpoint: "BICROMM1", u32 version, u32 shared/image/text dims,
// then f.weight, f.bias, g.weight, g.bias as row-major little-endian f64.
void save_checkpoint(const MatchingModel& model, const std::filesystem::path& path);
MatchingModel load_checkpoint(const std::filesystem::path& path);

}  // namespace bicro
