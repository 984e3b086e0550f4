#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "bicro/embed.hpp"
#include "bicro/eval.hpp"
#include "bicro/match_model.hpp"
#include "bicro/mixture.hpp"
#include "bicro/rectify.hpp"

namespace bicro {

enum class Variant { kBicro, kBicroStar, kBaseline };

std::string_view to_string(Variant v);
std::string_view to_string(MixtureKind k);

struct TrainConfig {
  LossConfig loss;                                           // alpha, m
  PartitionConfig partition = PartitionConfig::fraction(0.1);  // q or delta, theta
  double epsilon = 0.3;  // warmup selection ratio
  int warmup_epochs = 10;
  int total_epochs = 40;
  int clean_only_epochs = 20;
  std::size_t batch_size = 100;
  double lr = 0.5;
  std::uint64_t seed = 0;
  std::size_t shared_dim = 32;
  Variant variant = Variant::kBicro;
  MixtureKind mixture_kind = MixtureKind::kBeta;
  bool use_co_teaching = true;
  bool use_soft_labels = true;
  bool use_warmup = true;
  EmOptions em;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints

  bool bicro_star() const { return variant == Variant::kBicroStar; }
  void validate() const;
};

struct TrainerState {
  std::array<MatchingModel, 2> models;  // A, B
  int epoch = 0;
  std::array<std::mt19937_64, 2> rngs;  // per-model data orderings
  std::array<std::optional<Partition>, 2> last_partition;
};

struct ModelEpochStats {
  double mean_loss = 0.0;  // mean per-sample hard loss at epoch start
  double train_loss = 0.0;  // mean minibatch objective over the epoch
  std::size_t anchor_count = 0;
  FitDiagnostics fit;
  bool fit_failed = false;  // partition fell back (previous epoch or loss ranking)
  std::optional<AnchorQuality> anchors;  // vs ground truth, when present
  std::size_t labels_estimated = 0;
  std::size_t labels_zeroed = 0;  // by the mismatch threshold
  double mean_label = 0.0;
  std::optional<SoftLabelQuality> label_quality;
};

struct EpochReport {
  int epoch = 0;
  bool clean_only = false;
  std::array<ModelEpochStats, 2> models;
};

// Invoked before every gradient step: model index, batch, labels, weights.
using StepHook = std::function<void(std::size_t, std::span<const std::size_t>,
                                    std::span<const double>, std::span<const double>)>;

struct PartitionResult {
  Partition partition;
  std::vector<double> losses;  // per-sample losses the mixture was fitted on
  std::vector<double> posteriors;
  FitDiagnostics fit;
  bool fit_failed = false;
};

TrainerState init_state(const PairDataset& dataset, const TrainConfig& cfg);

// Positions of the ceil(eps * n) smallest losses (stable), ascending.
std::vector<std::size_t> select_small_loss(std::span<const double> losses, double epsilon);

// Small-loss warmup: per batch keep the ceil(eps * B) lowest hard losses.
void warmup(TrainerState& state, const PairDataset& dataset, const TrainConfig& cfg,
            const StepHook& hook = {});

// Anchors/noisy split for both models at the state's epoch. With
// co-teaching, model k's split comes from the other model's losses.
std::array<PartitionResult, 2> compute_partitions(const TrainerState& state,
                                                  const PairDataset& dataset,
                                                  const TrainConfig& cfg);

EpochReport train_epoch(TrainerState& state, const PairDataset& dataset, const TrainConfig& cfg,
                        const StepHook& hook = {});

struct TrainResult {
  TrainerState state;
  std::vector<EpochReport> reports;

  const MatchingModel& model_a() const { return state.models[0]; }
  const MatchingModel& model_b() const { return state.models[1]; }
};

using EpochCallback = std::function<void(const TrainerState&, const EpochReport&)>;

TrainResult train(const PairDataset& dataset, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// Mean of the two models' image-text similarity matrices.
Eigen::MatrixXd infer_similarity(const MatchingModel& model_a, const MatchingModel& model_b,
                                 const Eigen::Ref<const Eigen::MatrixXd>& images,
                                 const Eigen::Ref<const Eigen::MatrixXd>& texts);

struct RectificationSnapshot {
  PartitionResult partition;
  std::vector<SoftLabelRecord> labels;  // noisy pairs, in model A's feature space
};

// Model A's view of the dataset after training: partition and soft labels.
RectificationSnapshot rectification_snapshot(const TrainerState& state,
                                             const PairDataset& dataset,
                                             const TrainConfig& cfg);

}  // namespace bicro
