#include "bicro/co_train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "bicro/error.hpp"

namespace bicro {
namespace {

// splitmix64 finalizer; derives independent streams from the master seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kStreamModelA = 1;
constexpr std::uint64_t kStreamModelB = 2;
constexpr std::uint64_t kStreamOrderA = 3;
constexpr std::uint64_t kStreamOrderB = 4;
constexpr std::uint64_t kStreamScan = 1000;

// Loss scans use one fixed batching so epochs are comparable.
std::uint64_t scan_seed(const TrainConfig& cfg, int /*epoch*/) {
  return derive_seed(cfg.seed, kStreamScan);
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

std::vector<std::size_t> shuffled(std::vector<std::size_t> v, std::mt19937_64& rng) {
  std::shuffle(v.begin(), v.end(), rng);
  return v;
}

double mean_of(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// Trains on batches of `members` with labels from `label_of`; returns the
// mean batch objective.
template <typename LabelFn>
double run_batches(MatchingModel& model, std::size_t k, const FeatureTable& table,
                   const std::vector<std::size_t>& members, const TrainConfig& cfg,
                   std::mt19937_64& rng, const StepHook& hook, LabelFn&& label_of) {
  if (members.size() < 2) return 0.0;
  const auto order = shuffled(members, rng);
  double total = 0.0;
  std::size_t steps = 0;
  for (const auto& batch : make_batches(order, cfg.batch_size)) {
    const std::vector<double> y = label_of(batch);
    const std::vector<double> w(batch.size(), 1.0 / static_cast<double>(batch.size()));
    if (hook) hook(k, batch, y, w);
    total += grad_step(model, table, batch, y, w, cfg.loss, cfg.lr);
    ++steps;
  }
  return steps == 0 ? 0.0 : total / static_cast<double>(steps);
}

PartitionResult partition_from_losses(std::vector<double> losses, const TrainConfig& cfg,
                                      const std::optional<Partition>& previous, int epoch) {
  PartitionResult out;
  out.losses = std::move(losses);
  try {
    const auto normalized = normalize_losses(out.losses);
    auto fit = fit_mixture(cfg.mixture_kind, normalized, cfg.em);
    out.fit = std::move(fit.diagnostics);
    out.posteriors.reserve(normalized.size());
    for (double l : normalized) out.posteriors.push_back(posterior_clean(l, fit.model));
    out.partition = partition(out.posteriors, cfg.partition);
    return out;
  } catch (const Error& e) {
    const bool recoverable = e.kind() == ErrorKind::kDegenerateDistribution ||
                             e.kind() == ErrorKind::kFitFailure ||
                             e.kind() == ErrorKind::kEmptyAnchorSet;
    if (!recoverable) throw;
    out.fit_failed = true;
    if (previous) {
      out.partition = *previous;
      return out;
    }
    if (cfg.partition.anchor_fraction) {
      // No earlier split to reuse: rank directly by loss.
      out.posteriors.clear();
      for (double l : out.losses) out.posteriors.push_back(-l);
      out.partition = partition(out.posteriors, cfg.partition);
      return out;
    }
    if (e.kind() != ErrorKind::kEmptyAnchorSet) {
      // Losses with no second population look like one clean set.
      out.partition.anchors.indices = iota_indices(out.losses.size());
      return out;
    }
    throw Error(e.kind(), fmt::format("epoch {}: {}", epoch, e.what()));
  }
}

void baseline_epoch(TrainerState& state, const FeatureTable& table, const TrainConfig& cfg,
                    const StepHook& hook, EpochReport& report) {
  const auto all = iota_indices(table.size());
  const auto losses_seed = scan_seed(cfg, state.epoch);
  for (std::size_t k = 0; k < 2; ++k) {
    auto& stats = report.models[k];
    const auto losses = per_sample_losses(state.models[k], table, cfg.loss, cfg.batch_size, losses_seed);
    stats.mean_loss = mean_of(losses);
    stats.anchor_count = table.size();
    stats.train_loss = run_batches(state.models[k], k, table, all, cfg, state.rngs[k], hook,
                                   [](const std::vector<std::size_t>& b) {
                                     return std::vector<double>(b.size(), 1.0);
                                   });
  }
}

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kBicro: return "bicro";
    case Variant::kBicroStar: return "bicro_star";
    case Variant::kBaseline: return "baseline";
  }
  return "unknown";
}

std::string_view to_string(MixtureKind k) {
  return k == MixtureKind::kBeta ? "beta" : "gaussian";
}

void TrainConfig::validate() const {
  loss.validate();
  partition.validate();
  if (!(epsilon > 0.0 && epsilon <= 1.0)) {
    throw Error(ErrorKind::kConfig, fmt::format("epsilon = {} outside (0, 1]", epsilon));
  }
  if (warmup_epochs < 0 || total_epochs < 0 || clean_only_epochs < 0) {
    throw Error(ErrorKind::kConfig, "epoch counts must be non-negative");
  }
  if (clean_only_epochs > total_epochs) {
    throw Error(ErrorKind::kConfig,
                fmt::format("clean_only_epochs = {} exceeds total_epochs = {}", clean_only_epochs,
                            total_epochs));
  }
  if (batch_size < 2) throw Error(ErrorKind::kConfig, "batch_size must be at least 2");
  if (!(lr > 0.0)) throw Error(ErrorKind::kConfig, "lr must be positive");
  if (shared_dim == 0) throw Error(ErrorKind::kConfig, "shared_dim must be positive");
  if (em.max_iters < 1) throw Error(ErrorKind::kConfig, "em_max_iters must be at least 1");
  if (checkpoint_every < 0) throw Error(ErrorKind::kConfig, "checkpoint_every must be >= 0");
}

TrainerState init_state(const PairDataset& dataset, const TrainConfig& cfg) {
  cfg.validate();
  TrainerState s;
  s.models[0] = init_model(dataset.image_dim, dataset.text_dim, cfg.shared_dim,
                           derive_seed(cfg.seed, kStreamModelA));
  s.models[1] = init_model(dataset.image_dim, dataset.text_dim, cfg.shared_dim,
                           derive_seed(cfg.seed, kStreamModelB));
  s.rngs[0].seed(derive_seed(cfg.seed, kStreamOrderA));
  s.rngs[1].seed(derive_seed(cfg.seed, kStreamOrderB));
  return s;
}

std::vector<std::size_t> select_small_loss(std::span<const double> losses, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) {
    throw Error(ErrorKind::kDomain, fmt::format("epsilon = {} outside (0, 1]", epsilon));
  }
  const auto n = losses.size();
  const auto keep = std::min(
      n, static_cast<std::size_t>(std::ceil(epsilon * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> rank = iota_indices(n);
  std::stable_sort(rank.begin(), rank.end(),
                   [&](std::size_t a, std::size_t b) { return losses[a] < losses[b]; });
  rank.resize(keep);
  std::sort(rank.begin(), rank.end());
  return rank;
}

void warmup(TrainerState& state, const PairDataset& dataset, const TrainConfig& cfg,
            const StepHook& hook) {
  const auto table = FeatureTable::from(dataset);
  const auto all = iota_indices(table.size());
  const double ratio = cfg.variant == Variant::kBaseline ? 1.0 : cfg.epsilon;
  for (int e = 0; e < cfg.warmup_epochs; ++e) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& model = state.models[k];
      const auto order = shuffled(all, state.rngs[k]);
      for (const auto& batch : make_batches(order, cfg.batch_size)) {
        const Eigen::MatrixXd sim = similarity_matrix(model, table, batch);
        std::vector<double> losses(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) losses[i] = loss_hard(sim, i, cfg.loss);
        const auto keep = select_small_loss(losses, ratio);
        std::vector<double> w(batch.size(), 0.0);
        for (std::size_t r : keep) w[r] = 1.0 / static_cast<double>(keep.size());
        const std::vector<double> y(batch.size(), 1.0);
        if (hook) hook(k, batch, y, w);
        grad_step(model, table, batch, y, w, cfg.loss, cfg.lr);
      }
    }
  }
}

std::array<PartitionResult, 2> compute_partitions(const TrainerState& state,
                                                  const PairDataset& dataset,
                                                  const TrainConfig& cfg) {
  const auto table = FeatureTable::from(dataset);
  const auto seed = scan_seed(cfg, state.epoch);
  std::array<std::vector<double>, 2> losses;
  for (std::size_t k = 0; k < 2; ++k) {
    losses[k] = per_sample_losses(state.models[k], table, cfg.loss, cfg.batch_size, seed);
  }
  std::array<PartitionResult, 2> out;
  for (std::size_t k = 0; k < 2; ++k) {
    const std::size_t teacher = cfg.use_co_teaching ? 1 - k : k;
    out[k] = partition_from_losses(losses[teacher], cfg, state.last_partition[k], state.epoch);
  }
  return out;
}

EpochReport train_epoch(TrainerState& state, const PairDataset& dataset, const TrainConfig& cfg,
                        const StepHook& hook) {
  const auto table = FeatureTable::from(dataset);
  EpochReport report;
  report.epoch = state.epoch;
  report.clean_only = state.epoch < cfg.clean_only_epochs;

  if (cfg.variant == Variant::kBaseline) {
    baseline_epoch(state, table, cfg, hook, report);
    ++state.epoch;
    return report;
  }

  std::optional<std::vector<bool>> truth;
  if (dataset.has_truth()) truth = dataset.truth_mask();

  auto parts = compute_partitions(state, dataset, cfg);
  const auto seed = scan_seed(cfg, state.epoch);

  for (std::size_t k = 0; k < 2; ++k) {
    auto& model = state.models[k];
    auto& stats = report.models[k];
    auto& part = parts[k];
    // Mean loss of this model's own scan (the teacher's scan drives the partition).
    const std::size_t teacher = cfg.use_co_teaching ? 1 - k : k;
    stats.mean_loss = teacher == k
                          ? mean_of(part.losses)
                          : mean_of(per_sample_losses(model, table, cfg.loss, cfg.batch_size, seed));
    stats.anchor_count = part.partition.anchors.size();
    stats.fit = part.fit;
    stats.fit_failed = part.fit_failed;
    if (truth) stats.anchors = anchor_quality(part.partition.anchors, *truth);
    state.last_partition[k] = part.partition;

    const auto& anchors = part.partition.anchors;
    try {
      if (report.clean_only) {
        stats.train_loss = run_batches(model, k, table, anchors.indices, cfg, state.rngs[k], hook,
                                       [](const std::vector<std::size_t>& b) {
                                         return std::vector<double>(b.size(), 1.0);
                                       });
        continue;
      }

      // Anchor encodings are frozen for the epoch; noisy pairs are encoded per batch.
      const AnchorFeatures anchor_features(anchors, encode_images(model, table.images),
                                           encode_texts(model, table.texts));
      std::vector<SoftLabelRecord> records;
      records.reserve(part.partition.noisy.size());
      const auto all = iota_indices(table.size());
      stats.train_loss = run_batches(
          model, k, table, all, cfg, state.rngs[k], hook,
          [&](const std::vector<std::size_t>& batch) {
            std::vector<double> y(batch.size(), 1.0);
            std::vector<std::size_t> noisy_cols;
            for (std::size_t i = 0; i < batch.size(); ++i) {
              if (!anchors.contains(batch[i])) noisy_cols.push_back(i);
            }
            if (noisy_cols.empty()) return y;
            Eigen::MatrixXd x(table.images.rows(), static_cast<Eigen::Index>(noisy_cols.size()));
            Eigen::MatrixXd t(table.texts.rows(), static_cast<Eigen::Index>(noisy_cols.size()));
            for (std::size_t c = 0; c < noisy_cols.size(); ++c) {
              const auto src = static_cast<Eigen::Index>(batch[noisy_cols[c]]);
              x.col(static_cast<Eigen::Index>(c)) = table.images.col(src);
              t.col(static_cast<Eigen::Index>(c)) = table.texts.col(src);
            }
            const Eigen::MatrixXd u = encode_images(model, x);
            const Eigen::MatrixXd v = encode_texts(model, t);
            for (std::size_t c = 0; c < noisy_cols.size(); ++c) {
              const auto col = static_cast<Eigen::Index>(c);
              auto rec = bicro_label(batch[noisy_cols[c]], u.col(col), v.col(col), anchor_features,
                                     cfg.partition.epsilon_d);
              if (cfg.bicro_star()) {
                const double before = rec.y_star;
                rec.y_star = apply_mismatch_threshold(rec.y_star, cfg.partition.theta);
                if (rec.y_star != before) ++stats.labels_zeroed;
              }
              y[noisy_cols[c]] = cfg.use_soft_labels ? rec.y_star : 0.0;
              records.push_back(rec);
            }
            return y;
          });

      stats.labels_estimated = records.size();
      if (!records.empty()) {
        double sum = 0.0;
        for (const auto& r : records) sum += r.y_star;
        stats.mean_label = sum / static_cast<double>(records.size());
      }
      if (truth) {
        const auto positives = std::count_if(records.begin(), records.end(),
                                             [&](const auto& r) { return (*truth)[r.pair_id]; });
        if (positives > 0 && static_cast<std::size_t>(positives) < records.size()) {
          stats.label_quality = soft_label_quality(records, *truth);
        }
      }
    } catch (const Error& e) {
      throw Error(e.kind(), fmt::format("epoch {}, model {}: {}", state.epoch, k == 0 ? 'A' : 'B',
                                        e.what()));
    }
  }
  ++state.epoch;
  return report;
}

TrainResult train(const PairDataset& dataset, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (dataset.size() < 2 * cfg.batch_size && (cfg.total_epochs > 0 || cfg.warmup_epochs > 0)) {
    throw Error(ErrorKind::kPrecondition,
                fmt::format("dataset of {} pairs is smaller than two batches of {}", dataset.size(),
                            cfg.batch_size));
  }
  TrainResult result;
  result.state = init_state(dataset, cfg);
  if (cfg.use_warmup) warmup(result.state, dataset, cfg);
  for (int e = 0; e < cfg.total_epochs; ++e) {
    result.reports.push_back(train_epoch(result.state, dataset, cfg));
    if (on_epoch) on_epoch(result.state, result.reports.back());
  }
  return result;
}

Eigen::MatrixXd infer_similarity(const MatchingModel& model_a, const MatchingModel& model_b,
                                 const Eigen::Ref<const Eigen::MatrixXd>& images,
                                 const Eigen::Ref<const Eigen::MatrixXd>& texts) {
  for (const MatchingModel* m : {&model_a, &model_b}) {
    if (m->f.input_dim() != static_cast<std::size_t>(images.rows()) ||
        m->g.input_dim() != static_cast<std::size_t>(texts.rows())) {
      throw Error(ErrorKind::kDimensionMismatch,
                  fmt::format("model expects ({}, {}) inputs, got ({}, {})", m->f.input_dim(),
                              m->g.input_dim(), images.rows(), texts.rows()));
    }
  }
  const Eigen::MatrixXd sa = encode_images(model_a, images).transpose() * encode_texts(model_a, texts);
  const Eigen::MatrixXd sb = encode_images(model_b, images).transpose() * encode_texts(model_b, texts);
  return 0.5 * (sa + sb);
}

RectificationSnapshot rectification_snapshot(const TrainerState& state,
                                             const PairDataset& dataset,
                                             const TrainConfig& cfg) {
  RectificationSnapshot snap;
  auto parts = compute_partitions(state, dataset, cfg);
  snap.partition = std::move(parts[0]);
  const auto table = FeatureTable::from(dataset);
  const auto& model = state.models[0];
  snap.labels = rectify_all(snap.partition.partition, encode_images(model, table.images),
                            encode_texts(model, table.texts), cfg.partition, cfg.bicro_star());
  return snap;
}

}  // namespace bicro
