#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "bicro/co_train.hpp"
#include "bicro/datagen.hpp"
#include "bicro/error.hpp"

using namespace bicro;

namespace {

GeneratedData small_data(double noise, std::uint64_t seed = 4) {
  GenSpec s;
  s.n_pairs = 300;
  s.test_pairs = 50;
  s.latent_dim = 6;
  s.image_dim = 12;
  s.text_dim = 10;
  s.noise_ratio = noise;
  s.modality_noise_sigma = 0.5;
  s.seed = seed;
  return generate_split(s);
}

TrainConfig small_config() {
  TrainConfig c;
  c.loss.alpha = 1.0;
  c.partition = PartitionConfig::fraction(0.3);
  c.warmup_epochs = 2;
  c.total_epochs = 4;
  c.clean_only_epochs = 2;
  c.batch_size = 50;
  c.shared_dim = 8;
  c.seed = 11;
  return c;
}

bool same_reports(const EpochReport& a, const EpochReport& b) {
  if (a.epoch != b.epoch || a.clean_only != b.clean_only) return false;
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& x = a.models[k];
    const auto& y = b.models[k];
    if (x.mean_loss != y.mean_loss || x.train_loss != y.train_loss ||
        x.anchor_count != y.anchor_count || x.fit_failed != y.fit_failed ||
        x.fit.iterations != y.fit.iterations ||
        x.fit.log_likelihood_trace != y.fit.log_likelihood_trace ||
        x.labels_estimated != y.labels_estimated || x.labels_zeroed != y.labels_zeroed ||
        x.mean_label != y.mean_label) {
      return false;
    }
  }
  return true;
}

// Advances a fresh state through warmup and `epochs` epochs.
TrainerState advanced_state(const PairDataset& d, const TrainConfig& c, int epochs) {
  auto state = init_state(d, c);
  warmup(state, d, c);
  for (int e = 0; e < epochs; ++e) train_epoch(state, d, c);
  return state;
}

}  // namespace

TEST(WarmupExamples, SmallLossSelection) {
  const std::vector<double> losses{0.1, 0.9, 0.2, 0.8};
  EXPECT_EQ(select_small_loss(losses, 0.5), (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(select_small_loss(losses, 1.0), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(select_small_loss(losses, 0.3), (std::vector<std::size_t>{0, 2}));  // ceil(1.2)
  EXPECT_THROW(select_small_loss(losses, 0.0), Error);
}

TEST(WarmupExamples, FullRatioUsesEveryPair) {
  const auto g = small_data(0.2);
  auto c = small_config();
  c.epsilon = 1.0;
  auto state = init_state(g.train, c);
  std::size_t weighted = 0, steps = 0;
  warmup(state, g.train, c, [&](std::size_t, auto batch, auto, auto w) {
    ++steps;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      EXPECT_NEAR(w[i], 1.0 / static_cast<double>(batch.size()), 1e-15);
      weighted += w[i] > 0.0 ? 1 : 0;
    }
  });
  EXPECT_EQ(steps, 2u * 2u * 6u);
  EXPECT_EQ(weighted, 2u * 2u * 300u);
}

TEST(WarmupExamples, PartialRatioKeepsLowestLosses) {
  const auto g = small_data(0.2);
  auto c = small_config();
  c.epsilon = 0.3;
  auto state = init_state(g.train, c);
  const auto table = FeatureTable::from(g.train);
  warmup(state, g.train, c, [&](std::size_t k, auto batch, auto, auto w) {
    // Recompute the batch losses under the pre-step model; kept pairs must be the smallest.
    const auto sim = similarity_matrix(state.models[k], table, batch);
    std::vector<double> losses(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) losses[i] = loss_hard(sim, i, c.loss);
    double kept_max = -1.0, dropped_min = 1e300;
    std::size_t kept = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (w[i] > 0.0) {
        kept_max = std::max(kept_max, losses[i]);
        ++kept;
      } else {
        dropped_min = std::min(dropped_min, losses[i]);
      }
    }
    EXPECT_EQ(kept, static_cast<std::size_t>(std::ceil(0.3 * static_cast<double>(batch.size()))));
    EXPECT_LE(kept_max, dropped_min);
  });
}

TEST(WarmupExamples, ZeroEpochsIsNoOp) {
  const auto g = small_data(0.2);
  auto c = small_config();
  c.warmup_epochs = 0;
  auto state = init_state(g.train, c);
  const auto before = state.models;
  warmup(state, g.train, c);
  EXPECT_EQ(state.models[0], before[0]);
  EXPECT_EQ(state.models[1], before[1]);
}

TEST(TrainExamples, NoEpochsReturnsInitialModels) {
  const auto g = small_data(0.2);
  auto c = small_config();
  c.warmup_epochs = 0;
  c.total_epochs = 0;
  c.clean_only_epochs = 0;
  const auto r = train(g.train, c);
  EXPECT_TRUE(r.reports.empty());
  const auto init = init_state(g.train, c);
  EXPECT_EQ(r.model_a(), init.models[0]);
  EXPECT_EQ(r.model_b(), init.models[1]);
  EXPECT_NE(r.model_a(), r.model_b());  // independent initializations
}

TEST(TrainEpochExamples, DeterministicReports) {
  const auto g = small_data(0.3);
  const auto c = small_config();
  const auto a = train(g.train, c);
  const auto b = train(g.train, c);
  ASSERT_EQ(a.reports.size(), 4u);
  ASSERT_EQ(a.reports.size(), b.reports.size());
  for (std::size_t e = 0; e < a.reports.size(); ++e) {
    EXPECT_TRUE(same_reports(a.reports[e], b.reports[e])) << "epoch " << e;
  }
  EXPECT_EQ(a.model_a(), b.model_a());
  EXPECT_EQ(a.model_b(), b.model_b());
}

TEST(TrainEpochExamples, HardLabelsWhenSoftLabelsDisabled) {
  const auto g = small_data(0.3);
  auto c = small_config();
  c.use_soft_labels = false;
  auto state = advanced_state(g.train, c, 2);  // past the clean-only phase
  const auto parts = compute_partitions(state, g.train, c);
  std::size_t noisy_seen = 0;
  train_epoch(state, g.train, c, [&](std::size_t k, auto batch, auto y, auto) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const bool anchor = parts[k].partition.anchors.contains(batch[i]);
      EXPECT_EQ(y[i], anchor ? 1.0 : 0.0);
      noisy_seen += anchor ? 0 : 1;
    }
  });
  EXPECT_GT(noisy_seen, 0u);
}

TEST(TrainEpochExamples, SoftLabelsWhenEnabled) {
  const auto g = small_data(0.3);
  const auto c = small_config();
  auto state = advanced_state(g.train, c, 2);
  const auto parts = compute_partitions(state, g.train, c);
  std::size_t fractional = 0;
  train_epoch(state, g.train, c, [&](std::size_t k, auto batch, auto y, auto) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      EXPECT_GE(y[i], 0.0);
      EXPECT_LE(y[i], 1.0);
      if (parts[k].partition.anchors.contains(batch[i])) EXPECT_EQ(y[i], 1.0);
      else if (y[i] > 0.0 && y[i] < 1.0) ++fractional;
    }
  });
  EXPECT_GT(fractional, 0u);
}

TEST(TrainEpochExamples, NoiselessRunKeepsMostPairsAndLossFalls) {
  const auto g = small_data(0.0);
  auto c = small_config();
  c.partition = PartitionConfig::threshold(0.5);
  c.warmup_epochs = 10;
  c.total_epochs = 6;
  c.epsilon = 1.0;
  const auto r = train(g.train, c);
  for (const auto& m : r.reports.back().models) {
    EXPECT_GE(m.anchor_count, 200u);
    EXPECT_EQ(m.anchors->precision, 1.0);
  }
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t e = r.reports.size() - 3; e < r.reports.size(); ++e) {
      EXPECT_LE(r.reports[e].models[k].mean_loss, r.reports[e - 1].models[k].mean_loss)
          << "model " << k << " epoch " << e;
    }
  }
}

TEST(TrainExamples, GaussianMixturePath) {
  const auto g = small_data(0.3);
  auto c = small_config();
  c.mixture_kind = MixtureKind::kGaussian;
  const auto r = train(g.train, c);
  ASSERT_EQ(r.reports.size(), 4u);
  for (const auto& rep : r.reports) {
    for (const auto& m : rep.models) {
      EXPECT_TRUE(m.fit_failed || m.fit.iterations > 0);
      EXPECT_TRUE(m.fit_failed || std::isfinite(m.fit.final_log_likelihood));
    }
  }
}

TEST(CoTrain, PartitionDependsOnlyOnPeer) {
  const auto g = small_data(0.3);
  const auto c = small_config();
  auto state = advanced_state(g.train, c, 1);
  const auto base = compute_partitions(state, g.train, c);
  auto perturbed = state;
  perturbed.models[0].f.weight.array() += 0.05;
  perturbed.models[0].g.bias.array() -= 0.1;
  const auto moved = compute_partitions(perturbed, g.train, c);
  EXPECT_EQ(moved[0].partition.anchors.indices, base[0].partition.anchors.indices);
  EXPECT_EQ(moved[0].losses, base[0].losses);
  EXPECT_NE(moved[1].losses, base[1].losses);
}

TEST(CoTrain, WithoutCoTeachingPartitionUsesOwnLosses) {
  const auto g = small_data(0.3);
  auto c = small_config();
  c.use_co_teaching = false;
  auto state = advanced_state(g.train, c, 1);
  const auto base = compute_partitions(state, g.train, c);
  auto perturbed = state;
  perturbed.models[1].f.weight.array() += 0.05;
  const auto moved = compute_partitions(perturbed, g.train, c);
  EXPECT_EQ(moved[0].losses, base[0].losses);
  EXPECT_NE(moved[1].losses, base[1].losses);
}

TEST(CoTrain, CleanOnlyEpochsTouchOnlyAnchors) {
  const auto g = small_data(0.3);
  const auto c = small_config();
  auto state = advanced_state(g.train, c, 0);
  for (int e = 0; e < c.clean_only_epochs; ++e) {
    const auto parts = compute_partitions(state, g.train, c);
    std::array<std::set<std::size_t>, 2> touched;
    train_epoch(state, g.train, c, [&](std::size_t k, auto batch, auto y, auto w) {
      for (std::size_t i = 0; i < batch.size(); ++i) {
        EXPECT_TRUE(parts[k].partition.anchors.contains(batch[i])) << batch[i];
        EXPECT_EQ(y[i], 1.0);
        EXPECT_GT(w[i], 0.0);
        touched[k].insert(batch[i]);
      }
    });
    for (std::size_t k = 0; k < 2; ++k) {
      EXPECT_EQ(touched[k].size(), parts[k].partition.anchors.size());
    }
  }
}

TEST(CoTrain, AnchorCountIsCeilOfFraction) {
  const auto g = small_data(0.3);
  auto c = small_config();
  c.partition = PartitionConfig::fraction(0.17);  // ceil(51) on 300 pairs
  const auto r = train(g.train, c);
  for (const auto& rep : r.reports) {
    for (const auto& m : rep.models) EXPECT_EQ(m.anchor_count, 51u);
  }
}

TEST(CoTrain, FullFractionWithoutNoiseMatchesBaseline) {
  const auto g = small_data(0.0);
  auto bicro = small_config();
  bicro.partition = PartitionConfig::fraction(1.0);
  bicro.epsilon = 1.0;
  auto base = bicro;
  base.variant = Variant::kBaseline;
  const auto a = train(g.train, bicro);
  const auto b = train(g.train, base);
  ASSERT_EQ(a.reports.size(), b.reports.size());
  for (std::size_t e = 0; e < a.reports.size(); ++e) {
    for (std::size_t k = 0; k < 2; ++k) {
      EXPECT_EQ(a.reports[e].models[k].mean_loss, b.reports[e].models[k].mean_loss);
      EXPECT_EQ(a.reports[e].models[k].train_loss, b.reports[e].models[k].train_loss);
    }
  }
  EXPECT_EQ(a.model_a(), b.model_a());
  EXPECT_EQ(a.model_b(), b.model_b());
}

TEST(CoTrain, StarThresholdZeroesLowLabels) {
  const auto g = small_data(0.4);
  auto c = small_config();
  c.variant = Variant::kBicroStar;
  c.partition.theta = 0.3;
  auto state = advanced_state(g.train, c, 2);
  const auto rep = train_epoch(state, g.train, c, [&](std::size_t, auto, auto y, auto) {
    for (double v : y) EXPECT_TRUE(v == 0.0 || v >= 0.3) << v;
  });
  EXPECT_GT(rep.models[0].labels_zeroed + rep.models[1].labels_zeroed, 0u);
}

TEST(CoTrain, StarWithZeroThresholdMatchesBicro) {
  const auto g = small_data(0.3);
  auto plain = small_config();
  auto star = plain;
  star.variant = Variant::kBicroStar;
  star.partition.theta = 0.0;
  const auto a = train(g.train, plain);
  const auto b = train(g.train, star);
  for (std::size_t e = 0; e < a.reports.size(); ++e) {
    EXPECT_TRUE(same_reports(a.reports[e], b.reports[e]));
  }
  EXPECT_EQ(a.model_a(), b.model_a());
}

TEST(CoTrain, RejectsTinyDatasetsAndBadConfigs) {
  const auto g = small_data(0.0);
  auto c = small_config();
  c.batch_size = 200;
  EXPECT_THROW(train(g.train, c), Error);
  c = small_config();
  c.clean_only_epochs = 9;
  EXPECT_THROW(train(g.train, c), Error);
}

TEST(InferSimilarityExamples, IdempotentHandSetAndTranspose) {
  MatchingModel ident;
  ident.f.weight = Eigen::MatrixXd::Identity(2, 2);
  ident.f.bias = Eigen::VectorXd::Zero(2);
  ident.g = ident.f;
  MatchingModel swap = ident;
  swap.g.weight << 0, 1, 1, 0;
  const Eigen::MatrixXd x = Eigen::MatrixXd::Identity(2, 2);

  const auto same = infer_similarity(ident, ident, x, x);
  EXPECT_TRUE(same.isApprox(Eigen::MatrixXd::Identity(2, 2)));
  const auto avg = infer_similarity(ident, swap, x, x);
  EXPECT_TRUE(avg.isApprox(Eigen::MatrixXd::Constant(2, 2, 0.5)));

  const auto g = small_data(0.0);
  const auto table = FeatureTable::from(g.test);
  const auto a = init_model(12, 10, 8, 1);
  const auto b = init_model(12, 10, 8, 2);
  const Eigen::MatrixXd ab = infer_similarity(a, b, table.images, table.texts);
  const Eigen::MatrixXd single = encode_images(a, table.images).transpose() * encode_texts(a, table.texts);
  EXPECT_LE((infer_similarity(a, a, table.images, table.texts) - single).cwiseAbs().maxCoeff(), 1e-12);

  // Swapping modalities on symmetric-dimension models transposes the result.
  MatchingModel at = a, bt = b;
  std::swap(at.f, at.g);
  std::swap(bt.f, bt.g);
  const Eigen::MatrixXd ba = infer_similarity(at, bt, table.texts, table.images);
  EXPECT_LE((ab.transpose() - ba).cwiseAbs().maxCoeff(), 1e-12);

  EXPECT_THROW(infer_similarity(a, b, table.texts, table.images), Error);
}
