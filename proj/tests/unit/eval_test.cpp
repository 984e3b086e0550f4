#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "bicro/error.hpp"
#include "bicro/eval.hpp"
#include "oracles.hpp"

using namespace bicro;

namespace {

std::vector<SoftLabelRecord> labels(const std::vector<double>& y) {
  std::vector<SoftLabelRecord> out;
  for (std::size_t i = 0; i < y.size(); ++i) out.push_back({i, y[i]});
  return out;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::kIo;
}

}  // namespace

TEST(RecallExamples, IdentityIsPerfect) {
  const Eigen::MatrixXd sim = Eigen::MatrixXd::Identity(10, 10);
  EXPECT_EQ(recall_at_k(sim, 1, Direction::kImageToText), 100.0);
  EXPECT_EQ(recall_at_k(sim, 1, Direction::kTextToImage), 100.0);
}

TEST(RecallExamples, AntiDiagonalMatchesOracle) {
  // N = 5: only the center query has its truth on the anti-diagonal.
  Eigen::MatrixXd sim = Eigen::MatrixXd::Zero(5, 5);
  for (int i = 0; i < 5; ++i) sim(i, 4 - i) = 1.0;
  for (auto dir : {Direction::kImageToText, Direction::kTextToImage}) {
    const bool i2t = dir == Direction::kImageToText;
    EXPECT_EQ(recall_at_k(sim, 1, dir), oracle::recall(sim, 1, i2t));
    EXPECT_EQ(recall_at_k(sim, 1, dir), 20.0);
  }
}

TEST(RecallExamples, RandomMatchesOracle) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd sim(20, 20);
  for (Eigen::Index i = 0; i < sim.size(); ++i) sim.data()[i] = nd(rng);
  for (std::size_t k : {1u, 5u, 10u, 20u}) {
    EXPECT_EQ(recall_at_k(sim, k, Direction::kImageToText), oracle::recall(sim, k, true));
    EXPECT_EQ(recall_at_k(sim, k, Direction::kTextToImage), oracle::recall(sim, k, false));
  }
}

TEST(Recall, AgreesWithOracleIncludingTies) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> coarse(0, 3);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::MatrixXd sim(20, 20);
    for (Eigen::Index i = 0; i < sim.size(); ++i) {
      sim.data()[i] = trial % 2 == 0 ? nd(rng) : static_cast<double>(coarse(rng));
    }
    for (std::size_t k = 1; k <= 20; ++k) {
      ASSERT_EQ(recall_at_k(sim, k, Direction::kImageToText), oracle::recall(sim, k, true));
      ASSERT_EQ(recall_at_k(sim, k, Direction::kTextToImage), oracle::recall(sim, k, false));
    }
  }
}

TEST(Recall, TiesArePessimistic) {
  const Eigen::MatrixXd sim = Eigen::MatrixXd::Constant(4, 4, 0.5);
  EXPECT_EQ(recall_at_k(sim, 1, Direction::kImageToText), 0.0);
  EXPECT_EQ(recall_at_k(sim, 3, Direction::kImageToText), 0.0);
  EXPECT_EQ(recall_at_k(sim, 4, Direction::kImageToText), 100.0);
}

TEST(Recall, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd sim(15, 15);
  for (Eigen::Index i = 0; i < sim.size(); ++i) sim.data()[i] = nd(rng);
  const Eigen::MatrixXd warped = sim.array().exp() * 3.0 + 1.0;
  for (std::size_t k : {1u, 5u, 10u}) {
    EXPECT_EQ(recall_at_k(sim, k, Direction::kImageToText),
              recall_at_k(warped, k, Direction::kImageToText));
    EXPECT_EQ(recall_at_k(sim, k, Direction::kTextToImage),
              recall_at_k(warped, k, Direction::kTextToImage));
  }
  EXPECT_EQ(recall_at_k(sim, 15, Direction::kImageToText), 100.0);
}

TEST(Recall, RejectsBadK) {
  const Eigen::MatrixXd sim = Eigen::MatrixXd::Identity(3, 3);
  EXPECT_EQ(kind_of([&] { recall_at_k(sim, 4, Direction::kImageToText); }), ErrorKind::kDomain);
  EXPECT_EQ(kind_of([&] { recall_at_k(sim, 0, Direction::kImageToText); }), ErrorKind::kDomain);
}

TEST(Recall, ReportIsMonotoneAndSums) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd sim(30, 30);
  for (Eigen::Index i = 0; i < sim.size(); ++i) sim.data()[i] = nd(rng);
  sim.diagonal().array() += 1.0;
  const auto r = retrieval_report(sim);
  EXPECT_LE(r.i2t_r1, r.i2t_r5);
  EXPECT_LE(r.i2t_r5, r.i2t_r10);
  EXPECT_LE(r.t2i_r1, r.t2i_r5);
  EXPECT_LE(r.t2i_r5, r.t2i_r10);
  EXPECT_NEAR(r.sum, r.i2t_r1 + r.i2t_r5 + r.i2t_r10 + r.t2i_r1 + r.t2i_r5 + r.t2i_r10, 1e-9);
  EXPECT_NEAR(r.mean_recall(), r.sum / 6.0, 1e-12);
}

TEST(SumScoreExamples, PublishedRowZeroAndMax) {
  RetrievalReport r{78.3, 94.1, 97.3, 60.0, 83.7, 89.5};
  EXPECT_NEAR(sum_score(r), 502.9, 1e-9);
  EXPECT_EQ(sum_score(RetrievalReport{}), 0.0);
  RetrievalReport full{100, 100, 100, 100, 100, 100};
  EXPECT_EQ(sum_score(full), 600.0);
}

TEST(AnchorQualityExamples, ExactHandCountAndSubset) {
  const std::vector<bool> truth{true, false, true, true, false};
  const auto exact = anchor_quality(AnchorSet{{0, 2, 3}}, truth);
  EXPECT_EQ(exact.precision, 1.0);
  EXPECT_EQ(exact.recall, 1.0);

  const auto hand = anchor_quality(AnchorSet{{0, 1}}, {true, false, true});
  EXPECT_NEAR(hand.precision, 0.5, 1e-12);
  EXPECT_NEAR(hand.recall, 0.5, 1e-12);

  const auto subset = anchor_quality(AnchorSet{{3}}, truth);
  EXPECT_EQ(subset.precision, 1.0);
  EXPECT_NEAR(subset.recall, 1.0 / 3.0, 1e-12);

  EXPECT_EQ(kind_of([&] { anchor_quality(AnchorSet{}, truth); }), ErrorKind::kEmptyAnchorSet);
}

TEST(SoftLabelQualityExamples, PerfectConstantAndHandSet) {
  const std::vector<bool> truth{true, false, true, false};
  const auto perfect = soft_label_quality(labels({1, 0, 1, 0}), truth);
  EXPECT_NEAR(perfect.point_biserial, 1.0, 1e-12);
  EXPECT_EQ(perfect.mean_y_true, 1.0);
  EXPECT_EQ(perfect.mean_y_mismatch, 0.0);

  const auto flat = soft_label_quality(labels({0.4, 0.4, 0.4, 0.4}), truth);
  EXPECT_EQ(flat.mean_y_true, flat.mean_y_mismatch);
  EXPECT_EQ(flat.point_biserial, 0.0);

  // y = [0.9, 0.2, 0.5, 0.4]: mu1 = 0.7, mu0 = 0.3, p = 0.5, mean 0.5,
  // population sigma = sqrt((0.16 + 0.09 + 0 + 0.01) / 4).
  const auto hand = soft_label_quality(labels({0.9, 0.2, 0.5, 0.4}), truth);
  const double expected = 0.4 * 0.5 / std::sqrt(0.26 / 4.0);
  EXPECT_NEAR(hand.mean_y_true, 0.7, 1e-12);
  EXPECT_NEAR(hand.mean_y_mismatch, 0.3, 1e-12);
  EXPECT_NEAR(hand.point_biserial, expected, 1e-9);
}

TEST(SoftLabelQuality, EqualsPearsonCorrelation) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u;
  std::bernoulli_distribution b(0.6);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> y(200);
    std::vector<bool> t(200);
    for (std::size_t i = 0; i < y.size(); ++i) {
      t[i] = b(rng);
      y[i] = t[i] ? u(rng) : 0.6 * u(rng);
    }
    const auto q = soft_label_quality(labels(y), t);
    EXPECT_NEAR(q.point_biserial, oracle::pearson(y, t), 1e-9);
  }
}

TEST(SoftLabelQuality, SingleClassIsUndefined) {
  EXPECT_EQ(kind_of([] { soft_label_quality(labels({0.1, 0.9}), {true, true}); }),
            ErrorKind::kDomain);
}
