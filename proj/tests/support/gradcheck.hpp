#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "bicro/match_model.hpp"
#include "oracles.hpp"

namespace oracle {

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // perturbation crossed a hinge or switched a negative
};

// Analytic gradient of the mean soft loss on a random 8-pair batch against
// central differences of an independent forward pass.
inline GradCheck gradient_check(std::uint64_t seed, double h = 1e-5) {
  constexpr int kB = 8, kImg = 6, kTxt = 5, kShared = 4;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;

  auto model = bicro::init_model(kImg, kTxt, kShared, seed + 1000);
  for (Eigen::Index r = 0; r < kShared; ++r) {
    model.f.bias[r] = 0.3 * normal(rng);
    model.g.bias[r] = 0.3 * normal(rng);
  }
  bicro::FeatureTable table;
  table.images.resize(kImg, kB);
  table.texts.resize(kTxt, kB);
  for (Eigen::Index j = 0; j < kB; ++j) {
    for (Eigen::Index r = 0; r < kImg; ++r) table.images(r, j) = normal(rng);
    for (Eigen::Index r = 0; r < kTxt; ++r) table.texts(r, j) = normal(rng);
  }
  std::vector<std::size_t> batch(kB);
  std::vector<double> y(kB), w(kB, 1.0 / kB);
  for (int i = 0; i < kB; ++i) {
    batch[i] = static_cast<std::size_t>(i);
    y[i] = unit(rng);
  }
  bicro::LossConfig cfg;
  cfg.alpha = 0.1 + 0.5 * unit(rng);
  cfg.m = 1.5 + 20.0 * unit(rng);

  const auto analytic = bicro::loss_gradient(model, table, batch, y, w, cfg).grad;

  auto forward = [&](const bicro::MatchingModel& m) {
    return soft_triplet(m.f.weight, m.f.bias, m.g.weight, m.g.bias, table.images, table.texts, y,
                        w, cfg.alpha, cfg.m);
  };
  const auto base = forward(model);
  auto pattern = [](const Forward& f) {
    std::vector<int> p;
    for (double a : f.hinge_args) p.push_back(a > 0.0 ? 1 : 0);
    for (auto n : f.negatives) p.push_back(static_cast<int>(n));
    return p;
  };
  const auto base_pattern = pattern(base);

  GradCheck out;
  auto probe = [&](auto&& param_of, auto&& grad_of, Eigen::Index count) {
    for (Eigen::Index k = 0; k < count; ++k) {
      auto plus = model, minus = model;
      param_of(plus)[k] += h;
      param_of(minus)[k] -= h;
      const auto fp = forward(plus), fm = forward(minus);
      bool near_kink = pattern(fp) != base_pattern || pattern(fm) != base_pattern;
      for (double a : base.hinge_args) near_kink = near_kink || std::abs(a) < 1e-6;
      if (near_kink) {
        ++out.skipped;
        continue;
      }
      const double fd = (fp.loss - fm.loss) / (2.0 * h);
      const double an = grad_of(analytic)[k];
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
      out.max_rel_error = std::max(out.max_rel_error, rel);
      ++out.checked;
    }
  };
  using M = bicro::MatchingModel;
  probe([](M& m) { return m.f.weight.data(); }, [](const M& m) { return m.f.weight.data(); },
        kShared * kImg);
  probe([](M& m) { return m.f.bias.data(); }, [](const M& m) { return m.f.bias.data(); }, kShared);
  probe([](M& m) { return m.g.weight.data(); }, [](const M& m) { return m.g.weight.data(); },
        kShared * kTxt);
  probe([](M& m) { return m.g.bias.data(); }, [](const M& m) { return m.g.bias.data(); }, kShared);
  return out;
}

}  // namespace oracle
