#include "bicro/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "bicro/error.hpp"

namespace bicro {
namespace {

constexpr double kShapeMin = 1e-2;
constexpr double kShapeMax = 1e3;
constexpr double kVarianceFloor = 1e-6;
constexpr double kMinWeight = 1e-6;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};

Moments weighted_moments(std::span<const double> x, std::span<const double> w) {
  double sw = 0.0;
  double swx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    swx += w[i] * x[i];
  }
  Moments m;
  if (sw <= 0.0) return m;
  m.mean = swx / sw;
  double swv = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - m.mean;
    swv += w[i] * d * d;
  }
  m.variance = swv / sw;
  return m;
}

// Two-sided log-sum-exp posterior; uninformative when both terms vanish.
std::array<double, 2> normalize_log_terms(double a0, double a1) {
  if (a0 == kNegInf && a1 == kNegInf) return {0.5, 0.5};
  const double hi = std::max(a0, a1);
  const double e0 = std::exp(a0 - hi);
  const double e1 = std::exp(a1 - hi);
  const double s = e0 + e1;
  return {e0 / s, e1 / s};
}

double log_sum_exp(double a0, double a1) {
  if (a0 == kNegInf && a1 == kNegInf) return kNegInf;
  const double hi = std::max(a0, a1);
  return hi + std::log(std::exp(a0 - hi) + std::exp(a1 - hi));
}

struct BetaFamily {
  using Component = BetaComponent;
  using Model = BetaMixtureModel;

  static double log_pdf(double l, const Component& c) { return log_beta_pdf(l, c); }

  static Component from_moments(const Moments& m) {
    const double mu = std::clamp(m.mean, kLossClamp, 1.0 - kLossClamp);
    const double var = std::max(m.variance, 1e-12);
    // Shape scale is negative when var >= mu(1-mu); fall back to the floor.
    const double scale = std::max(mu * (1.0 - mu) / var - 1.0, 0.0);
    return {std::clamp(mu * scale, kShapeMin, kShapeMax),
            std::clamp((1.0 - mu) * scale, kShapeMin, kShapeMax)};
  }

  static Component blend(const Component& a, const Component& b, double t) {
    return {std::clamp(a.gamma + t * (b.gamma - a.gamma), kShapeMin, kShapeMax),
            std::clamp(a.beta + t * (b.beta - a.beta), kShapeMin, kShapeMax)};
  }

  static Model make(std::array<double, 2> w, std::array<Component, 2> c) {
    return Model::make(w, c);
  }
};

struct GaussianFamily {
  using Component = GaussianComponent;
  using Model = GaussianMixtureModel;

  static double log_pdf(double l, const Component& c) {
    const double d = l - c.mean;
    return -0.5 * (d * d / c.variance + std::log(2.0 * std::numbers::pi * c.variance));
  }

  static Component from_moments(const Moments& m) {
    return {m.mean, std::max(m.variance, kVarianceFloor)};
  }

  static Component blend(const Component& a, const Component& b, double t) {
    return {a.mean + t * (b.mean - a.mean),
            std::max(a.variance + t * (b.variance - a.variance), kVarianceFloor)};
  }

  static Model make(std::array<double, 2> w, std::array<Component, 2> c) {
    return Model::make(w, c);
  }
};

template <typename Family>
double mean_log_likelihood(std::span<const double> x, const typename Family::Model& model) {
  double total = 0.0;
  for (double l : x) {
    total += log_sum_exp(std::log(model.weights[0]) + Family::log_pdf(l, model.components[0]),
                         std::log(model.weights[1]) + Family::log_pdf(l, model.components[1]));
  }
  return total / static_cast<double>(x.size());
}

template <typename Family>
double expected_component_ll(std::span<const double> x, std::span<const double> r,
                             const typename Family::Component& c) {
  double q = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (r[i] > 0.0) q += r[i] * Family::log_pdf(x[i], c);
  }
  return q;
}

// Initial split: values below `lo_q` quantile seed component 0, above `hi_q` seed 1.
template <typename Family>
typename Family::Model initialize(std::span<const double> x, double lo_q, double hi_q) {
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = sorted.size();
  const auto lo_end = std::max<std::size_t>(1, static_cast<std::size_t>(lo_q * n));
  const auto hi_begin = std::min(n - 1, static_cast<std::size_t>(hi_q * n));
  std::span<const double> lower(sorted.data(), lo_end);
  std::span<const double> upper(sorted.data() + hi_begin, n - hi_begin);
  std::vector<double> ones(n, 1.0);
  const auto c0 = Family::from_moments(weighted_moments(lower, {ones.data(), lower.size()}));
  const auto c1 = Family::from_moments(weighted_moments(upper, {ones.data(), upper.size()}));
  return Family::make({0.5, 0.5}, {c0, c1});
}

enum class EmOutcome { kOk, kDegenerate };

// A second component must pay for its three extra parameters (BIC). When it
// does not, the data are one population and the split is an artifact of the
// moment updates, which cannot merge two components on their own.
template <typename Family>
bool second_component_supported(std::span<const double> x, double mixture_ll) {
  std::vector<double> ones(x.size(), 1.0);
  const auto single = Family::from_moments(weighted_moments(x, ones));
  double ll = 0.0;
  for (double l : x) ll += Family::log_pdf(l, single);
  ll /= static_cast<double>(x.size());
  const double n = static_cast<double>(x.size());
  return n * (mixture_ll - ll) > 1.5 * std::log(n);
}

template <typename Family>
EmOutcome run_em(std::span<const double> x, const EmOptions& options,
                 typename Family::Model& model, FitDiagnostics& diag) {
  const std::size_t n = x.size();
  std::array<std::vector<double>, 2> resp{std::vector<double>(n), std::vector<double>(n)};
  diag.iterations = 0;
  diag.converged = false;
  diag.log_likelihood_trace.clear();

  for (int it = 0; it < options.max_iters; ++it) {
    // E-step.
    double ll_before = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a0 = std::log(model.weights[0]) + Family::log_pdf(x[i], model.components[0]);
      const double a1 = std::log(model.weights[1]) + Family::log_pdf(x[i], model.components[1]);
      const auto p = normalize_log_terms(a0, a1);
      resp[0][i] = p[0];
      resp[1][i] = p[1];
      ll_before += log_sum_exp(a0, a1);
    }
    ll_before /= static_cast<double>(n);

    // M-step: exact for the weights, moment-matched (with backtracking) for shapes.
    std::array<double, 2> weights{};
    std::array<typename Family::Component, 2> comps = model.components;
    for (std::size_t k = 0; k < 2; ++k) {
      double sum = 0.0;
      for (double r : resp[k]) sum += r;
      weights[k] = sum / static_cast<double>(n);
      if (weights[k] < kMinWeight) return EmOutcome::kDegenerate;

      const auto candidate = Family::from_moments(weighted_moments(x, resp[k]));
      const double q_old = expected_component_ll<Family>(x, resp[k], model.components[k]);
      double t = 1.0;
      for (int step = 0; step < 12; ++step, t *= 0.5) {
        const auto trial = Family::blend(model.components[k], candidate, t);
        if (expected_component_ll<Family>(x, resp[k], trial) >= q_old) {
          comps[k] = trial;
          break;
        }
      }
    }
    const double wsum = weights[0] + weights[1];
    model = Family::make({weights[0] / wsum, weights[1] / wsum}, comps);

    const double ll_after = mean_log_likelihood<Family>(x, model);
    diag.iterations = it + 1;
    diag.log_likelihood_trace.push_back(ll_after);
    diag.final_log_likelihood = ll_after;
    if (!std::isfinite(ll_after)) return EmOutcome::kDegenerate;
    if (ll_after - ll_before < options.tol) {
      diag.converged = true;
      break;
    }
  }
  if (!second_component_supported<Family>(x, diag.final_log_likelihood)) {
    return EmOutcome::kDegenerate;
  }
  return EmOutcome::kOk;
}

template <typename Family>
MixtureFit<typename Family::Model> fit(std::span<const double> x, const EmOptions& options,
                                       std::string_view name) {
  if (x.size() < 10) {
    throw Error(ErrorKind::kPrecondition,
                fmt::format("{} fit needs at least 10 samples, got {}", name, x.size()));
  }
  if (options.max_iters < 1) {
    throw Error(ErrorKind::kPrecondition, "max_iters must be at least 1");
  }
  MixtureFit<typename Family::Model> result;
  result.model = initialize<Family>(x, 0.5, 0.5);
  if (run_em<Family>(x, options, result.model, result.diagnostics) == EmOutcome::kOk) {
    return result;
  }
  // One retry from the outer thirds of the sorted sample.
  result.model = initialize<Family>(x, 1.0 / 3.0, 2.0 / 3.0);
  result.diagnostics.reinitialized = true;
  if (run_em<Family>(x, options, result.model, result.diagnostics) == EmOutcome::kOk) {
    return result;
  }
  throw Error(ErrorKind::kFitFailure,
              fmt::format("{} EM collapsed to a single component after re-initialization "
                          "(degenerate weights or no support for a second component)",
                          name));
}

void check_unit_interval(double l) {
  if (!(l > 0.0 && l < 1.0)) {
    throw Error(ErrorKind::kDomain, fmt::format("loss {} outside (0, 1)", l));
  }
}

std::size_t smaller_mean_index(double mean0, double mean1) {
  return mean1 < mean0 ? 1 : 0;
}

}  // namespace

BetaMixtureModel BetaMixtureModel::make(std::array<double, 2> weights,
                                        std::array<BetaComponent, 2> components) {
  for (const auto& c : components) {
    if (!(c.gamma > 0.0) || !(c.beta > 0.0)) {
      throw Error(ErrorKind::kPrecondition, "beta shape parameters must be positive");
    }
  }
  BetaMixtureModel m;
  m.weights = weights;
  m.components = components;
  m.clean_index = smaller_mean_index(components[0].mean(), components[1].mean());
  return m;
}

GaussianMixtureModel GaussianMixtureModel::make(std::array<double, 2> weights,
                                                std::array<GaussianComponent, 2> components) {
  GaussianMixtureModel m;
  m.weights = weights;
  m.components = components;
  m.clean_index =
      smaller_mean_index(components[0].mean, components[1].mean);
  return m;
}

std::vector<double> normalize_losses(std::span<const double> losses) {
  if (losses.empty()) {
    throw Error(ErrorKind::kPrecondition, "cannot normalize an empty loss list");
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (double l : losses) {
    if (!std::isfinite(l)) throw Error(ErrorKind::kDomain, "non-finite loss value");
    lo = std::min(lo, l);
    hi = std::max(hi, l);
  }
  if (!(hi > lo)) {
    throw Error(ErrorKind::kDegenerateDistribution,
                fmt::format("degenerate loss distribution: all {} values equal {}",
                            losses.size(), lo));
  }
  std::vector<double> out;
  out.reserve(losses.size());
  const double range = hi - lo;
  for (double l : losses) {
    out.push_back(std::clamp((l - lo) / range, kLossClamp, 1.0 - kLossClamp));
  }
  return out;
}

double log_beta_pdf(double l, const BetaComponent& c) {
  check_unit_interval(l);
  return std::lgamma(c.gamma + c.beta) - std::lgamma(c.gamma) - std::lgamma(c.beta) +
         (c.gamma - 1.0) * std::log(l) + (c.beta - 1.0) * std::log1p(-l);
}

double beta_pdf(double l, const BetaComponent& c) { return std::exp(log_beta_pdf(l, c)); }

double mixture_pdf(double l, const BetaMixtureModel& model) {
  return model.weights[0] * beta_pdf(l, model.components[0]) +
         model.weights[1] * beta_pdf(l, model.components[1]);
}

std::array<double, 2> posteriors(double l, const BetaMixtureModel& model) {
  return normalize_log_terms(
      std::log(model.weights[0]) + log_beta_pdf(l, model.components[0]),
      std::log(model.weights[1]) + log_beta_pdf(l, model.components[1]));
}

double posterior_clean(double l, const BetaMixtureModel& model) {
  return posteriors(l, model)[model.clean_index];
}

MixtureFit<BetaMixtureModel> em_fit(std::span<const double> losses, const EmOptions& options) {
  for (double l : losses) check_unit_interval(l);
  return fit<BetaFamily>(losses, options, "beta mixture");
}

double gaussian_pdf(double l, const GaussianComponent& c) {
  return std::exp(GaussianFamily::log_pdf(l, c));
}

double mixture_pdf(double l, const GaussianMixtureModel& model) {
  return model.weights[0] * gaussian_pdf(l, model.components[0]) +
         model.weights[1] * gaussian_pdf(l, model.components[1]);
}

std::array<double, 2> posteriors(double l, const GaussianMixtureModel& model) {
  return normalize_log_terms(
      std::log(model.weights[0]) + GaussianFamily::log_pdf(l, model.components[0]),
      std::log(model.weights[1]) + GaussianFamily::log_pdf(l, model.components[1]));
}

double posterior_clean(double l, const GaussianMixtureModel& model) {
  return posteriors(l, model)[model.clean_index];
}

MixtureFit<GaussianMixtureModel> gaussian_em_fit(std::span<const double> losses,
                                                 const EmOptions& options) {
  for (double l : losses) {
    if (!std::isfinite(l)) throw Error(ErrorKind::kDomain, "non-finite loss value");
  }
  return fit<GaussianFamily>(losses, options, "gaussian mixture");
}

LossMixtureFit fit_mixture(MixtureKind kind, std::span<const double> normalized,
                           const EmOptions& options) {
  if (kind == MixtureKind::kBeta) {
    auto f = em_fit(normalized, options);
    return {f.model, std::move(f.diagnostics)};
  }
  auto f = gaussian_em_fit(normalized, options);
  return {f.model, std::move(f.diagnostics)};
}

double posterior_clean(double l, const LossMixture& model) {
  return std::visit([l](const auto& m) { return posterior_clean(l, m); }, model);
}

double mixture_pdf(double l, const LossMixture& model) {
  return std::visit([l](const auto& m) { return mixture_pdf(l, m); }, model);
}

double component_pdf(double l, const LossMixture& model, std::size_t k) {
  if (const auto* beta = std::get_if<BetaMixtureModel>(&model)) {
    return beta_pdf(l, beta->components.at(k));
  }
  return gaussian_pdf(l, std::get<GaussianMixtureModel>(model).components.at(k));
}

void write_model_record(std::ostream& out, const LossMixture& model,
                        const FitDiagnostics& diagnostics) {
  if (const auto* beta = std::get_if<BetaMixtureModel>(&model)) {
    fmt::print(out, "kind = beta\n");
    for (std::size_t k = 0; k < 2; ++k) {
      fmt::print(out, "weight_{} = {:.17g}\n", k, beta->weights[k]);
      fmt::print(out, "gamma_{} = {:.17g}\n", k, beta->components[k].gamma);
      fmt::print(out, "beta_{} = {:.17g}\n", k, beta->components[k].beta);
    }
    fmt::print(out, "clean_index = {}\n", beta->clean_index);
  } else {
    const auto& gmm = std::get<GaussianMixtureModel>(model);
    fmt::print(out, "kind = gaussian\n");
    for (std::size_t k = 0; k < 2; ++k) {
      fmt::print(out, "weight_{} = {:.17g}\n", k, gmm.weights[k]);
      fmt::print(out, "mean_{} = {:.17g}\n", k, gmm.components[k].mean);
      fmt::print(out, "variance_{} = {:.17g}\n", k, gmm.components[k].variance);
    }
    fmt::print(out, "clean_index = {}\n", gmm.clean_index);
  }
  fmt::print(out, "iterations = {}\n", diagnostics.iterations);
  fmt::print(out, "log_likelihood = {:.17g}\n", diagnostics.final_log_likelihood);
  fmt::print(out, "converged = {}\n", diagnostics.converged);
  fmt::print(out, "reinitialized = {}\n", diagnostics.reinitialized);
}

}  // namespace bicro
