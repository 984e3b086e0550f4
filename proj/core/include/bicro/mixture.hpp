#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace bicro {

// Endpoint clamp applied after min-max scaling; keeps beta densities finite.
inline constexpr double kLossClamp = 1e-4;

struct BetaComponent {
  double gamma = 1.0;
  double beta = 1.0;

  double mean() const { return gamma / (gamma + beta); }
};

struct BetaMixtureModel {
  std::array<double, 2> weights{0.5, 0.5};
  std::array<BetaComponent, 2> components{};
  std::size_t clean_index = 0;

  // Builds a model and derives clean_index from the component means.
  static BetaMixtureModel make(std::array<double, 2> weights,
                               std::array<BetaComponent, 2> components);
};

struct GaussianComponent {
  double mean = 0.0;
  double variance = 1.0;
};

struct GaussianMixtureModel {
  std::array<double, 2> weights{0.5, 0.5};
  std::array<GaussianComponent, 2> components{};
  std::size_t clean_index = 0;

  static GaussianMixtureModel make(std::array<double, 2> weights,
                                   std::array<GaussianComponent, 2> components);
};

struct FitDiagnostics {
  int iterations = 0;
  double final_log_likelihood = 0.0;  // mean per-sample log-likelihood
  bool converged = false;
  bool reinitialized = false;
  std::vector<double> log_likelihood_trace;  // one entry per iteration
};

struct EmOptions {
  int max_iters = 50;
  double tol = 1e-6;
};

template <typename Model>
struct MixtureFit {
  Model model;
  FitDiagnostics diagnostics;
};

// Min-max scaling to [0, 1] followed by clamping to [kLossClamp, 1 - kLossClamp].
// Throws kDegenerateDistribution when all losses are equal.
std::vector<double> normalize_losses(std::span<const double> losses);

double beta_pdf(double l, const BetaComponent& c);
double log_beta_pdf(double l, const BetaComponent& c);
double mixture_pdf(double l, const BetaMixtureModel& model);

// Fits a two-component beta mixture by EM with a weighted method-of-moments
// M-step. A moment update is accepted only if it does not lower the expected
// complete-data log-likelihood (backtracking towards the previous parameters
// otherwise), so the observed log-likelihood never decreases.
MixtureFit<BetaMixtureModel> em_fit(std::span<const double> losses,
                                    const EmOptions& options = {});

// p(k = clean | l). Returns 0.5 when both component densities underflow.
double posterior_clean(double l, const BetaMixtureModel& model);
std::array<double, 2> posteriors(double l, const BetaMixtureModel& model);

double gaussian_pdf(double l, const GaussianComponent& c);
double mixture_pdf(double l, const GaussianMixtureModel& model);
MixtureFit<GaussianMixtureModel> gaussian_em_fit(std::span<const double> losses,
                                                 const EmOptions& options = {});
double posterior_clean(double l, const GaussianMixtureModel& model);
std::array<double, 2> posteriors(double l, const GaussianMixtureModel& model);

// Either kind of fitted model, for callers that switch on configuration.
using LossMixture = std::variant<BetaMixtureModel, GaussianMixtureModel>;

enum class MixtureKind { kBeta, kGaussian };

struct LossMixtureFit {
  LossMixture model;
  FitDiagnostics diagnostics;
};

LossMixtureFit fit_mixture(MixtureKind kind, std::span<const double> normalized,
                           const EmOptions& options = {});
double posterior_clean(double l, const LossMixture& model);
double mixture_pdf(double l, const LossMixture& model);
// Density of component k alone (not weighted).
double component_pdf(double l, const LossMixture& model, std::size_t k);

// Plain-text key-value record, one `key = value` per line.
void write_model_record(std::ostream& out, const LossMixture& model,
                        const FitDiagnostics& diagnostics);

}  // namespace bicro
