#include "bicro/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "bicro/error.hpp"

namespace bicro {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
  throw Error(ErrorKind::kConfig, fmt::format("{}: expected {}, got '{}'", key, want, value));
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || !std::isfinite(out)) {
    bad_value(key, v, "a number");
  }
  return out;
}

std::uint64_t to_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

int to_int(std::string_view key, std::string_view v) {
  const auto u = to_uint(key, v);
  if (u > 1'000'000'000) bad_value(key, v, "an integer below 1e9");
  return static_cast<int>(u);
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

double unit(std::string_view key, std::string_view v) {
  const double d = to_double(key, v);
  if (d < 0.0 || d > 1.0) bad_value(key, v, "a value in [0, 1]");
  return d;
}

double positive(std::string_view key, std::string_view v) {
  const double d = to_double(key, v);
  if (!(d > 0.0)) bad_value(key, v, "a positive value");
  return d;
}

}  // namespace

void set_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view v) {
  auto& g = cfg.gen;
  auto& t = cfg.train;
  if (key == "n_pairs") g.n_pairs = to_uint(key, v);
  else if (key == "test_pairs") g.test_pairs = to_uint(key, v);
  else if (key == "latent_dim") g.latent_dim = to_uint(key, v);
  else if (key == "image_dim") g.image_dim = to_uint(key, v);
  else if (key == "text_dim") g.text_dim = to_uint(key, v);
  else if (key == "noise_ratio") g.noise_ratio = unit(key, v);
  else if (key == "modality_noise_sigma") {
    g.modality_noise_sigma = to_double(key, v);
    if (g.modality_noise_sigma < 0.0) bad_value(key, v, "a non-negative value");
  } else if (key == "weak_ratio") g.weak_ratio = unit(key, v);
  else if (key == "weak_blend") g.weak_blend = unit(key, v);
  else if (key == "seed") {
    g.seed = to_uint(key, v);
    t.seed = g.seed;
  } else if (key == "alpha") t.loss.alpha = positive(key, v);
  else if (key == "m") {
    t.loss.m = to_double(key, v);
    if (!(t.loss.m > 1.0)) bad_value(key, v, "a value above 1");
  } else if (key == "anchor_fraction") {
    const double q = unit(key, v);
    if (q == 0.0) bad_value(key, v, "a value in (0, 1]");
    t.partition.anchor_fraction = q;
    t.partition.delta.reset();
  } else if (key == "delta") {
    t.partition.delta = unit(key, v);
    t.partition.anchor_fraction.reset();
  } else if (key == "theta") t.partition.theta = unit(key, v);
  else if (key == "epsilon") {
    t.epsilon = unit(key, v);
    if (t.epsilon == 0.0) bad_value(key, v, "a value in (0, 1]");
  } else if (key == "epsilon_d") t.partition.epsilon_d = positive(key, v);
  else if (key == "warmup_epochs") t.warmup_epochs = to_int(key, v);
  else if (key == "total_epochs") t.total_epochs = to_int(key, v);
  else if (key == "clean_only_epochs") t.clean_only_epochs = to_int(key, v);
  else if (key == "batch_size") {
    t.batch_size = to_uint(key, v);
    if (t.batch_size < 2) bad_value(key, v, "at least 2");
  } else if (key == "lr") t.lr = positive(key, v);
  else if (key == "shared_dim") {
    t.shared_dim = to_uint(key, v);
    if (t.shared_dim == 0) bad_value(key, v, "a positive integer");
  } else if (key == "variant") {
    if (v == "bicro") t.variant = Variant::kBicro;
    else if (v == "bicro_star" || v == "bicro-star") t.variant = Variant::kBicroStar;
    else if (v == "baseline") t.variant = Variant::kBaseline;
    else bad_value(key, v, "bicro, bicro_star or baseline");
  } else if (key == "bicro_star") {
    if (to_bool(key, v)) t.variant = Variant::kBicroStar;
    else if (t.variant == Variant::kBicroStar) t.variant = Variant::kBicro;
  } else if (key == "mixture_kind") {
    if (v == "beta") t.mixture_kind = MixtureKind::kBeta;
    else if (v == "gaussian") t.mixture_kind = MixtureKind::kGaussian;
    else bad_value(key, v, "beta or gaussian");
  } else if (key == "use_co_teaching") t.use_co_teaching = to_bool(key, v);
  else if (key == "use_soft_labels") t.use_soft_labels = to_bool(key, v);
  else if (key == "use_warmup") t.use_warmup = to_bool(key, v);
  else if (key == "em_max_iters") {
    t.em.max_iters = to_int(key, v);
    if (t.em.max_iters < 1) bad_value(key, v, "at least 1");
  } else if (key == "em_tol") t.em.tol = positive(key, v);
  else if (key == "checkpoint_every") t.checkpoint_every = to_int(key, v);
  else throw Error(ErrorKind::kConfig, fmt::format("unknown key '{}'", key));
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorKind::kConfig, fmt::format("line {}: expected 'key = value'", line_no));
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    try {
      set_config_value(cfg, key, value);
    } catch (const Error& e) {
      throw Error(ErrorKind::kConfig, fmt::format("line {}: {}", line_no, e.what()));
    }
  }
  try {
    cfg.gen.validate();
    cfg.train.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfig, e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, fmt::format("cannot open config {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const ExperimentConfig& cfg) {
  const auto& g = cfg.gen;
  const auto& t = cfg.train;
  std::string out;
  auto put = [&](std::string_view k, const auto& v) { out += fmt::format("{} = {}\n", k, v); };
  put("n_pairs", g.n_pairs);
  put("test_pairs", g.test_pairs);
  put("latent_dim", g.latent_dim);
  put("image_dim", g.image_dim);
  put("text_dim", g.text_dim);
  put("noise_ratio", g.noise_ratio);
  put("modality_noise_sigma", g.modality_noise_sigma);
  put("weak_ratio", g.weak_ratio);
  put("weak_blend", g.weak_blend);
  put("seed", t.seed);
  put("alpha", t.loss.alpha);
  put("m", t.loss.m);
  if (t.partition.anchor_fraction) put("anchor_fraction", *t.partition.anchor_fraction);
  if (t.partition.delta) put("delta", *t.partition.delta);
  put("theta", t.partition.theta);
  put("epsilon", t.epsilon);
  put("epsilon_d", t.partition.epsilon_d);
  put("warmup_epochs", t.warmup_epochs);
  put("total_epochs", t.total_epochs);
  put("clean_only_epochs", t.clean_only_epochs);
  put("batch_size", t.batch_size);
  put("lr", t.lr);
  put("shared_dim", t.shared_dim);
  put("variant", to_string(t.variant));
  put("mixture_kind", to_string(t.mixture_kind));
  put("use_co_teaching", t.use_co_teaching);
  put("use_soft_labels", t.use_soft_labels);
  put("use_warmup", t.use_warmup);
  put("em_max_iters", t.em.max_iters);
  put("em_tol", t.em.tol);
  put("checkpoint_every", t.checkpoint_every);
  return out;
}

}  // namespace bicro
