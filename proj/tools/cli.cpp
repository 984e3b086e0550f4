#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "bicro/co_train.hpp"
#include "bicro/config.hpp"
#include "bicro/datagen.hpp"
#include "bicro/error.hpp"
#include "bicro/eval.hpp"
#include "bicro/match_model.hpp"
#include "bicro/mixture.hpp"
#include "bicro/rectify.hpp"

namespace bicro::cli {
namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::shared_ptr<spdlog::logger> make_logger(std::ostream& err) {
  const char* env = std::getenv("BICRO_LOG");
  const std::string level = env ? env : "info";
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_st>(err);
  auto log = std::make_shared<spdlog::logger>("bicro", sink);
  log->set_pattern("[%l] %v");
  if (level == "quiet") log->set_level(spdlog::level::warn);
  else if (level == "info") log->set_level(spdlog::level::info);
  else if (level == "debug") log->set_level(spdlog::level::debug);
  else throw UsageError(fmt::format("BICRO_LOG must be quiet, info or debug, got '{}'", level));
  return log;
}

template <typename T>
std::string opt(const std::optional<T>& v) {
  return v ? fmt::format("{}", *v) : std::string{};
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, fmt::format("cannot write {}", path.string()));
  return out;
}

void close_out(std::ofstream& out, const fs::path& path) {
  out.close();
  if (!out) throw Error(ErrorKind::kIo, fmt::format("error writing {}", path.string()));
}

ExperimentConfig config_or_default(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : load_config(path);
}

std::vector<double> read_losses(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, fmt::format("cannot open {}", path.string()));
  std::vector<double> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    double v = 0.0;
    const char* first = line.data() + b;
    const char* last = line.data() + e + 1;
    auto [p, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || p != last || !std::isfinite(v)) {
      throw Error(ErrorKind::kFormat, fmt::format("{}:{}: not a number", path.string(), line_no));
    }
    out.push_back(v);
  }
  return out;
}

// ---- gen -------------------------------------------------------------------

struct GenArgs {
  std::string spec, out, test_out, format = "text";
};

int cmd_gen(const GenArgs& a, std::optional<std::uint64_t> seed, std::ostream& out,
            spdlog::logger& log) {
  auto cfg = load_config(a.spec);
  if (seed) cfg.gen.seed = *seed;
  const auto fmt_kind = a.format == "binary" ? DatasetFormat::kBinary : DatasetFormat::kText;
  const auto data = generate_split(cfg.gen);
  save_dataset(data.train, a.out, fmt_kind);
  log.info("wrote {} pairs to {}", data.train.size(), a.out);
  if (!a.test_out.empty()) {
    save_dataset(data.test, a.test_out, fmt_kind);
    log.info("wrote {} held-out pairs to {}", data.test.size(), a.test_out);
  }
  fmt::print(out, "records: {}\ncorrupted: {}\n", data.train.size(), data.corrupted);
  if (data.weakened > 0) fmt::print(out, "weakened: {}\n", data.weakened);
  return kExitOk;
}

// ---- fit-mixture -----------------------------------------------------------

struct FitArgs {
  std::string losses, kind = "beta", out;
  std::size_t bins = 50;
};

int cmd_fit(const FitArgs& a, std::ostream& out, spdlog::logger& log) {
  const auto raw = read_losses(a.losses);
  const auto kind = a.kind == "gaussian" ? MixtureKind::kGaussian : MixtureKind::kBeta;
  const auto normalized = normalize_losses(raw);
  const auto fit = fit_mixture(kind, normalized, {});
  log.info("{} mixture: {} iterations, log-likelihood {:.6f}", a.kind, fit.diagnostics.iterations,
           fit.diagnostics.final_log_likelihood);

  const fs::path model_path = a.out;
  auto model_out = open_out(model_path);
  write_model_record(model_out, fit.model, fit.diagnostics);
  close_out(model_out, model_path);

  const fs::path post_path = a.out + ".posteriors.csv";
  auto post = open_out(post_path);
  post << "index,loss,normalized,posterior_clean\n";
  for (std::size_t i = 0; i < raw.size(); ++i) {
    fmt::print(post, "{},{},{},{}\n", i, raw[i], normalized[i],
               posterior_clean(normalized[i], fit.model));
  }
  close_out(post, post_path);

  // Histogram over the normalized range against the fitted densities.
  const fs::path dens_path = a.out + ".density.csv";
  auto dens = open_out(dens_path);
  const double width = 1.0 / static_cast<double>(a.bins);
  std::vector<std::size_t> counts(a.bins, 0);
  for (double l : normalized) {
    counts[std::min(a.bins - 1, static_cast<std::size_t>(l / width))]++;
  }
  dens << "bin_center,empirical_density,mixture_density,component0_density,component1_density\n";
  for (std::size_t b = 0; b < a.bins; ++b) {
    const double c = (static_cast<double>(b) + 0.5) * width;
    const double emp = static_cast<double>(counts[b]) / (static_cast<double>(raw.size()) * width);
    fmt::print(dens, "{},{},{},{},{}\n", c, emp, mixture_pdf(c, fit.model),
               component_pdf(c, fit.model, 0), component_pdf(c, fit.model, 1));
  }
  close_out(dens, dens_path);

  fmt::print(out, "samples: {}\nconverged: {}\n", raw.size(), fit.diagnostics.converged);
  return kExitOk;
}

// ---- rectify ---------------------------------------------------------------

struct RectifyArgs {
  std::string data, checkpoint, config, out;
};

int cmd_rectify(const RectifyArgs& a, std::optional<std::uint64_t> seed, std::ostream& out,
                spdlog::logger& log) {
  auto cfg = config_or_default(a.config);
  if (seed) cfg.train.seed = *seed;
  const auto dataset = load_dataset(a.data);
  const auto model = load_checkpoint(a.checkpoint);
  const auto table = FeatureTable::from(dataset);
  const auto& t = cfg.train;

  // A single model partitions with its own losses.
  const auto losses = per_sample_losses(model, table, t.loss, t.batch_size, t.seed);
  const auto normalized = normalize_losses(losses);
  const auto fit = fit_mixture(t.mixture_kind, normalized, t.em);
  std::vector<double> post;
  post.reserve(normalized.size());
  for (double l : normalized) post.push_back(posterior_clean(l, fit.model));
  const auto part = partition(post, t.partition);
  const auto labels = rectify_all(part, encode_images(model, table.images),
                                  encode_texts(model, table.texts), t.partition, t.bicro_star());

  const fs::path path = a.out;
  auto file = open_out(path);
  write_soft_label_table(file, labels);
  close_out(file, path);

  fmt::print(out, "anchors: {}\nnoisy: {}\n", part.anchors.size(), part.noisy.size());
  if (dataset.has_truth()) {
    const auto truth = dataset.truth_mask();
    const auto aq = anchor_quality(part.anchors, truth);
    fmt::print(out, "anchor_precision: {}\nanchor_recall: {}\n", aq.precision, aq.recall);
    try {
      const auto q = soft_label_quality(labels, truth);
      fmt::print(out, "mean_y_true: {}\nmean_y_mismatch: {}\npoint_biserial: {}\n", q.mean_y_true,
                 q.mean_y_mismatch, q.point_biserial);
    } catch (const Error& e) {
      log.warn("soft-label quality unavailable: {}", e.what());
    }
  }
  return kExitOk;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string data, test_data, config, out_dir, variant, run_id = "run";
};

constexpr std::string_view kEpochHeader =
    "run_id,variant,noise_ratio,epoch,phase,model,mean_loss,train_loss,anchor_count,"
    "anchor_precision,anchor_recall,fit_iterations,fit_log_likelihood,fit_converged,fit_failed,"
    "labels_estimated,labels_zeroed,mean_label,mean_y_true,mean_y_mismatch,point_biserial\n";

constexpr std::string_view kSummaryHeader =
    "run_id,variant,noise_ratio,epsilon,theta,anchor_fraction,mixture_kind,seed,"
    "i2t_r1,i2t_r5,i2t_r10,t2i_r1,t2i_r5,t2i_r10,mean_recall,sum,"
    "anchor_precision,anchor_recall,mean_y_true,mean_y_mismatch,point_biserial\n";

void write_epoch_rows(std::ostream& log_out, std::string_view run_id, std::string_view variant,
                      double noise, const EpochReport& r) {
  const std::string_view phase =
      variant == "baseline" ? "baseline" : (r.clean_only ? "clean" : "soft");
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& s = r.models[k];
    const auto ap = s.anchors ? std::optional(s.anchors->precision) : std::nullopt;
    const auto ar = s.anchors ? std::optional(s.anchors->recall) : std::nullopt;
    const auto& lq = s.label_quality;
    fmt::print(log_out, "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", run_id,
               variant, noise, r.epoch, phase, k == 0 ? 'A' : 'B', s.mean_loss, s.train_loss,
               s.anchor_count, opt(ap), opt(ar), s.fit.iterations, s.fit.final_log_likelihood,
               s.fit.converged, s.fit_failed, s.labels_estimated, s.labels_zeroed, s.mean_label,
               lq ? fmt::format("{}", lq->mean_y_true) : "",
               lq ? fmt::format("{}", lq->mean_y_mismatch) : "",
               lq ? fmt::format("{}", lq->point_biserial) : "");
  }
}

int cmd_train(const TrainArgs& a, std::optional<std::uint64_t> seed, std::ostream& out,
              spdlog::logger& log) {
  if (a.run_id.find_first_of(",\n") != std::string::npos) {
    throw UsageError("--run-id must not contain commas or newlines");
  }
  auto cfg = load_config(a.config);
  if (seed) cfg.train.seed = *seed;
  if (!a.variant.empty()) set_config_value(cfg, "variant", a.variant);
  auto& t = cfg.train;
  t.validate();

  const auto dataset = load_dataset(a.data);
  std::optional<PairDataset> test;
  if (!a.test_data.empty()) test = load_dataset(a.test_data);
  else log.warn("no --test-data given; retrieval is measured on the training pairs");

  double noise = cfg.gen.noise_ratio;
  if (dataset.has_truth()) {
    const auto mask = dataset.truth_mask();
    noise = static_cast<double>(std::count(mask.begin(), mask.end(), false)) /
            static_cast<double>(mask.size());
  }

  const fs::path dir = a.out_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIo, fmt::format("cannot create {}: {}", dir.string(), ec.message()));

  {
    const auto cfg_path = dir / "config.txt";
    auto f = open_out(cfg_path);
    f << format_config(cfg);
    close_out(f, cfg_path);
  }

  const std::string variant{to_string(t.variant)};
  const auto log_path = dir / "epoch_log.csv";
  auto epoch_log = open_out(log_path);
  epoch_log << kEpochHeader;

  log.info("training {} on {} pairs ({} warmup + {} epochs)", variant, dataset.size(),
           t.use_warmup ? t.warmup_epochs : 0, t.total_epochs);
  const auto result = train(dataset, t, [&](const TrainerState& st, const EpochReport& r) {
    write_epoch_rows(epoch_log, a.run_id, variant, noise, r);
    const auto& s = r.models[0];
    log.info("epoch {} A: loss {:.4f} anchors {}{}", r.epoch, s.mean_loss, s.anchor_count,
             s.anchors ? fmt::format(" precision {:.3f}", s.anchors->precision) : "");
    if (s.labels_zeroed > 0) log.debug("epoch {} A: {} soft labels zeroed", r.epoch, s.labels_zeroed);
    if (t.checkpoint_every > 0 && st.epoch % t.checkpoint_every == 0) {
      save_checkpoint(st.models[0], dir / fmt::format("epoch_{:03}_a.ckpt", st.epoch));
      save_checkpoint(st.models[1], dir / fmt::format("epoch_{:03}_b.ckpt", st.epoch));
    }
  });
  close_out(epoch_log, log_path);
  save_checkpoint(result.model_a(), dir / "model_a.ckpt");
  save_checkpoint(result.model_b(), dir / "model_b.ckpt");

  const auto eval_table = FeatureTable::from(test ? *test : dataset);
  const auto sim =
      infer_similarity(result.model_a(), result.model_b(), eval_table.images, eval_table.texts);
  const auto rr = retrieval_report(sim);

  std::optional<AnchorQuality> aq;
  std::optional<SoftLabelQuality> lq;
  if (t.variant != Variant::kBaseline && t.total_epochs > 0) {
    const auto snap = rectification_snapshot(result.state, dataset, t);
    const auto labels_path = dir / "soft_labels.csv";
    auto f = open_out(labels_path);
    write_soft_label_table(f, snap.labels);
    close_out(f, labels_path);
    if (dataset.has_truth()) {
      const auto truth = dataset.truth_mask();
      aq = anchor_quality(snap.partition.partition.anchors, truth);
      const auto pos = std::count_if(snap.labels.begin(), snap.labels.end(),
                                     [&](const auto& r) { return truth[r.pair_id]; });
      if (pos > 0 && static_cast<std::size_t>(pos) < snap.labels.size()) {
        lq = soft_label_quality(snap.labels, truth);
      }
    }
  }

  const auto summary_path = dir / "summary.csv";
  auto summary = open_out(summary_path);
  summary << kSummaryHeader;
  fmt::print(summary, "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", a.run_id,
             variant, noise, t.epsilon, t.partition.theta, opt(t.partition.anchor_fraction),
             to_string(t.mixture_kind), t.seed, rr.i2t_r1, rr.i2t_r5, rr.i2t_r10, rr.t2i_r1,
             rr.t2i_r5, rr.t2i_r10, rr.mean_recall(), rr.sum,
             aq ? fmt::format("{}", aq->precision) : "", aq ? fmt::format("{}", aq->recall) : "",
             lq ? fmt::format("{}", lq->mean_y_true) : "",
             lq ? fmt::format("{}", lq->mean_y_mismatch) : "",
             lq ? fmt::format("{}", lq->point_biserial) : "");
  close_out(summary, summary_path);

  fmt::print(out, "sum: {:.2f}\nmean_recall: {:.2f}\n", rr.sum, rr.mean_recall());
  if (aq) fmt::print(out, "anchor_precision: {:.4f}\n", aq->precision);
  if (lq) fmt::print(out, "point_biserial: {:.4f}\n", lq->point_biserial);
  return kExitOk;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint_a, checkpoint_b, data;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto ma = load_checkpoint(a.checkpoint_a);
  const auto mb = load_checkpoint(a.checkpoint_b);
  if (ma.f.input_dim() != mb.f.input_dim() || ma.g.input_dim() != mb.g.input_dim()) {
    throw Error(ErrorKind::kDimensionMismatch, "checkpoints disagree on input dimensions");
  }
  const auto table = FeatureTable::from(load_dataset(a.data));
  const auto r = retrieval_report(infer_similarity(ma, mb, table.images, table.texts));
  out << "i2t_r1,i2t_r5,i2t_r10,t2i_r1,t2i_r5,t2i_r10,sum\n";
  fmt::print(out, "{},{},{},{},{},{},{}\n", r.i2t_r1, r.i2t_r5, r.i2t_r10, r.t2i_r1, r.t2i_r5,
             r.t2i_r10, r.sum);
  return kExitOk;
}

// ---- report ----------------------------------------------------------------

struct ReportArgs {
  std::string logs, sweep, out;
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

int cmd_report(const ReportArgs& a, std::ostream& out, spdlog::logger& log) {
  const std::string column = a.sweep == "noise" ? "noise_ratio" : a.sweep;
  if (!fs::is_directory(a.logs)) {
    throw Error(ErrorKind::kIo, fmt::format("{} is not a directory", a.logs));
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(a.logs)) {
    if (entry.is_regular_file() && entry.path().filename() == "summary.csv") {
      files.push_back(entry.path());
    }
  }
  if (files.empty()) throw Error(ErrorKind::kIo, fmt::format("no run logs under {}", a.logs));
  std::sort(files.begin(), files.end());

  static constexpr std::array<std::string_view, 7> kMetrics = {
      "i2t_r1", "i2t_r5", "i2t_r10", "t2i_r1", "t2i_r5", "t2i_r10", "sum"};
  struct Acc {
    std::size_t runs = 0;
    std::array<double, kMetrics.size()> totals{};
  };
  std::map<std::pair<std::string, double>, Acc> groups;

  for (const auto& path : files) {
    std::ifstream in(path);
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::kFormat, fmt::format("{} is empty", path.string()));
    const auto header = split_csv(line);
    auto col = [&](std::string_view name) {
      const auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) {
        throw Error(ErrorKind::kFormat, fmt::format("{} has no column {}", path.string(), name));
      }
      return static_cast<std::size_t>(it - header.begin());
    };
    const auto variant_col = col("variant");
    const auto x_col = col(column);
    std::array<std::size_t, kMetrics.size()> metric_cols{};
    for (std::size_t m = 0; m < kMetrics.size(); ++m) metric_cols[m] = col(kMetrics[m]);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = split_csv(line);
      if (cells.size() != header.size()) {
        throw Error(ErrorKind::kFormat, fmt::format("{}: row has {} cells, header {}",
                                                    path.string(), cells.size(), header.size()));
      }
      auto num = [&](std::size_t c) {
        try {
          return std::stod(cells[c]);
        } catch (const std::exception&) {
          throw Error(ErrorKind::kFormat,
                      fmt::format("{}: '{}' is not a number", path.string(), cells[c]));
        }
      };
      auto& acc = groups[{cells[variant_col], num(x_col)}];
      ++acc.runs;
      for (std::size_t m = 0; m < kMetrics.size(); ++m) acc.totals[m] += num(metric_cols[m]);
    }
  }
  log.info("aggregated {} files into {} rows", files.size(), groups.size());

  const fs::path path = a.out;
  auto f = open_out(path);
  fmt::print(f, "variant,{},runs,i2t_r1,i2t_r5,i2t_r10,t2i_r1,t2i_r5,t2i_r10,mean_recall,sum\n",
             a.sweep);
  for (const auto& [key, acc] : groups) {
    const double n = static_cast<double>(acc.runs);
    fmt::print(f, "{},{},{}", key.first, key.second, acc.runs);
    for (std::size_t m = 0; m + 1 < kMetrics.size(); ++m) fmt::print(f, ",{}", acc.totals[m] / n);
    fmt::print(f, ",{},{}\n", acc.totals[6] / n / 6.0, acc.totals[6] / n);
  }
  close_out(f, path);
  fmt::print(out, "rows: {}\n", groups.size());
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Noisy-correspondence rectification toolkit", "bicro"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");
  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "Override the configured seed");

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic paired dataset");
  g->add_option("--spec", gen.spec, "Config file with generator keys")->required();
  g->add_option("--out", gen.out, "Training split output path")->required();
  g->add_option("--test-out", gen.test_out, "Clean held-out split output path");
  g->add_option("--format", gen.format)->check(CLI::IsMember({"text", "binary"}));

  FitArgs fit;
  auto* f = app.add_subcommand("fit-mixture", "Fit a two-component mixture to per-sample losses");
  f->add_option("--losses", fit.losses, "One loss per line")->required();
  f->add_option("--kind", fit.kind)->check(CLI::IsMember({"beta", "gaussian"}));
  f->add_option("--out", fit.out, "Model record path; tables are written alongside")->required();
  f->add_option("--bins", fit.bins, "Histogram bins")->check(CLI::Range(1, 100000));

  RectifyArgs rect;
  auto* r = app.add_subcommand("rectify", "Partition a dataset and estimate soft labels");
  r->add_option("--data", rect.data)->required();
  r->add_option("--checkpoint", rect.checkpoint)->required();
  r->add_option("--config", rect.config);
  r->add_option("--out", rect.out, "Soft-label CSV path")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Co-train two matching models");
  t->add_option("--data", tr.data)->required();
  t->add_option("--test-data", tr.test_data, "Held-out split for retrieval");
  t->add_option("--config", tr.config)->required();
  t->add_option("--out-dir", tr.out_dir)->required();
  t->add_option("--variant", tr.variant)
      ->check(CLI::IsMember({"bicro", "bicro-star", "bicro_star", "baseline"}));
  t->add_option("--run-id", tr.run_id, "Label for log rows");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Retrieval recall of a model pair");
  e->add_option("--checkpoint-a", ev.checkpoint_a)->required();
  e->add_option("--checkpoint-b", ev.checkpoint_b)->required();
  e->add_option("--data", ev.data)->required();

  ReportArgs rep;
  auto* p = app.add_subcommand("report", "Aggregate run summaries into a sweep table");
  p->add_option("--logs", rep.logs)->required();
  p->add_option("--sweep", rep.sweep)
      ->required()
      ->check(CLI::IsMember({"epsilon", "theta", "noise"}));
  p->add_option("--out", rep.out)->required();

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& ex) {
    return app.exit(ex, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    auto log = make_logger(err);
    if (*g) return cmd_gen(gen, seed, out, *log);
    if (*f) return cmd_fit(fit, out, *log);
    if (*r) return cmd_rectify(rect, seed, out, *log);
    if (*t) return cmd_train(tr, seed, out, *log);
    if (*e) return cmd_eval(ev, out);
    if (*p) return cmd_report(rep, out, *log);
  } catch (const UsageError& ex) {
    fmt::print(err, "usage error: {}\n", ex.what());
    return kExitUsage;
  } catch (const Error& ex) {
    fmt::print(err, "error ({}): {}\n", to_string(ex.kind()), ex.what());
    return kExitRuntime;
  } catch (const std::exception& ex) {
    fmt::print(err, "error: {}\n", ex.what());
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace bicro::cli
