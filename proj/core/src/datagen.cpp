#include "bicro/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "bicro/error.hpp"

namespace bicro {
namespace {

constexpr std::string_view kDatasetMagic = "BICRODS1";
constexpr std::uint32_t kDatasetVersion = 1;
constexpr std::uint32_t kFlagHasTruth = 1u;
constexpr int kTextVersion = 1;

double to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

Eigen::MatrixXd random_projection(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(cols)));
  Eigen::MatrixXd p(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    for (Eigen::Index c = 0; c < p.cols(); ++c) p(r, c) = normal(rng);
  }
  return p;
}

struct Projections {
  Eigen::MatrixXd image;
  Eigen::MatrixXd text;
};

PairRecord draw_pair(std::size_t id, const Projections& proj, std::size_t latent_dim,
                     double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(static_cast<Eigen::Index>(latent_dim));
  for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = normal(rng);
  PairRecord r;
  r.id = id;
  r.image = proj.image * z;
  r.text = proj.text * z;
  for (Eigen::Index k = 0; k < r.image.size(); ++k) r.image[k] = to_f32(r.image[k] + sigma * normal(rng));
  for (Eigen::Index k = 0; k < r.text.size(); ++k) r.text[k] = to_f32(r.text[k] + sigma * normal(rng));
  r.label = 1;
  r.true_match = true;
  return r;
}

void check_corruptible(std::size_t k, std::size_t n) {
  if (k == 0) return;
  if (k == 1 || k >= n - 1) {
    throw Error(ErrorKind::kGeneration,
                fmt::format("cannot derange {} of {} pairs (need 2 <= count < N - 1)", k, n));
  }
}

// Picks k records uniformly and rotates their texts along one random cycle.
std::size_t corrupt(std::vector<PairRecord>& records, std::size_t k, std::mt19937_64& rng) {
  check_corruptible(k, records.size());
  if (k == 0) return 0;
  std::vector<std::size_t> all(records.size());
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  std::vector<std::size_t> chosen(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<Eigen::VectorXd> texts;
  texts.reserve(k);
  for (std::size_t i : chosen) texts.push_back(records[i].text);
  for (std::size_t c = 0; c < k; ++c) {
    auto& rec = records[chosen[c]];
    rec.text = texts[(c + 1) % k];
    rec.true_match = false;
    rec.label = 1;
  }
  return k;
}

std::size_t weaken(std::vector<PairRecord>& records, double ratio, double blend,
                   std::mt19937_64& rng) {
  std::vector<std::size_t> clean;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].true_match.value_or(true)) clean.push_back(i);
  }
  const auto k = std::min(clean.size(), corrupted_count(ratio, records.size()));
  if (k == 0 || records.size() < 2) return 0;
  std::shuffle(clean.begin(), clean.end(), rng);
  std::uniform_int_distribution<std::size_t> pick(0, records.size() - 2);
  std::vector<Eigen::VectorXd> originals;
  originals.reserve(records.size());
  for (const auto& r : records) originals.push_back(r.text);
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t i = clean[c];
    std::size_t other = pick(rng);
    if (other >= i) ++other;
    Eigen::VectorXd mixed = (1.0 - blend) * originals[i] + blend * originals[other];
    for (Eigen::Index d = 0; d < mixed.size(); ++d) mixed[d] = to_f32(mixed[d]);
    records[i].text = std::move(mixed);
  }
  return k;
}

nlohmann::json vector_json(const Eigen::VectorXd& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Eigen::VectorXd json_vector(const nlohmann::json& arr, std::size_t dim, std::string_view what) {
  if (!arr.is_array() || arr.size() != dim) {
    throw Error(ErrorKind::kFormat, fmt::format("{} must be an array of {} numbers", what, dim));
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < dim; ++i) v[static_cast<Eigen::Index>(i)] = to_f32(arr[i].get<double>());
  return v;
}

void save_text(const PairDataset& d, std::ostream& out) {
  nlohmann::json header = {{"format", "bicro-dataset"},
                           {"version", kTextVersion},
                           {"count", d.size()},
                           {"image_dim", d.image_dim},
                           {"text_dim", d.text_dim}};
  out << header.dump() << '\n';
  for (const auto& r : d.records) {
    nlohmann::json j = {{"id", r.id},
                        {"image", vector_json(r.image)},
                        {"text", vector_json(r.text)},
                        {"label", r.label}};
    if (r.true_match) j["true_match"] = *r.true_match;
    out << j.dump() << '\n';
  }
}

PairDataset load_text(std::istream& in, const std::string& source) {
  std::string line;
  std::uint64_t offset = 0;
  auto fail = [&](const std::string& msg) {
    return Error(ErrorKind::kFormat, fmt::format("{}: {} (line at byte offset {})", source, msg, offset));
  };
  if (!std::getline(in, line)) throw fail("empty file, missing header");
  PairDataset d;
  std::size_t count = 0;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.value("format", "") != "bicro-dataset") throw fail("not a bicro dataset header");
    if (header.at("version").get<int>() != kTextVersion) throw fail("unsupported version");
    count = header.at("count").get<std::size_t>();
    d.image_dim = header.at("image_dim").get<std::size_t>();
    d.text_dim = header.at("text_dim").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw fail(fmt::format("bad header: {}", e.what()));
  }
  offset += line.size() + 1;
  d.records.reserve(count);
  while (std::getline(in, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    try {
      const auto j = nlohmann::json::parse(line);
      PairRecord r;
      r.id = j.at("id").get<std::size_t>();
      r.image = json_vector(j.at("image"), d.image_dim, "image");
      r.text = json_vector(j.at("text"), d.text_dim, "text");
      r.label = j.at("label").get<int>();
      if (j.contains("true_match")) r.true_match = j.at("true_match").get<bool>();
      d.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw fail(fmt::format("bad record: {}", e.what()));
    } catch (const Error& e) {
      throw fail(e.what());
    }
    offset += line.size() + 1;
  }
  if (d.records.size() != count) {
    throw fail(fmt::format("header declares {} records, found {}", count, d.records.size()));
  }
  d.validate();
  return d;
}

void save_binary(const PairDataset& d, std::ostream& out) {
  const bool truth = d.has_truth();
  out.write(kDatasetMagic.data(), static_cast<std::streamsize>(kDatasetMagic.size()));
  detail::write_le<std::uint32_t>(out, kDatasetVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.size()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.image_dim));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.text_dim));
  detail::write_le<std::uint32_t>(out, truth ? kFlagHasTruth : 0u);
  for (const auto& r : d.records) {
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.id));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.label));
    if (truth) detail::write_le<std::uint32_t>(out, *r.true_match ? 1u : 0u);
    for (Eigen::Index k = 0; k < r.image.size(); ++k) detail::write_le(out, static_cast<float>(r.image[k]));
    for (Eigen::Index k = 0; k < r.text.size(); ++k) detail::write_le(out, static_cast<float>(r.text[k]));
  }
}

PairDataset load_binary(std::istream& in, const std::string& source) {
  detail::LeReader reader(in, source);
  reader.expect_magic(kDatasetMagic);
  const auto version = reader.read<std::uint32_t>("version");
  if (version != kDatasetVersion) {
    throw Error(ErrorKind::kFormat,
                fmt::format("{}: unsupported version {} at byte offset 8", source, version));
  }
  const auto count = reader.read<std::uint32_t>("count");
  PairDataset d;
  d.image_dim = reader.read<std::uint32_t>("image_dim");
  d.text_dim = reader.read<std::uint32_t>("text_dim");
  const auto flags = reader.read<std::uint32_t>("flags");
  if (d.image_dim == 0 || d.text_dim == 0) {
    throw Error(ErrorKind::kFormat, fmt::format("{}: zero dimension in header", source));
  }
  if ((flags & ~kFlagHasTruth) != 0u) {
    throw Error(ErrorKind::kFormat, fmt::format("{}: unknown flags {:#x} at byte offset 24", source, flags));
  }
  d.records.reserve(count);
  for (std::uint32_t n = 0; n < count; ++n) {
    PairRecord r;
    r.id = reader.read<std::uint32_t>("record id");
    r.label = static_cast<int>(reader.read<std::uint32_t>("label"));
    if (flags & kFlagHasTruth) r.true_match = reader.read<std::uint32_t>("true_match") != 0u;
    r.image.resize(static_cast<Eigen::Index>(d.image_dim));
    r.text.resize(static_cast<Eigen::Index>(d.text_dim));
    for (Eigen::Index k = 0; k < r.image.size(); ++k) r.image[k] = reader.read<float>("image");
    for (Eigen::Index k = 0; k < r.text.size(); ++k) r.text[k] = reader.read<float>("text");
    d.records.push_back(std::move(r));
  }
  reader.expect_end();
  d.validate();
  return d;
}

}  // namespace

void GenSpec::validate() const {
  if (n_pairs < 4) throw Error(ErrorKind::kConfig, "n_pairs must be at least 4");
  if (latent_dim == 0) throw Error(ErrorKind::kConfig, "latent_dim must be positive");
  if (image_dim < latent_dim || text_dim < latent_dim) {
    throw Error(ErrorKind::kConfig, "image_dim and text_dim must be >= latent_dim");
  }
  if (!(noise_ratio >= 0.0 && noise_ratio < 1.0)) {
    throw Error(ErrorKind::kConfig, fmt::format("noise_ratio = {} outside [0, 1)", noise_ratio));
  }
  if (!(modality_noise_sigma >= 0.0)) {
    throw Error(ErrorKind::kConfig, "modality_noise_sigma must be >= 0");
  }
  if (!(weak_ratio >= 0.0 && weak_ratio < 1.0)) {
    throw Error(ErrorKind::kConfig, fmt::format("weak_ratio = {} outside [0, 1)", weak_ratio));
  }
  if (!(weak_blend >= 0.0 && weak_blend <= 1.0)) {
    throw Error(ErrorKind::kConfig, fmt::format("weak_blend = {} outside [0, 1]", weak_blend));
  }
}

std::size_t corrupted_count(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
}

GeneratedData generate_split(const GenSpec& spec) {
  spec.validate();
  const std::size_t k = corrupted_count(spec.noise_ratio, spec.n_pairs);
  check_corruptible(k, spec.n_pairs);

  std::mt19937_64 rng(spec.seed);
  Projections proj{random_projection(spec.image_dim, spec.latent_dim, rng),
                   random_projection(spec.text_dim, spec.latent_dim, rng)};
  GeneratedData out;
  out.train.image_dim = out.test.image_dim = spec.image_dim;
  out.train.text_dim = out.test.text_dim = spec.text_dim;
  out.train.records.reserve(spec.n_pairs);
  for (std::size_t i = 0; i < spec.n_pairs; ++i) {
    out.train.records.push_back(draw_pair(i, proj, spec.latent_dim, spec.modality_noise_sigma, rng));
  }
  out.corrupted = corrupt(out.train.records, k, rng);
  out.weakened = weaken(out.train.records, spec.weak_ratio, spec.weak_blend, rng);
  out.test.records.reserve(spec.test_pairs);
  for (std::size_t i = 0; i < spec.test_pairs; ++i) {
    out.test.records.push_back(draw_pair(i, proj, spec.latent_dim, spec.modality_noise_sigma, rng));
  }
  return out;
}

PairDataset generate(const GenSpec& spec) { return generate_split(spec).train; }

PairDataset inject_noise(const PairDataset& dataset, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw Error(ErrorKind::kGeneration, fmt::format("noise ratio {} outside [0, 1)", ratio));
  }
  for (const auto& r : dataset.records) {
    if (!r.true_match.value_or(false)) {
      throw Error(ErrorKind::kPrecondition,
                  "noise can only be injected into a dataset of known-clean pairs");
    }
  }
  PairDataset out = dataset;
  std::mt19937_64 rng(seed);
  corrupt(out.records, corrupted_count(ratio, out.size()), rng);
  return out;
}

void save_dataset(const PairDataset& dataset, const std::filesystem::path& path,
                  DatasetFormat format) {
  dataset.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, fmt::format("cannot write dataset {}", path.string()));
  if (format == DatasetFormat::kText) {
    save_text(dataset, out);
  } else {
    save_binary(dataset, out);
  }
  out.flush();
  if (!out) throw Error(ErrorKind::kIo, fmt::format("failed writing {}", path.string()));
}

PairDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, fmt::format("cannot open dataset {}", path.string()));
  std::string head(kDatasetMagic.size(), '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  const bool binary = in.gcount() == static_cast<std::streamsize>(head.size()) && head == kDatasetMagic;
  in.clear();
  in.seekg(0);
  return binary ? load_binary(in, path.string()) : load_text(in, path.string());
}

}  // namespace bicro
