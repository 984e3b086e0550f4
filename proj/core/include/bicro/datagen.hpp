#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>

#include "bicro/embed.hpp"

namespace bicro {

struct GenSpec {
  std::size_t n_pairs = 2000;
  std::size_t test_pairs = 1000;  // clean held-out pairs sharing the projections
  std::size_t latent_dim = 16;
  std::size_t image_dim = 64;
  std::size_t text_dim = 48;
  double noise_ratio = 0.0;
  double modality_noise_sigma = 1.0;
  // Optional weakly-matched pairs: text = (1 - w) * own + w * stranger's text.
  double weak_ratio = 0.0;
  double weak_blend = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GeneratedData {
  PairDataset train;  // corrupted by noise_ratio
  PairDataset test;   // always clean
  std::size_t corrupted = 0;
  std::size_t weakened = 0;
};

// Latent z ~ N(0, I); image = P z + sigma e, text = Q z + sigma e with fixed
// seeded projections. ceil(noise_ratio * N) pairs then have their texts
// permuted by a single random cycle, so no corrupted pair keeps its text.
// Every observed label is 1. Features are stored at float32 precision.
GeneratedData generate_split(const GenSpec& spec);
PairDataset generate(const GenSpec& spec);

// Applies the same corruption to a dataset whose pairs are all true matches.
PairDataset inject_noise(const PairDataset& dataset, double ratio, std::uint64_t seed);

// Number of pairs corrupted for a given ratio: ceil(ratio * n).
std::size_t corrupted_count(double ratio, std::size_t n);

enum class DatasetFormat { kText, kBinary };

// Text: JSON lines, a header object then one record per line.
// Binary: "BICRODS1", u32 version/count/image_dim/text_dim/flags, then per
// record u32 id, u32 label, [u32 true_match], image f32[], text f32[].
void save_dataset(const PairDataset& dataset, const std::filesystem::path& path,
                  DatasetFormat format);
// Detects the format from the leading bytes.
PairDataset load_dataset(const std::filesystem::path& path);

}  // namespace bicro
