#include <algorithm>
#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "bicro/datagen.hpp"
#include "bicro/error.hpp"
#include "temp_dir.hpp"

using namespace bicro;
using testing_support::TempDir;

namespace {

GenSpec small(std::size_t n, double noise, std::uint64_t seed = 3) {
  GenSpec s;
  s.n_pairs = n;
  s.test_pairs = 10;
  s.latent_dim = 4;
  s.image_dim = 8;
  s.text_dim = 6;
  s.noise_ratio = noise;
  s.seed = seed;
  return s;
}

std::size_t count_mismatched(const PairDataset& d) {
  return static_cast<std::size_t>(std::count_if(d.records.begin(), d.records.end(), [](const auto& r) {
    return !r.true_match.value();
  }));
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

TEST(GenerateExamples, NoNoiseIsAllClean) {
  const auto d = generate(small(50, 0.0));
  EXPECT_EQ(d.size(), 50u);
  EXPECT_EQ(count_mismatched(d), 0u);
  for (const auto& r : d.records) EXPECT_EQ(r.label, 1);
}

TEST(GenerateExamples, FortyPercentIsADerangement) {
  auto spec = small(1000, 0.4);
  const auto noisy = generate(spec);
  spec.noise_ratio = 0.0;
  const auto clean = generate(spec);  // same draws before corruption

  EXPECT_EQ(count_mismatched(noisy), 400u);
  std::size_t moved = 0;
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    const auto& r = noisy.records[i];
    EXPECT_EQ(r.label, 1);
    EXPECT_EQ(r.image, clean.records[i].image);
    if (r.true_match.value()) {
      EXPECT_EQ(r.text, clean.records[i].text);
      continue;
    }
    // The text must come from some other corrupted pair, never its own.
    EXPECT_NE(r.text, clean.records[i].text);
    std::size_t source = clean.size();
    for (std::size_t j = 0; j < clean.size(); ++j) {
      if (clean.records[j].text == r.text) source = j;
    }
    ASSERT_LT(source, clean.size());
    EXPECT_NE(source, i);
    EXPECT_FALSE(noisy.records[source].true_match.value());
    ++moved;
  }
  EXPECT_EQ(moved, 400u);
}

TEST(GenerateExamples, SameSeedIsBitIdentical) {
  const auto a = generate_split(small(200, 0.2, 9));
  const auto b = generate_split(small(200, 0.2, 9));
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(a.train, generate(small(200, 0.2, 10)));
}

TEST(Generate, CountsMatchCeil) {
  for (double r : {0.05, 0.13, 0.2, 0.37, 0.5}) {
    const auto g = generate_split(small(97, r));
    EXPECT_EQ(g.corrupted, corrupted_count(r, 97));
    EXPECT_EQ(count_mismatched(g.train), corrupted_count(r, 97));
  }
  EXPECT_EQ(corrupted_count(0.4, 1000), 400u);
  EXPECT_EQ(corrupted_count(0.13, 97), 13u);
}

TEST(Generate, TestSplitIsCleanWithRequestedSize) {
  const auto g = generate_split(small(40, 0.3));
  EXPECT_EQ(g.test.size(), 10u);
  EXPECT_EQ(count_mismatched(g.test), 0u);
}

TEST(Generate, ImpossibleDerangementIsRejected) {
  // One pair cannot be deranged on its own.
  EXPECT_EQ(kind_of([] { generate(small(20, 0.05)); }), ErrorKind::kGeneration);
  // Corrupting N - 1 of N pairs is rejected.
  EXPECT_EQ(kind_of([] { generate(small(4, 0.74)); }), ErrorKind::kGeneration);
}

TEST(Generate, InvalidSpecIsAConfigError) {
  auto s = small(20, 0.0);
  s.image_dim = 2;
  EXPECT_EQ(kind_of([&] { generate(s); }), ErrorKind::kConfig);
  s = small(3, 0.0);
  EXPECT_EQ(kind_of([&] { generate(s); }), ErrorKind::kConfig);
}

TEST(Generate, WeakPairsBlendOwnText) {
  auto s = small(100, 0.2);
  s.weak_ratio = 0.1;
  s.weak_blend = 0.5;
  const auto g = generate_split(s);
  EXPECT_EQ(g.weakened, 10u);
  auto plain = s;
  plain.weak_ratio = 0.0;
  const auto base = generate(plain);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (g.train.records[i].text != base.records[i].text) {
      EXPECT_TRUE(base.records[i].true_match.value());
      ++changed;
    }
  }
  EXPECT_EQ(changed, 10u);
}

TEST(InjectNoiseExamples, ZeroHalfAndRecomposition) {
  const auto clean = generate(small(10, 0.0));
  EXPECT_EQ(inject_noise(clean, 0.0, 1), clean);
  const auto half = inject_noise(clean, 0.5, 1);
  EXPECT_EQ(count_mismatched(half), 5u);
  EXPECT_EQ(kind_of([&] { inject_noise(half, 0.2, 2); }), ErrorKind::kPrecondition);
}

TEST(DatasetIoExamples, RoundTripBothFormats) {
  TempDir dir;
  const auto d = generate(small(100, 0.3));
  for (auto fmt : {DatasetFormat::kText, DatasetFormat::kBinary}) {
    const auto p = dir / (fmt == DatasetFormat::kText ? "d.jsonl" : "d.bin");
    save_dataset(d, p, fmt);
    EXPECT_EQ(load_dataset(p), d);
  }
}

TEST(DatasetIoExamples, TextAndBinaryAgree) {
  TempDir dir;
  const auto d = generate(small(60, 0.2));
  save_dataset(d, dir / "a.jsonl", DatasetFormat::kText);
  save_dataset(d, dir / "a.bin", DatasetFormat::kBinary);
  const auto t = load_dataset(dir / "a.jsonl");
  const auto b = load_dataset(dir / "a.bin");
  ASSERT_EQ(t.size(), b.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(t.records[i].id, b.records[i].id);
    EXPECT_EQ(t.records[i].true_match, b.records[i].true_match);
    EXPECT_LE((t.records[i].image - b.records[i].image).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LE((t.records[i].text - b.records[i].text).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(DatasetIoExamples, TruncatedBinaryReportsOffset) {
  TempDir dir;
  const auto d = generate(small(10, 0.0));
  save_dataset(d, dir / "d.bin", DatasetFormat::kBinary);
  const auto full = std::filesystem::file_size(dir / "d.bin");
  std::filesystem::resize_file(dir / "d.bin", full - 3);
  try {
    load_dataset(dir / "d.bin");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kFormat);
    // The last f32 starts 4 bytes before the end; one of its bytes survives.
    EXPECT_NE(std::string(e.what()).find("byte offset " + std::to_string(full - 3)),
              std::string::npos)
        << e.what();
  }
}

TEST(DatasetIo, BadMagicAndTrailingBytes) {
  TempDir dir;
  const auto d = generate(small(10, 0.0));
  save_dataset(d, dir / "d.bin", DatasetFormat::kBinary);
  auto bytes = testing_support::slurp(dir / "d.bin");

  testing_support::spit(dir / "trail.bin", bytes + "x");
  EXPECT_EQ(kind_of([&] { load_dataset(dir / "trail.bin"); }), ErrorKind::kFormat);

  bytes[0] = 'X';
  testing_support::spit(dir / "bad.bin", bytes);
  EXPECT_EQ(kind_of([&] { load_dataset(dir / "bad.bin"); }), ErrorKind::kFormat);

  EXPECT_EQ(kind_of([&] { load_dataset(dir / "missing.bin"); }), ErrorKind::kIo);
}

TEST(DatasetIo, TextErrorsAreFormatErrors) {
  TempDir dir;
  testing_support::spit(dir / "empty.jsonl", "");
  EXPECT_EQ(kind_of([&] { load_dataset(dir / "empty.jsonl"); }), ErrorKind::kFormat);

  const auto d = generate(small(10, 0.0));
  save_dataset(d, dir / "d.jsonl", DatasetFormat::kText);
  auto text = testing_support::slurp(dir / "d.jsonl");
  text.resize(text.size() - 40);
  testing_support::spit(dir / "cut.jsonl", text);
  EXPECT_EQ(kind_of([&] { load_dataset(dir / "cut.jsonl"); }), ErrorKind::kFormat);
}

TEST(DatasetIo, UnwritablePathIsIoError) {
  const auto d = generate(small(10, 0.0));
  EXPECT_EQ(kind_of([&] { save_dataset(d, "/nonexistent-dir/x/d.bin", DatasetFormat::kBinary); }),
            ErrorKind::kIo);
}
