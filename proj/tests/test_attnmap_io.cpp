#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "dap/dataset.hpp"
#include "dap/error.hpp"
#include "dap/map_io.hpp"
#include "dap/objective.hpp"
#include "dap/synth.hpp"
#include "test_support.hpp"

using namespace dap;
using namespace dap::io;
using dap::testing::TempDir;

TEST(AttentionMap, Validation) {
  EXPECT_THROW(AttentionMap(2, 2, {1, 2, 3}).validate(), DimensionError);
  EXPECT_THROW(AttentionMap(2, 1, {1, -1}).validate(), DataError);
  EXPECT_THROW(AttentionMap(2, 1, {0.5, 0.6}, true).validate(), DataError);
  EXPECT_THROW(AttentionMap(2, 1, {0.5, INFINITY}).validate(), NumericError);
  EXPECT_NO_THROW(AttentionMap(2, 1, {0.5, 0.5}, true).validate());
}

TEST(NormalizeSpatial, Examples) {
  const auto a = normalize_spatial(AttentionMap(2, 2, {2, 2, 2, 2}));
  EXPECT_TRUE(a.normalized);
  for (double v : a.values) EXPECT_DOUBLE_EQ(v, 0.25);
  const auto b = normalize_spatial(AttentionMap(2, 1, {1, 3}));
  EXPECT_DOUBLE_EQ(b.values[0], 0.25);
  EXPECT_DOUBLE_EQ(b.values[1], 0.75);
  EXPECT_EQ(normalize_spatial(b), b);
  EXPECT_THROW(normalize_spatial(AttentionMap(2, 2, {0, 0, 0, 0})), DegenerateMapError);
}

TEST(Atnm, ByteLayoutOfUnitImpulse) {
  const AttentionMap m(2, 2, {1, 0, 0, 0}, true);
  const auto bytes = encode_map(m);
  ASSERT_EQ(bytes.size(), kAtnmHeaderBytes + 32);
  EXPECT_EQ(kAtnmHeaderBytes, 17u);
  const std::vector<std::uint8_t> header = {'A', 'T', 'N', 'M', 1, 0, 0, 0, 2, 0, 0, 0,
                                            2, 0, 0, 0, 1};
  EXPECT_TRUE(std::equal(header.begin(), header.end(), bytes.begin()));
  std::uint64_t first = 0;
  for (int i = 0; i < 8; ++i) first |= std::uint64_t{bytes[17 + i]} << (8 * i);
  EXPECT_EQ(first, 0x3FF0000000000000ull);
}

TEST(Atnm, RoundTripIsBitExact) {
  TempDir dir("atnm");
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10; ++i) {
    AttentionMap m = dap::testing::random_distribution(rng, 3 + i, 2 + i % 4);
    m.values[0] = 5e-324;  // subnormal survives
    m.values[1] = 0.0;
    m.normalized = false;
    const auto path = dir / ("m" + std::to_string(i) + ".atnm");
    save_map(m, path);
    const AttentionMap back = load_map(path);
    ASSERT_EQ(back.width, m.width);
    ASSERT_EQ(back.height, m.height);
    EXPECT_EQ(back.normalized, m.normalized);
    for (std::size_t k = 0; k < m.size(); ++k) {
      EXPECT_EQ(std::bit_cast<std::uint64_t>(back.values[k]),
                std::bit_cast<std::uint64_t>(m.values[k]));
    }
    EXPECT_EQ(read_file(path), encode_map(m));
  }
}

TEST(Atnm, StructuredErrors) {
  auto bytes = encode_map(AttentionMap(2, 1, {0.25, 0.75}, true));
  auto bad = bytes;
  std::memcpy(bad.data(), "XXXX", 4);
  EXPECT_THROW(decode_map(bad), BadMagicError);

  auto cut = bytes;
  cut.resize(cut.size() - 3);
  EXPECT_THROW(decode_map(cut), TruncatedError);
  EXPECT_THROW(decode_map(std::span(bytes).first(10)), TruncatedError);

  auto nan = bytes;
  const auto bits = std::bit_cast<std::uint64_t>(std::nan(""));
  for (int i = 0; i < 8; ++i) nan[17 + i] = static_cast<std::uint8_t>(bits >> (8 * i));
  EXPECT_THROW(decode_map(nan), NanPayloadError);

  TempDir dir("atnm_err");
  write_file(dir / "bad.atnm", bad);
  EXPECT_THROW(load_map(dir / "bad.atnm"), BadMagicError);
  EXPECT_THROW(load_map(dir / "missing.atnm"), DataError);
}

TEST(Pgm, EncodingRules) {
  const auto bytes = encode_pgm(AttentionMap(2, 2, {0.0, 1.0, 0.5, 0.25}));
  const std::string header = "P5\n2 2\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 4);
  EXPECT_TRUE(std::equal(header.begin(), header.end(), bytes.begin()));
  EXPECT_EQ(bytes[header.size() + 0], 0);
  EXPECT_EQ(bytes[header.size() + 1], 255);
  EXPECT_EQ(bytes[header.size() + 2], 128);
  EXPECT_EQ(bytes[header.size() + 3], 64);

  const auto flat = encode_pgm(AttentionMap(3, 1, {0.2, 0.2, 0.2}));
  for (std::size_t i = flat.size() - 3; i < flat.size(); ++i) EXPECT_EQ(flat[i], 128);

  TempDir dir("pgm");
  export_pgm(AttentionMap(2, 1, {0.0, 1.0}), dir / "a.pgm");
  const auto back = load_pgm(dir / "a.pgm");
  EXPECT_EQ(back.values, (std::vector<double>{0.0, 1.0}));
}

TEST(Masks, RoundTripBothFormats) {
  TempDir dir("mask");
  KnowledgeMask m(3, 2);
  m.values = {1, 0, 1, 0, 0, 1};
  for (const char* name : {"m.atnm", "m.pgm"}) {
    save_mask(m, dir / name);
    const auto back = load_mask(dir / name);
    EXPECT_EQ(back.values, m.values);
    for (auto v : back.values) EXPECT_TRUE(v == 0 || v == 1);
  }
}

TEST(Frames, PpmRoundTripOnQuantisedFrame) {
  TempDir dir("frame");
  std::mt19937_64 rng(3);
  const Tensor f = quantize_frame(dap::testing::random_tensor({3, 4, 5}, rng, 0.0, 1.0));
  save_frame(f, dir / "f.ppm");
  const Tensor back = load_frame(dir / "f.ppm");
  ASSERT_EQ(back.shape(), f.shape());
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_EQ(back[i], f[i]);
}

TEST(Synth, ZeroCorruptionLabelsEqualGroundTruth) {
  SynthConfig c;
  c.samples = 12;
  c.sources = 4;
  c.blur_passes = 0;
  c.center_bias_weight = 0.0;
  c.jitter = 0.0;
  c.multiplicative_noise = 0.0;
  c.failure_rate = 0.0;
  for (const auto& r : synth_generate(c, 42)) {
    for (const auto& y : r.pseudo_labels.maps) {
      EXPECT_LT(objective::kld(*r.ground_truth, y), 1e-12);
      for (std::size_t i = 0; i < y.size(); ++i) {
        EXPECT_NEAR(y.values[i], r.ground_truth->values[i], 1e-12);
      }
    }
  }
}

TEST(Synth, FullCentreBiasGivesCentrePrior) {
  SynthConfig c;
  c.samples = 5;
  c.center_bias_weight = 1.0;
  const auto prior = center_prior(c.width, c.height, c.center_sigma);
  for (const auto& r : synth_generate(c, 7)) {
    for (std::size_t i = 0; i < prior.size(); ++i) {
      EXPECT_NEAR(r.pseudo_labels.maps[0].values[i], prior.values[i], 1e-12);
    }
  }
}

TEST(Synth, DeterministicAndWellFormed) {
  SynthConfig c;
  c.samples = 20;
  c.text_distractors = 1;
  const auto a = synth_generate(c, 42);
  const auto b = synth_generate(c, 42);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].frame, b[i].frame);
    for (std::size_t k = 0; k < a[i].pseudo_labels.size(); ++k) {
      EXPECT_EQ(encode_map(a[i].pseudo_labels.maps[k]), encode_map(b[i].pseudo_labels.maps[k]));
    }
    EXPECT_EQ(*a[i].ground_truth, *b[i].ground_truth);
    EXPECT_NO_THROW(a[i].validate());
    EXPECT_NEAR(a[i].ground_truth->sum(), 1.0, 1e-12);
    for (const auto& y : a[i].pseudo_labels.maps) {
      EXPECT_TRUE(y.normalized);
      EXPECT_NEAR(y.sum(), 1.0, 1e-12);
    }
    for (const auto& m : a[i].instance_masks) {
      for (auto v : m.values) EXPECT_TRUE(v == 0 || v == 1);
    }
  }
  EXPECT_NE(synth_generate(c, 43)[0].frame, a[0].frame);
}

TEST(Synth, RejectsInvalidConfig) {
  SynthConfig c;
  c.width = 30;
  EXPECT_THROW(synth_generate(c, 0), ConfigError);
  c = {};
  c.center_bias_weight = 1.5;
  EXPECT_THROW(synth_generate(c, 0), ConfigError);
  c = {};
  c.failure_rate = -0.1;
  EXPECT_THROW(synth_generate(c, 0), ConfigError);
}

TEST(Dataset, WriteLoadRoundTrip) {
  TempDir dir("dataset");
  SynthConfig c;
  c.samples = 10;
  const auto records = synth_generate(c, 5);
  const auto manifest = write_dataset(records, dir.path());
  const Dataset train = load_dataset(manifest, "train");
  ASSERT_EQ(train.size(), 8u);
  EXPECT_EQ(train.source_names(), (std::vector<std::string>{"center_blur", "jitter_noise"}));
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& r = records[i];
    EXPECT_EQ(train[i].id, r.id);
    EXPECT_EQ(train[i].frame, r.frame);
    for (std::size_t k = 0; k < 2; ++k) {
      EXPECT_EQ(train[i].pseudo_labels.maps[k], r.pseudo_labels.maps[k]);
    }
    EXPECT_EQ(train[i].instance_masks.size(), r.instance_masks.size());
    for (std::size_t k = 0; k < r.instance_masks.size(); ++k) {
      EXPECT_EQ(train[i].instance_masks[k].values, r.instance_masks[k].values);
      EXPECT_EQ(train[i].instance_masks[k].class_tags, r.instance_masks[k].class_tags);
    }
    EXPECT_EQ(train.ground_truth(i), *r.ground_truth);
  }
  EXPECT_EQ(load_dataset(manifest, "train", 3).size(), 3u);
  EXPECT_THROW(load_dataset(manifest, "train", 0), ConfigError);
}

TEST(Dataset, CountsGroundTruthReads) {
  SynthConfig c;
  c.samples = 6;
  Dataset ds({"center_blur", "jitter_noise"}, synth_generate(c, 1));
  EXPECT_EQ(ds.ground_truth_reads(), 0u);
  EXPECT_FALSE(ds[0].ground_truth.has_value());
  const Dataset view = ds.with_sources({"jitter_noise"});
  view.ground_truth(0);
  EXPECT_EQ(ds.ground_truth_reads(), 1u);
  EXPECT_EQ(view[0].pseudo_labels.source_names, (std::vector<std::string>{"jitter_noise"}));
  EXPECT_THROW(ds.with_sources({"nope"}), ConfigError);
}

TEST(Dataset, RejectsSourceMismatch) {
  SynthConfig c;
  c.samples = 3;
  EXPECT_THROW(Dataset({"a", "b"}, synth_generate(c, 1)), DataError);
}

TEST(Manifest, MalformedLinesAreDataErrors) {
  TempDir dir("manifest");
  {
    std::ofstream out(dir / "manifest.tsv");
    out << "train\tonly-two-fields\n";
  }
  EXPECT_THROW(DatasetManifest::read(dir / "manifest.tsv"), DataError);
  EXPECT_THROW(DatasetManifest::read(dir / "absent.tsv"), DataError);
}
