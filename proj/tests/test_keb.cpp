#include <gtest/gtest.h>

#include <random>

#include "dap/error.hpp"
#include "dap/keb.hpp"
#include "test_support.hpp"

using namespace dap;
using io::AttentionMap;
using io::KnowledgeMask;
using io::ObjectClass;

namespace {

KnowledgeMask mask_of(std::size_t w, std::size_t h, std::vector<std::uint8_t> v,
                      std::vector<ObjectClass> tags = {}) {
  KnowledgeMask m(w, h);
  m.values = std::move(v);
  m.class_tags = std::move(tags);
  return m;
}

KnowledgeMask random_mask(std::mt19937_64& rng, std::size_t w, std::size_t h, double p,
                          ObjectClass tag) {
  std::bernoulli_distribution b(p);
  KnowledgeMask m(w, h);
  for (auto& v : m.values) v = b(rng);
  m.class_tags = {tag};
  return m;
}

}  // namespace

TEST(EmbedSingle, WorkedExample) {
  const AttentionMap y(2, 2, {0.25, 0.25, 0.25, 0.25}, true);
  const auto m = mask_of(2, 2, {1, 0, 0, 0});
  keb::KebConfig cfg;
  cfg.renormalize = false;
  const auto raw = keb::embed_single(y, m, cfg);
  EXPECT_NEAR(raw.values[0], 0.325, 1e-15);
  for (int i = 1; i < 4; ++i) EXPECT_NEAR(raw.values[i], 0.075, 1e-15);
  EXPECT_FALSE(raw.normalized);

  cfg.renormalize = true;
  const auto out = keb::embed_single(y, m, cfg);
  EXPECT_TRUE(out.normalized);
  EXPECT_NEAR(out.values[0], 0.59091, 1e-5);
  for (int i = 1; i < 4; ++i) EXPECT_NEAR(out.values[i], 0.13636, 1e-5);
  // exact fractions 13/22 and 3/22
  EXPECT_NEAR(out.values[0], 13.0 / 22.0, 1e-15);
  EXPECT_NEAR(out.values[1], 3.0 / 22.0, 1e-15);
}

TEST(EmbedSingle, ConstantMaskIsIdentity) {
  std::mt19937_64 rng(11);
  keb::KebConfig cfg;
  for (int t = 0; t < 50; ++t) {
    const auto y = dap::testing::random_distribution(rng, 5 + t % 7, 3 + t % 5, 0.0);
    for (std::uint8_t fill : {0, 1}) {
      KnowledgeMask m(y.width, y.height);
      std::fill(m.values.begin(), m.values.end(), fill);
      const auto out = keb::embed_single(y, m, cfg);
      for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(out.values[i], y.values[i], 1e-15);
    }
  }
}

TEST(EmbedSingle, InsideOutsideRatio) {
  std::mt19937_64 rng(12);
  keb::KebConfig cfg;
  cfg.renormalize = false;
  for (double alpha : {0.05, 0.3, 2.0}) {
    cfg.alpha = alpha;
    const auto y = dap::testing::random_distribution(rng, 8, 8);
    const auto m = random_mask(rng, 8, 8, 0.4, ObjectClass::Pedestrian);
    const auto out = keb::embed_single(y, m, cfg);
    for (std::size_t i = 0; i < y.size(); ++i) {
      for (std::size_t j = 0; j < y.size(); ++j) {
        if (m.values[i] == 1 && m.values[j] == 0) {
          const double r = (out.values[i] / y.values[i]) / (out.values[j] / y.values[j]);
          EXPECT_NEAR(r, (1 + alpha) / alpha, 1e-12 * (1 + alpha) / alpha);
        }
      }
    }
  }
}

TEST(EmbedSingle, PreservesZerosAndApproachesLabelForLargeAlpha) {
  std::mt19937_64 rng(13);
  auto y = dap::testing::random_distribution(rng, 6, 6);
  y.values[3] = 0;
  y.values[17] = 0;
  y = io::normalize_spatial(y);
  const auto m = random_mask(rng, 6, 6, 0.5, ObjectClass::Bicycle);
  keb::KebConfig cfg;
  const auto out = keb::embed_single(y, m, cfg);
  EXPECT_EQ(out.values[3], 0.0);
  EXPECT_EQ(out.values[17], 0.0);

  cfg.alpha = 1e6;
  const auto far = keb::embed_single(y, m, cfg);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(far.values[i], y.values[i], 1e-5);
}

TEST(EmbedSingle, Errors) {
  const AttentionMap y(2, 2, {0.25, 0.25, 0.25, 0.25}, true);
  keb::KebConfig cfg;
  EXPECT_THROW(keb::embed_single(y, KnowledgeMask(3, 2), cfg), DimensionError);
  cfg.alpha = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.alpha = INFINITY;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(MergeMasks, UnionFilterAndOverlap) {
  const std::set<ObjectClass> keep = io::default_keep_classes();
  const auto a = mask_of(2, 2, {1, 0, 0, 0}, {ObjectClass::Pedestrian});
  const auto b = mask_of(2, 2, {0, 0, 0, 1}, {ObjectClass::Pedestrian});
  const auto text = mask_of(2, 2, {0, 1, 1, 0}, {ObjectClass::Text});
  EXPECT_EQ(keb::merge_instance_masks({a, b}, keep, 2, 2).values,
            (std::vector<std::uint8_t>{1, 0, 0, 1}));
  EXPECT_EQ(keb::merge_instance_masks({a, text}, keep, 2, 2).values,
            (std::vector<std::uint8_t>{1, 0, 0, 0}));
  EXPECT_EQ(keb::merge_instance_masks({}, keep, 2, 2).values, std::vector<std::uint8_t>(4, 0));
  EXPECT_EQ(keb::merge_instance_masks({a, b}, {}, 2, 2).values, std::vector<std::uint8_t>(4, 0));
  EXPECT_THROW(keb::merge_instance_masks({a, KnowledgeMask(3, 1)}, keep, 2, 2), DimensionError);

  std::mt19937_64 rng(14);
  for (int t = 0; t < 20; ++t) {
    std::vector<KnowledgeMask> inst;
    std::vector<std::uint8_t> oracle(49, 0);
    for (int k = 0; k < 4; ++k) {
      inst.push_back(random_mask(rng, 7, 7, 0.3, ObjectClass::Motorcycle));
      for (std::size_t i = 0; i < 49; ++i) oracle[i] |= inst.back().values[i];
    }
    const auto merged = keb::merge_instance_masks(inst, keep, 7, 7);
    EXPECT_EQ(merged.values, oracle);
  }
}

TEST(EmbedConcat, ChannelsAndShape) {
  std::mt19937_64 rng(15);
  const auto y = dap::testing::random_distribution(rng, 5, 3);
  const auto m = random_mask(rng, 5, 3, 0.5, ObjectClass::StopSign);
  const Tensor t = keb::embed_concat(y, m);
  ASSERT_EQ(t.shape(), (Shape{1, 2, 3, 5}));
  for (std::size_t i = 0; i < 15; ++i) {
    EXPECT_EQ(t[i], static_cast<real>(y.values[i]));
    EXPECT_EQ(t[15 + i], static_cast<real>(m.values[i]));
  }
  const Tensor z = keb::embed_concat(y, KnowledgeMask(5, 3));
  for (std::size_t i = 15; i < 30; ++i) EXPECT_EQ(z[i], 0);
  EXPECT_THROW(keb::embed_concat(y, KnowledgeMask(3, 5)), DimensionError);
}

TEST(EmbedLabels, StrategyDispatch) {
  io::PseudoLabelSet set;
  set.source_names = {"a", "b"};
  set.maps = {AttentionMap(2, 2, {0.25, 0.25, 0.25, 0.25}, true),
              AttentionMap(2, 2, {0.1, 0.2, 0.3, 0.4}, true)};
  const auto m = mask_of(2, 2, {1, 0, 0, 0});
  keb::KebConfig cfg;
  const auto single = keb::embed_labels(set, m, cfg);
  EXPECT_TRUE(single.embedded);
  EXPECT_NEAR(single.maps[0].values[0], 13.0 / 22.0, 1e-15);
  for (auto s : {keb::Strategy::None, keb::Strategy::Concat}) {
    cfg.strategy = s;
    const auto out = keb::embed_labels(set, m, cfg);
    EXPECT_EQ(out.maps[1], set.maps[1]);
  }
  EXPECT_EQ(keb::parse_strategy("concat"), keb::Strategy::Concat);
  EXPECT_EQ(keb::strategy_name(keb::Strategy::Single), "single");
  EXPECT_THROW(keb::parse_strategy("both"), ConfigError);
}
