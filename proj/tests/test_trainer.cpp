#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dap/checkpoint.hpp"
#include "dap/error.hpp"
#include "dap/map_io.hpp"
#include "dap/objective.hpp"
#include "dap/optim.hpp"
#include "dap/synth.hpp"
#include "dap/trainer.hpp"
#include "test_support.hpp"

using namespace dap;
using namespace dap::train;
using dap::testing::TempDir;

namespace {

io::SynthConfig tiny_data(std::size_t samples = 24, std::size_t size = 16) {
  io::SynthConfig c;
  c.width = c.height = size;
  c.samples = samples;
  return c;
}

TrainConfig tiny_train(std::size_t size = 16) {
  TrainConfig c;
  c.height = c.width = size;
  c.epochs = 2;
  c.batch_size = 4;
  c.base_channels = 4;
  c.umb_width = 4;
  c.seed = 9;
  return c;
}

io::Dataset dataset_of(const io::SynthConfig& c, std::uint64_t seed) {
  return io::Dataset({"center_blur", "jitter_noise"}, io::synth_generate(c, seed));
}

}  // namespace

TEST(Config, TextRoundTrip) {
  TrainConfig c;
  c.lr = 3e-4;
  c.beta1 = 0.8;
  c.weight_decay = 0;
  c.epochs = 4;
  c.warmup_steps = 7;
  c.seed = 123456789012345ull;
  c.sources = {"a", "b"};
  c.height = 32;
  c.width = 48;
  c.keb.strategy = keb::Strategy::Concat;
  c.keb.alpha = 0.125;
  c.keb.renormalize = false;
  c.keb.keep_classes = {io::ObjectClass::Text, io::ObjectClass::Bicycle};
  const TrainConfig back = TrainConfig::parse(c.to_text());
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_EQ(back.lr, c.lr);
  EXPECT_EQ(back.seed, c.seed);
  EXPECT_EQ(back.warmup_steps, c.warmup_steps);
  EXPECT_EQ(back.keb.keep_classes, c.keb.keep_classes);
  EXPECT_EQ(back.sources, c.sources);
}

TEST(Config, ParsesCommentsAndRejectsBadInput) {
  const auto c = TrainConfig::parse("# toy run\nlr = 0.01  # fast\n\nepochs=3\nsources = x , y\n");
  EXPECT_EQ(c.lr, 0.01);
  EXPECT_EQ(c.epochs, 3u);
  EXPECT_EQ(c.sources, (std::vector<std::string>{"x", "y"}));
  EXPECT_EQ(c.batch_size, 8u);
  EXPECT_THROW(TrainConfig::parse("learning_rate = 1"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("lr = fast"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("lr = -1"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("epochs = 0"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("resolution = 20x20"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("betas = 0.9"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("keb_keep_classes = dragon"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("keb_alpha = 0"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("just words"), ConfigError);
  EXPECT_THROW(TrainConfig::load("/nonexistent/cfg"), ConfigError);
}

TEST(Config, WarmupDefault) {
  TrainConfig c;
  EXPECT_EQ(c.resolve_warmup(200), 10u);
  c.warmup_steps = 500;
  EXPECT_EQ(c.resolve_warmup(200), 200u);
}

TEST(AdamW, HandComputedSteps) {
  Tensor p(Shape{1}, 2.0);
  std::vector<Tensor*> params{&p};
  auto state = AdamState::zeros_like({p});
  AdamHyper h;
  h.lr = 0.1;
  adamw_step(params, {Tensor(Shape{1}, 1.0)}, state, h);
  EXPECT_NEAR(p[0], 2.0 - 0.1 / (1 + 1e-8), 1e-15);
  EXPECT_EQ(state.step, 1u);

  Tensor q(Shape{3}, 1.5);
  std::vector<Tensor*> qs{&q};
  auto sq = AdamState::zeros_like({q});
  adamw_step(qs, {Tensor(Shape{3})}, sq, h);
  EXPECT_EQ(q, Tensor(Shape{3}, 1.5));

  h.weight_decay = 0.01;
  adamw_step(qs, {Tensor(Shape{3})}, sq, h);
  for (real v : q.data()) EXPECT_NEAR(v, 1.5 * (1 - 0.1 * 0.01), 1e-15);

  EXPECT_THROW(adamw_step(qs, {Tensor(Shape{2})}, sq, h), DimensionError);
  EXPECT_THROW(adamw_step(qs, {}, sq, h), DimensionError);
}

TEST(AdamW, MatchesRecurrenceOverSeveralSteps) {
  std::mt19937_64 rng(41);
  Tensor p = dap::testing::random_tensor({4}, rng);
  Tensor ref = p;
  std::vector<Tensor*> params{&p};
  auto state = AdamState::zeros_like({p});
  AdamHyper h{0.01, 0.9, 0.999, 0.1, 1e-8};
  std::vector<double> m(4, 0), v(4, 0);
  for (int t = 1; t <= 5; ++t) {
    const Tensor g = dap::testing::random_tensor({4}, rng);
    adamw_step(params, {g}, state, h);
    for (int i = 0; i < 4; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] = ref[i] * (1 - 0.01 * 0.1) - 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(p[i], ref[i], 1e-14);
}

TEST(LrSchedule, Examples) {
  EXPECT_EQ(lr_schedule(0, 100, 10, 1e-3), 0.0);
  EXPECT_NEAR(lr_schedule(5, 100, 10, 1e-3), 5e-4, 1e-18);
  EXPECT_NEAR(lr_schedule(10, 100, 10, 1e-3), 1e-3, 1e-18);
  EXPECT_NEAR(lr_schedule(55, 100, 10, 1e-3), 5e-4, 1e-15);
  EXPECT_NEAR(lr_schedule(100, 100, 10, 1e-3), 0.0, 1e-12);
  EXPECT_NEAR(lr_schedule(0, 100, 0, 1e-3), 1e-3, 1e-18);
  double prev = 1;
  for (std::size_t s = 10; s <= 100; ++s) {
    const double lr = lr_schedule(s, 100, 10, 1.0);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(Checkpoint, RoundTripAndBitwiseForward) {
  const auto cfg = tiny_train();
  model::Model m(model_config(cfg, 2, 1), 5);
  std::mt19937_64 rng(42);
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    for (auto& v : m.params().value(i).data()) v += static_cast<real>(0.01 * (rng() % 7));
  }
  std::vector<Tensor> values;
  for (std::size_t i = 0; i < m.params().size(); ++i) values.push_back(m.params().value(i));
  auto adam = AdamState::zeros_like(values);
  adam.step = 3;
  adam.m[0][0] = 0.25;
  adam.v[1][0] = 0.5;
  const auto ckpt = make_checkpoint(cfg, m, adam, 17, 2);

  TempDir dir("ckpt");
  save_checkpoint(ckpt, dir / "a.ckpt");
  const auto back = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ckpt));
  EXPECT_EQ(back.step, 17u);
  EXPECT_EQ(back.epoch, 2u);
  EXPECT_EQ(back.adam.step, 3u);
  EXPECT_EQ(back.adam.m[0][0], 0.25);
  EXPECT_EQ(back.config.to_text(), cfg.to_text());

  const Tensor frame = dap::testing::random_tensor({3, 16, 16}, rng, 0, 1);
  const auto reloaded = restore_model(back);
  EXPECT_EQ(reloaded.predict(frame), m.predict(frame));
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    EXPECT_EQ(reloaded.params().value(i), m.params().value(i));
  }
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const auto cfg = tiny_train();
  model::Model m(model_config(cfg, 1, 1), 5);
  std::vector<Tensor> values;
  for (std::size_t i = 0; i < m.params().size(); ++i) values.push_back(m.params().value(i));
  auto bytes = encode_checkpoint(make_checkpoint(cfg, m, AdamState::zeros_like(values), 0, 0));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), BadMagicError);
  auto version = bytes;
  version[4] = 99;
  EXPECT_THROW(decode_checkpoint(version), DataError);
  EXPECT_THROW(decode_checkpoint(std::span(bytes).first(bytes.size() - 1)), TruncatedError);
  bytes.push_back(0);
  EXPECT_THROW(decode_checkpoint(bytes), DataError);
  EXPECT_THROW(load_checkpoint("/nonexistent.ckpt"), DataError);
}

TEST(Train, DeterministicAndNeverReadsGroundTruth) {
  const auto all = dataset_of(tiny_data(), 3);
  const auto tr = all.split("train");
  const auto val = all.split("val");
  TempDir dir("train_det");
  const auto a = train::train(tiny_train(), tr, &val, {dir / "a", nullptr});
  EXPECT_EQ(tr.ground_truth_reads(), 0u);
  EXPECT_EQ(all.ground_truth_reads(), 0u);
  const auto b = train::train(tiny_train(), tr, &val, {dir / "b", nullptr});
  EXPECT_EQ(encode_checkpoint(a.last), encode_checkpoint(b.last));
  EXPECT_EQ(io::read_file(dir / "a/last.ckpt"), io::read_file(dir / "b/last.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "a/best.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "a/train_log.tsv"));
  EXPECT_EQ(a.history.size(), 2u);
  EXPECT_GE(a.best_epoch, 1u);
  EXPECT_TRUE(std::isfinite(a.history[0].val_kld));

  auto other = tiny_train();
  other.seed = 10;
  EXPECT_NE(encode_checkpoint(train::train(other, tr).last), encode_checkpoint(a.last));
}

TEST(Train, SingleSourceAndConcatStrategy) {
  const auto tr = dataset_of(tiny_data(8), 4);
  auto c = tiny_train();
  c.epochs = 1;
  c.sources = {"jitter_noise"};
  EXPECT_EQ(train::train(c, tr).last.sources, 1u);
  c.sources = {};
  c.keb.strategy = keb::Strategy::Concat;
  const auto r = train::train(c, tr);
  EXPECT_EQ(r.last.sources, 2u);
  EXPECT_EQ(r.last.label_channels, 2u);
  c.sources = {"missing"};
  EXPECT_THROW(train::train(c, tr), ConfigError);
  c.sources = {};
  c.height = c.width = 32;
  EXPECT_THROW(train::train(c, tr), DataError);
}

TEST(Train, LossDecreasesOnCleanLabels) {
  auto d = tiny_data(32, 32);
  d.blur_passes = 0;
  d.center_bias_weight = 0;
  d.jitter = 0;
  d.multiplicative_noise = 0;
  d.failure_rate = 0;
  d.train_fraction = 1.0;
  d.val_fraction = 0.0;
  const auto tr = dataset_of(d, 5).split("train");
  auto c = tiny_train(32);
  c.epochs = 3;
  c.lr = 3e-3;
  const auto r = train::train(c, tr);
  ASSERT_EQ(r.history.size(), 3u);
  EXPECT_LT(r.history[1].train_loss, r.history[0].train_loss);
  EXPECT_LT(r.history[2].train_loss, r.history[1].train_loss);
}

TEST(Train, NonFiniteLossAborts) {
  const auto tr = dataset_of(tiny_data(8), 6);
  auto c = tiny_train();
  c.lr = 1e300;
  c.warmup_steps = 0;
  EXPECT_THROW(train::train(c, tr), NumericError);
}

TEST(Evaluate, UniformPredictionMatchesOracle) {
  const auto data = dataset_of(tiny_data(10), 7);
  const auto cfg = tiny_train();
  const model::Model m(model_config(cfg, 2, 1), 1);
  const auto rep = evaluate(m, data);
  ASSERT_EQ(rep.rows.size(), data.size());
  double mean = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& g = data.ground_truth(i);
    double k = 0;
    for (double v : g.values) k += v * std::log((v + 1e-12) / (1.0 / 256 + 1e-12));
    EXPECT_NEAR(rep.rows[i].kld, k, 1e-10);
    EXPECT_NEAR(k, std::log(256.0) - objective::entropy(g), 1e-9);
    EXPECT_TRUE(std::isnan(rep.rows[i].cc));
    mean += k;
  }
  EXPECT_NEAR(rep.kld_mean, mean / data.size(), 1e-10);
  EXPECT_EQ(rep.cc_undefined, data.size());
  ASSERT_EQ(rep.baseline_kld.size(), 2u);
  double base = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    base += objective::kld(data.ground_truth(i), data[i].pseudo_labels.maps[1]);
  }
  EXPECT_NEAR(rep.baseline_kld[1], base / data.size(), 1e-12);

  io::Dataset no_gt({"center_blur", "jitter_noise"}, [] {
    auto r = io::synth_generate(tiny_data(2), 1);
    r[1].ground_truth.reset();
    return r;
  }());
  EXPECT_THROW(evaluate(m, no_gt), DataError);
}

TEST(Evaluate, ReportRoundTrip) {
  EvalReport r;
  r.rows = {{"a", 0.5, 0.25}, {"b", 1.0 / 3, std::nan("")}};
  r.kld_mean = 0.41666666666666669;
  r.kld_std = 0.08333333333333331;
  r.cc_mean = 0.25;
  r.cc_std = 0;
  r.cc_undefined = 1;
  r.source_names = {"m", "u"};
  r.baseline_kld = {0.7, 1.9};
  const std::string text = r.to_text();
  EXPECT_EQ(text.rfind("sample_id\tKLD\tCC\n", 0), 0u);
  const auto back = EvalReport::parse(text);
  EXPECT_EQ(back.to_text(), text);
  EXPECT_EQ(back.rows[1].kld, 1.0 / 3);
  EXPECT_TRUE(std::isnan(back.rows[1].cc));
  EXPECT_EQ(back.baseline_kld, r.baseline_kld);
  EXPECT_THROW(EvalReport::parse("nonsense"), DataError);
}

TEST(Infer, WritesNormalisedRepeatableMaps) {
  const auto tr = dataset_of(tiny_data(8), 8);
  auto c = tiny_train();
  c.epochs = 1;
  const auto ckpt = train::train(c, tr).last;
  TempDir dir("infer");
  io::save_frame(tr[0].frame, dir / "f.ppm");
  const auto a = infer(ckpt, dir / "f.ppm", dir / "a.atnm");
  const auto b = infer(ckpt, dir / "f.ppm", dir / "b.atnm");
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a.normalized);
  EXPECT_NEAR(a.sum(), 1.0, 1e-9);
  EXPECT_EQ(io::load_map(dir / "a.atnm"), a);
  EXPECT_TRUE(std::filesystem::exists(dir / "a.pgm"));
}

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DAP_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Cli, ExitCodesAndPipeline) {
  TempDir dir("cli");
  const std::string d = dir.path().string();
  EXPECT_EQ(run_cli("gen-data --out " + d + "/data --seed 1 --samples 10 --size 16x16"), 0);
  {
    std::ofstream cfg(dir / "ok.cfg");
    cfg << tiny_train().to_text() << "epochs = 1\n";
    std::ofstream bad(dir / "bad.cfg");
    bad << "lr = -3\n";
  }
  EXPECT_EQ(run_cli("train --config " + d + "/ok.cfg --data " + d + "/data --out " + d + "/run"),
            0);
  EXPECT_TRUE(std::filesystem::exists(dir / "run/last.ckpt"));
  EXPECT_EQ(run_cli("eval --ckpt " + d + "/run/best.ckpt --data " + d + "/data --split test"), 0);
  EXPECT_EQ(run_cli("infer --ckpt " + d + "/run/last.ckpt --frame " + d +
                    "/data/frames/000000.ppm --out " + d + "/pred.atnm"),
            0);
  EXPECT_EQ(run_cli("train --config " + d + "/bad.cfg --data " + d + "/data --out " + d + "/x"),
            2);
  EXPECT_EQ(run_cli("eval --ckpt " + d + "/missing.ckpt --data " + d + "/data"), 3);
  EXPECT_EQ(run_cli("train --config " + d + "/ok.cfg --data " + d + "/nowhere --out " + d + "/y"),
            3);
  EXPECT_EQ(run_cli("bogus-command"), 2);
  EXPECT_EQ(run_cli("selftest"), 0);
}
