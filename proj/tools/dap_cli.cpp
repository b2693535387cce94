// Command-line front end: data generation, training, evaluation, inference
// and the built-in identity checks.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <string>

#include "CLI11.hpp"
#include "dap/checkpoint.hpp"
#include "dap/config.hpp"
#include "dap/dataset.hpp"
#include "dap/error.hpp"
#include "dap/keb.hpp"
#include "dap/objective.hpp"
#include "dap/synth.hpp"
#include "dap/trainer.hpp"

namespace fs = std::filesystem;
using namespace dap;

namespace {

enum Exit { kOk = 0, kFailed = 1, kConfig = 2, kData = 3, kNumeric = 4 };

void parse_size(const std::string& s, std::size_t& h, std::size_t& w) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    h = std::stoul(s.substr(0, x));
    w = std::stoul(s.substr(x + 1));
  } catch (const std::logic_error&) {
    throw ConfigError("--size expects HxW, got '" + s + "'");
  }
}

int gen_data(const fs::path& out, std::uint64_t seed, std::size_t samples, std::size_t sources,
             const std::string& size) {
  io::SynthConfig cfg;
  cfg.samples = samples;
  cfg.sources = sources;
  if (!size.empty()) parse_size(size, cfg.height, cfg.width);
  const auto manifest = io::write_dataset(io::synth_generate(cfg, seed), out);
  std::cout << "wrote " << samples << " samples to " << manifest.string() << "\n";
  return kOk;
}

int train_cmd(const fs::path& config, const fs::path& data, const fs::path& out) {
  const auto cfg = train::TrainConfig::load(config);
  const fs::path manifest = fs::is_directory(data) ? data / "manifest.tsv" : data;
  const io::Dataset tr = io::load_dataset(manifest, "train");
  const io::Dataset val = io::load_dataset(manifest, "val");
  train::TrainOptions opt;
  opt.out_dir = out;
  opt.log = &std::cout;
  const auto res = train::train(cfg, tr, &val, opt);
  std::cout << "best epoch " << res.best_epoch << ", checkpoints in " << out.string() << "\n";
  return kOk;
}

int eval_cmd(const fs::path& ckpt, const fs::path& data, const std::string& split) {
  const auto c = train::load_checkpoint(ckpt);
  const fs::path manifest = fs::is_directory(data) ? data / "manifest.tsv" : data;
  io::Dataset ds = io::load_dataset(manifest, split);
  if (!c.config.sources.empty()) ds = ds.with_sources(c.config.sources);
  std::cout << train::evaluate(c, ds).to_text();
  return kOk;
}

int infer_cmd(const fs::path& ckpt, const fs::path& frame, const fs::path& out) {
  const auto s = train::infer(train::load_checkpoint(ckpt), frame, out);
  std::cout << "wrote " << out.string() << " (" << s.width << "x" << s.height << ")\n";
  return kOk;
}

bool check(const char* name, bool ok) {
  std::cout << (ok ? "ok   " : "FAIL ") << name << "\n";
  return ok;
}

io::AttentionMap random_map(std::mt19937_64& rng, std::size_t w, std::size_t h) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::vector<double> v(w * h);
  for (auto& x : v) x = u(rng);
  return io::normalize_spatial(io::AttentionMap(w, h, std::move(v)));
}

int selftest() {
  bool ok = true;
  std::mt19937_64 rng(7);

  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t side = 2 + i % 15;
    const auto p = random_map(rng, side, side);
    const auto q = random_map(rng, side, side);
    worst = std::max(worst, std::abs(objective::cross_entropy_spatial(p, q) -
                                     objective::kld(p, q) - objective::entropy(p)));
  }
  ok &= check("cross-entropy = KLD + entropy", worst < 1e-9);

  const io::AttentionMap p(2, 1, {0.5, 0.5}, true), q(2, 1, {0.25, 0.75}, true);
  ok &= check("kld([.5,.5],[.25,.75]) = 0.143841",
              std::abs(objective::kld(p, q) - 0.143841) < 1e-6);
  const io::AttentionMap a(4, 1, {1, 2, 3, 4}), b(4, 1, {4, 3, 2, 1});
  ok &= check("cc of reversed ramp = -1", std::abs(objective::cc(a, b) + 1.0) < 1e-12);

  bool stationary = true;
  for (double k : {0.1, 0.5, 2.0}) {
    const double e = objective::optimal_log_variance(k);
    const double slope = -k * std::exp(-e) + 0.5;
    stationary &= std::abs(slope) < 1e-12;
  }
  ok &= check("loss stationary at e = ln 2k", stationary);

  io::KnowledgeMask m(4, 1);
  m.values = {1, 0, 0, 0};
  const auto y = keb::embed_single(io::AttentionMap(4, 1, {0.25, 0.25, 0.25, 0.25}, true), m, {});
  ok &= check("knowledge embedding worked example",
              std::abs(y.values[0] - 0.590909) < 1e-5 && std::abs(y.values[1] - 0.136364) < 1e-5);

  return ok ? kOk : kFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised driving-attention training from pseudo-labels"};
  app.require_subcommand(1);

  fs::path out, data, config, ckpt, frame;
  std::uint64_t seed = 0;
  std::size_t samples = 500, sources = 2;
  std::string size, split = "test";

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--seed", seed, "Generator seed")->required();
  gen->add_option("--samples", samples, "Number of samples")->required();
  gen->add_option("--sources", sources, "Pseudo-label sources per sample");
  gen->add_option("--size", size, "Resolution HxW");

  auto* tr = app.add_subcommand("train", "Train from a dataset directory or manifest");
  tr->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  tr->add_option("--data", data, "Dataset directory or manifest")->required();
  tr->add_option("--out", out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Score a checkpoint against ground truth");
  ev->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  ev->add_option("--data", data, "Dataset directory or manifest")->required();
  ev->add_option("--split", split, "Split name");

  auto* inf = app.add_subcommand("infer", "Predict one frame");
  inf->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  inf->add_option("--frame", frame, "Frame (binary PPM)")->required();
  inf->add_option("--out", out, "Output ATNM path; a .pgm is written alongside")->required();

  auto* st = app.add_subcommand("selftest", "Run the built-in identity checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return gen_data(out, seed, samples, sources, size);
    if (*tr) return train_cmd(config, data, out);
    if (*ev) return eval_cmd(ckpt, data, split);
    if (*inf) return infer_cmd(ckpt, frame, out);
    if (*st) return selftest();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const DimensionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kOk;
}
