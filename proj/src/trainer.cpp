#include "dap/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "dap/error.hpp"
#include "dap/keb.hpp"
#include "dap/map_io.hpp"
#include "dap/objective.hpp"

namespace dap::train {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string num(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double parse_num(const std::string& s) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError("report: malformed number '" + s + "'");
  }
  return v;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, '\t')) out.push_back(f);
  return out;
}

void copy_plane(const io::AttentionMap& m, std::span<real> dst) {
  for (std::size_t i = 0; i < m.size(); ++i) dst[i] = static_cast<real>(m.values[i]);
}

// Inputs of one sample after knowledge embedding, laid out for batching.
struct Prepared {
  Tensor frame;                // [3, H, W]
  std::vector<real> labels;    // N planes, the loss targets
  std::vector<real> umb;       // N x label_channels planes
};

std::size_t label_channels(const TrainConfig& c) {
  return c.keb.strategy == keb::Strategy::Concat ? 2 : 1;
}

Prepared prepare(const io::SampleRecord& s, const TrainConfig& c) {
  if (s.height() != c.height || s.width() != c.width) {
    throw DataError("sample " + s.id + " is " + std::to_string(s.height()) + "x" +
                    std::to_string(s.width()) + ", config expects " + std::to_string(c.height) +
                    "x" + std::to_string(c.width));
  }
  const std::size_t plane = c.height * c.width;
  const std::size_t n = s.pseudo_labels.size();
  Prepared p;
  p.frame = s.frame;
  p.labels.resize(n * plane);
  const auto mask = keb::merge_instance_masks(s.instance_masks, c.keb.keep_classes, c.width,
                                              c.height);
  const io::PseudoLabelSet targets = c.keb.strategy == keb::Strategy::Single
                                         ? keb::embed_labels(s.pseudo_labels, mask, c.keb)
                                         : s.pseudo_labels;
  for (std::size_t k = 0; k < n; ++k) {
    copy_plane(targets.maps[k], std::span<real>(p.labels).subspan(k * plane, plane));
  }
  const std::size_t lc = label_channels(c);
  p.umb.resize(n * lc * plane);
  for (std::size_t k = 0; k < n; ++k) {
    auto dst = std::span<real>(p.umb).subspan(k * lc * plane, lc * plane);
    copy_plane(targets.maps[k], dst.subspan(0, plane));
    if (lc == 2) {
      for (std::size_t i = 0; i < plane; ++i) dst[plane + i] = static_cast<real>(mask.values[i]);
    }
  }
  return p;
}

struct Batch {
  Tensor frames;
  Tensor labels;
  std::vector<Tensor> umb;
};

Batch assemble(const std::vector<Prepared>& data, std::span<const std::size_t> idx,
               std::size_t n, std::size_t lc, std::size_t h, std::size_t w) {
  const std::size_t b = idx.size();
  const std::size_t plane = h * w;
  Batch out;
  out.frames = Tensor({b, 3, h, w});
  out.labels = Tensor({b, n, h, w});
  for (std::size_t k = 0; k < n; ++k) out.umb.emplace_back(Shape{b, lc, h, w});
  for (std::size_t i = 0; i < b; ++i) {
    const Prepared& p = data[idx[i]];
    std::copy(p.frame.data().begin(), p.frame.data().end(),
              out.frames.data().begin() + static_cast<std::ptrdiff_t>(i * 3 * plane));
    std::copy(p.labels.begin(), p.labels.end(),
              out.labels.data().begin() + static_cast<std::ptrdiff_t>(i * n * plane));
    for (std::size_t k = 0; k < n; ++k) {
      const auto src = p.umb.begin() + static_cast<std::ptrdiff_t>(k * lc * plane);
      std::copy(src, src + static_cast<std::ptrdiff_t>(lc * plane),
                out.umb[k].data().begin() + static_cast<std::ptrdiff_t>(i * lc * plane));
    }
  }
  return out;
}

bool all_finite(const std::vector<Tensor>& ts) {
  for (const auto& t : ts) {
    for (real v : t.data()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  if (xs.empty()) {
    mean = sd = kNaN;
    return;
  }
  mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double acc = 0.0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  sd = std::sqrt(acc / static_cast<double>(xs.size()));
}

void write_log(const std::filesystem::path& file, const std::vector<EpochRecord>& history) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  out << "epoch\ttrain_loss\tval_kld\tval_cc\tlr\n";
  for (const auto& r : history) {
    out << r.epoch << '\t' << num(r.train_loss) << '\t' << num(r.val_kld) << '\t'
        << num(r.val_cc) << '\t' << num(r.lr) << '\n';
  }
}

}  // namespace

TrainResult train(const TrainConfig& config, const io::Dataset& train_set,
                  const io::Dataset* val_set, const TrainOptions& options) {
  config.validate();
  if (train_set.empty()) throw DataError("training split is empty");
  const io::Dataset data =
      config.sources.empty() ? train_set.with_sources(train_set.source_names())
                             : train_set.with_sources(config.sources);
  const std::size_t n = data.source_names().size();
  if (n == 0) throw ConfigError("no pseudo-label sources selected");
  std::optional<io::Dataset> val;
  if (val_set && !val_set->empty()) val = *val_set;

  const std::size_t lc = label_channels(config);
  std::vector<Prepared> prepared;
  prepared.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) prepared.push_back(prepare(data[i], config));

  model::Model model(model_config(config, n, lc), config.seed);
  auto& store = model.params();
  std::vector<Tensor> initial;
  for (std::size_t i = 0; i < store.size(); ++i) initial.push_back(store.value(i));
  AdamState adam = AdamState::zeros_like(initial);
  std::vector<Tensor*> param_ptrs;
  for (std::size_t i = 0; i < store.size(); ++i) param_ptrs.push_back(&store.value(i));

  const std::size_t per_epoch = (data.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total = per_epoch * config.epochs;
  const std::size_t warmup = config.resolve_warmup(total);
  AdamHyper hyper;
  hyper.beta1 = config.beta1;
  hyper.beta2 = config.beta2;
  hyper.weight_decay = config.weight_decay;

  if (options.out_dir) std::filesystem::create_directories(*options.out_dir);

  TrainResult result;
  double best_kld = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(data.size());
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed),
                      static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 shuffle_rng(seq);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      const std::size_t lo = b * config.batch_size;
      const std::size_t hi = std::min(lo + config.batch_size, order.size());
      const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      const Batch batch = assemble(prepared, idx, n, lc, config.height, config.width);

      ad::Tape tape;
      nn::Bound p(tape, store, true);
      std::vector<ad::Var> umb_in;
      for (const auto& t : batch.umb) umb_in.push_back(tape.constant(t));
      const auto out = model.forward(p, tape.constant(batch.frames), umb_in);
      const auto loss =
          objective::uncertainty_loss(out.saliency, batch.labels, out.log_variance_stacked);
      const double value = loss.total.value().item();
      tape.backward(loss.total);
      std::vector<Tensor> grads = p.grads();
      if (!std::isfinite(value) || !all_finite(grads)) {
        std::string ids;
        for (auto i : idx) ids += (ids.empty() ? "" : ",") + data[i].id;
        throw NumericError("non-finite " + std::string(std::isfinite(value) ? "gradient" : "loss") +
                           " at epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                           " (step " + std::to_string(step) + ", samples " + ids + ")");
      }
      hyper.lr = lr_schedule(step, total, warmup, config.lr);
      adamw_step(param_ptrs, grads, adam, hyper);
      loss_sum += value;
      rec.lr = hyper.lr;
    }
    rec.train_loss = loss_sum / static_cast<double>(per_epoch);
    rec.val_kld = rec.val_cc = kNaN;
    if (val) {
      const EvalReport r = evaluate(model, *val);
      rec.val_kld = r.kld_mean;
      rec.val_cc = r.cc_mean;
    }
    result.history.push_back(rec);
    result.last = make_checkpoint(config, model, adam, step, epoch);
    // Without validation the latest epoch is the best one.
    if (!val || rec.val_kld < best_kld || result.best_epoch == 0) {
      best_kld = val ? rec.val_kld : best_kld;
      result.best = result.last;
      result.best_epoch = epoch;
    }
    if (options.out_dir) {
      save_checkpoint(result.last, *options.out_dir / "last.ckpt");
      save_checkpoint(result.best, *options.out_dir / "best.ckpt");
      write_log(*options.out_dir / "train_log.tsv", result.history);
    }
    if (options.log) {
      *options.log << "epoch " << epoch << "/" << config.epochs << "  loss " << rec.train_loss;
      if (val) *options.log << "  val_kld " << rec.val_kld << "  val_cc " << rec.val_cc;
      *options.log << "  lr " << rec.lr << "\n";
      options.log->flush();
    }
  }
  return result;
}

EvalReport evaluate(const model::Model& model, const io::Dataset& data) {
  if (data.empty()) throw DataError("evaluation split is empty");
  const auto& mc = model.config().apb;
  EvalReport rep;
  rep.source_names = data.source_names();
  rep.baseline_kld.assign(rep.source_names.size(), 0.0);
  std::vector<double> klds, ccs;
  constexpr std::size_t kChunk = 32;
  for (std::size_t lo = 0; lo < data.size(); lo += kChunk) {
    const std::size_t hi = std::min(lo + kChunk, data.size());
    Tensor frames({hi - lo, 3, mc.height, mc.width});
    const std::size_t stride = 3 * mc.height * mc.width;
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& f = data[i].frame;
      if (f.size() != stride) {
        throw DataError("sample " + data[i].id + " does not match the model resolution");
      }
      std::copy(f.data().begin(), f.data().end(),
                frames.data().begin() + static_cast<std::ptrdiff_t>((i - lo) * stride));
    }
    const auto preds = model.predict_batch(frames);
    for (std::size_t i = lo; i < hi; ++i) {
      if (!data.has_ground_truth(i)) {
        throw DataError("sample " + data[i].id + " has no ground truth");
      }
      const io::AttentionMap& g = data.ground_truth(i);
      const io::AttentionMap& s = preds[i - lo];
      MetricRow row{data[i].id, objective::kld(g, s), kNaN};
      try {
        row.cc = objective::cc(s, g);
        ccs.push_back(row.cc);
      } catch (const NumericError&) {
        ++rep.cc_undefined;
      }
      klds.push_back(row.kld);
      rep.rows.push_back(row);
      const auto& labels = data[i].pseudo_labels;
      for (std::size_t k = 0; k < labels.size() && k < rep.baseline_kld.size(); ++k) {
        rep.baseline_kld[k] += objective::kld(g, labels.maps[k]);
      }
    }
  }
  for (auto& b : rep.baseline_kld) b /= static_cast<double>(data.size());
  mean_std(klds, rep.kld_mean, rep.kld_std);
  mean_std(ccs, rep.cc_mean, rep.cc_std);
  return rep;
}

EvalReport evaluate(const Checkpoint& ckpt, const io::Dataset& data) {
  const model::Model m = restore_model(ckpt);
  return evaluate(m, data);
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "sample_id\tKLD\tCC\n";
  for (const auto& r : rows) os << r.id << '\t' << num(r.kld) << '\t' << num(r.cc) << '\n';
  os << "# kld_mean\t" << num(kld_mean) << '\n';
  os << "# kld_std\t" << num(kld_std) << '\n';
  os << "# cc_mean\t" << num(cc_mean) << '\n';
  os << "# cc_std\t" << num(cc_std) << '\n';
  os << "# cc_undefined\t" << cc_undefined << '\n';
  for (std::size_t k = 0; k < source_names.size(); ++k) {
    os << "# baseline_kld\t" << source_names[k] << '\t' << num(baseline_kld[k]) << '\n';
  }
  return os.str();
}

EvalReport EvalReport::parse(const std::string& text) {
  EvalReport rep;
  std::istringstream in(text);
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto f = split_tabs(line.substr(2));
      if (f.size() < 2) throw DataError("report: malformed summary line '" + line + "'");
      if (f[0] == "kld_mean") rep.kld_mean = parse_num(f[1]);
      else if (f[0] == "kld_std") rep.kld_std = parse_num(f[1]);
      else if (f[0] == "cc_mean") rep.cc_mean = parse_num(f[1]);
      else if (f[0] == "cc_std") rep.cc_std = parse_num(f[1]);
      else if (f[0] == "cc_undefined") rep.cc_undefined = static_cast<std::size_t>(parse_num(f[1]));
      else if (f[0] == "baseline_kld" && f.size() == 3) {
        rep.source_names.push_back(f[1]);
        rep.baseline_kld.push_back(parse_num(f[2]));
      } else {
        throw DataError("report: unknown summary key '" + f[0] + "'");
      }
      continue;
    }
    if (!header) {
      if (line != "sample_id\tKLD\tCC") throw DataError("report: missing header line");
      header = true;
      continue;
    }
    const auto f = split_tabs(line);
    if (f.size() != 3) throw DataError("report: expected 3 fields in '" + line + "'");
    rep.rows.push_back({f[0], parse_num(f[1]), parse_num(f[2])});
  }
  if (!header) throw DataError("report: missing header line");
  return rep;
}

io::AttentionMap infer(const Checkpoint& ckpt, const std::filesystem::path& frame,
                       const std::filesystem::path& out) {
  const model::Model m = restore_model(ckpt);
  const io::AttentionMap s = m.predict(io::load_frame(frame));
  io::save_map(s, out);
  std::filesystem::path pgm = out;
  pgm.replace_extension(".pgm");
  if (pgm == out) pgm += ".pgm";
  io::export_pgm(s, pgm);
  return s;
}

}  // namespace dap::train
