#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dap/checkpoint.hpp"
#include "dap/config.hpp"
#include "dap/dataset.hpp"
#include "dap/model.hpp"

namespace dap::train {

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean over the epoch's batches
  double val_kld = 0.0;     // NaN without a validation split
  double val_cc = 0.0;
  double lr = 0.0;          // rate used by the epoch's last step
};

struct TrainResult {
  Checkpoint last;
  Checkpoint best;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> history;
};

struct TrainOptions {
  /// When set, last.ckpt, best.ckpt and train_log.tsv are rewritten after
  /// every epoch.
  std::optional<std::filesystem::path> out_dir;
  /// Progress lines, one per epoch.
  std::ostream* log = nullptr;
};

/// Trains on the pseudo-labels of `train_set`. Ground truth of the training
/// samples is never read; `val_set`, when given and non-empty, is scored
/// against its ground truth after every epoch and picks the best epoch.
TrainResult train(const TrainConfig& config, const io::Dataset& train_set,
                  const io::Dataset* val_set = nullptr, const TrainOptions& options = {});

/// Rows of `sample_id \t KLD \t CC`. A constant prediction has no defined
/// correlation and is reported as nan.
struct MetricRow {
  std::string id;
  double kld = 0.0;
  double cc = 0.0;
};

struct EvalReport {
  std::vector<MetricRow> rows;
  double kld_mean = 0.0;
  double kld_std = 0.0;
  double cc_mean = 0.0;  // over rows with a defined cc
  double cc_std = 0.0;
  std::size_t cc_undefined = 0;
  std::vector<std::string> source_names;
  std::vector<double> baseline_kld;  // mean KLD(G, label_n) per source

  std::string to_text() const;
  /// Recovers rows and summary from to_text() output.
  static EvalReport parse(const std::string& text);
};

/// Scores the prediction branch against ground truth. Every sample must
/// carry ground truth.
EvalReport evaluate(const model::Model& model, const io::Dataset& data);
EvalReport evaluate(const Checkpoint& ckpt, const io::Dataset& data);

/// Predicts one frame file and writes `out` (ATNM) plus the same path with
/// a .pgm extension.
io::AttentionMap infer(const Checkpoint& ckpt, const std::filesystem::path& frame,
                       const std::filesystem::path& out);

}  // namespace dap::train
