#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dap/attention_map.hpp"

namespace dap::io {

/// Line-oriented sample list. Each data line is
///   <split> \t <frame> \t <label;label;...> \t <masks|-> \t <gt|->
/// where <masks> is either one mask path or `class:path` entries joined by
/// ';'. Paths are relative to the manifest's directory. Lines starting with
/// '#' carry metadata: `# sources\t<name;name;...>` names the label columns.
struct DatasetManifest {
  struct Entry {
    std::string split;
    std::filesystem::path frame;
    std::vector<std::filesystem::path> labels;
    std::vector<std::pair<std::optional<ObjectClass>, std::filesystem::path>> masks;
    std::optional<std::filesystem::path> ground_truth;
  };

  std::filesystem::path root;
  std::vector<std::string> source_names;
  std::vector<Entry> entries;

  static DatasetManifest read(const std::filesystem::path& file);
  void write(const std::filesystem::path& file) const;

  /// Entries of one split, keeping every `stride`-th in order.
  std::vector<Entry> select(const std::string& split, std::size_t stride = 1) const;
};

/// In-memory samples with instrumented ground-truth access. Records handed
/// in lose their ground truth to a private store; every ground_truth() call
/// is counted so callers can prove a code path never looked at it. Copies
/// and with_sources() views share the count; split() starts a fresh one.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<std::string> source_names, std::vector<SampleRecord> records);

  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const SampleRecord& operator[](std::size_t i) const { return samples_.at(i); }
  const std::vector<std::string>& source_names() const { return source_names_; }

  bool has_ground_truth(std::size_t i) const { return gt_.at(i).has_value(); }
  const AttentionMap& ground_truth(std::size_t i) const;
  std::size_t ground_truth_reads() const { return *gt_reads_; }

  /// Keeps only the named sources, in the given order.
  Dataset with_sources(const std::vector<std::string>& names) const;
  Dataset split(const std::string& name) const;

 private:
  std::vector<std::string> source_names_;
  std::vector<SampleRecord> samples_;
  std::vector<std::optional<AttentionMap>> gt_;
  std::shared_ptr<std::size_t> gt_reads_ = std::make_shared<std::size_t>(0);
};

/// Loads the samples of one split from a manifest.
Dataset load_dataset(const std::filesystem::path& manifest_file, const std::string& split,
                     std::size_t stride = 1);

/// Writes frames, labels, masks and ground truth under `dir` plus
/// `dir/manifest.tsv`. Returns the manifest path.
std::filesystem::path write_dataset(const std::vector<SampleRecord>& records,
                                    const std::filesystem::path& dir);

}  // namespace dap::io
