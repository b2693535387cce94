#include "dap/dataset.hpp"

#include <fstream>
#include <sstream>

#include "dap/error.hpp"
#include "dap/map_io.hpp"

namespace dap::io {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) parts.push_back(cur);
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

// Maps already flagged as distributions are kept bit-for-bit.
AttentionMap as_distribution(AttentionMap m) {
  m.validate();
  return m.normalized ? m : normalize_spatial(m);
}

}  // namespace

DatasetManifest DatasetManifest::read(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open manifest " + file.string());
  DatasetManifest m;
  m.root = file.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto fields = split_on(line.substr(1), '\t');
      if (fields.size() == 2 && fields[0] == " sources") {
        m.source_names = split_on(fields[1], ';');
      }
      continue;
    }
    const auto f = split_on(line, '\t');
    if (f.size() != 5) {
      throw DataError(file.string() + ":" + std::to_string(lineno) +
                      ": expected 5 tab-separated fields, got " + std::to_string(f.size()));
    }
    Entry e;
    e.split = f[0];
    e.frame = f[1];
    for (const auto& p : split_on(f[2], ';')) e.labels.emplace_back(p);
    if (e.labels.empty()) {
      throw DataError(file.string() + ":" + std::to_string(lineno) + ": no pseudo-labels");
    }
    if (f[3] != "-") {
      for (const auto& item : split_on(f[3], ';')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) {
          e.masks.emplace_back(std::nullopt, item);
        } else {
          e.masks.emplace_back(parse_class(item.substr(0, colon)), item.substr(colon + 1));
        }
      }
    }
    if (f[4] != "-") e.ground_truth = f[4];
    m.entries.push_back(std::move(e));
  }
  if (m.source_names.empty() && !m.entries.empty()) {
    for (std::size_t i = 0; i < m.entries.front().labels.size(); ++i) {
      m.source_names.push_back("source" + std::to_string(i));
    }
  }
  for (const auto& e : m.entries) {
    if (e.labels.size() != m.source_names.size()) {
      throw DataError(file.string() + ": label count does not match the sources header");
    }
  }
  return m;
}

void DatasetManifest::write(const fs::path& file) const {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + file.string());
  out << "# dap-manifest v1\n";
  out << "# sources\t" << join(source_names, ';') << "\n";
  for (const auto& e : entries) {
    std::vector<std::string> labels, masks;
    for (const auto& l : e.labels) labels.push_back(l.generic_string());
    for (const auto& [cls, p] : e.masks) {
      masks.push_back(cls ? std::string(class_name(*cls)) + ":" + p.generic_string()
                          : p.generic_string());
    }
    out << e.split << '\t' << e.frame.generic_string() << '\t' << join(labels, ';') << '\t'
        << (masks.empty() ? "-" : join(masks, ';')) << '\t'
        << (e.ground_truth ? e.ground_truth->generic_string() : "-") << '\n';
  }
}

std::vector<DatasetManifest::Entry> DatasetManifest::select(const std::string& split,
                                                            std::size_t stride) const {
  if (stride == 0) throw ConfigError("manifest stride must be at least 1");
  std::vector<Entry> out;
  std::size_t k = 0;
  for (const auto& e : entries) {
    if (e.split != split) continue;
    if (k++ % stride == 0) out.push_back(e);
  }
  return out;
}

Dataset::Dataset(std::vector<std::string> source_names, std::vector<SampleRecord> records)
    : source_names_(std::move(source_names)) {
  samples_.reserve(records.size());
  gt_.reserve(records.size());
  for (auto& r : records) {
    r.validate();
    if (r.pseudo_labels.source_names != source_names_) {
      throw DataError("sample " + r.id + " has sources '" +
                      join(r.pseudo_labels.source_names, ';') + "', dataset expects '" +
                      join(source_names_, ';') + "'");
    }
    gt_.push_back(std::move(r.ground_truth));
    r.ground_truth.reset();
    samples_.push_back(std::move(r));
  }
}

const AttentionMap& Dataset::ground_truth(std::size_t i) const {
  ++*gt_reads_;
  const auto& g = gt_.at(i);
  if (!g) throw DataError("sample " + samples_.at(i).id + " has no ground truth");
  return *g;
}

Dataset Dataset::with_sources(const std::vector<std::string>& names) const {
  if (names.empty()) throw ConfigError("at least one source must be selected");
  std::vector<std::size_t> idx;
  for (const auto& n : names) {
    std::size_t k = 0;
    while (k < source_names_.size() && source_names_[k] != n) ++k;
    if (k == source_names_.size()) {
      throw ConfigError("source '" + n + "' is not provided by the dataset (have '" +
                        join(source_names_, ';') + "')");
    }
    idx.push_back(k);
  }
  Dataset out;
  out.gt_reads_ = gt_reads_;
  out.source_names_ = names;
  out.gt_ = gt_;
  out.samples_ = samples_;
  for (auto& s : out.samples_) {
    PseudoLabelSet sel;
    for (std::size_t k : idx) {
      sel.source_names.push_back(s.pseudo_labels.source_names[k]);
      sel.maps.push_back(s.pseudo_labels.maps[k]);
    }
    sel.embedded = s.pseudo_labels.embedded;
    s.pseudo_labels = std::move(sel);
  }
  return out;
}

Dataset Dataset::split(const std::string& name) const {
  Dataset out;
  out.source_names_ = source_names_;
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    if (samples_[i].split == name) {
      out.samples_.push_back(samples_[i]);
      out.gt_.push_back(gt_[i]);
    }
  }
  return out;
}

Dataset load_dataset(const fs::path& manifest_file, const std::string& split,
                     std::size_t stride) {
  const DatasetManifest m = DatasetManifest::read(manifest_file);
  std::vector<SampleRecord> records;
  for (const auto& e : m.select(split, stride)) {
    SampleRecord r;
    r.id = e.frame.stem().string();
    r.split = e.split;
    r.frame = load_frame(m.root / e.frame);
    r.pseudo_labels.source_names = m.source_names;
    for (const auto& l : e.labels) {
      r.pseudo_labels.maps.push_back(as_distribution(load_map(m.root / l)));
    }
    for (const auto& [cls, p] : e.masks) {
      KnowledgeMask mask = load_mask(m.root / p);
      if (cls) mask.class_tags = {*cls};
      r.instance_masks.push_back(std::move(mask));
    }
    if (e.ground_truth) r.ground_truth = as_distribution(load_map(m.root / *e.ground_truth));
    records.push_back(std::move(r));
  }
  return Dataset(m.source_names, std::move(records));
}

fs::path write_dataset(const std::vector<SampleRecord>& records, const fs::path& dir) {
  fs::create_directories(dir);
  DatasetManifest m;
  m.root = dir;
  if (!records.empty()) m.source_names = records.front().pseudo_labels.source_names;
  for (const auto& r : records) {
    DatasetManifest::Entry e;
    e.split = r.split;
    e.frame = fs::path("frames") / (r.id + ".ppm");
    save_frame(r.frame, dir / e.frame);
    for (std::size_t s = 0; s < r.pseudo_labels.size(); ++s) {
      fs::path p = fs::path("labels") / (r.id + "_" + r.pseudo_labels.source_names[s] + ".atnm");
      save_map(r.pseudo_labels.maps[s], dir / p);
      e.labels.push_back(p);
    }
    for (std::size_t k = 0; k < r.instance_masks.size(); ++k) {
      const auto& mask = r.instance_masks[k];
      fs::path p = fs::path("masks") / (r.id + "_" + std::to_string(k) + ".atnm");
      save_mask(mask, dir / p);
      std::optional<ObjectClass> cls;
      if (mask.class_tags.size() == 1) cls = mask.class_tags.front();
      e.masks.emplace_back(cls, p);
    }
    if (r.ground_truth) {
      e.ground_truth = fs::path("gt") / (r.id + ".atnm");
      save_map(*r.ground_truth, dir / *e.ground_truth);
    }
    m.entries.push_back(std::move(e));
  }
  const fs::path file = dir / "manifest.tsv";
  m.write(file);
  return file;
}

}  // namespace dap::io
