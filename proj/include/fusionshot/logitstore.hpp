#pragma once

// Logit data model: per-(model, split) CSV files, the JSON pool manifest,
// ingestion with alignment checks, and dense per-split views used by the
// scoring code.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusionshot/error.hpp"
#include "fusionshot/mask.hpp"

namespace fusionshot {

namespace fs = std::filesystem;

/// One episode's query logits from one base model.
struct LogitRecord {
  std::uint64_t episode_id = 0;
  int y_true = 0;
  std::vector<double> logits;

  friend bool operator==(const LogitRecord&, const LogitRecord&) = default;
};

/// All episodes of one split for one model, ordered by episode id.
struct LogitMatrix {
  std::string model_id;
  int K = 0;
  int J = 0;
  std::string split;
  std::vector<LogitRecord> records;

  std::size_t size() const noexcept { return records.size(); }

  /// Checks record shape, label range, finiteness and strictly increasing ids.
  void validate(const std::string& origin = "<memory>") const {
    if (K < 1) throw Error(ErrorKind::InconsistentK, origin + ": K must be positive");
    for (std::size_t r = 0; r < records.size(); ++r) {
      const auto& rec = records[r];
      const std::size_t line = r + 2;
      if (rec.logits.size() != static_cast<std::size_t>(K))
        throw Error(ErrorKind::InconsistentK, origin + ": record " + std::to_string(line) + " has " +
                                                  std::to_string(rec.logits.size()) + " logits, expected " +
                                                  std::to_string(K));
      if (rec.y_true < 0 || rec.y_true >= K) throw ParseError(origin, line, "y_true out of range");
      for (double z : rec.logits)
        if (!std::isfinite(z)) throw ParseError(origin, line, "non-finite logit");
      if (r > 0 && rec.episode_id <= records[r - 1].episode_id)
        throw ParseError(origin, line, "episode_id not strictly increasing");
    }
  }
};

struct ModelEntry {
  std::string model_id;
  std::string backbone;
  std::string distance;
  std::map<std::string, std::string> files;  // split -> path (relative to the manifest)
};

struct PoolManifest {
  std::string pool_name;
  int K = 0;
  int J = 0;
  std::vector<ModelEntry> models;
  std::map<std::string, std::size_t> episode_counts;
};

inline void to_json(nlohmann::json& j, const ModelEntry& m) {
  j = {{"model_id", m.model_id}, {"backbone", m.backbone}, {"distance", m.distance}, {"files", m.files}};
}

inline void from_json(const nlohmann::json& j, ModelEntry& m) {
  j.at("model_id").get_to(m.model_id);
  m.backbone = j.value("backbone", "");
  m.distance = j.value("distance", "");
  j.at("files").get_to(m.files);
}

inline void to_json(nlohmann::json& j, const PoolManifest& m) {
  j = {{"pool_name", m.pool_name},
       {"K", m.K},
       {"J", m.J},
       {"models", m.models},
       {"episode_counts", m.episode_counts}};
}

inline void from_json(const nlohmann::json& j, PoolManifest& m) {
  m.pool_name = j.value("pool_name", "");
  j.at("K").get_to(m.K);
  m.J = j.value("J", 0);
  j.at("models").get_to(m.models);
  if (j.contains("episode_counts")) j.at("episode_counts").get_to(m.episode_counts);
}

// ---------------------------------------------------------------------------
// Numeric helpers

/// Index of the largest entry; ties go to the lowest index.
inline int argmax(std::span<const double> v) {
  int best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  return best;
}

/// Numerically stable softmax of one row.
inline std::vector<double> softmax(std::span<const double> z) {
  std::vector<double> out(z.size());
  if (z.empty()) return out;
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) sum += out[k] = std::exp(z[k] - zmax);
  for (auto& p : out) p /= sum;
  return out;
}

/// Same records with each logit row replaced by its softmax.
inline LogitMatrix apply_softmax(const LogitMatrix& in) {
  LogitMatrix out = in;
  for (auto& rec : out.records) rec.logits = softmax(rec.logits);
  return out;
}

// ---------------------------------------------------------------------------
// CSV format: header `episode_id,y_true,z_0,...,z_{K-1}`, one row per episode.

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  while (!s.empty() && (s.front() == ' ')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && !s.empty();
}

}  // namespace detail

inline void write_logit_csv(std::ostream& os, const LogitMatrix& m) {
  os << "episode_id,y_true";
  for (int k = 0; k < m.K; ++k) os << ",z_" << k;
  os << '\n';
  for (const auto& rec : m.records) {
    os << rec.episode_id << ',' << rec.y_true;
    for (double z : rec.logits) os << ',' << detail::format_double(z);
    os << '\n';
  }
}

inline void write_logit_csv(const fs::path& path, const LogitMatrix& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  write_logit_csv(os, m);
}

inline LogitMatrix read_logit_csv(std::istream& is, const std::string& origin, std::string model_id = {},
                                  std::string split = {}) {
  LogitMatrix m;
  m.model_id = std::move(model_id);
  m.split = std::move(split);
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = detail::split_commas(line);
    if (!have_header) {
      if (cells.size() < 3 || cells[0] != "episode_id" || cells[1] != "y_true")
        throw ParseError(origin, lineno, "expected header episode_id,y_true,z_0,...");
      for (std::size_t k = 2; k < cells.size(); ++k)
        if (cells[k] != "z_" + std::to_string(k - 2)) throw ParseError(origin, lineno, "bad logit column name");
      m.K = static_cast<int>(cells.size() - 2);
      have_header = true;
      continue;
    }
    if (cells.size() != static_cast<std::size_t>(m.K) + 2)
      throw ParseError(origin, lineno, "expected " + std::to_string(m.K + 2) + " columns");
    LogitRecord rec;
    if (!detail::parse_number(cells[0], rec.episode_id)) throw ParseError(origin, lineno, "bad episode_id");
    if (!detail::parse_number(cells[1], rec.y_true)) throw ParseError(origin, lineno, "bad y_true");
    if (rec.y_true < 0 || rec.y_true >= m.K) throw ParseError(origin, lineno, "y_true out of range");
    rec.logits.resize(static_cast<std::size_t>(m.K));
    for (int k = 0; k < m.K; ++k) {
      double z = 0.0;
      if (!detail::parse_number(cells[static_cast<std::size_t>(k) + 2], z) || !std::isfinite(z))
        throw ParseError(origin, lineno, "bad logit z_" + std::to_string(k));
      rec.logits[static_cast<std::size_t>(k)] = z;
    }
    if (!m.records.empty() && rec.episode_id <= m.records.back().episode_id)
      throw ParseError(origin, lineno, "episode_id not strictly increasing");
    m.records.push_back(std::move(rec));
  }
  if (!have_header) throw ParseError(origin, lineno == 0 ? 1 : lineno, "missing header");
  return m;
}

inline LogitMatrix read_logit_csv(const fs::path& path, std::string model_id = {}, std::string split = {}) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::MissingFile, path.string());
  return read_logit_csv(is, path.string(), std::move(model_id), std::move(split));
}

// ---------------------------------------------------------------------------
// Pool

/// N aligned models with their logit matrices per split. Immutable once built.
class Pool {
 public:
  Pool() = default;

  /// Validates shapes and alignment. `data[split][i]` belongs to manifest.models[i].
  static Pool assemble(PoolManifest manifest, std::map<std::string, std::vector<LogitMatrix>> data) {
    const std::size_t n = manifest.models.size();
    if (n < 2) throw Error(ErrorKind::InvalidManifest, "pool needs at least two models");
    if (n > kMaxPoolSize) throw Error(ErrorKind::InvalidManifest, "pool larger than 64 models");
    if (manifest.K < 1) throw Error(ErrorKind::InvalidManifest, "K must be positive");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (manifest.models[i].model_id == manifest.models[j].model_id)
          throw Error(ErrorKind::InvalidManifest, "duplicate model_id " + manifest.models[i].model_id);
    if (data.empty()) throw Error(ErrorKind::InvalidManifest, "pool has no splits");

    for (auto& [split, mats] : data) {
      if (mats.size() != n)
        throw Error(ErrorKind::InvalidManifest, "split '" + split + "' is missing for some models");
      for (std::size_t i = 0; i < n; ++i) {
        auto& m = mats[i];
        m.model_id = manifest.models[i].model_id;
        m.split = split;
        if (m.K != manifest.K)
          throw Error(ErrorKind::InconsistentK, "model '" + m.model_id + "' split '" + split + "' has K=" +
                                                    std::to_string(m.K) + ", pool K=" + std::to_string(manifest.K));
        m.validate(m.model_id + "/" + split);
      }
      const auto& ref = mats[0].records;
      for (std::size_t i = 1; i < n; ++i) {
        const auto& other = mats[i].records;
        const std::size_t common = std::min(ref.size(), other.size());
        for (std::size_t e = 0; e < common; ++e) {
          if (ref[e].episode_id != other[e].episode_id)
            throw MisalignedEpisodes(mats[i].model_id, std::min(ref[e].episode_id, other[e].episode_id));
          if (ref[e].y_true != other[e].y_true)
            throw MisalignedEpisodes(mats[i].model_id, ref[e].episode_id);
        }
        if (ref.size() != other.size())
          throw MisalignedEpisodes(mats[i].model_id,
                                   ref.size() > other.size() ? ref[common].episode_id : other[common].episode_id);
      }
      auto it = manifest.episode_counts.find(split);
      if (it != manifest.episode_counts.end() && it->second != ref.size())
        throw Error(ErrorKind::InvalidManifest, "split '" + split + "' declares " + std::to_string(it->second) +
                                                    " episodes, files hold " + std::to_string(ref.size()));
      manifest.episode_counts[split] = ref.size();
    }
    Pool pool;
    pool.manifest_ = std::move(manifest);
    pool.data_ = std::move(data);
    return pool;
  }

  const PoolManifest& manifest() const noexcept { return manifest_; }
  std::size_t size() const noexcept { return manifest_.models.size(); }
  int ways() const noexcept { return manifest_.K; }

  bool has_split(const std::string& split) const { return data_.count(split) != 0; }

  std::vector<std::string> splits() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : data_) out.push_back(k);
    return out;
  }

  std::size_t episodes(const std::string& split) const { return matrices(split).front().size(); }

  const std::vector<LogitMatrix>& matrices(const std::string& split) const {
    auto it = data_.find(split);
    if (it == data_.end()) throw Error(ErrorKind::UnknownSplit, "split '" + split + "' not in pool");
    return it->second;
  }

  const LogitMatrix& logits(std::size_t model, const std::string& split) const { return matrices(split).at(model); }

  std::optional<std::size_t> index_of(const std::string& model_id) const {
    for (std::size_t i = 0; i < size(); ++i)
      if (manifest_.models[i].model_id == model_id) return i;
    return std::nullopt;
  }

 private:
  PoolManifest manifest_;
  std::map<std::string, std::vector<LogitMatrix>> data_;
};

inline PoolManifest read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::MissingFile, path.string());
  try {
    return nlohmann::json::parse(is).get<PoolManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidManifest, path.string() + ": " + e.what());
  }
}

/// Loads every file a manifest references and returns the aligned pool.
inline Pool ingest(const fs::path& manifest_path) {
  PoolManifest manifest = read_manifest(manifest_path);
  const fs::path base = manifest_path.parent_path();
  std::map<std::string, std::vector<LogitMatrix>> data;
  for (const auto& model : manifest.models) {
    for (const auto& [split, file] : model.files) {
      fs::path p = fs::path(file).is_absolute() ? fs::path(file) : base / file;
      if (!fs::exists(p)) throw Error(ErrorKind::MissingFile, p.string() + " (model '" + model.model_id + "')");
      data[split].push_back(read_logit_csv(p, model.model_id, split));
    }
  }
  for (const auto& [split, mats] : data)
    if (mats.size() != manifest.models.size())
      throw Error(ErrorKind::InvalidManifest, "split '" + split + "' is not listed for every model");
  return Pool::assemble(std::move(manifest), std::move(data));
}

/// Writes one CSV per (model, split) plus manifest.json into `dir`.
inline fs::path write_pool(const Pool& pool, const fs::path& dir) {
  fs::create_directories(dir);
  PoolManifest manifest = pool.manifest();
  for (std::size_t i = 0; i < pool.size(); ++i) {
    auto& model = manifest.models[i];
    model.files.clear();
    for (const auto& split : pool.splits()) {
      std::string name = model.model_id + "_" + split + ".csv";
      write_logit_csv(dir / name, pool.logits(i, split));
      model.files[split] = name;
    }
  }
  const fs::path manifest_path = dir / "manifest.json";
  std::ofstream os(manifest_path);
  os << nlohmann::json(manifest).dump(2) << '\n';
  return manifest_path;
}

// ---------------------------------------------------------------------------
// Correctness and dense split tables

/// Per-episode failure patterns: bit i of failures[e] is set when model i
/// misclassifies episode e.
class CorrectnessMatrix {
 public:
  CorrectnessMatrix() = default;
  CorrectnessMatrix(std::string split, std::size_t models, std::vector<std::uint64_t> failures)
      : split_(std::move(split)), models_(models), failures_(std::move(failures)) {}

  const std::string& split() const noexcept { return split_; }
  std::size_t models() const noexcept { return models_; }
  std::size_t episodes() const noexcept { return failures_.size(); }
  bool correct(std::size_t model, std::size_t episode) const { return ((failures_[episode] >> model) & 1U) == 0; }
  std::uint64_t failures(std::size_t episode) const { return failures_[episode]; }
  std::span<const std::uint64_t> failure_patterns() const noexcept { return failures_; }

  std::vector<bool> row(std::size_t model) const {
    std::vector<bool> out(episodes());
    for (std::size_t e = 0; e < episodes(); ++e) out[e] = correct(model, e);
    return out;
  }

  friend bool operator==(const CorrectnessMatrix&, const CorrectnessMatrix&) = default;

 private:
  std::string split_;
  std::size_t models_ = 0;
  std::vector<std::uint64_t> failures_;
};

inline CorrectnessMatrix correctness(const Pool& pool, const std::string& split) {
  const auto& mats = pool.matrices(split);
  const std::size_t E = mats.front().size();
  std::vector<std::uint64_t> failures(E, 0);
  for (std::size_t i = 0; i < mats.size(); ++i)
    for (std::size_t e = 0; e < E; ++e) {
      const auto& rec = mats[i].records[e];
      if (argmax(rec.logits) != rec.y_true) failures[e] |= std::uint64_t{1} << i;
    }
  return CorrectnessMatrix(split, mats.size(), std::move(failures));
}

/// Dense, model-major copy of one split: predictions, softmax rows and raw
/// logits, plus the correctness matrix. Built once per split and shared
/// read-only by the scorers.
struct SplitTable {
  std::string split;
  std::size_t models = 0;
  std::size_t episodes = 0;
  int K = 0;
  std::vector<std::uint64_t> episode_ids;
  std::vector<int> y_true;
  std::vector<int> predicted;  // [model * episodes + e]
  std::vector<double> probs;   // [(model * episodes + e) * K + k]
  std::vector<double> logits;  // same layout as probs
  CorrectnessMatrix correct;

  int prediction(std::size_t model, std::size_t e) const { return predicted[model * episodes + e]; }

  std::span<const double> prob_row(std::size_t model, std::size_t e) const {
    return {probs.data() + (model * episodes + e) * static_cast<std::size_t>(K), static_cast<std::size_t>(K)};
  }

  std::span<const double> logit_row(std::size_t model, std::size_t e) const {
    return {logits.data() + (model * episodes + e) * static_cast<std::size_t>(K), static_cast<std::size_t>(K)};
  }

  double member_accuracy(std::size_t model) const {
    std::size_t ok = 0;
    for (std::size_t e = 0; e < episodes; ++e) ok += correct.correct(model, e);
    return episodes == 0 ? 0.0 : static_cast<double>(ok) / static_cast<double>(episodes);
  }
};

inline SplitTable make_table(const Pool& pool, const std::string& split) {
  const auto& mats = pool.matrices(split);
  SplitTable t;
  t.split = split;
  t.models = mats.size();
  t.episodes = mats.front().size();
  t.K = pool.ways();
  const auto K = static_cast<std::size_t>(t.K);
  t.episode_ids.reserve(t.episodes);
  t.y_true.reserve(t.episodes);
  for (const auto& rec : mats.front().records) {
    t.episode_ids.push_back(rec.episode_id);
    t.y_true.push_back(rec.y_true);
  }
  t.predicted.resize(t.models * t.episodes);
  t.probs.resize(t.models * t.episodes * K);
  t.logits.resize(t.models * t.episodes * K);
  for (std::size_t i = 0; i < t.models; ++i)
    for (std::size_t e = 0; e < t.episodes; ++e) {
      const auto& z = mats[i].records[e].logits;
      const std::size_t row = i * t.episodes + e;
      t.predicted[row] = argmax(z);
      auto p = softmax(z);
      std::copy(z.begin(), z.end(), t.logits.begin() + static_cast<std::ptrdiff_t>(row * K));
      std::copy(p.begin(), p.end(), t.probs.begin() + static_cast<std::ptrdiff_t>(row * K));
    }
  t.correct = correctness(pool, split);
  return t;
}

}  // namespace fusionshot
