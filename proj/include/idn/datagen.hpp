#pragma once

// Streaming feature datasets: the synthetic prototype-plus-noise benchmark,
// tab-separated feature records with a manifest, and sliding windows.
//
// Record file: one chunk per line,
//   video_id <TAB> chunk_index <TAB> label <TAB> f_1 <TAB> ... <TAB> f_dx
// Floats are written in shortest round-trip form. Label 0 is background.
//
// Manifest: UTF-8 text,
//   idn-manifest 1
//   d_x=<int>
//   num_classes=<K>
//   chunks=<total>
//   files:
//   <split> <TAB> <relative path> <TAB> <chunk count>
// Blank lines and lines starting with '#' are ignored.

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "idn/numerics.hpp"

namespace idn {

struct FeatureChunk {
  std::string video_id;
  std::size_t index = 0;
  Vec features;
  std::size_t label = 0;

  friend bool operator==(const FeatureChunk&, const FeatureChunk&) = default;
};

struct Video {
  std::string id;
  std::string split;
  std::vector<FeatureChunk> chunks;

  friend bool operator==(const Video&, const Video&) = default;
};

struct Dataset {
  std::size_t feature_dim = 0;
  std::size_t num_classes = 0;  // K action classes; labels range over 0..K
  std::vector<Video> videos;

  std::size_t chunk_count() const {
    std::size_t n = 0;
    for (const auto& v : videos) n += v.chunks.size();
    return n;
  }

  /// Videos whose split tag equals `split`; all videos when `split` is empty.
  Dataset subset(std::string_view split) const {
    Dataset d{feature_dim, num_classes, {}};
    for (const auto& v : videos) {
      if (split.empty() || v.split == split) d.videos.push_back(v);
    }
    return d;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// T + 1 consecutive chunks ending at `position` of a video, oldest first.
/// `relevance[t]` is 1 exactly when chunk t has the same label as the newest chunk.
struct Window {
  std::string video_id;
  std::size_t position = 0;
  std::vector<Vec> features;
  std::vector<std::size_t> labels;
  std::vector<int> relevance;
  std::size_t padded = 0;  // leading zero-feature background chunks

  std::size_t steps() const { return features.size(); }
  std::size_t current_label() const { return labels.back(); }
};

inline std::vector<int> relevance_flags(const std::vector<std::size_t>& labels) {
  std::vector<int> r(labels.size());
  for (std::size_t t = 0; t < labels.size(); ++t) r[t] = labels[t] == labels.back() ? 1 : 0;
  return r;
}

/// One window per chunk of every video. Positions with fewer than T earlier
/// chunks are left-padded with zero-feature background chunks.
inline std::vector<Window> windows(const Dataset& data, std::size_t T) {
  std::vector<Window> out;
  out.reserve(data.chunk_count());
  const Vec zero(data.feature_dim);
  for (const auto& video : data.videos) {
    for (std::size_t j = 0; j < video.chunks.size(); ++j) {
      Window w;
      w.video_id = video.id;
      w.position = j;
      w.features.reserve(T + 1);
      w.labels.reserve(T + 1);
      for (std::size_t s = 0; s <= T; ++s) {
        // s-th entry holds chunk j - T + s
        if (j + s < T) {
          w.features.push_back(zero);
          w.labels.push_back(0);
          ++w.padded;
        } else {
          const auto& c = video.chunks[j + s - T];
          w.features.push_back(c.features);
          w.labels.push_back(c.label);
        }
      }
      w.relevance = relevance_flags(w.labels);
      out.push_back(std::move(w));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

/// Videos are runs of constant-label chunks. Consecutive runs never share a
/// label, so the trailing run of any window is exactly its relevant chunks
/// and everything before it is background or another action.
///
/// The number L of relevant trailing chunks of a window at offset i of a run
/// is min(i + 1, T + 1), so the run-length range sets the distribution of L.
/// The defaults (runs of exactly 16 = T + 1 chunks) make L uniform on 1..16;
/// shorter ranges such as [1, 5] concentrate windows on few relevant chunks.
struct SyntheticSpec {
  std::size_t num_classes = 5;  // K
  std::size_t feature_dim = 32;
  double prototype_scale = 1.0;
  double noise_sigma = 4.0;
  std::size_t sequence_length = 250;  // chunks per video
  std::size_t total_chunks = 5000;
  std::size_t min_run = 16;  // run lengths are uniform on [min_run, max_run]
  std::size_t max_run = 16;
  double background_rate = 0.5;  // probability a run is background
  double eval_fraction = 0.2;    // share of videos tagged "eval"
  std::uint64_t seed = 1;

  void validate() const {
    if (num_classes == 0) throw ConfigError("num_classes must be > 0");
    if (feature_dim == 0) throw ConfigError("feature_dim must be > 0");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
    if (!(prototype_scale >= 0.0)) throw ConfigError("prototype_scale must be >= 0");
    if (sequence_length == 0) throw ConfigError("sequence_length must be > 0");
    if (total_chunks == 0) throw ConfigError("total_chunks must be > 0");
    if (min_run == 0 || max_run < min_run) throw ConfigError("need 1 <= min_run <= max_run");
    if (!(background_rate >= 0.0 && background_rate <= 1.0)) {
      throw ConfigError("background_rate must be in [0, 1]");
    }
    if (!(eval_fraction >= 0.0 && eval_fraction < 1.0)) {
      throw ConfigError("eval_fraction must be in [0, 1)");
    }
  }
};

struct SyntheticData {
  Dataset dataset;
  std::vector<Vec> prototypes;  // indexed by label 0..K
};

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng proto_rng = Rng(spec.seed).fork(0);
  Rng run_rng = Rng(spec.seed).fork(1);
  Rng noise_rng = Rng(spec.seed).fork(2);

  SyntheticData out;
  out.dataset.feature_dim = spec.feature_dim;
  out.dataset.num_classes = spec.num_classes;
  out.prototypes.assign(spec.num_classes + 1, Vec(spec.feature_dim));
  for (auto& p : out.prototypes) {
    for (double& v : p) v = spec.prototype_scale * proto_rng.normal();
  }

  const std::size_t n_videos =
      (spec.total_chunks + spec.sequence_length - 1) / spec.sequence_length;
  const auto n_eval = static_cast<std::size_t>(
      std::llround(spec.eval_fraction * static_cast<double>(n_videos)));
  const std::size_t n_train = n_videos - std::min(n_eval, n_videos - 1);

  std::size_t remaining = spec.total_chunks;
  for (std::size_t v = 0; v < n_videos; ++v) {
    Video video;
    video.id = "syn" + std::to_string(v);
    video.split = v < n_train ? "train" : "eval";
    const std::size_t len = std::min(spec.sequence_length, remaining);
    remaining -= len;
    std::optional<std::size_t> prev;
    while (video.chunks.size() < len) {
      std::size_t label = 0;
      do {
        label = run_rng.uniform() < spec.background_rate
                    ? 0
                    : 1 + static_cast<std::size_t>(run_rng.below(spec.num_classes));
      } while (prev && label == *prev);
      prev = label;
      const std::size_t run =
          spec.min_run + static_cast<std::size_t>(run_rng.below(spec.max_run - spec.min_run + 1));
      for (std::size_t i = 0; i < run && video.chunks.size() < len; ++i) {
        FeatureChunk c;
        c.video_id = video.id;
        c.index = video.chunks.size();
        c.label = label;
        c.features = out.prototypes[label];
        for (double& f : c.features) f += spec.noise_sigma * noise_rng.normal();
        video.chunks.push_back(std::move(c));
      }
    }
    out.dataset.videos.push_back(std::move(video));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Record files

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string_view::npos ? tab : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline std::string where(const std::filesystem::path& file, std::size_t line) {
  return file.string() + ":" + std::to_string(line);
}

inline void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace detail

inline void write_feature_records(std::ostream& os, const std::vector<Video>& videos) {
  for (const auto& v : videos) {
    for (const auto& c : v.chunks) {
      os << c.video_id << '\t' << c.index << '\t' << c.label;
      for (double f : c.features) os << '\t' << detail::format_double(f);
      os << '\n';
    }
  }
}

/// Parses a record file into videos (grouped in order of first appearance,
/// chunks sorted by index).
inline std::vector<Video> read_feature_records(const std::filesystem::path& file,
                                               std::size_t feature_dim, std::size_t num_classes,
                                               const std::string& split) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open feature file " + file.string());
  std::vector<Video> videos;
  std::map<std::string, std::size_t, std::less<>> by_id;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    detail::strip_cr(line);
    if (line.empty()) continue;
    const auto fields = detail::split_tabs(line);
    if (fields.size() < 3) {
      throw DataError(detail::where(file, line_no) + ": expected video_id, chunk_index, label");
    }
    if (fields.size() - 3 != feature_dim) {
      throw DataError(detail::where(file, line_no) + ": expected " + std::to_string(feature_dim) +
                      " features, got " + std::to_string(fields.size() - 3));
    }
    FeatureChunk c;
    c.video_id = std::string(fields[0]);
    if (c.video_id.empty()) throw DataError(detail::where(file, line_no) + ": empty video_id");
    if (!detail::parse_number(fields[1], c.index)) {
      throw DataError(detail::where(file, line_no) + ": bad chunk_index '" +
                      std::string(fields[1]) + "'");
    }
    long long label = -1;
    if (!detail::parse_number(fields[2], label) || label < 0 ||
        static_cast<unsigned long long>(label) > num_classes) {
      throw DataError(detail::where(file, line_no) + ": unknown label id '" +
                      std::string(fields[2]) + "' (valid 0.." + std::to_string(num_classes) + ")");
    }
    c.label = static_cast<std::size_t>(label);
    c.features = Vec(feature_dim);
    for (std::size_t j = 0; j < feature_dim; ++j) {
      if (!detail::parse_number(fields[3 + j], c.features[j]) || !std::isfinite(c.features[j])) {
        throw DataError(detail::where(file, line_no) + ": bad feature value '" +
                        std::string(fields[3 + j]) + "'");
      }
    }
    auto it = by_id.find(c.video_id);
    if (it == by_id.end()) {
      it = by_id.emplace(c.video_id, videos.size()).first;
      videos.push_back(Video{c.video_id, split, {}});
    }
    videos[it->second].chunks.push_back(std::move(c));
  }
  for (auto& v : videos) {
    std::stable_sort(v.chunks.begin(), v.chunks.end(),
                     [](const auto& a, const auto& b) { return a.index < b.index; });
    for (std::size_t i = 1; i < v.chunks.size(); ++i) {
      if (v.chunks[i].index == v.chunks[i - 1].index) {
        throw DataError(file.string() + ": video " + v.id + " repeats chunk_index " +
                        std::to_string(v.chunks[i].index));
      }
    }
  }
  return videos;
}

struct ManifestEntry {
  std::string split;
  std::filesystem::path path;  // relative to the manifest directory
  std::size_t chunks = 0;
};

struct DatasetManifest {
  std::size_t feature_dim = 0;
  std::size_t num_classes = 0;
  std::size_t chunks = 0;
  std::vector<ManifestEntry> files;
};

inline constexpr std::string_view kManifestMagic = "idn-manifest 1";

inline void write_manifest(std::ostream& os, const DatasetManifest& m) {
  os << kManifestMagic << '\n'
     << "d_x=" << m.feature_dim << '\n'
     << "num_classes=" << m.num_classes << '\n'
     << "chunks=" << m.chunks << '\n'
     << "files:\n";
  for (const auto& f : m.files) {
    os << f.split << '\t' << f.path.generic_string() << '\t' << f.chunks << '\n';
  }
}

inline DatasetManifest read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open manifest " + file.string());
  DatasetManifest m;
  std::string line;
  std::size_t line_no = 0;
  bool magic = false, in_files = false;
  std::map<std::string, bool> seen;
  while (std::getline(in, line)) {
    ++line_no;
    detail::strip_cr(line);
    if (line.empty() || line.front() == '#') continue;
    if (!magic) {
      if (line != kManifestMagic) {
        throw DataError(detail::where(file, line_no) + ": not an idn manifest (expected '" +
                        std::string(kManifestMagic) + "')");
      }
      magic = true;
      continue;
    }
    if (in_files) {
      const auto f = detail::split_tabs(line);
      ManifestEntry e;
      if (f.size() != 3 || f[0].empty() || f[1].empty() || !detail::parse_number(f[2], e.chunks)) {
        throw DataError(detail::where(file, line_no) + ": expected split<TAB>path<TAB>count");
      }
      e.split = std::string(f[0]);
      e.path = std::string(f[1]);
      m.files.push_back(std::move(e));
      continue;
    }
    if (line == "files:") {
      in_files = true;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(detail::where(file, line_no) + ": expected key=value");
    const std::string key = line.substr(0, eq);
    const std::string_view value = std::string_view(line).substr(eq + 1);
    std::size_t* slot = key == "d_x" ? &m.feature_dim
                        : key == "num_classes" ? &m.num_classes
                        : key == "chunks" ? &m.chunks
                                          : nullptr;
    if (slot == nullptr) throw DataError(detail::where(file, line_no) + ": unknown key '" + key + "'");
    if (!detail::parse_number(value, *slot)) {
      throw DataError(detail::where(file, line_no) + ": bad value for " + key);
    }
    seen[key] = true;
  }
  if (!magic) throw DataError(file.string() + ": empty manifest");
  for (const char* key : {"d_x", "num_classes", "chunks"}) {
    if (!seen[key]) throw DataError(file.string() + ": missing key " + key);
  }
  return m;
}

/// Loads every file listed in a manifest, checking declared dims and counts.
inline Dataset load_features(const std::filesystem::path& manifest_path) {
  const DatasetManifest m = read_manifest(manifest_path);
  if (m.feature_dim == 0) throw DataError(manifest_path.string() + ": d_x must be > 0");
  Dataset d{m.feature_dim, m.num_classes, {}};
  std::size_t total = 0;
  for (const auto& entry : m.files) {
    const auto path = manifest_path.parent_path() / entry.path;
    auto videos = read_feature_records(path, m.feature_dim, m.num_classes, entry.split);
    std::size_t n = 0;
    for (const auto& v : videos) n += v.chunks.size();
    if (n != entry.chunks) {
      throw DataError(path.string() + ": manifest declares " + std::to_string(entry.chunks) +
                      " chunks, file has " + std::to_string(n));
    }
    total += n;
    for (auto& v : videos) d.videos.push_back(std::move(v));
  }
  if (total != m.chunks) {
    throw DataError(manifest_path.string() + ": manifest declares " + std::to_string(m.chunks) +
                    " chunks, files hold " + std::to_string(total));
  }
  return d;
}

/// Writes one record file per split plus `manifest.txt` into `dir`.
inline std::filesystem::path save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  DatasetManifest m{data.feature_dim, data.num_classes, data.chunk_count(), {}};
  std::vector<std::string> splits;
  for (const auto& v : data.videos) {
    if (std::find(splits.begin(), splits.end(), v.split) == splits.end()) splits.push_back(v.split);
  }
  for (const auto& split : splits) {
    if (split.empty()) throw DataError("save_dataset: video without split tag");
    const Dataset part = data.subset(split);
    const std::filesystem::path rel = split + ".tsv";
    std::ofstream out(dir / rel, std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / rel).string());
    write_feature_records(out, part.videos);
    if (!out) throw DataError("write failed: " + (dir / rel).string());
    m.files.push_back({split, rel, part.chunk_count()});
  }
  const auto manifest_path = dir / "manifest.txt";
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) throw DataError("cannot write " + manifest_path.string());
  write_manifest(out, m);
  if (!out) throw DataError("write failed: " + manifest_path.string());
  return manifest_path;
}

}  // namespace idn
