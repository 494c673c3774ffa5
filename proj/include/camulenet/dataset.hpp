#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "camulenet/dsp/audio.hpp"
#include "camulenet/errors.hpp"

namespace camulenet {

struct ManifestRow {
  std::string clip_path;  // resolved against the manifest's directory
  std::string clip_id;
  std::string speaker_id;
  dsp::Gender gender = dsp::Gender::male;
  std::string emotion;
  int emotion_index = 0;
  std::string language;
  double duration_s = 0.0;
};

struct Manifest {
  std::vector<ManifestRow> rows;
  std::vector<std::string> vocabulary;
};

struct ManifestOptions {
  std::vector<std::string> vocabulary;  // empty: sorted set of labels found
  bool check_files = false;
};

inline const std::vector<std::string>& manifest_columns() {
  static const std::vector<std::string> cols{"clip_path", "clip_id", "speaker_id", "gender", "emotion", "language", "duration_s"};
  return cols;
}

// RFC 4180-style field split (quoted fields, doubled quotes).
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace detail

inline Manifest parse_manifest(std::istream& in, bool jsonl, const std::filesystem::path& base, const ManifestOptions& opt = {}) {
  Manifest m;
  std::vector<std::string> errors;
  std::vector<std::map<std::string, std::string>> raw;
  std::vector<std::size_t> line_no;
  std::string line;
  std::size_t n = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++n;
    if (detail::trim(line).empty()) continue;
    std::map<std::string, std::string> rec;
    if (jsonl) {
      try {
        const auto j = nlohmann::json::parse(line);
        for (const auto& c : manifest_columns()) {
          if (!j.contains(c)) continue;
          rec[c] = j[c].is_string() ? j[c].get<std::string>() : j[c].dump();
        }
      } catch (const nlohmann::json::exception& e) {
        errors.push_back("line " + std::to_string(n) + ": invalid JSON (" + e.what() + ")");
        continue;
      }
    } else if (header.empty()) {
      header = split_csv_line(line);
      for (auto& h : header) h = detail::trim(h);
      for (const auto& c : manifest_columns()) {
        if (std::find(header.begin(), header.end(), c) == header.end()) throw ManifestError("manifest header lacks column '" + c + "'");
      }
      continue;
    } else {
      const auto fields = split_csv_line(line);
      if (fields.size() != header.size()) {
        errors.push_back("line " + std::to_string(n) + ": expected " + std::to_string(header.size()) + " fields, got " +
                         std::to_string(fields.size()));
        continue;
      }
      for (std::size_t i = 0; i < header.size(); ++i) rec[header[i]] = detail::trim(fields[i]);
    }
    raw.push_back(std::move(rec));
    line_no.push_back(n);
  }

  std::set<std::string> seen_labels;
  for (const auto& r : raw)
    if (r.count("emotion")) seen_labels.insert(r.at("emotion"));
  m.vocabulary = opt.vocabulary.empty() ? std::vector<std::string>(seen_labels.begin(), seen_labels.end()) : opt.vocabulary;

  std::set<std::string> ids;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& r = raw[i];
    const std::string where = "line " + std::to_string(line_no[i]);
    bool ok = true;
    for (const auto& c : manifest_columns()) {
      if (!r.count(c) || (r.at(c).empty() && c != "language")) {
        errors.push_back(where + ": missing " + c);
        ok = false;
      }
    }
    if (!ok) continue;
    ManifestRow row;
    row.clip_id = r.at("clip_id");
    row.speaker_id = r.at("speaker_id");
    row.emotion = r.at("emotion");
    row.language = r.at("language");
    const std::filesystem::path p(r.at("clip_path"));
    row.clip_path = (p.is_absolute() ? p : base / p).lexically_normal().string();
    if (!ids.insert(row.clip_id).second) errors.push_back(where + ": duplicate clip_id '" + row.clip_id + "'");
    try {
      row.gender = dsp::parse_gender(r.at("gender"));
    } catch (const Error&) {
      errors.push_back(where + ": unknown gender '" + r.at("gender") + "'");
    }
    const auto it = std::find(m.vocabulary.begin(), m.vocabulary.end(), row.emotion);
    if (it == m.vocabulary.end()) {
      errors.push_back(where + ": emotion '" + row.emotion + "' is not in the vocabulary");
    } else {
      row.emotion_index = static_cast<int>(it - m.vocabulary.begin());
    }
    try {
      std::size_t used = 0;
      row.duration_s = std::stod(r.at("duration_s"), &used);
      if (used != r.at("duration_s").size() || !(row.duration_s >= 0.0)) throw std::invalid_argument("bad");
    } catch (const std::exception&) {
      errors.push_back(where + ": bad duration_s '" + r.at("duration_s") + "'");
    }
    if (opt.check_files && !std::filesystem::exists(row.clip_path)) {
      errors.push_back(where + ": missing file " + row.clip_path + " for clip '" + row.clip_id + "'");
    }
    m.rows.push_back(std::move(row));
  }
  if (!errors.empty()) {
    std::string msg = "manifest has " + std::to_string(errors.size()) + " invalid row(s):";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ManifestError(msg);
  }
  return m;
}

// CSV with the documented header, or JSON lines when the extension is .jsonl.
inline Manifest load_manifest(const std::string& path, const ManifestOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  const std::filesystem::path p(path);
  return parse_manifest(in, p.extension() == ".jsonl", p.parent_path(), opt);
}

inline std::string manifest_to_csv(const Manifest& m) {
  std::ostringstream os;
  os << "clip_path,clip_id,speaker_id,gender,emotion,language,duration_s\n";
  for (const auto& r : m.rows) {
    os << r.clip_path << ',' << r.clip_id << ',' << r.speaker_id << ',' << dsp::to_string(r.gender) << ',' << r.emotion << ','
       << r.language << ',' << r.duration_s << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------- annotation agreement

// n_items × k_categories rating counts.
struct AnnotationMatrix {
  std::size_t n_items = 0;
  std::size_t n_categories = 0;
  std::vector<std::size_t> counts;
  std::vector<std::string> categories;

  AnnotationMatrix() = default;
  AnnotationMatrix(std::size_t items, std::size_t cats) : n_items(items), n_categories(cats), counts(items * cats, 0) {}
  AnnotationMatrix(const std::vector<std::vector<std::size_t>>& rows) {
    n_items = rows.size();
    n_categories = rows.empty() ? 0 : rows[0].size();
    for (const auto& r : rows) {
      if (r.size() != n_categories) throw ShapeError("annotation rows must all have the same number of categories");
      counts.insert(counts.end(), r.begin(), r.end());
    }
  }

  std::size_t& operator()(std::size_t i, std::size_t j) { return counts[i * n_categories + j]; }
  std::size_t operator()(std::size_t i, std::size_t j) const { return counts[i * n_categories + j]; }
};

inline double fleiss_kappa(const AnnotationMatrix& m) {
  if (m.n_items < 2) throw ShapeError("Fleiss kappa needs at least two items");
  if (m.n_categories < 1) throw ShapeError("Fleiss kappa needs at least one category");
  std::size_t n = 0;
  for (std::size_t j = 0; j < m.n_categories; ++j) n += m(0, j);
  if (n < 2) throw ShapeError("each item needs at least two ratings");
  std::vector<double> p(m.n_categories, 0.0);
  double p_bar = 0.0;
  for (std::size_t i = 0; i < m.n_items; ++i) {
    std::size_t row = 0, sq = 0;
    for (std::size_t j = 0; j < m.n_categories; ++j) {
      row += m(i, j);
      sq += m(i, j) * m(i, j);
      p[j] += static_cast<double>(m(i, j));
    }
    if (row != n) {
      throw ShapeError("item " + std::to_string(i) + " has " + std::to_string(row) + " ratings, expected " + std::to_string(n));
    }
    p_bar += static_cast<double>(sq - n) / static_cast<double>(n * (n - 1));
  }
  p_bar /= static_cast<double>(m.n_items);
  double pe = 0.0;
  for (auto& pj : p) {
    pj /= static_cast<double>(m.n_items * n);
    pe += pj * pj;
  }
  if (pe >= 1.0) throw UndefinedKappa("all ratings fall in one category; kappa is undefined");
  return (p_bar - pe) / (1.0 - pe);
}

// Long-format annotations: header item_id,annotator,label.
inline AnnotationMatrix annotations_from_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ManifestError("annotation file is empty");
  auto header = split_csv_line(line);
  for (auto& h : header) h = detail::trim(h);
  const auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ManifestError("annotation header lacks column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t ci = col("item_id"), cl = col("label");
  col("annotator");
  std::map<std::string, std::map<std::string, std::size_t>> tally;
  std::set<std::string> labels;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (detail::trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw ManifestError("annotation line " + std::to_string(n) + " has the wrong field count");
    const auto item = detail::trim(f[ci]), label = detail::trim(f[cl]);
    ++tally[item][label];
    labels.insert(label);
  }
  AnnotationMatrix m(tally.size(), labels.size());
  m.categories.assign(labels.begin(), labels.end());
  std::size_t i = 0;
  for (const auto& [item, row] : tally) {
    for (const auto& [label, count] : row) {
      m(i, static_cast<std::size_t>(std::find(m.categories.begin(), m.categories.end(), label) - m.categories.begin())) = count;
    }
    ++i;
  }
  return m;
}

// ---------------------------------------------------------------- corpus statistics

struct StatsReport {
  std::size_t n_clips = 0;
  std::vector<std::pair<std::string, std::size_t>> emotion_histogram;  // vocabulary order
  std::size_t male = 0;
  std::size_t female = 0;
  std::map<std::string, std::size_t> speaker_counts;
  std::map<std::string, std::size_t> grouped_speakers;  // small speakers folded into "Others"
  std::size_t others_threshold = 41;
  double total_duration_s = 0.0;
  double mean_duration_s = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json hist = nlohmann::json::object();
    for (const auto& [k, v] : emotion_histogram) hist[k] = v;
    return {{"n_clips", n_clips},
            {"emotions", hist},
            {"gender", {{"male", male}, {"female", female}}},
            {"speakers", speaker_counts},
            {"speakers_grouped", grouped_speakers},
            {"others_threshold", others_threshold},
            {"total_duration_s", total_duration_s},
            {"total_duration_h", total_duration_s / 3600.0},
            {"mean_duration_s", mean_duration_s}};
  }

  std::string emotion_csv() const {
    std::string s = "emotion,count\n";
    for (const auto& [k, v] : emotion_histogram) s += k + "," + std::to_string(v) + "\n";
    return s;
  }

  std::string speaker_csv() const {
    std::string s = "speaker,count\n";
    for (const auto& [k, v] : grouped_speakers) s += k + "," + std::to_string(v) + "\n";
    return s;
  }
};

// Speakers with at most `others_threshold` clips are grouped as "Others".
inline StatsReport corpus_stats(const Manifest& m, std::size_t others_threshold = 41) {
  if (m.rows.empty()) throw EmptyInput("manifest has no rows");
  StatsReport r;
  r.others_threshold = others_threshold;
  r.n_clips = m.rows.size();
  std::vector<std::size_t> hist(m.vocabulary.size(), 0);
  std::vector<double> durations;
  for (const auto& row : m.rows) {
    ++hist.at(static_cast<std::size_t>(row.emotion_index));
    (row.gender == dsp::Gender::male ? r.male : r.female) += 1;
    ++r.speaker_counts[row.speaker_id];
    durations.push_back(row.duration_s);
  }
  // Summed in sorted order.
  std::sort(durations.begin(), durations.end());
  for (const double d : durations) r.total_duration_s += d;
  for (std::size_t i = 0; i < hist.size(); ++i) r.emotion_histogram.emplace_back(m.vocabulary[i], hist[i]);
  for (const auto& [spk, c] : r.speaker_counts) r.grouped_speakers[c > others_threshold ? spk : "Others"] += c;
  r.mean_duration_s = r.total_duration_s / static_cast<double>(r.n_clips);
  return r;
}

}  // namespace camulenet
