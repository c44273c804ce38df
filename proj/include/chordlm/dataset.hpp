#pragma once

// Annotation corpora: loading .lab files, 10 fps frame sampling, chord-level
// collapsing, the id-based train/test split and key-shift augmentation.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "chordlm/chord.hpp"
#include "chordlm/errors.hpp"

namespace chordlm {

inline constexpr double kFrameRateHz = 10.0;
inline constexpr int kTestIdThreshold = 1000;

struct Segment {
  double start = 0.0;
  double end = 0.0;
  std::string label;
};

struct AnnotationTrack {
  int song_id = 0;
  std::string title;
  std::string artist;
  std::vector<Segment> segments;
};

struct FrameSequence {
  std::vector<ClassId> classes;
};

struct ChordSequence {
  std::vector<ClassId> classes;
};

struct CorpusSplit {
  std::vector<AnnotationTrack> train;
  std::vector<AnnotationTrack> test;
};

namespace detail {

inline double parse_double(std::string_view token, const std::string& where) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size() || !std::isfinite(value)) {
    throw DataError(where + ": bad number '" + std::string(token) + "'");
  }
  return value;
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

inline std::string normalize_meta(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

inline void validate_segments(const std::vector<Segment>& segments, const std::string& where) {
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (!(segments[i].start < segments[i].end)) {
      throw DataError(where + ": segment " + std::to_string(i) + " has start >= end");
    }
    if (i > 0 && segments[i].start < segments[i - 1].end) {
      throw DataError(where + ": segment " + std::to_string(i) + " overlaps its predecessor");
    }
  }
}

// Reads one .lab file: "<start> <end> <label>" per line, blank lines ignored.
inline std::vector<Segment> read_lab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<Segment> segments;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    const std::string where = path.string() + ":" + std::to_string(lineno);
    auto tokens = detail::split_ws(line);
    if (tokens.empty()) continue;
    if (tokens.size() != 3) throw DataError(where + ": expected '<start> <end> <label>'");
    Segment seg{detail::parse_double(tokens[0], where), detail::parse_double(tokens[1], where),
                tokens[2]};
    if (!(seg.start < seg.end)) throw DataError(where + ": interval order violated (start >= end)");
    if (!segments.empty() && seg.start < segments.back().end) {
      throw DataError(where + ": segment overlaps or precedes the previous one");
    }
    try {
      (void)parse_label(seg.label);
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what(), e.token());
    }
    segments.push_back(std::move(seg));
  }
  return segments;
}

inline void write_lab(const std::filesystem::path& path, std::span<const Segment> segments) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  for (const auto& s : segments) out << s.start << ' ' << s.end << ' ' << s.label << '\n';
}

// Loads every "<song_id>.lab" in a directory. An optional "metadata.tsv"
// (song_id<TAB>title<TAB>artist) supplies titles and artists.
inline std::vector<AnnotationTrack> load_corpus(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());

  std::map<int, std::pair<std::string, std::string>> meta;
  if (auto meta_path = dir / "metadata.tsv"; fs::exists(meta_path)) {
    std::ifstream in(meta_path);
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
      if (line.empty()) continue;
      const std::string where = meta_path.string() + ":" + std::to_string(lineno);
      std::vector<std::string> fields;
      std::stringstream ss(line);
      for (std::string f; std::getline(ss, f, '\t');) fields.push_back(f);
      if (fields.size() != 3) throw DataError(where + ": expected song_id<TAB>title<TAB>artist");
      int id = 0;
      auto [ptr, ec] = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), id);
      if (ec != std::errc() || ptr != fields[0].data() + fields[0].size()) {
        throw DataError(where + ": bad song id '" + fields[0] + "'");
      }
      meta[id] = {fields[1], fields[2]};
    }
  }

  std::vector<AnnotationTrack> tracks;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".lab") continue;
    const std::string stem = entry.path().stem().string();
    AnnotationTrack track;
    auto [ptr, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), track.song_id);
    if (ec != std::errc() || ptr != stem.data() + stem.size()) {
      throw DataError(entry.path().string() + ": file name is not a song id");
    }
    if (auto it = meta.find(track.song_id); it != meta.end()) {
      track.title = it->second.first;
      track.artist = it->second.second;
    }
    track.segments = read_lab(entry.path());
    tracks.push_back(std::move(track));
  }
  std::sort(tracks.begin(), tracks.end(),
            [](const auto& a, const auto& b) { return a.song_id < b.song_id; });
  return tracks;
}

inline void write_metadata(const std::filesystem::path& dir, std::span<const AnnotationTrack> tracks) {
  std::ofstream out(dir / "metadata.tsv");
  if (!out) throw DataError("cannot write metadata in " + dir.string());
  for (const auto& t : tracks) out << t.song_id << '\t' << t.title << '\t' << t.artist << '\n';
}

// Drops duplicate songs (case- and whitespace-insensitive title+artist),
// keeping the lowest id, then splits by id. Tracks without metadata are never
// treated as duplicates.
inline CorpusSplit split_corpus(std::vector<AnnotationTrack> tracks) {
  std::sort(tracks.begin(), tracks.end(),
            [](const auto& a, const auto& b) { return a.song_id < b.song_id; });
  std::set<std::pair<std::string, std::string>> seen;
  CorpusSplit split;
  for (auto& t : tracks) {
    auto key = std::make_pair(detail::normalize_meta(t.title), detail::normalize_meta(t.artist));
    if (!key.first.empty() || !key.second.empty()) {
      if (!seen.insert(key).second) continue;
    }
    (t.song_id < kTestIdThreshold ? split.train : split.test).push_back(std::move(t));
  }
  return split;
}

// Holds out roughly `fraction` of the tracks for validation, chosen by a hash
// of the song id so the choice is stable across runs and corpus orderings.
inline std::pair<std::vector<AnnotationTrack>, std::vector<AnnotationTrack>> split_validation(
    std::span<const AnnotationTrack> tracks, double fraction = 0.1) {
  std::pair<std::vector<AnnotationTrack>, std::vector<AnnotationTrack>> out;
  const auto cut = static_cast<std::uint64_t>(fraction * 10000.0);
  for (const auto& t : tracks) {
    bool valid = detail::splitmix64(static_cast<std::uint64_t>(t.song_id)) % 10000 < cut;
    (valid ? out.second : out.first).push_back(t);
  }
  return out;
}

// Frame k takes the reduced label of the segment containing its center
// (k + 0.5) / 10 s. Gaps read as no-chord; the sequence ends with the last
// segment.
inline FrameSequence sample_frames(const AnnotationTrack& track) {
  FrameSequence frames;
  if (track.segments.empty()) return frames;
  const double end = track.segments.back().end;
  std::size_t seg = 0;
  for (int k = 0;; ++k) {
    const double center = (k + 0.5) / kFrameRateHz;
    if (!(center < end)) break;
    while (seg < track.segments.size() && !(center < track.segments[seg].end)) ++seg;
    ClassId id = kNoChordClass;
    if (seg < track.segments.size() && track.segments[seg].start <= center) {
      id = label_to_class(track.segments[seg].label);
    }
    frames.classes.push_back(id);
  }
  return frames;
}

inline ChordSequence collapse(const FrameSequence& frames) {
  ChordSequence out;
  for (ClassId c : frames.classes) {
    if (out.classes.empty() || out.classes.back() != c) out.classes.push_back(c);
  }
  return out;
}

inline std::vector<ClassId> shift_sequence(std::span<const ClassId> seq, int shift) {
  std::vector<ClassId> out;
  out.reserve(seq.size());
  for (ClassId c : seq) out.push_back(transpose_class(c, shift));
  return out;
}

// One uniformly drawn key shift in 0..11 applied to the whole sequence.
template <class Rng>
std::vector<ClassId> augment_shift(std::span<const ClassId> seq, Rng& rng) {
  std::uniform_int_distribution<int> dist(0, 11);
  return shift_sequence(seq, dist(rng));
}

// Merges runs of equal frames into segments on the 10 fps grid.
inline std::vector<Segment> frames_to_segments(std::span<const ClassId> frames) {
  std::vector<Segment> out;
  std::size_t k = 0;
  while (k < frames.size()) {
    std::size_t j = k;
    while (j < frames.size() && frames[j] == frames[k]) ++j;
    out.push_back({static_cast<double>(k) / kFrameRateHz, static_cast<double>(j) / kFrameRateHz,
                   class_name(frames[k])});
    k = j;
  }
  return out;
}

}  // namespace chordlm
