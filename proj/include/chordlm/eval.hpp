#pragma once

// Average log-probability reports (overall, at chord changes, at chord stays)
// and Weighted Chord Symbol Recall on continuous time intervals.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "chordlm/chord.hpp"
#include "chordlm/dataset.hpp"
#include "chordlm/errors.hpp"
#include "chordlm/scorer.hpp"

namespace chordlm {

// Natural-log averages. The first symbol of every sequence is neither a change
// nor a stay; it only enters `overall`.
struct LogProbReport {
  double overall = 0.0;  // L
  double change = 0.0;   // L_c
  double stay = 0.0;     // L_s
  double first = 0.0;
  std::size_t n_total = 0;
  std::size_t n_change = 0;
  std::size_t n_stay = 0;
  std::size_t n_first = 0;
};

template <SequenceScorer M, class Sequences>
LogProbReport logprob_report(const M& model, const Sequences& sequences) {
  double sum_change = 0.0, sum_stay = 0.0, sum_first = 0.0;
  LogProbReport r;
  for (const auto& seq : sequences) {
    if (std::empty(seq)) continue;
    std::span<const ClassId> s(std::data(seq), std::size(seq));
    const auto lp = per_symbol_logprobs(model, s);
    sum_first += lp[0];
    ++r.n_first;
    for (std::size_t k = 1; k < s.size(); ++k) {
      if (s[k] == s[k - 1]) {
        sum_stay += lp[k];
        ++r.n_stay;
      } else {
        sum_change += lp[k];
        ++r.n_change;
      }
    }
  }
  if (r.n_first == 0) throw ContractError("logprob_report: empty dataset");
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  r.n_total = r.n_first + r.n_stay + r.n_change;
  r.overall = (sum_first + sum_stay + sum_change) / static_cast<double>(r.n_total);
  r.first = sum_first / static_cast<double>(r.n_first);
  r.stay = r.n_stay ? sum_stay / static_cast<double>(r.n_stay) : nan;
  r.change = r.n_change ? sum_change / static_cast<double>(r.n_change) : nan;
  return r;
}

inline void write_report(std::ostream& out, const LogProbReport& r, const std::string& prefix = "") {
  out.precision(17);
  out << prefix << "L=" << r.overall << '\n'
      << prefix << "L_c=" << r.change << '\n'
      << prefix << "L_s=" << r.stay << '\n'
      << prefix << "L_first=" << r.first << '\n'
      << prefix << "n_total=" << r.n_total << '\n'
      << prefix << "n_change=" << r.n_change << '\n'
      << prefix << "n_stay=" << r.n_stay << '\n'
      << prefix << "n_first=" << r.n_first << '\n';
}

// ---------------------------------------------------------------------------
// WCSR

struct LabeledInterval {
  double start = 0.0;
  double end = 0.0;
  ClassId cls = kNoChordClass;
};

struct SongIntervals {
  int song_id = 0;
  std::vector<LabeledInterval> segments;  // sorted, non-overlapping
};

inline SongIntervals intervals_from_track(const AnnotationTrack& track) {
  SongIntervals out{track.song_id, {}};
  for (const auto& s : track.segments) out.segments.push_back({s.start, s.end, label_to_class(s.label)});
  return out;
}

inline SongIntervals intervals_from_frames(int song_id, std::span<const ClassId> frames) {
  SongIntervals out{song_id, {}};
  for (const auto& s : frames_to_segments(frames)) out.segments.push_back({s.start, s.end, label_to_class(s.label)});
  return out;
}

struct SongWcsr {
  int song_id = 0;
  double t_c = 0.0;
  double t_a = 0.0;
};

struct WcsrReport {
  double t_c = 0.0;
  double t_a = 0.0;
  double recall = 0.0;  // R = t_c / t_a
  std::vector<SongWcsr> per_song;
};

// Time inside a reference segment counts as correct where a predicted segment
// with the same class overlaps it. Prediction time outside the reference is
// ignored; reference time not covered by any prediction reads as no-chord.
inline SongWcsr song_wcsr(const SongIntervals& ref, const SongIntervals& pred) {
  SongWcsr r{ref.song_id, 0.0, 0.0};
  std::size_t first = 0;
  for (const auto& seg : ref.segments) {
    r.t_a += seg.end - seg.start;
    while (first < pred.segments.size() && pred.segments[first].end <= seg.start) ++first;
    double covered = 0.0;
    for (std::size_t j = first; j < pred.segments.size() && pred.segments[j].start < seg.end; ++j) {
      const double overlap = std::min(seg.end, pred.segments[j].end) - std::max(seg.start, pred.segments[j].start);
      if (overlap <= 0.0) continue;
      covered += overlap;
      if (pred.segments[j].cls == seg.cls) r.t_c += overlap;
    }
    if (seg.cls == kNoChordClass) r.t_c += std::max(0.0, (seg.end - seg.start) - covered);
  }
  return r;
}

inline WcsrReport wcsr(std::span<const SongIntervals> reference, std::span<const SongIntervals> predicted) {
  std::map<int, const SongIntervals*> pred_by_id;
  for (const auto& p : predicted) {
    if (!pred_by_id.emplace(p.song_id, &p).second) {
      throw DataError("wcsr: duplicate predicted song " + std::to_string(p.song_id));
    }
  }
  if (pred_by_id.size() != reference.size()) throw DataError("wcsr: reference and prediction cover different songs");
  WcsrReport report;
  for (const auto& ref : reference) {
    auto it = pred_by_id.find(ref.song_id);
    if (it == pred_by_id.end()) throw DataError("wcsr: no prediction for song " + std::to_string(ref.song_id));
    auto song = song_wcsr(ref, *it->second);
    report.t_c += song.t_c;
    report.t_a += song.t_a;
    report.per_song.push_back(song);
  }
  report.recall = report.t_a > 0.0 ? report.t_c / report.t_a : 0.0;
  return report;
}

inline void write_report(std::ostream& out, const WcsrReport& r, const std::string& prefix = "") {
  out.precision(17);
  out << prefix << "t_c=" << r.t_c << '\n' << prefix << "t_a=" << r.t_a << '\n' << prefix << "R=" << r.recall << '\n';
}

}  // namespace chordlm
