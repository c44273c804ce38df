#pragma once

// Synthetic annotated corpora with per-frame features, standing in for audio.
// Chord durations are min_chord_frames plus a geometric number of extra
// frames (per-frame self-transition probability), so every boundary sits on
// the 10 fps grid. Features are the
// chord's one-hot template plus isotropic Gaussian noise.

#include <algorithm>
#include <array>
#include <random>
#include <string>
#include <vector>

#include "chordlm/acoustic.hpp"
#include "chordlm/chord.hpp"
#include "chordlm/dataset.hpp"
#include "chordlm/errors.hpp"

namespace chordlm {

enum class Progression {
  FirstOrder,   // transposition-invariant first-order chord transitions
  SecondOrder,  // next root motion determined by the previous motion
  Repeat,       // each song loops one random 4-chord progression
};

inline std::string to_string(Progression p) {
  switch (p) {
    case Progression::FirstOrder: return "first-order";
    case Progression::SecondOrder: return "second-order";
    case Progression::Repeat: return "repeat";
  }
  return "first-order";
}

inline Progression parse_progression(std::string_view s) {
  if (s == "first-order") return Progression::FirstOrder;
  if (s == "second-order") return Progression::SecondOrder;
  if (s == "repeat") return Progression::Repeat;
  throw DataError("unknown progression '" + std::string(s) + "'");
}

struct SynthSpec {
  int num_train = 40;
  int num_test = 10;
  int min_frames = 400;   // song length when chords_per_song is 0
  int max_frames = 800;
  int min_chords = 0;     // if > 0, songs have this many chords (up to max_chords)
  int max_chords = 0;
  double self_transition = 0.97;
  int min_chord_frames = 1;  // also the shortest no-chord intro and outro
  double noise_sigma = 0.5;
  Progression progression = Progression::FirstOrder;
  double grammar_noise = 0.1;  // second-order: probability of a random motion
  bool no_chord_edges = true;  // no-chord intro and outro

  void validate() const {
    if (num_train < 0 || num_test < 0 || num_train + num_test == 0) throw DataError("synth: need at least one song");
    if (num_train >= kTestIdThreshold) throw DataError("synth: at most 999 training songs");
    if (!(self_transition >= 0.0 && self_transition < 1.0)) throw DataError("synth: self_transition must be in [0, 1)");
    if (min_chord_frames < 1) throw DataError("synth: min_chord_frames must be >= 1");
    if (!(noise_sigma >= 0.0)) throw DataError("synth: noise_sigma must be >= 0");
    if (!(grammar_noise >= 0.0 && grammar_noise <= 1.0)) throw DataError("synth: grammar_noise must be in [0, 1]");
    if (min_chords > 0) {
      if (max_chords < min_chords) throw DataError("synth: max_chords < min_chords");
    } else if (min_frames <= 0 || max_frames < min_frames) {
      throw DataError("synth: invalid frame range");
    }
  }
};

struct SynthCorpus {
  std::vector<AnnotationTrack> tracks;
  std::vector<FeatureMatrix> features;  // aligned with tracks, one row per frame; empty if not requested
};

namespace detail {

// (root motion in semitones, target quality) used by the second-order grammar.
struct Motion {
  int interval;
  Quality quality;
};

inline constexpr std::array<Motion, 6> kGrammarMotions = {{
    {5, Quality::Major},
    {7, Quality::Major},
    {2, Quality::Minor},
    {9, Quality::Minor},
    {3, Quality::Major},
    {10, Quality::Major},
}};
// Deterministic successor of each motion (a single 6-cycle).
inline constexpr std::array<int, 6> kGrammarNext = {2, 3, 4, 5, 0, 1};

class ChordGenerator {
 public:
  template <class Rng>
  ChordGenerator(const SynthSpec& spec, Rng& rng) : spec_(spec) {
    if (spec.progression == Progression::FirstOrder) {
      // Per source quality: weights over (interval, target quality), staying excluded.
      std::gamma_distribution<double> gamma(0.5, 1.0);
      for (int q = 0; q < 2; ++q) {
        for (int m = 0; m < 24; ++m) {
          const bool stay = (m % 12 == 0) && (m / 12 == q);
          table_[static_cast<std::size_t>(q)][static_cast<std::size_t>(m)] = stay ? 0.0 : gamma(rng) + 1e-3;
        }
      }
    }
  }

  template <class Rng>
  std::vector<ClassId> song(int num_chords, Rng& rng) const {
    std::vector<ClassId> chords;
    std::uniform_int_distribution<int> any_chord(0, 23);
    if (spec_.progression == Progression::Repeat) {
      std::array<ClassId, 4> loop{};
      do {
        for (auto& c : loop) c = any_chord(rng);
      } while (loop[0] == loop[1] || loop[1] == loop[2] || loop[2] == loop[3] || loop[3] == loop[0]);
      for (int k = 0; k < num_chords; ++k) chords.push_back(loop[static_cast<std::size_t>(k % 4)]);
      return chords;
    }
    chords.push_back(any_chord(rng));
    std::uniform_int_distribution<int> any_motion(0, static_cast<int>(kGrammarMotions.size()) - 1);
    std::bernoulli_distribution random_motion(spec_.grammar_noise);
    int motion = any_motion(rng);
    std::array<std::discrete_distribution<int>, 2> pick_motion{
        std::discrete_distribution<int>(table_[0].begin(), table_[0].end()),
        std::discrete_distribution<int>(table_[1].begin(), table_[1].end())};
    while (static_cast<int>(chords.size()) < num_chords) {
      const ChordSymbol cur = from_class(chords.back());
      if (spec_.progression == Progression::SecondOrder) {
        if (chords.size() > 1) {
          motion = random_motion(rng) ? any_motion(rng) : kGrammarNext[static_cast<std::size_t>(motion)];
        }
        const auto& m = kGrammarMotions[static_cast<std::size_t>(motion)];
        chords.push_back(to_class(ChordSymbol::chord(cur.root().shifted(m.interval), m.quality)));
      } else {
        const int m = pick_motion[cur.quality() == Quality::Minor ? 1 : 0](rng);
        chords.push_back(to_class(
            ChordSymbol::chord(cur.root().shifted(m % 12), m >= 12 ? Quality::Minor : Quality::Major)));
      }
    }
    return chords;
  }

 private:
  SynthSpec spec_;
  std::array<std::array<double, 24>, 2> table_{};
};

}  // namespace detail

// Generates num_train songs with ids 1.. and num_test songs with ids 1000..
// Feature noise comes from its own stream, so the annotations do not depend on
// whether features are generated.
template <class Rng>
SynthCorpus synth_corpus(const SynthSpec& spec, Rng& rng, bool with_features = true) {
  spec.validate();
  std::mt19937_64 noise_rng(rng());
  detail::ChordGenerator generator(spec, rng);
  std::geometric_distribution<int> extra_frames(1.0 - spec.self_transition);
  std::uniform_int_distribution<int> edge_frames(std::max(5, spec.min_chord_frames), std::max(20, spec.min_chord_frames));
  const auto duration = [&] { return static_cast<std::size_t>(spec.min_chord_frames + extra_frames(rng)); };
  std::normal_distribution<double> noise(0.0, 1.0);

  SynthCorpus corpus;
  const int total = spec.num_train + spec.num_test;
  for (int s = 0; s < total; ++s) {
    const int song_id = s < spec.num_train ? s + 1 : kTestIdThreshold + (s - spec.num_train);
    std::vector<ClassId> frames;
    if (spec.no_chord_edges) frames.assign(static_cast<std::size_t>(edge_frames(rng)), kNoChordClass);
    if (spec.min_chords > 0) {
      const int n = std::uniform_int_distribution<int>(spec.min_chords, spec.max_chords)(rng);
      for (ClassId c : generator.song(n, rng)) frames.insert(frames.end(), duration(), c);
    } else {
      const int target = std::uniform_int_distribution<int>(spec.min_frames, spec.max_frames)(rng);
      // Draw more chords than needed, then truncate to the target length.
      auto chords = generator.song(target, rng);
      for (ClassId c : chords) {
        if (static_cast<int>(frames.size()) >= target) break;
        frames.insert(frames.end(), duration(), c);
      }
      // Truncate to the target, but never below the shortest allowed chord.
      std::size_t keep = static_cast<std::size_t>(target);
      std::size_t run_start = keep;
      while (run_start > 0 && frames[run_start - 1] == frames[keep - 1]) --run_start;
      keep = std::max(keep, std::min(frames.size(), run_start + static_cast<std::size_t>(spec.min_chord_frames)));
      frames.resize(keep);
    }
    if (spec.no_chord_edges) frames.insert(frames.end(), static_cast<std::size_t>(edge_frames(rng)), kNoChordClass);

    AnnotationTrack track;
    track.song_id = song_id;
    track.title = "Synthetic song " + std::to_string(song_id);
    track.artist = "chordlm-synth";
    track.segments = frames_to_segments(frames);

    corpus.tracks.push_back(std::move(track));
    if (!with_features) continue;
    FeatureMatrix x = FeatureMatrix::Zero(static_cast<Eigen::Index>(frames.size()), kNumClasses);
    for (std::size_t t = 0; t < frames.size(); ++t) {
      const auto r = static_cast<Eigen::Index>(t);
      x(r, frames[t]) = 1.0;
      if (spec.noise_sigma > 0.0) {
        for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) += spec.noise_sigma * noise(noise_rng);
      }
    }
    corpus.features.push_back(std::move(x));
  }
  return corpus;
}

}  // namespace chordlm
