#pragma once

// Chord labels, the major/minor reduction and the 25-class index space.
//
// Class ids: 0-11 major chords on C..B, 12-23 minor chords on C..B, 24 no-chord.

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "chordlm/errors.hpp"

namespace chordlm {

using ClassId = int;

inline constexpr int kNumClasses = 25;
inline constexpr ClassId kNoChordClass = 24;

class PitchClass {
 public:
  constexpr PitchClass() = default;
  constexpr explicit PitchClass(int semitone) : value_(wrap(semitone)) {}

  constexpr int value() const noexcept { return value_; }
  constexpr PitchClass shifted(int semitones) const noexcept {
    return PitchClass(value_ + semitones);
  }

  friend constexpr auto operator<=>(PitchClass, PitchClass) = default;

 private:
  static constexpr int wrap(int v) noexcept { return ((v % 12) + 12) % 12; }
  int value_ = 0;
};

enum class Quality : std::uint8_t { Major, Minor };

class ChordSymbol {
 public:
  static constexpr ChordSymbol no_chord() noexcept { return ChordSymbol(); }
  static constexpr ChordSymbol chord(PitchClass root, Quality quality) noexcept {
    ChordSymbol s;
    s.is_chord_ = true;
    s.root_ = root;
    s.quality_ = quality;
    return s;
  }

  constexpr bool is_no_chord() const noexcept { return !is_chord_; }
  // Only meaningful for chords.
  constexpr PitchClass root() const noexcept { return root_; }
  constexpr Quality quality() const noexcept { return quality_; }

  friend constexpr bool operator==(const ChordSymbol& a, const ChordSymbol& b) noexcept {
    if (a.is_chord_ != b.is_chord_) return false;
    return !a.is_chord_ || (a.root_ == b.root_ && a.quality_ == b.quality_);
  }

 private:
  constexpr ChordSymbol() = default;
  bool is_chord_ = false;
  PitchClass root_{};
  Quality quality_ = Quality::Major;
};

constexpr ClassId to_class(ChordSymbol s) noexcept {
  if (s.is_no_chord()) return kNoChordClass;
  return s.root().value() + (s.quality() == Quality::Minor ? 12 : 0);
}

constexpr bool is_valid_class(ClassId id) noexcept { return id >= 0 && id < kNumClasses; }

inline ChordSymbol from_class(ClassId id) {
  if (!is_valid_class(id)) throw ContractError("class id out of range: " + std::to_string(id));
  if (id == kNoChordClass) return ChordSymbol::no_chord();
  return ChordSymbol::chord(PitchClass(id % 12), id >= 12 ? Quality::Minor : Quality::Major);
}

constexpr ChordSymbol transpose(ChordSymbol s, int shift) noexcept {
  if (s.is_no_chord()) return s;
  return ChordSymbol::chord(s.root().shifted(shift), s.quality());
}

inline ClassId transpose_class(ClassId id, int shift) {
  return to_class(transpose(from_class(id), shift));
}

inline constexpr std::array<std::string_view, 12> kSharpNames = {
    "C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"};

inline std::string to_string(ChordSymbol s) {
  if (s.is_no_chord()) return "N";
  std::string out(kSharpNames[static_cast<std::size_t>(s.root().value())]);
  out += s.quality() == Quality::Minor ? ":min" : ":maj";
  return out;
}

inline std::string class_name(ClassId id) { return to_string(from_class(id)); }

// ---------------------------------------------------------------------------
// Label parsing

struct NoChord {
  friend constexpr bool operator==(NoChord, NoChord) noexcept { return true; }
};

struct RawChordLabel {
  PitchClass root;
  std::string quality_name;
  std::vector<int> intervals;  // semitones above the root, ascending; compound intervals kept (9th = 14)
};

using ParsedLabel = std::variant<NoChord, RawChordLabel>;

struct QualityEntry {
  std::string_view name;
  std::vector<int> intervals;
};

// Shorthand -> intervals. A bare root ("C") means "maj".
inline const std::vector<QualityEntry>& quality_table() {
  static const std::vector<QualityEntry> table = {
      {"maj", {4, 7}},
      {"min", {3, 7}},
      {"dim", {3, 6}},
      {"aug", {4, 8}},
      {"7", {4, 7, 10}},
      {"maj7", {4, 7, 11}},
      {"min7", {3, 7, 10}},
      {"minmaj7", {3, 7, 11}},
      {"dim7", {3, 6, 9}},
      {"hdim7", {3, 6, 10}},
      {"maj6", {4, 7, 9}},
      {"min6", {3, 7, 9}},
      {"9", {4, 7, 10, 14}},
      {"maj9", {4, 7, 11, 14}},
      {"min9", {3, 7, 10, 14}},
      {"11", {4, 7, 10, 14, 17}},
      {"min11", {3, 7, 10, 14, 17}},
      {"13", {4, 7, 10, 14, 21}},
      {"maj13", {4, 7, 11, 14, 21}},
      {"min13", {3, 7, 10, 14, 21}},
      {"sus2", {2, 7}},
      {"sus4", {5, 7}},
      {"7sus4", {5, 7, 10}},
      {"5", {7}},
      {"1", {}},
  };
  return table;
}

inline PitchClass parse_root(std::string_view text) {
  static constexpr std::array<int, 7> kNatural = {9, 11, 0, 2, 4, 5, 7};  // A..G
  if (text.empty() || text[0] < 'A' || text[0] > 'G') {
    throw ParseError("unknown root name '" + std::string(text) + "'", std::string(text));
  }
  int semitone = kNatural[static_cast<std::size_t>(text[0] - 'A')];
  for (char c : text.substr(1)) {
    if (c == '#') {
      ++semitone;
    } else if (c == 'b') {
      --semitone;
    } else {
      throw ParseError("unknown root name '" + std::string(text) + "'", std::string(text));
    }
  }
  return PitchClass(semitone);
}

// Parses "ROOT[:quality][/bass]" or the no-chord token "N". The bass note of an
// inversion does not affect the reduction and is validated but dropped. "X"
// (unknown chord in some annotation sets) is read as no-chord.
inline ParsedLabel parse_label(std::string_view text) {
  if (text.empty()) throw ParseError("empty chord label", "");
  if (text == "N" || text == "X") return NoChord{};

  if (auto slash = text.find('/'); slash != std::string_view::npos) {
    std::string_view bass = text.substr(slash + 1);
    if (bass.empty()) throw ParseError("empty bass in '" + std::string(text) + "'", "");
    text = text.substr(0, slash);
  }

  std::string_view root_text = text;
  std::string_view quality = "maj";
  if (auto colon = text.find(':'); colon != std::string_view::npos) {
    root_text = text.substr(0, colon);
    quality = text.substr(colon + 1);
  }

  RawChordLabel label;
  label.root = parse_root(root_text);
  const auto& table = quality_table();
  auto it = std::find_if(table.begin(), table.end(),
                         [&](const QualityEntry& e) { return e.name == quality; });
  if (it == table.end()) {
    throw ParseError("unknown chord quality '" + std::string(quality) + "'", std::string(quality));
  }
  label.quality_name = std::string(it->name);
  label.intervals.assign(it->intervals.begin(), it->intervals.end());
  return label;
}

// Minor iff the smallest interval inside the octave is a minor third. Chords
// without a third (sus, power chords) land on major.
inline ChordSymbol reduce_to_majmin(const ParsedLabel& label) {
  if (std::holds_alternative<NoChord>(label)) return ChordSymbol::no_chord();
  const auto& raw = std::get<RawChordLabel>(label);
  auto first = std::find_if(raw.intervals.begin(), raw.intervals.end(),
                            [](int i) { return i > 0 && i < 12; });
  bool minor = first != raw.intervals.end() && *first == 3;
  return ChordSymbol::chord(raw.root, minor ? Quality::Minor : Quality::Major);
}

inline ClassId label_to_class(std::string_view text) {
  return to_class(reduce_to_majmin(parse_label(text)));
}

}  // namespace chordlm
