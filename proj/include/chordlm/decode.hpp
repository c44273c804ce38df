#pragma once

// Temporal models applied to acoustic posteriors: majority vote, Viterbi
// decoding of the HMM formed with a Markov chain, and hashed beam search over
// any SequenceScorer (the RNN language model in particular).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "chordlm/acoustic.hpp"
#include "chordlm/chord.hpp"
#include "chordlm/dataset.hpp"
#include "chordlm/errors.hpp"
#include "chordlm/markov.hpp"
#include "chordlm/scorer.hpp"

namespace chordlm {

struct DecoderConfig {
  int beam_width = 25;
  int hash_len = 3;
  int bin_cap = 4;
  double mv_window_s = 1.3;
  double lm_weight = 1.0;
  bool prior_division = false;
  std::vector<double> class_priors;  // required when prior_division is on

  void validate(int classes) const {
    if (beam_width <= 0 || bin_cap <= 0 || hash_len < 0 || !(mv_window_s > 0.0) || !(lm_weight >= 0.0)) {
      throw ContractError("DecoderConfig: parameters must be positive");
    }
    if (bin_cap > beam_width) throw ContractError("DecoderConfig: bin_cap must not exceed beam_width");
    if (hash_len > 12) throw ContractError("DecoderConfig: hash_len above 12 is not supported");
    if (prior_division) {
      if (class_priors.size() != static_cast<std::size_t>(classes)) {
        throw ContractError("DecoderConfig: prior_division needs one prior per class");
      }
      for (double p : class_priors) {
        if (!(p > 0.0)) throw ContractError("DecoderConfig: class priors must be positive");
      }
    }
  }
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log posterior, optionally divided by the class prior.
inline double emission_score(const PosteriorMatrix& post, std::size_t frame, int cls, const DecoderConfig& config) {
  double e = std::log(post(frame, cls));
  if (config.prior_division) e -= std::log(config.class_priors[static_cast<std::size_t>(cls)]);
  return e;
}

// Relative class frequencies with add-one smoothing, for prior division.
template <class Sequences>
std::vector<double> class_priors(const Sequences& sequences, int classes = kNumClasses) {
  std::vector<double> counts(static_cast<std::size_t>(classes), 1.0);
  for (const auto& s : sequences) {
    for (ClassId c : s) counts[static_cast<std::size_t>(c)] += 1.0;
  }
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  for (auto& c : counts) c /= total;
  return counts;
}

// ---------------------------------------------------------------------------
// Majority vote

// Frame-wise argmax, then the most frequent label in a centered window of
// 2 * floor(window / 2) + 1 frames, truncated at the edges. Ties go to the
// larger summed posterior within the window, then to the lower class id.
inline FrameSequence majority_vote(const PosteriorMatrix& post, const DecoderConfig& config) {
  config.validate(post.classes());
  const auto frames = post.frames();
  const auto labels = argmax_frames(post);
  const auto window = static_cast<long>(std::lround(config.mv_window_s * kFrameRateHz));
  const long half = window / 2;
  FrameSequence out;
  out.classes.resize(frames);
  std::vector<int> counts(static_cast<std::size_t>(post.classes()));
  for (std::size_t k = 0; k < frames; ++k) {
    const long lo = std::max(0L, static_cast<long>(k) - half);
    const long hi = std::min(static_cast<long>(frames) - 1, static_cast<long>(k) + half);
    std::fill(counts.begin(), counts.end(), 0);
    for (long t = lo; t <= hi; ++t) ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(t)])];
    const int top = *std::max_element(counts.begin(), counts.end());
    ClassId best = -1;
    double best_mass = -1.0;
    for (int c = 0; c < post.classes(); ++c) {
      if (counts[static_cast<std::size_t>(c)] != top) continue;
      double mass = 0.0;
      for (long t = lo; t <= hi; ++t) mass += post(static_cast<std::size_t>(t), c);
      if (mass > best_mass) {
        best_mass = mass;
        best = c;
      }
    }
    out.classes[k] = best;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Viterbi

// log pi_{y1} + sum log A + sum emissions for a given labeling.
inline double path_score(const PosteriorMatrix& post, const MarkovModel& model, std::span<const ClassId> path,
                         const DecoderConfig& config) {
  if (path.size() != post.frames()) throw ContractError("path_score: length mismatch");
  double score = 0.0;
  for (std::size_t t = 0; t < path.size(); ++t) {
    score += t == 0 ? model.log_initial(path[0]) : model.log_transition(path[t - 1], path[t]);
    score += emission_score(post, t, path[t], config);
  }
  return score;
}

struct ViterbiResult {
  FrameSequence path;
  double score = kNegInf;
};

inline ViterbiResult viterbi_scored(const PosteriorMatrix& post, const MarkovModel& model, const DecoderConfig& config) {
  const int n = post.classes();
  config.validate(n);
  if (model.num_classes() != n) throw ContractError("viterbi: model and posterior class counts differ");
  const std::size_t frames = post.frames();
  ViterbiResult result;
  if (frames == 0) return result;

  const auto un = static_cast<std::size_t>(n);
  std::vector<double> delta(un), next(un);
  std::vector<int> back(frames * un, 0);
  for (int j = 0; j < n; ++j) delta[static_cast<std::size_t>(j)] = model.log_initial(j) + emission_score(post, 0, j, config);
  auto check_column = [&](const std::vector<double>& col, std::size_t t) {
    if (*std::max_element(col.begin(), col.end()) == kNegInf) {
      throw DecodeError("viterbi: no finite-score path reaches frame " + std::to_string(t), t);
    }
  };
  check_column(delta, 0);
  for (std::size_t t = 1; t < frames; ++t) {
    for (int j = 0; j < n; ++j) {
      double best = kNegInf;
      int arg = 0;
      for (int i = 0; i < n; ++i) {
        const double v = delta[static_cast<std::size_t>(i)] + model.log_transition(i, j);
        if (v > best) {
          best = v;
          arg = i;
        }
      }
      next[static_cast<std::size_t>(j)] = best + emission_score(post, t, j, config);
      back[t * un + static_cast<std::size_t>(j)] = arg;
    }
    delta.swap(next);
    check_column(delta, t);
  }
  int last = 0;
  for (int j = 1; j < n; ++j) {
    if (delta[static_cast<std::size_t>(j)] > delta[static_cast<std::size_t>(last)]) last = j;
  }
  result.score = delta[static_cast<std::size_t>(last)];
  result.path.classes.resize(frames);
  result.path.classes[frames - 1] = last;
  for (std::size_t t = frames - 1; t > 0; --t) {
    result.path.classes[t - 1] = back[t * un + static_cast<std::size_t>(result.path.classes[t])];
  }
  return result;
}

inline FrameSequence viterbi(const PosteriorMatrix& post, const MarkovModel& model, const DecoderConfig& config) {
  return viterbi_scored(post, model, config).path;
}

// ---------------------------------------------------------------------------
// Hashed beam search
//
// Each frame extends every hypothesis by every class, scoring
// log acoustic + lm_weight * log LM. Candidates are ranked by score, ties by
// lexicographic history. Walking down that ranking, a candidate is kept if its
// hash bin (its last hash_len symbols) holds fewer than bin_cap kept
// hypotheses, until beam_width are kept.

struct BeamResult {
  FrameSequence path;
  double score = kNegInf;
};

template <SequenceScorer M>
BeamResult hashed_beam_search_scored(const PosteriorMatrix& post, const M& scorer, const DecoderConfig& config) {
  using State = typename M::State;
  const int n = post.classes();
  config.validate(n);
  if (scorer.num_classes() != n) throw ContractError("hashed_beam_search: scorer and posterior class counts differ");
  if (n > 31) throw ContractError("hashed_beam_search: at most 31 classes");
  const std::size_t frames = post.frames();
  BeamResult result;
  if (frames == 0) return result;

  struct Node {
    int parent;
    ClassId sym;
  };
  struct Hyp {
    int node = -1;
    std::uint64_t key = 0;
    double score = 0.0;
    int lex_rank = 0;
  };
  struct Candidate {
    double score;
    int parent;
    ClassId sym;
  };

  const std::uint64_t key_mask = (std::uint64_t{1} << (5 * config.hash_len)) - 1;
  std::vector<Node> nodes;
  std::vector<Hyp> beam(1);
  std::vector<State> states;
  states.push_back(scorer.start());
  std::vector<Candidate> cands;
  std::vector<double> emissions(static_cast<std::size_t>(n));
  std::unordered_map<std::uint64_t, int> bins;

  for (std::size_t t = 0; t < frames; ++t) {
    for (int s = 0; s < n; ++s) emissions[static_cast<std::size_t>(s)] = emission_score(post, t, s, config);
    cands.clear();
    for (std::size_t h = 0; h < beam.size(); ++h) {
      const auto lp = scorer.log_probs(states[h]);
      for (int s = 0; s < n; ++s) {
        const double e = emissions[static_cast<std::size_t>(s)];
        const double lm = lp[static_cast<std::size_t>(s)];
        if (e == kNegInf || (config.lm_weight > 0.0 && lm == kNegInf)) continue;
        const double score = beam[h].score + e + (config.lm_weight > 0.0 ? config.lm_weight * lm : 0.0);
        cands.push_back({score, static_cast<int>(h), s});
      }
    }
    if (cands.empty()) throw DecodeError("hashed_beam_search: beam emptied at frame " + std::to_string(t), t);
    std::sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      const int ra = beam[static_cast<std::size_t>(a.parent)].lex_rank;
      const int rb = beam[static_cast<std::size_t>(b.parent)].lex_rank;
      if (ra != rb) return ra < rb;
      return a.sym < b.sym;
    });

    bins.clear();
    std::vector<Hyp> next;
    std::vector<const State*> parent_states;
    std::vector<int> parents;
    std::vector<ClassId> syms;
    for (const auto& c : cands) {
      if (static_cast<int>(next.size()) >= config.beam_width) break;
      const Hyp& parent = beam[static_cast<std::size_t>(c.parent)];
      const std::uint64_t key = ((parent.key << 5) | static_cast<std::uint64_t>(c.sym + 1)) & key_mask;
      int& in_bin = bins[key];
      if (in_bin >= config.bin_cap) continue;
      ++in_bin;
      nodes.push_back({parent.node, c.sym});
      next.push_back({static_cast<int>(nodes.size()) - 1, key, c.score, 0});
      parent_states.push_back(&states[static_cast<std::size_t>(c.parent)]);
      parents.push_back(c.parent);
      syms.push_back(c.sym);
    }

    // Lexicographic rank of each new history: parent rank, then symbol.
    {
      std::vector<std::pair<std::pair<int, ClassId>, int>> keyed;
      keyed.reserve(next.size());
      for (std::size_t i = 0; i < next.size(); ++i) {
        keyed.push_back({{beam[static_cast<std::size_t>(parents[i])].lex_rank, syms[i]}, static_cast<int>(i)});
      }
      std::sort(keyed.begin(), keyed.end());
      for (std::size_t r = 0; r < keyed.size(); ++r) {
        next[static_cast<std::size_t>(keyed[r].second)].lex_rank = static_cast<int>(r);
      }
    }

    if (t + 1 < frames) {
      std::vector<State> new_states;
      if constexpr (BatchAdvance<M>) {
        new_states = scorer.advance_batch(parent_states, syms);
      } else {
        new_states.reserve(next.size());
        for (std::size_t i = 0; i < next.size(); ++i) new_states.push_back(scorer.advance(*parent_states[i], syms[i]));
      }
      states = std::move(new_states);
    }
    beam = std::move(next);
  }

  result.score = beam.front().score;
  result.path.classes.resize(frames);
  int node = beam.front().node;
  for (std::size_t t = frames; t-- > 0;) {
    result.path.classes[t] = nodes[static_cast<std::size_t>(node)].sym;
    node = nodes[static_cast<std::size_t>(node)].parent;
  }
  return result;
}

template <SequenceScorer M>
FrameSequence hashed_beam_search(const PosteriorMatrix& post, const M& scorer, const DecoderConfig& config) {
  return hashed_beam_search_scored(post, scorer, config).path;
}

}  // namespace chordlm
