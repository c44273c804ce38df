#pragma once

// The stateful next-symbol interface shared by the Markov chain and the RNN
// language model. A state holds everything consumed so far; log_probs(state)
// is the log distribution of the next symbol.

#include <concepts>
#include <span>
#include <vector>

#include "chordlm/chord.hpp"
#include "chordlm/errors.hpp"

namespace chordlm {

template <class M>
concept SequenceScorer = requires(const M& m, const typename M::State& s, ClassId sym) {
  { m.num_classes() } -> std::convertible_to<int>;
  { m.start() } -> std::same_as<typename M::State>;
  { m.advance(s, sym) } -> std::same_as<typename M::State>;
  { m.log_probs(s) } -> std::convertible_to<std::span<const double>>;
};

// Optional batched advance used by the beam search.
template <class M>
concept BatchAdvance = SequenceScorer<M> && requires(const M& m,
                                                     std::span<const typename M::State* const> states,
                                                     std::span<const ClassId> syms) {
  { m.advance_batch(states, syms) } -> std::same_as<std::vector<typename M::State>>;
};

// Element k = log P(y_k | y_1..y_{k-1}).
template <SequenceScorer M>
std::vector<double> per_symbol_logprobs(const M& model, std::span<const ClassId> seq) {
  if (seq.empty()) throw ContractError("per_symbol_logprobs: empty sequence");
  std::vector<double> out;
  out.reserve(seq.size());
  auto state = model.start();
  for (std::size_t k = 0; k < seq.size(); ++k) {
    const auto lp = model.log_probs(state);
    out.push_back(lp[static_cast<std::size_t>(seq[k])]);
    if (k + 1 < seq.size()) state = model.advance(state, seq[k]);
  }
  return out;
}

}  // namespace chordlm
