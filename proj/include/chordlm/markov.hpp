#pragma once

// First-order Markov chain over a class alphabet: initial distribution pi and
// row-stochastic transitions A[i][j] = P(y_k = j | y_{k-1} = i).

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "chordlm/chord.hpp"
#include "chordlm/errors.hpp"
#include "chordlm/scorer.hpp"

namespace chordlm {

enum class UnseenRowPolicy {
  Uniform,  // a predecessor never observed (alpha = 0) gets a uniform row
  Reject,   // ... or fitting fails
};

class MarkovModel {
 public:
  // Start state is -1; otherwise the last consumed symbol.
  using State = int;

  MarkovModel() = default;
  MarkovModel(int num_classes, double alpha, std::vector<double> pi, std::vector<double> transitions)
      : n_(num_classes), alpha_(alpha), pi_(std::move(pi)), a_(std::move(transitions)) {
    if (n_ <= 0) throw ContractError("MarkovModel: need at least one class");
    if (pi_.size() != static_cast<std::size_t>(n_) || a_.size() != pi_.size() * pi_.size()) {
      throw ContractError("MarkovModel: shape mismatch");
    }
    refresh_logs();
  }

  static MarkovModel uniform(int num_classes = kNumClasses) {
    const auto n = static_cast<std::size_t>(num_classes);
    return MarkovModel(num_classes, 0.0, std::vector<double>(n, 1.0 / num_classes),
                       std::vector<double>(n * n, 1.0 / num_classes));
  }

  int num_classes() const noexcept { return n_; }
  double alpha() const noexcept { return alpha_; }
  std::span<const double> pi() const noexcept { return pi_; }
  double transition(int from, int to) const { return a_[index(from, to)]; }
  std::span<const double> row(int from) const {
    return std::span<const double>(a_).subspan(static_cast<std::size_t>(from * n_),
                                               static_cast<std::size_t>(n_));
  }
  double log_transition(int from, int to) const { return log_a_[index(from, to)]; }
  double log_initial(int sym) const { return log_pi_[static_cast<std::size_t>(sym)]; }

  State start() const noexcept { return -1; }
  State advance(State, ClassId sym) const { return sym; }
  std::span<const double> log_probs(State s) const {
    if (s < 0) return log_pi_;
    return std::span<const double>(log_a_).subspan(static_cast<std::size_t>(s * n_),
                                                   static_cast<std::size_t>(n_));
  }

  // log pi_{y1} + sum_k log A[y_{k-1}][y_k]; -inf when a step has probability 0.
  double sequence_logprob(std::span<const ClassId> seq) const {
    if (seq.empty()) throw ContractError("sequence_logprob: empty sequence");
    check_symbol(seq[0]);
    double total = log_pi_[static_cast<std::size_t>(seq[0])];
    for (std::size_t k = 1; k < seq.size(); ++k) {
      check_symbol(seq[k]);
      total += log_a_[index(seq[k - 1], seq[k])];
    }
    return total;
  }

  void save(std::ostream& out) const {
    out.precision(17);
    out << "chordlm-markov 1\n";
    out << "classes " << n_ << " alpha " << alpha_ << "\n";
    out << "pi";
    for (double p : pi_) out << ' ' << p;
    out << '\n';
    for (int i = 0; i < n_; ++i) {
      out << "A";
      for (double p : row(i)) out << ' ' << p;
      out << '\n';
    }
  }

  static MarkovModel load(std::istream& in) {
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != "chordlm-markov" || version != 1) {
      throw DataError("not a chordlm-markov v1 model");
    }
    std::string k1, k2;
    int n = 0;
    double alpha = 0.0;
    if (!(in >> k1 >> n >> k2 >> alpha) || k1 != "classes" || k2 != "alpha" || n <= 0) {
      throw DataError("malformed Markov model header");
    }
    auto read_row = [&](const char* tag) {
      std::string t;
      if (!(in >> t) || t != tag) throw DataError(std::string("expected row tag ") + tag);
      std::vector<double> r(static_cast<std::size_t>(n));
      for (auto& v : r) {
        if (!(in >> v)) throw DataError("truncated Markov model row");
      }
      return r;
    };
    auto pi = read_row("pi");
    std::vector<double> a;
    for (int i = 0; i < n; ++i) {
      auto r = read_row("A");
      a.insert(a.end(), r.begin(), r.end());
    }
    return MarkovModel(n, alpha, std::move(pi), std::move(a));
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    save(out);
  }
  static MarkovModel load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return load(in);
  }

 private:
  std::size_t index(int from, int to) const {
    return static_cast<std::size_t>(from) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(to);
  }
  void check_symbol(ClassId c) const {
    if (c < 0 || c >= n_) throw ContractError("symbol out of range: " + std::to_string(c));
  }
  void refresh_logs() {
    log_pi_.resize(pi_.size());
    log_a_.resize(a_.size());
    for (std::size_t i = 0; i < pi_.size(); ++i) log_pi_[i] = std::log(pi_[i]);
    for (std::size_t i = 0; i < a_.size(); ++i) log_a_[i] = std::log(a_[i]);
  }

  int n_ = 0;
  double alpha_ = 0.0;
  std::vector<double> pi_;
  std::vector<double> a_;
  std::vector<double> log_pi_;
  std::vector<double> log_a_;
};

// Counts initial symbols and transitions, adds alpha to every cell, and
// normalizes.
template <class Sequences>
MarkovModel fit_markov(const Sequences& sequences, double alpha, int num_classes = kNumClasses,
                       UnseenRowPolicy policy = UnseenRowPolicy::Uniform) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ContractError("fit_markov: alpha must be >= 0");
  const auto n = static_cast<std::size_t>(num_classes);
  std::vector<double> pi(n, 0.0);
  std::vector<double> a(n * n, 0.0);
  bool any = false;
  for (const auto& seq : sequences) {
    if (std::empty(seq)) continue;
    any = true;
    auto it = std::begin(seq);
    int prev = *it;
    if (prev < 0 || prev >= num_classes) throw ContractError("fit_markov: symbol out of range");
    pi[static_cast<std::size_t>(prev)] += 1.0;
    for (++it; it != std::end(seq); ++it) {
      int cur = *it;
      if (cur < 0 || cur >= num_classes) throw ContractError("fit_markov: symbol out of range");
      a[static_cast<std::size_t>(prev) * n + static_cast<std::size_t>(cur)] += 1.0;
      prev = cur;
    }
  }
  if (!any) throw ContractError("fit_markov: need at least one non-empty sequence");

  auto normalize = [&](double* row, int row_index) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += (row[j] += alpha);
    if (total == 0.0) {
      if (policy == UnseenRowPolicy::Reject) {
        throw DataError("fit_markov: row " + std::to_string(row_index) +
                        " has no counts and alpha = 0; cannot normalize");
      }
      for (std::size_t j = 0; j < n; ++j) row[j] = 1.0 / static_cast<double>(n);
      return;
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= total;
  };
  normalize(pi.data(), -1);
  for (std::size_t i = 0; i < n; ++i) normalize(a.data() + i * n, static_cast<int>(i));
  return MarkovModel(num_classes, alpha, std::move(pi), std::move(a));
}

}  // namespace chordlm
