#pragma once

// LSTM language model over the 25 chord classes. The input at step k is the
// one-hot previous symbol (no-chord before the first symbol). With skip
// connections every LSTM layer also sees the input, and the softmax output
// layer sees the input and every hidden layer.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "chordlm/chord.hpp"
#include "chordlm/dataset.hpp"
#include "chordlm/errors.hpp"
#include "chordlm/neural.hpp"
#include "chordlm/scorer.hpp"

namespace chordlm {

struct RnnLmConfig {
  int num_layers = 2;
  int hidden = 100;
  bool skip_connections = true;
  int seq_len = 100;
  int max_epochs = 200;
  double lr0 = 0.001;
  double momentum = 0.9;
  int batch_size = 8;
  int patience = 20;
  double clip_norm = 5.0;
  bool augment = true;
  int vocab = kNumClasses;

  void validate() const {
    if (num_layers <= 0 || hidden <= 0 || seq_len <= 0 || max_epochs <= 0 || batch_size <= 0 ||
        patience <= 0 || !(lr0 > 0.0) || momentum < 0.0 || momentum >= 1.0 || clip_norm < 0.0) {
      throw ContractError("RnnLmConfig: hyperparameters must be positive");
    }
    if (vocab != kNumClasses) throw ContractError("RnnLmConfig: vocab must be 25");
  }
};

struct RnnLmParams {
  std::vector<nn::LstmParams> layers;
  nn::DenseParams output;

  std::vector<nn::NamedTensor> tensors() {
    std::vector<nn::NamedTensor> out;
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].append_tensors("lstm" + std::to_string(l), out);
    output.append_tensors("output", out);
    return out;
  }
  std::vector<nn::ConstNamedTensor> tensors() const {
    return nn::as_const(const_cast<RnnLmParams*>(this)->tensors());
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += static_cast<std::size_t>(t.value->size());
    return n;
  }
};

// One padded training batch, B rows by T steps, row-major.
struct LmBatch {
  int batch = 0;
  int steps = 0;
  std::vector<int> inputs;
  std::vector<int> targets;
  std::vector<double> weights;  // 0 on padding; otherwise 1 / (number of real targets)
};

class RnnLm {
 public:
  struct State {
    std::vector<nn::LstmState> layers;
    std::vector<double> log_probs;  // distribution of the next symbol
  };

  RnnLm() = default;
  RnnLm(RnnLmConfig config, RnnLmParams params) : config_(config), params_(std::move(params)) {
    config_.validate();
    if (static_cast<int>(params_.layers.size()) != config_.num_layers) {
      throw ContractError("RnnLm: layer count mismatch");
    }
    for (int l = 0; l < config_.num_layers; ++l) {
      const auto& p = params_.layers[static_cast<std::size_t>(l)];
      if (p.input_size() != layer_input_size(l) || p.hidden_size() != config_.hidden) {
        throw ContractError("RnnLm: layer " + std::to_string(l) + " shape mismatch");
      }
    }
    if (params_.output.input_size() != output_input_size() || params_.output.output_size() != config_.vocab) {
      throw ContractError("RnnLm: output layer shape mismatch");
    }
  }

  static RnnLmParams zero_params(const RnnLmConfig& config) {
    RnnLmParams p;
    for (int l = 0; l < config.num_layers; ++l) {
      p.layers.push_back(nn::LstmParams::zeros(layer_input_size(config, l), config.hidden));
    }
    p.output = nn::DenseParams::zeros(output_input_size(config), config.vocab);
    return p;
  }

  template <class Rng>
  static RnnLm initialize(const RnnLmConfig& config, Rng& rng) {
    config.validate();
    RnnLmParams p;
    for (int l = 0; l < config.num_layers; ++l) {
      p.layers.push_back(nn::LstmParams::glorot(layer_input_size(config, l), config.hidden, rng));
    }
    p.output = nn::DenseParams::glorot(output_input_size(config), config.vocab, rng);
    return RnnLm(config, std::move(p));
  }

  const RnnLmConfig& config() const noexcept { return config_; }
  const RnnLmParams& params() const noexcept { return params_; }
  RnnLmParams& mutable_params() noexcept { return params_; }
  int num_classes() const noexcept { return config_.vocab; }

  // ---- stateful scoring ---------------------------------------------------

  State initial_state() const {
    State s;
    for (int l = 0; l < config_.num_layers; ++l) s.layers.push_back(nn::LstmState::zeros(1, config_.hidden));
    return s;
  }

  // Feeds `previous` and returns the next-symbol distribution with the new state.
  std::pair<std::vector<double>, State> score_next(const State& state, ClassId previous) const {
    State next = advance(state, previous);
    std::vector<double> probs(next.log_probs.size());
    std::transform(next.log_probs.begin(), next.log_probs.end(), probs.begin(),
                   [](double lp) { return std::exp(lp); });
    return {std::move(probs), std::move(next)};
  }

  State start() const { return advance(initial_state(), kNoChordClass); }

  State advance(const State& state, ClassId sym) const {
    const State* one[] = {&state};
    const ClassId syms[] = {sym};
    return std::move(advance_batch(one, syms).front());
  }

  std::span<const double> log_probs(const State& s) const { return s.log_probs; }

  std::vector<State> advance_batch(std::span<const State* const> states, std::span<const ClassId> syms) const {
    if (states.size() != syms.size()) throw ContractError("advance_batch: size mismatch");
    const auto batch = static_cast<int>(states.size());
    std::vector<nn::LstmState> layer_states(static_cast<std::size_t>(config_.num_layers));
    for (int l = 0; l < config_.num_layers; ++l) {
      auto& ls = layer_states[static_cast<std::size_t>(l)];
      ls = nn::LstmState::zeros(batch, config_.hidden);
      for (int b = 0; b < batch; ++b) {
        const auto& src = states[static_cast<std::size_t>(b)]->layers[static_cast<std::size_t>(l)];
        ls.h.row(b) = src.h.row(0);
        ls.c.row(b) = src.c.row(0);
      }
    }
    nn::Matrix x = one_hot(syms);
    nn::Matrix logp = nn::log_softmax_rows(step(x, layer_states));
    std::vector<State> out(states.size());
    for (int b = 0; b < batch; ++b) {
      auto& s = out[static_cast<std::size_t>(b)];
      for (const auto& ls : layer_states) s.layers.push_back({ls.h.row(b), ls.c.row(b)});
      s.log_probs.assign(logp.row(b).data(), logp.row(b).data() + logp.cols());
    }
    return out;
  }

  std::vector<double> per_symbol_logprobs(std::span<const ClassId> seq) const {
    return chordlm::per_symbol_logprobs(*this, seq);
  }

  double sequence_logprob(std::span<const ClassId> seq) const {
    const auto lp = per_symbol_logprobs(seq);
    return std::accumulate(lp.begin(), lp.end(), 0.0);
  }

  // ---- whole-sequence forward / backward ----------------------------------

  struct Forward {
    std::vector<nn::Matrix> inputs;       // one-hot, per step
    std::vector<nn::LstmForward> layers;  // per layer
    std::vector<nn::Matrix> output_inputs;
    std::vector<nn::Matrix> logits;
  };

  // Runs every layer over the whole batch, layer by layer.
  Forward forward(const LmBatch& batch) const {
    check_batch(batch);
    Forward f;
    f.inputs.reserve(static_cast<std::size_t>(batch.steps));
    for (int t = 0; t < batch.steps; ++t) {
      std::vector<ClassId> col(static_cast<std::size_t>(batch.batch));
      for (int b = 0; b < batch.batch; ++b) col[static_cast<std::size_t>(b)] = batch.inputs[idx(batch, b, t)];
      f.inputs.push_back(one_hot(col));
    }
    for (int l = 0; l < config_.num_layers; ++l) {
      std::vector<nn::Matrix> layer_in;
      layer_in.reserve(f.inputs.size());
      for (int t = 0; t < batch.steps; ++t) layer_in.push_back(layer_input(l, f, t));
      f.layers.push_back(nn::lstm_forward(params_.layers[static_cast<std::size_t>(l)], layer_in,
                                          nn::LstmState::zeros(batch.batch, config_.hidden)));
    }
    for (int t = 0; t < batch.steps; ++t) {
      f.output_inputs.push_back(output_input(f, t));
      f.logits.push_back(nn::dense_forward(params_.output, f.output_inputs.back()));
    }
    return f;
  }

  // Weighted cross-entropy of a batch (mean per real symbol with LmBatch's
  // weights). Adds exact gradients to `grads` when non-null.
  double loss(const LmBatch& batch, RnnLmParams* grads = nullptr) const {
    Forward f = forward(batch);
    double total = 0.0;
    std::vector<nn::Matrix> d_logits(static_cast<std::size_t>(batch.steps));
    std::vector<int> targets(static_cast<std::size_t>(batch.batch));
    std::vector<double> weights(static_cast<std::size_t>(batch.batch));
    for (int t = 0; t < batch.steps; ++t) {
      for (int b = 0; b < batch.batch; ++b) {
        targets[static_cast<std::size_t>(b)] = batch.targets[idx(batch, b, t)];
        weights[static_cast<std::size_t>(b)] = batch.weights[idx(batch, b, t)];
      }
      total += nn::softmax_cross_entropy(f.logits[static_cast<std::size_t>(t)], targets, weights,
                                         grads ? &d_logits[static_cast<std::size_t>(t)] : nullptr);
    }
    if (grads != nullptr) backward(f, d_logits, *grads);
    return total;
  }

  void backward(const Forward& f, std::span<const nn::Matrix> d_logits, RnnLmParams& grads) const {
    const std::size_t steps = d_logits.size();
    if (f.layers.size() != params_.layers.size() || f.logits.size() != steps) {
      throw ContractError("RnnLm::backward: forward cache missing");
    }
    const int num_layers = config_.num_layers;
    const Eigen::Index vocab = config_.vocab;
    const Eigen::Index hidden = config_.hidden;
    // d_hidden[l][t]: gradient reaching layer l's output at step t.
    std::vector<std::vector<nn::Matrix>> d_hidden(static_cast<std::size_t>(num_layers));
    for (auto& dh : d_hidden) dh.assign(steps, nn::Matrix::Zero(d_logits[0].rows(), hidden));
    for (std::size_t t = 0; t < steps; ++t) {
      nn::Matrix dz = nn::dense_backward(params_.output, f.output_inputs[t], d_logits[t], grads.output);
      if (config_.skip_connections) {
        for (int l = 0; l < num_layers; ++l) {
          d_hidden[static_cast<std::size_t>(l)][t] += dz.middleCols(vocab + l * hidden, hidden);
        }
      } else {
        d_hidden.back()[t] += dz;
      }
    }
    for (int l = num_layers - 1; l >= 0; --l) {
      const auto ul = static_cast<std::size_t>(l);
      nn::LstmBackward lb = nn::lstm_backward(params_.layers[ul], f.layers[ul].cache, d_hidden[ul]);
      grads.layers[ul].w_in += lb.grads.w_in;
      grads.layers[ul].w_rec += lb.grads.w_rec;
      grads.layers[ul].bias += lb.grads.bias;
      if (l == 0) break;
      for (std::size_t t = 0; t < steps; ++t) {
        d_hidden[ul - 1][t] += config_.skip_connections ? lb.d_inputs[t].rightCols(hidden) : lb.d_inputs[t];
      }
    }
  }

  // ---- checkpoint ---------------------------------------------------------

  void save(std::ostream& out) const {
    out << "chordlm-rnnlm 1\n";
    out << "num_layers " << config_.num_layers << " hidden " << config_.hidden << " skip_connections "
        << (config_.skip_connections ? 1 : 0) << " vocab " << config_.vocab << "\n";
    auto tensors = const_cast<RnnLmParams&>(params_).tensors();
    nn::save_tensors(out, tensors);
  }

  static RnnLm load(std::istream& in) {
    std::string magic, k1, k2, k3, k4;
    int version = 0, skip = 1;
    RnnLmConfig config;
    if (!(in >> magic >> version) || magic != "chordlm-rnnlm" || version != 1) {
      throw DataError("not a chordlm-rnnlm v1 checkpoint");
    }
    if (!(in >> k1 >> config.num_layers >> k2 >> config.hidden >> k3 >> skip >> k4 >> config.vocab) ||
        k1 != "num_layers" || k2 != "hidden" || k3 != "skip_connections" || k4 != "vocab") {
      throw DataError("malformed chordlm-rnnlm header");
    }
    config.skip_connections = skip != 0;
    if (config.num_layers <= 0 || config.hidden <= 0 || config.vocab != kNumClasses) {
      throw DataError("invalid chordlm-rnnlm configuration");
    }
    RnnLmParams params = zero_params(config);
    nn::load_tensors(in, params.tensors());
    return RnnLm(config, std::move(params));
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    save(out);
  }
  static RnnLm load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return load(in);
  }

 private:
  static int layer_input_size(const RnnLmConfig& c, int layer) {
    if (layer == 0) return c.vocab;
    return c.skip_connections ? c.vocab + c.hidden : c.hidden;
  }
  static int output_input_size(const RnnLmConfig& c) {
    return c.skip_connections ? c.vocab + c.num_layers * c.hidden : c.hidden;
  }
  int layer_input_size(int layer) const { return layer_input_size(config_, layer); }
  int output_input_size() const { return output_input_size(config_); }

  static std::size_t idx(const LmBatch& b, int row, int t) {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(b.steps) + static_cast<std::size_t>(t);
  }

  void check_batch(const LmBatch& b) const {
    const auto n = static_cast<std::size_t>(b.batch) * static_cast<std::size_t>(b.steps);
    if (b.batch <= 0 || b.steps <= 0 || b.inputs.size() != n || b.targets.size() != n || b.weights.size() != n) {
      throw ContractError("LmBatch: inconsistent shape");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!is_valid_class(b.inputs[i]) || !is_valid_class(b.targets[i])) {
        throw ContractError("LmBatch: class id out of range");
      }
    }
  }

  nn::Matrix one_hot(std::span<const ClassId> syms) const {
    nn::Matrix x = nn::Matrix::Zero(static_cast<Eigen::Index>(syms.size()), config_.vocab);
    for (std::size_t b = 0; b < syms.size(); ++b) {
      if (!is_valid_class(syms[b])) throw ContractError("RnnLm: class id out of range");
      x(static_cast<Eigen::Index>(b), syms[b]) = 1.0;
    }
    return x;
  }

  static nn::Matrix hcat(const nn::Matrix& a, const nn::Matrix& b) {
    nn::Matrix out(a.rows(), a.cols() + b.cols());
    out << a, b;
    return out;
  }

  nn::Matrix layer_input(int l, const Forward& f, int t) const {
    const auto ut = static_cast<std::size_t>(t);
    if (l == 0) return f.inputs[ut];
    const auto& below = f.layers[static_cast<std::size_t>(l - 1)].hidden[ut];
    return config_.skip_connections ? hcat(f.inputs[ut], below) : below;
  }

  nn::Matrix output_input(const Forward& f, int t) const {
    const auto ut = static_cast<std::size_t>(t);
    if (!config_.skip_connections) return f.layers.back().hidden[ut];
    nn::Matrix z(f.inputs[ut].rows(), output_input_size());
    z.leftCols(config_.vocab) = f.inputs[ut];
    for (int l = 0; l < config_.num_layers; ++l) {
      z.middleCols(config_.vocab + l * config_.hidden, config_.hidden) = f.layers[static_cast<std::size_t>(l)].hidden[ut];
    }
    return z;
  }

  // One step for all layers; same arithmetic as forward() so that stepping
  // and whole-sequence evaluation agree exactly.
  nn::Matrix step(const nn::Matrix& x, std::vector<nn::LstmState>& states) const {
    std::vector<nn::Matrix> hidden;
    nn::Matrix input = x;
    for (int l = 0; l < config_.num_layers; ++l) {
      if (l > 0) input = config_.skip_connections ? hcat(x, hidden.back()) : hidden.back();
      hidden.push_back(nn::lstm_step(params_.layers[static_cast<std::size_t>(l)], input,
                                     states[static_cast<std::size_t>(l)]));
    }
    nn::Matrix z;
    if (config_.skip_connections) {
      z.resize(x.rows(), output_input_size());
      z.leftCols(config_.vocab) = x;
      for (int l = 0; l < config_.num_layers; ++l) {
        z.middleCols(config_.vocab + l * config_.hidden, config_.hidden) = hidden[static_cast<std::size_t>(l)];
      }
    } else {
      z = hidden.back();
    }
    return nn::dense_forward(params_.output, z);
  }

  RnnLmConfig config_;
  RnnLmParams params_;
};

// ---------------------------------------------------------------------------
// Training

struct EpochStats {
  int epoch = 0;  // 0 = before training
  double train_loss = 0.0;
  double valid_logprob = 0.0;  // average per symbol
  double learning_rate = 0.0;
};

struct RnnTrainResult {
  RnnLm model;
  int best_epoch = 0;
  std::vector<EpochStats> history;
};

// Average per-symbol log-probability over a set of sequences.
template <SequenceScorer M, class Sequences>
double average_logprob(const M& model, const Sequences& sequences) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : sequences) {
    if (std::empty(s)) continue;
    for (double lp : per_symbol_logprobs(model, std::span<const ClassId>(std::data(s), std::size(s)))) total += lp;
    count += std::size(s);
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

namespace detail {

struct Window {
  std::vector<int> inputs;
  std::vector<int> targets;
};

// Inputs are the targets delayed by one with no-chord in front. The sequence
// is cut at a random phase into non-overlapping windows of at most seq_len.
template <class Rng>
void append_windows(std::span<const ClassId> seq, int seq_len, Rng& rng, std::vector<Window>& out) {
  std::uniform_int_distribution<int> phase_dist(0, seq_len - 1);
  const auto n = seq.size();
  const auto phase = static_cast<std::size_t>(phase_dist(rng));
  std::size_t begin = 0;
  std::size_t end = std::min(n, phase == 0 ? static_cast<std::size_t>(seq_len) : phase);
  while (begin < n) {
    Window w;
    for (std::size_t k = begin; k < end; ++k) {
      w.inputs.push_back(k == 0 ? kNoChordClass : seq[k - 1]);
      w.targets.push_back(seq[k]);
    }
    out.push_back(std::move(w));
    begin = end;
    end = std::min(n, begin + static_cast<std::size_t>(seq_len));
  }
}

inline LmBatch make_batch(std::span<const Window> windows) {
  LmBatch b;
  b.batch = static_cast<int>(windows.size());
  std::size_t real = 0;
  for (const auto& w : windows) {
    b.steps = std::max(b.steps, static_cast<int>(w.targets.size()));
    real += w.targets.size();
  }
  const auto n = static_cast<std::size_t>(b.batch) * static_cast<std::size_t>(b.steps);
  b.inputs.assign(n, kNoChordClass);
  b.targets.assign(n, kNoChordClass);
  b.weights.assign(n, 0.0);
  for (std::size_t r = 0; r < windows.size(); ++r) {
    for (std::size_t t = 0; t < windows[r].targets.size(); ++t) {
      const auto i = r * static_cast<std::size_t>(b.steps) + t;
      b.inputs[i] = windows[r].inputs[t];
      b.targets[i] = windows[r].targets[t];
      b.weights[i] = 1.0 / static_cast<double>(real);
    }
  }
  return b;
}

}  // namespace detail

// SGD with momentum on mean per-symbol cross-entropy, key-shift augmentation
// per presentation, gradient-norm clipping, linear learning-rate decay, and
// early stopping on validation log-probability. Returns the best checkpoint
// (the untrained model counts as epoch 0). With no validation data the
// training sequences are used for selection.
template <class Sequences, class Rng>
RnnTrainResult train_rnn_lm(const Sequences& train, const Sequences& valid, const RnnLmConfig& config, Rng& rng,
                            RnnLm* init = nullptr) {
  config.validate();
  std::vector<std::vector<ClassId>> train_seqs;
  for (const auto& s : train) {
    if (!std::empty(s)) train_seqs.emplace_back(std::begin(s), std::end(s));
  }
  if (train_seqs.empty()) throw ContractError("train_rnn_lm: empty training corpus");
  std::vector<std::vector<ClassId>> valid_seqs;
  for (const auto& s : valid) {
    if (!std::empty(s)) valid_seqs.emplace_back(std::begin(s), std::end(s));
  }
  const auto& selection = valid_seqs.empty() ? train_seqs : valid_seqs;

  RnnLm model = init ? *init : RnnLm::initialize(config, rng);
  RnnTrainResult result{model, 0, {}};
  double best = average_logprob(model, selection);
  result.history.push_back({0, std::numeric_limits<double>::quiet_NaN(), best, 0.0});

  nn::SgdMomentum optimizer({config.lr0, config.momentum, config.max_epochs});
  RnnLmParams grads = RnnLm::zero_params(config);
  auto grad_tensors = grads.tensors();
  auto param_tensors = model.mutable_params().tensors();
  int since_best = 0;
  std::uniform_int_distribution<int> shift_dist(0, 11);

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::vector<detail::Window> windows;
    for (const auto& s : train_seqs) {
      if (config.augment) {
        auto shifted = shift_sequence(s, shift_dist(rng));
        detail::append_windows(shifted, config.seq_len, rng, windows);
      } else {
        detail::append_windows(s, config.seq_len, rng, windows);
      }
    }
    std::shuffle(windows.begin(), windows.end(), rng);

    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t first = 0; first < windows.size(); first += static_cast<std::size_t>(config.batch_size)) {
      const auto count = std::min(windows.size() - first, static_cast<std::size_t>(config.batch_size));
      LmBatch batch = detail::make_batch(std::span<const detail::Window>(windows).subspan(first, count));
      for (auto& g : grad_tensors) g.value->setZero();
      const double loss = model.loss(batch, &grads);
      if (!std::isfinite(loss)) {
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batches),
                               epoch, batches);
      }
      nn::clip_gradient_norm(grad_tensors, config.clip_norm);
      try {
        optimizer.step(param_tensors, grad_tensors, epoch);
      } catch (const NumericalError& e) {
        throw TrainingDiverged(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batches),
                               epoch, batches);
      }
      epoch_loss += loss;
      ++batches;
    }

    const double score = average_logprob(model, selection);
    result.history.push_back(
        {epoch + 1, batches ? epoch_loss / batches : 0.0, score, optimizer.learning_rate(epoch)});
    if (score > best) {
      best = score;
      result.model = model;
      result.best_epoch = epoch + 1;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

}  // namespace chordlm
