#pragma once

// Dense and LSTM layers with exact backpropagation (through time), softmax
// cross-entropy, and an SGD-with-momentum optimizer. Batches are rows:
// a B x I input matrix holds one time step of B sequences.

#include <Eigen/Dense>

#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "chordlm/errors.hpp"

namespace chordlm::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct NamedTensor {
  std::string name;
  Matrix* value;
};

struct ConstNamedTensor {
  std::string name;
  const Matrix* value;
};

inline std::vector<ConstNamedTensor> as_const(std::span<const NamedTensor> tensors) {
  std::vector<ConstNamedTensor> out;
  for (const auto& t : tensors) out.push_back({t.name, t.value});
  return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <class Rng>
void glorot_uniform(Matrix& m, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

// ---------------------------------------------------------------------------
// Dense: y = x W^T + b

struct DenseParams {
  Matrix weight;  // out x in
  Matrix bias;    // 1 x out

  int input_size() const { return static_cast<int>(weight.cols()); }
  int output_size() const { return static_cast<int>(weight.rows()); }

  static DenseParams zeros(int in, int out) {
    return {Matrix::Zero(out, in), Matrix::Zero(1, out)};
  }
  template <class Rng>
  static DenseParams glorot(int in, int out, Rng& rng) {
    DenseParams p = zeros(in, out);
    glorot_uniform(p.weight, in, out, rng);
    return p;
  }
  void append_tensors(const std::string& prefix, std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
  }
};

inline Matrix dense_forward(const DenseParams& p, const Matrix& x) {
  if (x.cols() != p.weight.cols()) throw ContractError("dense_forward: input width mismatch");
  Matrix y = x * p.weight.transpose();
  y.rowwise() += p.bias.row(0);
  return y;
}

// Accumulates parameter gradients into `grads` and returns dL/dx.
inline Matrix dense_backward(const DenseParams& p, const Matrix& x, const Matrix& dy, DenseParams& grads) {
  grads.weight.noalias() += dy.transpose() * x;
  grads.bias += dy.colwise().sum();
  return dy * p.weight;
}

// ---------------------------------------------------------------------------
// LSTM with gate blocks ordered input, forget, cell, output:
//   a = x W_in^T + h_prev W_rec^T + b
//   i = sig(a_i)  f = sig(a_f)  g = tanh(a_g)  o = sig(a_o)
//   c = f * c_prev + i * g      h = o * tanh(c)

struct LstmParams {
  Matrix w_in;   // 4H x I
  Matrix w_rec;  // 4H x H
  Matrix bias;   // 1 x 4H

  int input_size() const { return static_cast<int>(w_in.cols()); }
  int hidden_size() const { return static_cast<int>(w_rec.cols()); }

  static LstmParams zeros(int input, int hidden) {
    return {Matrix::Zero(4 * hidden, input), Matrix::Zero(4 * hidden, hidden), Matrix::Zero(1, 4 * hidden)};
  }
  // Glorot weights, zero biases except the forget gate at 1.
  template <class Rng>
  static LstmParams glorot(int input, int hidden, Rng& rng) {
    LstmParams p = zeros(input, hidden);
    glorot_uniform(p.w_in, input, hidden, rng);
    glorot_uniform(p.w_rec, hidden, hidden, rng);
    p.bias.block(0, hidden, 1, hidden).setOnes();
    return p;
  }
  void append_tensors(const std::string& prefix, std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".w_in", &w_in});
    out.push_back({prefix + ".w_rec", &w_rec});
    out.push_back({prefix + ".bias", &bias});
  }
};

struct LstmState {
  Matrix h;  // B x H
  Matrix c;  // B x H

  static LstmState zeros(int batch, int hidden) {
    return {Matrix::Zero(batch, hidden), Matrix::Zero(batch, hidden)};
  }
};

struct LstmStepCache {
  Matrix x;
  Matrix h_prev;
  Matrix c_prev;
  Matrix gates;  // activated i, f, g, o
  Matrix tanh_c;
};

struct LstmCache {
  std::vector<LstmStepCache> steps;
};

// Advances `state` by one step and returns the new hidden output.
inline Matrix lstm_step(const LstmParams& p, const Matrix& x, LstmState& state, LstmStepCache* cache = nullptr) {
  const Eigen::Index hidden = p.w_rec.cols();
  if (x.cols() != p.w_in.cols()) throw ContractError("lstm_step: input width mismatch");
  if (state.h.cols() != hidden || state.h.rows() != x.rows()) {
    throw ContractError("lstm_step: state shape mismatch");
  }
  Matrix gates = x * p.w_in.transpose();
  gates.noalias() += state.h * p.w_rec.transpose();
  gates.rowwise() += p.bias.row(0);
  for (Eigen::Index r = 0; r < gates.rows(); ++r) {
    double* row = gates.row(r).data();
    for (Eigen::Index j = 0; j < hidden; ++j) {
      row[j] = sigmoid(row[j]);
      row[hidden + j] = sigmoid(row[hidden + j]);
      row[2 * hidden + j] = std::tanh(row[2 * hidden + j]);
      row[3 * hidden + j] = sigmoid(row[3 * hidden + j]);
    }
  }
  Matrix c = gates.middleCols(hidden, hidden).cwiseProduct(state.c) +
             gates.leftCols(hidden).cwiseProduct(gates.middleCols(2 * hidden, hidden));
  Matrix tanh_c = c.array().tanh().matrix();
  Matrix h = gates.rightCols(hidden).cwiseProduct(tanh_c);
  if (cache != nullptr) {
    cache->x = x;
    cache->h_prev = std::move(state.h);
    cache->c_prev = std::move(state.c);
    cache->gates = std::move(gates);
    cache->tanh_c = tanh_c;
  }
  state.h = h;
  state.c = std::move(c);
  return h;
}

struct LstmForward {
  std::vector<Matrix> hidden;
  LstmState final_state;
  LstmCache cache;
};

inline LstmForward lstm_forward(const LstmParams& p, std::span<const Matrix> inputs, LstmState initial) {
  LstmForward out;
  out.final_state = std::move(initial);
  out.hidden.reserve(inputs.size());
  out.cache.steps.resize(inputs.size());
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    out.hidden.push_back(lstm_step(p, inputs[t], out.final_state, &out.cache.steps[t]));
  }
  return out;
}

struct LstmBackward {
  LstmParams grads;
  std::vector<Matrix> d_inputs;
  Matrix d_h0;
  Matrix d_c0;
};

// Full backpropagation through time given dL/dh_t for every step.
inline LstmBackward lstm_backward(const LstmParams& p, const LstmCache& cache, std::span<const Matrix> d_hidden) {
  if (cache.steps.empty() || cache.steps.size() != d_hidden.size()) {
    throw ContractError("lstm_backward: forward cache missing or length mismatch");
  }
  const Eigen::Index hidden = p.w_rec.cols();
  const Eigen::Index batch = cache.steps.front().x.rows();
  LstmBackward out{LstmParams::zeros(p.input_size(), p.hidden_size()), {}, {}, {}};
  out.d_inputs.resize(d_hidden.size());
  Matrix dh_next = Matrix::Zero(batch, hidden);
  Matrix dc_next = Matrix::Zero(batch, hidden);
  Matrix da(batch, 4 * hidden);
  for (std::size_t t = d_hidden.size(); t-- > 0;) {
    const auto& s = cache.steps[t];
    if (s.gates.size() == 0) throw ContractError("lstm_backward: incomplete forward cache");
    Matrix dh = d_hidden[t] + dh_next;
    for (Eigen::Index r = 0; r < batch; ++r) {
      const double* g = s.gates.row(r).data();
      double* d = da.row(r).data();
      for (Eigen::Index j = 0; j < hidden; ++j) {
        const double i_g = g[j], f_g = g[hidden + j], c_g = g[2 * hidden + j], o_g = g[3 * hidden + j];
        const double tc = s.tanh_c(r, j);
        const double dhv = dh(r, j);
        const double dc = dc_next(r, j) + dhv * o_g * (1.0 - tc * tc);
        d[j] = dc * c_g * i_g * (1.0 - i_g);
        d[hidden + j] = dc * s.c_prev(r, j) * f_g * (1.0 - f_g);
        d[2 * hidden + j] = dc * i_g * (1.0 - c_g * c_g);
        d[3 * hidden + j] = dhv * tc * o_g * (1.0 - o_g);
        dc_next(r, j) = dc * f_g;
      }
    }
    out.grads.w_in.noalias() += da.transpose() * s.x;
    out.grads.w_rec.noalias() += da.transpose() * s.h_prev;
    out.grads.bias += da.colwise().sum();
    out.d_inputs[t] = da * p.w_in;
    dh_next = da * p.w_rec;
  }
  out.d_h0 = std::move(dh_next);
  out.d_c0 = std::move(dc_next);
  return out;
}

// ---------------------------------------------------------------------------
// Softmax and cross-entropy

inline Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const double lse = m + std::log((logits.row(r).array() - m).unaryExpr([](double v) { return std::exp(v); }).sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

// Returns sum_b weight_b * -log p_b[target_b]; rows with weight 0 contribute
// nothing. If `d_logits` is given it receives weight_b * (p_b - onehot_b).
inline double softmax_cross_entropy(const Matrix& logits, std::span<const int> targets,
                                    std::span<const double> weights, Matrix* d_logits = nullptr) {
  const auto rows = static_cast<std::size_t>(logits.rows());
  if (targets.size() != rows || weights.size() != rows) {
    throw ContractError("softmax_cross_entropy: batch size mismatch");
  }
  Matrix logp = log_softmax_rows(logits);
  double loss = 0.0;
  if (d_logits != nullptr) d_logits->resize(logits.rows(), logits.cols());
  for (std::size_t b = 0; b < rows; ++b) {
    const auto r = static_cast<Eigen::Index>(b);
    const double w = weights[b];
    if (w == 0.0) {
      if (d_logits != nullptr) d_logits->row(r).setZero();
      continue;
    }
    loss -= w * logp(r, targets[b]);
    if (d_logits != nullptr) {
      d_logits->row(r) = w * logp.row(r).array().unaryExpr([](double v) { return std::exp(v); });
      (*d_logits)(r, targets[b]) -= w;
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Optimization

inline double gradient_norm(std::span<const NamedTensor> grads) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.value->squaredNorm();
  return std::sqrt(sq);
}

// Rescales gradients so the global L2 norm is at most `max_norm`. Returns the
// norm before clipping.
inline double clip_gradient_norm(std::span<const NamedTensor> grads, double max_norm) {
  const double norm = gradient_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& g : grads) *g.value *= scale;
  }
  return norm;
}

struct SgdMomentumConfig {
  double lr0 = 0.001;
  double momentum = 0.9;
  int max_epochs = 200;
};

// v <- mu v - lr(epoch) g;  p <- p + v;  lr(epoch) = lr0 (1 - epoch / max_epochs)
class SgdMomentum {
 public:
  explicit SgdMomentum(SgdMomentumConfig config) : config_(config) {}

  double learning_rate(int epoch) const {
    const double frac = 1.0 - static_cast<double>(epoch) / static_cast<double>(config_.max_epochs);
    return config_.lr0 * std::max(0.0, frac);
  }

  const std::vector<Matrix>& velocity() const { return velocity_; }

  void step(std::span<const NamedTensor> params, std::span<const NamedTensor> grads, int epoch) {
    if (params.size() != grads.size()) throw ContractError("SgdMomentum: parameter/gradient count mismatch");
    for (std::size_t k = 0; k < grads.size(); ++k) {
      if (grads[k].value->rows() != params[k].value->rows() || grads[k].value->cols() != params[k].value->cols()) {
        throw ContractError("SgdMomentum: shape mismatch for " + params[k].name);
      }
      if (!grads[k].value->allFinite()) throw NumericalError("non-finite gradient in " + grads[k].name);
    }
    if (velocity_.empty()) {
      for (const auto& p : params) velocity_.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
    }
    const double lr = learning_rate(epoch);
    for (std::size_t k = 0; k < params.size(); ++k) {
      velocity_[k] = config_.momentum * velocity_[k] - lr * *grads[k].value;
      *params[k].value += velocity_[k];
    }
  }

 private:
  SgdMomentumConfig config_;
  std::vector<Matrix> velocity_;
};

// ---------------------------------------------------------------------------
// Text tensor container:
//   chordlm-tensors 1 <count>
//   tensor <name> <rows> <cols>
//   <row-major values, 17 significant digits>

inline void save_tensors(std::ostream& out, std::span<const NamedTensor> tensors) {
  out.precision(17);
  out << "chordlm-tensors 1 " << tensors.size() << '\n';
  for (const auto& t : tensors) {
    out << "tensor " << t.name << ' ' << t.value->rows() << ' ' << t.value->cols() << '\n';
    for (Eigen::Index i = 0; i < t.value->size(); ++i) {
      out << t.value->data()[i] << (((i + 1) % t.value->cols() == 0) ? '\n' : ' ');
    }
  }
}

// Fills tensors in place; names and shapes must match the file.
inline void load_tensors(std::istream& in, std::span<const NamedTensor> tensors) {
  std::string magic;
  int version = 0;
  std::size_t count = 0;
  if (!(in >> magic >> version >> count) || magic != "chordlm-tensors" || version != 1) {
    throw DataError("not a chordlm-tensors v1 container");
  }
  if (count != tensors.size()) throw DataError("tensor count mismatch in checkpoint");
  for (const auto& t : tensors) {
    std::string tag, name;
    Eigen::Index rows = 0, cols = 0;
    if (!(in >> tag >> name >> rows >> cols) || tag != "tensor") throw DataError("malformed tensor header");
    if (name != t.name || rows != t.value->rows() || cols != t.value->cols()) {
      throw DataError("checkpoint tensor '" + name + "' does not match expected '" + t.name + "'");
    }
    for (Eigen::Index i = 0; i < t.value->size(); ++i) {
      if (!(in >> t.value->data()[i])) throw DataError("truncated tensor '" + name + "'");
    }
  }
}

}  // namespace chordlm::nn
