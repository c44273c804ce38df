#pragma once

// Frame-level chord classifiers (logistic regression and a ReLU MLP) that
// produce posterior matrices, plus the posterior and feature file formats.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "chordlm/chord.hpp"
#include "chordlm/dataset.hpp"
#include "chordlm/errors.hpp"
#include "chordlm/neural.hpp"

namespace chordlm {

using FeatureMatrix = nn::Matrix;  // frames x dim

// Frames x classes; each row a probability distribution.
struct PosteriorMatrix {
  nn::Matrix probs;

  std::size_t frames() const { return static_cast<std::size_t>(probs.rows()); }
  int classes() const { return static_cast<int>(probs.cols()); }
  double operator()(std::size_t frame, int cls) const { return probs(static_cast<Eigen::Index>(frame), cls); }

  // Throws DataError if any entry is negative or a row sum is off by more than tol.
  void validate(double tol = 1e-9) const {
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      if ((probs.row(r).array() < 0.0).any() || !probs.row(r).allFinite()) {
        throw DataError("posterior row " + std::to_string(r) + " has a negative or non-finite entry");
      }
      const double sum = probs.row(r).sum();
      if (std::abs(sum - 1.0) > tol) {
        throw DataError("posterior row " + std::to_string(r) + " is not normalized (sum " + std::to_string(sum) + ")");
      }
    }
  }
};

inline std::vector<ClassId> argmax_frames(const PosteriorMatrix& post) {
  std::vector<ClassId> out(post.frames());
  for (std::size_t t = 0; t < post.frames(); ++t) {
    Eigen::Index best = 0;
    post.probs.row(static_cast<Eigen::Index>(t)).maxCoeff(&best);
    out[t] = static_cast<ClassId>(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Classifiers

enum class AcousticKind { LogReg, Mlp };

inline std::string to_string(AcousticKind k) { return k == AcousticKind::LogReg ? "logreg" : "mlp"; }
inline AcousticKind parse_acoustic_kind(std::string_view s) {
  if (s == "logreg") return AcousticKind::LogReg;
  if (s == "mlp" || s == "dnn") return AcousticKind::Mlp;
  throw DataError("unknown acoustic model kind '" + std::string(s) + "'");
}

struct AcousticConfig {
  std::vector<int> mlp_hidden = {256, 256, 256};
  int max_epochs = 30;
  double lr0 = 0.05;
  double momentum = 0.9;
  int batch_size = 64;
  int patience = 5;
  double clip_norm = 5.0;
};

class AcousticModel {
 public:
  AcousticModel() = default;
  AcousticModel(AcousticKind kind, std::vector<nn::DenseParams> layers) : kind_(kind), layers_(std::move(layers)) {
    if (layers_.empty()) throw ContractError("AcousticModel: no layers");
    for (std::size_t l = 1; l < layers_.size(); ++l) {
      if (layers_[l].input_size() != layers_[l - 1].output_size()) {
        throw ContractError("AcousticModel: layer sizes do not chain");
      }
    }
  }

  template <class Rng>
  static AcousticModel initialize(AcousticKind kind, int input_dim, const AcousticConfig& config, Rng& rng,
                                  int classes = kNumClasses) {
    std::vector<nn::DenseParams> layers;
    int in = input_dim;
    if (kind == AcousticKind::Mlp) {
      for (int h : config.mlp_hidden) {
        layers.push_back(nn::DenseParams::glorot(in, h, rng));
        in = h;
      }
    }
    layers.push_back(nn::DenseParams::glorot(in, classes, rng));
    return AcousticModel(kind, std::move(layers));
  }

  static AcousticModel zeros(AcousticKind kind, int input_dim, const std::vector<int>& hidden,
                             int classes = kNumClasses) {
    std::vector<nn::DenseParams> layers;
    int in = input_dim;
    if (kind == AcousticKind::Mlp) {
      for (int h : hidden) {
        layers.push_back(nn::DenseParams::zeros(in, h));
        in = h;
      }
    }
    layers.push_back(nn::DenseParams::zeros(in, classes));
    return AcousticModel(kind, std::move(layers));
  }

  AcousticKind kind() const noexcept { return kind_; }
  int input_dim() const { return layers_.front().input_size(); }
  int num_classes() const { return layers_.back().output_size(); }
  const std::vector<nn::DenseParams>& layers() const noexcept { return layers_; }

  std::vector<nn::NamedTensor> tensors() {
    std::vector<nn::NamedTensor> out;
    for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].append_tensors("dense" + std::to_string(l), out);
    return out;
  }

  nn::Matrix logits(const FeatureMatrix& x) const {
    if (x.cols() != input_dim()) {
      throw ContractError("acoustic model expects dim " + std::to_string(input_dim()) + ", got " +
                          std::to_string(x.cols()));
    }
    nn::Matrix a = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      a = nn::dense_forward(layers_[l], a);
      if (l + 1 < layers_.size()) a = a.cwiseMax(0.0);
    }
    return a;
  }

  PosteriorMatrix predict_posteriors(const FeatureMatrix& x) const {
    return {nn::log_softmax_rows(logits(x)).array().exp().matrix()};
  }

  // Mean cross-entropy over the rows; adds gradients when `grads` is non-null.
  double loss(const FeatureMatrix& x, std::span<const int> labels, AcousticModel* grads = nullptr) const {
    std::vector<nn::Matrix> acts{x};
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      nn::Matrix a = nn::dense_forward(layers_[l], acts.back());
      if (l + 1 < layers_.size()) a = a.cwiseMax(0.0);
      acts.push_back(std::move(a));
    }
    std::vector<double> weights(labels.size(), 1.0 / static_cast<double>(labels.size()));
    nn::Matrix d;
    const double value = nn::softmax_cross_entropy(acts.back(), labels, weights, grads ? &d : nullptr);
    if (grads != nullptr) {
      for (std::size_t l = layers_.size(); l-- > 0;) {
        if (l + 1 < layers_.size()) d = d.cwiseProduct((acts[l + 1].array() > 0.0).cast<double>().matrix());
        d = nn::dense_backward(layers_[l], acts[l], d, grads->layers_[l]);
      }
    }
    return value;
  }

  void save(std::ostream& out) const {
    out << "chordlm-acoustic 1\n" << "kind " << to_string(kind_) << " layers " << layers_.size();
    for (const auto& l : layers_) out << ' ' << l.input_size() << 'x' << l.output_size();
    out << '\n';
    nn::save_tensors(out, const_cast<AcousticModel*>(this)->tensors());
  }

  static AcousticModel load(std::istream& in) {
    std::string magic, k1, kind, k2;
    int version = 0;
    std::size_t count = 0;
    if (!(in >> magic >> version) || magic != "chordlm-acoustic" || version != 1) {
      throw DataError("not a chordlm-acoustic v1 model");
    }
    if (!(in >> k1 >> kind >> k2 >> count) || k1 != "kind" || k2 != "layers" || count == 0) {
      throw DataError("malformed acoustic model header");
    }
    std::vector<nn::DenseParams> layers;
    for (std::size_t l = 0; l < count; ++l) {
      std::string shape;
      in >> shape;
      auto x = shape.find('x');
      if (x == std::string::npos) throw DataError("malformed layer shape '" + shape + "'");
      layers.push_back(nn::DenseParams::zeros(std::stoi(shape.substr(0, x)), std::stoi(shape.substr(x + 1))));
    }
    AcousticModel model(parse_acoustic_kind(kind), std::move(layers));
    nn::load_tensors(in, model.tensors());
    return model;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    save(out);
  }
  static AcousticModel load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return load(in);
  }

 private:
  AcousticKind kind_ = AcousticKind::LogReg;
  std::vector<nn::DenseParams> layers_;
};

inline double frame_accuracy(const AcousticModel& model, const FeatureMatrix& x, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  auto pred = argmax_frames(model.predict_posteriors(x));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

struct AcousticTrainResult {
  AcousticModel model;
  int best_epoch = 0;
  std::vector<double> valid_loss;  // index 0 = before training
};

// Minibatch SGD with momentum and linear decay; keeps the checkpoint with the
// lowest validation loss (the training data stands in when no validation
// frames are given).
template <class Rng>
AcousticTrainResult train_classifier(const FeatureMatrix& features, std::span<const int> labels,
                                     const FeatureMatrix& valid_features, std::span<const int> valid_labels,
                                     AcousticKind kind, const AcousticConfig& config, Rng& rng,
                                     int classes = kNumClasses) {
  if (features.rows() == 0 || static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw ContractError("train_classifier: features and labels must be non-empty and aligned");
  }
  if (static_cast<std::size_t>(valid_features.rows()) != valid_labels.size()) {
    throw ContractError("train_classifier: validation features and labels misaligned");
  }
  for (int y : labels) {
    if (y < 0 || y >= classes) throw ContractError("train_classifier: label out of range");
  }
  const bool has_valid = valid_features.rows() > 0;
  const FeatureMatrix& sel_x = has_valid ? valid_features : features;
  std::span<const int> sel_y = has_valid ? valid_labels : labels;

  AcousticModel model = AcousticModel::initialize(kind, static_cast<int>(features.cols()), config, rng, classes);
  AcousticTrainResult result{model, 0, {model.loss(sel_x, sel_y)}};
  double best = result.valid_loss.front();

  nn::SgdMomentum optimizer({config.lr0, config.momentum, config.max_epochs});
  AcousticModel grads = AcousticModel::zeros(kind, static_cast<int>(features.cols()), config.mlp_hidden, classes);
  auto grad_tensors = grads.tensors();
  auto param_tensors = model.tensors();

  std::vector<Eigen::Index> order(static_cast<std::size_t>(features.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  int since_best = 0;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    int batch_index = 0;
    for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(config.batch_size)) {
      const auto count = std::min(order.size() - first, static_cast<std::size_t>(config.batch_size));
      FeatureMatrix bx(static_cast<Eigen::Index>(count), features.cols());
      std::vector<int> by(count);
      for (std::size_t i = 0; i < count; ++i) {
        bx.row(static_cast<Eigen::Index>(i)) = features.row(order[first + i]);
        by[i] = labels[static_cast<std::size_t>(order[first + i])];
      }
      for (auto& g : grad_tensors) g.value->setZero();
      const double loss = model.loss(bx, by, &grads);
      if (!std::isfinite(loss)) {
        throw TrainingDiverged("non-finite acoustic loss at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_index),
                               epoch, batch_index);
      }
      nn::clip_gradient_norm(grad_tensors, config.clip_norm);
      try {
        optimizer.step(param_tensors, grad_tensors, epoch);
      } catch (const NumericalError& e) {
        throw TrainingDiverged(e.what(), epoch, batch_index);
      }
      ++batch_index;
    }
    const double v = model.loss(sel_x, sel_y);
    result.valid_loss.push_back(v);
    if (v < best) {
      best = v;
      result.model = model;
      result.best_epoch = epoch + 1;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Text matrix files
//   posteriors: "frames=<n> classes=25 fps=10" then one space-separated row per frame
//   features:   "frames=<n> dim=<d> fps=10"

namespace detail {

inline std::map<std::string, std::string> parse_header(const std::string& line, const std::string& where) {
  std::map<std::string, std::string> kv;
  for (const auto& tok : split_ws(line)) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) throw DataError(where + ": malformed header token '" + tok + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

inline long header_int(const std::map<std::string, std::string>& kv, const std::string& key, const std::string& where) {
  auto it = kv.find(key);
  if (it == kv.end()) throw DataError(where + ": header lacks '" + key + "'");
  long v = 0;
  auto [ptr, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
  if (ec != std::errc() || ptr != it->second.data() + it->second.size() || v < 0) {
    throw DataError(where + ": bad header value " + key + "=" + it->second);
  }
  return v;
}

inline nn::Matrix read_rows(std::istream& in, long frames, long cols, const std::string& where) {
  nn::Matrix m(frames, cols);
  std::string line;
  for (long r = 0; r < frames; ++r) {
    if (!std::getline(in, line)) throw DataError(where + ": expected " + std::to_string(frames) + " rows");
    auto tokens = split_ws(line);
    if (static_cast<long>(tokens.size()) != cols) {
      throw DataError(where + ": row " + std::to_string(r) + " has " + std::to_string(tokens.size()) +
                      " columns, expected " + std::to_string(cols));
    }
    for (long c = 0; c < cols; ++c) m(r, c) = parse_double(tokens[static_cast<std::size_t>(c)], where);
  }
  return m;
}

inline void write_rows(std::ostream& out, const nn::Matrix& m) {
  out.precision(17);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? " " : "") << m(r, c);
    out << '\n';
  }
}

}  // namespace detail

inline void save_posteriors(const std::filesystem::path& path, const PosteriorMatrix& post) {
  if (post.classes() != kNumClasses) throw ContractError("posterior files hold 25 classes");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "frames=" << post.frames() << " classes=" << kNumClasses << " fps=10\n";
  detail::write_rows(out, post.probs);
}

inline PosteriorMatrix load_posteriors(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  const std::string where = path.string();
  std::string header;
  if (!std::getline(in, header)) throw DataError(where + ": missing header");
  auto kv = detail::parse_header(header, where);
  const long frames = detail::header_int(kv, "frames", where);
  const long classes = detail::header_int(kv, "classes", where);
  if (classes != kNumClasses) throw DataError(where + ": class count " + std::to_string(classes) + " != 25");
  if (detail::header_int(kv, "fps", where) != 10) throw DataError(where + ": only fps=10 is supported");
  PosteriorMatrix post{detail::read_rows(in, frames, classes, where)};
  try {
    post.validate(1e-6);
  } catch (const DataError& e) {
    throw DataError(where + ": " + e.what());
  }
  return post;
}

inline void save_features(const std::filesystem::path& path, const FeatureMatrix& features) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "frames=" << features.rows() << " dim=" << features.cols() << " fps=10\n";
  detail::write_rows(out, features);
}

inline FeatureMatrix load_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  const std::string where = path.string();
  std::string header;
  if (!std::getline(in, header)) throw DataError(where + ": missing header");
  auto kv = detail::parse_header(header, where);
  const long frames = detail::header_int(kv, "frames", where);
  const long dim = detail::header_int(kv, "dim", where);
  if (dim == 0) throw DataError(where + ": dim must be positive");
  if (detail::header_int(kv, "fps", where) != 10) throw DataError(where + ": only fps=10 is supported");
  return detail::read_rows(in, frames, dim, where);
}

}  // namespace chordlm
