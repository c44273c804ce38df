#pragma once

// Drivers for the three experiments: frame-level sequence likelihoods,
// frame-level decoding with four temporal models, and chord-level language
// modelling with per-symbol traces. Each driver only reads the test split
// after every model has been trained.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "chordlm/acoustic.hpp"
#include "chordlm/config.hpp"
#include "chordlm/dataset.hpp"
#include "chordlm/decode.hpp"
#include "chordlm/eval.hpp"
#include "chordlm/markov.hpp"
#include "chordlm/rnn_lm.hpp"
#include "chordlm/synth.hpp"

namespace chordlm {

// Independent generator per pipeline stage, so that changing one stage's
// settings leaves the others' random streams untouched.
inline std::mt19937_64 stage_rng(std::uint64_t seed, std::string_view stage) {
  return std::mt19937_64(detail::splitmix64(seed ^ fnv1a64(stage)));
}

struct PreparedCorpus {
  std::vector<AnnotationTrack> train;  // excludes the validation songs
  std::vector<AnnotationTrack> valid;
  std::vector<AnnotationTrack> test;
  std::map<int, FeatureMatrix> features;  // by song id; empty unless requested
};

inline std::vector<AnnotationTrack> all_training(const PreparedCorpus& c) {
  auto out = c.train;
  out.insert(out.end(), c.valid.begin(), c.valid.end());
  return out;
}

inline FeatureMatrix load_song_features(const std::filesystem::path& dir, int song_id) {
  return load_features(dir / (std::to_string(song_id) + ".features"));
}

inline PreparedCorpus prepare_corpus(const ExperimentConfig& config, bool need_features) {
  std::vector<AnnotationTrack> tracks;
  PreparedCorpus out;
  if (config.corpus.source == "synth") {
    auto rng = stage_rng(config.seed, "corpus");
    SynthCorpus synth = synth_corpus(config.synth, rng, need_features);
    if (need_features) {
      for (std::size_t i = 0; i < synth.tracks.size(); ++i) {
        out.features.emplace(synth.tracks[i].song_id, std::move(synth.features[i]));
      }
    }
    tracks = std::move(synth.tracks);
  } else {
    tracks = load_corpus(config.corpus.path);
    if (need_features) {
      if (config.corpus.features_path.empty()) throw ConfigError("corpus.features_path is required");
      for (const auto& t : tracks) out.features.emplace(t.song_id, load_song_features(config.corpus.features_path, t.song_id));
    }
  }
  CorpusSplit split = split_corpus(std::move(tracks));
  auto [train, valid] = split_validation(split.train, config.validation_fraction);
  out.train = std::move(train);
  out.valid = std::move(valid);
  out.test = std::move(split.test);
  if (out.train.empty()) throw DataError("corpus has no training songs (ids < 1000)");
  if (out.test.empty()) throw DataError("corpus has no test songs (ids >= 1000)");
  return out;
}

inline std::vector<std::vector<ClassId>> frame_sequences(std::span<const AnnotationTrack> tracks) {
  std::vector<std::vector<ClassId>> out;
  for (const auto& t : tracks) out.push_back(sample_frames(t).classes);
  return out;
}

inline std::vector<std::vector<ClassId>> chord_sequences(std::span<const AnnotationTrack> tracks) {
  std::vector<std::vector<ClassId>> out;
  for (const auto& t : tracks) out.push_back(collapse(sample_frames(t)).classes);
  return out;
}

inline RnnTrainResult train_or_load_rnn(const ExperimentConfig& config,
                                        const std::vector<std::vector<ClassId>>& train,
                                        const std::vector<std::vector<ClassId>>& valid, std::string_view stage) {
  if (!config.rnn_checkpoint.empty()) return {RnnLm::load(std::filesystem::path(config.rnn_checkpoint)), 0, {}};
  auto rng = stage_rng(config.seed, stage);
  return train_rnn_lm(train, valid, config.rnn, rng);
}

// ---------------------------------------------------------------------------
// CSV helpers

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  return out;
}

inline void write_history_csv(const std::filesystem::path& path, const RnnTrainResult& r) {
  auto out = open_output(path);
  out << "epoch,train_loss,valid_logprob,learning_rate\n";
  for (const auto& h : r.history) {
    out << h.epoch << ',' << h.train_loss << ',' << h.valid_logprob << ',' << h.learning_rate << '\n';
  }
}

inline void write_trace_csv(const std::filesystem::path& path, std::span<const ClassId> seq,
                            std::span<const double> logprobs) {
  auto out = open_output(path);
  out << "index,symbol,logprob\n";
  for (std::size_t k = 0; k < seq.size(); ++k) out << k << ',' << class_name(seq[k]) << ',' << logprobs[k] << '\n';
}

inline Json report_json(const LogProbReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  return {{"L", num(r.overall)},   {"L_c", num(r.change)},      {"L_s", num(r.stay)},
          {"L_first", num(r.first)}, {"n_total", r.n_total},   {"n_change", r.n_change},
          {"n_stay", r.n_stay},      {"n_first", r.n_first}};
}

// ---------------------------------------------------------------------------
// Experiment 1: frame-level likelihoods

struct Exp1Result {
  LogProbReport markov;
  LogProbReport rnn;
  MarkovModel markov_model;
  RnnTrainResult rnn_training;
};

inline Exp1Result run_exp1(const ExperimentConfig& config) {
  config.validate();
  const PreparedCorpus corpus = prepare_corpus(config, false);
  Exp1Result r;
  r.markov_model = fit_markov(frame_sequences(all_training(corpus)), config.markov_alpha);
  r.rnn_training = train_or_load_rnn(config, frame_sequences(corpus.train), frame_sequences(corpus.valid), "exp1-rnn");
  const auto test = frame_sequences(corpus.test);
  r.markov = logprob_report(r.markov_model, test);
  r.rnn = logprob_report(r.rnn_training.model, test);
  return r;
}

inline void write_logprob_csv(const std::filesystem::path& path,
                              std::span<const std::pair<std::string, LogProbReport>> rows) {
  auto out = open_output(path);
  out << "model,L,L_c,L_s\n";
  for (const auto& [name, r] : rows) out << name << ',' << r.overall << ',' << r.change << ',' << r.stay << '\n';
}

inline std::vector<std::string> write_exp1(const Exp1Result& r, const std::filesystem::path& dir) {
  const std::vector<std::pair<std::string, LogProbReport>> rows{{"MC", r.markov}, {"RNN", r.rnn}};
  write_logprob_csv(dir / "exp1.csv", rows);
  r.markov_model.save(dir / "markov.txt");
  r.rnn_training.model.save(dir / "rnn.ckpt");
  write_history_csv(dir / "rnn_history.csv", r.rnn_training);
  return {"exp1.csv", "markov.txt", "rnn.ckpt", "rnn_history.csv"};
}

inline Json exp1_json(const Exp1Result& r) {
  return {{"markov", report_json(r.markov)}, {"rnn", report_json(r.rnn)}, {"rnn_best_epoch", r.rnn_training.best_epoch}};
}

// ---------------------------------------------------------------------------
// Experiment 2: decoding

inline constexpr std::array<const char*, 4> kTemporalModels = {"None", "MV", "HMM", "RNN"};

struct Exp2Row {
  std::string acoustic;
  double frame_accuracy = 0.0;  // test frames, before any temporal model
  std::array<WcsrReport, 4> wcsr;
};

struct Exp2Result {
  std::vector<Exp2Row> rows;
  MarkovModel markov_model;
  RnnTrainResult rnn_training;
};

// Features and frame labels of `tracks`, truncated to the shorter of the two per song.
inline std::pair<FeatureMatrix, std::vector<int>> stack_frames(std::span<const AnnotationTrack> tracks,
                                                               const std::map<int, FeatureMatrix>& features) {
  std::vector<std::pair<const FeatureMatrix*, std::vector<int>>> parts;
  Eigen::Index rows = 0, dim = -1;
  for (const auto& t : tracks) {
    const FeatureMatrix& f = features.at(t.song_id);
    if (dim >= 0 && f.cols() != dim) throw DataError("feature dimension differs between songs");
    dim = f.cols();
    auto labels = sample_frames(t).classes;
    labels.resize(std::min(labels.size(), static_cast<std::size_t>(f.rows())));
    rows += static_cast<Eigen::Index>(labels.size());
    parts.emplace_back(&f, std::move(labels));
  }
  FeatureMatrix x(rows, std::max<Eigen::Index>(dim, 0));
  std::vector<int> y;
  y.reserve(static_cast<std::size_t>(rows));
  Eigen::Index r = 0;
  for (auto& [f, labels] : parts) {
    const auto n = static_cast<Eigen::Index>(labels.size());
    x.middleRows(r, n) = f->topRows(n);
    r += n;
    y.insert(y.end(), labels.begin(), labels.end());
  }
  return {std::move(x), std::move(y)};
}

inline Exp2Result run_exp2(const ExperimentConfig& config) {
  config.validate();
  const PreparedCorpus corpus = prepare_corpus(config, true);
  Exp2Result result;
  const auto training = all_training(corpus);
  const auto train_frames = frame_sequences(training);
  result.markov_model = fit_markov(train_frames, config.markov_alpha);
  result.rnn_training =
      train_or_load_rnn(config, frame_sequences(corpus.train), frame_sequences(corpus.valid), "exp2-rnn");
  DecoderConfig decoder = config.decoder;
  if (decoder.prior_division) decoder.class_priors = class_priors(train_frames);

  auto [x, y] = stack_frames(corpus.train, corpus.features);
  auto [vx, vy] = stack_frames(corpus.valid, corpus.features);

  std::vector<SongIntervals> reference;
  for (const auto& t : corpus.test) reference.push_back(intervals_from_track(t));

  for (const auto& kind_name : config.acoustic_kinds) {
    const AcousticKind kind = parse_acoustic_kind(kind_name);
    auto rng = stage_rng(config.seed, "exp2-acoustic-" + kind_name);
    const auto trained = train_classifier(x, y, vx, vy, kind, config.acoustic, rng);
    Exp2Row row;
    row.acoustic = to_string(kind);
    std::array<std::vector<SongIntervals>, 4> predicted;
    std::size_t hits = 0, frames = 0;
    for (const auto& t : corpus.test) {
      const PosteriorMatrix post = trained.model.predict_posteriors(corpus.features.at(t.song_id));
      const auto argmax = argmax_frames(post);
      const auto truth = sample_frames(t).classes;
      for (std::size_t k = 0; k < std::min(truth.size(), argmax.size()); ++k) hits += truth[k] == argmax[k];
      frames += truth.size();
      predicted[0].push_back(intervals_from_frames(t.song_id, argmax));
      predicted[1].push_back(intervals_from_frames(t.song_id, majority_vote(post, decoder).classes));
      predicted[2].push_back(intervals_from_frames(t.song_id, viterbi(post, result.markov_model, decoder).classes));
      predicted[3].push_back(
          intervals_from_frames(t.song_id, hashed_beam_search(post, result.rnn_training.model, decoder).classes));
    }
    row.frame_accuracy = frames ? static_cast<double>(hits) / static_cast<double>(frames) : 0.0;
    for (std::size_t m = 0; m < 4; ++m) row.wcsr[m] = wcsr(reference, predicted[m]);
    result.rows.push_back(std::move(row));
  }
  return result;
}

inline std::vector<std::string> write_exp2(const Exp2Result& r, const std::filesystem::path& dir) {
  {
    auto out = open_output(dir / "exp2.csv");
    out << "acoustic";
    for (const char* m : kTemporalModels) out << ',' << m;
    out << '\n';
    for (const auto& row : r.rows) {
      out << row.acoustic;
      for (const auto& w : row.wcsr) out << ',' << 100.0 * w.recall;
      out << '\n';
    }
  }
  r.markov_model.save(dir / "markov.txt");
  r.rnn_training.model.save(dir / "rnn.ckpt");
  write_history_csv(dir / "rnn_history.csv", r.rnn_training);
  return {"exp2.csv", "markov.txt", "rnn.ckpt", "rnn_history.csv"};
}

inline Json exp2_json(const Exp2Result& r) {
  Json rows = Json::array();
  for (const auto& row : r.rows) {
    Json j{{"acoustic", row.acoustic}, {"frame_accuracy", row.frame_accuracy}};
    for (std::size_t m = 0; m < 4; ++m) j[kTemporalModels[m]] = 100.0 * row.wcsr[m].recall;
    rows.push_back(j);
  }
  return {{"wcsr", rows}};
}

// ---------------------------------------------------------------------------
// Experiment 3: chord-level language models

struct Trace {
  int song_id = 0;
  std::vector<ClassId> symbols;
  std::vector<double> markov;
  std::vector<double> rnn;
};

struct Exp3Result {
  LogProbReport markov;
  LogProbReport rnn;
  // Synthetic corpora only: the same first-order estimator fitted to a large
  // independent sample of the source, approximating the best any first-order
  // chain can do on it.
  std::optional<LogProbReport> markov_bound;
  MarkovModel markov_model;
  RnnTrainResult rnn_training;
  std::vector<Trace> traces;
};

// Chord sequences of kBoundSongs fresh songs drawn from the configured source.
inline constexpr int kBoundSongs = 20000;

inline std::vector<std::vector<ClassId>> bound_sample(const ExperimentConfig& config) {
  auto rng = stage_rng(config.seed, "exp3-bound");
  SynthSpec spec = config.synth;
  spec.num_test = 0;
  std::vector<std::vector<ClassId>> out;
  for (int done = 0; done < kBoundSongs; done += spec.num_train) {
    spec.num_train = std::min(kTestIdThreshold - 1, kBoundSongs - done);
    auto part = chord_sequences(synth_corpus(spec, rng, false).tracks);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

inline Exp3Result run_exp3(const ExperimentConfig& config) {
  config.validate();
  const PreparedCorpus corpus = prepare_corpus(config, false);
  Exp3Result r;
  r.markov_model = fit_markov(chord_sequences(all_training(corpus)), config.markov_alpha);
  r.rnn_training = train_or_load_rnn(config, chord_sequences(corpus.train), chord_sequences(corpus.valid), "exp3-rnn");
  const auto test = chord_sequences(corpus.test);
  r.markov = logprob_report(r.markov_model, test);
  r.rnn = logprob_report(r.rnn_training.model, test);
  if (config.corpus.source == "synth") {
    r.markov_bound = logprob_report(fit_markov(bound_sample(config), config.markov_alpha), test);
  }
  for (std::size_t i = 0; i < test.size() && static_cast<int>(i) < config.trace_songs; ++i) {
    r.traces.push_back({corpus.test[i].song_id, test[i], per_symbol_logprobs(r.markov_model, std::span<const ClassId>(test[i])),
                        r.rnn_training.model.per_symbol_logprobs(test[i])});
  }
  return r;
}

inline std::vector<std::string> write_exp3(const Exp3Result& r, const std::filesystem::path& dir) {
  std::vector<std::pair<std::string, LogProbReport>> rows{{"MC", r.markov}, {"RNN", r.rnn}};
  if (r.markov_bound) rows.emplace_back("MC-bound", *r.markov_bound);
  write_logprob_csv(dir / "exp3.csv", rows);
  r.markov_model.save(dir / "markov.txt");
  r.rnn_training.model.save(dir / "rnn.ckpt");
  write_history_csv(dir / "rnn_history.csv", r.rnn_training);
  std::vector<std::string> files{"exp3.csv", "markov.txt", "rnn.ckpt", "rnn_history.csv"};
  for (const auto& t : r.traces) {
    const std::string stem = "traces/" + std::to_string(t.song_id);
    write_trace_csv(dir / (stem + "_mc.csv"), t.symbols, t.markov);
    write_trace_csv(dir / (stem + "_rnn.csv"), t.symbols, t.rnn);
    files.push_back(stem + "_mc.csv");
    files.push_back(stem + "_rnn.csv");
  }
  return files;
}

inline Json exp3_json(const Exp3Result& r) {
  return {{"markov", report_json(r.markov)},
          {"rnn", report_json(r.rnn)},
          {"markov_bound", r.markov_bound ? report_json(*r.markov_bound) : Json(nullptr)},
          {"rnn_best_epoch", r.rnn_training.best_epoch}};
}

}  // namespace chordlm
