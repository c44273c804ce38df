#pragma once

// Experiment configuration as strict JSON (unknown keys are errors), the
// published-hyperparameter preset, and the run manifest written next to every output.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chordlm/acoustic.hpp"
#include "chordlm/decode.hpp"
#include "chordlm/errors.hpp"
#include "chordlm/rnn_lm.hpp"
#include "chordlm/synth.hpp"

namespace chordlm {

inline constexpr const char* kVersion = "0.1.0";

using Json = nlohmann::json;

struct CorpusConfig {
  std::string source = "synth";  // "synth" or "lab"
  std::string path;              // directory of <id>.lab files (+ metadata.tsv)
  std::string features_path;     // directory of <id>.features files
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "chordlm-out";
  CorpusConfig corpus;
  SynthSpec synth;
  double markov_alpha = 1.0;
  RnnLmConfig rnn;
  std::string rnn_checkpoint;  // load instead of training when set
  AcousticConfig acoustic;
  std::vector<std::string> acoustic_kinds = {"logreg", "mlp"};
  DecoderConfig decoder;
  int trace_songs = 3;
  double validation_fraction = 0.1;

  // Desk-scale defaults: the architecture is unchanged, the schedule is
  // shortened and the initial learning rate raised so that runs finish in
  // minutes on one core.
  static ExperimentConfig desk_defaults() {
    ExperimentConfig c;
    c.rnn.lr0 = 0.5;
    c.rnn.max_epochs = 30;
    c.rnn.patience = 5;
    return c;
  }

  // Pins the published hyperparameters; unstated ones keep their defaults.
  void apply_paper_defaults() {
    const RnnLmConfig published_rnn;
    rnn.num_layers = published_rnn.num_layers;
    rnn.hidden = published_rnn.hidden;
    rnn.skip_connections = published_rnn.skip_connections;
    rnn.seq_len = published_rnn.seq_len;
    rnn.max_epochs = published_rnn.max_epochs;
    rnn.lr0 = published_rnn.lr0;
    rnn.augment = published_rnn.augment;
    acoustic.mlp_hidden = {256, 256, 256};
    const DecoderConfig published_dec;
    decoder.beam_width = published_dec.beam_width;
    decoder.hash_len = published_dec.hash_len;
    decoder.bin_cap = published_dec.bin_cap;
    decoder.mv_window_s = published_dec.mv_window_s;
  }

  void validate() const {
    if (corpus.source != "synth" && corpus.source != "lab") {
      throw ConfigError("corpus.source must be \"synth\" or \"lab\"");
    }
    if (corpus.source == "lab" && corpus.path.empty()) throw ConfigError("corpus.path is required for lab corpora");
    if (!(markov_alpha >= 0.0)) throw ConfigError("markov.alpha must be >= 0");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
      throw ConfigError("validation_fraction must be in [0, 1)");
    }
    if (trace_songs < 0) throw ConfigError("trace_songs must be >= 0");
    for (const auto& k : acoustic_kinds) {
      try {
        parse_acoustic_kind(k);
      } catch (const DataError& e) {
        throw ConfigError(e.what());
      }
    }
    if (acoustic.max_epochs <= 0 || acoustic.batch_size <= 0 || acoustic.patience <= 0 || !(acoustic.lr0 > 0.0)) {
      throw ConfigError("acoustic hyperparameters must be positive");
    }
    try {
      rnn.validate();
      decoder.validate(kNumClasses);
      synth.validate();
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace detail {

// Reads keys from a JSON object, remembering which ones were consumed.
class StrictObject {
 public:
  StrictObject(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const Json::exception&) {
      throw ConfigError(path_ + "." + key + " has the wrong type");
    }
  }

  const Json* child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown configuration key " + where() + "." + it.key());
    }
  }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_; }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline Json to_json(const ExperimentConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["corpus"] = {{"source", c.corpus.source}, {"path", c.corpus.path}, {"features_path", c.corpus.features_path}};
  j["synth"] = {{"num_train", c.synth.num_train},
                {"num_test", c.synth.num_test},
                {"min_frames", c.synth.min_frames},
                {"max_frames", c.synth.max_frames},
                {"min_chords", c.synth.min_chords},
                {"max_chords", c.synth.max_chords},
                {"self_transition", c.synth.self_transition},
                {"min_chord_frames", c.synth.min_chord_frames},
                {"noise_sigma", c.synth.noise_sigma},
                {"progression", to_string(c.synth.progression)},
                {"grammar_noise", c.synth.grammar_noise},
                {"no_chord_edges", c.synth.no_chord_edges}};
  j["markov"] = {{"alpha", c.markov_alpha}};
  j["rnn"] = {{"num_layers", c.rnn.num_layers}, {"hidden", c.rnn.hidden},
              {"skip_connections", c.rnn.skip_connections}, {"seq_len", c.rnn.seq_len},
              {"max_epochs", c.rnn.max_epochs}, {"lr0", c.rnn.lr0},
              {"momentum", c.rnn.momentum}, {"batch_size", c.rnn.batch_size},
              {"patience", c.rnn.patience}, {"clip_norm", c.rnn.clip_norm},
              {"augment", c.rnn.augment}, {"checkpoint", c.rnn_checkpoint}};
  j["acoustic"] = {{"kinds", c.acoustic_kinds}, {"mlp_hidden", c.acoustic.mlp_hidden},
                   {"max_epochs", c.acoustic.max_epochs}, {"lr0", c.acoustic.lr0},
                   {"momentum", c.acoustic.momentum}, {"batch_size", c.acoustic.batch_size},
                   {"patience", c.acoustic.patience}, {"clip_norm", c.acoustic.clip_norm}};
  j["decoder"] = {{"beam_width", c.decoder.beam_width}, {"hash_len", c.decoder.hash_len},
                  {"bin_cap", c.decoder.bin_cap}, {"mv_window_s", c.decoder.mv_window_s},
                  {"lm_weight", c.decoder.lm_weight}, {"prior_division", c.decoder.prior_division}};
  j["trace_songs"] = c.trace_songs;
  j["validation_fraction"] = c.validation_fraction;
  return j;
}

// Overlays `j` onto `c`. Unknown keys and wrong types raise ConfigError.
inline void merge_json(const Json& j, ExperimentConfig& c) {
  detail::StrictObject root(j, "");
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);
  root.get("trace_songs", c.trace_songs);
  root.get("validation_fraction", c.validation_fraction);
  if (const Json* s = root.child("corpus")) {
    detail::StrictObject o(*s, "corpus");
    o.get("source", c.corpus.source);
    o.get("path", c.corpus.path);
    o.get("features_path", c.corpus.features_path);
    o.finish();
  }
  if (const Json* s = root.child("synth")) {
    detail::StrictObject o(*s, "synth");
    o.get("num_train", c.synth.num_train);
    o.get("num_test", c.synth.num_test);
    o.get("min_frames", c.synth.min_frames);
    o.get("max_frames", c.synth.max_frames);
    o.get("min_chords", c.synth.min_chords);
    o.get("max_chords", c.synth.max_chords);
    o.get("self_transition", c.synth.self_transition);
    o.get("min_chord_frames", c.synth.min_chord_frames);
    o.get("noise_sigma", c.synth.noise_sigma);
    std::string progression = to_string(c.synth.progression);
    o.get("progression", progression);
    try {
      c.synth.progression = parse_progression(progression);
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
    o.get("grammar_noise", c.synth.grammar_noise);
    o.get("no_chord_edges", c.synth.no_chord_edges);
    o.finish();
  }
  if (const Json* s = root.child("markov")) {
    detail::StrictObject o(*s, "markov");
    o.get("alpha", c.markov_alpha);
    o.finish();
  }
  if (const Json* s = root.child("rnn")) {
    detail::StrictObject o(*s, "rnn");
    o.get("num_layers", c.rnn.num_layers);
    o.get("hidden", c.rnn.hidden);
    o.get("skip_connections", c.rnn.skip_connections);
    o.get("seq_len", c.rnn.seq_len);
    o.get("max_epochs", c.rnn.max_epochs);
    o.get("lr0", c.rnn.lr0);
    o.get("momentum", c.rnn.momentum);
    o.get("batch_size", c.rnn.batch_size);
    o.get("patience", c.rnn.patience);
    o.get("clip_norm", c.rnn.clip_norm);
    o.get("augment", c.rnn.augment);
    o.get("checkpoint", c.rnn_checkpoint);
    o.finish();
  }
  if (const Json* s = root.child("acoustic")) {
    detail::StrictObject o(*s, "acoustic");
    o.get("kinds", c.acoustic_kinds);
    o.get("mlp_hidden", c.acoustic.mlp_hidden);
    o.get("max_epochs", c.acoustic.max_epochs);
    o.get("lr0", c.acoustic.lr0);
    o.get("momentum", c.acoustic.momentum);
    o.get("batch_size", c.acoustic.batch_size);
    o.get("patience", c.acoustic.patience);
    o.get("clip_norm", c.acoustic.clip_norm);
    o.finish();
  }
  if (const Json* s = root.child("decoder")) {
    detail::StrictObject o(*s, "decoder");
    o.get("beam_width", c.decoder.beam_width);
    o.get("hash_len", c.decoder.hash_len);
    o.get("bin_cap", c.decoder.bin_cap);
    o.get("mv_window_s", c.decoder.mv_window_s);
    o.get("lm_weight", c.decoder.lm_weight);
    o.get("prior_division", c.decoder.prior_division);
    o.finish();
  }
  root.finish();
}

inline Json parse_json_text(const std::string& text, const std::string& where) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_json_text(buf.str(), path.string());
}

// Accepts either a configuration object or a manifest written by an earlier
// run (its "config" member is used).
inline void merge_config_file(const std::filesystem::path& path, ExperimentConfig& c) {
  Json j = read_json_file(path);
  if (j.is_object() && j.value("kind", "") == "chordlm-manifest") {
    if (!j.contains("config")) throw ConfigError(path.string() + ": manifest lacks a config");
    j = j["config"];
  }
  merge_json(j, c);
}

// ---------------------------------------------------------------------------
// Manifest

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

// Hash of every setting that can change results; the output directory is excluded.
inline std::string config_hash(const ExperimentConfig& c) {
  Json j = to_json(c);
  j.erase("output_dir");
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << fnv1a64(j.dump());
  return s.str();
}

struct Manifest {
  Manifest(std::string verb_name, ExperimentConfig resolved)
      : verb(std::move(verb_name)), config(std::move(resolved)) {}

  std::string verb;
  ExperimentConfig config;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  Json results = Json::object();

  Json to_json() const {
    Json j;
    j["kind"] = "chordlm-manifest";
    j["version"] = kVersion;
    j["verb"] = verb;
    j["seed"] = config.seed;
    j["config_hash"] = config_hash(config);
    j["config"] = chordlm::to_json(config);
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["results"] = results;
    return j;
  }

  void write(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << to_json().dump(2) << '\n';
  }
};

}  // namespace chordlm
