// chordlm: command-line front end for corpus synthesis, model training,
// decoding, evaluation, and the three experiments.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "chordlm/chordlm.hpp"

namespace fs = std::filesystem;
using namespace chordlm;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;  // key.path=value
  bool paper_defaults = false;
  std::string out_dir;
  std::int64_t seed = -1;
  std::string corpus;
  std::string features;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "JSON configuration or manifest of an earlier run");
  cmd->add_option("--set", o.overrides, "Override a configuration key, e.g. --set rnn.hidden=50");
  cmd->add_flag("--paper-defaults", o.paper_defaults, "Pin every published hyperparameter (2 x 100 LSTM, lr 0.001, 200 epochs, beam 25/3/4)");
  cmd->add_option("--out", o.out_dir, "Output directory (config key output_dir)");
  cmd->add_option("--seed", o.seed, "Random seed (config key seed)");
  cmd->add_option("--corpus", o.corpus, "Directory of <id>.lab files; selects corpus.source=lab");
  cmd->add_option("--features", o.features, "Directory of <id>.features files (corpus.features_path)");
}

// "a.b=v" -> {"a": {"b": v}}; v is parsed as JSON, or taken as a string.
Json override_json(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) value = Json{{*it, value}};
  return value;
}

ExperimentConfig resolve(const CommonOptions& o) {
  ExperimentConfig c = ExperimentConfig::desk_defaults();
  if (!o.config_path.empty()) merge_config_file(o.config_path, c);
  for (const auto& s : o.overrides) merge_json(override_json(s), c);
  if (o.seed >= 0) c.seed = static_cast<std::uint64_t>(o.seed);
  if (!o.out_dir.empty()) c.output_dir = o.out_dir;
  if (!o.corpus.empty()) {
    c.corpus.source = "lab";
    c.corpus.path = o.corpus;
  }
  if (!o.features.empty()) c.corpus.features_path = o.features;
  if (o.paper_defaults) c.apply_paper_defaults();
  c.validate();
  return c;
}

void finish(Manifest& m, const std::vector<std::string>& outputs) {
  m.outputs.insert(m.outputs.end(), outputs.begin(), outputs.end());
  m.write(fs::path(m.config.output_dir) / ("manifest-" + m.verb + ".json"));
}

std::vector<std::vector<ClassId>> sequences_for_level(std::span<const AnnotationTrack> tracks,
                                                      const std::string& level) {
  if (level == "frame") return frame_sequences(tracks);
  if (level == "chord") return chord_sequences(tracks);
  throw ConfigError("--level must be frame or chord");
}

std::vector<AnnotationTrack> pick_split(const PreparedCorpus& c, const std::string& split) {
  if (split == "test") return c.test;
  if (split == "train") return all_training(c);
  if (split == "all") {
    auto all = all_training(c);
    all.insert(all.end(), c.test.begin(), c.test.end());
    return all;
  }
  throw ConfigError("--split must be train, test or all");
}

// ---------------------------------------------------------------------------

void cmd_synth(const ExperimentConfig& c) {
  Manifest m{"synth", c};
  auto rng = stage_rng(c.seed, "corpus");
  const SynthCorpus corpus = synth_corpus(c.synth, rng);
  const fs::path out(c.output_dir);
  fs::create_directories(out / "corpus");
  fs::create_directories(out / "features");
  for (std::size_t i = 0; i < corpus.tracks.size(); ++i) {
    const auto id = std::to_string(corpus.tracks[i].song_id);
    write_lab(out / "corpus" / (id + ".lab"), corpus.tracks[i].segments);
    save_features(out / "features" / (id + ".features"), corpus.features[i]);
  }
  write_metadata(out / "corpus", corpus.tracks);
  m.results = {{"songs", corpus.tracks.size()}};
  finish(m, {"corpus/", "features/"});
  std::cout << "wrote " << corpus.tracks.size() << " songs to " << out.string() << '\n';
}

void cmd_train_markov(const ExperimentConfig& c, const std::string& level) {
  Manifest m{"train-markov", c};
  const auto corpus = prepare_corpus(c, false);
  const auto model = fit_markov(sequences_for_level(all_training(corpus), level), c.markov_alpha);
  const fs::path path = fs::path(c.output_dir) / ("markov-" + level + ".txt");
  fs::create_directories(c.output_dir);
  model.save(path);
  m.results = {{"level", level}};
  finish(m, {path.filename().string()});
  std::cout << "wrote " << path.string() << '\n';
}

void cmd_train_rnn(const ExperimentConfig& c, const std::string& level) {
  Manifest m{"train-rnn", c};
  const auto corpus = prepare_corpus(c, false);
  auto rng = stage_rng(c.seed, "train-rnn");
  const auto result = train_rnn_lm(sequences_for_level(corpus.train, level),
                                   sequences_for_level(corpus.valid, level), c.rnn, rng);
  const fs::path dir(c.output_dir);
  fs::create_directories(dir);
  const std::string name = "rnn-" + level + ".ckpt";
  result.model.save(dir / name);
  write_history_csv(dir / ("rnn-" + level + "-history.csv"), result);
  m.results = {{"level", level},
               {"best_epoch", result.best_epoch},
               {"valid_logprob", result.history[static_cast<std::size_t>(result.best_epoch)].valid_logprob}};
  finish(m, {name, "rnn-" + level + "-history.csv"});
  std::cout << "wrote " << (dir / name).string() << " (best epoch " << result.best_epoch << ")\n";
}

void cmd_train_acoustic(const ExperimentConfig& c, const std::string& kind_name) {
  Manifest m{"train-acoustic", c};
  const AcousticKind kind = parse_acoustic_kind(kind_name);
  const auto corpus = prepare_corpus(c, true);
  auto [x, y] = stack_frames(corpus.train, corpus.features);
  auto [vx, vy] = stack_frames(corpus.valid, corpus.features);
  auto rng = stage_rng(c.seed, "train-acoustic-" + kind_name);
  const auto result = train_classifier(x, y, vx, vy, kind, c.acoustic, rng);
  const fs::path dir(c.output_dir);
  fs::create_directories(dir);
  const std::string name = "acoustic-" + to_string(kind) + ".txt";
  result.model.save(dir / name);
  m.results = {{"kind", to_string(kind)},
               {"best_epoch", result.best_epoch},
               {"train_frame_accuracy", frame_accuracy(result.model, x, y)}};
  finish(m, {name});
  std::cout << "wrote " << (dir / name).string() << '\n';
}

struct DecodeOptions {
  std::string method = "hmm";
  std::string acoustic;
  std::string posteriors;
  std::string markov;
  std::string rnn;
  bool save_posteriors = false;
};

std::map<int, fs::path> files_by_id(const fs::path& dir, const std::string& ext) {
  std::map<int, fs::path> out;
  if (!fs::is_directory(dir)) throw DataError(dir.string() + " is not a directory");
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ext) continue;
    const std::string stem = e.path().stem().string();
    int id = 0;
    auto [ptr, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), id);
    if (ec != std::errc() || ptr != stem.data() + stem.size()) {
      throw DataError(e.path().string() + ": file name is not a song id");
    }
    out.emplace(id, e.path());
  }
  return out;
}

void cmd_decode(const ExperimentConfig& c, const DecodeOptions& d) {
  Manifest m{"decode", c};
  if (d.posteriors.empty() == (d.acoustic.empty() || c.corpus.features_path.empty())) {
    throw ConfigError("decode needs either --posteriors DIR or --acoustic MODEL with --features DIR");
  }
  std::map<int, PosteriorMatrix> posts;
  if (!d.posteriors.empty()) {
    m.inputs.push_back(d.posteriors);
    for (const auto& [id, path] : files_by_id(d.posteriors, ".posteriors")) posts.emplace(id, load_posteriors(path));
  } else {
    m.inputs = {d.acoustic, c.corpus.features_path};
    const auto model = AcousticModel::load(fs::path(d.acoustic));
    for (const auto& [id, path] : files_by_id(c.corpus.features_path, ".features")) {
      posts.emplace(id, model.predict_posteriors(load_features(path)));
    }
  }
  std::optional<MarkovModel> markov;
  std::optional<RnnLm> rnn;
  if (d.method == "hmm") {
    if (d.markov.empty()) throw ConfigError("--method hmm needs --markov MODEL");
    markov = MarkovModel::load(fs::path(d.markov));
    m.inputs.push_back(d.markov);
  } else if (d.method == "rnn") {
    if (d.rnn.empty()) throw ConfigError("--method rnn needs --rnn CHECKPOINT");
    rnn = RnnLm::load(fs::path(d.rnn));
    m.inputs.push_back(d.rnn);
  } else if (d.method != "none" && d.method != "mv") {
    throw ConfigError("--method must be none, mv, hmm or rnn");
  }
  if (c.decoder.prior_division) throw ConfigError("decode: prior_division needs training data; use exp2");

  const fs::path out = fs::path(c.output_dir) / ("decoded-" + d.method);
  fs::create_directories(out);
  for (const auto& [id, post] : posts) {
    std::vector<ClassId> frames;
    if (d.method == "none") {
      frames = argmax_frames(post);
    } else if (d.method == "mv") {
      frames = majority_vote(post, c.decoder).classes;
    } else if (d.method == "hmm") {
      frames = viterbi(post, *markov, c.decoder).classes;
    } else {
      frames = hashed_beam_search(post, *rnn, c.decoder).classes;
    }
    write_lab(out / (std::to_string(id) + ".lab"), frames_to_segments(frames));
    if (d.save_posteriors) save_posteriors(out / (std::to_string(id) + ".posteriors"), post);
  }
  m.results = {{"method", d.method}, {"songs", posts.size()}};
  finish(m, {out.filename().string() + "/"});
  std::cout << "decoded " << posts.size() << " songs into " << out.string() << '\n';
}

void cmd_eval_logprob(const ExperimentConfig& c, const std::string& level, const std::string& split,
                      const std::string& markov_path, const std::string& rnn_path, int traces) {
  Manifest m{"eval-logprob", c};
  if (markov_path.empty() == rnn_path.empty()) throw ConfigError("eval-logprob needs exactly one of --markov, --rnn");
  const auto corpus = prepare_corpus(c, false);
  const auto tracks = pick_split(corpus, split);
  const auto seqs = sequences_for_level(tracks, level);
  LogProbReport report;
  std::vector<std::vector<double>> trace_values;
  const fs::path dir(c.output_dir);
  std::vector<std::string> outputs{"logprob.txt"};
  auto evaluate = [&](const auto& model) {
    report = logprob_report(model, seqs);
    for (std::size_t i = 0; i < seqs.size() && static_cast<int>(i) < traces; ++i) {
      const std::string name = "traces/" + std::to_string(tracks[i].song_id) + ".csv";
      write_trace_csv(dir / name, seqs[i], per_symbol_logprobs(model, std::span<const ClassId>(seqs[i])));
      outputs.push_back(name);
    }
  };
  if (!markov_path.empty()) {
    m.inputs.push_back(markov_path);
    evaluate(MarkovModel::load(fs::path(markov_path)));
  } else {
    m.inputs.push_back(rnn_path);
    evaluate(RnnLm::load(fs::path(rnn_path)));
  }
  auto out = open_output(dir / "logprob.txt");
  write_report(out, report);
  write_report(std::cout, report);
  m.results = report_json(report);
  finish(m, outputs);
}

void cmd_eval_wcsr(const ExperimentConfig& c, const std::string& reference, const std::string& predicted) {
  Manifest m{"eval-wcsr", c};
  m.inputs = {reference, predicted};
  std::vector<SongIntervals> ref, pred;
  for (const auto& t : load_corpus(reference)) ref.push_back(intervals_from_track(t));
  for (const auto& t : load_corpus(predicted)) pred.push_back(intervals_from_track(t));
  const auto report = wcsr(ref, pred);
  auto out = open_output(fs::path(c.output_dir) / "wcsr.txt");
  write_report(out, report);
  write_report(std::cout, report);
  m.results = {{"t_c", report.t_c}, {"t_a", report.t_a}, {"R", report.recall}};
  finish(m, {"wcsr.txt"});
}

template <class Run, class Write, class ToJson>
void cmd_experiment(const std::string& verb, const ExperimentConfig& c, Run run, Write write, ToJson to_json_fn) {
  Manifest m{verb, c};
  const auto result = run(c);
  const auto outputs = write(result, fs::path(c.output_dir));
  m.results = to_json_fn(result);
  finish(m, outputs);
  std::cout << m.results.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chordlm: first-order and recurrent temporal models for chord recognition"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  CommonOptions common;
  std::string level = "frame", split = "test", kind = "logreg", markov_path, rnn_path, reference, predicted;
  int traces = 0;
  DecodeOptions dec;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic annotated corpus with features");
  auto* train_markov = app.add_subcommand("train-markov", "Fit a Markov chain on the training split");
  auto* train_rnn = app.add_subcommand("train-rnn", "Train the LSTM language model on the training split");
  auto* train_acoustic = app.add_subcommand("train-acoustic", "Train a frame classifier on features");
  auto* decode = app.add_subcommand("decode", "Decode frame posteriors into chord annotations");
  auto* eval_logprob = app.add_subcommand("eval-logprob", "Average log-probability report of a language model");
  auto* eval_wcsr = app.add_subcommand("eval-wcsr", "Weighted chord symbol recall of predicted annotations");
  auto* exp1 = app.add_subcommand("exp1", "Frame-level likelihoods of Markov chain and RNN");
  auto* exp2 = app.add_subcommand("exp2", "Decoding with None / MV / HMM / RNN temporal models");
  auto* exp3 = app.add_subcommand("exp3", "Chord-level language models and per-symbol traces");
  for (auto* cmd : {synth, train_markov, train_rnn, train_acoustic, decode, eval_logprob, eval_wcsr, exp1, exp2, exp3}) {
    add_common(cmd, common);
  }
  for (auto* cmd : {train_markov, train_rnn, eval_logprob}) {
    cmd->add_option("--level", level, "frame or chord")->check(CLI::IsMember({"frame", "chord"}));
  }
  train_acoustic->add_option("--kind", kind, "logreg or mlp")->check(CLI::IsMember({"logreg", "mlp", "dnn"}));
  decode->add_option("--method", dec.method, "none, mv, hmm or rnn")
      ->check(CLI::IsMember({"none", "mv", "hmm", "rnn"}));
  decode->add_option("--acoustic", dec.acoustic, "Acoustic model file (with --features)");
  decode->add_option("--posteriors", dec.posteriors, "Directory of <id>.posteriors files");
  decode->add_option("--markov", dec.markov, "Markov model for --method hmm");
  decode->add_option("--rnn", dec.rnn, "RNN checkpoint for --method rnn");
  decode->add_flag("--save-posteriors", dec.save_posteriors, "Also write the posteriors next to the annotations");
  eval_logprob->add_option("--split", split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
  eval_logprob->add_option("--markov", markov_path, "Markov model file");
  eval_logprob->add_option("--rnn", rnn_path, "RNN checkpoint");
  eval_logprob->add_option("--traces", traces, "Write per-symbol traces for the first N songs");
  eval_wcsr->add_option("--reference", reference, "Directory of reference .lab files")->required();
  eval_wcsr->add_option("--predicted", predicted, "Directory of predicted .lab files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const ExperimentConfig config = resolve(common);
    if (synth->parsed()) cmd_synth(config);
    if (train_markov->parsed()) cmd_train_markov(config, level);
    if (train_rnn->parsed()) cmd_train_rnn(config, level);
    if (train_acoustic->parsed()) cmd_train_acoustic(config, kind);
    if (decode->parsed()) cmd_decode(config, dec);
    if (eval_logprob->parsed()) cmd_eval_logprob(config, level, split, markov_path, rnn_path, traces);
    if (eval_wcsr->parsed()) cmd_eval_wcsr(config, reference, predicted);
    if (exp1->parsed()) cmd_experiment("exp1", config, run_exp1, write_exp1, exp1_json);
    if (exp2->parsed()) cmd_experiment("exp2", config, run_exp2, write_exp2, exp2_json);
    if (exp3->parsed()) cmd_experiment("exp3", config, run_exp3, write_exp3, exp3_json);
  } catch (const ConfigError& e) {
    std::cerr << "chordlm: configuration error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "chordlm: numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const DataError& e) {
    std::cerr << "chordlm: data error: " << e.what() << '\n';
    return kData;
  } catch (const ContractError& e) {
    std::cerr << "chordlm: invalid input: " << e.what() << '\n';
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "chordlm: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
