#include "chordlm/acoustic.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "chordlm/synth.hpp"
#include "temp_dir.hpp"

namespace chordlm {
namespace {

using testing::TempDir;

std::vector<int> frame_labels(const AnnotationTrack& t) { return sample_frames(t).classes; }

// Stacks features and frame labels of every track whose id passes `keep`.
template <class Pred>
std::pair<FeatureMatrix, std::vector<int>> stack(const SynthCorpus& c, Pred keep) {
  std::vector<int> y;
  Eigen::Index rows = 0;
  for (std::size_t i = 0; i < c.tracks.size(); ++i) {
    if (keep(c.tracks[i].song_id)) rows += c.features[i].rows();
  }
  FeatureMatrix x(rows, kNumClasses);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < c.tracks.size(); ++i) {
    if (!keep(c.tracks[i].song_id)) continue;
    x.middleRows(r, c.features[i].rows()) = c.features[i];
    r += c.features[i].rows();
    auto labels = frame_labels(c.tracks[i]);
    y.insert(y.end(), labels.begin(), labels.end());
  }
  return {x, y};
}

TEST(Acoustic, ZeroLogRegIsUniform) {
  auto model = AcousticModel::zeros(AcousticKind::LogReg, 7, {});
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d;
  FeatureMatrix x(5, 7);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = d(rng);
  auto post = model.predict_posteriors(x);
  EXPECT_NEAR((post.probs.array() - 1.0 / 25.0).abs().maxCoeff(), 0.0, 1e-15);
  EXPECT_THROW(model.predict_posteriors(FeatureMatrix::Zero(2, 6)), ContractError);
}

TEST(Acoustic, PosteriorsNormalizedAndArgmaxMatchesLogits) {
  std::mt19937_64 rng(2);
  AcousticConfig config;
  config.mlp_hidden = {16, 16};
  for (auto kind : {AcousticKind::LogReg, AcousticKind::Mlp}) {
    auto model = AcousticModel::initialize(kind, 10, config, rng);
    std::normal_distribution<double> d(0.0, 5.0);
    FeatureMatrix x(50, 10);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = d(rng);
    auto post = model.predict_posteriors(x);
    for (Eigen::Index r = 0; r < 50; ++r) {
      EXPECT_NEAR(post.probs.row(r).sum(), 1.0, 1e-9);
      Eigen::Index a = 0, b = 0;
      post.probs.row(r).maxCoeff(&a);
      model.logits(x).row(r).maxCoeff(&b);
      EXPECT_EQ(a, b);
    }
    EXPECT_NO_THROW(post.validate());
  }
}

TEST(Acoustic, LossIsOrderInvariant) {
  std::mt19937_64 rng(3);
  AcousticConfig config;
  config.mlp_hidden = {8};
  auto model = AcousticModel::initialize(AcousticKind::Mlp, 4, config, rng);
  FeatureMatrix x(6, 4);
  std::normal_distribution<double> d;
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = d(rng);
  std::vector<int> y{0, 3, 24, 7, 7, 1};
  FeatureMatrix xr = x.colwise().reverse();
  std::vector<int> yr(y.rbegin(), y.rend());
  EXPECT_NEAR(model.loss(x, y), model.loss(xr, yr), 1e-14);
}

TEST(Acoustic, MlpGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  AcousticConfig config;
  config.mlp_hidden = {5, 4};
  auto model = AcousticModel::initialize(AcousticKind::Mlp, 3, config, rng);
  FeatureMatrix x(4, 3);
  std::normal_distribution<double> d;
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = d(rng);
  std::vector<int> y{2, 0, 24, 11};
  auto grads = AcousticModel::zeros(AcousticKind::Mlp, 3, config.mlp_hidden);
  model.loss(x, y, &grads);
  auto g = grads.tensors();
  auto probe = model;
  auto p = probe.tensors();
  for (std::size_t t = 0; t < p.size(); ++t) {
    for (Eigen::Index i = 0; i < p[t].value->size(); ++i) {
      double& v = p[t].value->data()[i];
      const double keep = v;
      v = keep + 1e-6;
      const double up = probe.loss(x, y);
      v = keep - 1e-6;
      const double down = probe.loss(x, y);
      v = keep;
      EXPECT_NEAR(g[t].value->data()[i], (up - down) / 2e-6, 1e-7) << p[t].name << "[" << i << "]";
    }
  }
}

TEST(AcousticTraining, SeparableTwoClassReachesFullAccuracy) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d(0.0, 0.3);
  FeatureMatrix x(400, 2);
  std::vector<int> y(400);
  for (int i = 0; i < 400; ++i) {
    y[static_cast<std::size_t>(i)] = i % 2;
    x(i, 0) = (i % 2 ? 2.0 : -2.0) + d(rng);
    x(i, 1) = d(rng);
  }
  AcousticConfig config;
  config.max_epochs = 20;
  auto result = train_classifier(x, y, FeatureMatrix(0, 2), {}, AcousticKind::LogReg, config, rng, 2);
  EXPECT_GE(frame_accuracy(result.model, x, y), 0.99);
}

TEST(AcousticTraining, XorNeedsHiddenLayers) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto make = [&](int n) {
    FeatureMatrix x(n, 2);
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      x(i, 0) = u(rng);
      x(i, 1) = u(rng);
      y[static_cast<std::size_t>(i)] = (x(i, 0) > 0) != (x(i, 1) > 0);
    }
    return std::make_pair(x, y);
  };
  auto [x, y] = make(2000);
  auto [tx, ty] = make(1000);
  AcousticConfig config;
  config.mlp_hidden = {32, 32};
  config.max_epochs = 60;
  config.patience = 60;
  config.lr0 = 0.1;
  auto logreg = train_classifier(x, y, tx, ty, AcousticKind::LogReg, config, rng, 2);
  auto mlp = train_classifier(x, y, tx, ty, AcousticKind::Mlp, config, rng, 2);
  const double a_lr = frame_accuracy(logreg.model, tx, ty);
  const double a_mlp = frame_accuracy(mlp.model, tx, ty);
  EXPECT_GE(a_mlp - a_lr, 0.2) << "logreg " << a_lr << " mlp " << a_mlp;
}

TEST(AcousticTraining, NoiselessSynthFeaturesClassifiedPerfectly) {
  std::mt19937_64 rng(7);
  SynthSpec spec;
  spec.num_train = 6;
  spec.num_test = 2;
  spec.noise_sigma = 0.0;
  auto corpus = synth_corpus(spec, rng);
  auto [x, y] = stack(corpus, [](int id) { return id < kTestIdThreshold; });
  auto [tx, ty] = stack(corpus, [](int id) { return id >= kTestIdThreshold; });
  AcousticConfig config;
  config.max_epochs = 30;
  config.lr0 = 0.5;
  auto result = train_classifier(x, y, FeatureMatrix(0, kNumClasses), {}, AcousticKind::LogReg, config, rng);
  EXPECT_EQ(frame_accuracy(result.model, x, y), 1.0);
  // Classes absent from training carry no signal; every other test frame is exact.
  std::set<int> seen(y.begin(), y.end());
  const auto pred = argmax_frames(result.model.predict_posteriors(tx));
  std::size_t checked = 0;
  for (std::size_t i = 0; i < ty.size(); ++i) {
    if (!seen.count(ty[i])) continue;
    EXPECT_EQ(pred[i], ty[i]);
    ++checked;
  }
  EXPECT_GT(checked, ty.size() / 2);
}

TEST(AcousticTraining, BestCheckpointHasLowestValidationLoss) {
  std::mt19937_64 rng(8);
  SynthSpec spec;
  spec.num_train = 4;
  spec.num_test = 1;
  spec.noise_sigma = 1.0;
  auto corpus = synth_corpus(spec, rng);
  auto [x, y] = stack(corpus, [](int id) { return id < kTestIdThreshold; });
  auto [vx, vy] = stack(corpus, [](int id) { return id >= kTestIdThreshold; });
  AcousticConfig config;
  config.max_epochs = 5;
  auto r = train_classifier(x, y, vx, vy, AcousticKind::LogReg, config, rng);
  const double selected = r.valid_loss[static_cast<std::size_t>(r.best_epoch)];
  for (double v : r.valid_loss) EXPECT_GE(v, selected);
  EXPECT_NEAR(r.model.loss(vx, vy), selected, 1e-12);
}

TEST(Synth, DeterministicUnderSeed) {
  SynthSpec spec;
  spec.num_train = 3;
  spec.num_test = 1;
  std::mt19937_64 a(9), b(9);
  auto c1 = synth_corpus(spec, a), c2 = synth_corpus(spec, b);
  ASSERT_EQ(c1.tracks.size(), c2.tracks.size());
  for (std::size_t i = 0; i < c1.tracks.size(); ++i) {
    EXPECT_EQ(frame_labels(c1.tracks[i]), frame_labels(c2.tracks[i]));
    EXPECT_TRUE(c1.features[i] == c2.features[i]);
  }
  EXPECT_EQ(c1.tracks.front().song_id, 1);
  EXPECT_EQ(c1.tracks.back().song_id, kTestIdThreshold);
}

TEST(Synth, MedianDurationMatchesGeometric) {
  SynthSpec spec;
  spec.num_train = 200;
  spec.num_test = 0;
  spec.self_transition = 0.97;
  spec.no_chord_edges = false;
  spec.min_chords = 30;
  spec.max_chords = 30;
  std::mt19937_64 rng(10);
  auto corpus = synth_corpus(spec, rng);
  std::vector<int> durations;
  for (const auto& t : corpus.tracks) {
    for (const auto& s : t.segments) durations.push_back(static_cast<int>(std::lround((s.end - s.start) * 10)));
  }
  std::nth_element(durations.begin(), durations.begin() + static_cast<long>(durations.size() / 2), durations.end());
  const double median_frames = durations[durations.size() / 2];
  // Durations are 1 + Geometric(0.03) frames: median ceil(ln 0.5 / ln 0.97) = 23 frames = 2.3 s.
  const double oracle = std::ceil(std::log(0.5) / std::log(0.97));
  EXPECT_EQ(oracle, 23.0);
  EXPECT_NEAR(median_frames, oracle, 2.0);
}

TEST(Synth, MinimumChordLengthHonored) {
  SynthSpec spec;
  spec.num_train = 30;
  spec.num_test = 5;
  spec.min_chord_frames = 7;
  std::mt19937_64 rng(12);
  auto corpus = synth_corpus(spec, rng);
  for (const auto& t : corpus.tracks) {
    for (const auto& s : t.segments) EXPECT_GE(std::lround((s.end - s.start) * 10), 7) << t.song_id;
  }
}

TEST(Synth, GrammarLegalTransitionsOnly) {
  SynthSpec spec;
  spec.num_train = 20;
  spec.num_test = 0;
  spec.progression = Progression::SecondOrder;
  spec.grammar_noise = 0.0;
  std::mt19937_64 rng(11);
  auto corpus = synth_corpus(spec, rng);
  for (const auto& t : corpus.tracks) {
    auto chords = collapse(sample_frames(t)).classes;
    // Strip no-chord edges.
    std::vector<ClassId> inner;
    for (ClassId c : chords) {
      if (c != kNoChordClass) inner.push_back(c);
    }
    ASSERT_GE(inner.size(), 3u);
    auto motion_of = [](ClassId a, ClassId b) {
      const auto sa = from_class(a), sb = from_class(b);
      const int interval = ((sb.root().value() - sa.root().value()) % 12 + 12) % 12;
      for (std::size_t m = 0; m < detail::kGrammarMotions.size(); ++m) {
        if (detail::kGrammarMotions[m].interval == interval && detail::kGrammarMotions[m].quality == sb.quality()) {
          return static_cast<int>(m);
        }
      }
      return -1;
    };
    int prev = motion_of(inner[0], inner[1]);
    ASSERT_GE(prev, 0);
    for (std::size_t k = 2; k < inner.size(); ++k) {
      const int m = motion_of(inner[k - 1], inner[k]);
      EXPECT_EQ(m, detail::kGrammarNext[static_cast<std::size_t>(prev)]);
      prev = m;
    }
  }
}

TEST(Synth, RepeatProgressionLoopsFourChords) {
  SynthSpec spec;
  spec.num_train = 5;
  spec.num_test = 0;
  spec.progression = Progression::Repeat;
  spec.min_chords = 16;
  spec.max_chords = 16;
  spec.no_chord_edges = false;
  std::mt19937_64 rng(12);
  for (const auto& t : synth_corpus(spec, rng).tracks) {
    auto chords = collapse(sample_frames(t)).classes;
    ASSERT_EQ(chords.size(), 16u);
    for (std::size_t k = 4; k < chords.size(); ++k) EXPECT_EQ(chords[k], chords[k - 4]);
  }
}

TEST(Synth, InvalidSpecRejected) {
  SynthSpec spec;
  spec.self_transition = 1.0;
  std::mt19937_64 rng(13);
  EXPECT_THROW(synth_corpus(spec, rng), DataError);
  spec = SynthSpec{};
  spec.max_frames = 10;
  EXPECT_THROW(synth_corpus(spec, rng), DataError);
}

TEST(PosteriorFiles, RoundTripIsExact) {
  TempDir dir;
  std::mt19937_64 rng(14);
  AcousticConfig config;
  auto model = AcousticModel::initialize(AcousticKind::LogReg, 3, config, rng);
  FeatureMatrix x(7, 3);
  std::normal_distribution<double> d;
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = d(rng);
  auto post = model.predict_posteriors(x);
  save_posteriors(dir.path() / "p.txt", post);
  EXPECT_TRUE(load_posteriors(dir.path() / "p.txt").probs == post.probs);
  save_features(dir.path() / "f.txt", x);
  EXPECT_TRUE(load_features(dir.path() / "f.txt") == x);
}

TEST(PosteriorFiles, WrongClassCountRejected) {
  TempDir dir;
  std::string row;
  for (int c = 0; c < 24; ++c) row += (c ? " " : "") + std::string(c ? "0" : "1");
  dir.write("p.txt", "frames=1 classes=24 fps=10\n" + row + "\n");
  EXPECT_THROW(load_posteriors(dir.path() / "p.txt"), DataError);
}

TEST(PosteriorFiles, UnnormalizedRowRejected) {
  TempDir dir;
  std::string row;
  for (int c = 0; c < 25; ++c) row += (c ? " " : "") + std::string(c ? "0" : "0.5");
  dir.write("p.txt", "frames=1 classes=25 fps=10\n" + row + "\n");
  try {
    load_posteriors(dir.path() / "p.txt");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("normalized"), std::string::npos);
  }
}

TEST(AcousticModelFile, SaveLoadExact) {
  std::mt19937_64 rng(15);
  AcousticConfig config;
  config.mlp_hidden = {6, 5};
  auto model = AcousticModel::initialize(AcousticKind::Mlp, 4, config, rng);
  std::stringstream buf;
  model.save(buf);
  auto loaded = AcousticModel::load(buf);
  FeatureMatrix x = FeatureMatrix::Ones(3, 4);
  EXPECT_TRUE(loaded.logits(x) == model.logits(x));
  EXPECT_EQ(loaded.kind(), AcousticKind::Mlp);
}

}  // namespace
}  // namespace chordlm
