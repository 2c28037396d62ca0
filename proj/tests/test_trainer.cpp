#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <sstream>

#include "support.hpp"

using namespace transgcn;

namespace {

const KnowledgeGraph& kinship() {
  static const KnowledgeGraph kg = toy::generate_kinship(42);
  return kg;
}

TrainConfig small_config(Assumption a) {
  TrainConfig c;
  c.assumption = a;
  c.dim = 8;
  c.layers = 1;
  c.epochs = 20;
  c.eval_every = 10;
  c.seed = 5;
  return c;
}

std::vector<double> train_scores(const FrozenEmbeddings& emb, const KnowledgeGraph& kg) {
  std::vector<double> s;
  for (const Triple& t : kg.train()) {
    s.push_back(score(emb.entities.row(t.head), emb.relations.row(t.relation), emb.entities.row(t.tail),
                      emb.assumption, Norm::l1));
  }
  return s;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST(AdamStep, ZeroGradientKeepsParametersAndDecaysMoments) {
  Matrix p(1, 3, {1, -2, 3}), g(1, 3), m(1, 3, {0.5, 0.5, 0.5}), v(1, 3, {0.25, 0.25, 0.25});
  // with m nonzero the parameter would still move, so start from zero moments
  Matrix m0(1, 3), v0(1, 3);
  const Matrix before = p;
  adam_step(p, g, m0, v0, AdamHyper{}, 1);
  EXPECT_EQ(p, before);
  Matrix q = before;
  adam_step(q, g, m, v, AdamHyper{}, 3);
  EXPECT_DOUBLE_EQ(m(0, 0), 0.45);
  EXPECT_DOUBLE_EQ(v(0, 0), 0.25 * 0.999);
}

TEST(AdamStep, ConstantGradientApproachesLrTimesSign) {
  Matrix p(1, 2), m(1, 2), v(1, 2);
  const Matrix g(1, 2, {0.3, -7.0});
  const AdamHyper h{0.001};
  double last0 = 0, last1 = 0;
  for (std::uint64_t t = 1; t <= 5000; ++t) {
    const Matrix before = p;
    adam_step(p, g, m, v, h, t);
    last0 = p(0, 0) - before(0, 0);
    last1 = p(0, 1) - before(0, 1);
  }
  EXPECT_NEAR(last0, -0.001, 1e-8);
  EXPECT_NEAR(last1, 0.001, 1e-8);
}

TEST(AdamStep, DefaultsAndErrors) {
  const AdamHyper h;
  EXPECT_EQ(h.lr, 0.001);
  EXPECT_EQ(h.beta1, 0.9);
  EXPECT_EQ(h.beta2, 0.999);
  EXPECT_EQ(h.eps, 1e-8);
  EXPECT_EQ(TrainConfig{}.lr, 0.001);
  Matrix p(2, 2), g(2, 1), m(2, 2), v(2, 2);
  EXPECT_THROW(adam_step(p, g, m, v, h, 1), ShapeError);
  Matrix g2(2, 2);
  EXPECT_THROW(adam_step(p, g2, m, v, h, 0), StateError);
}

TEST(ClipGlobalNorm, ScalesOnlyAboveThreshold) {
  std::vector<Matrix> g{Matrix(1, 2, {3, 0}), Matrix(1, 1, {4})};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 10.0), 5.0);
  EXPECT_EQ(g[0](0, 0), 3.0);
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(g[0](0, 0), 0.6);
  EXPECT_DOUBLE_EQ(g[1](0, 0), 0.8);
  std::vector<Matrix> h{Matrix(1, 1, {100})};
  clip_global_norm(h, 0.0);
  EXPECT_EQ(h[0](0, 0), 100.0);
}

TEST(InitParameters, DeterministicAndWithinBounds) {
  for (Assumption a : {Assumption::translation, Assumption::rotation}) {
    TrainConfig c = small_config(a);
    c.layers = 2;
    Rng r1(11), r2(11);
    const ModelState s1 = init_parameters(c, 30, 4, r1), s2 = init_parameters(c, 30, 4, r2);
    EXPECT_EQ(s1, s2);
    const double bound = 6.0 / std::sqrt(8.0);
    for (double x : s1.entity_embed.data()) EXPECT_LE(std::abs(x), bound);
    if (a == Assumption::rotation) {
      ASSERT_EQ(s1.relation_params.cols(), 4u);
      for (double x : s1.relation_params.data()) {
        EXPECT_GE(x, 0.0);
        EXPECT_LT(x, 2.0 * std::numbers::pi);
      }
      ad::Tape tape;
      const Matrix z = materialize_relations(tape.constant(s1.relation_params), a).value();
      for (std::size_t i = 0; i < z.rows(); ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(std::hypot(z(i, j), z(i, 4 + j)), 1.0, 1e-15);
    } else {
      for (std::size_t i = 0; i < 4; ++i) {
        double l1 = 0;
        for (double x : s1.relation_params.row(i)) l1 += std::abs(x);
        EXPECT_NEAR(l1, 1.0, 1e-12);
      }
    }
    ASSERT_EQ(s1.layers.size(), 2u);
    for (const auto& l : s1.layers) {
      for (std::size_t i = 0; i < 8; ++i) {
        for (std::size_t j = 0; j < 8; ++j) {
          EXPECT_LE(std::abs(l.w0(i, j) - (i == j)), 0.01);
          EXPECT_LE(std::abs(l.w1(i, j) - (i == j)), 0.01);
        }
      }
    }
  }
}

// With W near the identity and no activation, one layer only adds a degree
// normalized neighbourhood average, so scores stay close to the base model.
// Under relu half of every state is clipped: r is about 0.75 (translation)
// and 0.3 (rotation) here, which the second loop pins as a regression guard.
TEST(InitParameters, OneLayerScoresCorrelateWithBaseScores) {
  const KnowledgeGraph& kg = kinship();
  const NeighborhoodIndex index = build_index(kg);
  for (Assumption a : {Assumption::translation, Assumption::rotation}) {
    for (Activation act : {Activation::identity, Activation::relu}) {
      TrainConfig c = small_config(a);
      c.dim = 32;
      c.activation = act;
      Rng rng(3);
      ModelState s = init_parameters(c, kg.num_entities(), kg.num_relations(), rng);
      const auto with_layer = train_scores(encode_frozen(s, index), kg);
      s.layers.clear();
      const double r = pearson(with_layer, train_scores(encode_frozen(s, index), kg));
      if (act == Activation::identity) {
        EXPECT_GT(r, 0.9) << assumption_name(a);
      } else {
        EXPECT_GT(r, 0.0) << assumption_name(a);
        EXPECT_LT(r, 0.9) << assumption_name(a);
      }
    }
  }
}

TEST(Train, ZeroEpochsReturnsInitialization) {
  const KnowledgeGraph& kg = kinship();
  TrainConfig c = small_config(Assumption::rotation);
  c.epochs = 0;
  const TrainResult res = train(kg, c);
  Rng rng(mix_seed(c.seed, 0x1417));
  EXPECT_EQ(res.best.state, init_parameters(c, kg.num_entities(), kg.num_relations(), rng));
  EXPECT_EQ(res.best.epoch, 0u);
  EXPECT_TRUE(res.history.empty());
}

TEST(Train, LossDecreasesOverFiftyEpochsForBothObjectives) {
  const KnowledgeGraph& kg = kinship();
  for (Sampling sampling : {Sampling::vanilla, Sampling::self_adversarial}) {
    for (Assumption a : {Assumption::translation, Assumption::rotation}) {
      TrainConfig c = small_config(a);
      c.sampling = sampling;
      c.epochs = 50;
      c.eval_every = 100;
      const TrainResult res = train(kg, c);
      ASSERT_EQ(res.history.size(), 50u);
      EXPECT_LT(res.history[49].mean_loss, res.history[0].mean_loss)
          << assumption_name(a) << " " << sampling_name(sampling);
    }
  }
}

TEST(Train, ValidationMrrRisesAboveRandomModel) {
  const KnowledgeGraph& kg = kinship();
  TrainConfig c = small_config(Assumption::translation);
  c.dim = 16;
  c.epochs = 200;
  c.eval_every = 50;
  const TrainResult res = train(kg, c);
  ASSERT_FALSE(res.evaluations.empty());
  EXPECT_EQ(res.evaluations.front().first, 0u);
  const double random_mrr = res.evaluations.front().second;
  EXPECT_GT(res.evaluations.back().second, random_mrr);
  for (const auto& [epoch, mrr] : res.evaluations) EXPECT_GE(res.best.best_valid_mrr, mrr) << epoch;
}

TEST(Train, LogHasOneLinePerEpoch) {
  const KnowledgeGraph& kg = kinship();
  TrainConfig c = small_config(Assumption::translation);
  c.epochs = 4;
  c.eval_every = 2;
  std::ostringstream log;
  TrainOptions opts;
  opts.log = &log;
  train(kg, c, opts);
  std::istringstream in(log.str());
  std::string line;
  std::vector<std::size_t> fields;
  while (std::getline(in, line)) fields.push_back(std::count(line.begin(), line.end(), '\t') + 1);
  EXPECT_EQ(fields, (std::vector<std::size_t>{2, 3, 2, 3}));
  EXPECT_EQ(log.str().substr(0, 2), "1\t");
}

TEST(Train, DeterministicAcrossRunsAndThreads) {
  const KnowledgeGraph& kg = kinship();
  const TrainConfig c = small_config(Assumption::rotation);
  const auto a = serialize_checkpoint(train(kg, c).best);
  const auto b = serialize_checkpoint(train(kg, c).best);
  TrainOptions four;
  four.threads = 4;
  const auto d = serialize_checkpoint(train(kg, c, four).best);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, d);
}

TEST(Train, FullPretrainingReproducesBaseModelRun) {
  const KnowledgeGraph& full = kinship();
  // no validation split, so the returned state is the final one
  const KnowledgeGraph kg = KnowledgeGraph::from_ids(full.entities(), full.relations(), full.train(), {}, full.test());
  TrainConfig base = small_config(Assumption::translation);
  base.layers = 0;
  TrainConfig gcn = base;
  gcn.layers = 1;
  gcn.pretrain_epochs = gcn.epochs;
  const TrainResult a = train(kg, base), b = train(kg, gcn);
  EXPECT_EQ(a.best.state.entity_embed, b.best.state.entity_embed);
  EXPECT_EQ(a.best.state.relation_params, b.best.state.relation_params);
  for (std::size_t e = 0; e < a.history.size(); ++e) EXPECT_EQ(a.history[e].mean_loss, b.history[e].mean_loss);
}

TEST(Train, RejectsBadConfigAndEmptyTrainSplit) {
  TrainConfig c = small_config(Assumption::rotation);
  c.dim = 7;
  EXPECT_THROW(train(kinship(), c), ConfigError);
  const KnowledgeGraph& full = kinship();
  const KnowledgeGraph empty = KnowledgeGraph::from_ids(full.entities(), full.relations(), {}, {}, full.test());
  EXPECT_THROW(train(empty, small_config(Assumption::translation)), ConfigError);
}

TEST(Train, DivergenceAbortsWithLastGoodCheckpoint) {
  TrainConfig c = small_config(Assumption::translation);
  c.lr = 1e308;
  c.clip_norm = 0;
  try {
    train(kinship(), c);
    FAIL() << "expected TrainingAborted";
  } catch (const TrainingAborted& e) {
    EXPECT_EQ(e.last_good().epoch, 0u);
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(Checkpoint, RoundTripIsBitExactAndEvaluatesIdentically) {
  const KnowledgeGraph& kg = kinship();
  TrainConfig c = small_config(Assumption::rotation);
  c.layers = 2;
  c.epochs = 3;
  const Checkpoint ck = train(kg, c).best;
  const auto path = std::filesystem::temp_directory_path() / "transgcn_test_roundtrip.bin";
  save_checkpoint(ck, path);
  const Checkpoint back = load_checkpoint(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.state, ck.state);
  EXPECT_EQ(back.adam, ck.adam);
  EXPECT_EQ(back.entities, ck.entities);
  EXPECT_EQ(back.config.to_text(), ck.config.to_text());
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(ck));
  const NeighborhoodIndex index = build_index(kg);
  const KnownTriples known(kg);
  const auto r1 = evaluate(kg, Split::test, encode_frozen(ck.state, index), known, c.norm);
  const auto r2 = evaluate(kg, Split::test, encode_frozen(back.state, index), known, c.norm);
  EXPECT_EQ(r1.mrr, r2.mrr);
}

TEST(Checkpoint, CorruptInputsAreRejected) {
  TrainConfig c = small_config(Assumption::translation);
  c.epochs = 0;
  auto bytes = serialize_checkpoint(train(kinship(), c).best);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[8] = 9;
  EXPECT_THROW(deserialize_checkpoint(bad_version), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 5);
  EXPECT_THROW(deserialize_checkpoint(truncated), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(deserialize_checkpoint(trailing), FormatError);
  EXPECT_THROW(deserialize_checkpoint({'T', 'G'}), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ck.bin"), FormatError);
}

TEST(ParamCount, BasisSavingWorkedExample) {
  TrainConfig c;
  c.dim = 100;
  c.layers = 1;
  const ParamReport r = param_count_report(c, 14541, 237, 2);
  EXPECT_EQ(r.translation_basis_saving, 10948);
}

TEST(ParamCount, OwnCountOnToyConfig) {
  TrainConfig c;
  c.dim = 8;
  c.layers = 1;
  EXPECT_EQ(param_count_report(c, 104, 10, 2).own_count, 1040);
  c.layers = 0;
  EXPECT_EQ(param_count_report(c, 104, 10, 2).own_count, 104 * 8 + 10 * 8);
  c.assumption = Assumption::rotation;
  const ParamReport r = param_count_report(c, 104, 10, 2);
  EXPECT_EQ(r.own_count, 104 * 8 + 10 * 4);
  EXPECT_EQ(r.translation_basis_saving, 0);
  EXPECT_EQ(r.rotation_basis_saving, -104 * 8);
  EXPECT_THROW(param_count_report(c, 104, 10, 0), ConfigError);
}

TEST(ParamCount, OwnCountMatchesStoredParameters) {
  for (Assumption a : {Assumption::translation, Assumption::rotation}) {
    TrainConfig c = small_config(a);
    c.layers = 2;
    Rng rng(1);
    const ModelState s = init_parameters(c, 104, 10, rng);
    std::int64_t stored = 0;
    for (const Matrix* p : s.parameters()) stored += static_cast<std::int64_t>(p->size());
    EXPECT_EQ(param_count_report(c, 104, 10, 3).own_count, stored);
  }
}

TEST(ParamCount, BlockDiagonalSavings) {
  TrainConfig c;
  c.dim = 100;
  c.layers = 1;
  const ParamReport r = param_count_report(c, 1000, 10, 4);
  // 2*B*R*L*(d/B)^2 - L*d^2 and the rotation variant
  EXPECT_DOUBLE_EQ(r.translation_block_saving, 2.0 * 4 * 10 * 625 - 10000);
  EXPECT_DOUBLE_EQ(r.rotation_block_saving, 2.0 * 4 * 10 * 625 - 50000 - 100000);
  EXPECT_EQ(r.rotation_basis_saving, -1 * 10000 + 2 * 4 * 10 - 100000);
}

TEST(LayerSweep, RowsCarryRequestedDepthsAndZeroMatchesBaseRun) {
  const KnowledgeGraph& kg = kinship();
  TrainConfig c = small_config(Assumption::translation);
  c.epochs = 5;
  const auto rows = layer_sweep(kg, c, {0, 1, 2});
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(rows[i].layers, i);
    EXPECT_GT(rows[i].mrr, 0.0);
  }
  c.layers = 0;
  const TrainResult base = train(kg, c);
  const auto rep = evaluate(kg, Split::test, encode_frozen(base.best.state, build_index(kg)), KnownTriples(kg), c.norm);
  EXPECT_EQ(rows[0].mrr, rep.mrr);
  EXPECT_EQ(rows[0].hits10, rep.hits10);
  EXPECT_THROW(layer_sweep(kg, c, {}), ConfigError);
}

TEST(TrainConfig, DefaultsResolvePerAssumption) {
  TrainConfig t;
  EXPECT_EQ(t.resolved_gamma(), 1.0);
  EXPECT_EQ(t.resolved_sampling(), Sampling::vanilla);
  EXPECT_EQ(t.activation, Activation::relu);
  TrainConfig r;
  r.assumption = Assumption::rotation;
  EXPECT_EQ(r.resolved_gamma(), 12.0);
  EXPECT_EQ(r.resolved_sampling(), Sampling::self_adversarial);
  EXPECT_EQ(r.alpha, 1.0);
  EXPECT_EQ(r.clip_norm, 10.0);
}

TEST(TrainConfig, TextRoundTrip) {
  TrainConfig c;
  for (auto [k, v] : std::vector<std::pair<std::string, std::string>>{
           {"assumption", "rotation"}, {"layers", "2"},       {"dim", "16"},        {"gamma", "6.5"},
           {"alpha", "0.25"},          {"negatives", "7"},    {"lr", "0.0123"},     {"epochs", "9"},
           {"batch", "33"},            {"eval-every", "3"},   {"seed", "99"},       {"norm", "L2"},
           {"sampling", "vanilla"},    {"pretrain-epochs", "4"}, {"clip", "0"},     {"filter-negatives", "true"},
           {"activation", "identity"}}) {
    c.set(k, v);
  }
  const std::string text = c.to_text();
  EXPECT_EQ(TrainConfig::from_text(text).to_text(), text);
  EXPECT_NE(text.find("activation = identity\n"), std::string::npos);
  EXPECT_NE(text.find("lr = 0.0123\n"), std::string::npos);
  std::size_t lines = std::count(text.begin(), text.end(), '\n');
  EXPECT_EQ(lines, TrainConfig::keys().size());
}

TEST(TrainConfig, RejectsUnknownKeysAndBadValues) {
  TrainConfig c;
  try {
    c.set("learning_rate", "0.1");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
  }
  EXPECT_THROW(c.set("dim", "-3"), ConfigError);
  EXPECT_THROW(c.set("dim", "12x"), ConfigError);
  EXPECT_THROW(c.set("norm", "L3"), ConfigError);
  EXPECT_THROW(c.set("activation", "tanh"), ConfigError);
  EXPECT_THROW(TrainConfig::from_text("dim 12\n"), ConfigError);
  c.set("lr", "0");
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainConfig, CommentsAndLaterKeysWin) {
  const TrainConfig c = TrainConfig::from_text("# toy\ndim = 8  # small\n\ndim = 12\nseed=3\n");
  EXPECT_EQ(c.dim, 12u);
  EXPECT_EQ(c.seed, 3u);
}
