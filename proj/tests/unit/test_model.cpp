#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fixture.hpp"
#include "gradcheck.hpp"
#include "repronlp/error.hpp"
#include "repronlp/model.hpp"
#include "repronlp/pipeline.hpp"
#include "support.hpp"

using namespace repronlp;
using testing_support::Fixture;

namespace {

FeatureEntry entry(const std::string& id, std::vector<std::int64_t> shape) {
  FeatureEntry f;
  f.feature_id = id;
  f.name = id;
  f.shape = std::move(shape);
  f.category = f.shape.size() == 2 ? FeatureCategory::token : FeatureCategory::document;
  return f;
}

BatchManifest manifest_of(std::vector<FeatureEntry> features, std::vector<std::string> classes = {"a", "b"}) {
  BatchManifest m;
  m.features = std::move(features);
  m.classes = std::move(classes);
  return m;
}

ModelConfig config_of(std::vector<std::string> fs, std::vector<std::size_t> hidden = {}) {
  ModelConfig c;
  c.feature_set = std::move(fs);
  c.feature_set_name = "t";
  c.hidden_widths = std::move(hidden);
  c.class_names = {"a", "b"};
  c.epochs = 1;
  return c;
}

// One token feature "tok" of width 2.
Batch token_batch(std::size_t t_max, const std::vector<std::vector<std::vector<float>>>& docs,
                  std::vector<std::int64_t> labels, float pad = 0.0f) {
  Batch b;
  b.split = "train";
  b.batch_id = "000000";
  std::vector<float> data, mask;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    b.doc_ids.push_back("d" + std::to_string(d));
    for (std::size_t t = 0; t < t_max; ++t) {
      const bool real = t < docs[d].size();
      data.push_back(real ? docs[d][t][0] : pad);
      data.push_back(real ? docs[d][t][1] : -pad);
      mask.push_back(real ? 1.0f : 0.0f);
    }
  }
  b.tensors["tok"] = Tensor::f32({docs.size(), t_max, 2}, data);
  b.mask = Tensor::f32({docs.size(), t_max}, mask);
  b.labels = Tensor::i64({docs.size()}, labels);
  return b;
}

std::vector<float> row(const Tensor& t, std::size_t r) {
  auto d = t.f32_data();
  const std::size_t k = t.extent(1);
  return {d.begin() + r * k, d.begin() + (r + 1) * k};
}

}  // namespace

// ---------------------------------------------------------------- dimensions

TEST(Dimensions, ConvExamples) {
  EXPECT_EQ(conv1d_out_len(10, 3, 1, 0, 1), 8);
  EXPECT_EQ(conv1d_out_len(10, 3, 2, 1, 1), 5);
  EXPECT_EQ(conv1d_out_len(5, 1, 1, 0, 1), 5);
  EXPECT_EQ(conv1d_out_len(7, 3, 1, 0, 2), 3);
}

TEST(Dimensions, ConvMatchesWindowEnumeration) {
  for (std::int64_t in = 1; in <= 20; ++in)
    for (std::int64_t k = 1; k <= 5; ++k)
      for (std::int64_t s = 1; s <= 3; ++s)
        for (std::int64_t p = 0; p <= 2; ++p)
          for (std::int64_t d = 1; d <= 2; ++d) {
            std::int64_t windows = 0;
            for (std::int64_t start = 0; start + d * (k - 1) < in + 2 * p; start += s) ++windows;
            if (windows == 0) {
              EXPECT_THROW(conv1d_out_len(in, k, s, p, d), ConfigError);
            } else {
              ASSERT_EQ(conv1d_out_len(in, k, s, p, d), windows)
                  << "in=" << in << " k=" << k << " s=" << s << " p=" << p << " d=" << d;
            }
          }
}

TEST(Dimensions, PoolAndInvalidArguments) {
  EXPECT_EQ(pool_out_len(10, 2, 2), 5);
  EXPECT_EQ(pool_out_len(9, 3, 3), 3);
  EXPECT_THROW(conv1d_out_len(0, 1, 1, 0, 1), ConfigError);
  EXPECT_THROW(conv1d_out_len(5, 0, 1, 0, 1), ConfigError);
  EXPECT_THROW(conv1d_out_len(5, 2, 0, 0, 1), ConfigError);
  EXPECT_THROW(conv1d_out_len(5, 2, 1, -1, 1), ConfigError);
  EXPECT_THROW(conv1d_out_len(5, 2, 1, 0, 0), ConfigError);
  EXPECT_THROW(conv1d_out_len(2, 3, 1, 0, 1), ConfigError);
}

TEST(InputDim, MixedTokenAndDocumentFeatures) {
  const auto m = manifest_of({entry("glove", {-1, 50}), entry("onehot", {-1, 4}), entry("tfidf", {100})});
  EXPECT_EQ(compute_input_dim(m, {"glove", "onehot", "tfidf"}), 154u);
  const auto layout = input_layout(m, {"tfidf", "glove", "onehot"});
  ASSERT_EQ(layout.size(), 3u);
  EXPECT_EQ(layout[0].feature_id, "glove");
  EXPECT_EQ(layout[1].feature_id, "onehot");
  EXPECT_EQ(layout[1].offset, 50u);
  EXPECT_EQ(layout[2].feature_id, "tfidf");
  EXPECT_EQ(layout[2].offset, 54u);
  EXPECT_FALSE(layout[2].token_axis);
}

TEST(InputDim, SingleDocumentFeature) {
  EXPECT_EQ(compute_input_dim(manifest_of({entry("counts", {10})}), {"counts"}), 10u);
}

TEST(InputDim, Errors) {
  const auto m = manifest_of({entry("glove", {-1, 50}), entry("odd", {-1, -1})});
  EXPECT_THROW(compute_input_dim(m, {}), ConfigError);
  try {
    compute_input_dim(m, {"glove", "missing"});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("missing"), std::string::npos);
  }
  EXPECT_THROW(compute_input_dim(m, {"odd"}), ConfigError);
}

// ---------------------------------------------------------------- build

TEST(Build, NoHiddenLayersIsSingleLinear) {
  const auto m = manifest_of({entry("counts", {3})});
  const auto model = build(config_of({"counts"}), m, RngStream::seed_root(1).split("init"));
  ASSERT_EQ(model.net.layers.size(), 1u);
  EXPECT_EQ(model.net.layers[0].in, 3u);
  EXPECT_EQ(model.net.layers[0].out, 2u);
  EXPECT_EQ(describe_model(model), "input: 3 = counts 3 (join)\nlayer 0 linear: 3 -> 2\n");
}

TEST(Build, DescribeNamesActivation) {
  const auto m = manifest_of({entry("tok", {-1, 2}), entry("counts", {3})});
  const auto model = build(config_of({"counts", "tok"}, {4}), m, RngStream::seed_root(1).split("init"));
  EXPECT_EQ(describe_model(model),
            "input: 5 = tok 2 (pooled) + counts 3 (join)\nlayer 0 linear: 5 -> 4 (relu)\nlayer 1 linear: 4 -> 2\n");
}

TEST(Build, ClassMismatchRejected) {
  const auto m = manifest_of({entry("counts", {3})}, {"x", "y"});
  EXPECT_THROW(build(config_of({"counts"}), m, RngStream::seed_root(1)), ConfigError);
}

TEST(Init, SameSeedBitIdentical) {
  const auto a = init_network(7, {5, 3}, 4, Activation::tanh, RngStream::seed_root(9).split("init"));
  const auto b = init_network(7, {5, 3}, 4, Activation::tanh, RngStream::seed_root(9).split("init"));
  EXPECT_EQ(a, b);
  const auto c = init_network(7, {5, 3}, 4, Activation::tanh, RngStream::seed_root(10).split("init"));
  EXPECT_NE(a, c);
}

// Values from an independent splitmix64/xoshiro256** oracle.
TEST(Init, GlorotGoldenSeedOne) {
  const auto net = init_network(3, {}, 2, Activation::relu, RngStream::seed_root(1).split("init"));
  ASSERT_EQ(net.layers.size(), 1u);
  const std::vector<float> expected{0x1.ae78a4p-1f, -0x1.df2be0p-1f, 0x1.347b9cp-1f,
                                    0x1.f80300p-1f, 0x1.1ba578p-3f,  0x1.0d3c3ap-1f};
  EXPECT_EQ(net.layers[0].weight, expected);
  EXPECT_EQ(net.layers[0].bias, (std::vector<float>{0.0f, 0.0f}));
}

TEST(Init, WeightsWithinGlorotBound) {
  const auto net = init_network(40, {30, 20}, 5, Activation::relu, RngStream::seed_root(3));
  for (const auto& l : net.layers) {
    const double a = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
    for (float w : l.weight) EXPECT_LE(std::abs(w), a);
    for (float b : l.bias) EXPECT_EQ(b, 0.0f);
  }
}

// ---------------------------------------------------------------- forward

TEST(Forward, ZeroWeightsGiveZeroLogits) {
  const auto m = manifest_of({entry("tok", {-1, 2})});
  auto model = build(config_of({"tok"}, {3}), m, RngStream::seed_root(1));
  for (auto& l : model.net.layers) std::fill(l.weight.begin(), l.weight.end(), 0.0f);
  const auto logits = forward(model, token_batch(2, {{{1, 2}, {3, 4}}, {{5, 6}}}, {0, 1}));
  for (float v : logits.f32_data()) EXPECT_EQ(v, 0.0f);
}

TEST(Forward, HandComputedExample) {
  const auto m = manifest_of({entry("tok", {-1, 2})});
  auto model = build(config_of({"tok"}, {1}), m, RngStream::seed_root(1));
  model.net.layers[0].weight = {0.5f, -0.25f};
  model.net.layers[0].bias = {0.1f};
  model.net.layers[1].weight = {2.0f, -1.0f};
  model.net.layers[1].bias = {0.0f, 0.5f};
  const auto batch = token_batch(2, {{{1, 2}, {3, 4}}}, {0});
  EXPECT_EQ(pooled_inputs(model, batch), (std::vector<float>{2.0f, 3.0f}));
  const auto logits = forward(model, batch);
  EXPECT_NEAR(logits.f32_data()[0], 0.7f, 1e-6);
  EXPECT_NEAR(logits.f32_data()[1], 0.15f, 1e-6);
}

TEST(Forward, DuplicatedDocsGiveIdenticalRows) {
  const auto m = manifest_of({entry("tok", {-1, 2})});
  const auto model = build(config_of({"tok"}, {4}), m, RngStream::seed_root(2));
  const std::vector<std::vector<float>> doc{{0.3f, -1.0f}, {2.0f, 0.5f}};
  const auto logits = forward(model, token_batch(3, {doc, {{9, 9}}, doc}, {0, 1, 0}));
  EXPECT_EQ(row(logits, 0), row(logits, 2));
  EXPECT_NE(row(logits, 0), row(logits, 1));
}

TEST(Forward, PaddingAndMaskedValuesIgnored) {
  const auto m = manifest_of({entry("tok", {-1, 2})});
  const auto model = build(config_of({"tok"}, {4}), m, RngStream::seed_root(2));
  const std::vector<std::vector<std::vector<float>>> docs{{{0.3f, -1.0f}, {2.0f, 0.5f}}, {{1.5f, 1.5f}}};
  const auto tight = forward(model, token_batch(2, docs, {0, 1}));
  const auto padded = forward(model, token_batch(6, docs, {0, 1}, 1234.5f));
  EXPECT_EQ(tight, padded);
}

TEST(Forward, EmptyDocPoolsToZero) {
  const auto m = manifest_of({entry("tok", {-1, 2})});
  const auto model = build(config_of({"tok"}), m, RngStream::seed_root(2));
  const auto x = pooled_inputs(model, token_batch(2, {{}, {{1, 1}}}, {0, 1}, 7.0f));
  EXPECT_EQ(x[0], 0.0f);
  EXPECT_EQ(x[1], 0.0f);
}

TEST(Forward, MissingFeatureOrBadShapeIsDataError) {
  const auto m = manifest_of({entry("tok", {-1, 2}), entry("counts", {3})});
  const auto model = build(config_of({"tok", "counts"}), m, RngStream::seed_root(2));
  auto batch = token_batch(2, {{{1, 1}}}, {0});
  EXPECT_THROW(forward(model, batch), DataError);
  batch.tensors["counts"] = Tensor::f32({1, 4}, {1, 2, 3, 4});
  EXPECT_THROW(forward(model, batch), DataError);
  batch.tensors["counts"] = Tensor::f32({1, 3}, {1, 2, 3});
  EXPECT_NO_THROW(forward(model, batch));
}

// ---------------------------------------------------------------- loss

TEST(Loss, UniformLogitsGiveLnK) {
  const std::vector<float> logits{0, 0, 3, 3, 3};
  EXPECT_NEAR(mean_cross_entropy(std::span<const float>(logits.data(), 2), 1, 2, std::vector<std::int64_t>{1}),
              std::log(2.0), 1e-7);
  EXPECT_NEAR(
      mean_cross_entropy(std::span<const float>(logits.data() + 2, 3), 1, 3, std::vector<std::int64_t>{2}),
      std::log(3.0), 1e-6);
}

TEST(Loss, LargeLogitsStayFinite) {
  const std::vector<double> logits{1000, -1000, 0};
  const auto v = mean_cross_entropy(std::span<const double>(logits), 1, 3, std::vector<std::int64_t>{1});
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, 2000.0, 1e-9);
}

TEST(Loss, DuplicatedBatchSameMeanLoss) {
  const auto m = manifest_of({entry("tok", {-1, 2})});
  const auto model = build(config_of({"tok"}, {3}), m, RngStream::seed_root(4));
  const std::vector<std::vector<std::vector<float>>> docs{{{0.3f, -1.0f}}, {{1.5f, 1.5f}, {0, 1}}};
  const auto once = loss_and_grads(model, token_batch(2, docs, {0, 1}));
  auto twice_docs = docs;
  twice_docs.insert(twice_docs.end(), docs.begin(), docs.end());
  const auto twice = loss_and_grads(model, token_batch(2, twice_docs, {0, 1, 0, 1}));
  EXPECT_NEAR(once.loss, twice.loss, 1e-6);
  for (std::size_t i = 0; i < once.grads.weight[0].size(); ++i) {
    EXPECT_NEAR(once.grads.weight[0][i], twice.grads.weight[0][i], 1e-6);
  }
}

TEST(Loss, LabelOutOfRangeRejected) {
  const auto m = manifest_of({entry("tok", {-1, 2})});
  const auto model = build(config_of({"tok"}), m, RngStream::seed_root(4));
  EXPECT_THROW(loss_and_grads(model, token_batch(1, {{{1, 1}}}, {2})), DataError);
  EXPECT_THROW(loss_and_grads(model, token_batch(1, {{{1, 1}}}, {-1})), DataError);
}

TEST(Gradients, MatchCentralDifferences) {
  auto r = RngStream::seed_root(77).split("gradcheck");
  for (int i = 0; i < 30; ++i) {
    const auto c = testing_support::random_case(r);
    const auto res = testing_support::check_case(c);
    EXPECT_LT(res.max_rel_error, 1e-6) << c.label << " worst " << res.worst;
    EXPECT_GT(res.checked, 0u);
  }
}

TEST(Gradients, SgdStepLowersLossOnSmallStep) {
  auto r = RngStream::seed_root(5);
  auto c = testing_support::random_case(r);
  NetworkGradients<double> g;
  const double before = loss_and_gradients(c.net, std::span<const double>(c.x), c.batch,
                                           std::span<const std::int64_t>(c.labels), g);
  sgd_step(c.net, g, 1e-3);
  EXPECT_LT(testing_support::case_loss(c, c.net, c.x), before);
}

// ---------------------------------------------------------------- metrics

TEST(Metrics, PerfectPredictions) {
  const auto m = score_predictions({0, 1, 2, 1}, {0, 1, 2, 1}, 3);
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.macro_f1, 1.0);
  EXPECT_EQ(m.count, 4u);
}

TEST(Metrics, ConstantPredictorOnBalancedSet) {
  const auto m = score_predictions({0, 0, 0, 0}, {0, 0, 1, 1}, 2);
  EXPECT_EQ(m.accuracy, 0.5);
  // class 0: p=1/2, r=1 -> 2/3; class 1: 0
  EXPECT_NEAR(m.macro_f1, 1.0 / 3.0, 1e-12);
}

TEST(Metrics, ClassWithoutSupportCountsAsZero) {
  const auto m = score_predictions({0, 1}, {0, 1}, 3);
  EXPECT_NEAR(m.macro_f1, 2.0 / 3.0, 1e-12);
  EXPECT_THROW(score_predictions({}, {}, 2), DataError);
}

TEST(Metrics, ArgmaxTieGoesToLowerIndex) {
  const auto p = predict_classes(Tensor::f32({3, 3}, {1, 1, 0, 0, 2, 2, -1, -1, -1}));
  EXPECT_EQ(p, (std::vector<std::int64_t>{0, 1, 0}));
}

// ---------------------------------------------------------------- events & control

TEST(Events, JsonRoundTrip) {
  TrainEvent e{3, 0.5, 0.25, 0.875, 12, TrainAction::epoch_reset};
  const auto line = event_line(e);
  EXPECT_EQ(line,
            R"({"action":"epoch_reset","epoch":3,"train_loss":0.5,"validation_accuracy":0.875,"validation_loss":0.25,"wall_ms":12})");
  EXPECT_EQ(nlohmann::json::parse(line).get<TrainEvent>(), e);
  EXPECT_THROW(nlohmann::json::parse(R"({"action":"x","epoch":1,"train_loss":0,"validation_accuracy":0,"validation_loss":0,"wall_ms":0})")
                   .get<TrainEvent>(),
               DataError);
}

TEST(Control, ParseAndMailbox) {
  EXPECT_EQ(parse_control("early_stop"), ControlAction::early_stop);
  EXPECT_EQ(parse_control("reset_epoch"), ControlAction::reset_epoch);
  EXPECT_FALSE(parse_control("dance"));
  ControlChannel ch;
  EXPECT_FALSE(ch.take());
  ch.post({ControlAction::early_stop, 1});
  ch.post({ControlAction::reset_epoch, 2});
  EXPECT_EQ(ch.peek()->action, ControlAction::reset_epoch);
  EXPECT_EQ(ch.take()->issued_at, 2u);
  EXPECT_FALSE(ch.take());
}

// ---------------------------------------------------------------- training

class Training : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { fx_ = new Fixture("train"); }
  static void TearDownTestSuite() {
    delete fx_;
    fx_ = nullptr;
  }
  static std::shared_ptr<BatchStore> store() { return BatchStore::open(fx_->store); }
  static TrainState fresh(const Experiment& exp) { return start_training(exp.model(), store()->manifest()); }
  static Fixture* fx_;
};
Fixture* Training::fx_ = nullptr;

TEST_F(Training, DeterministicAcrossRuns) {
  auto a = fresh(fx_->exp);
  auto b = fresh(fx_->exp);
  TrainOptions opt;
  opt.until_epoch = 3;
  train(a, *store(), opt, nullptr, {});
  train(b, *store(), opt, nullptr, {});
  EXPECT_EQ(a.model.net, b.model.net);
  EXPECT_EQ(a.history, b.history);
  const auto id = live_identity(fx_->exp, *store());
  EXPECT_EQ(encode_checkpoint(a, id), encode_checkpoint(b, id));
}

TEST_F(Training, LossDecreasesAndAccuracyRises) {
  auto s = fresh(fx_->exp);
  train(s, *store(), {}, nullptr, {});
  ASSERT_EQ(s.history.size(), 10u);
  EXPECT_LT(s.history.back().train_loss, s.history.front().train_loss);
  EXPECT_GE(s.history.back().validation_accuracy, 0.9);
  EXPECT_EQ(s.epoch, 10u);
  EXPECT_FALSE(s.stopped);
  for (std::size_t i = 0; i < s.history.size(); ++i) EXPECT_EQ(s.history[i].epoch, i + 1);
}

TEST_F(Training, ResumeMatchesUninterrupted) {
  TrainOptions five;
  five.until_epoch = 5;
  auto straight = fresh(fx_->exp);
  train(straight, *store(), five, nullptr, {});

  TrainOptions three;
  three.until_epoch = 3;
  auto part = fresh(fx_->exp);
  train(part, *store(), three, nullptr, {});
  const auto id = live_identity(fx_->exp, *store());
  auto resumed = decode_checkpoint(encode_checkpoint(part, id), fx_->exp.model(), store()->manifest(), id);
  train(resumed, *store(), five, nullptr, {});

  EXPECT_EQ(resumed.model.net, straight.model.net);
  EXPECT_EQ(resumed.best, straight.best);
  EXPECT_EQ(resumed.history, straight.history);
  EXPECT_EQ(encode_checkpoint(resumed, id), encode_checkpoint(straight, id));
}

TEST_F(Training, EarlyStopCommandEndsRun) {
  auto s = fresh(fx_->exp);
  ControlChannel ch;
  TrainOptions opt;
  opt.before_epoch = [&](std::size_t epoch) {
    if (epoch == 2) ch.post({ControlAction::early_stop, epoch});
  };
  train(s, *store(), opt, &ch, {});
  ASSERT_EQ(s.history.size(), 2u);
  EXPECT_EQ(s.history[1].action, TrainAction::early_stopped);
  EXPECT_EQ(s.history[0].action, TrainAction::none);
  EXPECT_TRUE(s.stopped);
}

TEST_F(Training, ResetEpochReplaysIdentically) {
  auto plain = fresh(fx_->exp);
  TrainOptions four;
  four.until_epoch = 4;
  train(plain, *store(), four, nullptr, {});

  auto s = fresh(fx_->exp);
  ControlChannel ch;
  TrainOptions opt = four;
  bool posted = false;
  opt.before_epoch = [&](std::size_t epoch) {
    if (epoch == 3 && !posted) {
      posted = true;
      ch.post({ControlAction::reset_epoch, epoch});
    }
  };
  std::vector<TrainEvent> seen;
  train(s, *store(), opt, &ch, [&](const TrainEvent& e) { seen.push_back(e); });

  ASSERT_EQ(s.history.size(), 5u);
  EXPECT_EQ(s.history[2].action, TrainAction::epoch_reset);
  EXPECT_EQ(s.history[2].epoch, 3u);
  auto replay = s.history[3];
  auto reset = s.history[2];
  reset.action = TrainAction::none;
  EXPECT_EQ(reset, replay);
  EXPECT_EQ(seen, s.history);
  EXPECT_EQ(s.model.net, plain.model.net);
  EXPECT_EQ(s.best, plain.best);
  EXPECT_EQ(s.epoch, 4u);
}

TEST_F(Training, PatienceStopsAfterStaleEpochs) {
  auto model = fx_->exp.model();
  model.early_stop_patience = 1;
  model.learning_rate = 50.0;  // diverges
  auto s = start_training(model, store()->manifest());
  train(s, *store(), {}, nullptr, {});
  ASSERT_FALSE(s.history.empty());
  EXPECT_LT(s.history.size(), 10u);
  EXPECT_EQ(s.history.back().action, TrainAction::early_stopped);
  EXPECT_TRUE(s.stopped);
  EXPECT_EQ(s.stale_epochs, 1u);
  // best weights come from the lowest validation loss
  std::size_t best = 0;
  for (std::size_t i = 1; i < s.history.size(); ++i) {
    if (s.history[i].validation_loss < s.history[best].validation_loss) best = i;
  }
  EXPECT_EQ(s.best_epoch, best + 1);
}

TEST_F(Training, BestWeightsKeepEarlierEpochOnTie) {
  auto model = fx_->exp.model();
  model.learning_rate = 1e-30;  // updates vanish in f32
  auto s = start_training(model, store()->manifest());
  train(s, *store(), {}, nullptr, {});
  EXPECT_EQ(s.best_epoch, 1u);
  EXPECT_EQ(s.stale_epochs, 9u);
  for (const auto& e : s.history) EXPECT_EQ(e.validation_loss, s.history[0].validation_loss);
}

TEST_F(Training, BatchHookSeesTrainBatchesInOrder) {
  auto s = fresh(fx_->exp);
  TrainOptions opt;
  opt.until_epoch = 1;
  std::vector<std::string> ids;
  opt.on_batch = [&](const Batch& b) {
    ids.push_back(b.batch_id);
    EXPECT_EQ(b.split, "train");
  };
  train(s, *store(), opt, nullptr, {});
  ASSERT_EQ(ids.size(), 13u);  // 400 train docs / 32
  EXPECT_EQ(ids.front(), "000000");
  EXPECT_EQ(ids.back(), "000012");
}

// ---------------------------------------------------------------- checkpoint

TEST_F(Training, CheckpointRoundTrip) {
  auto s = fresh(fx_->exp);
  TrainOptions opt;
  opt.until_epoch = 2;
  train(s, *store(), opt, nullptr, {});
  const auto id = live_identity(fx_->exp, *store());
  testing_support::TempDir dir("ckpt");
  save_checkpoint(s, id, dir / "c.bin");
  const auto back = load_checkpoint(dir / "c.bin", fx_->exp.model(), store()->manifest(), id);
  EXPECT_EQ(back.model.net, s.model.net);
  EXPECT_EQ(back.best, s.best);
  EXPECT_EQ(back.history, s.history);
  EXPECT_EQ(back.epoch, 2u);
  EXPECT_EQ(back.best_epoch, s.best_epoch);
  EXPECT_EQ(back.best_validation_loss, s.best_validation_loss);
  EXPECT_EQ(back.rng.size(), s.rng.size());
  EXPECT_EQ(encode_checkpoint(back, id), encode_checkpoint(s, id));
  const auto bytes = testing_support::read_text(dir / "c.bin");
  EXPECT_EQ(bytes.substr(0, 4), "ZCKP");
}

TEST_F(Training, FreshStateRoundTripsInfiniteBest) {
  const auto s = fresh(fx_->exp);
  const auto id = live_identity(fx_->exp, *store());
  const auto back = decode_checkpoint(encode_checkpoint(s, id), fx_->exp.model(), store()->manifest(), id);
  EXPECT_TRUE(std::isinf(back.best_validation_loss));
}

TEST_F(Training, FingerprintMismatchRefused) {
  const auto s = fresh(fx_->exp);
  const auto id = live_identity(fx_->exp, *store());
  const auto bytes = encode_checkpoint(s, id);
  auto other = id;
  other.config_fingerprint = "0000";
  try {
    decode_checkpoint(bytes, fx_->exp.model(), store()->manifest(), other);
    FAIL();
  } catch (const StoreError& e) {
    EXPECT_NE(std::string(e.what()).find("config fingerprint mismatch"), std::string::npos) << e.what();
  }
  other = id;
  other.manifest_digest = "ffff";
  EXPECT_THROW(decode_checkpoint(bytes, fx_->exp.model(), store()->manifest(), other), StoreError);
  EXPECT_NO_THROW(decode_checkpoint(bytes, fx_->exp.model(), store()->manifest(), other, true));
}

TEST_F(Training, DifferentFeatureSetRefused) {
  const auto s = fresh(fx_->exp);
  const auto id = live_identity(fx_->exp, *store());
  const auto bytes = encode_checkpoint(s, id);
  const auto emb = fx_->with({std::nullopt, "embedding"});
  const auto emb_id = live_identity(emb, *store());
  EXPECT_NE(emb_id.config_fingerprint, id.config_fingerprint);
  EXPECT_THROW(decode_checkpoint(bytes, emb.model(), store()->manifest(), emb_id), StoreError);
  // even when identity checks are skipped, shapes must still fit
  EXPECT_THROW(decode_checkpoint(bytes, emb.model(), store()->manifest(), emb_id, true), StoreError);
}

TEST_F(Training, CorruptCheckpointRejected) {
  const auto s = fresh(fx_->exp);
  const auto id = live_identity(fx_->exp, *store());
  const auto bytes = encode_checkpoint(s, id);
  const auto& cfg = fx_->exp.model();
  const auto opened = store();
  const auto& man = opened->manifest();
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad, cfg, man, id), StoreError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3), cfg, man, id), StoreError);
  EXPECT_THROW(decode_checkpoint(bytes + "x", cfg, man, id), StoreError);
  bad = bytes;
  bad[20] = '#';
  EXPECT_THROW(decode_checkpoint(bad, cfg, man, id), StoreError);
  EXPECT_THROW(load_checkpoint("/nonexistent/c.bin", cfg, man, id), StoreError);
}

TEST_F(Training, StoreClassMismatchRefused) {
  auto s = fresh(fx_->exp);
  auto cfg = s.model.config;
  cfg.class_names = {"x", "y"};
  s.model.config = cfg;
  EXPECT_THROW(train(s, *store(), {}, nullptr, {}), StoreError);
}

// ---------------------------------------------------------------- pipeline

TEST_F(Training, RunDirectoryResumeAndTest) {
  testing_support::TempDir runs("runs");
  RunOptions three;
  three.train.until_epoch = 3;
  run_training(fx_->exp, fx_->store, runs / "a", three);
  EXPECT_EQ(read_events(runs / "a" / kEventsFile).size(), 3u);
  RunOptions rest;
  rest.resume = true;
  const auto resumed = run_training(fx_->exp, fx_->store, runs / "a", rest);
  const auto straight = run_training(fx_->exp, fx_->store, runs / "b", {});
  EXPECT_EQ(resumed.history.size(), 10u);
  EXPECT_EQ(testing_support::read_text(runs / "a" / kCheckpointFile),
            testing_support::read_text(runs / "b" / kCheckpointFile));
  EXPECT_EQ(testing_support::read_text(runs / "a" / kEventsFile),
            testing_support::read_text(runs / "b" / kEventsFile));

  const auto m = test_run(fx_->exp, fx_->store, runs / "b");
  EXPECT_EQ(m.count, 50u);
  EXPECT_GE(m.accuracy, 0.9);
}

TEST_F(Training, ReportCsvColumns) {
  std::vector<TrainEvent> ev{{1, 0.5, 0.25, 0.75, 0, TrainAction::none},
                             {2, 0.25, 0.125, 1.0, 0, TrainAction::early_stopped}};
  EXPECT_EQ(report_csv({{"r1", ev}}),
            "run_id,epoch,train_loss,validation_loss,validation_accuracy,action\n"
            "r1,1,0.5,0.25,0.75,none\n"
            "r1,2,0.25,0.125,1,early_stopped\n");
}
