#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "matemb/run_config.hpp"
#include "matemb/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace matemb;
namespace fs = std::filesystem;

namespace {

TrainData synth_data(int classes, int per_class, int vocab, std::uint64_t seed,
                     bool with_eval = false) {
  const SynthCorpus corpus = synth_corpus(classes, per_class, vocab, seed);
  TrainData data;
  data.triplets = corpus.triplets;
  data.labeled_pairs = corpus.labeled_pairs;
  data.scored_pairs = corpus.scored_pairs;
  if (with_eval) {
    const SynthCorpus heldout = synth_corpus(classes, per_class, vocab, seed + 1);
    data.eval_pairs = heldout.scored_pairs;
    data.eval_labeled = heldout.labeled_pairs;
  }
  return data;
}

Encoder encoder_for(const TrainData& data, int hidden, int dim,
                    std::uint64_t seed) {
  EncoderConfig config;
  config.hidden = hidden;
  config.dim = dim;
  return build_encoder(config, data, seed);
}

bool same_params(const EncoderParams& a, const EncoderParams& b) {
  return a.embed_table == b.embed_table && a.proj == b.proj &&
         a.proj_bias == b.proj_bias;
}

}  // namespace

TEST_CASE("lr_at follows linear warmup then linear decay") {
  const double lr = 2e-5;
  CHECK(lr_at(0, 100, lr, 0.1) == 0.0);
  CHECK(lr_at(10, 100, lr, 0.1) == lr);  // ceil(0.1*100) = 10
  CHECK(lr_at(100, 100, lr, 0.1) == 0.0);
  CHECK(lr_at(5, 100, lr, 0.1) == doctest::Approx(lr * 0.5));
  CHECK(lr_at(55, 100, lr, 0.1) == doctest::Approx(lr * 0.5));
  CHECK_THROWS_AS(lr_at(-1, 100, lr, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(lr_at(101, 100, lr, 0.1), std::invalid_argument);
}

TEST_CASE("adam first step moves by roughly the learning rate") {
  Matrix param = Matrix::Zero(1, 1);
  Matrix grad = Matrix::Constant(1, 1, 1.0);
  AdamSlot slot = AdamSlot::zeros(1, 1);
  adam_update(param, grad, slot, 0.1);
  CHECK(std::abs(param(0, 0) - (-0.1)) < 1e-6);
  CHECK(slot.t == 1);
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
  Matrix param = Matrix::Constant(2, 2, 0.5);
  const Matrix before = param;
  AdamSlot slot = AdamSlot::zeros(2, 2);
  adam_update(param, Matrix::Zero(2, 2), slot, 0.1);
  CHECK(param == before);
}

TEST_CASE("adam decays moments but keeps trajectories deterministic") {
  const auto run = [] {
    Matrix param = Matrix::Constant(2, 3, 0.25);
    AdamSlot slot = AdamSlot::zeros(2, 3);
    for (int i = 0; i < 5; ++i) {
      Matrix grad = Matrix::Constant(2, 3, 0.1 * (i + 1));
      adam_update(param, grad, slot, 0.05);
    }
    return param;
  };
  CHECK(run() == run());
}

TEST_CASE("adam aborts on non-finite gradients naming the group") {
  Matrix param = Matrix::Zero(1, 1);
  Matrix grad = Matrix::Constant(1, 1, std::nan(""));
  AdamSlot slot = AdamSlot::zeros(1, 1);
  CHECK_THROWS_WITH_AS(adam_update(param, grad, slot, 0.1, {}, "proj"),
                       doctest::Contains("proj"), std::runtime_error);
}

TEST_CASE("training logs one record per step") {
  TrainData data = synth_data(3, 4, 60, 9);
  data.triplets.resize(8);
  Encoder encoder = encoder_for(data, 16, 8, 1);

  TrainConfig config;
  config.regime = Regime::MatryoshkaTriplet;
  config.epochs = 1;
  config.batch_size = 2;
  config.learning_rate = 0.01;
  config.seed = 1;
  config.eval_every = 0;
  config.matryoshka_dims = {8, 4};

  const TrainResult result = train(data, encoder, config);
  CHECK(result.log.steps.size() == 4);
  for (std::size_t i = 0; i < result.log.steps.size(); ++i) {
    CHECK(result.log.steps[i].step == static_cast<long>(i + 1));
    CHECK(std::isfinite(result.log.steps[i].loss));
  }
}

TEST_CASE("hybrid training alternates tasks strictly on equal streams") {
  TrainData data = synth_data(3, 4, 60, 10);
  data.labeled_pairs.resize(8);
  data.scored_pairs.resize(8);
  Encoder encoder = encoder_for(data, 16, 8, 2);

  TrainConfig config;
  config.regime = Regime::HybridMultitask;
  config.epochs = 2;
  config.batch_size = 4;
  config.learning_rate = 0.01;
  config.seed = 2;
  config.eval_every = 0;
  config.matryoshka_dims = {8};

  const TrainResult result = train(data, encoder, config);
  REQUIRE(result.log.steps.size() == 8);  // (2 + 2) batches x 2 epochs
  for (std::size_t i = 0; i < result.log.steps.size(); ++i) {
    const std::string expected = i % 2 == 0 ? "classification" : "sts";
    CHECK(result.log.steps[i].task == expected);
  }
  CHECK(result.head.has_value());
}

TEST_CASE("training is deterministic given identical seeds") {
  const TrainData data = synth_data(3, 6, 60, 11);
  TrainConfig config;
  config.regime = Regime::MatryoshkaTriplet;
  config.epochs = 2;
  config.batch_size = 4;
  config.learning_rate = 0.02;
  config.seed = 5;
  config.eval_every = 0;
  config.matryoshka_dims = {8, 4};

  const TrainResult a = train(data, encoder_for(data, 16, 8, 5), config);
  const TrainResult b = train(data, encoder_for(data, 16, 8, 5), config);
  CHECK(same_params(a.encoder.params, b.encoder.params));
  REQUIRE(a.log.steps.size() == b.log.steps.size());
  for (std::size_t i = 0; i < a.log.steps.size(); ++i)
    CHECK(a.log.steps[i].loss == b.log.steps[i].loss);
}

TEST_CASE("resume from a checkpoint replays the remaining steps bit-exactly") {
  const TrainData data = synth_data(3, 6, 60, 12);
  const fs::path dir = fs::temp_directory_path() / "matemb_resume_test";
  fs::remove_all(dir);

  TrainConfig config;
  config.regime = Regime::HybridMultitask;
  config.epochs = 2;
  config.batch_size = 4;
  config.learning_rate = 0.02;
  config.seed = 6;
  config.eval_every = 0;
  config.checkpoint_every = 5;
  config.checkpoint_dir = dir.string();

  const TrainResult full = train(data, encoder_for(data, 16, 8, 6), config);
  const long total = full.log.steps.back().step;
  REQUIRE(total > 5);

  const TrainCheckpoint mid =
      load_train_checkpoint((dir / "step_000005.ckpt").string());
  CHECK(mid.step == 5);

  TrainConfig resume_config = config;
  resume_config.checkpoint_dir.clear();
  const TrainResult resumed = train_resume(mid, data, resume_config);

  CHECK(same_params(resumed.encoder.params, full.encoder.params));
  REQUIRE(resumed.head.has_value());
  REQUIRE(full.head.has_value());
  CHECK(resumed.head->weights == full.head->weights);
  REQUIRE(resumed.log.steps.size() == static_cast<std::size_t>(total - 5));
  for (const auto& rec : resumed.log.steps) {
    const auto& ref = full.log.steps[rec.step - 1];
    CHECK(rec.loss == ref.loss);
    CHECK(rec.lr == ref.lr);
    CHECK(rec.task == ref.task);
  }
  fs::remove_all(dir);
}

TEST_CASE("hybrid training supports the label-negative classification form") {
  // 4 classes so every class has a distant partner and groups are complete.
  const TrainData data = synth_data(4, 6, 80, 21, /*with_eval=*/true);
  Encoder encoder = encoder_for(data, 16, 8, 7);

  TrainConfig config;
  config.regime = Regime::HybridMultitask;
  config.epochs = 1;
  config.batch_size = 4;
  config.learning_rate = 0.02;
  config.seed = 7;
  config.eval_every = 0;
  config.matryoshka_dims = {8};
  config.cls_form = ClsLossForm::LabelNegative;

  const TrainResult result = train(data, encoder, config);
  CHECK(!result.head.has_value());  // no head in the contrastive form
  CHECK(!result.log.steps.empty());
  for (const auto& rec : result.log.steps) CHECK(std::isfinite(rec.loss));

  // Ungrouped labeled pairs are a configuration error for this form.
  TrainData broken = data;
  broken.labeled_pairs.erase(broken.labeled_pairs.begin());  // breaks a group
  CHECK_THROWS_AS(train(broken, encoder, config), std::invalid_argument);
}

TEST_CASE("gradient clipping bounds the global norm") {
  const TrainData data = synth_data(3, 6, 60, 30);
  Encoder encoder = encoder_for(data, 16, 8, 8);

  TrainConfig config;
  config.regime = Regime::MatryoshkaTriplet;
  config.epochs = 1;
  config.batch_size = 4;
  config.learning_rate = 0.02;
  config.seed = 8;
  config.eval_every = 0;
  config.matryoshka_dims = {8, 4};

  const TrainResult unclipped = train(data, encoder, config);
  config.grad_clip = 1e-6;  // squashes every update toward zero
  const TrainResult clipped = train(data, encoder, config);

  const double moved_unclipped =
      (unclipped.encoder.params.embed_table - encoder.params.embed_table)
          .norm();
  const double moved_clipped =
      (clipped.encoder.params.embed_table - encoder.params.embed_table).norm();
  CHECK(moved_clipped < moved_unclipped);
  CHECK(!same_params(unclipped.encoder.params, clipped.encoder.params));
}

TEST_CASE("train validates datasets against the regime") {
  TrainData empty;
  TrainConfig config;
  config.regime = Regime::MatryoshkaTriplet;
  config.seed = 1;
  Encoder encoder(Tokenizer::build({"a"}, 8), init_params(2, 4, 4, 1));
  CHECK_THROWS_AS(train(empty, encoder, config), std::invalid_argument);

  config.regime = Regime::HybridMultitask;
  CHECK_THROWS_AS(train(empty, encoder, config), std::invalid_argument);
}

TEST_CASE("train aborts when the loss blows up to non-finite values") {
  const TrainData data = synth_data(3, 4, 60, 13);
  TrainConfig config;
  config.regime = Regime::MatryoshkaTriplet;
  config.epochs = 5;
  config.batch_size = 4;
  config.learning_rate = 1e200;  // drives parameters to overflow
  config.seed = 3;
  config.eval_every = 0;
  config.matryoshka_dims = {8};
  CHECK_THROWS_AS(train(data, encoder_for(data, 16, 8, 3), config),
                  std::runtime_error);
}

TEST_CASE("runlog JSONL is written with one line per record") {
  RunLog log;
  log.steps.push_back({1, "classification", 1.5, 0.001});
  log.steps.push_back({2, "sts", 0.7, 0.002});
  const fs::path path = fs::temp_directory_path() / "matemb_runlog_test.jsonl";
  write_runlog_jsonl(path.string(), log);
  std::ifstream in(path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    CHECK(line.find("\"type\":\"step\"") != std::string::npos);
  }
  CHECK(lines == 2);
}

TEST_CASE("run config JSON round-trips") {
  RunConfig config;
  config.train.regime = Regime::HybridMultitask;
  config.train.epochs = 3;
  config.train.batch_size = 16;
  config.train.learning_rate = 0.025;
  config.train.seed = 42;
  config.train.matryoshka_dims = {32, 16};
  config.train.matryoshka_weights = {1.0, 0.5};
  config.train.renormalize = false;
  config.train.cls_form = ClsLossForm::LabelNegative;
  config.encoder.hidden = 32;
  config.encoder.dim = 32;
  config.data.triplets = "t.jsonl";
  config.data.format = FileFormat::Tsv;
  config.output.checkpoint = "m.ckpt";

  const fs::path path = fs::temp_directory_path() / "matemb_config_rt.json";
  {
    std::ofstream out(path);
    out << run_config_to_json(config);
  }
  const RunConfig back = load_run_config(path.string());
  CHECK(back.train.regime == config.train.regime);
  CHECK(back.train.epochs == config.train.epochs);
  CHECK(back.train.batch_size == config.train.batch_size);
  CHECK(back.train.learning_rate == config.train.learning_rate);
  CHECK(back.train.seed == config.train.seed);
  CHECK(back.seed_provided);
  CHECK(back.train.matryoshka_dims == config.train.matryoshka_dims);
  CHECK(back.train.matryoshka_weights == config.train.matryoshka_weights);
  CHECK(back.train.renormalize == config.train.renormalize);
  CHECK(back.train.cls_form == config.train.cls_form);
  CHECK(back.encoder.hidden == config.encoder.hidden);
  CHECK(back.data.triplets == config.data.triplets);
  CHECK(back.data.format == FileFormat::Tsv);
  CHECK(back.output.checkpoint == config.output.checkpoint);
}

TEST_CASE("train checkpoint files round-trip") {
  const fs::path path = fs::temp_directory_path() / "matemb_train_ckpt.bin";
  TrainCheckpoint ckpt;
  ckpt.model.encoder =
      Encoder(Tokenizer::build({"x", "y"}, 4), init_params(3, 4, 2, 8));
  ckpt.opt = OptimizerState::zeros(ckpt.model.encoder.params, nullptr);
  ckpt.opt.embed.m.setConstant(0.25);
  ckpt.opt.embed.t = 17;
  ckpt.opt.step = 17;
  ckpt.seed = 99;
  ckpt.step = 17;
  save_train_checkpoint(path.string(), ckpt);
  const TrainCheckpoint back = load_train_checkpoint(path.string());
  CHECK(back.seed == 99);
  CHECK(back.step == 17);
  CHECK(back.opt.step == 17);
  CHECK(back.opt.embed.m == ckpt.opt.embed.m);
  CHECK(back.opt.embed.t == 17);
  CHECK(same_params(back.model.encoder.params, ckpt.model.encoder.params));
}
