#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "matemb/encoder.hpp"
#include "matemb/losses.hpp"
#include "matemb/numerics.hpp"
#include "matemb/rng.hpp"

#include <cmath>
#include <filesystem>

using namespace matemb;

namespace {

Encoder small_encoder(bool normalize, std::uint64_t seed = 5) {
  Tokenizer tok = Tokenizer::build({"alpha", "beta", "gamma", "delta"}, 16);
  EncoderParams params = init_params(tok.vocab_size(), 6, 4, seed, normalize);
  return Encoder(std::move(tok), std::move(params));
}

// Finite differences over one parameter group of a scalar function of the
// encoder output, against the analytic backward pass.
double fd_group_error(Encoder& encoder, const std::string& text,
                      const Vector& probe_direction, Matrix& group,
                      const Matrix& analytic, double step = 1e-6) {
  const auto loss = [&]() {
    return probe_direction.dot(encoder.encode(text));
  };
  double worst = 0.0;
  for (Eigen::Index r = 0; r < group.rows(); ++r)
    for (Eigen::Index c = 0; c < group.cols(); ++c) {
      const double saved = group(r, c);
      group(r, c) = saved + step;
      const double fp = loss();
      group(r, c) = saved - step;
      const double fm = loss();
      group(r, c) = saved;
      const double fd = (fp - fm) / (2 * step);
      const double err = std::abs(fd - analytic(r, c)) /
                         std::max({1.0, std::abs(fd), std::abs(analytic(r, c))});
      worst = std::max(worst, err);
    }
  return worst;
}

}  // namespace

TEST_CASE("tokenizer folds case, truncates, and falls back to unk") {
  Tokenizer tok = Tokenizer::build({"Hello", "world"}, 3);
  CHECK(tok.vocab_size() == 3);  // <unk> + 2
  CHECK(tok.tokenize("HELLO WORLD hello") == std::vector<int>{1, 2, 1});
  CHECK(tok.tokenize("nope") == std::vector<int>{tok.unk_id});
  CHECK(tok.tokenize("") == std::vector<int>{tok.unk_id});
  CHECK(tok.tokenize("a b c d e").size() == 3);  // max_len
}

TEST_CASE("encode is deterministic") {
  const Encoder enc = small_encoder(true);
  const Vector a = enc.encode("alpha beta gamma");
  const Vector b = enc.encode("alpha beta gamma");
  CHECK(a == b);
}

TEST_CASE("normalized output has unit norm") {
  const Encoder enc = small_encoder(true);
  CHECK(std::abs(enc.encode("alpha delta").norm() - 1.0) < 1e-12);
}

TEST_CASE("one-token text with identity projection returns its table row") {
  Tokenizer tok = Tokenizer::build({"alpha", "beta"}, 8);
  EncoderParams params = init_params(tok.vocab_size(), 4, 4, 11, false);
  params.proj = Matrix::Identity(4, 4);
  params.proj_bias.setZero();
  const Encoder enc(tok, params);
  const Vector out = enc.encode("alpha");
  const Vector row = params.embed_table.row(1).transpose();
  CHECK(out == row);
}

TEST_CASE("token order does not change the embedding") {
  const Encoder enc = small_encoder(true);
  const Vector a = enc.encode("alpha beta gamma delta");
  const Vector b = enc.encode("delta gamma alpha beta");
  CHECK((a - b).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("backward: zero output-gradient gives zero parameter gradients") {
  const Encoder enc = small_encoder(true);
  const auto [emb, trace] = enc.encode_traced("alpha beta");
  const EncoderGrads g = enc.backward(trace, Vector::Zero(emb.size()));
  CHECK(g.embed_table.isZero(0.0));
  CHECK(g.proj.isZero(0.0));
  CHECK(g.proj_bias.isZero(0.0));
}

TEST_CASE("backward matches finite differences on every group") {
  for (bool normalize : {false, true}) {
    CAPTURE(normalize);
    Encoder enc = small_encoder(normalize, 17);
    const std::string text = "alpha beta beta gamma";
    Rng rng(3);
    Vector probe(enc.params.dim());
    for (Eigen::Index i = 0; i < probe.size(); ++i)
      probe(i) = rng.uniform(-1, 1);

    const auto [emb, trace] = enc.encode_traced(text);
    const EncoderGrads g = enc.backward(trace, probe);

    CHECK(fd_group_error(enc, text, probe, enc.params.embed_table,
                         g.embed_table) < 1e-4);
    CHECK(fd_group_error(enc, text, probe, enc.params.proj, g.proj) < 1e-4);
    const Vector bias_grad = g.proj_bias;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < enc.params.proj_bias.size(); ++i) {
      const double saved = enc.params.proj_bias(i);
      enc.params.proj_bias(i) = saved + 1e-6;
      const double fp = probe.dot(enc.encode(text));
      enc.params.proj_bias(i) = saved - 1e-6;
      const double fm = probe.dot(enc.encode(text));
      enc.params.proj_bias(i) = saved;
      const double fd = (fp - fm) / 2e-6;
      worst = std::max(worst, std::abs(fd - bias_grad(i)) /
                                  std::max({1.0, std::abs(fd),
                                            std::abs(bias_grad(i))}));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("a composite loss gradient flows through encode and backward") {
  // Pairwise ranking loss over encoded pairs, differentiated all the way to
  // the parameters and checked against finite differences per group.
  Encoder enc = small_encoder(true, 31);
  const std::vector<std::string> texts{"alpha beta", "gamma", "alpha delta",
                                       "beta beta gamma"};
  const std::vector<double> gold{0.9, 0.2};

  const auto loss_value = [&]() {
    std::vector<Vector> inputs;
    for (const auto& t : texts) inputs.push_back(enc.encode(t));
    return cosent_loss(inputs, gold, Temperature{0.05}).value;
  };

  // Analytic: loss grads w.r.t. embeddings, pushed through each trace.
  std::vector<Vector> inputs;
  std::vector<ForwardTrace> traces;
  for (const auto& t : texts) {
    auto [e, trace] = enc.encode_traced(t);
    inputs.push_back(std::move(e));
    traces.push_back(std::move(trace));
  }
  const LossOutput out = cosent_loss(inputs, gold, Temperature{0.05});
  EncoderGrads acc = EncoderGrads::zeros_like(enc.params);
  for (std::size_t i = 0; i < texts.size(); ++i)
    enc.backward(traces[i], out.grads[i], acc);

  const auto fd_err = [&](Matrix& group, const Matrix& analytic) {
    double worst = 0.0;
    for (Eigen::Index r = 0; r < group.rows(); ++r)
      for (Eigen::Index c = 0; c < group.cols(); ++c) {
        const double saved = group(r, c);
        group(r, c) = saved + 1e-6;
        const double fp = loss_value();
        group(r, c) = saved - 1e-6;
        const double fm = loss_value();
        group(r, c) = saved;
        const double fd = (fp - fm) / 2e-6;
        worst = std::max(worst,
                         std::abs(fd - analytic(r, c)) /
                             std::max({1.0, std::abs(fd),
                                       std::abs(analytic(r, c))}));
      }
    return worst;
  };
  CHECK(fd_err(enc.params.embed_table, acc.embed_table) < 1e-4);
  CHECK(fd_err(enc.params.proj, acc.proj) < 1e-4);
}

TEST_CASE("untouched vocabulary rows receive zero gradient") {
  const Encoder enc = small_encoder(true);
  const auto [emb, trace] = enc.encode_traced("alpha");
  Vector d = Vector::Ones(emb.size());
  const EncoderGrads g = enc.backward(trace, d);
  // "beta" has id 2 and never appears.
  CHECK(g.embed_table.row(2).isZero(0.0));
  CHECK(!g.embed_table.row(1).isZero(0.0));
}

TEST_CASE("backward rejects a mismatched trace") {
  const Encoder enc = small_encoder(true);
  const Encoder other = small_encoder(true, 99);
  auto [emb, trace] = enc.encode_traced("alpha");
  trace.pooled = Vector::Zero(3);  // wrong hidden size
  CHECK_THROWS_AS(other.backward(trace, Vector::Zero(emb.size())),
                  std::invalid_argument);
}

TEST_CASE("init_params is seeded and scaled") {
  const EncoderParams a = init_params(10, 8, 4, 42);
  const EncoderParams b = init_params(10, 8, 4, 42);
  const EncoderParams c = init_params(10, 8, 4, 43);
  CHECK(a.embed_table == b.embed_table);
  CHECK(a.proj == b.proj);
  CHECK(a.embed_table != c.embed_table);
  CHECK(a.proj_bias.isZero(0.0));

  // Moment check: variance of uniform(-1/sqrt(h), 1/sqrt(h)) is 1/(3h).
  const int h = 64;
  const EncoderParams big = init_params(1600, h, 1, 7);
  const double mean = big.embed_table.mean();
  const double var =
      (big.embed_table.array() - mean).square().sum() /
      static_cast<double>(big.embed_table.size());
  const double expected = 1.0 / (3.0 * h);
  CHECK(var == doctest::Approx(expected).epsilon(0.2));
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "matemb_ckpt_test.bin";

  Checkpoint ckpt;
  ckpt.encoder = small_encoder(true, 21);
  ckpt.head_weights = Matrix::Random(3, 12);
  ckpt.head_tied = true;
  save_checkpoint(path.string(), ckpt);
  const Checkpoint back = load_checkpoint(path.string());

  CHECK(back.encoder.params.embed_table == ckpt.encoder.params.embed_table);
  CHECK(back.encoder.params.proj == ckpt.encoder.params.proj);
  CHECK(back.encoder.params.proj_bias == ckpt.encoder.params.proj_bias);
  CHECK(back.encoder.params.normalize_output ==
        ckpt.encoder.params.normalize_output);
  CHECK(back.encoder.tokenizer.id_to_token == ckpt.encoder.tokenizer.id_to_token);
  CHECK(back.encoder.tokenizer.max_len == ckpt.encoder.tokenizer.max_len);
  REQUIRE(back.head_weights.has_value());
  CHECK(*back.head_weights == *ckpt.head_weights);

  // Encodes identically after the round trip.
  CHECK(back.encoder.encode("alpha gamma") ==
        ckpt.encoder.encode("alpha gamma"));

  Checkpoint headless;
  headless.encoder = small_encoder(false, 22);
  save_checkpoint(path.string(), headless);
  CHECK(!load_checkpoint(path.string()).head_weights.has_value());

  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"),
                  std::runtime_error);
}
