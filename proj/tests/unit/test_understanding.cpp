#include <doctest.h>

#include <cmath>

#include "duet/grad_check.hpp"
#include "duet/ops.hpp"
#include "duet/understanding.hpp"
#include "duet/vocab.hpp"
#include "helpers.hpp"
#include "op_catalog.hpp"

using namespace duet;

namespace {

struct Fixture {
  ModelConfig cfg = testing::tiny_config();
  ParamTree params;
  Rng rng{21};
  Tensor image;

  explicit Fixture(std::size_t vocab = 24) {
    cfg.vocab_size = vocab;
    init_understanding(params, cfg, rng);
    image = testing::randn({cfg.image_size * cfg.image_size}, rng);
  }

  void zero(const std::string& name) {
    for (double& v : params.at(name).mutable_data()) v = 0.0;
  }

  // Residual branches off: every LM row passes through unchanged.
  void identity_layers() {
    for (std::size_t i = 0; i < cfg.backbone.num_layers; ++i) {
      const std::string p = "und.layer" + std::to_string(i);
      for (const char* n : {".attn.out_weight", ".attn.out_bias", ".mlp.down_weight", ".mlp.down_bias"}) zero(p + n);
    }
  }
};

}  // namespace

TEST_CASE("vision encoder shapes and constant image") {
  Fixture f;
  CHECK(f.cfg.num_patches() == 16);
  CHECK(encode_image(f.params, f.cfg, f.image).shape() == Shape{16, f.cfg.vision_dim});
  ModelConfig big;
  CHECK(big.num_patches() == 16);

  const Tensor flat = Tensor::full({f.cfg.image_size * f.cfg.image_size}, 0.4);
  const Tensor pe = linear(patchify(flat, f.cfg.image_size, f.cfg.patch), f.params.at("und.vision.patch_weight"),
                           f.params.at("und.vision.patch_bias"));
  for (std::size_t r = 1; r < pe.dim(0); ++r)
    for (std::size_t c = 0; c < pe.dim(1); ++c) CHECK(pe.data()[r * pe.dim(1) + c] == pe.data()[c]);
  CHECK_THROWS_AS(encode_image(f.params, f.cfg, Tensor::zeros({10})), std::invalid_argument);
}

TEST_CASE("encoder and connector gradients") {
  Fixture f;
  Tensor img(f.image.shape(), testing::values(f.image), true);
  CHECK(grad_check([&](const Tensor& x) { return testing::probe_sum(encode_image(f.params, f.cfg, x), 3); }, img,
                   {1e-5, 32, 1}) < 1e-4);
  Tensor v = testing::randn({16, f.cfg.vision_dim}, f.rng, true);
  CHECK(grad_check([&](const Tensor& x) { return testing::probe_sum(connect(f.params, f.cfg, x), 4); }, v) < 1e-4);
}

TEST_CASE("connector with zero weights outputs zeros") {
  Fixture f;
  for (const char* n : {"und.connector.fc1_weight", "und.connector.fc1_bias", "und.connector.fc2_weight",
                        "und.connector.fc2_bias"})
    f.zero(n);
  const Tensor out = connect(f.params, f.cfg, testing::randn({16, f.cfg.vision_dim}, f.rng));
  CHECK(out.shape() == Shape{16, f.cfg.backbone.model_dim});
  for (double x : out.data()) CHECK(x == 0.0);
  CHECK_THROWS_AS(connect(f.params, f.cfg, Tensor::zeros({16, 3})), std::invalid_argument);
}

TEST_CASE("sequence layout") {
  Fixture f;
  const std::vector<std::size_t> prompt = {1, 5, 6}, report = {7, 8, 2};
  const auto s = build_sequence(f.params, f.cfg, f.image, prompt, report);
  CHECK(s.tokens.dim(0) == 16 + 6);
  CHECK(s.m == 16 + 2);
  CHECK(s.n == 16 + 5);
  CHECK(s.segments[15] == Segment::vision);
  CHECK(s.segments[16] == Segment::prompt);
  CHECK(s.segments[19] == Segment::report);
  CHECK_THROWS_AS(build_sequence(f.params, f.cfg, f.image, prompt, {}), std::invalid_argument);
}

TEST_CASE("single-token report under uniform logits costs ln 8") {
  Fixture f(8);
  f.zero("und.lm_head.weight");
  const auto s = build_sequence(f.params, f.cfg, f.image, {1, 4}, {6});
  CHECK(ar_loss(f.params, f.cfg, s).item() == doctest::Approx(std::log(8.0)).epsilon(1e-12));
  CHECK(std::abs(ar_loss(f.params, f.cfg, s).item() - 2.07944) < 1e-5);
}

TEST_CASE("three-token loss equals per-position cross-entropies") {
  Fixture f(8);
  const std::vector<std::size_t> report = {5, 7, 2};
  const auto s = build_sequence(f.params, f.cfg, f.image, {1, 4}, report);
  const Tensor h = lm_hidden(f.params, f.cfg, s.tokens);
  const Tensor logits = matmul(h, f.params.at("und.lm_head.weight"));
  const std::size_t V = 8;
  double total = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t pos = s.m + k;
    double mx = -INFINITY;
    for (std::size_t c = 0; c < V; ++c) mx = std::max(mx, logits.data()[pos * V + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < V; ++c) z += std::exp(logits.data()[pos * V + c] - mx);
    total += mx + std::log(z) - logits.data()[pos * V + report[k]];
  }
  CHECK(ar_loss(f.params, f.cfg, s, true).item() == doctest::Approx(total).epsilon(1e-12));
  CHECK(ar_loss(f.params, f.cfg, s).item() == doctest::Approx(total / 3.0).epsilon(1e-12));
}

TEST_CASE("prompt ids and padding never enter the loss") {
  Fixture f(8);
  auto s = build_sequence(f.params, f.cfg, f.image, {1, 4, 3}, {6, 2});
  const double base = ar_loss(f.params, f.cfg, s).item();

  auto relabeled = s;
  relabeled.ids[16 + 1] = 7;  // prompt target id, embedding untouched
  CHECK(ar_loss(f.params, f.cfg, relabeled).item() == base);

  auto padded = s;
  padded.tokens = concat_rows({s.tokens, testing::randn({4, f.cfg.backbone.model_dim}, f.rng)});
  for (int i = 0; i < 4; ++i) {
    padded.ids.push_back(Vocabulary::kPad);
    padded.segments.push_back(Segment::report);
  }
  CHECK(ar_loss(f.params, f.cfg, padded).item() == base);

  auto empty = s;
  empty.m = empty.n;
  CHECK_THROWS_AS(ar_loss(f.params, f.cfg, empty), std::invalid_argument);
}

TEST_CASE("ar_loss gradient") {
  Fixture f(8);
  const auto s = build_sequence(f.params, f.cfg, f.image, {1, 4}, {5, 2});
  Tensor head = f.params.at("und.lm_head.weight");
  CHECK(grad_check([&](const Tensor&) { return ar_loss(f.params, f.cfg, s); }, head, {1e-5, 24, 2}) < 1e-4);
  Tensor conn = f.params.at("und.connector.fc2_weight");
  CHECK(grad_check([&](const Tensor&) {
          return ar_loss(f.params, f.cfg, build_sequence(f.params, f.cfg, f.image, {1, 4}, {5, 2}));
        },
                   conn, {1e-5, 24, 3}) < 1e-4);
}

TEST_CASE("greedy decoding") {
  Fixture f;
  const auto prompt = vocabulary().report_prompt();
  DecodeOptions opt;
  opt.max_len = 6;
  const auto a = generate_report(f.params, f.cfg, f.image, prompt, opt);
  CHECK(a == generate_report(f.params, f.cfg, f.image, prompt, opt));
  CHECK(a.size() <= 6);

  // all-zero hidden states: every logit ties, lowest id wins every step
  f.zero("und.final_norm.weight");
  const auto ties = generate_report(f.params, f.cfg, f.image, prompt, opt);
  CHECK(ties == std::vector<std::size_t>(6, 0));

  opt.max_len = 0;
  CHECK_THROWS_AS(generate_report(f.params, f.cfg, f.image, prompt, opt), std::invalid_argument);
}

TEST_CASE("a model that predicts EOS first yields an empty report") {
  Fixture f;
  f.identity_layers();
  const auto prompt = vocabulary().report_prompt();
  // last hidden row is the normed embedding of the final prompt token
  const Tensor e = embedding(f.params.at("und.embed.weight"), std::vector<std::size_t>{prompt.back()});
  const Tensor h = rms_norm(e, f.params.at("und.final_norm.weight"));
  f.zero("und.lm_head.weight");
  auto head = f.params.at("und.lm_head.weight").mutable_data();
  for (std::size_t r = 0; r < f.cfg.backbone.model_dim; ++r) head[r * f.cfg.vocab_size + Vocabulary::kEos] = h.data()[r];
  CHECK(generate_report(f.params, f.cfg, f.image, prompt).empty());
}

TEST_CASE("sampled decoding is seeded") {
  Fixture f;
  const auto prompt = vocabulary().report_prompt();
  DecodeOptions opt;
  opt.mode = DecodeOptions::Mode::sample;
  opt.max_len = 8;
  opt.seed = 5;
  CHECK(generate_report(f.params, f.cfg, f.image, prompt, opt) == generate_report(f.params, f.cfg, f.image, prompt, opt));
  CHECK(argmax(std::vector<double>{1.0, 3.0, 3.0, 2.0}) == 1);
}
