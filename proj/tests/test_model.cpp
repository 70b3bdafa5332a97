#include <doctest.h>

#include <cmath>

#include "steerlab/model.hpp"

using namespace steerlab;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 11;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ffn = 12;
  c.context_length = 9;
  return c;
}

std::vector<int> tokens() { return {0, 3, 7, 4, 9, 1}; }

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("config validation") {
  ModelConfig c = tiny_config();
  c.n_heads = 3;  // 8 % 3 != 0
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny_config();
  c.d_ffn = 4;  // < d_model
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny_config();
  c.d_model = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("intervention spec validation") {
  InterventionSpec spec = InterventionSpec::from_pairs({{{0, 3}, 1.0}});
  spec.validate(tiny_config());
  CHECK_THROWS_AS(InterventionSpec::from_pairs({{{0, 3}, 1.0}, {{0, 3}, 2.0}}),
                  Error);
  InterventionSpec bad = InterventionSpec::from_pairs({{{5, 0}, 1.0}});
  CHECK_THROWS_AS(bad.validate(tiny_config()), Error);
  bad = InterventionSpec::from_pairs({{{0, 99}, 1.0}});
  CHECK_THROWS_AS(bad.validate(tiny_config()), Error);
}

TEST_CASE("empty intervention equals plain forward bit-for-bit") {
  ModelParams params = ModelParams::init(tiny_config(), 5);
  ForwardResult plain = forward(params, tokens());
  ForwardResult hooked = forward(params, tokens(), InterventionSpec{}, true);
  CHECK((plain.logits.array() == hooked.logits.array()).all());
  CHECK(hooked.trace.has_value());
  CHECK(!plain.trace.has_value());
}

TEST_CASE("forward input validation") {
  ModelParams params = ModelParams::init(tiny_config(), 5);
  CHECK_THROWS_AS(forward(params, std::vector<int>{}), Error);
  CHECK_THROWS_AS(forward(params, std::vector<int>{0, 99}), Error);
  CHECK_THROWS_AS(forward(params, std::vector<int>(20, 1)), Error);
  ModelParams broken = params;
  broken.w_out(0, 0) = std::nan("");
  CHECK_THROWS_AS(forward(broken, tokens()), Error);
}

TEST_CASE("clamped neuron reads back its value everywhere") {
  ModelParams params = ModelParams::init(tiny_config(), 5);
  InterventionSpec spec = InterventionSpec::from_pairs({{{0, 3}, 1.7}});
  ForwardResult r = forward(params, tokens(), spec, true);
  REQUIRE(r.trace.has_value());
  for (size_t pos = 0; pos < tokens().size(); ++pos)
    CHECK(r.trace->value({0, 3}, static_cast<int>(pos)) == 1.7);
}

TEST_CASE("clamping a connected neuron changes some logit") {
  ModelParams params = ModelParams::init(tiny_config(), 5);
  REQUIRE(params.layers[0].w2.row(3).norm() > 0.0);
  InterventionSpec spec = InterventionSpec::from_pairs({{{0, 3}, 10.0}});
  ForwardResult plain = forward(params, tokens());
  ForwardResult clamped = forward(params, tokens(), spec);
  CHECK((plain.logits - clamped.logits).norm() > 0.0);
}

TEST_CASE("clamp locality: earlier layers are untouched") {
  ModelParams params = ModelParams::init(tiny_config(), 5);
  InterventionSpec spec = InterventionSpec::from_pairs({{{1, 2}, 5.0}});
  ForwardResult plain = forward(params, tokens(), InterventionSpec{}, true);
  ForwardResult clamped = forward(params, tokens(), spec, true);
  CHECK((plain.trace->ffn_act[0].array() ==
         clamped.trace->ffn_act[0].array())
            .all());
  CHECK((plain.trace->ffn_act[1] - clamped.trace->ffn_act[1]).norm() > 0.0);
}

TEST_CASE("same spec applied again gives the identical forward") {
  ModelParams params = ModelParams::init(tiny_config(), 5);
  InterventionSpec spec = InterventionSpec::from_pairs({{{0, 1}, 0.5}});
  ForwardResult a = forward(params, tokens(), spec);
  ForwardResult b = forward(params, tokens(), spec);
  CHECK((a.logits.array() == b.logits.array()).all());
}

TEST_CASE("causality: later tokens cannot affect earlier logits") {
  ModelParams params = ModelParams::init(tiny_config(), 5);
  std::vector<int> a = tokens();
  std::vector<int> b = a;
  b.back() = 2;
  REQUIRE(a.back() != b.back());
  ForwardResult ra = forward(params, a);
  ForwardResult rb = forward(params, b);
  for (size_t pos = 0; pos + 1 < a.size(); ++pos)
    CHECK((ra.logits.row(pos).array() == rb.logits.row(pos).array()).all());
  CHECK((ra.logits.row(a.size() - 1) - rb.logits.row(a.size() - 1)).norm() >
        0.0);
}

TEST_CASE("attention rows are probability distributions") {
  ModelParams params = ModelParams::init(tiny_config(), 5);
  ForwardCache cache = forward_with_cache(params, tokens());
  for (const LayerCache& lc : cache.layers)
    for (const Mat& head : lc.probs)
      for (Eigen::Index r = 0; r < head.rows(); ++r) {
        CHECK(head.row(r).sum() == doctest::Approx(1.0).epsilon(1e-6));
        // causal mask: no mass on future positions
        for (Eigen::Index c = r + 1; c < head.cols(); ++c)
          CHECK(head(r, c) == 0.0);
        CHECK(head.row(r).minCoeff() >= 0.0);
      }
}

TEST_CASE("embed_sentence is the mean of final hidden states") {
  ModelParams params = ModelParams::init(tiny_config(), 5);
  ForwardResult r = forward(params, tokens(), InterventionSpec{}, true);
  Vec manual = r.trace->last_hidden.colwise().mean().transpose();
  Vec emb = embed_sentence(params, tokens());
  CHECK((manual - emb).norm() == 0.0);

  std::vector<int> one = {4};
  ForwardResult r1 = forward(params, one, InterventionSpec{}, true);
  Vec e1 = embed_sentence(params, one);
  CHECK((r1.trace->last_hidden.row(0).transpose() - e1).norm() == 0.0);

  CHECK_THROWS_AS(embed_sentence(params, std::vector<int>{}), Error);

  InterventionSpec spec = InterventionSpec::from_pairs({{{0, 0}, 8.0}});
  Vec steered = embed_sentence(params, tokens(), spec);
  CHECK((steered - emb).norm() > 0.0);
}

TEST_CASE("nucleus sampling keeps exactly the top-p prefix") {
  Vec probs(3);
  probs << 0.6, 0.3, 0.1;
  Rng rng(42);
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < 10000; ++i) ++counts[nucleus_sample(probs, 0.8, rng)];
  CHECK(counts[2] == 0);  // 0.6 + 0.3 >= 0.8 already
  CHECK(counts[0] > counts[1]);
  CHECK(counts[1] > 0);

  // top_p -> 0+ degenerates to greedy
  Rng greedy(7);
  for (int i = 0; i < 100; ++i)
    CHECK(nucleus_sample(probs, 1e-12, greedy) == 0);
}

TEST_CASE("generation is deterministic and bounded") {
  ModelParams params = ModelParams::init(tiny_config(), 5);
  std::vector<int> prompt = {0};
  std::vector<int> a = generate(params, prompt, {}, 1.0, 0.9, 6, 77, 1);
  std::vector<int> b = generate(params, prompt, {}, 1.0, 0.9, 6, 77, 1);
  CHECK(a == b);
  CHECK(a.size() <= 6);
  std::vector<int> c = generate(params, prompt, {}, 1.0, 0.9, 6, 78, 1);
  // Different seed; usually differs on a random model (not asserted).
  CHECK_THROWS_AS(generate(params, prompt, {}, 0.0, 0.9, 6, 1, 1), Error);
  CHECK_THROWS_AS(generate(params, prompt, {}, 1.0, 0.0, 6, 1, 1), Error);
  CHECK_THROWS_AS(generate(params, prompt, {}, 1.0, 1.5, 6, 1, 1), Error);
}

TEST_CASE("weight persistence round-trips bit-exactly at f32") {
  ModelParams params = ModelParams::init(tiny_config(), 5);
  std::filesystem::path path =
      std::filesystem::temp_directory_path() / "steerlab_model_test.bin";
  save_model(params, path);
  ModelParams loaded = load_model(path);
  CHECK(loaded.config == params.config);
  // Saved weights are f32; saving the loaded model must reproduce the file.
  std::filesystem::path path2 =
      std::filesystem::temp_directory_path() / "steerlab_model_test2.bin";
  save_model(loaded, path2);
  CHECK(read_file(path) == read_file(path2));

  std::string bytes = read_file(path);
  write_file(path, bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_model(path), Error);
  write_file(path, bytes + "x");
  CHECK_THROWS_AS(load_model(path), Error);
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_SUITE_END();
