#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "steerlab/experts.hpp"

using namespace steerlab;
using V = std::vector<double>;

namespace {

// Brute-force pair-counting AUROC oracle.
double auroc_oracle(const std::vector<double>& pos,
                    const std::vector<double>& neg) {
  double score = 0.0;
  for (double p : pos)
    for (double n : neg) {
      if (p > n) score += 1.0;
      else if (p == n) score += 0.5;
    }
  return score / (pos.size() * neg.size());
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 0;  // set from corpus
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ffn = 12;
  c.context_length = 12;
  return c;
}

CorpusConfig tiny_corpus_config() {
  CorpusConfig c;
  c.seed = 7;
  c.n_languages = 3;
  c.n_dev = 4;
  c.n_test = 4;
  return c;
}

}  // namespace

TEST_SUITE_BEGIN("experts");

TEST_CASE("auroc hand cases") {
  CHECK(auroc(V{2.0, 3.0}, V{0.0, 1.0}) == doctest::Approx(1.0));
  CHECK(auroc(V{1.0, 1.0}, V{1.0, 1.0}) == doctest::Approx(0.5));
  CHECK(auroc(V{0.9, 0.4}, V{0.5, 0.1}) == doctest::Approx(0.75));
  CHECK(auroc(V{0.0, 1.0}, V{2.0, 3.0}) == doctest::Approx(0.0));
  CHECK_THROWS_AS(auroc(V{}, V{1.0}), Error);
  CHECK_THROWS_AS(auroc(V{1.0}, V{}), Error);
}

TEST_CASE("auroc equals the pair-counting oracle on random fixtures") {
  Rng rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    size_t np = 1 + rng.below(12), nn = 1 + rng.below(12);
    std::vector<double> pos(np), neg(nn);
    // Integer-valued draws force plenty of ties.
    for (double& v : pos) v = static_cast<double>(rng.below(6));
    for (double& v : neg) v = static_cast<double>(rng.below(6));
    CHECK(auroc(pos, neg) ==
          doctest::Approx(auroc_oracle(pos, neg)).epsilon(1e-12));
  }
}

TEST_CASE("auroc is invariant under strictly monotone transforms") {
  Rng rng(5);
  std::vector<double> pos(9), neg(7);
  for (double& v : pos) v = rng.normal();
  for (double& v : neg) v = rng.normal();
  double base = auroc(pos, neg);

  auto apply = [](std::vector<double> v, auto f) {
    for (double& x : v) x = f(x);
    return v;
  };
  auto expv = [](double x) { return std::exp(x); };
  auto affine = [](double x) { return 3.5 * x + 2.0; };
  CHECK(auroc(apply(pos, expv), apply(neg, expv)) ==
        doctest::Approx(base).epsilon(1e-12));
  CHECK(auroc(apply(pos, affine), apply(neg, affine)) ==
        doctest::Approx(base).epsilon(1e-12));
  // Complement under argument swap (ties are measure-zero for normals).
  CHECK(auroc(neg, pos) == doctest::Approx(1.0 - base).epsilon(1e-12));
}

TEST_CASE("sentence response is the max over positions") {
  ActivationTrace trace;
  trace.ffn_act.resize(1);
  trace.ffn_act[0] = Mat::Zero(3, 2);
  trace.ffn_act[0].col(1) << -1.0, 0.0, 4.0;
  trace.ffn_act[0].col(0).setConstant(2.5);
  CHECK(sentence_response(trace, {0, 1}) == doctest::Approx(4.0));
  CHECK(sentence_response(trace, {0, 0}) == doctest::Approx(2.5));
}

TEST_CASE("find_experts ranks the full candidate set") {
  ParallelCorpus corpus = generate_corpus(tiny_corpus_config());
  ModelConfig mc = tiny_config();
  mc.vocab_size = corpus.vocab.size();
  ModelParams params = ModelParams::init(mc, 11);
  ExpertSet experts = find_experts(params, corpus, 1);
  REQUIRE(static_cast<int>(experts.ranking.size()) ==
          mc.n_candidate_neurons());
  std::set<std::pair<int, int>> seen;
  for (const ExpertScore& e : experts.ranking)
    seen.insert({e.neuron.layer, e.neuron.unit});
  CHECK(static_cast<int>(seen.size()) == mc.n_candidate_neurons());
  for (size_t i = 1; i < experts.ranking.size(); ++i) {
    CHECK(experts.ranking[i - 1].auroc >= experts.ranking[i].auroc);
    if (experts.ranking[i - 1].auroc == experts.ranking[i].auroc)
      CHECK(experts.ranking[i - 1].neuron < experts.ranking[i].neuron);
  }

  // Oracle recomputation of each AUROC from raw traces.
  PosNegSplit split = positive_negative_split(corpus, 1);
  auto responses = [&](const std::vector<const Sentence*>& sents,
                       NeuronId n) {
    std::vector<double> out;
    for (const Sentence* s : sents) {
      ForwardResult r =
          forward(params, corpus.with_specials(*s), InterventionSpec{}, true);
      out.push_back(sentence_response(*r.trace, n));
    }
    return out;
  };
  for (size_t i = 0; i < experts.ranking.size(); i += 7) {
    NeuronId n = experts.ranking[i].neuron;
    double expect = auroc_oracle(responses(split.positives, n),
                                 responses(split.negatives, n));
    CHECK(experts.ranking[i].auroc ==
          doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("dead FFN gives all-tied ranking in (layer, unit) order") {
  ParallelCorpus corpus = generate_corpus(tiny_corpus_config());
  ModelConfig mc = tiny_config();
  mc.vocab_size = corpus.vocab.size();
  ModelParams params = ModelParams::init(mc, 11);
  for (LayerParams& l : params.layers) l.w1.setZero();
  ExpertSet experts = find_experts(params, corpus, 0);
  int idx = 0;
  for (const ExpertScore& e : experts.ranking) {
    CHECK(e.auroc == doctest::Approx(0.5));
    CHECK(e.neuron.layer == idx / mc.d_ffn);
    CHECK(e.neuron.unit == idx % mc.d_ffn);
    ++idx;
  }
}

TEST_CASE("clamp values are token-weighted means over positives only") {
  ParallelCorpus corpus = generate_corpus(tiny_corpus_config());
  ModelConfig mc = tiny_config();
  mc.vocab_size = corpus.vocab.size();
  ModelParams params = ModelParams::init(mc, 11);
  std::vector<NeuronId> neurons = {{0, 0}, {1, 5}};
  auto values = clamp_values(params, corpus, 2, neurons);

  PosNegSplit split = positive_negative_split(corpus, 2);
  for (NeuronId n : neurons) {
    double sum = 0.0;
    int count = 0;
    for (const Sentence* s : split.positives) {
      ForwardResult r =
          forward(params, corpus.with_specials(*s), InterventionSpec{}, true);
      for (int pos = 0; pos < r.trace->ffn_act[n.layer].rows(); ++pos) {
        sum += r.trace->value(n, pos);
        ++count;
      }
    }
    CHECK(values.at(n) == doctest::Approx(sum / count).epsilon(1e-12));
  }
}

TEST_CASE("build_intervention takes the top-k ranked experts") {
  ExpertSet experts;
  experts.ranking = {{{1, 2}, 0.9}, {{0, 7}, 0.8}, {{0, 1}, 0.7}};
  std::map<NeuronId, double> values = {
      {{1, 2}, 4.0}, {{0, 7}, 5.0}, {{0, 1}, 6.0}};
  CHECK(build_intervention(experts, 0, values).empty());
  InterventionSpec spec = build_intervention(experts, 2, values);
  REQUIRE(spec.size() == 2);
  // Clamps are stored sorted by neuron id.
  CHECK(spec.clamps[0].first == NeuronId{0, 7});
  CHECK(spec.clamps[0].second == doctest::Approx(5.0));
  CHECK(spec.clamps[1].first == NeuronId{1, 2});
  CHECK(spec.clamps[1].second == doctest::Approx(4.0));
  CHECK(build_intervention(experts, 3, values).size() == 3);
  CHECK_THROWS_AS(build_intervention(experts, 4, values), Error);
  values.erase(NeuronId{0, 7});
  CHECK_THROWS_AS(build_intervention(experts, 2, values), Error);
}

TEST_CASE("random control matches k, distinctness, and value multiset") {
  ModelConfig mc = tiny_config();
  mc.vocab_size = 32;
  ExpertSet experts;
  std::map<NeuronId, double> values;
  for (int i = 0; i < 6; ++i) {
    NeuronId n{i / mc.d_ffn, i % mc.d_ffn};
    experts.ranking.push_back({n, 1.0 - 0.01 * i});
    values[n] = 10.0 + i;
  }
  InterventionSpec expert_spec = build_intervention(experts, 5, values);
  InterventionSpec random_spec = random_intervention(experts, 5, values, 3, mc);
  REQUIRE(random_spec.size() == 5);

  auto value_multiset = [](const InterventionSpec& s) {
    std::vector<double> v;
    for (const auto& [n, val] : s.clamps) v.push_back(val);
    std::sort(v.begin(), v.end());
    return v;
  };
  CHECK(value_multiset(random_spec) == value_multiset(expert_spec));
  InterventionSpec again = random_intervention(experts, 5, values, 3, mc);
  CHECK(again.clamps == random_spec.clamps);
  InterventionSpec other = random_intervention(experts, 5, values, 4, mc);
  CHECK(other.clamps != random_spec.clamps);
  CHECK_THROWS_AS(
      random_intervention(experts, mc.n_candidate_neurons() + 1, values, 3,
                          mc),
      Error);
}

TEST_CASE("expert CSV and intervention JSONL round-trip") {
  ExpertSet experts;
  experts.target_language = 1;
  experts.ranking = {{{1, 2}, 0.9375}, {{0, 7}, 0.8125}};
  std::map<NeuronId, double> values = {{{1, 2}, 4.5}, {{0, 7}, -0.25}};
  std::string csv = expert_set_csv(experts, values);
  CHECK(csv.rfind("rank,layer,unit,auroc,clamp_value\n", 0) == 0);
  CHECK(csv.find("0,1,2,0.9375,4.5") != std::string::npos);

  InterventionSpec spec = build_intervention(experts, 2, values);
  InterventionSpec back = intervention_from_jsonl(intervention_jsonl(spec));
  CHECK(back.clamps == spec.clamps);
}

TEST_SUITE_END();
