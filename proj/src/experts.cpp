#include "steerlab/experts.hpp"

#include <algorithm>
#include <numeric>

#include "json.hpp"

namespace steerlab {

double auroc(std::span<const double> positive_scores,
             std::span<const double> negative_scores) {
  if (positive_scores.empty() || negative_scores.empty())
    fail("empty-input", "auroc requires non-empty score lists");
  const size_t n_pos = positive_scores.size();
  const size_t n_neg = negative_scores.size();
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> items;
  items.reserve(n_pos + n_neg);
  for (double s : positive_scores) items.push_back({s, true});
  for (double s : negative_scores) items.push_back({s, false});
  std::sort(items.begin(), items.end(),
            [](const Item& a, const Item& b) { return a.score < b.score; });

  // Midranks over tied groups; U statistic from the positive rank sum.
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < items.size()) {
    size_t j = i;
    while (j < items.size() && items[j].score == items[i].score) ++j;
    double midrank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (size_t t = i; t < j; ++t)
      if (items[t].positive) rank_sum_pos += midrank;
    i = j;
  }
  double u = rank_sum_pos -
             0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double sentence_response(const ActivationTrace& trace, NeuronId neuron) {
  if (neuron.layer < 0 ||
      neuron.layer >= static_cast<int>(trace.ffn_act.size()))
    fail("bad-neuron", "layer out of range");
  const Mat& act = trace.ffn_act[neuron.layer];
  if (neuron.unit < 0 || neuron.unit >= act.cols())
    fail("bad-neuron", "unit out of range");
  return act.col(neuron.unit).maxCoeff();
}

ExpertSet find_experts(const ModelParams& params, const ParallelCorpus& corpus,
                       int target_language) {
  PosNegSplit split = positive_negative_split(corpus, target_language);
  const int n_neurons = params.config.n_candidate_neurons();
  const int d_ffn = params.config.d_ffn;

  auto collect = [&](const std::vector<const Sentence*>& sentences) {
    Mat responses(sentences.size(), n_neurons);
    for (size_t i = 0; i < sentences.size(); ++i) {
      auto tokens = corpus.with_specials(*sentences[i]);
      ForwardResult fr = forward(params, tokens, {}, true);
      for (int l = 0; l < params.config.n_layers; ++l) {
        Eigen::RowVectorXd maxima = fr.trace->ffn_act[l].colwise().maxCoeff();
        responses.row(i).segment(l * d_ffn, d_ffn) = maxima;
      }
    }
    return responses;
  };
  Mat pos = collect(split.positives);
  Mat neg = collect(split.negatives);

  ExpertSet experts;
  experts.target_language = target_language;
  experts.ranking.resize(n_neurons);
  std::vector<double> pos_col(pos.rows()), neg_col(neg.rows());
  for (int n = 0; n < n_neurons; ++n) {
    for (Eigen::Index r = 0; r < pos.rows(); ++r) pos_col[r] = pos(r, n);
    for (Eigen::Index r = 0; r < neg.rows(); ++r) neg_col[r] = neg(r, n);
    experts.ranking[n] = {NeuronId{n / d_ffn, n % d_ffn},
                          auroc(pos_col, neg_col)};
  }
  std::stable_sort(experts.ranking.begin(), experts.ranking.end(),
                   [](const ExpertScore& a, const ExpertScore& b) {
                     if (a.auroc != b.auroc) return a.auroc > b.auroc;
                     return a.neuron < b.neuron;
                   });
  return experts;
}

std::map<NeuronId, double> clamp_values(const ModelParams& params,
                                        const ParallelCorpus& corpus,
                                        int target_language,
                                        std::span<const NeuronId> neurons) {
  PosNegSplit split = positive_negative_split(corpus, target_language);
  if (split.positives.empty())
    fail("empty-input", "no positive sentences for clamp values");
  for (NeuronId n : neurons)
    if (n.layer < 0 || n.layer >= params.config.n_layers || n.unit < 0 ||
        n.unit >= params.config.d_ffn)
      fail("bad-neuron", "neuron out of range in clamp_values");

  std::map<NeuronId, double> sums;
  for (NeuronId n : neurons) sums[n] = 0.0;
  int64_t total_positions = 0;
  for (const Sentence* s : split.positives) {
    auto tokens = corpus.with_specials(*s);
    ForwardResult fr = forward(params, tokens, {}, true);
    total_positions += static_cast<int64_t>(tokens.size());
    for (auto& [n, sum] : sums)
      sum += fr.trace->ffn_act[n.layer].col(n.unit).sum();
  }
  std::map<NeuronId, double> means;
  for (auto& [n, sum] : sums)
    means[n] = sum / static_cast<double>(total_positions);
  return means;
}

InterventionSpec build_intervention(const ExpertSet& experts, int k,
                                    const std::map<NeuronId, double>& values) {
  if (k < 0 || k > static_cast<int>(experts.ranking.size()))
    fail("invalid-config", "k out of range: " + std::to_string(k));
  std::vector<std::pair<NeuronId, double>> pairs;
  pairs.reserve(k);
  for (int i = 0; i < k; ++i) {
    NeuronId n = experts.ranking[i].neuron;
    auto it = values.find(n);
    if (it == values.end())
      fail("missing-clamp-value",
           "no clamp value for neuron (" + std::to_string(n.layer) + "," +
               std::to_string(n.unit) + ")");
    pairs.emplace_back(n, it->second);
  }
  return InterventionSpec::from_pairs(std::move(pairs));
}

InterventionSpec random_intervention(const ExpertSet& experts, int k,
                                     const std::map<NeuronId, double>& values,
                                     uint64_t rng_seed,
                                     const ModelConfig& config) {
  const int population = config.n_candidate_neurons();
  if (k < 0 || k > population)
    fail("invalid-config",
         "k exceeds candidate population: " + std::to_string(k));
  if (k > static_cast<int>(experts.ranking.size()))
    fail("invalid-config", "k exceeds expert ranking length");

  // Partial Fisher-Yates over the full candidate population.
  std::vector<int> ids(population);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(mix_seed({rng_seed, 0x72616e64ull}));
  std::vector<std::pair<NeuronId, double>> pairs;
  pairs.reserve(k);
  for (int i = 0; i < k; ++i) {
    size_t j = i + static_cast<size_t>(rng.below(population - i));
    std::swap(ids[i], ids[j]);
    NeuronId sampled{ids[i] / config.d_ffn, ids[i] % config.d_ffn};
    NeuronId expert = experts.ranking[i].neuron;
    auto it = values.find(expert);
    if (it == values.end())
      fail("missing-clamp-value", "no clamp value for ranked expert " +
                                      std::to_string(i));
    pairs.emplace_back(sampled, it->second);
  }
  return InterventionSpec::from_pairs(std::move(pairs));
}

std::string expert_set_csv(const ExpertSet& experts,
                           const std::map<NeuronId, double>& values) {
  std::string out = "rank,layer,unit,auroc,clamp_value\n";
  for (size_t i = 0; i < experts.ranking.size(); ++i) {
    const ExpertScore& e = experts.ranking[i];
    auto it = values.find(e.neuron);
    out += std::to_string(i) + "," + std::to_string(e.neuron.layer) + "," +
           std::to_string(e.neuron.unit) + "," + format_real(e.auroc) + "," +
           (it == values.end() ? std::string("") : format_real(it->second)) +
           "\n";
  }
  return out;
}

std::string intervention_jsonl(const InterventionSpec& spec) {
  std::string out;
  for (const auto& [n, v] : spec.clamps) {
    nlohmann::ordered_json rec;
    rec["layer"] = n.layer;
    rec["unit"] = n.unit;
    rec["value"] = v;
    out += rec.dump() + "\n";
  }
  return out;
}

InterventionSpec intervention_from_jsonl(const std::string& text) {
  std::vector<std::pair<NeuronId, double>> pairs;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    auto rec = nlohmann::ordered_json::parse(line);
    pairs.emplace_back(
        NeuronId{rec["layer"].get<int>(), rec["unit"].get<int>()},
        rec["value"].get<double>());
  }
  return InterventionSpec::from_pairs(std::move(pairs));
}

}  // namespace steerlab
