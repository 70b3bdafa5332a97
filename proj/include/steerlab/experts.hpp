#pragma once

#include <map>

#include "steerlab/corpus.hpp"
#include "steerlab/model.hpp"

namespace steerlab {

struct ExpertScore {
  NeuronId neuron;
  double auroc = 0.5;
};

// Full AUROC ranking of every candidate FFN neuron for one target language.
// Ranking is non-increasing in AUROC; ties break by (layer, unit) ascending.
struct ExpertSet {
  int target_language = 0;
  std::vector<ExpertScore> ranking;
};

// Exact rank-sum AUROC with midrank tie handling:
// P(pos > neg) + 0.5 * P(pos == neg) over all cross pairs.
double auroc(std::span<const double> positive_scores,
             std::span<const double> negative_scores);

// Per-sentence scalar response of one neuron: max activation over positions.
double sentence_response(const ActivationTrace& trace, NeuronId neuron);

ExpertSet find_experts(const ModelParams& params, const ParallelCorpus& corpus,
                       int target_language);

// Mean post-nonlinearity activation over all token positions of all
// positive (target dev) sentences, per requested neuron.
std::map<NeuronId, double> clamp_values(const ModelParams& params,
                                        const ParallelCorpus& corpus,
                                        int target_language,
                                        std::span<const NeuronId> neurons);

// Top-k experts by rank, each clamped to its mean value. k = 0 gives the
// empty spec (original model).
InterventionSpec build_intervention(const ExpertSet& experts, int k,
                                    const std::map<NeuronId, double>& values);

// Control: k distinct neurons sampled uniformly from the full candidate
// population; the i-th sampled neuron receives the clamp value of the i-th
// ranked expert.
InterventionSpec random_intervention(const ExpertSet& experts, int k,
                                     const std::map<NeuronId, double>& values,
                                     uint64_t rng_seed,
                                     const ModelConfig& config);

std::string expert_set_csv(const ExpertSet& experts,
                           const std::map<NeuronId, double>& values);
std::string intervention_jsonl(const InterventionSpec& spec);
InterventionSpec intervention_from_jsonl(const std::string& text);

}  // namespace steerlab
