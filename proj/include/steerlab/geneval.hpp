#pragma once

#include <functional>
#include <optional>

#include "steerlab/corpus.hpp"
#include "steerlab/experts.hpp"
#include "steerlab/model.hpp"

namespace steerlab {

// Word-level multinomial language classifier with add-1 smoothing, fitted
// on dev splits only.
struct LangIdModel {
  int vocab_size = 0;
  std::vector<std::vector<double>> log_prob;  // [language][token]

  static LangIdModel fit(const ParallelCorpus& corpus);
};

// Argmax of summed per-token log-likelihood; ties pick the lowest language
// index. Empty input is an error.
int classify_language(std::span<const int> tokens, const LangIdModel& langid);

struct GenEvalConfig {
  int n_samples = 64;
  int n_seeds = 4;
  uint64_t base_seed = 1234;
  int max_len = 16;
  double temperature = 1.0;
  double top_p = 0.9;
};

// Fraction of BOS-prompted generations classified as the target language,
// pooled over seeds.
double langid_accuracy(const ModelParams& params,
                       const InterventionSpec& intervention, int target,
                       const LangIdModel& langid, const GenEvalConfig& config);

// Scores a window of tokens: entry i is log P(window[i+1] | window[0..i]).
// Returned vector has window.size() - 1 entries.
using TokenScorer =
    std::function<std::vector<double>(std::span<const int> window)>;

// Sliding-window perplexity: windows advance by `stride`; every stream
// token is scored exactly once with the longest available left context
// within its window (a BOS anchor is prepended so the first token is
// scorable too).
double strided_perplexity(const TokenScorer& scorer,
                          std::span<const int> stream, int context,
                          int stride);

TokenScorer model_scorer(const ModelParams& params,
                         const InterventionSpec& intervention);
double model_perplexity(const ModelParams& params,
                        const InterventionSpec& intervention,
                        std::span<const int> stream, int context, int stride);

struct SweepRow {
  int k = 0;
  double langid_accuracy = 0.0;
  double log_perplexity = 0.0;
};

struct SweepResult {
  int target = 0;
  std::vector<SweepRow> rows;          // ascending k
  std::optional<int> chosen_k;         // empty for the {0}-only grid
};

// Balance rule: chosen k is the smallest grid value whose language-ID
// accuracy reaches 90% of the grid maximum.
std::optional<int> choose_k(const std::vector<SweepRow>& rows);

SweepResult sweep_k(const ModelParams& params, const ExpertSet& experts,
                    const std::map<NeuronId, double>& values,
                    const ParallelCorpus& corpus, const LangIdModel& langid,
                    std::vector<int> grid, const GenEvalConfig& gen_config,
                    int ppl_stride);

std::string sweep_csv(const SweepResult& sweep, const ParallelCorpus& corpus);

// Concatenated target-language test split: per sentence, content tokens
// followed by EOS. Used as the perplexity stream.
std::vector<int> test_token_stream(const ParallelCorpus& corpus, int language);

}  // namespace steerlab
