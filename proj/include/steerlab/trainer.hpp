#pragma once

#include "steerlab/corpus.hpp"
#include "steerlab/model.hpp"

namespace steerlab {

struct TrainConfig {
  double learning_rate = 3e-4;
  int batch_size = 32;
  int steps = 20000;
  double weight_decay = 0.01;
  uint64_t seed = 1;
  double clip_norm = 1.0;
  int log_every = 100;
  void validate() const;
};

struct LossCurvePoint {
  int step;
  double train_loss;
  double test_ppl;
};

struct TrainResult {
  std::vector<LossCurvePoint> curve;
};

// Mean next-token cross-entropy over non-PAD targets plus full analytic
// gradients. Sequences may be ragged; PAD positions are masked from the
// loss and contribute zero gradient.
std::pair<double, ModelParams> loss_and_grads(
    const ModelParams& params, const std::vector<std::vector<int>>& batch);

// Mean cross-entropy only (no gradients); used for evaluation curves.
double batch_loss(const ModelParams& params,
                  const std::vector<std::vector<int>>& batch);

// Adam training on the concatenated dev splits of all languages. The test
// split is never sampled; it is only scored for the monitoring column of
// the loss curve.
TrainResult train(ModelParams& params, const ParallelCorpus& corpus,
                  const TrainConfig& config);

std::string loss_curve_csv(const TrainResult& result);

// Unigram-model perplexity baseline computed from corpus counts.
double unigram_perplexity(const ParallelCorpus& corpus,
                          const std::vector<std::vector<int>>& eval_batch);

}  // namespace steerlab
