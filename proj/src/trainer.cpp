#include "steerlab/trainer.hpp"

#include <cmath>
#include <map>

namespace steerlab {

namespace {

constexpr int kPad = Vocabulary::kPad;

// Per-sequence cross-entropy pieces: total NLL over scored positions and
// the count of scored positions. Targets equal to PAD, and predictions made
// from a PAD position, are skipped.
struct SequenceLoss {
  double nll = 0.0;
  int count = 0;
};

SequenceLoss sequence_loss(const Mat& logits, const std::vector<int>& tokens,
                           Mat* dlogits) {
  SequenceLoss out;
  const int T = static_cast<int>(tokens.size());
  if (dlogits) *dlogits = Mat::Zero(logits.rows(), logits.cols());
  for (int t = 0; t + 1 < T; ++t) {
    int target = tokens[t + 1];
    if (target == kPad || tokens[t] == kPad) continue;
    Eigen::ArrayXd z = logits.row(t).transpose().array();
    z -= z.maxCoeff();
    Eigen::ArrayXd e = z.exp();
    double sum = e.sum();
    out.nll += std::log(sum) - z(target);
    out.count += 1;
    if (dlogits) {
      dlogits->row(t) = (e / sum).matrix().transpose();
      (*dlogits)(t, target) -= 1.0;
    }
  }
  return out;
}

struct AdamState {
  std::vector<Vec> m, v;
  int64_t t = 0;
};

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || batch_size <= 0 || steps <= 0 ||
      !(clip_norm > 0) || log_every <= 0)
    fail("invalid-config", "train config fields must be positive");
  if (weight_decay < 0)
    fail("invalid-config", "weight decay must be non-negative");
}

std::pair<double, ModelParams> loss_and_grads(
    const ModelParams& params, const std::vector<std::vector<int>>& batch) {
  if (batch.empty()) fail("empty-input", "empty training batch");
  ModelParams grads = ModelParams::zeros_like(params);

  // First pass: total scored-token count, so each dlogits is scaled by the
  // final mean denominator in one sweep.
  std::vector<ForwardCache> caches;
  caches.reserve(batch.size());
  double total_nll = 0.0;
  int total_count = 0;
  std::vector<SequenceLoss> losses(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    caches.push_back(forward_with_cache(params, batch[i]));
    losses[i] = sequence_loss(caches[i].logits, batch[i], nullptr);
    if (!std::isfinite(losses[i].nll))
      fail("non-finite-loss",
           "non-finite loss at batch index " + std::to_string(i));
    total_nll += losses[i].nll;
    total_count += losses[i].count;
  }
  if (total_count == 0)
    fail("empty-input", "batch has no scorable positions");
  const double mean_loss = total_nll / total_count;

  for (size_t i = 0; i < batch.size(); ++i) {
    Mat dlogits;
    sequence_loss(caches[i].logits, batch[i], &dlogits);
    dlogits /= static_cast<double>(total_count);
    backward(params, caches[i], dlogits, grads);
  }
  return {mean_loss, std::move(grads)};
}

double batch_loss(const ModelParams& params,
                  const std::vector<std::vector<int>>& batch) {
  double nll = 0.0;
  int count = 0;
  for (const auto& seq : batch) {
    ForwardResult fr = forward(params, seq);
    SequenceLoss sl = sequence_loss(fr.logits, seq, nullptr);
    nll += sl.nll;
    count += sl.count;
  }
  if (count == 0) fail("empty-input", "batch has no scorable positions");
  return nll / count;
}

TrainResult train(ModelParams& params, const ParallelCorpus& corpus,
                  const TrainConfig& config) {
  config.validate();

  std::vector<std::vector<int>> train_data;
  for (int l = 0; l < corpus.n_languages(); ++l)
    for (const Sentence& s : corpus.dev[l])
      train_data.push_back(corpus.with_specials(s));
  if (train_data.empty()) fail("empty-input", "corpus has no dev sentences");

  // Held-out monitoring subsample: a few test sentences per language.
  std::vector<std::vector<int>> monitor;
  const int per_lang = std::min<int>(4, corpus.config.n_test);
  for (int l = 0; l < corpus.n_languages(); ++l)
    for (int i = 0; i < per_lang; ++i)
      monitor.push_back(corpus.with_specials(corpus.test[l][i]));

  AdamState adam;
  for_each_param(params, [&adam](const std::string&, const auto& arr) {
    adam.m.push_back(Vec::Zero(arr.size()));
    adam.v.push_back(Vec::Zero(arr.size()));
  });
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  Rng rng(mix_seed({config.seed, 0x747261696eull}));
  TrainResult result;
  double initial_loss = -1.0;
  int high_loss_streak = 0;

  for (int step = 1; step <= config.steps; ++step) {
    std::vector<std::vector<int>> batch;
    batch.reserve(config.batch_size);
    for (int i = 0; i < config.batch_size; ++i)
      batch.push_back(train_data[rng.below(train_data.size())]);

    auto [loss, grads] = loss_and_grads(params, batch);
    if (initial_loss < 0) initial_loss = loss;
    if (loss > 10.0 * initial_loss) {
      if (++high_loss_streak >= 500)
        fail("divergence",
             "training diverged: loss " + format_real(loss) + " > 10x initial " +
                 format_real(initial_loss) + " for 500 consecutive steps at step " +
                 std::to_string(step));
    } else {
      high_loss_streak = 0;
    }

    // Global-norm clip.
    double sq = 0.0;
    for_each_param(grads, [&sq](const std::string&, const auto& arr) {
      sq += arr.squaredNorm();
    });
    double norm = std::sqrt(sq);
    double gscale = norm > config.clip_norm ? config.clip_norm / norm : 1.0;

    adam.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam.t));
    // Walk params and grads in lockstep (same declared order).
    std::vector<std::pair<std::string, Eigen::Map<Vec>>> wviews, gviews;
    for_each_param(params, [&wviews](const std::string& name, auto& arr) {
      wviews.emplace_back(name, Eigen::Map<Vec>(arr.data(), arr.size()));
    });
    for_each_param(grads, [&gviews](const std::string& name, auto& arr) {
      gviews.emplace_back(name, Eigen::Map<Vec>(arr.data(), arr.size()));
    });
    for (size_t i = 0; i < wviews.size(); ++i) {
      auto& [name, w] = wviews[i];
      auto& g = gviews[i].second;
      Vec gc = g * gscale;
      adam.m[i] = beta1 * adam.m[i] + (1.0 - beta1) * gc;
      adam.v[i] =
          beta2 * adam.v[i].array() + (1.0 - beta2) * gc.array().square();
      Vec mhat = adam.m[i] / bc1;
      Vec vhat = adam.v[i] / bc2;
      // Decoupled weight decay on weight matrices; layer norms exempt.
      if (config.weight_decay > 0 && name.find("ln") == std::string::npos)
        w -= config.learning_rate * config.weight_decay * w;
      w.array() -=
          config.learning_rate * mhat.array() / (vhat.array().sqrt() + eps);
    }

    if (step % config.log_every == 0 || step == config.steps) {
      double test_ppl = std::exp(batch_loss(params, monitor));
      result.curve.push_back({step, loss, test_ppl});
    }
  }
  return result;
}

std::string loss_curve_csv(const TrainResult& result) {
  std::string out = "step,train_loss,test_ppl\n";
  for (const auto& p : result.curve)
    out += std::to_string(p.step) + "," + format_real(p.train_loss) + "," +
           format_real(p.test_ppl) + "\n";
  return out;
}

double unigram_perplexity(const ParallelCorpus& corpus,
                          const std::vector<std::vector<int>>& eval_batch) {
  std::vector<double> counts(corpus.vocab.size(), 1.0);  // add-1 smoothing
  double total = static_cast<double>(corpus.vocab.size());
  for (int l = 0; l < corpus.n_languages(); ++l)
    for (const Sentence& s : corpus.dev[l]) {
      auto seq = corpus.with_specials(s);
      for (size_t t = 1; t < seq.size(); ++t) {
        counts[seq[t]] += 1.0;
        total += 1.0;
      }
    }
  double nll = 0.0;
  int n = 0;
  for (const auto& seq : eval_batch)
    for (size_t t = 1; t < seq.size(); ++t) {
      if (seq[t] == Vocabulary::kPad || seq[t - 1] == Vocabulary::kPad)
        continue;
      nll -= std::log(counts[seq[t]] / total);
      n += 1;
    }
  if (n == 0) fail("empty-input", "no scorable positions");
  return std::exp(nll / n);
}

}  // namespace steerlab
