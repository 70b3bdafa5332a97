#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "steerlab/common.hpp"

namespace steerlab {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct ModelConfig {
  int vocab_size = 512;
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int d_ffn = 512;
  int context_length = 64;
  void validate() const;
  int n_candidate_neurons() const { return n_layers * d_ffn; }
  bool operator==(const ModelConfig&) const = default;
};

struct NeuronId {
  int layer = 0;
  int unit = 0;
  auto operator<=>(const NeuronId&) const = default;
};

// Map neuron -> clamp value, applied to the post-nonlinearity FFN
// activation at every token position before the down-projection.
struct InterventionSpec {
  std::vector<std::pair<NeuronId, double>> clamps;  // sorted, unique neurons

  static InterventionSpec from_pairs(
      std::vector<std::pair<NeuronId, double>> pairs);
  bool empty() const { return clamps.empty(); }
  size_t size() const { return clamps.size(); }
  void validate(const ModelConfig& config) const;
};

struct LayerParams {
  Vec ln1_g, ln1_b, ln2_g, ln2_b;
  Mat wq, wk, wv, wo;  // d_model x d_model
  Mat w1;              // d_model x d_ffn
  Mat w2;              // d_ffn x d_model
};

// Pre-LN decoder-only transformer; GELU FFN, learned positions, no biases
// on the linear maps, untied output projection.
struct ModelParams {
  ModelConfig config;
  Mat tok_emb;  // vocab x d_model
  Mat pos_emb;  // context x d_model
  std::vector<LayerParams> layers;
  Vec lnf_g, lnf_b;
  Mat w_out;  // d_model x vocab

  static ModelParams init(const ModelConfig& config, uint64_t seed);
  static ModelParams zeros_like(const ModelParams& other);
  void validate_finite() const;
};

// Visits every parameter array in declared (= serialized) order.
template <class Params, class F>
void for_each_param(Params& p, F&& f) {
  f("tok_emb", p.tok_emb);
  f("pos_emb", p.pos_emb);
  for (size_t l = 0; l < p.layers.size(); ++l) {
    auto& layer = p.layers[l];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    f(prefix + "ln1_g", layer.ln1_g);
    f(prefix + "ln1_b", layer.ln1_b);
    f(prefix + "wq", layer.wq);
    f(prefix + "wk", layer.wk);
    f(prefix + "wv", layer.wv);
    f(prefix + "wo", layer.wo);
    f(prefix + "ln2_g", layer.ln2_g);
    f(prefix + "ln2_b", layer.ln2_b);
    f(prefix + "w1", layer.w1);
    f(prefix + "w2", layer.w2);
  }
  f("lnf_g", p.lnf_g);
  f("lnf_b", p.lnf_b);
  f("w_out", p.w_out);
}

struct ActivationTrace {
  std::vector<Mat> ffn_act;  // per layer: T x d_ffn, post-GELU, post-clamp
  Mat last_hidden;           // T x d_model, after the final layer norm
  double value(NeuronId n, int position) const {
    return ffn_act[n.layer](position, n.unit);
  }
};

// Per-sequence intermediates kept for the backward pass.
struct LayerCache {
  Mat x_in;               // input to the block
  Mat a, a_hat;           // LN1 output and normalized input
  Vec a_inv;              // LN1 per-row 1/std
  Mat q, k, v;            // T x d_model
  std::vector<Mat> probs; // per head: T x T attention rows
  Mat attn_concat;        // T x d_model, heads concatenated
  Mat x_mid;              // after attention residual
  Mat b, b_hat;
  Vec b_inv;
  Mat u, g;               // FFN pre-activation / post-GELU (post-clamp)
};

struct ForwardCache {
  std::vector<int> tokens;
  Mat x0;
  std::vector<LayerCache> layers;
  Mat x_final;
  Mat h, h_hat;  // final LN output / normalized
  Vec h_inv;
  Mat logits;  // T x vocab
};

struct ForwardResult {
  Mat logits;  // T x vocab
  std::optional<ActivationTrace> trace;
};

ForwardResult forward(const ModelParams& params, std::span<const int> tokens,
                      const InterventionSpec& intervention = {},
                      bool capture = false);

// Forward keeping all intermediates; used by the trainer.
ForwardCache forward_with_cache(const ModelParams& params,
                                std::span<const int> tokens,
                                const InterventionSpec& intervention = {});

// Accumulates dLoss/dParams into `grads` given dLoss/dLogits.
void backward(const ModelParams& params, const ForwardCache& cache,
              const Mat& dlogits, ModelParams& grads);

// Mean over token positions of the final-layer-norm hidden states.
Vec embed_sentence(const ModelParams& params, std::span<const int> tokens,
                   const InterventionSpec& intervention = {});

// Nucleus sampling step over an explicit probability vector: keep the
// smallest probability-sorted prefix with cumulative mass >= top_p,
// renormalize, sample. Ties sort by lower token index first.
int nucleus_sample(const Vec& probs, double top_p, Rng& rng);

// Autoregressive sampling from `prompt`; returns generated continuation
// (without the prompt), including the terminating EOS when produced.
std::vector<int> generate(const ModelParams& params,
                          std::span<const int> prompt,
                          const InterventionSpec& intervention,
                          double temperature, double top_p, int max_len,
                          uint64_t rng_seed, int eos_token);

// Flat binary weight format: magic, version, config, then float32
// little-endian arrays in declared order.
void save_model(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_model(const std::filesystem::path& path);

}  // namespace steerlab
