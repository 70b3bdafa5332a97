#include "steerlab/geneval.hpp"

#include <algorithm>
#include <cmath>

namespace steerlab {

LangIdModel LangIdModel::fit(const ParallelCorpus& corpus) {
  LangIdModel m;
  m.vocab_size = corpus.vocab.size();
  m.log_prob.resize(corpus.n_languages());
  for (int l = 0; l < corpus.n_languages(); ++l) {
    std::vector<double> counts(m.vocab_size, 1.0);  // add-1 smoothing
    double total = static_cast<double>(m.vocab_size);
    for (const Sentence& s : corpus.dev[l])
      for (int t : s.token_ids) {
        counts[t] += 1.0;
        total += 1.0;
      }
    m.log_prob[l].resize(m.vocab_size);
    for (int t = 0; t < m.vocab_size; ++t)
      m.log_prob[l][t] = std::log(counts[t] / total);
  }
  return m;
}

int classify_language(std::span<const int> tokens, const LangIdModel& langid) {
  if (tokens.empty()) fail("empty-input", "cannot classify empty text");
  if (langid.log_prob.empty()) fail("empty-input", "langid model not fitted");
  int best = 0;
  double best_ll = -std::numeric_limits<double>::infinity();
  for (size_t l = 0; l < langid.log_prob.size(); ++l) {
    double ll = 0.0;
    for (int t : tokens) {
      if (t < 0 || t >= langid.vocab_size)
        fail("bad-token", "token id out of range: " + std::to_string(t));
      ll += langid.log_prob[l][t];
    }
    if (ll > best_ll) {  // strict: ties keep the lowest language index
      best_ll = ll;
      best = static_cast<int>(l);
    }
  }
  return best;
}

double langid_accuracy(const ModelParams& params,
                       const InterventionSpec& intervention, int target,
                       const LangIdModel& langid,
                       const GenEvalConfig& config) {
  const std::vector<int> prompt = {Vocabulary::kBos};
  int hits = 0, total = 0;
  for (int s = 0; s < config.n_seeds; ++s) {
    for (int i = 0; i < config.n_samples; ++i) {
      uint64_t seed = mix_seed({config.base_seed, static_cast<uint64_t>(s),
                                static_cast<uint64_t>(i)});
      std::vector<int> gen =
          generate(params, prompt, intervention, config.temperature,
                   config.top_p, config.max_len, seed, Vocabulary::kEos);
      // Strip specials before classification.
      std::vector<int> content;
      for (int t : gen)
        if (t != Vocabulary::kBos && t != Vocabulary::kEos &&
            t != Vocabulary::kPad)
          content.push_back(t);
      total += 1;
      if (!content.empty() && classify_language(content, langid) == target)
        hits += 1;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / total;
}

double strided_perplexity(const TokenScorer& scorer,
                          std::span<const int> stream, int context,
                          int stride) {
  if (stream.size() < 2)
    fail("empty-input", "perplexity stream must have at least 2 tokens");
  if (context < 2) fail("invalid-config", "context must be >= 2");
  if (stride < 1 || stride > context)
    fail("invalid-config", "stride must be in [1, context]");

  // Extended stream with a BOS anchor so position 0 of the stream has a
  // conditioning token.
  std::vector<int> ext;
  ext.reserve(stream.size() + 1);
  ext.push_back(Vocabulary::kBos);
  ext.insert(ext.end(), stream.begin(), stream.end());
  const int n = static_cast<int>(ext.size());

  // Window at start s covers targets s+1 .. s+context; its last token is
  // target-only, so the conditioning input never exceeds `context` tokens.
  double nll = 0.0;
  int64_t scored = 0;
  int next_to_score = 1;  // extended index of the next unscored token
  for (int start = 0; next_to_score < n; start += stride) {
    int end = std::min(start + context + 1, n);  // window = ext[start, end)
    if (end <= next_to_score) continue;          // window entirely behind
    std::span<const int> window(ext.data() + start, end - start);
    std::vector<double> lp = scorer(window);
    if (static_cast<int>(lp.size()) != end - start - 1)
      fail("bad-scorer", "scorer returned wrong number of log-probs");
    for (int pos = std::max(next_to_score, start + 1); pos < end; ++pos) {
      nll -= lp[pos - start - 1];
      scored += 1;
    }
    next_to_score = end;
  }
  if (scored != static_cast<int64_t>(stream.size()))
    fail("internal", "perplexity did not score every token exactly once");
  return std::exp(nll / static_cast<double>(scored));
}

TokenScorer model_scorer(const ModelParams& params,
                         const InterventionSpec& intervention) {
  return [&params, intervention](std::span<const int> window) {
    // The final window token is target-only; the model input is the window
    // minus its last token, which keeps the input within context length.
    ForwardResult fr =
        forward(params, window.first(window.size() - 1), intervention, false);
    std::vector<double> lp(window.size() - 1);
    for (size_t i = 0; i + 1 < window.size(); ++i) {
      Eigen::ArrayXd z = fr.logits.row(i).transpose().array();
      z -= z.maxCoeff();
      lp[i] = z(window[i + 1]) - std::log(z.exp().sum());
    }
    return lp;
  };
}

double model_perplexity(const ModelParams& params,
                        const InterventionSpec& intervention,
                        std::span<const int> stream, int context, int stride) {
  if (context > params.config.context_length)
    fail("invalid-config", "perplexity context exceeds model context length");
  return strided_perplexity(model_scorer(params, intervention), stream,
                            context, stride);
}

std::optional<int> choose_k(const std::vector<SweepRow>& rows) {
  if (rows.empty()) fail("empty-input", "empty sweep grid");
  if (rows.size() == 1) return std::nullopt;  // baseline-only grid
  double max_acc = 0.0;
  for (const SweepRow& r : rows) max_acc = std::max(max_acc, r.langid_accuracy);
  for (const SweepRow& r : rows)
    if (r.langid_accuracy >= 0.9 * max_acc) return r.k;
  return std::nullopt;
}

std::vector<int> test_token_stream(const ParallelCorpus& corpus,
                                   int language) {
  std::vector<int> stream;
  for (const Sentence& s : corpus.test[language]) {
    stream.insert(stream.end(), s.token_ids.begin(), s.token_ids.end());
    stream.push_back(Vocabulary::kEos);
  }
  return stream;
}

SweepResult sweep_k(const ModelParams& params, const ExpertSet& experts,
                    const std::map<NeuronId, double>& values,
                    const ParallelCorpus& corpus, const LangIdModel& langid,
                    std::vector<int> grid, const GenEvalConfig& gen_config,
                    int ppl_stride) {
  if (grid.empty()) fail("empty-input", "empty sweep grid");
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  if (grid.front() != 0)
    fail("invalid-config", "sweep grid must include k = 0");

  std::vector<int> stream = test_token_stream(corpus, experts.target_language);
  const int context = params.config.context_length;

  SweepResult result;
  result.target = experts.target_language;
  for (int k : grid) {
    InterventionSpec iv = build_intervention(experts, k, values);
    SweepRow row;
    row.k = k;
    row.langid_accuracy = langid_accuracy(params, iv, experts.target_language,
                                          langid, gen_config);
    row.log_perplexity =
        std::log(model_perplexity(params, iv, stream, context, ppl_stride));
    result.rows.push_back(row);
  }
  result.chosen_k = choose_k(result.rows);
  return result;
}

std::string sweep_csv(const SweepResult& sweep, const ParallelCorpus& corpus) {
  std::string out = "target,k,langid_accuracy,log_perplexity\n";
  const std::string& code = corpus.languages[sweep.target].code;
  for (const SweepRow& r : sweep.rows)
    out += code + "," + std::to_string(r.k) + "," +
           format_real(r.langid_accuracy) + "," + format_real(r.log_perplexity) +
           "\n";
  return out;
}

}  // namespace steerlab
