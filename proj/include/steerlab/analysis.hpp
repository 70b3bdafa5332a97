#pragma once

#include <array>
#include <optional>

#include "steerlab/corpus.hpp"
#include "steerlab/model.hpp"

namespace steerlab {

// 1 - cos(u, v); errors on zero vectors.
double cosine_distance(const Vec& u, const Vec& v);

struct EmbeddingState {
  enum Kind { Pre, Post, Random } kind = Pre;
  int target = -1;    // intervention target language (Post/Random)
  int k = 0;          // intervention size
  uint64_t seed = 0;  // Random only
  std::string label() const;
};

// Per-language test-sentence embeddings for one model state; rows are
// index-aligned to template ids across languages.
struct EmbeddingSet {
  EmbeddingState state;
  std::vector<Mat> per_language;  // [n_test x d_model] each
};

EmbeddingSet build_embedding_set(const ModelParams& params,
                                 const ParallelCorpus& corpus,
                                 const InterventionSpec& intervention,
                                 const EmbeddingState& state);

// Paraphrase-pair embeddings for one language under one model state.
struct ParaphraseEmbeddings {
  EmbeddingState state;
  int language = 0;
  Mat first;   // queries
  Mat second;  // candidates
};

ParaphraseEmbeddings embed_paraphrases(const ModelParams& params,
                                       const ParallelCorpus& corpus,
                                       const InterventionSpec& intervention,
                                       int language,
                                       const EmbeddingState& state);

enum class PairwiseMode { AlignedPairs, MeanVectors };

struct DistanceReport {
  Mat pairwise;                   // L x L, symmetric, zero diagonal
  std::vector<double> to_medoid;  // distance of each language mean to medoid
  std::vector<double> to_target;  // pairwise distance to the target language
  int medoid_language = 0;
  double mean_pairwise() const;   // mean over off-diagonal entries
};

// pairwise(a, b): mean cosine distance over index-aligned sentence pairs
// (AlignedPairs) or distance between language mean vectors (MeanVectors).
// Medoid = the language mean minimizing summed cosine distance to the other
// language means; ties pick the lowest language index.
DistanceReport distance_report(const EmbeddingSet& set, int target,
                               PairwiseMode mode = PairwiseMode::AlignedPairs);

// Top-1 retrieval by raw inner product (deliberately not cosine); rows are
// aligned, gold answer = same row index; ties pick the lowest row.
double top1_retrieval(const Mat& queries, const Mat& candidates);

// Paraphrase retrieval accuracy: queries are the first pair members from
// one model state, candidates the second members from another (same state
// = matched mode, different = mixed mode). Errors when no pairs exist.
double paraphrase_retrieval(const ParaphraseEmbeddings& query_side,
                            const ParaphraseEmbeddings& candidate_side);

double pearson_r(std::span<const double> x, std::span<const double> y);

// Percentile bootstrap CI for pearson_r over paired resamples; degenerate
// resamples are redrawn a bounded number of times, then dropped.
std::pair<double, double> bootstrap_ci(std::span<const double> x,
                                       std::span<const double> y,
                                       int n_resamples, double level,
                                       uint64_t seed);

// Two-sided permutation p-value for pearson_r, identity permutation
// included in the count.
double perm_pvalue(std::span<const double> x, std::span<const double> y,
                   int n_perms, uint64_t seed);

struct StatParams {
  int n_bootstrap = 1000;
  int n_permutations = 10000;
  double level = 0.95;
  uint64_t seed = 99;
};

struct CorrelationEntry {
  std::string name;
  std::optional<double> r;  // empty = undefined (constant input)
  std::optional<std::pair<double, double>> ci;
  std::optional<double> p;
};

struct CorrelationReport {
  std::array<CorrelationEntry, 4> entries;
};

// The four headline correlations between per-candidate-language retrieval
// accuracy and query-candidate distance: r_acc_post_d_post,
// r_acc_pre_d_pre, r_d_post_d_pre, r_delta_acc_d_shrink (shrink =
// d_pre - d_post).
// `filter` selects candidate-language positions (pass-through when empty).
CorrelationReport correlation_report(std::span<const double> acc_pre,
                                     std::span<const double> acc_post,
                                     std::span<const double> d_pre,
                                     std::span<const double> d_post,
                                     std::span<const int> filter,
                                     const StatParams& stats);

// Center and project onto the top-2 principal directions via power
// iteration with deflation; deterministic start, tolerance 1e-9.
Mat pca_2d(const Mat& rows);

// Embedding set binary persistence.
void save_embedding_set(const EmbeddingSet& set,
                        const std::filesystem::path& path);
EmbeddingSet load_embedding_set(const std::filesystem::path& path);
void save_paraphrase_embeddings(const ParaphraseEmbeddings& para,
                                const std::filesystem::path& path);
ParaphraseEmbeddings load_paraphrase_embeddings(
    const std::filesystem::path& path);

}  // namespace steerlab
