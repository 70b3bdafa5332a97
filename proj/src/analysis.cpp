#include "steerlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace steerlab {

namespace {

bool is_constant(std::span<const double> v) {
  for (double x : v)
    if (x != v[0]) return false;
  return true;
}

double pearson_unchecked(std::span<const double> x,
                         std::span<const double> y) {
  const size_t n = x.size();
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

double percentile(std::vector<double>& sorted_values, double q) {
  std::sort(sorted_values.begin(), sorted_values.end());
  const size_t m = sorted_values.size();
  if (m == 1) return sorted_values[0];
  double pos = q * static_cast<double>(m - 1);
  size_t lo = static_cast<size_t>(pos);
  size_t hi = std::min(lo + 1, m - 1);
  double frac = pos - static_cast<double>(lo);
  return sorted_values[lo] * (1.0 - frac) + sorted_values[hi] * frac;
}

void put_i32(std::string& out, int32_t v) {
  out.append(reinterpret_cast<const char*>(&v), 4);
}
void put_u64(std::string& out, uint64_t v) {
  out.append(reinterpret_cast<const char*>(&v), 8);
}
void put_matrix(std::string& out, const Mat& m) {
  put_i32(out, static_cast<int32_t>(m.rows()));
  put_i32(out, static_cast<int32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    float f = static_cast<float>(m.data()[i]);
    out.append(reinterpret_cast<const char*>(&f), 4);
  }
}

struct Reader {
  const std::string& data;
  size_t pos = 0;
  void need(size_t n) const {
    if (pos + n > data.size()) fail("bad-format", "embedding file truncated");
  }
  int32_t get_i32() {
    need(4);
    int32_t v;
    std::memcpy(&v, data.data() + pos, 4);
    pos += 4;
    return v;
  }
  uint64_t get_u64() {
    need(8);
    uint64_t v;
    std::memcpy(&v, data.data() + pos, 8);
    pos += 8;
    return v;
  }
  Mat get_matrix() {
    int32_t rows = get_i32(), cols = get_i32();
    if (rows < 0 || cols < 0) fail("bad-format", "bad matrix header");
    need(static_cast<size_t>(rows) * cols * 4);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      float f;
      std::memcpy(&f, data.data() + pos, 4);
      pos += 4;
      m.data()[i] = static_cast<double>(f);
    }
    return m;
  }
};

void put_state(std::string& out, const EmbeddingState& s) {
  put_i32(out, static_cast<int32_t>(s.kind));
  put_i32(out, s.target);
  put_i32(out, s.k);
  put_u64(out, s.seed);
}

EmbeddingState get_state(Reader& r) {
  EmbeddingState s;
  s.kind = static_cast<EmbeddingState::Kind>(r.get_i32());
  s.target = r.get_i32();
  s.k = r.get_i32();
  s.seed = r.get_u64();
  return s;
}

}  // namespace

double cosine_distance(const Vec& u, const Vec& v) {
  double nu = u.norm(), nv = v.norm();
  if (nu == 0.0 || nv == 0.0)
    fail("zero-vector", "cosine distance of a zero vector is undefined");
  return 1.0 - u.dot(v) / (nu * nv);
}

std::string EmbeddingState::label() const {
  switch (kind) {
    case Pre:
      return "pre";
    case Post:
      return "post_t" + std::to_string(target) + "_k" + std::to_string(k);
    default:
      return "random_t" + std::to_string(target) + "_k" + std::to_string(k) +
             "_s" + std::to_string(seed);
  }
}

EmbeddingSet build_embedding_set(const ModelParams& params,
                                 const ParallelCorpus& corpus,
                                 const InterventionSpec& intervention,
                                 const EmbeddingState& state) {
  EmbeddingSet set;
  set.state = state;
  set.per_language.reserve(corpus.n_languages());
  for (int l = 0; l < corpus.n_languages(); ++l) {
    Mat m(corpus.test[l].size(), params.config.d_model);
    for (size_t i = 0; i < corpus.test[l].size(); ++i) {
      auto tokens = corpus.with_specials(corpus.test[l][i]);
      m.row(i) = embed_sentence(params, tokens, intervention).transpose();
    }
    set.per_language.push_back(std::move(m));
  }
  return set;
}

ParaphraseEmbeddings embed_paraphrases(const ModelParams& params,
                                       const ParallelCorpus& corpus,
                                       const InterventionSpec& intervention,
                                       int language,
                                       const EmbeddingState& state) {
  const auto& pairs = corpus.paraphrases.at(language);
  if (pairs.empty()) fail("empty-input", "no paraphrase pairs available");
  ParaphraseEmbeddings out;
  out.state = state;
  out.language = language;
  out.first.resize(pairs.size(), params.config.d_model);
  out.second.resize(pairs.size(), params.config.d_model);
  for (size_t i = 0; i < pairs.size(); ++i) {
    out.first.row(i) =
        embed_sentence(params, corpus.with_specials(pairs[i].first),
                       intervention)
            .transpose();
    out.second.row(i) =
        embed_sentence(params, corpus.with_specials(pairs[i].second),
                       intervention)
            .transpose();
  }
  return out;
}

double DistanceReport::mean_pairwise() const {
  const Eigen::Index L = pairwise.rows();
  if (L < 2) return 0.0;
  double sum = 0.0;
  for (Eigen::Index a = 0; a < L; ++a)
    for (Eigen::Index b = a + 1; b < L; ++b) sum += pairwise(a, b);
  return sum / (0.5 * static_cast<double>(L) * static_cast<double>(L - 1));
}

DistanceReport distance_report(const EmbeddingSet& set, int target,
                               PairwiseMode mode) {
  const int L = static_cast<int>(set.per_language.size());
  if (L < 2) fail("invalid-config", "distance report needs >= 2 languages");
  if (target < 0 || target >= L)
    fail("unknown-language", "target out of range");

  std::vector<Vec> means(L);
  for (int l = 0; l < L; ++l)
    means[l] = set.per_language[l].colwise().mean().transpose();

  DistanceReport report;
  report.pairwise = Mat::Zero(L, L);
  for (int a = 0; a < L; ++a) {
    for (int b = a + 1; b < L; ++b) {
      double d = 0.0;
      if (mode == PairwiseMode::MeanVectors) {
        d = cosine_distance(means[a], means[b]);
      } else {
        const Mat& ma = set.per_language[a];
        const Mat& mb = set.per_language[b];
        if (ma.rows() != mb.rows())
          fail("invalid-config", "misaligned embedding matrices");
        for (Eigen::Index r = 0; r < ma.rows(); ++r)
          d += cosine_distance(ma.row(r).transpose(), mb.row(r).transpose());
        d /= static_cast<double>(ma.rows());
      }
      report.pairwise(a, b) = d;
      report.pairwise(b, a) = d;
    }
  }

  // Medoid over language means, by summed cosine distance to other means.
  double best_sum = std::numeric_limits<double>::infinity();
  for (int c = 0; c < L; ++c) {
    double sum = 0.0;
    for (int l = 0; l < L; ++l)
      if (l != c) sum += cosine_distance(means[c], means[l]);
    if (sum < best_sum) {  // strict: ties keep the lowest index
      best_sum = sum;
      report.medoid_language = c;
    }
  }
  report.to_medoid.resize(L);
  report.to_target.resize(L);
  for (int l = 0; l < L; ++l) {
    report.to_medoid[l] =
        l == report.medoid_language
            ? 0.0
            : cosine_distance(means[l], means[report.medoid_language]);
    report.to_target[l] = report.pairwise(l, target);
  }
  return report;
}

double top1_retrieval(const Mat& queries, const Mat& candidates) {
  if (queries.rows() != candidates.rows())
    fail("invalid-config", "query/candidate row counts differ");
  if (queries.rows() == 0) fail("empty-input", "no retrieval rows");
  int hits = 0;
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    Vec scores = candidates * queries.row(q).transpose();
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < scores.size(); ++c)
      if (scores(c) > scores(best)) best = c;  // ties keep the lowest index
    if (best == q) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.rows());
}

double paraphrase_retrieval(const ParaphraseEmbeddings& query_side,
                            const ParaphraseEmbeddings& candidate_side) {
  if (query_side.first.rows() == 0 || candidate_side.second.rows() == 0)
    fail("empty-input", "no paraphrase pairs");
  return top1_retrieval(query_side.first, candidate_side.second);
}

double pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    fail("invalid-config", "pearson_r inputs differ in length");
  if (x.size() < 3) fail("invalid-config", "pearson_r needs >= 3 points");
  if (is_constant(x) || is_constant(y))
    fail("undefined-correlation", "correlation of a constant input");
  return pearson_unchecked(x, y);
}

std::pair<double, double> bootstrap_ci(std::span<const double> x,
                                       std::span<const double> y,
                                       int n_resamples, double level,
                                       uint64_t seed) {
  if (n_resamples < 1000)
    fail("invalid-config", "bootstrap needs >= 1000 resamples");
  if (!(level > 0.0 && level < 1.0))
    fail("invalid-config", "bootstrap level must be in (0, 1)");
  pearson_r(x, y);  // validates inputs

  const size_t n = x.size();
  Rng rng(mix_seed({seed, 0x626f6f74ull}));
  std::vector<double> rs;
  rs.reserve(n_resamples);
  std::vector<double> xs(n), ys(n);
  for (int b = 0; b < n_resamples; ++b) {
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      for (size_t i = 0; i < n; ++i) {
        size_t j = static_cast<size_t>(rng.below(n));
        xs[i] = x[j];
        ys[i] = y[j];
      }
      ok = !is_constant(xs) && !is_constant(ys);
    }
    if (ok) rs.push_back(pearson_unchecked(xs, ys));
    // degenerate after bounded retries: resample dropped
  }
  if (rs.empty())
    fail("degenerate-bootstrap", "all bootstrap resamples were degenerate");
  double alpha = 1.0 - level;
  double lo = percentile(rs, alpha / 2.0);
  double hi = percentile(rs, 1.0 - alpha / 2.0);
  return {lo, hi};
}

double perm_pvalue(std::span<const double> x, std::span<const double> y,
                   int n_perms, uint64_t seed) {
  if (n_perms < 1) fail("invalid-config", "need at least one permutation");
  double observed = std::abs(pearson_r(x, y));
  // Canonicalize the argument order so the Monte Carlo draws are shared
  // between (x, y) and (y, x): |r| is symmetric, so the p-value should be.
  if (std::lexicographical_compare(y.begin(), y.end(), x.begin(), x.end()))
    std::swap(x, y);
  Rng rng(mix_seed({seed, 0x7065726dull}));
  std::vector<double> yp(y.begin(), y.end());
  int count = 0;
  for (int p = 0; p < n_perms; ++p) {
    rng.shuffle(yp);
    if (is_constant(yp)) continue;  // cannot happen for valid y, kept safe
    if (std::abs(pearson_unchecked(x, yp)) >= observed - 1e-12) ++count;
  }
  // identity permutation always attains |r| = observed
  return static_cast<double>(count + 1) / static_cast<double>(n_perms + 1);
}

CorrelationReport correlation_report(std::span<const double> acc_pre,
                                     std::span<const double> acc_post,
                                     std::span<const double> d_pre,
                                     std::span<const double> d_post,
                                     std::span<const int> filter,
                                     const StatParams& stats) {
  const size_t n = acc_pre.size();
  if (acc_post.size() != n || d_pre.size() != n || d_post.size() != n)
    fail("invalid-config", "correlation_report inputs differ in length");

  auto select = [&](std::span<const double> v) {
    if (filter.empty()) return std::vector<double>(v.begin(), v.end());
    std::vector<double> out;
    for (int i : filter) {
      if (i < 0 || i >= static_cast<int>(n))
        fail("invalid-config", "filter index out of range");
      out.push_back(v[i]);
    }
    return out;
  };
  std::vector<double> ap = select(acc_pre), bp = select(acc_post),
                      dp = select(d_pre), dq = select(d_post);
  std::vector<double> dacc(ap.size()), ddist(ap.size());
  for (size_t i = 0; i < ap.size(); ++i) {
    dacc[i] = bp[i] - ap[i];
    ddist[i] = dp[i] - dq[i];
  }

  CorrelationReport report;
  const std::array<std::tuple<std::string, std::vector<double>*,
                              std::vector<double>*>,
                   4>
      specs = {{{"r_acc_post_d_post", &bp, &dq},
                {"r_acc_pre_d_pre", &ap, &dp},
                {"r_d_post_d_pre", &dq, &dp},
                {"r_delta_acc_d_shrink", &dacc, &ddist}}};
  for (size_t i = 0; i < specs.size(); ++i) {
    const auto& [name, xv, yv] = specs[i];
    CorrelationEntry entry;
    entry.name = name;
    try {
      entry.r = pearson_r(*xv, *yv);
      entry.ci = bootstrap_ci(*xv, *yv, stats.n_bootstrap, stats.level,
                              mix_seed({stats.seed, i}));
      entry.p =
          perm_pvalue(*xv, *yv, stats.n_permutations, mix_seed({stats.seed, i}));
    } catch (const Error& e) {
      if (e.code != "undefined-correlation") throw;
      // NA entry: constant input
    }
    report.entries[i] = std::move(entry);
  }
  return report;
}

Mat pca_2d(const Mat& rows) {
  if (rows.rows() < 3) fail("invalid-config", "pca_2d needs >= 3 rows");
  const Eigen::Index n = rows.rows(), d = rows.cols();
  Mat centered = rows.rowwise() - rows.colwise().mean();
  Mat cov = centered.transpose() * centered / static_cast<double>(n - 1);
  if (cov.cwiseAbs().maxCoeff() < 1e-12)
    fail("rank-zero", "pca_2d on rank-0 data");

  auto power_iterate = [&](const Mat& c) -> std::pair<Vec, double> {
    Vec v = Vec::Ones(d);
    for (Eigen::Index i = 0; i < d; ++i) v(i) += 1e-3 * static_cast<double>(i);
    v.normalize();
    double lambda = 0.0;
    for (int it = 0; it < 100000; ++it) {
      Vec w = c * v;
      double norm = w.norm();
      if (norm < 1e-14) return {Vec::Zero(d), 0.0};  // null direction
      w /= norm;
      double delta = std::min((w - v).norm(), (w + v).norm());
      v = w;
      lambda = norm;
      if (delta < 1e-9) break;
    }
    // Deterministic sign: largest-|component| entry positive.
    Eigen::Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    if (v(imax) < 0) v = -v;
    return {v, lambda};
  };

  auto [v1, l1] = power_iterate(cov);
  if (l1 == 0.0) fail("rank-zero", "pca_2d on rank-0 data");
  Mat deflated = cov - l1 * (v1 * v1.transpose());
  auto [v2, l2] = power_iterate(deflated);
  if (l2 == 0.0) {
    // Rank-1 data: pick a deterministic unit vector orthogonal to v1.
    for (Eigen::Index i = 0; i < d; ++i) {
      Vec e = Vec::Zero(d);
      e(i) = 1.0;
      Vec orth = e - v1 * v1.dot(e);
      if (orth.norm() > 1e-6) {
        v2 = orth.normalized();
        break;
      }
    }
  }
  Mat proj(d, 2);
  proj.col(0) = v1;
  proj.col(1) = v2;
  return centered * proj;
}

void save_embedding_set(const EmbeddingSet& set,
                        const std::filesystem::path& path) {
  std::string out;
  out.append("SLE1", 4);
  put_state(out, set.state);
  put_i32(out, static_cast<int32_t>(set.per_language.size()));
  for (const Mat& m : set.per_language) put_matrix(out, m);
  write_file(path, out);
}

EmbeddingSet load_embedding_set(const std::filesystem::path& path) {
  std::string data = read_file(path);
  if (data.size() < 4 || std::memcmp(data.data(), "SLE1", 4) != 0)
    fail("bad-format", "embedding file: bad magic: " + path.string());
  Reader r{data, 4};
  EmbeddingSet set;
  set.state = get_state(r);
  int32_t n = r.get_i32();
  for (int32_t i = 0; i < n; ++i) set.per_language.push_back(r.get_matrix());
  return set;
}

void save_paraphrase_embeddings(const ParaphraseEmbeddings& para,
                                const std::filesystem::path& path) {
  std::string out;
  out.append("SLP1", 4);
  put_state(out, para.state);
  put_i32(out, para.language);
  put_matrix(out, para.first);
  put_matrix(out, para.second);
  write_file(path, out);
}

ParaphraseEmbeddings load_paraphrase_embeddings(
    const std::filesystem::path& path) {
  std::string data = read_file(path);
  if (data.size() < 4 || std::memcmp(data.data(), "SLP1", 4) != 0)
    fail("bad-format", "paraphrase file: bad magic: " + path.string());
  Reader r{data, 4};
  ParaphraseEmbeddings para;
  para.state = get_state(r);
  para.language = r.get_i32();
  para.first = r.get_matrix();
  para.second = r.get_matrix();
  return para;
}

}  // namespace steerlab
