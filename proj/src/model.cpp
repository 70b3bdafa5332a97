#include "steerlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace steerlab {

namespace {

constexpr double kLnEps = 1e-5;

double gelu(double u) { return 0.5 * u * (1.0 + std::erf(u / M_SQRT2)); }

double gelu_grad(double u) {
  double phi = std::exp(-0.5 * u * u) / std::sqrt(2.0 * M_PI);
  double cdf = 0.5 * (1.0 + std::erf(u / M_SQRT2));
  return cdf + u * phi;
}

// y = xhat * g + b rowwise; xhat and 1/std are cached for backward.
void layer_norm(const Mat& x, const Vec& g, const Vec& b, Mat& y, Mat& xhat,
                Vec& inv) {
  const Eigen::Index T = x.rows(), d = x.cols();
  y.resize(T, d);
  xhat.resize(T, d);
  inv.resize(T);
  for (Eigen::Index r = 0; r < T; ++r) {
    double mu = x.row(r).mean();
    double var = (x.row(r).array() - mu).square().mean();
    double is = 1.0 / std::sqrt(var + kLnEps);
    inv(r) = is;
    xhat.row(r) = (x.row(r).array() - mu) * is;
    y.row(r) = xhat.row(r).array() * g.transpose().array() +
               b.transpose().array();
  }
}

Mat layer_norm_backward(const Mat& dy, const Mat& xhat, const Vec& inv,
                        const Vec& g, Vec& dg, Vec& db) {
  const Eigen::Index T = dy.rows(), d = dy.cols();
  dg += (dy.array() * xhat.array()).colwise().sum().matrix().transpose();
  db += dy.colwise().sum().transpose();
  Mat dx(T, d);
  for (Eigen::Index r = 0; r < T; ++r) {
    Eigen::ArrayXd dxhat = dy.row(r).transpose().array() * g.array();
    double m1 = dxhat.mean();
    double m2 = (dxhat * xhat.row(r).transpose().array()).mean();
    dx.row(r) =
        (inv(r) * (dxhat - m1 - xhat.row(r).transpose().array() * m2))
            .matrix()
            .transpose();
  }
  return dx;
}

void fill_normal(Mat& m, Rng& rng, double scale) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
}

ModelParams make_shaped(const ModelConfig& config) {
  ModelParams p;
  p.config = config;
  p.tok_emb = Mat::Zero(config.vocab_size, config.d_model);
  p.pos_emb = Mat::Zero(config.context_length, config.d_model);
  p.layers.resize(config.n_layers);
  for (auto& l : p.layers) {
    l.ln1_g = Vec::Zero(config.d_model);
    l.ln1_b = Vec::Zero(config.d_model);
    l.ln2_g = Vec::Zero(config.d_model);
    l.ln2_b = Vec::Zero(config.d_model);
    l.wq = Mat::Zero(config.d_model, config.d_model);
    l.wk = Mat::Zero(config.d_model, config.d_model);
    l.wv = Mat::Zero(config.d_model, config.d_model);
    l.wo = Mat::Zero(config.d_model, config.d_model);
    l.w1 = Mat::Zero(config.d_model, config.d_ffn);
    l.w2 = Mat::Zero(config.d_ffn, config.d_model);
  }
  p.lnf_g = Vec::Zero(config.d_model);
  p.lnf_b = Vec::Zero(config.d_model);
  p.w_out = Mat::Zero(config.d_model, config.vocab_size);
  return p;
}

void check_tokens(const ModelConfig& config, std::span<const int> tokens) {
  if (tokens.empty()) fail("empty-input", "token sequence is empty");
  if (static_cast<int>(tokens.size()) > config.context_length)
    fail("too-long", "sequence length " + std::to_string(tokens.size()) +
                         " exceeds context length " +
                         std::to_string(config.context_length));
  for (int t : tokens)
    if (t < 0 || t >= config.vocab_size)
      fail("bad-token", "token id out of range: " + std::to_string(t));
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size <= 0 || d_model <= 0 || n_layers <= 0 || n_heads <= 0 ||
      d_ffn <= 0 || context_length <= 0)
    fail("invalid-config", "model dimensions must be positive");
  if (d_model % n_heads != 0)
    fail("invalid-config", "d_model must be divisible by n_heads");
  if (d_ffn < d_model)
    fail("invalid-config", "d_ffn must be >= d_model");
}

InterventionSpec InterventionSpec::from_pairs(
    std::vector<std::pair<NeuronId, double>> pairs) {
  std::sort(pairs.begin(), pairs.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (size_t i = 1; i < pairs.size(); ++i)
    if (pairs[i].first == pairs[i - 1].first)
      fail("duplicate-neuron", "duplicate neuron in intervention spec");
  InterventionSpec spec;
  spec.clamps = std::move(pairs);
  return spec;
}

void InterventionSpec::validate(const ModelConfig& config) const {
  for (const auto& [n, v] : clamps) {
    if (n.layer < 0 || n.layer >= config.n_layers || n.unit < 0 ||
        n.unit >= config.d_ffn)
      fail("bad-neuron", "neuron (" + std::to_string(n.layer) + "," +
                             std::to_string(n.unit) + ") out of range");
    if (!std::isfinite(v))
      fail("bad-neuron", "non-finite clamp value");
  }
}

ModelParams ModelParams::init(const ModelConfig& config, uint64_t seed) {
  config.validate();
  ModelParams p = make_shaped(config);
  Rng rng(mix_seed({seed, 0x696e6974ull}));
  const double base = 0.02;
  const double resid = base / std::sqrt(2.0 * config.n_layers);
  fill_normal(p.tok_emb, rng, base);
  fill_normal(p.pos_emb, rng, base);
  for (auto& l : p.layers) {
    l.ln1_g.setOnes();
    l.ln2_g.setOnes();
    fill_normal(l.wq, rng, base);
    fill_normal(l.wk, rng, base);
    fill_normal(l.wv, rng, base);
    fill_normal(l.wo, rng, resid);
    fill_normal(l.w1, rng, base);
    fill_normal(l.w2, rng, resid);
  }
  p.lnf_g.setOnes();
  fill_normal(p.w_out, rng, base);
  return p;
}

ModelParams ModelParams::zeros_like(const ModelParams& other) {
  return make_shaped(other.config);
}

void ModelParams::validate_finite() const {
  for_each_param(*this, [](const std::string& name, const auto& arr) {
    if (!arr.allFinite())
      fail("non-finite-weights", "non-finite values in " + name);
  });
}

ForwardCache forward_with_cache(const ModelParams& params,
                                std::span<const int> tokens,
                                const InterventionSpec& intervention) {
  const ModelConfig& cfg = params.config;
  check_tokens(cfg, tokens);
  intervention.validate(cfg);

  const int T = static_cast<int>(tokens.size());
  const int d = cfg.d_model;
  const int dh = d / cfg.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardCache cache;
  cache.tokens.assign(tokens.begin(), tokens.end());
  cache.x0.resize(T, d);
  for (int t = 0; t < T; ++t)
    cache.x0.row(t) = params.tok_emb.row(tokens[t]) + params.pos_emb.row(t);

  Mat x = cache.x0;
  cache.layers.resize(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerParams& lp = params.layers[l];
    LayerCache& lc = cache.layers[l];
    lc.x_in = x;
    layer_norm(lc.x_in, lp.ln1_g, lp.ln1_b, lc.a, lc.a_hat, lc.a_inv);
    lc.q = lc.a * lp.wq;
    lc.k = lc.a * lp.wk;
    lc.v = lc.a * lp.wv;
    lc.attn_concat.resize(T, d);
    lc.probs.resize(cfg.n_heads);
    for (int h = 0; h < cfg.n_heads; ++h) {
      auto qh = lc.q.middleCols(h * dh, dh);
      auto kh = lc.k.middleCols(h * dh, dh);
      auto vh = lc.v.middleCols(h * dh, dh);
      Mat& p = lc.probs[h];
      p = Mat::Zero(T, T);
      for (int i = 0; i < T; ++i) {
        // causal: row i attends to positions 0..i
        Eigen::RowVectorXd scores =
            (qh.row(i) * kh.topRows(i + 1).transpose()) * scale;
        double mx = scores.maxCoeff();
        Eigen::ArrayXd e = (scores.array() - mx).exp();
        p.row(i).head(i + 1) = (e / e.sum()).matrix().transpose();
      }
      lc.attn_concat.middleCols(h * dh, dh) = p * vh;
    }
    lc.x_mid = lc.x_in + lc.attn_concat * lp.wo;
    layer_norm(lc.x_mid, lp.ln2_g, lp.ln2_b, lc.b, lc.b_hat, lc.b_inv);
    lc.u = lc.b * lp.w1;
    lc.g = lc.u.unaryExpr([](double v) { return gelu(v); });
    for (const auto& [n, value] : intervention.clamps)
      if (n.layer == l) lc.g.col(n.unit).setConstant(value);
    x = lc.x_mid + lc.g * lp.w2;
  }
  cache.x_final = x;
  layer_norm(cache.x_final, params.lnf_g, params.lnf_b, cache.h, cache.h_hat,
             cache.h_inv);
  cache.logits = cache.h * params.w_out;
  if (!cache.logits.allFinite())
    fail("non-finite", "forward produced non-finite logits");
  return cache;
}

ForwardResult forward(const ModelParams& params, std::span<const int> tokens,
                      const InterventionSpec& intervention, bool capture) {
  ForwardCache cache = forward_with_cache(params, tokens, intervention);
  ForwardResult result;
  result.logits = std::move(cache.logits);
  if (capture) {
    ActivationTrace trace;
    trace.ffn_act.reserve(cache.layers.size());
    for (auto& lc : cache.layers) trace.ffn_act.push_back(std::move(lc.g));
    trace.last_hidden = std::move(cache.h);
    result.trace = std::move(trace);
  }
  return result;
}

void backward(const ModelParams& params, const ForwardCache& cache,
              const Mat& dlogits, ModelParams& grads) {
  const ModelConfig& cfg = params.config;
  const int T = static_cast<int>(cache.tokens.size());
  const int d = cfg.d_model;
  const int dh = d / cfg.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  grads.w_out += cache.h.transpose() * dlogits;
  Mat dhid = dlogits * params.w_out.transpose();
  Mat dx = layer_norm_backward(dhid, cache.h_hat, cache.h_inv, params.lnf_g,
                               grads.lnf_g, grads.lnf_b);

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerParams& lp = params.layers[l];
    const LayerCache& lc = cache.layers[l];
    LayerParams& gl = grads.layers[l];

    // FFN: x_out = x_mid + g * w2
    Mat dg = dx * lp.w2.transpose();
    gl.w2 += lc.g.transpose() * dx;
    // Assumes the cached forward ran without intervention clamps; training
    // always uses the plain model.
    Mat du =
        dg.array() * lc.u.unaryExpr([](double v) { return gelu_grad(v); })
                         .array();
    Mat db_ = du * lp.w1.transpose();
    gl.w1 += lc.b.transpose() * du;
    Mat dx_mid =
        dx + layer_norm_backward(db_, lc.b_hat, lc.b_inv, lp.ln2_g, gl.ln2_g,
                                 gl.ln2_b);

    // Attention: x_mid = x_in + attn_concat * wo
    Mat datt = dx_mid * lp.wo.transpose();
    gl.wo += lc.attn_concat.transpose() * dx_mid;
    Mat dq = Mat::Zero(T, d), dk = Mat::Zero(T, d), dv = Mat::Zero(T, d);
    for (int h = 0; h < cfg.n_heads; ++h) {
      auto qh = lc.q.middleCols(h * dh, dh);
      auto kh = lc.k.middleCols(h * dh, dh);
      auto vh = lc.v.middleCols(h * dh, dh);
      const Mat& p = lc.probs[h];
      Mat doh = datt.middleCols(h * dh, dh);
      Mat dp = doh * vh.transpose();
      dv.middleCols(h * dh, dh) = p.transpose() * doh;
      Vec rowdot = (dp.array() * p.array()).rowwise().sum();
      Mat ds = p.array() * (dp.colwise() - rowdot).array();
      dq.middleCols(h * dh, dh) = ds * kh * scale;
      dk.middleCols(h * dh, dh) = ds.transpose() * qh * scale;
    }
    Mat da = dq * lp.wq.transpose() + dk * lp.wk.transpose() +
             dv * lp.wv.transpose();
    gl.wq += lc.a.transpose() * dq;
    gl.wk += lc.a.transpose() * dk;
    gl.wv += lc.a.transpose() * dv;
    dx = dx_mid + layer_norm_backward(da, lc.a_hat, lc.a_inv, lp.ln1_g,
                                      gl.ln1_g, gl.ln1_b);
  }

  for (int t = 0; t < T; ++t) {
    grads.tok_emb.row(cache.tokens[t]) += dx.row(t);
    grads.pos_emb.row(t) += dx.row(t);
  }
}

Vec embed_sentence(const ModelParams& params, std::span<const int> tokens,
                   const InterventionSpec& intervention) {
  if (tokens.empty()) fail("empty-input", "cannot embed an empty sequence");
  ForwardCache cache = forward_with_cache(params, tokens, intervention);
  return cache.h.colwise().mean().transpose();
}

int nucleus_sample(const Vec& probs, double top_p, Rng& rng) {
  if (!(top_p > 0.0 && top_p <= 1.0))
    fail("invalid-top-p", "top_p must be in (0, 1]");
  const int n = static_cast<int>(probs.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (probs(a) != probs(b)) return probs(a) > probs(b);
    return a < b;
  });
  double cum = 0.0;
  int keep = n;
  for (int i = 0; i < n; ++i) {
    cum += probs(order[i]);
    if (cum >= top_p - 1e-12) {
      keep = i + 1;
      break;
    }
  }
  double mass = 0.0;
  for (int i = 0; i < keep; ++i) mass += probs(order[i]);
  double u = rng.uniform() * mass;
  double acc = 0.0;
  for (int i = 0; i < keep; ++i) {
    acc += probs(order[i]);
    if (u < acc) return order[i];
  }
  return order[keep - 1];
}

std::vector<int> generate(const ModelParams& params,
                          std::span<const int> prompt,
                          const InterventionSpec& intervention,
                          double temperature, double top_p, int max_len,
                          uint64_t rng_seed, int eos_token) {
  if (!(temperature > 0.0))
    fail("invalid-temperature", "temperature must be > 0");
  if (!(top_p > 0.0 && top_p <= 1.0))
    fail("invalid-top-p", "top_p must be in (0, 1]");
  if (prompt.empty()) fail("empty-input", "prompt is empty");

  Rng rng(rng_seed);
  std::vector<int> sequence(prompt.begin(), prompt.end());
  std::vector<int> generated;
  const int context = params.config.context_length;
  for (int step = 0; step < max_len; ++step) {
    int begin = std::max<int>(0, static_cast<int>(sequence.size()) - context);
    std::span<const int> window(sequence.data() + begin,
                                sequence.size() - begin);
    ForwardResult fr = forward(params, window, intervention, false);
    Eigen::RowVectorXd logits = fr.logits.row(fr.logits.rows() - 1);
    Eigen::ArrayXd z = (logits.transpose().array() / temperature);
    z -= z.maxCoeff();
    Eigen::ArrayXd e = z.exp();
    Vec probs = (e / e.sum()).matrix();
    int tok = nucleus_sample(probs, top_p, rng);
    sequence.push_back(tok);
    generated.push_back(tok);
    if (tok == eos_token) break;
  }
  return generated;
}

void save_model(const ModelParams& params, const std::filesystem::path& path) {
  std::string out;
  out.append("SLW1", 4);
  auto put_i32 = [&out](int32_t v) {
    out.append(reinterpret_cast<const char*>(&v), 4);
  };
  put_i32(1);  // format version
  const ModelConfig& c = params.config;
  for (int v : {c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_ffn,
                c.context_length})
    put_i32(v);
  for_each_param(params, [&out](const std::string&, const auto& arr) {
    for (Eigen::Index i = 0; i < arr.size(); ++i) {
      float f = static_cast<float>(arr.data()[i]);
      out.append(reinterpret_cast<const char*>(&f), 4);
    }
  });
  write_file(path, out);
}

ModelParams load_model(const std::filesystem::path& path) {
  std::string data = read_file(path);
  size_t pos = 0;
  auto need = [&](size_t n) {
    if (pos + n > data.size())
      fail("bad-format", "model file truncated: " + path.string());
  };
  need(4);
  if (std::memcmp(data.data(), "SLW1", 4) != 0)
    fail("bad-format", "model file: bad magic");
  pos = 4;
  auto get_i32 = [&]() {
    need(4);
    int32_t v;
    std::memcpy(&v, data.data() + pos, 4);
    pos += 4;
    return v;
  };
  if (get_i32() != 1) fail("bad-format", "model file: unknown version");
  ModelConfig c;
  c.vocab_size = get_i32();
  c.d_model = get_i32();
  c.n_layers = get_i32();
  c.n_heads = get_i32();
  c.d_ffn = get_i32();
  c.context_length = get_i32();
  c.validate();
  ModelParams p = make_shaped(c);
  for_each_param(p, [&](const std::string& name, auto& arr) {
    need(static_cast<size_t>(arr.size()) * 4);
    for (Eigen::Index i = 0; i < arr.size(); ++i) {
      float f;
      std::memcpy(&f, data.data() + pos, 4);
      pos += 4;
      arr.data()[i] = static_cast<double>(f);
    }
    (void)name;
  });
  if (pos != data.size())
    fail("bad-format", "model file has trailing bytes: " + path.string());
  p.validate_finite();
  return p;
}

}  // namespace steerlab
