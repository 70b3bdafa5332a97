#include "steerlab/pipeline.hpp"

#include <chrono>
#include <nlohmann/json.hpp>
#include <sstream>

namespace steerlab {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

json config_to_json(const RunConfig& c) {
  json j;
  j["format"] = "steerlab.config/1";
  j["corpus"] = {{"seed", c.corpus.seed},
                 {"n_languages", c.corpus.n_languages},
                 {"n_dev", c.corpus.n_dev},
                 {"n_test", c.corpus.n_test}};
  j["model"] = {{"d_model", c.model.d_model},
                {"n_layers", c.model.n_layers},
                {"n_heads", c.model.n_heads},
                {"d_ffn", c.model.d_ffn},
                {"context_length", c.model.context_length}};
  j["train"] = {{"learning_rate", c.train.learning_rate},
                {"batch_size", c.train.batch_size},
                {"steps", c.train.steps},
                {"weight_decay", c.train.weight_decay},
                {"seed", c.train.seed},
                {"clip_norm", c.train.clip_norm},
                {"log_every", c.train.log_every}};
  j["targets"] = c.targets;
  j["k_grid"] = c.k_grid;
  j["gen"] = {{"n_samples", c.gen.n_samples},
              {"n_seeds", c.gen.n_seeds},
              {"base_seed", c.gen.base_seed},
              {"max_len", c.gen.max_len},
              {"temperature", c.gen.temperature},
              {"top_p", c.gen.top_p}};
  j["ppl_stride"] = c.ppl_stride;
  j["stats"] = {{"n_bootstrap", c.stats.n_bootstrap},
                {"n_permutations", c.stats.n_permutations},
                {"level", c.stats.level},
                {"seed", c.stats.seed}};
  j["control_seed"] = c.control_seed;
  j["out_dir"] = c.out_dir;
  return j;
}

template <class T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

const char* kManifestFile = "manifest.json";

fs::path out_path(const RunConfig& c) { return fs::path(c.out_dir); }

struct StageTimer {
  std::chrono::steady_clock::time_point start =
      std::chrono::steady_clock::now();
  double ms() const {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - start)
        .count();
  }
};

// Loads the manifest, checks the config hash, and checks every recorded
// artifact is still byte-identical on disk.
Manifest open_checked(const RunConfig& config) {
  fs::path dir = out_path(config);
  if (!fs::exists(dir / kManifestFile))
    fail("missing-stage", "no manifest in " + dir.string() +
                              "; run gen-corpus first");
  Manifest m = load_manifest(dir);
  if (m.config_hash != config.hash())
    fail("stale-artifact",
         "manifest config hash " + m.config_hash +
             " does not match the requested config " + config.hash());
  for (const auto& [name, digest] : m.file_digests) {
    fs::path p = dir / name;
    if (!fs::exists(p))
      fail("stale-artifact", "artifact missing: " + p.string());
    if (digest_file(p) != digest)
      fail("stale-artifact",
           "artifact modified since it was produced: " + p.string());
  }
  return m;
}

void require_stage(const Manifest& m, Stage s) {
  if (!m.has_stage(stage_name(s)))
    fail("missing-stage",
         "required upstream stage has not run: " + stage_name(s));
}

void record(Manifest& m, const RunConfig& config, Stage s,
            const StageTimer& timer, const std::vector<std::string>& files) {
  std::string name = stage_name(s);
  for (const std::string& f : files)
    m.file_digests[f] = digest_file(out_path(config) / f);
  m.stage_duration_ms[name] = timer.ms();
  if (!m.has_stage(name)) m.completed.push_back(name);
  save_manifest(m, out_path(config));
}

// Rebuilds the ranked expert set and clamp-value map from its CSV artifact.
std::pair<ExpertSet, std::map<NeuronId, double>> load_expert_csv(
    const fs::path& path, int target) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "rank,layer,unit,auroc,clamp_value")
    fail("bad-format", path.string() + ": unexpected header");
  ExpertSet set;
  set.target_language = target;
  std::map<NeuronId, double> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(row, field, ',')) fields.push_back(field);
    if (fields.size() < 4) fail("bad-format", path.string() + ": short row");
    NeuronId n{std::stoi(fields[1]), std::stoi(fields[2])};
    set.ranking.push_back({n, std::stod(fields[3])});
    if (fields.size() >= 5 && !fields[4].empty())
      values[n] = std::stod(fields[4]);
  }
  if (set.ranking.empty()) fail("bad-format", path.string() + ": empty table");
  return {std::move(set), std::move(values)};
}

struct TargetArtifacts {
  std::string code;
  int lang = 0;
  fs::path experts_csv;
  fs::path intervention;
  fs::path sweep;
  fs::path chosen;
  fs::path emb_pre, emb_post, emb_random;
  fs::path para_pre, para_post;
  fs::path analysis, correlations, pca;
  fs::path control;
  fs::path findings;
};

TargetArtifacts target_paths(const ParallelCorpus& corpus,
                             const std::string& code) {
  TargetArtifacts t;
  t.code = code;
  t.lang = corpus.language_index(code);
  t.experts_csv = "experts_" + code + ".csv";
  t.intervention = "intervention_" + code + ".jsonl";
  t.sweep = "sweep_" + code + ".csv";
  t.chosen = "chosen_" + code + ".json";
  t.emb_pre = "emb_" + code + "_pre.bin";
  t.emb_post = "emb_" + code + "_post.bin";
  t.emb_random = "emb_" + code + "_random.bin";
  t.para_pre = "para_" + code + "_pre.bin";
  t.para_post = "para_" + code + "_post.bin";
  t.analysis = "analysis_" + code + ".csv";
  t.correlations = "correlations_" + code + ".csv";
  t.pca = "pca_" + code + ".csv";
  t.control = "control_" + code + ".csv";
  t.findings = "findings_" + code + ".json";
  return t;
}

int load_chosen_k(const fs::path& dir, const TargetArtifacts& t) {
  json j = json::parse(read_file(dir / t.chosen));
  return j.at("chosen_k").get<int>();
}

// L x L top-1 retrieval matrix; entry (q, c) uses language q's embeddings
// as queries against language c's candidates.
Mat retrieval_matrix(const EmbeddingSet& set) {
  int n = static_cast<int>(set.per_language.size());
  Mat acc(n, n);
  for (int q = 0; q < n; ++q)
    for (int c = 0; c < n; ++c)
      acc(q, c) = top1_retrieval(set.per_language[q], set.per_language[c]);
  return acc;
}

std::string opt_str(const std::optional<double>& v) {
  return v ? format_real(*v) : std::string("NA");
}

json findings_to_json(const TargetFindings& f) {
  json j;
  j["format"] = "steerlab.findings/1";
  j["target"] = f.target;
  j["chosen_k"] = f.chosen_k;
  j["baseline_langid_accuracy"] = f.baseline_langid_accuracy;
  j["chosen_langid_accuracy"] = f.chosen_langid_accuracy;
  j["log_ppl_inversions"] = f.log_ppl_inversions;
  j["mean_pairwise_pre"] = f.mean_pairwise_pre;
  j["mean_pairwise_post"] = f.mean_pairwise_post;
  j["mean_pairwise_random"] = f.mean_pairwise_random;
  j["frac_to_medoid_decreased"] = f.frac_to_medoid_decreased;
  j["mean_to_target_pre"] = f.mean_to_target_pre;
  j["mean_to_target_post"] = f.mean_to_target_post;
  j["target_query_acc_pre"] = f.target_query_acc_pre;
  j["target_query_acc_post"] = f.target_query_acc_post;
  j["target_query_acc_random"] = f.target_query_acc_random;
  j["nontarget_mean_delta_acc"] = f.nontarget_mean_delta_acc;
  if (f.r_acc_post_d_post) j["r_acc_post_d_post"] = *f.r_acc_post_d_post;
  if (f.p_acc_post_d_post) j["p_acc_post_d_post"] = *f.p_acc_post_d_post;
  j["paraphrase_acc_pre"] = f.paraphrase_acc_pre;
  j["paraphrase_acc_post"] = f.paraphrase_acc_post;
  j["paraphrase_acc_mixed"] = f.paraphrase_acc_mixed;
  return j;
}

void stage_gen_corpus(const RunConfig& config) {
  StageTimer timer;
  fs::path dir = out_path(config);
  fs::create_directories(dir);
  Manifest m;
  if (fs::exists(dir / kManifestFile)) {
    m = load_manifest(dir);
    if (m.config_hash != config.hash())
      fail("stale-artifact",
           "output directory " + dir.string() +
               " already holds a run with a different config");
  } else {
    m.config_hash = config.hash();
    m.config_json = config.canonical_json();
  }
  ParallelCorpus corpus = generate_corpus(config.corpus);
  save_corpus(corpus, dir);
  record(m, config, Stage::GenCorpus, timer, {"corpus.jsonl", "vocab.txt"});
}

void stage_train(const RunConfig& config) {
  Manifest m = open_checked(config);
  require_stage(m, Stage::GenCorpus);
  StageTimer timer;
  fs::path dir = out_path(config);
  ParallelCorpus corpus = load_corpus(dir);
  ModelConfig mc = config.model;
  mc.vocab_size = corpus.vocab.size();
  ModelParams params = ModelParams::init(mc, config.train.seed);
  TrainResult result = train(params, corpus, config.train);
  save_model(params, dir / "model.bin");
  write_file(dir / "loss_curve.csv", loss_curve_csv(result));
  record(m, config, Stage::Train, timer, {"model.bin", "loss_curve.csv"});
}

void stage_find_experts(const RunConfig& config) {
  Manifest m = open_checked(config);
  require_stage(m, Stage::Train);
  StageTimer timer;
  fs::path dir = out_path(config);
  ParallelCorpus corpus = load_corpus(dir);
  ModelParams params = load_model(dir / "model.bin");
  std::vector<std::string> files;
  for (const std::string& code : config.targets) {
    TargetArtifacts t = target_paths(corpus, code);
    ExpertSet experts = find_experts(params, corpus, t.lang);
    std::vector<NeuronId> neurons;
    neurons.reserve(experts.ranking.size());
    for (const ExpertScore& e : experts.ranking) neurons.push_back(e.neuron);
    auto values = clamp_values(params, corpus, t.lang, neurons);
    write_file(dir / t.experts_csv, expert_set_csv(experts, values));
    files.push_back(t.experts_csv.string());
  }
  record(m, config, Stage::FindExperts, timer, files);
}

void stage_sweep(const RunConfig& config) {
  Manifest m = open_checked(config);
  require_stage(m, Stage::FindExperts);
  StageTimer timer;
  fs::path dir = out_path(config);
  ParallelCorpus corpus = load_corpus(dir);
  ModelParams params = load_model(dir / "model.bin");
  LangIdModel langid = LangIdModel::fit(corpus);
  std::vector<std::string> files;
  for (const std::string& code : config.targets) {
    TargetArtifacts t = target_paths(corpus, code);
    auto [experts, values] = load_expert_csv(dir / t.experts_csv, t.lang);
    SweepResult sweep = sweep_k(params, experts, values, corpus, langid,
                                config.k_grid, config.gen, config.ppl_stride);
    write_file(dir / t.sweep, sweep_csv(sweep, corpus));
    if (!sweep.chosen_k)
      fail("invalid-config",
           "k grid for " + code + " has no usable operating point");
    json chosen;
    chosen["target"] = code;
    chosen["chosen_k"] = *sweep.chosen_k;
    write_file(dir / t.chosen, chosen.dump(2) + "\n");
    InterventionSpec spec = build_intervention(experts, *sweep.chosen_k, values);
    write_file(dir / t.intervention, intervention_jsonl(spec));
    files.push_back(t.sweep.string());
    files.push_back(t.chosen.string());
    files.push_back(t.intervention.string());
  }
  record(m, config, Stage::Sweep, timer, files);
}

void stage_embed(const RunConfig& config) {
  Manifest m = open_checked(config);
  require_stage(m, Stage::Sweep);
  StageTimer timer;
  fs::path dir = out_path(config);
  ParallelCorpus corpus = load_corpus(dir);
  ModelParams params = load_model(dir / "model.bin");
  std::vector<std::string> files;
  for (const std::string& code : config.targets) {
    TargetArtifacts t = target_paths(corpus, code);
    int k = load_chosen_k(dir, t);
    InterventionSpec spec =
        intervention_from_jsonl(read_file(dir / t.intervention));
    EmbeddingState pre{EmbeddingState::Pre, t.lang, 0, 0};
    EmbeddingState post{EmbeddingState::Post, t.lang, k, 0};
    save_embedding_set(build_embedding_set(params, corpus, {}, pre),
                       dir / t.emb_pre);
    save_embedding_set(build_embedding_set(params, corpus, spec, post),
                       dir / t.emb_post);
    save_paraphrase_embeddings(
        embed_paraphrases(params, corpus, {}, t.lang, pre), dir / t.para_pre);
    save_paraphrase_embeddings(
        embed_paraphrases(params, corpus, spec, t.lang, post),
        dir / t.para_post);
    files.insert(files.end(), {t.emb_pre.string(), t.emb_post.string(),
                               t.para_pre.string(), t.para_post.string()});
  }
  record(m, config, Stage::Embed, timer, files);
}

void stage_analyze(const RunConfig& config) {
  Manifest m = open_checked(config);
  require_stage(m, Stage::Embed);
  StageTimer timer;
  fs::path dir = out_path(config);
  ParallelCorpus corpus = load_corpus(dir);
  std::vector<std::string> files;
  for (const std::string& code : config.targets) {
    TargetArtifacts t = target_paths(corpus, code);
    EmbeddingSet pre = load_embedding_set(dir / t.emb_pre);
    EmbeddingSet post = load_embedding_set(dir / t.emb_post);
    DistanceReport d_pre = distance_report(pre, t.lang);
    DistanceReport d_post = distance_report(post, t.lang);
    Mat acc_pre = retrieval_matrix(pre);
    Mat acc_post = retrieval_matrix(post);

    int n = corpus.n_languages();
    std::string table = "language,acc_pre,acc_post,d_pre,d_post\n";
    std::vector<double> ap, aq, dp, dq;
    std::vector<int> filter;
    for (int l = 0; l < n; ++l) {
      table += corpus.languages[l].code + "," +
               format_real(acc_pre(t.lang, l)) + "," +
               format_real(acc_post(t.lang, l)) + "," +
               format_real(d_pre.to_target[l]) + "," +
               format_real(d_post.to_target[l]) + "\n";
      ap.push_back(acc_pre(t.lang, l));
      aq.push_back(acc_post(t.lang, l));
      dp.push_back(d_pre.to_target[l]);
      dq.push_back(d_post.to_target[l]);
      if (l != t.lang) filter.push_back(l);
    }
    write_file(dir / t.analysis, table);

    CorrelationReport corr =
        correlation_report(ap, aq, dp, dq, filter, config.stats);
    std::string corr_csv = "name,r,ci_lo,ci_hi,p\n";
    for (const CorrelationEntry& e : corr.entries) {
      corr_csv += e.name + "," + opt_str(e.r) + ",";
      if (e.ci)
        corr_csv += format_real(e.ci->first) + "," + format_real(e.ci->second);
      else
        corr_csv += "NA,NA";
      corr_csv += "," + opt_str(e.p) + "\n";
    }
    write_file(dir / t.correlations, corr_csv);

    // 2-D map of every test-sentence embedding under both states, one PCA
    // fit per state.
    std::string pca_csv = "state,language,sentence,x,y\n";
    for (const EmbeddingSet* set : {&pre, &post}) {
      int n_test = static_cast<int>(set->per_language[0].rows());
      Mat stacked(n * n_test, set->per_language[0].cols());
      for (int l = 0; l < n; ++l)
        stacked.middleRows(l * n_test, n_test) = set->per_language[l];
      Mat xy = pca_2d(stacked);
      for (int l = 0; l < n; ++l)
        for (int i = 0; i < n_test; ++i)
          pca_csv += set->state.label() + "," + corpus.languages[l].code +
                     "," + std::to_string(i) + "," +
                     format_real(xy(l * n_test + i, 0)) + "," +
                     format_real(xy(l * n_test + i, 1)) + "\n";
    }
    write_file(dir / t.pca, pca_csv);
    files.insert(files.end(), {t.analysis.string(), t.correlations.string(),
                               t.pca.string()});
  }
  record(m, config, Stage::Analyze, timer, files);
}

void stage_control(const RunConfig& config) {
  Manifest m = open_checked(config);
  require_stage(m, Stage::Embed);
  StageTimer timer;
  fs::path dir = out_path(config);
  ParallelCorpus corpus = load_corpus(dir);
  ModelParams params = load_model(dir / "model.bin");
  std::vector<std::string> files;
  for (const std::string& code : config.targets) {
    TargetArtifacts t = target_paths(corpus, code);
    int k = load_chosen_k(dir, t);
    auto [experts, values] = load_expert_csv(dir / t.experts_csv, t.lang);
    InterventionSpec spec = random_intervention(experts, k, values,
                                                config.control_seed,
                                                params.config);
    EmbeddingState state{EmbeddingState::Random, t.lang, k,
                         config.control_seed};
    EmbeddingSet rnd = build_embedding_set(params, corpus, spec, state);
    save_embedding_set(rnd, dir / t.emb_random);

    EmbeddingSet pre = load_embedding_set(dir / t.emb_pre);
    EmbeddingSet post = load_embedding_set(dir / t.emb_post);
    std::string csv = "state,mean_pairwise,target_query_acc\n";
    for (const EmbeddingSet* set : {&pre, &post, &rnd}) {
      DistanceReport d = distance_report(*set, t.lang);
      Mat acc = retrieval_matrix(*set);
      double acc_target = 0.0;
      for (int l = 0; l < corpus.n_languages(); ++l)
        if (l != t.lang) acc_target += acc(t.lang, l);
      acc_target /= corpus.n_languages() - 1;
      csv += set->state.label() + "," + format_real(d.mean_pairwise()) + "," +
             format_real(acc_target) + "\n";
    }
    write_file(dir / t.control, csv);
    files.insert(files.end(), {t.emb_random.string(), t.control.string()});
  }
  record(m, config, Stage::Control, timer, files);
}

void stage_report(const RunConfig& config) {
  Manifest m = open_checked(config);
  require_stage(m, Stage::Analyze);
  require_stage(m, Stage::Control);
  StageTimer timer;
  fs::path dir = out_path(config);
  ParallelCorpus corpus = load_corpus(dir);
  int n = corpus.n_languages();
  std::vector<std::string> files;
  json results;
  results["format"] = "steerlab.results/1";
  results["config_hash"] = config.hash();
  results["targets"] = json::array();

  for (const std::string& code : config.targets) {
    TargetArtifacts t = target_paths(corpus, code);
    EmbeddingSet pre = load_embedding_set(dir / t.emb_pre);
    EmbeddingSet post = load_embedding_set(dir / t.emb_post);
    EmbeddingSet rnd = load_embedding_set(dir / t.emb_random);
    ParaphraseEmbeddings pp = load_paraphrase_embeddings(dir / t.para_pre);
    ParaphraseEmbeddings pq = load_paraphrase_embeddings(dir / t.para_post);

    std::array<const EmbeddingSet*, 3> states = {&pre, &post, &rnd};
    std::array<DistanceReport, 3> dists = {
        distance_report(pre, t.lang), distance_report(post, t.lang),
        distance_report(rnd, t.lang)};
    std::array<Mat, 3> accs = {retrieval_matrix(pre), retrieval_matrix(post),
                               retrieval_matrix(rnd)};

    // Shaped distance table: one row per (state, language).
    std::string dist_csv =
        "state,language,to_medoid,to_target,is_medoid\n";
    for (size_t s = 0; s < states.size(); ++s)
      for (int l = 0; l < n; ++l)
        dist_csv += states[s]->state.label() + "," +
                    corpus.languages[l].code + "," +
                    format_real(dists[s].to_medoid[l]) + "," +
                    format_real(dists[s].to_target[l]) + "," +
                    (l == dists[s].medoid_language ? "1" : "0") + "\n";
    std::string dist_name = "report_distance_" + code + ".csv";
    write_file(dir / dist_name, dist_csv);

    // Shaped retrieval table: one row per (state, query, candidate).
    std::string retr_csv = "state,query,candidate,accuracy\n";
    for (size_t s = 0; s < states.size(); ++s)
      for (int q = 0; q < n; ++q)
        for (int c = 0; c < n; ++c)
          retr_csv += states[s]->state.label() + "," +
                      corpus.languages[q].code + "," +
                      corpus.languages[c].code + "," +
                      format_real(accs[s](q, c)) + "\n";
    std::string retr_name = "report_retrieval_" + code + ".csv";
    write_file(dir / retr_name, retr_csv);

    TargetFindings f;
    f.target = code;
    f.chosen_k = load_chosen_k(dir, t);

    // Sweep-derived numbers come straight from the sweep artifact.
    {
      std::istringstream in(read_file(dir / t.sweep));
      std::string line;
      std::getline(in, line);
      double max_acc = 0.0;
      double prev_ppl = -1e300;
      bool first_row = true;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(row, field, ',')) fields.push_back(field);
        int k = std::stoi(fields[1]);
        double acc = std::stod(fields[2]);
        double lppl = std::stod(fields[3]);
        max_acc = std::max(max_acc, acc);
        if (k == 0) f.baseline_langid_accuracy = acc;
        if (k == f.chosen_k) f.chosen_langid_accuracy = acc;
        if (!first_row && lppl < prev_ppl) ++f.log_ppl_inversions;
        prev_ppl = lppl;
        first_row = false;
      }
      (void)max_acc;
    }

    f.mean_pairwise_pre = dists[0].mean_pairwise();
    f.mean_pairwise_post = dists[1].mean_pairwise();
    f.mean_pairwise_random = dists[2].mean_pairwise();

    int decreased = 0;
    for (int l = 0; l < n; ++l)
      if (dists[1].to_medoid[l] < dists[0].to_medoid[l]) ++decreased;
    f.frac_to_medoid_decreased = static_cast<double>(decreased) / n;

    double tp = 0.0, tq = 0.0, a0 = 0.0, a1 = 0.0, a2 = 0.0;
    for (int l = 0; l < n; ++l) {
      if (l == t.lang) continue;
      tp += dists[0].to_target[l];
      tq += dists[1].to_target[l];
      a0 += accs[0](t.lang, l);
      a1 += accs[1](t.lang, l);
      a2 += accs[2](t.lang, l);
    }
    f.mean_to_target_pre = tp / (n - 1);
    f.mean_to_target_post = tq / (n - 1);
    f.target_query_acc_pre = a0 / (n - 1);
    f.target_query_acc_post = a1 / (n - 1);
    f.target_query_acc_random = a2 / (n - 1);

    double spill = 0.0;
    int spill_n = 0;
    for (int q = 0; q < n; ++q) {
      if (q == t.lang) continue;
      for (int c = 0; c < n; ++c) {
        if (c == q) continue;
        spill += accs[1](q, c) - accs[0](q, c);
        ++spill_n;
      }
    }
    f.nontarget_mean_delta_acc = spill_n > 0 ? spill / spill_n : 0.0;

    // Headline correlation from the analyze artifact.
    {
      std::istringstream in(read_file(dir / t.correlations));
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        if (line.rfind("r_acc_post_d_post,", 0) != 0) continue;
        std::istringstream row(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(row, field, ',')) fields.push_back(field);
        if (fields[1] != "NA") f.r_acc_post_d_post = std::stod(fields[1]);
        if (fields[4] != "NA") f.p_acc_post_d_post = std::stod(fields[4]);
      }
    }

    f.paraphrase_acc_pre = paraphrase_retrieval(pp, pp);
    f.paraphrase_acc_post = paraphrase_retrieval(pq, pq);
    f.paraphrase_acc_mixed = paraphrase_retrieval(pp, pq);

    json fj = findings_to_json(f);
    write_file(dir / t.findings, fj.dump(2) + "\n");
    results["targets"].push_back(fj);
    files.insert(files.end(), {dist_name, retr_name, t.findings.string()});
  }

  write_file(dir / "results.json", results.dump(2) + "\n");
  files.push_back("results.json");
  record(m, config, Stage::Report, timer, files);
}

}  // namespace

void RunConfig::validate() const {
  corpus.validate();
  // vocab_size is derived from the generated corpus, not configured.
  ModelConfig mc = model;
  mc.vocab_size = 1;
  mc.validate();
  train.validate();
  if (targets.empty()) fail("invalid-config", "targets must be non-empty");
  if (k_grid.empty() || k_grid.front() != 0)
    fail("invalid-config", "k_grid must start at 0");
  for (size_t i = 1; i < k_grid.size(); ++i)
    if (k_grid[i] <= k_grid[i - 1])
      fail("invalid-config", "k_grid must be strictly increasing");
  if (k_grid.back() > model.n_candidate_neurons())
    fail("invalid-config", "k_grid exceeds the candidate neuron population");
  if (ppl_stride < 1 || ppl_stride > model.context_length)
    fail("invalid-config", "ppl_stride must be in [1, context_length]");
  if (gen.n_samples < 1 || gen.n_seeds < 1 || gen.max_len < 1)
    fail("invalid-config", "generation settings must be positive");
  if (gen.top_p <= 0.0 || gen.top_p > 1.0)
    fail("invalid-config", "top_p must be in (0, 1]");
  if (gen.temperature <= 0.0)
    fail("invalid-config", "temperature must be positive");
  if (stats.n_bootstrap < 1000)
    fail("invalid-config", "n_bootstrap must be at least 1000");
  if (stats.n_permutations < 1)
    fail("invalid-config", "n_permutations must be positive");
  if (stats.level <= 0.0 || stats.level >= 1.0)
    fail("invalid-config", "confidence level must be in (0, 1)");
  if (out_dir.empty()) fail("invalid-config", "out_dir must be non-empty");
}

std::string RunConfig::canonical_json() const {
  return config_to_json(*this).dump(2) + "\n";
}

std::string RunConfig::hash() const {
  json j = config_to_json(*this);
  j.erase("out_dir");  // relocating a run does not invalidate it
  return digest_bytes(j.dump());
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    fail("bad-format", std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.contains("format") || j["format"] != "steerlab.config/1")
    fail("bad-format", "config: missing or unknown format tag");
  RunConfig c;
  if (j.contains("corpus")) {
    const json& s = j["corpus"];
    read_if(s, "seed", c.corpus.seed);
    read_if(s, "n_languages", c.corpus.n_languages);
    read_if(s, "n_dev", c.corpus.n_dev);
    read_if(s, "n_test", c.corpus.n_test);
  }
  if (j.contains("model")) {
    const json& s = j["model"];
    read_if(s, "d_model", c.model.d_model);
    read_if(s, "n_layers", c.model.n_layers);
    read_if(s, "n_heads", c.model.n_heads);
    read_if(s, "d_ffn", c.model.d_ffn);
    read_if(s, "context_length", c.model.context_length);
  }
  if (j.contains("train")) {
    const json& s = j["train"];
    read_if(s, "learning_rate", c.train.learning_rate);
    read_if(s, "batch_size", c.train.batch_size);
    read_if(s, "steps", c.train.steps);
    read_if(s, "weight_decay", c.train.weight_decay);
    read_if(s, "seed", c.train.seed);
    read_if(s, "clip_norm", c.train.clip_norm);
    read_if(s, "log_every", c.train.log_every);
  }
  read_if(j, "targets", c.targets);
  read_if(j, "k_grid", c.k_grid);
  if (j.contains("gen")) {
    const json& s = j["gen"];
    read_if(s, "n_samples", c.gen.n_samples);
    read_if(s, "n_seeds", c.gen.n_seeds);
    read_if(s, "base_seed", c.gen.base_seed);
    read_if(s, "max_len", c.gen.max_len);
    read_if(s, "temperature", c.gen.temperature);
    read_if(s, "top_p", c.gen.top_p);
  }
  read_if(j, "ppl_stride", c.ppl_stride);
  if (j.contains("stats")) {
    const json& s = j["stats"];
    read_if(s, "n_bootstrap", c.stats.n_bootstrap);
    read_if(s, "n_permutations", c.stats.n_permutations);
    read_if(s, "level", c.stats.level);
    read_if(s, "seed", c.stats.seed);
  }
  read_if(j, "control_seed", c.control_seed);
  read_if(j, "out_dir", c.out_dir);
  c.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  return from_json(read_file(path));
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages = {
      Stage::GenCorpus, Stage::Train,   Stage::FindExperts, Stage::Sweep,
      Stage::Embed,     Stage::Analyze, Stage::Control,     Stage::Report};
  return stages;
}

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::GenCorpus:   return "gen-corpus";
    case Stage::Train:       return "train";
    case Stage::FindExperts: return "find-experts";
    case Stage::Sweep:       return "sweep";
    case Stage::Embed:       return "embed";
    case Stage::Analyze:     return "analyze";
    case Stage::Control:     return "control";
    case Stage::Report:      return "report";
  }
  fail("invalid-config", "unknown stage");
}

Stage stage_from_name(const std::string& name) {
  for (Stage s : all_stages())
    if (stage_name(s) == name) return s;
  fail("invalid-config", "unknown stage: " + name);
}

bool Manifest::has_stage(const std::string& name) const {
  for (const std::string& s : completed)
    if (s == name) return true;
  return false;
}

Manifest load_manifest(const fs::path& out_dir) {
  json j = json::parse(read_file(out_dir / kManifestFile));
  if (!j.contains("format") || j["format"] != "steerlab.manifest/1")
    fail("bad-format", "manifest: missing or unknown format tag");
  Manifest m;
  m.config_hash = j.at("config_hash").get<std::string>();
  m.config_json = j.at("config").dump(2) + "\n";
  for (const auto& [k, v] : j.at("stage_duration_ms").items())
    m.stage_duration_ms[k] = v.get<double>();
  m.completed = j.at("completed").get<std::vector<std::string>>();
  for (const auto& [k, v] : j.at("files").items())
    m.file_digests[k] = v.get<std::string>();
  return m;
}

void save_manifest(const Manifest& m, const fs::path& out_dir) {
  json j;
  j["format"] = "steerlab.manifest/1";
  j["config_hash"] = m.config_hash;
  j["config"] = json::parse(m.config_json);
  json durations = json::object();
  for (const auto& [k, v] : m.stage_duration_ms) durations[k] = v;
  j["stage_duration_ms"] = durations;
  j["completed"] = m.completed;
  json digests = json::object();
  for (const auto& [k, v] : m.file_digests) digests[k] = v;
  j["files"] = digests;
  write_file(out_dir / kManifestFile, j.dump(2) + "\n");
}

void run_stage(const RunConfig& config, Stage stage) {
  config.validate();
  switch (stage) {
    case Stage::GenCorpus:   stage_gen_corpus(config); return;
    case Stage::Train:       stage_train(config); return;
    case Stage::FindExperts: stage_find_experts(config); return;
    case Stage::Sweep:       stage_sweep(config); return;
    case Stage::Embed:       stage_embed(config); return;
    case Stage::Analyze:     stage_analyze(config); return;
    case Stage::Control:     stage_control(config); return;
    case Stage::Report:      stage_report(config); return;
  }
  fail("invalid-config", "unknown stage");
}

void run_all(const RunConfig& config, Stage until) {
  for (Stage s : all_stages()) {
    run_stage(config, s);
    if (s == until) return;
  }
}

std::map<std::string, std::string> manifest_file_digests(
    const fs::path& out_dir) {
  return load_manifest(out_dir).file_digests;
}

TargetFindings load_findings(const fs::path& out_dir,
                             const std::string& target) {
  json j = json::parse(read_file(out_dir / ("findings_" + target + ".json")));
  if (!j.contains("format") || j["format"] != "steerlab.findings/1")
    fail("bad-format", "findings: missing or unknown format tag");
  TargetFindings f;
  f.target = j.at("target").get<std::string>();
  f.chosen_k = j.at("chosen_k").get<int>();
  f.baseline_langid_accuracy = j.at("baseline_langid_accuracy").get<double>();
  f.chosen_langid_accuracy = j.at("chosen_langid_accuracy").get<double>();
  f.log_ppl_inversions = j.at("log_ppl_inversions").get<int>();
  f.mean_pairwise_pre = j.at("mean_pairwise_pre").get<double>();
  f.mean_pairwise_post = j.at("mean_pairwise_post").get<double>();
  f.mean_pairwise_random = j.at("mean_pairwise_random").get<double>();
  f.frac_to_medoid_decreased = j.at("frac_to_medoid_decreased").get<double>();
  f.mean_to_target_pre = j.at("mean_to_target_pre").get<double>();
  f.mean_to_target_post = j.at("mean_to_target_post").get<double>();
  f.target_query_acc_pre = j.at("target_query_acc_pre").get<double>();
  f.target_query_acc_post = j.at("target_query_acc_post").get<double>();
  f.target_query_acc_random = j.at("target_query_acc_random").get<double>();
  f.nontarget_mean_delta_acc = j.at("nontarget_mean_delta_acc").get<double>();
  if (j.contains("r_acc_post_d_post"))
    f.r_acc_post_d_post = j["r_acc_post_d_post"].get<double>();
  if (j.contains("p_acc_post_d_post"))
    f.p_acc_post_d_post = j["p_acc_post_d_post"].get<double>();
  f.paraphrase_acc_pre = j.at("paraphrase_acc_pre").get<double>();
  f.paraphrase_acc_post = j.at("paraphrase_acc_post").get<double>();
  f.paraphrase_acc_mixed = j.at("paraphrase_acc_mixed").get<double>();
  return f;
}

}  // namespace steerlab
