#include <doctest.h>

#include <fstream>

#include "steerlab/pipeline.hpp"

using namespace steerlab;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run_config(const std::string& out_dir) {
  RunConfig c;
  c.corpus = {7, 4, 8, 8};
  c.model.vocab_size = 0;  // filled from the corpus at train time
  c.model.d_model = 16;
  c.model.n_layers = 2;
  c.model.n_heads = 2;
  c.model.d_ffn = 24;
  c.model.context_length = 12;
  c.train.learning_rate = 1e-3;
  c.train.batch_size = 8;
  c.train.steps = 40;
  c.train.log_every = 10;
  c.targets = {"L01"};
  c.k_grid = {0, 2, 4};
  c.gen.n_samples = 4;
  c.gen.n_seeds = 2;
  c.gen.max_len = 10;
  c.ppl_stride = 6;
  c.stats.n_permutations = 500;
  c.control_seed = 11;
  c.out_dir = out_dir;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

}  // namespace

TEST_SUITE_BEGIN("pipeline");

TEST_CASE("run config serialization and validation") {
  RunConfig c = tiny_run_config("somewhere");
  RunConfig back = RunConfig::from_json(c.canonical_json());
  CHECK(back.canonical_json() == c.canonical_json());
  CHECK(back.hash() == c.hash());

  // Relocating a run does not change its identity hash.
  RunConfig moved = c;
  moved.out_dir = "elsewhere";
  CHECK(moved.hash() == c.hash());
  RunConfig changed = c;
  changed.train.steps += 1;
  CHECK(changed.hash() != c.hash());

  CHECK_THROWS_AS(RunConfig::from_json("{}"), Error);
  CHECK_THROWS_AS(RunConfig::from_json("not json"), Error);

  RunConfig bad = c;
  bad.k_grid = {2, 4};  // missing the k=0 baseline
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.k_grid = {0, 4, 4};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.targets = {};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.ppl_stride = 99;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.stats.n_bootstrap = 10;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("stage names round-trip") {
  for (Stage s : all_stages()) CHECK(stage_from_name(stage_name(s)) == s);
  CHECK_THROWS_AS(stage_from_name("mystery"), Error);
}

TEST_CASE("stages demand their upstream artifacts") {
  fs::path dir = fresh_dir("steerlab_pipe_missing");
  RunConfig c = tiny_run_config(dir.string());

  // Nothing exists yet: any non-initial stage refuses to run.
  try {
    run_stage(c, Stage::Analyze);
    FAIL("expected missing-stage error");
  } catch (const Error& e) {
    CHECK(e.code == "missing-stage");
  }

  run_stage(c, Stage::GenCorpus);
  // Embed before sweep names the missing stage.
  try {
    run_stage(c, Stage::Embed);
    FAIL("expected missing-stage error");
  } catch (const Error& e) {
    CHECK(e.code == "missing-stage");
    CHECK(std::string(e.what()).find("sweep") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("config changes are detected as stale artifacts") {
  fs::path dir = fresh_dir("steerlab_pipe_stale");
  RunConfig c = tiny_run_config(dir.string());
  run_stage(c, Stage::GenCorpus);

  RunConfig altered = c;
  altered.train.steps += 5;
  try {
    run_stage(altered, Stage::Train);
    FAIL("expected stale-artifact error");
  } catch (const Error& e) {
    CHECK(e.code == "stale-artifact");
  }

  // Tampering with a recorded artifact is also detected.
  run_stage(c, Stage::Train);
  std::ofstream(dir / "corpus.jsonl", std::ios::app) << "tampered\n";
  try {
    run_stage(c, Stage::FindExperts);
    FAIL("expected stale-artifact error");
  } catch (const Error& e) {
    CHECK(e.code == "stale-artifact");
  }
  fs::remove_all(dir);
}

TEST_CASE("full tiny pipeline: artifacts, shapes, idempotency, determinism") {
  fs::path dir = fresh_dir("steerlab_pipe_full");
  RunConfig c = tiny_run_config(dir.string());
  run_all(c);

  for (const char* name :
       {"corpus.jsonl", "vocab.txt", "model.bin", "loss_curve.csv",
        "experts_L01.csv", "sweep_L01.csv", "chosen_L01.json",
        "intervention_L01.jsonl", "emb_L01_pre.bin", "emb_L01_post.bin",
        "emb_L01_random.bin", "para_L01_pre.bin", "para_L01_post.bin",
        "analysis_L01.csv", "correlations_L01.csv", "pca_L01.csv",
        "control_L01.csv", "report_distance_L01.csv",
        "report_retrieval_L01.csv", "findings_L01.json", "results.json"})
    CHECK_MESSAGE(fs::exists(dir / name), name);

  // Report shapes: distance table has n_languages rows per state, the
  // retrieval matrix n_languages^2 rows per state; three states each.
  std::string dist = read_file(dir / "report_distance_L01.csv");
  CHECK(count_lines(dist) == 1 + 3 * 4);
  std::string retr = read_file(dir / "report_retrieval_L01.csv");
  CHECK(count_lines(retr) == 1 + 3 * 16);
  std::string corr = read_file(dir / "correlations_L01.csv");
  CHECK(count_lines(corr) == 1 + 4);

  Manifest m = load_manifest(dir);
  CHECK(m.has_stage("report"));
  CHECK(m.stage_duration_ms.count("train") == 1);
  auto digests = manifest_file_digests(dir);
  CHECK(digests.count("model.bin") == 1);

  TargetFindings f = load_findings(dir, "L01");
  CHECK(f.target == "L01");
  CHECK(f.baseline_langid_accuracy >= 0.0);

  // Idempotency: re-running a completed stage reproduces identical bytes.
  std::string before = digest_file(dir / "report_retrieval_L01.csv");
  run_stage(c, Stage::Report);
  CHECK(digest_file(dir / "report_retrieval_L01.csv") == before);

  // Determinism: a second run from scratch reproduces every digest.
  fs::path dir2 = fresh_dir("steerlab_pipe_full2");
  RunConfig c2 = c;
  c2.out_dir = dir2.string();
  run_all(c2);
  CHECK(manifest_file_digests(dir2) == digests);

  // A different training seed produces a different model artifact.
  fs::path dir3 = fresh_dir("steerlab_pipe_full3");
  RunConfig c3 = c;
  c3.out_dir = dir3.string();
  c3.train.seed = 2;
  run_all(c3, Stage::Train);
  CHECK(digest_file(dir3 / "model.bin") != digests.at("model.bin"));

  fs::remove_all(dir);
  fs::remove_all(dir2);
  fs::remove_all(dir3);
}

TEST_SUITE_END();
