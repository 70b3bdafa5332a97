#pragma once

#include <map>

#include "steerlab/analysis.hpp"
#include "steerlab/corpus.hpp"
#include "steerlab/experts.hpp"
#include "steerlab/geneval.hpp"
#include "steerlab/model.hpp"
#include "steerlab/trainer.hpp"

namespace steerlab {

// Experiment configuration: one file drives the whole pipeline, and every
// random choice funnels through a named seed recorded here.
struct RunConfig {
  CorpusConfig corpus;
  ModelConfig model;
  TrainConfig train;
  std::vector<std::string> targets = {"L01"};
  std::vector<int> k_grid = {0, 8, 16, 32, 64, 128, 256};
  GenEvalConfig gen;
  int ppl_stride = 16;
  StatParams stats;
  uint64_t control_seed = 11;
  std::string out_dir = "runs/default";

  void validate() const;
  std::string canonical_json() const;
  std::string hash() const;  // over the canonical form, out_dir excluded

  static RunConfig from_json(const std::string& text);
  static RunConfig from_file(const std::filesystem::path& path);
};

// Pipeline stages in order. Each stage checks its upstream artifacts via
// the manifest and records its own outputs with content digests.
enum class Stage {
  GenCorpus,
  Train,
  FindExperts,
  Sweep,
  Embed,
  Analyze,
  Control,
  Report,
};
const std::vector<Stage>& all_stages();
std::string stage_name(Stage s);
Stage stage_from_name(const std::string& name);

struct Manifest {
  std::string config_hash;
  std::string config_json;
  // stage -> completed flag + duration; file -> content digest
  std::map<std::string, double> stage_duration_ms;
  std::vector<std::string> completed;
  std::map<std::string, std::string> file_digests;

  bool has_stage(const std::string& name) const;
};

Manifest load_manifest(const std::filesystem::path& out_dir);
void save_manifest(const Manifest& m, const std::filesystem::path& out_dir);

// Runs one stage; upstream artifacts must exist and match the config hash.
void run_stage(const RunConfig& config, Stage stage);
// Runs every stage in order, up to and including `until`.
void run_all(const RunConfig& config, Stage until = Stage::Report);

// Digest map of every artifact listed in the manifest (determinism checks).
std::map<std::string, std::string> manifest_file_digests(
    const std::filesystem::path& out_dir);

// Headline measurements per target, persisted by the report stage as
// machine-readable JSON next to the shaped CSV tables.
struct TargetFindings {
  std::string target;
  int chosen_k = 0;
  double baseline_langid_accuracy = 0.0;
  double chosen_langid_accuracy = 0.0;
  int log_ppl_inversions = 0;  // count of decreases along the k grid
  double mean_pairwise_pre = 0.0;
  double mean_pairwise_post = 0.0;
  double mean_pairwise_random = 0.0;
  double frac_to_medoid_decreased = 0.0;
  double mean_to_target_pre = 0.0;
  double mean_to_target_post = 0.0;
  double target_query_acc_pre = 0.0;
  double target_query_acc_post = 0.0;
  double target_query_acc_random = 0.0;
  double nontarget_mean_delta_acc = 0.0;
  std::optional<double> r_acc_post_d_post;
  std::optional<double> p_acc_post_d_post;
  double paraphrase_acc_pre = 0.0;
  double paraphrase_acc_post = 0.0;
  double paraphrase_acc_mixed = 0.0;  // pre queries vs post candidates
};

TargetFindings load_findings(const std::filesystem::path& out_dir,
                             const std::string& target);

}  // namespace steerlab
