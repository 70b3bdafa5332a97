#pragma once

#include <array>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "steerlab/common.hpp"

namespace steerlab {

// Synthetic multilingual parallel corpus. Each language is a bijective
// lexical cipher of a shared base template grammar plus a language-specific
// word-order permutation, so exact parallel translations exist by
// construction and every language has fully disjoint surface vocabulary.

struct LanguageInfo {
  std::string code;  // "L01", "L02", ...
  std::string name;
};

enum class SlotRole { Det, Prep, Conj, Aux, Noun, Verb, Adj, Adv };
constexpr bool is_function_role(SlotRole r) {
  return r == SlotRole::Det || r == SlotRole::Prep || r == SlotRole::Conj ||
         r == SlotRole::Aux;
}

// One slot of a base template: function role, or content role + lexeme id.
struct TemplateItem {
  SlotRole role;
  int lexeme = -1;  // global lexeme id for content roles, -1 otherwise
  bool operator==(const TemplateItem&) const = default;
};

struct SentenceTemplate {
  int id = 0;
  std::vector<TemplateItem> items;
};

struct TokenInfo {
  enum Kind { Special, Function, Content } kind = Special;
  int language = -1;  // -1 for specials
  SlotRole role = SlotRole::Det;
  int lexeme = -1;  // content only
  int form = -1;    // content only: 0 or 1 (synonym surface form)
};

struct Vocabulary {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, int> index;
  // Per-token provenance; present for generated corpora, empty after a
  // plain vocabulary load.
  std::vector<TokenInfo> info;

  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kPad = 2;

  int size() const { return static_cast<int>(tokens.size()); }
  int lookup(const std::string& word) const;  // -1 if absent
};

struct Sentence {
  int language = 0;
  int template_id = 0;
  std::vector<int> token_ids;  // content tokens only, no BOS/EOS/PAD
  std::string text;
};

struct CorpusConfig {
  uint64_t seed = 7;
  int n_languages = 8;
  int n_dev = 64;
  int n_test = 128;
  void validate() const;
};

struct ParallelCorpus {
  CorpusConfig config;
  std::vector<LanguageInfo> languages;
  Vocabulary vocab;
  // sentences[lang][i]; dev template ids are 0..n_dev-1 and test template
  // ids are n_dev..n_dev+n_test-1, so the splits never share an id.
  std::vector<std::vector<Sentence>> dev;
  std::vector<std::vector<Sentence>> test;
  // paraphrases[lang][i]: first = the test sentence, second = a synonym
  // swapped rendering of the same template.
  std::vector<std::vector<std::pair<Sentence, Sentence>>> paraphrases;
  // Base templates; populated by generate_corpus, empty after load.
  std::vector<SentenceTemplate> templates;

  int n_languages() const { return static_cast<int>(languages.size()); }
  int language_index(std::string_view code) const;  // throws if unknown

  // Sentence tokens framed for the model: BOS + content + EOS.
  std::vector<int> with_specials(const Sentence& s) const;
};

ParallelCorpus generate_corpus(const CorpusConfig& config);

// Word-order permutation used for (lang, sentence length). Language 0 keeps
// the base order; higher language indices shuffle progressively harder, so
// the languages carry a built-in relatedness gradient.
std::vector<int> order_permutation(uint64_t corpus_seed, int lang, int length,
                                   int n_languages);

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab);
std::string detokenize(std::span<const int> token_ids,
                       const Vocabulary& vocab);

// positive = dev split of target; negative = dev splits of every other
// language pooled.
struct PosNegSplit {
  std::vector<const Sentence*> positives;
  std::vector<const Sentence*> negatives;
};
PosNegSplit positive_negative_split(const ParallelCorpus& corpus,
                                    int target_language);

// Serialization: corpus as line-delimited JSON records, vocabulary as a
// flat token list; both carry a format tag.
std::string corpus_to_jsonl(const ParallelCorpus& corpus);
std::string vocab_to_text(const Vocabulary& vocab);
void save_corpus(const ParallelCorpus& corpus,
                 const std::filesystem::path& dir);
ParallelCorpus load_corpus(const std::filesystem::path& dir);

}  // namespace steerlab
