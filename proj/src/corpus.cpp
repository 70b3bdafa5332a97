#include "steerlab/corpus.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "json.hpp"

namespace steerlab {

namespace {

using ordered_json = nlohmann::ordered_json;

// Base grammar inventory: content lexemes grouped by category.
constexpr int kNouns = 10;
constexpr int kVerbs = 8;
constexpr int kAdjs = 6;
constexpr int kAdvs = 4;
constexpr int kLexemes = kNouns + kVerbs + kAdjs + kAdvs;
constexpr int kFunctionWords = 4;  // Det, Prep, Conj, Aux
// Content tokens are ciphered per language; the four function words are a
// single shared block, the cross-lingual anchor a natural corpus gets from
// shared scripts, digits, and punctuation.
constexpr int kTokensPerLanguage = 2 * kLexemes;

SlotRole lexeme_role(int lexeme) {
  if (lexeme < kNouns) return SlotRole::Noun;
  if (lexeme < kNouns + kVerbs) return SlotRole::Verb;
  if (lexeme < kNouns + kVerbs + kAdjs) return SlotRole::Adj;
  return SlotRole::Adv;
}

int role_offset(SlotRole r) {
  switch (r) {
    case SlotRole::Det: return 0;
    case SlotRole::Prep: return 1;
    case SlotRole::Conj: return 2;
    default: return 3;  // Aux
  }
}

// Sentence frames; lengths 4..10 so that BOS+tokens+EOS stays well inside
// any context length the pipeline uses.
const std::vector<std::vector<SlotRole>>& frames() {
  using R = SlotRole;
  static const std::vector<std::vector<R>> f = {
      {R::Det, R::Noun, R::Verb, R::Adv},
      {R::Det, R::Adj, R::Noun, R::Verb},
      {R::Det, R::Noun, R::Verb, R::Det, R::Noun},
      {R::Noun, R::Conj, R::Noun, R::Verb, R::Adv},
      {R::Det, R::Adj, R::Noun, R::Verb, R::Det, R::Noun},
      {R::Det, R::Noun, R::Aux, R::Verb, R::Prep, R::Det, R::Noun},
      {R::Det, R::Noun, R::Verb, R::Prep, R::Det, R::Adj, R::Noun},
      {R::Noun, R::Verb, R::Det, R::Noun, R::Prep, R::Det, R::Noun},
      {R::Det, R::Adj, R::Noun, R::Aux, R::Verb, R::Det, R::Adj, R::Noun},
      {R::Det, R::Noun, R::Aux, R::Verb, R::Det, R::Noun, R::Conj, R::Det,
       R::Noun, R::Adv},
  };
  return f;
}

std::string make_word(Rng& rng, int lang, std::set<std::string>& used) {
  static const std::string consonants = "bdfgklmnprstvz";
  static const std::string vowels = "aeiou";
  for (;;) {
    int syllables = 2 + static_cast<int>(rng.below(2));
    std::string w;
    for (int s = 0; s < syllables; ++s) {
      // Rotate the consonant inventory per language for surface flavor;
      // uniqueness is enforced globally regardless.
      size_t ci = (rng.below(consonants.size()) + 3 * lang) % consonants.size();
      w.push_back(consonants[ci]);
      w.push_back(vowels[rng.below(vowels.size())]);
    }
    if (rng.below(3) == 0) w.push_back(consonants[rng.below(consonants.size())]);
    if (used.insert(w).second) return w;
  }
}

int language_token_base(int lang) {
  return 3 + kFunctionWords + lang * kTokensPerLanguage;
}

int function_token(SlotRole role) { return 3 + role_offset(role); }

int content_token(int lang, int lexeme, int form) {
  return language_token_base(lang) + lexeme * 2 + form;
}

std::vector<SentenceTemplate> make_templates(Rng& rng, int n_templates) {
  std::vector<SentenceTemplate> out;
  std::set<std::vector<int>> seen;
  while (static_cast<int>(out.size()) < n_templates) {
    const auto& frame = frames()[rng.below(frames().size())];
    SentenceTemplate t;
    t.id = static_cast<int>(out.size());
    std::vector<int> key;
    for (SlotRole role : frame) {
      TemplateItem item{role, -1};
      if (!is_function_role(role)) {
        int lo = 0, n = 0;
        switch (role) {
          case SlotRole::Noun: lo = 0; n = kNouns; break;
          case SlotRole::Verb: lo = kNouns; n = kVerbs; break;
          case SlotRole::Adj: lo = kNouns + kVerbs; n = kAdjs; break;
          default: lo = kNouns + kVerbs + kAdjs; n = kAdvs; break;
        }
        item.lexeme = lo + static_cast<int>(rng.below(n));
      }
      key.push_back(static_cast<int>(role) * 100 + item.lexeme);
      t.items.push_back(item);
    }
    if (!seen.insert(key).second) continue;  // duplicate template, redraw
    out.push_back(std::move(t));
  }
  return out;
}

// Per-slot synonym form assignment for one rendered sentence.
std::vector<int> form_assignment(const SentenceTemplate& t, uint64_t seed) {
  Rng rng(seed);
  std::vector<int> forms(t.items.size(), 0);
  for (size_t i = 0; i < t.items.size(); ++i) {
    if (!is_function_role(t.items[i].role))
      forms[i] = static_cast<int>(rng.below(2));
  }
  return forms;
}

Sentence render(const ParallelCorpus& corpus, int lang,
                const SentenceTemplate& t, const std::vector<int>& forms) {
  const int n = static_cast<int>(t.items.size());
  std::vector<int> base_tokens(n);
  for (int i = 0; i < n; ++i) {
    const TemplateItem& item = t.items[i];
    base_tokens[i] = is_function_role(item.role)
                         ? function_token(item.role)
                         : content_token(lang, item.lexeme, forms[i]);
  }
  std::vector<int> perm = order_permutation(corpus.config.seed, lang, n,
                                            corpus.n_languages());
  Sentence s;
  s.language = lang;
  s.template_id = t.id;
  s.token_ids.resize(n);
  for (int i = 0; i < n; ++i) s.token_ids[i] = base_tokens[perm[i]];
  s.text = detokenize(s.token_ids, corpus.vocab);
  return s;
}

const char* split_name(int which) {
  switch (which) {
    case 0: return "dev";
    case 1: return "test";
    default: return "paraphrase";
  }
}

ordered_json sentence_record(const ParallelCorpus& corpus, const Sentence& s,
                             int which) {
  ordered_json rec;
  rec["lang"] = corpus.languages[s.language].code;
  rec["split"] = split_name(which);
  rec["template_id"] = s.template_id;
  rec["text"] = s.text;
  rec["token_ids"] = s.token_ids;
  return rec;
}

}  // namespace

void CorpusConfig::validate() const {
  if (n_languages < 3)
    fail("invalid-config", "n_languages must be >= 3, got " +
                               std::to_string(n_languages));
  if (n_languages > 99)
    fail("invalid-config", "n_languages must be <= 99");
  if (n_dev <= 0 || n_test <= 0)
    fail("invalid-config", "template counts must be positive");
}

int Vocabulary::lookup(const std::string& word) const {
  auto it = index.find(word);
  return it == index.end() ? -1 : it->second;
}

int ParallelCorpus::language_index(std::string_view code) const {
  for (int i = 0; i < n_languages(); ++i)
    if (languages[i].code == code) return i;
  fail("unknown-language", "unknown language code: " + std::string(code));
}

std::vector<int> ParallelCorpus::with_specials(const Sentence& s) const {
  std::vector<int> out;
  out.reserve(s.token_ids.size() + 2);
  out.push_back(Vocabulary::kBos);
  out.insert(out.end(), s.token_ids.begin(), s.token_ids.end());
  out.push_back(Vocabulary::kEos);
  return out;
}

std::vector<int> order_permutation(uint64_t corpus_seed, int lang, int length,
                                   int n_languages) {
  std::vector<int> perm(length);
  for (int i = 0; i < length; ++i) perm[i] = i;
  if (lang == 0 || n_languages < 2) return perm;
  double strength = static_cast<double>(lang) / (n_languages - 1);
  Rng rng(mix_seed({corpus_seed, 0x6f726465ull, static_cast<uint64_t>(lang),
                    static_cast<uint64_t>(length)}));
  for (int i = length - 1; i >= 1; --i) {
    if (rng.uniform() < strength) {
      int j = static_cast<int>(rng.below(static_cast<uint64_t>(i + 1)));
      std::swap(perm[i], perm[j]);
    }
  }
  return perm;
}

ParallelCorpus generate_corpus(const CorpusConfig& config) {
  config.validate();
  ParallelCorpus corpus;
  corpus.config = config;

  for (int l = 0; l < config.n_languages; ++l) {
    char code[8];
    std::snprintf(code, sizeof(code), "L%02d", l + 1);
    corpus.languages.push_back(
        {code, "Language " + std::to_string(l + 1)});
  }

  // Vocabulary: specials, then the shared function words, then one
  // disjoint content block per language.
  Rng word_rng(mix_seed({config.seed, 0x776f7264ull}));
  std::set<std::string> used = {"<bos>", "<eos>", "<pad>"};
  Vocabulary& vocab = corpus.vocab;
  vocab.tokens = {"<bos>", "<eos>", "<pad>"};
  vocab.info.resize(3);
  for (int f = 0; f < kFunctionWords; ++f) {
    vocab.tokens.push_back(make_word(word_rng, 0, used));
    TokenInfo info;
    info.kind = TokenInfo::Function;
    info.language = -1;  // shared across languages
    info.role = static_cast<SlotRole>(f);  // Det, Prep, Conj, Aux
    vocab.info.push_back(info);
  }
  for (int l = 0; l < config.n_languages; ++l) {
    for (int lex = 0; lex < kLexemes; ++lex) {
      for (int form = 0; form < 2; ++form) {
        vocab.tokens.push_back(make_word(word_rng, l, used));
        TokenInfo info;
        info.kind = TokenInfo::Content;
        info.language = l;
        info.role = lexeme_role(lex);
        info.lexeme = lex;
        info.form = form;
        vocab.info.push_back(info);
      }
    }
  }
  for (int i = 0; i < vocab.size(); ++i) vocab.index[vocab.tokens[i]] = i;

  Rng template_rng(mix_seed({config.seed, 0x746d706cull}));
  corpus.templates = make_templates(template_rng, config.n_dev + config.n_test);

  corpus.dev.resize(config.n_languages);
  corpus.test.resize(config.n_languages);
  corpus.paraphrases.resize(config.n_languages);
  for (int l = 0; l < config.n_languages; ++l) {
    for (int i = 0; i < config.n_dev; ++i) {
      const SentenceTemplate& t = corpus.templates[i];
      auto forms = form_assignment(
          t, mix_seed({config.seed, 0x64657600ull, static_cast<uint64_t>(l),
                       static_cast<uint64_t>(t.id)}));
      corpus.dev[l].push_back(render(corpus, l, t, forms));
    }
    for (int i = 0; i < config.n_test; ++i) {
      const SentenceTemplate& t = corpus.templates[config.n_dev + i];
      auto forms = form_assignment(
          t, mix_seed({config.seed, 0x74657374ull, static_cast<uint64_t>(l),
                       static_cast<uint64_t>(t.id)}));
      Sentence first = render(corpus, l, t, forms);
      auto alt = form_assignment(
          t, mix_seed({config.seed, 0x70617261ull, static_cast<uint64_t>(l),
                       static_cast<uint64_t>(t.id)}));
      if (alt == forms) {
        // Force at least one synonym swap so the pair differs in surface.
        for (size_t s = 0; s < t.items.size(); ++s) {
          if (!is_function_role(t.items[s].role)) {
            alt[s] = 1 - alt[s];
            break;
          }
        }
      }
      Sentence second = render(corpus, l, t, alt);
      corpus.test[l].push_back(first);
      corpus.paraphrases[l].emplace_back(corpus.test[l].back(),
                                         std::move(second));
    }
  }
  return corpus;
}

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab) {
  std::vector<int> out;
  std::istringstream in(text);
  std::string word;
  while (in >> word) {
    int id = vocab.lookup(word);
    if (id < 0) fail("unknown-word", "unknown word: " + word);
    out.push_back(id);
  }
  return out;
}

std::string detokenize(std::span<const int> token_ids,
                       const Vocabulary& vocab) {
  std::string out;
  for (size_t i = 0; i < token_ids.size(); ++i) {
    int id = token_ids[i];
    if (id < 0 || id >= vocab.size())
      fail("bad-token", "token id out of range: " + std::to_string(id));
    if (i > 0) out.push_back(' ');
    out += vocab.tokens[id];
  }
  return out;
}

PosNegSplit positive_negative_split(const ParallelCorpus& corpus,
                                    int target_language) {
  if (target_language < 0 || target_language >= corpus.n_languages())
    fail("unknown-language",
         "target language index out of range: " +
             std::to_string(target_language));
  PosNegSplit split;
  for (int l = 0; l < corpus.n_languages(); ++l) {
    for (const Sentence& s : corpus.dev[l]) {
      if (l == target_language)
        split.positives.push_back(&s);
      else
        split.negatives.push_back(&s);
    }
  }
  return split;
}

std::string corpus_to_jsonl(const ParallelCorpus& corpus) {
  std::string out;
  ordered_json header;
  header["format"] = "steerlab.corpus/1";
  header["seed"] = corpus.config.seed;
  header["n_languages"] = corpus.config.n_languages;
  header["n_dev"] = corpus.config.n_dev;
  header["n_test"] = corpus.config.n_test;
  ordered_json langs = ordered_json::array();
  for (const auto& l : corpus.languages)
    langs.push_back({{"code", l.code}, {"name", l.name}});
  header["languages"] = langs;
  out += header.dump();
  out.push_back('\n');
  for (int l = 0; l < corpus.n_languages(); ++l)
    for (const Sentence& s : corpus.dev[l])
      out += sentence_record(corpus, s, 0).dump() + "\n";
  for (int l = 0; l < corpus.n_languages(); ++l)
    for (const Sentence& s : corpus.test[l])
      out += sentence_record(corpus, s, 1).dump() + "\n";
  for (int l = 0; l < corpus.n_languages(); ++l)
    for (const auto& pair : corpus.paraphrases[l])
      out += sentence_record(corpus, pair.second, 2).dump() + "\n";
  return out;
}

std::string vocab_to_text(const Vocabulary& vocab) {
  std::string out = "#steerlab.vocab/1\n";
  for (const auto& t : vocab.tokens) {
    out += t;
    out.push_back('\n');
  }
  return out;
}

void save_corpus(const ParallelCorpus& corpus,
                 const std::filesystem::path& dir) {
  write_file(dir / "corpus.jsonl", corpus_to_jsonl(corpus));
  write_file(dir / "vocab.txt", vocab_to_text(corpus.vocab));
}

ParallelCorpus load_corpus(const std::filesystem::path& dir) {
  ParallelCorpus corpus;

  // Vocabulary.
  {
    std::istringstream in(read_file(dir / "vocab.txt"));
    std::string line;
    if (!std::getline(in, line) || line != "#steerlab.vocab/1")
      fail("bad-format", "vocab.txt: missing or unknown format tag");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      corpus.vocab.index[line] = corpus.vocab.size();
      corpus.vocab.tokens.push_back(line);
    }
  }

  std::istringstream in(read_file(dir / "corpus.jsonl"));
  std::string line;
  if (!std::getline(in, line)) fail("bad-format", "corpus.jsonl: empty file");
  ordered_json header = ordered_json::parse(line, nullptr, false);
  if (header.is_discarded())
    fail("bad-format", "corpus.jsonl: header is not valid JSON");
  if (header.value("format", "") != "steerlab.corpus/1")
    fail("bad-format", "corpus.jsonl: missing or unknown format tag");
  corpus.config.seed = header["seed"].get<uint64_t>();
  corpus.config.n_languages = header["n_languages"].get<int>();
  corpus.config.n_dev = header["n_dev"].get<int>();
  corpus.config.n_test = header["n_test"].get<int>();
  for (const auto& l : header["languages"])
    corpus.languages.push_back(
        {l["code"].get<std::string>(), l["name"].get<std::string>()});

  const int L = corpus.config.n_languages;
  corpus.dev.assign(L, {});
  corpus.test.assign(L, {});
  corpus.paraphrases.assign(L, {});
  std::vector<std::vector<Sentence>> para_second(L);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ordered_json rec = ordered_json::parse(line, nullptr, false);
    if (rec.is_discarded())
      fail("bad-format", "corpus.jsonl: record is not valid JSON");
    Sentence s;
    s.language = corpus.language_index(rec["lang"].get<std::string>());
    s.template_id = rec["template_id"].get<int>();
    s.text = rec["text"].get<std::string>();
    s.token_ids = rec["token_ids"].get<std::vector<int>>();
    std::string split = rec["split"].get<std::string>();
    if (split == "dev")
      corpus.dev[s.language].push_back(std::move(s));
    else if (split == "test")
      corpus.test[s.language].push_back(std::move(s));
    else if (split == "paraphrase")
      para_second[s.language].push_back(std::move(s));
    else
      fail("bad-format", "corpus.jsonl: unknown split: " + split);
  }
  for (int l = 0; l < L; ++l) {
    if (static_cast<int>(corpus.dev[l].size()) != corpus.config.n_dev ||
        static_cast<int>(corpus.test[l].size()) != corpus.config.n_test ||
        para_second[l].size() != corpus.test[l].size())
      fail("bad-format", "corpus.jsonl: incomplete splits for language " +
                             corpus.languages[l].code);
    for (size_t i = 0; i < corpus.test[l].size(); ++i)
      corpus.paraphrases[l].emplace_back(corpus.test[l][i],
                                         std::move(para_second[l][i]));
  }
  return corpus;
}

}  // namespace steerlab
