#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace shine {

struct Document {
  std::size_t id = 0;
  std::string raw_text;
  std::vector<std::string> tokens;
  std::vector<std::string> pos_tags;  // parallel to tokens
  std::vector<std::string> entities;  // deduplicated, sorted
  int label = -1;
};

struct CorpusBundle {
  std::vector<Document> documents;
  std::vector<std::string> label_names;  // class index -> name

  std::size_t size() const { return documents.size(); }
  std::size_t num_classes() const { return label_names.size(); }
};

struct Vocab {
  std::map<std::string, std::size_t> id_of;   // contiguous 0..size-1
  std::map<std::string, std::size_t> doc_freq;

  std::size_t size() const { return id_of.size(); }
  // token at a given index; indices follow lexicographic token order
  std::vector<std::string> tokens_in_order() const;
};

struct SplitSpec {
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> val_ids;
  std::vector<std::size_t> test_ids;
  std::size_t labels_per_class = 0;
  std::uint64_t seed = 0;
};

// Lowercases and splits on runs of non-alphanumeric characters.
std::vector<std::string> tokenize(const std::string& text);

// Rule/lexicon tagger over {NOUN, VERB, ADJ, ADV, PRON, DET, NUM, OTHER}.
// Used only when the dataset file carries no tags. Order of rules:
//   1. all digits -> NUM
//   2. closed-class lexicon (DET, PRON, common VERB/ADJ/ADV forms)
//   3. suffix: -ly -> ADV; -ous/-ful/-ive/-able/-ible/-al/-ic -> ADJ;
//      -ing/-ed/-ize/-ise -> VERB
//   4. tokens with no letters -> OTHER; everything else -> NOUN
std::vector<std::string> fallback_pos_tag(const std::vector<std::string>& tokens);

// One token per line; blank lines ignored; surrounding whitespace trimmed.
std::set<std::string> load_stopwords(const std::string& path);

// Line-delimited JSON records with fields label, text, and optional tokens /
// pos / entities. Class indices follow lexicographically sorted label names,
// or `expected_labels` when supplied (then an unseen label is an error).
CorpusBundle load_corpus(const std::string& path, const std::string& format = "jsonl",
                         const std::vector<std::string>& expected_labels = {});

Vocab build_vocab(const CorpusBundle& corpus, std::size_t min_doc_count,
                  const std::set<std::string>& stopwords);

// Per class: seeded shuffle, first half of labels_per_class to train, second
// half to val, remainder to test. labels_per_class must be even.
SplitSpec make_split(const CorpusBundle& corpus, std::size_t labels_per_class,
                     std::uint64_t seed);

}  // namespace shine
