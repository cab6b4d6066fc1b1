#include "shine/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"
#include "shine/rng.hpp"

namespace shine {

std::vector<std::string> Vocab::tokens_in_order() const {
  std::vector<std::string> out(id_of.size());
  for (const auto& [tok, id] : id_of) out[id] = tok;
  return out;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

namespace {

const std::unordered_map<std::string, const char*>& tag_lexicon() {
  static const std::unordered_map<std::string, const char*> lex = {
      // determiners
      {"the", "DET"}, {"a", "DET"}, {"an", "DET"}, {"this", "DET"}, {"that", "DET"},
      {"these", "DET"}, {"those", "DET"}, {"some", "DET"}, {"any", "DET"},
      {"each", "DET"}, {"every", "DET"}, {"no", "DET"},
      // pronouns
      {"i", "PRON"}, {"you", "PRON"}, {"he", "PRON"}, {"she", "PRON"}, {"it", "PRON"},
      {"we", "PRON"}, {"they", "PRON"}, {"me", "PRON"}, {"him", "PRON"}, {"her", "PRON"},
      {"us", "PRON"}, {"them", "PRON"}, {"who", "PRON"}, {"what", "PRON"},
      {"mine", "PRON"}, {"yours", "PRON"}, {"himself", "PRON"}, {"herself", "PRON"},
      {"itself", "PRON"},
      // frequent verbs, including irregular and s-forms
      {"be", "VERB"}, {"is", "VERB"}, {"am", "VERB"}, {"are", "VERB"}, {"was", "VERB"},
      {"were", "VERB"}, {"been", "VERB"}, {"being", "VERB"}, {"have", "VERB"},
      {"has", "VERB"}, {"had", "VERB"}, {"do", "VERB"}, {"does", "VERB"}, {"did", "VERB"},
      {"go", "VERB"}, {"goes", "VERB"}, {"went", "VERB"}, {"gone", "VERB"},
      {"run", "VERB"}, {"runs", "VERB"}, {"ran", "VERB"}, {"say", "VERB"},
      {"says", "VERB"}, {"said", "VERB"}, {"make", "VERB"}, {"makes", "VERB"},
      {"made", "VERB"}, {"get", "VERB"}, {"gets", "VERB"}, {"got", "VERB"},
      {"see", "VERB"}, {"sees", "VERB"}, {"saw", "VERB"}, {"seen", "VERB"},
      {"know", "VERB"}, {"knows", "VERB"}, {"knew", "VERB"}, {"take", "VERB"},
      {"takes", "VERB"}, {"took", "VERB"}, {"come", "VERB"}, {"comes", "VERB"},
      {"came", "VERB"}, {"can", "VERB"}, {"could", "VERB"}, {"will", "VERB"},
      {"would", "VERB"}, {"shall", "VERB"}, {"should", "VERB"}, {"may", "VERB"},
      {"might", "VERB"}, {"must", "VERB"},
      // frequent adjectives
      {"good", "ADJ"}, {"bad", "ADJ"}, {"big", "ADJ"}, {"small", "ADJ"}, {"new", "ADJ"},
      {"old", "ADJ"}, {"great", "ADJ"}, {"little", "ADJ"}, {"high", "ADJ"},
      {"low", "ADJ"}, {"long", "ADJ"}, {"short", "ADJ"}, {"own", "ADJ"},
      {"other", "ADJ"}, {"many", "ADJ"}, {"few", "ADJ"},
      // frequent adverbs not ending in -ly
      {"very", "ADV"}, {"too", "ADV"}, {"so", "ADV"}, {"now", "ADV"}, {"then", "ADV"},
      {"here", "ADV"}, {"there", "ADV"}, {"always", "ADV"}, {"never", "ADV"},
      {"often", "ADV"}, {"again", "ADV"}, {"not", "ADV"},
  };
  return lex;
}

bool has_suffix(const std::string& s, const char* suf) {
  std::size_t n = std::string(suf).size();
  return s.size() > n && s.compare(s.size() - n, n, suf) == 0;
}

std::string tag_one(const std::string& tok) {
  bool all_digits = !tok.empty();
  bool any_letter = false;
  for (unsigned char c : tok) {
    if (!std::isdigit(c)) all_digits = false;
    if (std::isalpha(c)) any_letter = true;
  }
  if (all_digits) return "NUM";
  const auto& lex = tag_lexicon();
  auto it = lex.find(tok);
  if (it != lex.end()) return it->second;
  if (has_suffix(tok, "ly")) return "ADV";
  for (const char* suf : {"ous", "ful", "ive", "able", "ible", "al", "ic"})
    if (has_suffix(tok, suf)) return "ADJ";
  for (const char* suf : {"ing", "ed", "ize", "ise"})
    if (has_suffix(tok, suf)) return "VERB";
  if (!any_letter) return "OTHER";
  return "NOUN";
}

}  // namespace

std::vector<std::string> fallback_pos_tag(const std::vector<std::string>& tokens) {
  std::vector<std::string> tags;
  tags.reserve(tokens.size());
  for (const std::string& t : tokens) tags.push_back(tag_one(t));
  return tags;
}

std::set<std::string> load_stopwords(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open stopword file: " + path);
  std::set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    std::size_t b = line.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) continue;
    std::size_t e = line.find_last_not_of(" \t\r\n");
    words.insert(line.substr(b, e - b + 1));
  }
  return words;
}

namespace {

std::vector<std::string> string_list(const nlohmann::json& j, const char* field,
                                     std::size_t line_no) {
  if (!j.is_array())
    throw std::runtime_error("line " + std::to_string(line_no) + ": field '" + field +
                             "' must be a list of strings");
  std::vector<std::string> out;
  for (const auto& v : j) {
    if (!v.is_string())
      throw std::runtime_error("line " + std::to_string(line_no) + ": field '" + field +
                               "' must be a list of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

CorpusBundle load_corpus(const std::string& path, const std::string& format,
                         const std::vector<std::string>& expected_labels) {
  if (format != "jsonl")
    throw std::runtime_error("unknown dataset format '" + format + "' (supported: jsonl)");
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);

  struct Raw {
    std::string label;
    Document doc;
  };
  std::vector<Raw> raws;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": malformed JSON record (" + std::string(e.what()) + ")");
    }
    if (!j.is_object())
      throw std::runtime_error("line " + std::to_string(line_no) + ": record must be an object");
    if (!j.contains("label") || !j["label"].is_string())
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": missing or non-string 'label'");

    Raw r;
    r.label = j["label"].get<std::string>();
    if (j.contains("text")) {
      if (!j["text"].is_string())
        throw std::runtime_error("line " + std::to_string(line_no) + ": 'text' must be a string");
      r.doc.raw_text = j["text"].get<std::string>();
    }
    if (j.contains("tokens"))
      r.doc.tokens = string_list(j["tokens"], "tokens", line_no);
    else if (j.contains("text"))
      r.doc.tokens = tokenize(r.doc.raw_text);
    else
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": record needs 'tokens' or 'text'");
    if (r.doc.tokens.empty())
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": document has no tokens after parsing");

    if (j.contains("pos"))
      r.doc.pos_tags = string_list(j["pos"], "pos", line_no);
    else
      r.doc.pos_tags = fallback_pos_tag(r.doc.tokens);
    if (r.doc.pos_tags.size() != r.doc.tokens.size())
      throw std::runtime_error("line " + std::to_string(line_no) + ": 'pos' length " +
                               std::to_string(r.doc.pos_tags.size()) +
                               " does not match token count " +
                               std::to_string(r.doc.tokens.size()));

    if (j.contains("entities")) {
      r.doc.entities = string_list(j["entities"], "entities", line_no);
      std::sort(r.doc.entities.begin(), r.doc.entities.end());
      r.doc.entities.erase(std::unique(r.doc.entities.begin(), r.doc.entities.end()),
                           r.doc.entities.end());
    }
    raws.push_back(std::move(r));
  }
  if (raws.empty()) throw std::runtime_error("dataset file has no records: " + path);

  CorpusBundle bundle;
  std::map<std::string, int> label_index;
  if (expected_labels.empty()) {
    std::set<std::string> names;
    for (const Raw& r : raws) names.insert(r.label);
    for (const std::string& n : names) {
      label_index[n] = static_cast<int>(bundle.label_names.size());
      bundle.label_names.push_back(n);
    }
  } else {
    for (const std::string& n : expected_labels) {
      label_index[n] = static_cast<int>(bundle.label_names.size());
      bundle.label_names.push_back(n);
    }
  }

  for (Raw& r : raws) {
    auto it = label_index.find(r.label);
    if (it == label_index.end()) {
      std::ostringstream known;
      for (std::size_t i = 0; i < bundle.label_names.size(); ++i)
        known << (i ? ", " : "") << bundle.label_names[i];
      throw std::runtime_error("unknown label '" + r.label + "' (known labels: " +
                               known.str() + ")");
    }
    r.doc.id = bundle.documents.size();
    r.doc.label = it->second;
    bundle.documents.push_back(std::move(r.doc));
  }
  return bundle;
}

Vocab build_vocab(const CorpusBundle& corpus, std::size_t min_doc_count,
                  const std::set<std::string>& stopwords) {
  if (corpus.documents.empty()) throw std::runtime_error("build_vocab: empty corpus");
  std::map<std::string, std::size_t> df;
  for (const Document& d : corpus.documents) {
    std::unordered_set<std::string> seen;
    for (const std::string& t : d.tokens)
      if (seen.insert(t).second) df[t] += 1;
  }
  Vocab v;
  for (const auto& [tok, count] : df) {
    if (count < min_doc_count) continue;
    if (stopwords.count(tok)) continue;
    v.id_of[tok] = 0;
    v.doc_freq[tok] = count;
  }
  // std::map iterates lexicographically; number in that order
  std::size_t next = 0;
  for (auto& [tok, id] : v.id_of) id = next++;
  if (v.id_of.empty())
    throw std::runtime_error("build_vocab: no tokens survive the frequency/stopword filter");
  return v;
}

SplitSpec make_split(const CorpusBundle& corpus, std::size_t labels_per_class,
                     std::uint64_t seed) {
  if (labels_per_class == 0 || labels_per_class % 2 != 0)
    throw std::runtime_error("make_split: labels_per_class must be even and positive");
  std::vector<std::vector<std::size_t>> by_class(corpus.num_classes());
  for (const Document& d : corpus.documents) by_class[d.label].push_back(d.id);

  SplitSpec spec;
  spec.labels_per_class = labels_per_class;
  spec.seed = seed;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    std::vector<std::size_t>& ids = by_class[c];
    if (ids.size() < labels_per_class)
      throw std::runtime_error("make_split: class '" + corpus.label_names[c] + "' has " +
                               std::to_string(ids.size()) + " documents, needs " +
                               std::to_string(labels_per_class));
    Rng rng(Rng::derive(seed, c));
    rng.shuffle(ids);
    std::size_t half = labels_per_class / 2;
    spec.train_ids.insert(spec.train_ids.end(), ids.begin(), ids.begin() + half);
    spec.val_ids.insert(spec.val_ids.end(), ids.begin() + half, ids.begin() + labels_per_class);
    spec.test_ids.insert(spec.test_ids.end(), ids.begin() + labels_per_class, ids.end());
  }
  std::sort(spec.train_ids.begin(), spec.train_ids.end());
  std::sort(spec.val_ids.begin(), spec.val_ids.end());
  std::sort(spec.test_ids.begin(), spec.test_ids.end());
  return spec;
}

}  // namespace shine
