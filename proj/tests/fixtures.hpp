#pragma once

// Shared corpora for model/trainer tests. Everything here is deterministic:
// fixed token lists for the small corpus, seeded draws for the larger one.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "shine/corpus.hpp"
#include "shine/graph_builder.hpp"
#include "shine/rng.hpp"

namespace fixtures {

struct Pipeline {
  shine::CorpusBundle corpus;
  shine::Vocab vocab;
  shine::EntityEmbeddingTable entities;
  shine::ComponentGraphs graphs;
  std::vector<int> labels;  // by document id
};

inline shine::Document make_doc(std::size_t id, int label, std::vector<std::string> tokens,
                                std::vector<std::string> pos, std::vector<std::string> ents) {
  if (tokens.size() != pos.size()) throw std::runtime_error("fixture doc: tokens/pos mismatch");
  std::sort(ents.begin(), ents.end());
  ents.erase(std::unique(ents.begin(), ents.end()), ents.end());
  shine::Document d;
  d.id = id;
  d.label = label;
  d.tokens = std::move(tokens);
  d.pos_tags = std::move(pos);
  d.entities = std::move(ents);
  for (const auto& t : d.tokens) {
    if (!d.raw_text.empty()) d.raw_text += ' ';
    d.raw_text += t;
  }
  return d;
}

inline std::vector<int> labels_by_id(const shine::CorpusBundle& corpus) {
  std::vector<int> labels(corpus.size(), -1);
  for (const auto& d : corpus.documents) labels[d.id] = d.label;
  return labels;
}

// 12 documents, 3 classes, four POS tags, six entities. Small enough for
// finite differences over every parameter entry, rich enough that all three
// graphs have edges.
inline shine::CorpusBundle gradcheck_corpus() {
  shine::CorpusBundle c;
  c.label_names = {"food", "sport", "tech"};  // lexicographic, like the loader
  std::size_t id = 0;
  auto add = [&](int label, std::vector<std::string> toks, std::vector<std::string> pos,
                 std::vector<std::string> ents) {
    c.documents.push_back(make_doc(id++, label, std::move(toks), std::move(pos), std::move(ents)));
  };
  // food
  add(0, {"dish", "spice", "sweet", "daily", "bake"}, {"NOUN", "NOUN", "ADJ", "ADV", "VERB"},
      {"bazaar"});
  add(0, {"spice", "salt", "dish", "report"}, {"NOUN", "NOUN", "NOUN", "NOUN"},
      {"bazaar", "harbor"});
  add(0, {"sweet", "bake", "salt", "daily", "dish"}, {"ADJ", "VERB", "NOUN", "ADV", "NOUN"},
      {"harbor"});
  add(0, {"bake", "dish", "spice", "sweet"}, {"VERB", "NOUN", "NOUN", "ADJ"}, {"bazaar"});
  // sport
  add(1, {"match", "team", "win", "report"}, {"NOUN", "NOUN", "VERB", "NOUN"}, {"arena"});
  add(1, {"team", "play", "score", "daily", "match"}, {"NOUN", "VERB", "NOUN", "ADV", "NOUN"},
      {"arena", "league"});
  add(1, {"win", "score", "team", "play"}, {"VERB", "NOUN", "NOUN", "VERB"}, {"league"});
  add(1, {"play", "match", "win", "daily", "score"}, {"VERB", "NOUN", "VERB", "ADV", "NOUN"},
      {"arena"});
  // tech
  add(2, {"code", "chip", "data", "report"}, {"NOUN", "NOUN", "NOUN", "NOUN"}, {"garage"});
  add(2, {"chip", "stack", "code", "daily", "cloud"}, {"NOUN", "NOUN", "NOUN", "ADV", "NOUN"},
      {"garage", "campus"});
  add(2, {"data", "cloud", "chip", "stack"}, {"NOUN", "NOUN", "NOUN", "NOUN"}, {"campus"});
  add(2, {"stack", "code", "data", "cloud", "chip"}, {"NOUN", "NOUN", "NOUN", "NOUN", "NOUN"},
      {"garage"});
  return c;
}

inline shine::EntityEmbeddingTable gradcheck_entities() {
  shine::EntityEmbeddingTable table;
  std::vector<std::string> names = {"arena", "bazaar", "campus", "garage", "harbor", "league"};
  const std::size_t d_e = 4;
  table.matrix = shine::Matrix(names.size(), d_e);
  shine::Rng rng(shine::Rng::derive(424242, 7));
  for (std::size_t i = 0; i < names.size(); ++i) {
    table.name_of[names[i]] = i;
    double norm2 = 0.0;
    for (std::size_t j = 0; j < d_e; ++j) {
      table.matrix(i, j) = rng.uniform(-1.0, 1.0);
      norm2 += table.matrix(i, j) * table.matrix(i, j);
    }
    for (std::size_t j = 0; j < d_e; ++j) table.matrix(i, j) /= std::sqrt(norm2);
  }
  return table;
}

inline Pipeline gradcheck_pipeline(std::size_t window = 5) {
  Pipeline p;
  p.corpus = gradcheck_corpus();
  p.vocab = shine::build_vocab(p.corpus, 1, {});
  p.entities = gradcheck_entities();
  p.graphs = shine::build_component_graphs(p.corpus, p.vocab, p.entities, window);
  p.labels = labels_by_id(p.corpus);
  return p;
}

// 3 classes x 40 documents with class-disjoint content words, shared filler
// words, and one entity per class. Nearest-centroid separable over TF-IDF
// (checked by a test before anything trains on it).
inline shine::CorpusBundle separable_corpus() {
  shine::CorpusBundle c;
  c.label_names = {"cooking", "sports", "tech"};
  const std::vector<std::vector<std::string>> pools = {
      {"braise", "simmer", "saffron", "dough", "glaze", "umami"},
      {"penalty", "striker", "overtime", "dribble", "referee", "keeper"},
      {"kernel", "compiler", "socket", "thread", "packet", "cache"},
  };
  const std::vector<std::string> fillers = {"about", "these", "under"};
  const std::vector<std::string> class_entity = {"test_kitchen", "grand_stadium", "dev_board"};
  std::size_t id = 0;
  for (int cls = 0; cls < 3; ++cls) {
    shine::Rng rng(shine::Rng::derive(991100, static_cast<std::uint64_t>(cls)));
    for (std::size_t d = 0; d < 40; ++d) {
      std::vector<std::string> toks;
      for (int k = 0; k < 4; ++k) toks.push_back(pools[cls][rng.below(pools[cls].size())]);
      for (int k = 0; k < 2; ++k) toks.push_back(fillers[rng.below(fillers.size())]);
      std::vector<std::string> pos;
      for (std::size_t k = 0; k < 4; ++k) pos.push_back(k % 2 == 0 ? "NOUN" : "VERB");
      pos.push_back("DET");
      pos.push_back("DET");
      c.documents.push_back(
          make_doc(id++, cls, std::move(toks), std::move(pos), {class_entity[cls]}));
    }
  }
  return c;
}

inline shine::EntityEmbeddingTable separable_entities() {
  shine::EntityEmbeddingTable table;
  // Orthogonal rows: no cross-class entity edges, distinct dense features.
  std::vector<std::string> names = {"dev_board", "grand_stadium", "test_kitchen"};
  table.matrix = shine::Matrix(3, 4);
  for (std::size_t i = 0; i < 3; ++i) {
    table.name_of[names[i]] = i;
    table.matrix(i, i) = 1.0;
  }
  return table;
}

inline Pipeline separable_pipeline(std::size_t window = 5) {
  Pipeline p;
  p.corpus = separable_corpus();
  p.vocab = shine::build_vocab(p.corpus, 2, {});
  p.entities = separable_entities();
  p.graphs = shine::build_component_graphs(p.corpus, p.vocab, p.entities, window);
  p.labels = labels_by_id(p.corpus);
  return p;
}

// Threshold placed mid-gap between consecutive pairwise row inner products
// (diagonal included), so small parameter perturbations cannot flip the
// sparsification pattern during finite differencing.
inline double midgap_threshold(const shine::Matrix& x, double lo = 0.05, double hi = 1e9) {
  std::vector<double> dots;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = i; j < x.rows(); ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < x.cols(); ++k) d += x(i, k) * x(j, k);
      dots.push_back(d);
    }
  std::sort(dots.begin(), dots.end());
  double best_mid = lo, best_gap = -1.0;
  for (std::size_t k = 0; k + 1 < dots.size(); ++k) {
    double mid = 0.5 * (dots[k] + dots[k + 1]);
    if (mid < lo || mid > hi) continue;
    double gap = dots[k + 1] - dots[k];
    if (gap > best_gap) {
      best_gap = gap;
      best_mid = mid;
    }
  }
  return best_mid;
}

inline void write_corpus_jsonl(const std::string& path, const shine::CorpusBundle& corpus) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("fixture: cannot write " + path);
  for (const auto& d : corpus.documents) {
    nlohmann::json j;
    j["label"] = corpus.label_names.at(static_cast<std::size_t>(d.label));
    j["text"] = d.raw_text;
    j["tokens"] = d.tokens;
    j["pos"] = d.pos_tags;
    j["entities"] = d.entities;
    os << j.dump() << "\n";
  }
}

}  // namespace fixtures
