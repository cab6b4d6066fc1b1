#include "shine/graph_builder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace shine {

std::vector<std::string> EntityEmbeddingTable::names_in_order() const {
  std::vector<std::string> out(name_of.size());
  for (const auto& [name, idx] : name_of) out[idx] = name;
  return out;
}

EntityEmbeddingTable load_entity_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open entity embedding file: " + path);
  std::size_t d_e = 0, count = 0;
  if (!(in >> d_e >> count))
    throw std::runtime_error("entity embedding file: malformed header (want 'd_e num_entities')");
  if (d_e == 0) throw std::runtime_error("entity embedding file: dimension must be positive");

  EntityEmbeddingTable table;
  table.matrix = Matrix(count, d_e);
  for (std::size_t i = 0; i < count; ++i) {
    std::string name;
    if (!(in >> name))
      throw std::runtime_error("entity embedding file: expected " + std::to_string(count) +
                               " entities, found " + std::to_string(i));
    if (table.name_of.count(name))
      throw std::runtime_error("entity embedding file: duplicate entity '" + name + "'");
    double norm_sq = 0.0;
    for (std::size_t j = 0; j < d_e; ++j) {
      double v;
      if (!(in >> v))
        throw std::runtime_error("entity embedding file: entity '" + name +
                                 "' has fewer than " + std::to_string(d_e) + " values");
      if (!std::isfinite(v))
        throw std::runtime_error("entity embedding file: non-finite value for '" + name + "'");
      table.matrix(i, j) = v;
      norm_sq += v * v;
    }
    if (norm_sq == 0.0)
      throw std::runtime_error("entity embedding file: zero-norm embedding for '" + name + "'");
    table.name_of[name] = i;
  }
  return table;
}

void write_entity_embeddings(std::ostream& os, const EntityEmbeddingTable& table) {
  os << table.dim() << " " << table.size() << "\n";
  char buf[64];
  for (const std::string& name : table.names_in_order()) {
    os << name;
    std::size_t i = table.name_of.at(name);
    for (std::size_t j = 0; j < table.dim(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", table.matrix(i, j));
      os << " " << buf;
    }
    os << "\n";
  }
}

SymmetricSparseMatrix pmi_adjacency(const std::vector<std::vector<std::size_t>>& sequences,
                                    std::size_t vocab_size, std::size_t window) {
  if (vocab_size == 0) throw std::runtime_error("pmi_adjacency: vocab_size must be positive");
  if (window == 0) throw std::runtime_error("pmi_adjacency: window must be >= 1");

  std::size_t total_windows = 0;
  std::vector<std::size_t> count(vocab_size, 0);
  std::unordered_map<std::size_t, std::size_t> pair_count;  // key i * vocab_size + j, i < j

  std::vector<std::size_t> distinct;
  for (const std::vector<std::size_t>& seq : sequences) {
    if (seq.empty()) continue;
    std::size_t num_windows = seq.size() <= window ? 1 : seq.size() - window + 1;
    for (std::size_t s = 0; s < num_windows; ++s) {
      std::size_t end = std::min(seq.size(), s + window);
      distinct.assign(seq.begin() + s, seq.begin() + end);
      std::sort(distinct.begin(), distinct.end());
      distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
      for (std::size_t a = 0; a < distinct.size(); ++a) {
        if (distinct[a] >= vocab_size)
          throw std::runtime_error("pmi_adjacency: token index out of range");
        count[distinct[a]] += 1;
        for (std::size_t b = a + 1; b < distinct.size(); ++b)
          pair_count[distinct[a] * vocab_size + distinct[b]] += 1;
      }
      ++total_windows;
    }
  }

  std::vector<Triplet> upper;
  double w_total = static_cast<double>(total_windows);
  for (const auto& [key, cij] : pair_count) {
    std::size_t i = key / vocab_size;
    std::size_t j = key % vocab_size;
    double pmi = std::log((static_cast<double>(cij) * w_total) /
                          (static_cast<double>(count[i]) * static_cast<double>(count[j])));
    if (pmi > 0.0) upper.push_back({i, j, pmi});
  }
  return SymmetricSparseMatrix::from_upper(vocab_size, std::move(upper));
}

SymmetricSparseMatrix entity_adjacency(const EntityEmbeddingTable& table) {
  std::size_t n = table.size();
  std::vector<double> norm(n);
  std::vector<std::string> names = table.names_in_order();
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < table.dim(); ++j) sq += table.matrix(i, j) * table.matrix(i, j);
    if (sq == 0.0)
      throw std::runtime_error("entity_adjacency: zero-norm embedding for '" + names[i] + "'");
    norm[i] = std::sqrt(sq);
  }
  std::vector<Triplet> upper;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < table.dim(); ++c) dot += table.matrix(i, c) * table.matrix(j, c);
      double cos = dot / (norm[i] * norm[j]);
      if (cos > 0.0) upper.push_back({i, j, cos});
    }
  }
  return SymmetricSparseMatrix::from_upper(n, std::move(upper));
}

namespace {

const std::vector<std::string>& doc_items(const Document& d, GraphKind kind) {
  switch (kind) {
    case GraphKind::word: return d.tokens;
    case GraphKind::pos: return d.pos_tags;
    default: return d.entities;
  }
}

}  // namespace

CsrMatrix pooling_matrix(const CorpusBundle& corpus, GraphKind kind,
                         const std::map<std::string, std::size_t>& node_index) {
  std::size_t num_docs = corpus.size();
  std::size_t num_nodes = node_index.size();
  double n = static_cast<double>(num_docs);

  // document frequency per node (used by the tf-idf kinds)
  std::vector<std::size_t> df(num_nodes, 0);
  if (kind != GraphKind::entity) {
    for (const Document& d : corpus.documents) {
      std::set<std::size_t> present;
      for (const std::string& item : doc_items(d, kind)) {
        auto it = node_index.find(item);
        if (it != node_index.end()) present.insert(it->second);
      }
      for (std::size_t idx : present) df[idx] += 1;
    }
  }

  std::vector<Triplet> entries;
  for (const Document& d : corpus.documents) {
    std::map<std::size_t, double> raw;  // node -> unnormalized weight, index order
    if (kind == GraphKind::entity) {
      for (const std::string& e : d.entities) {
        auto it = node_index.find(e);
        if (it != node_index.end()) raw[it->second] = 1.0;
      }
    } else {
      std::map<std::size_t, std::size_t> tf;
      for (const std::string& item : doc_items(d, kind)) {
        auto it = node_index.find(item);
        if (it != node_index.end()) tf[it->second] += 1;
      }
      for (const auto& [idx, count] : tf) {
        double idf = std::log(n / static_cast<double>(df[idx]));
        raw[idx] = static_cast<double>(count) * idf;
      }
    }
    double sum = 0.0;
    for (const auto& [idx, w] : raw) sum += w;
    if (sum <= 0.0) continue;  // degenerate document: all-zero row
    for (const auto& [idx, w] : raw)
      if (w != 0.0) entries.push_back({d.id, idx, w / sum});
  }
  return CsrMatrix::from_triplets(num_docs, num_nodes, std::move(entries));
}

ComponentGraphs build_component_graphs(const CorpusBundle& corpus, const Vocab& vocab,
                                       const EntityEmbeddingTable& entity_table,
                                       std::size_t window) {
  ComponentGraphs graphs;

  // word graph over the filtered vocabulary
  {
    ComponentGraph& g = graphs.word;
    g.kind = GraphKind::word;
    g.node_names = vocab.tokens_in_order();
    std::vector<std::vector<std::size_t>> sequences(corpus.size());
    for (const Document& d : corpus.documents) {
      for (const std::string& t : d.tokens) {
        auto it = vocab.id_of.find(t);
        if (it != vocab.id_of.end()) sequences[d.id].push_back(it->second);
      }
    }
    g.adjacency = pmi_adjacency(sequences, vocab.size(), window);
    g.norm_adjacency = normalize_adjacency(g.adjacency);
    g.one_hot = true;
    g.pooling = pooling_matrix(corpus, GraphKind::word, vocab.id_of);
  }

  // pos graph over every tag seen in the corpus
  {
    ComponentGraph& g = graphs.pos;
    g.kind = GraphKind::pos;
    std::set<std::string> tags;
    for (const Document& d : corpus.documents)
      for (const std::string& t : d.pos_tags) tags.insert(t);
    std::map<std::string, std::size_t> tag_index;
    for (const std::string& t : tags) {
      g.node_names.push_back(t);
      tag_index[t] = tag_index.size();
    }
    std::vector<std::vector<std::size_t>> sequences(corpus.size());
    for (const Document& d : corpus.documents)
      for (const std::string& t : d.pos_tags) sequences[d.id].push_back(tag_index.at(t));
    g.adjacency = pmi_adjacency(sequences, tag_index.size(), window);
    g.norm_adjacency = normalize_adjacency(g.adjacency);
    g.one_hot = true;
    g.pooling = pooling_matrix(corpus, GraphKind::pos, tag_index);
  }

  // entity graph over corpus entities that resolve in the table
  {
    ComponentGraph& g = graphs.entity;
    g.kind = GraphKind::entity;
    std::set<std::string> seen, missing;
    for (const Document& d : corpus.documents)
      for (const std::string& e : d.entities) {
        if (entity_table.name_of.count(e))
          seen.insert(e);
        else
          missing.insert(e);
      }
    for (const std::string& e : missing)
      std::cerr << "warning: entity '" << e << "' not in the embedding table; dropped\n";

    EntityEmbeddingTable sub;
    sub.matrix = Matrix(seen.size(), entity_table.dim());
    std::map<std::string, std::size_t> ent_index;
    std::size_t next = 0;
    for (const std::string& e : seen) {
      g.node_names.push_back(e);
      ent_index[e] = next;
      std::size_t src = entity_table.name_of.at(e);
      for (std::size_t j = 0; j < entity_table.dim(); ++j)
        sub.matrix(next, j) = entity_table.matrix(src, j);
      sub.name_of[e] = next;
      ++next;
    }
    g.adjacency = seen.empty() ? SymmetricSparseMatrix(0) : entity_adjacency(sub);
    g.norm_adjacency = normalize_adjacency(g.adjacency);
    g.one_hot = false;
    g.features = sub.matrix;
    g.pooling = pooling_matrix(corpus, GraphKind::entity, ent_index);
  }

  return graphs;
}

}  // namespace shine
