#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "shine/corpus.hpp"
#include "shine/matrix.hpp"
#include "shine/sparse.hpp"

namespace shine {

enum class GraphKind { word, pos, entity };

// One word-level graph: nodes, adjacency, features, and the document
// pooling matrix. For word/pos graphs the features are one-hot (identity
// semantics, never materialized); the entity graph carries dense rows.
struct ComponentGraph {
  GraphKind kind = GraphKind::word;
  std::vector<std::string> node_names;
  SymmetricSparseMatrix adjacency;       // zero diagonal
  SymmetricSparseMatrix norm_adjacency;  // cached D^{-1/2}(I+A)D^{-1/2}
  bool one_hot = true;
  Matrix features;                       // used when !one_hot
  CsrMatrix pooling;                     // num_documents x num_nodes

  std::size_t num_nodes() const { return node_names.size(); }
  std::size_t feature_dim() const { return one_hot ? node_names.size() : features.cols(); }
};

struct ComponentGraphs {
  ComponentGraph word;
  ComponentGraph pos;
  ComponentGraph entity;
};

struct EntityEmbeddingTable {
  std::map<std::string, std::size_t> name_of;
  Matrix matrix;  // num_entities x d_e

  std::size_t size() const { return matrix.rows(); }
  std::size_t dim() const { return matrix.cols(); }
  std::vector<std::string> names_in_order() const;
};

// File format: header "d_e num_entities", then one line per entity with the
// name followed by d_e reals. Weights use max_digits10 on write, so a write /
// read cycle is bit-exact. Zero-norm rows are rejected by name.
EntityEmbeddingTable load_entity_embeddings(const std::string& path);
void write_entity_embeddings(std::ostream& os, const EntityEmbeddingTable& table);

// PMI co-occurrence adjacency over index sequences. Windows slide with
// stride 1; a non-empty document shorter than `window` contributes exactly
// one window; an empty sequence contributes none. A token occurring several
// times inside one window counts once.
//   PMI(i,j) = log((cij * W) / (ci * cj))
// evaluated exactly in that order: both products formed in double, one
// division, then std::log. Entries with PMI <= 0 are absent; diagonal is 0.
SymmetricSparseMatrix pmi_adjacency(const std::vector<std::vector<std::size_t>>& sequences,
                                    std::size_t vocab_size, std::size_t window = 5);

// [A]_ij = max(cos(x_i, x_j), 0) for i != j; diagonal 0.
SymmetricSparseMatrix entity_adjacency(const EntityEmbeddingTable& table);

// Word/pos: tf-idf with tf = raw count, idf = log(N / df), row-normalized to
// sum 1. Entity: occurrence indicator, row-normalized. Rows with no mass
// stay all-zero.
CsrMatrix pooling_matrix(const CorpusBundle& corpus, GraphKind kind,
                         const std::map<std::string, std::size_t>& node_index);

// Assembles G_w (PMI over vocab-filtered token sequences), G_p (PMI over
// full tag sequences), and G_e (cosine over the corpus entities found in the
// table; missing entities are dropped with a warning). Normalized
// adjacencies are cached on each graph.
ComponentGraphs build_component_graphs(const CorpusBundle& corpus, const Vocab& vocab,
                                       const EntityEmbeddingTable& entity_table,
                                       std::size_t window);

}  // namespace shine
