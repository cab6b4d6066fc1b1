#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "shine/graph_builder.hpp"

namespace shine {

struct TripleSet {
  std::vector<std::string> entities;
  std::vector<std::string> relations;
  struct Triple {
    std::size_t head = 0;
    std::size_t relation = 0;
    std::size_t tail = 0;
    bool operator==(const Triple& o) const {
      return head == o.head && relation == o.relation && tail == o.tail;
    }
  };
  std::vector<Triple> triples;
};

// One "head relation tail" whitespace-separated line per triple. Entity and
// relation name lists come out sorted; duplicate lines are dropped with a
// warning.
TripleSet load_triples(const std::string& path);

// Margin-ranking TransE with uniform negative sampling (head or tail
// corrupted with probability 1/2; the replacement entity is redrawn while it
// reproduces the positive triple). Entity vectors are unit-normalized at
// initialization and after every update; relation vectors only at
// initialization. Per-epoch hinge losses can be collected via loss_history.
EntityEmbeddingTable train_transe(const TripleSet& triples, std::size_t d_e, double margin,
                                  std::size_t epochs, double lr, std::uint64_t seed,
                                  std::vector<double>* loss_history = nullptr);

}  // namespace shine
