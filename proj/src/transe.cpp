#include "shine/transe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "shine/rng.hpp"

namespace shine {

TripleSet load_triples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open triple file: " + path);

  struct RawTriple {
    std::string h, r, t;
  };
  std::vector<RawTriple> raw;
  std::set<std::string> ents, rels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string h, r, t, extra;
    if (!(ss >> h)) continue;  // blank line
    if (!(ss >> r >> t))
      throw std::runtime_error("triple file line " + std::to_string(line_no) +
                               ": want 'head relation tail'");
    if (ss >> extra)
      throw std::runtime_error("triple file line " + std::to_string(line_no) +
                               ": trailing tokens after 'head relation tail'");
    raw.push_back({h, r, t});
    ents.insert(h);
    ents.insert(t);
    rels.insert(r);
  }
  if (raw.empty()) throw std::runtime_error("triple file has no triples: " + path);

  TripleSet set;
  std::map<std::string, std::size_t> ent_id, rel_id;
  for (const std::string& e : ents) {
    ent_id[e] = set.entities.size();
    set.entities.push_back(e);
  }
  for (const std::string& r : rels) {
    rel_id[r] = set.relations.size();
    set.relations.push_back(r);
  }
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> seen;
  for (const RawTriple& rt : raw) {
    TripleSet::Triple t{ent_id[rt.h], rel_id[rt.r], ent_id[rt.t]};
    if (!seen.insert({t.head, t.relation, t.tail}).second) {
      std::cerr << "warning: duplicate triple '" << rt.h << " " << rt.r << " " << rt.t
                << "' dropped\n";
      continue;
    }
    set.triples.push_back(t);
  }
  return set;
}

namespace {

void normalize_row(Matrix& m, std::size_t i) {
  double sq = 0.0;
  for (std::size_t j = 0; j < m.cols(); ++j) sq += m(i, j) * m(i, j);
  double n = std::sqrt(sq);
  if (n == 0.0) return;
  for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) /= n;
}

}  // namespace

EntityEmbeddingTable train_transe(const TripleSet& triples, std::size_t d_e, double margin,
                                  std::size_t epochs, double lr, std::uint64_t seed,
                                  std::vector<double>* loss_history) {
  if (triples.triples.empty()) throw std::runtime_error("train_transe: no triples");
  if (d_e == 0) throw std::runtime_error("train_transe: dimension must be positive");
  std::size_t ne = triples.entities.size();
  std::size_t nr = triples.relations.size();

  std::vector<bool> has_triple(ne, false);
  for (const auto& t : triples.triples) {
    has_triple[t.head] = true;
    has_triple[t.tail] = true;
  }
  for (std::size_t i = 0; i < ne; ++i)
    if (!has_triple[i])
      std::cerr << "warning: entity '" << triples.entities[i]
                << "' appears in no triple; embedding keeps its initialization\n";

  Rng rng(Rng::derive(seed, 0x7e));
  double bound = 6.0 / std::sqrt(static_cast<double>(d_e));
  Matrix ent(ne, d_e), rel(nr, d_e);
  for (std::size_t i = 0; i < ne; ++i)
    for (std::size_t j = 0; j < d_e; ++j) ent(i, j) = rng.uniform(-bound, bound);
  for (std::size_t i = 0; i < nr; ++i)
    for (std::size_t j = 0; j < d_e; ++j) rel(i, j) = rng.uniform(-bound, bound);
  for (std::size_t i = 0; i < ne; ++i) normalize_row(ent, i);
  for (std::size_t i = 0; i < nr; ++i) normalize_row(rel, i);

  std::vector<std::size_t> order(triples.triples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> u(d_e), uc(d_e);

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t idx : order) {
      const TripleSet::Triple& t = triples.triples[idx];

      bool corrupt_head = rng.uniform() < 0.5;
      std::size_t replaced = corrupt_head ? t.head : t.tail;
      std::size_t corrupted = replaced;
      while (ne > 1 && corrupted == replaced) corrupted = rng.below(ne);
      std::size_t ch = corrupt_head ? corrupted : t.head;
      std::size_t ct = corrupt_head ? t.tail : corrupted;

      double d_pos_sq = 0.0, d_neg_sq = 0.0;
      for (std::size_t j = 0; j < d_e; ++j) {
        u[j] = ent(t.head, j) + rel(t.relation, j) - ent(t.tail, j);
        uc[j] = ent(ch, j) + rel(t.relation, j) - ent(ct, j);
        d_pos_sq += u[j] * u[j];
        d_neg_sq += uc[j] * uc[j];
      }
      double d_pos = std::sqrt(d_pos_sq);
      double d_neg = std::sqrt(d_neg_sq);
      double loss = margin + d_pos - d_neg;
      if (loss <= 0.0) continue;
      epoch_loss += loss;

      // d‖u‖/du = u/‖u‖; zero distance contributes nothing on that side
      for (std::size_t j = 0; j < d_e; ++j) {
        double gp = d_pos > 0.0 ? u[j] / d_pos : 0.0;
        double gn = d_neg > 0.0 ? uc[j] / d_neg : 0.0;
        ent(t.head, j) -= lr * gp;
        ent(t.tail, j) += lr * gp;
        rel(t.relation, j) -= lr * (gp - gn);
        ent(ch, j) += lr * gn;
        ent(ct, j) -= lr * gn;
      }
      normalize_row(ent, t.head);
      normalize_row(ent, t.tail);
      normalize_row(ent, ch);
      normalize_row(ent, ct);
    }
    if (loss_history) loss_history->push_back(epoch_loss);
  }

  EntityEmbeddingTable table;
  table.matrix = std::move(ent);
  for (std::size_t i = 0; i < ne; ++i) table.name_of[triples.entities[i]] = i;
  return table;
}

}  // namespace shine
