#include "shine/commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "shine/graph_builder.hpp"
#include "shine/transe.hpp"

namespace shine {

namespace {

namespace fs = std::filesystem;

// Every command states all of its missing inputs at once.
void require_keys(std::initializer_list<std::pair<const char*, bool>> present) {
  std::string missing;
  for (const auto& [name, ok] : present)
    if (!ok) {
      if (!missing.empty()) missing += ", ";
      missing += name;
    }
  if (!missing.empty()) throw std::runtime_error("missing required config keys: " + missing);
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

std::vector<int> labels_of(const CorpusBundle& corpus) {
  std::vector<int> labels(corpus.size(), -1);
  for (const Document& d : corpus.documents) labels[d.id] = d.label;
  return labels;
}

// Same text layout as the entity embedding file: "dim count" header, then
// one line per word. Vocabulary words without a vector keep a zero row.
Matrix load_word_vectors(const std::string& path, const Vocab& vocab, std::ostream& out) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open pretrained vectors '" + path + "'");
  std::size_t dim = 0, count = 0;
  if (!(is >> dim >> count) || dim == 0)
    throw std::runtime_error("pretrained vectors '" + path + "': malformed header");

  std::map<std::string, std::vector<double>> rows;
  for (std::size_t n = 0; n < count; ++n) {
    std::string word;
    if (!(is >> word))
      throw std::runtime_error("pretrained vectors '" + path + "': expected " +
                               std::to_string(count) + " entries, found " + std::to_string(n));
    std::vector<double> v(dim);
    for (std::size_t j = 0; j < dim; ++j)
      if (!(is >> v[j]))
        throw std::runtime_error("pretrained vectors '" + path + "': entry '" + word +
                                 "' is shorter than the declared dimension");
    rows[word] = std::move(v);
  }

  Matrix m(vocab.size(), dim);
  std::size_t missing = 0;
  for (const auto& [word, id] : vocab.id_of) {
    auto it = rows.find(word);
    if (it == rows.end()) {
      ++missing;
      continue;
    }
    for (std::size_t j = 0; j < dim; ++j) m(id, j) = it->second[j];
  }
  if (missing > 0)
    out << "note: " << missing << " of " << vocab.size()
        << " vocabulary words have no pretrained vector; their rows stay zero\n";
  return m;
}

struct LoadedData {
  CorpusBundle corpus;
  Vocab vocab;
  EntityEmbeddingTable entities;
  ComponentGraphs graphs;
  std::vector<int> labels;
  Matrix pretrained;
};

// Corpus -> vocabulary -> entity table -> component graphs, as every
// command after preprocess needs them. An embeddings file wins over a triple
// file; with neither the entity graph is simply empty.
LoadedData load_pipeline(const RunConfig& cfg, std::ostream& out) {
  LoadedData d;
  d.corpus = load_corpus(cfg.corpus, cfg.format);
  std::set<std::string> stop;
  if (!cfg.stopwords.empty()) stop = load_stopwords(cfg.stopwords);
  d.vocab = build_vocab(d.corpus, cfg.min_doc_count, stop);

  if (!cfg.entity_embeddings.empty()) {
    d.entities = load_entity_embeddings(cfg.entity_embeddings);
  } else if (!cfg.entity_triples.empty()) {
    TripleSet ts = load_triples(cfg.entity_triples);
    d.entities = train_transe(ts, cfg.transe_dim, cfg.transe_margin, cfg.transe_epochs,
                              cfg.transe_lr, cfg.train.seed);
    out << "trained " << d.entities.size() << " entity embeddings from " << ts.triples.size()
        << " triples\n";
  }

  d.graphs = build_component_graphs(d.corpus, d.vocab, d.entities, cfg.window);
  d.labels = labels_of(d.corpus);
  if (cfg.model.use_pretrained_word) {
    require_keys({{"pretrained_vectors", !cfg.pretrained_vectors.empty()}});
    d.pretrained = load_word_vectors(cfg.pretrained_vectors, d.vocab, out);
  }
  return d;
}

void dump_graph(const std::string& path, const SymmetricSparseMatrix& a) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_graph_dump(os, a);
  if (!os) throw std::runtime_error("write to '" + path + "' failed");
}

void dump_pooling(const std::string& path, const CsrMatrix& m) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_csr_dump(os, m);
  if (!os) throw std::runtime_error("write to '" + path + "' failed");
}

void dump_names(const std::string& path, const std::vector<std::string>& names) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  for (const std::string& n : names) os << n << '\n';
  if (!os) throw std::runtime_error("write to '" + path + "' failed");
}

}  // namespace

void cmd_preprocess(const RunConfig& cfg, std::ostream& out) {
  require_keys({{"corpus", !cfg.corpus.empty()}});
  CorpusBundle corpus = load_corpus(cfg.corpus, cfg.format);
  std::set<std::string> stop;
  if (!cfg.stopwords.empty()) stop = load_stopwords(cfg.stopwords);
  Vocab vocab = build_vocab(corpus, cfg.min_doc_count, stop);
  SplitSpec split = make_split(corpus, cfg.labels_per_class, cfg.train.seed);

  fs::create_directories(cfg.out_dir);
  {
    std::string path = join(cfg.out_dir, "vocab.tsv");
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    for (const std::string& tok : vocab.tokens_in_order())
      os << tok << '\t' << vocab.doc_freq.at(tok) << '\n';
    if (!os) throw std::runtime_error("write to '" + path + "' failed");
  }
  write_split_json(join(cfg.out_dir, "split.json"), split);

  out << "documents " << corpus.size() << ", classes " << corpus.num_classes() << ", vocabulary "
      << vocab.size() << "\n";
  out << "split: train " << split.train_ids.size() << ", val " << split.val_ids.size() << ", test "
      << split.test_ids.size() << "\n";
}

void cmd_build_graphs(const RunConfig& cfg, std::ostream& out) {
  require_keys({{"corpus", !cfg.corpus.empty()}});
  RunConfig plain = cfg;
  plain.model.use_pretrained_word = false;  // vectors are irrelevant to the graphs
  LoadedData d = load_pipeline(plain, out);

  fs::create_directories(cfg.out_dir);
  struct Item {
    const char* stem;
    const ComponentGraph* g;
  };
  for (const Item& it : {Item{"word", &d.graphs.word}, Item{"pos", &d.graphs.pos},
                         Item{"entity", &d.graphs.entity}}) {
    std::string stem = it.stem;
    dump_graph(join(cfg.out_dir, stem + "_graph.txt"), it.g->adjacency);
    dump_pooling(join(cfg.out_dir, stem + "_pooling.txt"), it.g->pooling);
    dump_names(join(cfg.out_dir, stem + "_nodes.txt"), it.g->node_names);
    out << stem << ": " << it.g->num_nodes() << " nodes, " << it.g->adjacency.nnz() / 2
        << " edges\n";
  }
}

void cmd_train(const RunConfig& cfg, std::ostream& out) {
  require_keys({{"corpus", !cfg.corpus.empty()}});
  LoadedData d = load_pipeline(cfg, out);
  SplitSpec split = make_split(d.corpus, cfg.labels_per_class, cfg.train.seed);
  fs::create_directories(cfg.out_dir);

  ShineModel model(cfg.model, d.graphs, d.corpus.num_classes(), d.pretrained);
  RunHistory hist = train_model(model, d.graphs, d.labels, split, cfg.train, &out);
  Metrics val = evaluate(model, d.graphs, d.labels, split.val_ids, split.train_ids);
  Metrics test = evaluate(model, d.graphs, d.labels, split.test_ids, split.train_ids);

  save_checkpoint(model, d.corpus.label_names, join(cfg.out_dir, "checkpoint.bin"));
  write_runlog_csv(join(cfg.out_dir, "runlog.csv"), hist);
  write_metrics_json(join(cfg.out_dir, "metrics.json"), model, hist, val, test,
                     d.corpus.label_names);
  write_split_json(join(cfg.out_dir, "split.json"), split);

  out << "stopped at epoch " << hist.stopped_epoch << ", best epoch " << hist.best_epoch << "\n";
  out << "val accuracy " << val.accuracy << ", test accuracy " << test.accuracy << ", test macro-f1 "
      << test.macro_f1 << "\n";
}

void cmd_eval(const RunConfig& cfg, std::ostream& out) {
  require_keys({{"corpus", !cfg.corpus.empty()}, {"checkpoint", !cfg.checkpoint.empty()}});
  CheckpointInfo info = read_checkpoint_info(cfg.checkpoint);

  // the checkpoint's model config wins; the file-path keys still apply
  RunConfig run = cfg;
  run.model = info.config;
  LoadedData d = load_pipeline(run, out);
  if (d.corpus.label_names != info.label_names)
    throw std::runtime_error("checkpoint '" + cfg.checkpoint +
                             "' was trained with different class labels");

  ShineModel model(info.config, d.graphs, info.num_classes, d.pretrained);
  load_checkpoint_values(model, cfg.checkpoint);

  std::string split_path = join(cfg.out_dir, "split.json");
  if (!fs::exists(split_path))
    throw std::runtime_error("no split manifest at '" + split_path +
                             "'; run the train command first or point out_dir at its output");
  SplitSpec split = read_split_json(split_path);

  Metrics val = evaluate(model, d.graphs, d.labels, split.val_ids, split.train_ids);
  Metrics test = evaluate(model, d.graphs, d.labels, split.test_ids, split.train_ids);
  write_eval_metrics_json(join(cfg.out_dir, "eval_metrics.json"), model, val, test,
                          d.corpus.label_names);
  out << "val accuracy " << val.accuracy << ", test accuracy " << test.accuracy << ", test macro-f1 "
      << test.macro_f1 << "\n";
}

void cmd_ablate(const RunConfig& cfg, std::ostream& out) {
  require_keys({{"corpus", !cfg.corpus.empty()}, {"variants", !cfg.variants.empty()}});
  LoadedData d = load_pipeline(cfg, out);
  SplitSpec split = make_split(d.corpus, cfg.labels_per_class, cfg.train.seed);
  fs::create_directories(cfg.out_dir);

  std::vector<AblationRow> rows = run_ablations(cfg.variants, cfg.model, d.graphs, d.corpus, split,
                                                cfg.train, d.pretrained, &out);
  write_ablation_csv(join(cfg.out_dir, "ablations.csv"), rows);
  for (const AblationRow& r : rows)
    out << r.variant << ": x_s_dim " << r.x_s_dim << ", accuracy " << r.accuracy << ", macro-f1 "
        << r.macro_f1 << "\n";
}

void cmd_sweep(const RunConfig& cfg, std::ostream& out) {
  require_keys({{"corpus", !cfg.corpus.empty()},
                {"sweep_param", !cfg.sweep_param.empty()},
                {"sweep_values", !cfg.sweep_values.empty()}});
  LoadedData d = load_pipeline(cfg, out);
  SplitSpec split = make_split(d.corpus, cfg.labels_per_class, cfg.train.seed);
  fs::create_directories(cfg.out_dir);

  std::vector<SweepRow> rows = run_sweep(cfg.sweep_param, cfg.sweep_values, cfg.model, d.graphs,
                                         d.corpus, split, cfg.train, d.pretrained, &out);
  write_sweep_csv(join(cfg.out_dir, "sweep.csv"), rows);

  // labeled-pool sweeps also get one split manifest per value, so the nesting
  // of the pools is auditable after the fact (values validated by run_sweep)
  if (cfg.sweep_param == "labels_per_class" || cfg.sweep_param == "label_fraction") {
    std::vector<std::size_t> counts;
    for (const std::string& v : cfg.sweep_values)
      counts.push_back(cfg.sweep_param == "label_fraction"
                           ? label_fraction_count(d.corpus, std::stod(v))
                           : static_cast<std::size_t>(std::stoull(v)));
    std::size_t v_max = *std::max_element(counts.begin(), counts.end());
    for (std::size_t i = 0; i < counts.size(); ++i)
      write_split_json(join(cfg.out_dir, "split_" + cfg.sweep_values[i] + ".json"),
                       nested_split(d.corpus, counts[i], v_max, cfg.train.seed));
  }

  for (const SweepRow& r : rows)
    out << r.param << " = " << r.value << ": accuracy " << r.accuracy << ", macro-f1 " << r.macro_f1
        << ", doc edges " << r.doc_edges_initial << " -> " << r.doc_edges_final << "\n";
}

void run_command(const std::string& name, const RunConfig& cfg, std::ostream& out) {
  if (name == "preprocess") cmd_preprocess(cfg, out);
  else if (name == "build-graphs") cmd_build_graphs(cfg, out);
  else if (name == "train") cmd_train(cfg, out);
  else if (name == "eval") cmd_eval(cfg, out);
  else if (name == "ablate") cmd_ablate(cfg, out);
  else if (name == "sweep") cmd_sweep(cfg, out);
  else
    throw std::runtime_error("unknown command '" + name +
                             "' (expected preprocess, build-graphs, train, eval, ablate, or sweep)");
}

}  // namespace shine
