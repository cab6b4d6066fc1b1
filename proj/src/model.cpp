#include "shine/model.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace shine {

namespace {

const char* suffix_of(GraphKind k) {
  switch (k) {
    case GraphKind::word:
      return "w";
    case GraphKind::pos:
      return "p";
    default:
      return "e";
  }
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(s);
  while (std::getline(ss, cur, ',')) {
    std::size_t b = cur.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    std::size_t e = cur.find_last_not_of(" \t");
    out.push_back(cur.substr(b, e - b + 1));
  }
  return out;
}

}  // namespace

Ablations parse_ablations(const std::string& names) {
  Ablations a;
  for (const std::string& part : split_csv(names)) {
    if (part == "none" || part == "full") continue;
    if (part == "no_Gw") a.no_Gw = true;
    else if (part == "no_Gp") a.no_Gp = true;
    else if (part == "no_Ge") a.no_Ge = true;
    else if (part == "no_Gs") a.no_Gs = true;
    else if (part == "no_pre") a.no_pre = true;
    else if (part == "pre_as_Xw") a.pre_as_Xw = true;
    else if (part == "no_word_gnn") a.no_word_gnn = true;
    else if (part == "no_doc_gnn") a.no_doc_gnn = true;
    else
      throw std::runtime_error(
          "unknown ablation '" + part +
          "' (valid: none, no_Gw, no_Gp, no_Ge, no_Gs, no_pre, pre_as_Xw, no_word_gnn, "
          "no_doc_gnn)");
  }
  return a;
}

std::string ablation_string(const Ablations& a) {
  std::string out;
  auto put = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  put(a.no_Gw, "no_Gw");
  put(a.no_Gp, "no_Gp");
  put(a.no_Ge, "no_Ge");
  put(a.no_Gs, "no_Gs");
  put(a.no_pre, "no_pre");
  put(a.pre_as_Xw, "pre_as_Xw");
  put(a.no_word_gnn, "no_word_gnn");
  put(a.no_doc_gnn, "no_doc_gnn");
  return out.empty() ? "none" : out;
}

ShineModel::ShineModel(ShineConfig cfg, const ComponentGraphs& graphs, std::size_t num_classes,
                       Matrix pretrained)
    : cfg_(cfg), num_classes_(num_classes), pretrained_(std::move(pretrained)) {
  const Ablations& ab = cfg_.ablations;
  if (ab.no_Gw && ab.no_Gp && ab.no_Ge)
    throw std::runtime_error("model config: all component graphs are ablated away; keep at least one");
  if (!(cfg_.dropout >= 0.0 && cfg_.dropout < 1.0))
    throw std::runtime_error("model config: dropout must lie in [0, 1)");
  if (cfg_.delta_s < 0.0) throw std::runtime_error("model config: delta_s must be >= 0");
  if (cfg_.gcn_dim == 0) throw std::runtime_error("model config: gcn_dim must be positive");
  if (num_classes_ < 2) throw std::runtime_error("model config: need at least two classes");
  if (!(cfg_.lp_alpha >= 0.0 && cfg_.lp_alpha < 1.0))
    throw std::runtime_error("model config: lp_alpha must lie in [0, 1)");

  const bool needs_pre = !ab.no_Gw && (ab.pre_as_Xw || (cfg_.use_pretrained_word && !ab.no_pre));
  if (needs_pre) {
    if (pretrained_.rows() != graphs.word.num_nodes())
      throw std::runtime_error("pretrained word matrix has " + std::to_string(pretrained_.rows()) +
                               " rows but the vocabulary has " +
                               std::to_string(graphs.word.num_nodes()) + " entries");
    if (pretrained_.cols() == 0)
      throw std::runtime_error("pretrained word matrix has zero columns");
    check_finite(pretrained_, "pretrained word vectors");
    cfg_.pretrained_dim = pretrained_.cols();
  }

  hash_w_ = fnv1a_names(graphs.word.node_names);
  hash_p_ = fnv1a_names(graphs.pos.node_names);
  hash_e_ = fnv1a_names(graphs.entity.node_names);

  Rng rng(Rng::derive(cfg_.seed, 0x5EED));
  auto branch_in_dim = [&](const ComponentGraph& g) -> std::size_t {
    if (g.kind == GraphKind::word && ab.pre_as_Xw) return pretrained_.cols();
    return g.feature_dim();
  };
  auto add_branch_params = [&](const ComponentGraph& g, bool enabled) {
    if (!enabled || ab.no_word_gnn) return;
    std::string sfx = suffix_of(g.kind);
    add_param("W1_" + sfx, branch_in_dim(g), cfg_.gcn_dim, rng);
    add_param("W2_" + sfx, cfg_.gcn_dim, cfg_.gcn_dim, rng);
  };
  add_branch_params(graphs.word, !ab.no_Gw);
  add_branch_params(graphs.pos, !ab.no_Gp);
  add_branch_params(graphs.entity, !ab.no_Ge);

  auto branch_out_dim = [&](const ComponentGraph& g) -> std::size_t {
    std::size_t base = ab.no_word_gnn ? branch_in_dim(g) : cfg_.gcn_dim;
    if (g.kind == GraphKind::word && cfg_.use_pretrained_word && !ab.no_pre)
      base += pretrained_.cols();
    return base;
  };
  x_s_dim_ = 0;
  if (!ab.no_Gw) x_s_dim_ += branch_out_dim(graphs.word);
  if (!ab.no_Gp) x_s_dim_ += branch_out_dim(graphs.pos);
  if (!ab.no_Ge) x_s_dim_ += branch_out_dim(graphs.entity);
  if (x_s_dim_ == 0) throw std::runtime_error("model config: pooled document features are empty");

  if (!ab.no_doc_gnn) {
    add_param("Ws1", x_s_dim_, cfg_.gcn_dim, rng);
    add_param("Ws2", cfg_.gcn_dim, num_classes_, rng);
  }
}

Parameter& ShineModel::add_param(const std::string& name, std::size_t rows, std::size_t cols,
                                 Rng& rng) {
  params_.push_back(std::make_unique<Parameter>(name, glorot_uniform(rows, cols, rng)));
  return *params_.back();
}

std::vector<Parameter*> ShineModel::parameters() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

bool ShineModel::has_param(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return true;
  return false;
}

Parameter& ShineModel::param(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return *p;
  throw std::runtime_error("no parameter named '" + name + "'");
}

std::vector<Matrix> ShineModel::snapshot() const {
  std::vector<Matrix> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p->value);
  return out;
}

void ShineModel::restore(const std::vector<Matrix>& snap) {
  if (snap.size() != params_.size())
    throw std::runtime_error("snapshot has " + std::to_string(snap.size()) + " matrices, model has " +
                             std::to_string(params_.size()));
  for (std::size_t i = 0; i < snap.size(); ++i) {
    if (!snap[i].same_shape(params_[i]->value))
      throw std::runtime_error("snapshot shape mismatch for parameter '" + params_[i]->name + "'");
    params_[i]->value = snap[i];
  }
}

std::uint64_t fnv1a_names(const std::vector<std::string>& names) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](unsigned char c) {
    h ^= c;
    h *= 1099511628211ULL;
  };
  for (const auto& s : names) {
    for (char c : s) mix(static_cast<unsigned char>(c));
    mix(0xff);  // separator so {"ab","c"} != {"a","bc"}
  }
  return h;
}

std::uint64_t ShineModel::parameter_checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](unsigned char c) {
    h ^= c;
    h *= 1099511628211ULL;
  };
  for (const auto& p : params_) {
    for (char c : p->name) mix(static_cast<unsigned char>(c));
    mix(0xff);
    const double* d = p->value.data();
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &d[i], sizeof(double));
      for (unsigned char b : bytes) mix(b);
    }
  }
  return h;
}

DiffTensor ShineModel::component_embeddings(Tape& tape, const ComponentGraph& graph, bool training,
                                            Rng& rng, bool naive) {
  const Ablations& ab = cfg_.ablations;
  const bool is_word = graph.kind == GraphKind::word;
  const bool concat_pre = is_word && cfg_.use_pretrained_word && !ab.no_pre;
  const bool replace_input = is_word && ab.pre_as_Xw;

  auto input_matrix = [&]() -> Matrix {
    if (replace_input) return pretrained_;
    if (graph.one_hot) return Matrix::identity(graph.num_nodes());
    return graph.features;
  };

  DiffTensor h;
  if (ab.no_word_gnn) {
    h = tape.constant(input_matrix());
  } else {
    std::string sfx = suffix_of(graph.kind);
    DiffTensor w1 = tape.param(param("W1_" + sfx));
    DiffTensor w2 = tape.param(param("W2_" + sfx));
    DiffTensor pre1;
    if (graph.one_hot && !replace_input && !naive) {
      // One-hot input: X W1 is W1 itself, and input dropout zeroes whole
      // one-hot rows, so row dropout on W1 is the same computation without
      // ever materializing the identity. Bit-identical to the naive path.
      DiffTensor w1d = dropout_rows(w1, cfg_.dropout, training, rng);
      pre1 = spmm(graph.norm_adjacency, w1d);
    } else {
      DiffTensor x = tape.constant(input_matrix());
      DiffTensor xd = (graph.one_hot && !replace_input)
                          ? dropout_rows(x, cfg_.dropout, training, rng)
                          : dropout(x, cfg_.dropout, training, rng);
      pre1 = spmm(graph.norm_adjacency, matmul(xd, w1));
    }
    DiffTensor r = dropout(relu(pre1), cfg_.dropout, training, rng);
    h = spmm(graph.norm_adjacency, matmul(r, w2));
  }
  if (concat_pre) h = concat_cols({h, tape.constant(pretrained_)});
  return h;
}

DiffTensor ShineModel::pool_documents(Tape& tape, const ComponentGraphs& graphs, bool training,
                                      Rng& rng, bool naive) {
  const Ablations& ab = cfg_.ablations;
  std::vector<DiffTensor> pooled;
  auto add_branch = [&](const ComponentGraph& g) {
    DiffTensor h = component_embeddings(tape, g, training, rng, naive);
    pooled.push_back(l2_normalize_rows(spmm(g.pooling, h)));
  };
  if (!ab.no_Gw) add_branch(graphs.word);
  if (!ab.no_Gp) add_branch(graphs.pos);
  if (!ab.no_Ge) add_branch(graphs.entity);
  if (pooled.size() == 1) return pooled[0];
  return concat_cols(pooled);
}

DiffSparse ShineModel::doc_adjacency(DiffTensor x_s) const {
  return thresholded_gram(x_s, cfg_.delta_s, cfg_.force_doc_self_loops);
}

DiffTensor ShineModel::predict(Tape& tape, DiffTensor x_s, bool training, Rng& rng,
                               const std::vector<int>& labels,
                               const std::vector<std::size_t>& labeled_ids, ForwardStats* stats) {
  const Ablations& ab = cfg_.ablations;
  const std::size_t n = x_s.value().rows();
  if (stats) stats->x_s_dim = x_s.value().cols();

  if (ab.no_doc_gnn) {
    // Label propagation over the (row-normalized) document graph in place of
    // the trained GCN; the sparsified entries still carry gradients.
    if (labels.size() != n)
      throw std::runtime_error("predict: labels size does not match document count");
    Matrix y0(n, num_classes_);
    for (std::size_t id : labeled_ids) {
      if (id >= n) throw std::runtime_error("predict: labeled id out of range");
      if (labels[id] < 0 || static_cast<std::size_t>(labels[id]) >= num_classes_)
        throw std::runtime_error("predict: label out of range for document " + std::to_string(id));
      y0(id, static_cast<std::size_t>(labels[id])) = 1.0;
    }
    Matrix y0_scaled = y0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < num_classes_; ++c) y0_scaled(i, c) *= 1.0 - cfg_.lp_alpha;
    DiffTensor f = tape.constant(y0);
    DiffTensor pull = tape.constant(std::move(y0_scaled));
    if (ab.no_Gs) {
      if (stats) stats->doc_edges = n;
      for (std::size_t it = 0; it < cfg_.lp_iters; ++it)
        f = add(scale(f, cfg_.lp_alpha), pull);
    } else {
      DiffSparse a = doc_adjacency(x_s);
      if (stats) stats->doc_edges = a.nnz();
      DiffSparse r = row_normalize_sparse(a);
      for (std::size_t it = 0; it < cfg_.lp_iters; ++it)
        f = add(scale(spmm(r, f), cfg_.lp_alpha), pull);
    }
    return l1_normalize_rows_or_uniform(f);
  }

  DiffTensor ws1 = tape.param(param("Ws1"));
  DiffTensor ws2 = tape.param(param("Ws2"));
  DiffTensor z1 = dropout(x_s, cfg_.dropout, training, rng);
  DiffTensor logits;
  if (ab.no_Gs) {
    // Identity adjacency: the propagation steps collapse away.
    if (stats) stats->doc_edges = n;
    DiffTensor l1 = relu(matmul(z1, ws1));
    DiffTensor z2 = dropout(l1, cfg_.dropout, training, rng);
    logits = matmul(z2, ws2);
  } else {
    DiffSparse a_raw = doc_adjacency(x_s);
    if (stats) stats->doc_edges = a_raw.nnz();
    DiffSparse a = cfg_.normalize_doc_adj ? normalize_doc_sparse(a_raw) : a_raw;
    DiffTensor l1 = relu(spmm(a, matmul(z1, ws1)));
    DiffTensor z2 = dropout(l1, cfg_.dropout, training, rng);
    logits = spmm(a, matmul(z2, ws2));
  }
  return softmax_rows(logits);
}

ForwardResult ShineModel::forward(Tape& tape, const ComponentGraphs& graphs,
                                  const std::vector<int>& labels,
                                  const std::vector<std::size_t>& loss_mask,
                                  const std::vector<std::size_t>& labeled_ids, bool training,
                                  Rng& rng, bool naive) {
  DiffTensor x_s = pool_documents(tape, graphs, training, rng, naive);
  ForwardStats stats;
  DiffTensor pred = predict(tape, x_s, training, rng, labels, labeled_ids, &stats);
  DiffTensor loss = masked_cross_entropy(pred, labels, loss_mask);
  return ForwardResult{pred, loss, stats};
}

Matrix ShineModel::predict_eval(const ComponentGraphs& graphs, const std::vector<int>& labels,
                                const std::vector<std::size_t>& labeled_ids, ForwardStats* stats) {
  Tape tape;
  Rng rng(0);  // never consumed: dropout is inactive outside training
  DiffTensor x_s = pool_documents(tape, graphs, false, rng, false);
  ForwardStats local;
  DiffTensor pred = predict(tape, x_s, false, rng, labels, labeled_ids, &local);
  if (stats) *stats = local;
  return pred.value();
}

namespace {

void wr_u64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  os.write(buf, 8);
}

void wr_f64(std::ostream& os, double v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  os.write(buf, 8);
}

void wr_u8(std::ostream& os, bool v) {
  char c = v ? 1 : 0;
  os.write(&c, 1);
}

void wr_str(std::ostream& os, const std::string& s) {
  wr_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint64_t rd_u64(std::istream& is) {
  char buf[8];
  is.read(buf, 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v;
  std::memcpy(&v, buf, 8);
  return v;
}

double rd_f64(std::istream& is) {
  char buf[8];
  is.read(buf, 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  double v;
  std::memcpy(&v, buf, 8);
  return v;
}

bool rd_u8(std::istream& is) {
  char c;
  is.read(&c, 1);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return c != 0;
}

std::string rd_str(std::istream& is) {
  std::uint64_t len = rd_u64(is);
  if (len > (1ULL << 32)) throw std::runtime_error("checkpoint: implausible string length");
  std::string s(len, '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

constexpr char kMagic[8] = {'S', 'H', 'I', 'N', 'E', 'C', 'K', '1'};

void write_header(std::ostream& os, const ShineConfig& c, std::size_t num_classes,
                  const std::vector<std::string>& label_names, std::uint64_t hw, std::uint64_t hp,
                  std::uint64_t he) {
  os.write(kMagic, 8);
  wr_u64(os, num_classes);
  wr_u64(os, c.gcn_dim);
  wr_f64(os, c.delta_s);
  wr_f64(os, c.dropout);
  wr_u8(os, c.use_pretrained_word);
  wr_u64(os, c.pretrained_dim);
  wr_u8(os, c.normalize_doc_adj);
  wr_u8(os, c.force_doc_self_loops);
  wr_f64(os, c.lp_alpha);
  wr_u64(os, c.lp_iters);
  wr_u64(os, c.seed);
  const Ablations& a = c.ablations;
  wr_u8(os, a.no_Gw);
  wr_u8(os, a.no_Gp);
  wr_u8(os, a.no_Ge);
  wr_u8(os, a.no_Gs);
  wr_u8(os, a.no_pre);
  wr_u8(os, a.pre_as_Xw);
  wr_u8(os, a.no_word_gnn);
  wr_u8(os, a.no_doc_gnn);
  wr_u64(os, label_names.size());
  for (const auto& name : label_names) wr_str(os, name);
  wr_u64(os, hw);
  wr_u64(os, hp);
  wr_u64(os, he);
}

CheckpointInfo read_header(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic (not a checkpoint file?)");
  CheckpointInfo info;
  info.num_classes = rd_u64(is);
  info.config.gcn_dim = rd_u64(is);
  info.config.delta_s = rd_f64(is);
  info.config.dropout = rd_f64(is);
  info.config.use_pretrained_word = rd_u8(is);
  info.config.pretrained_dim = rd_u64(is);
  info.config.normalize_doc_adj = rd_u8(is);
  info.config.force_doc_self_loops = rd_u8(is);
  info.config.lp_alpha = rd_f64(is);
  info.config.lp_iters = rd_u64(is);
  info.config.seed = rd_u64(is);
  Ablations& a = info.config.ablations;
  a.no_Gw = rd_u8(is);
  a.no_Gp = rd_u8(is);
  a.no_Ge = rd_u8(is);
  a.no_Gs = rd_u8(is);
  a.no_pre = rd_u8(is);
  a.pre_as_Xw = rd_u8(is);
  a.no_word_gnn = rd_u8(is);
  a.no_doc_gnn = rd_u8(is);
  std::uint64_t num_labels = rd_u64(is);
  for (std::uint64_t i = 0; i < num_labels; ++i) info.label_names.push_back(rd_str(is));
  info.hash_w = rd_u64(is);
  info.hash_p = rd_u64(is);
  info.hash_e = rd_u64(is);
  return info;
}

}  // namespace

void save_checkpoint(const ShineModel& model, const std::vector<std::string>& label_names,
                     const std::string& path) {
  if (label_names.size() != model.num_classes())
    throw std::runtime_error("checkpoint: label name count does not match the class count");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  write_header(os, model.config(), model.num_classes(), label_names, model.node_hash_word(),
               model.node_hash_pos(), model.node_hash_entity());
  // Parameters are written as raw 64-bit payloads so reload is bit-exact.
  ShineModel& m = const_cast<ShineModel&>(model);
  auto params = m.parameters();
  wr_u64(os, params.size());
  for (const Parameter* p : params) {
    wr_str(os, p->name);
    wr_u64(os, p->value.rows());
    wr_u64(os, p->value.cols());
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  return read_header(is);
}

void load_checkpoint_values(ShineModel& model, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  CheckpointInfo info = read_header(is);
  if (info.num_classes != model.num_classes())
    throw std::runtime_error("checkpoint: class count mismatch");
  if (info.hash_w != model.node_hash_word())
    throw std::runtime_error("checkpoint: word vocabulary does not match this corpus");
  if (info.hash_p != model.node_hash_pos())
    throw std::runtime_error("checkpoint: tag set does not match this corpus");
  if (info.hash_e != model.node_hash_entity())
    throw std::runtime_error("checkpoint: entity set does not match this corpus");
  std::uint64_t count = rd_u64(is);
  auto params = model.parameters();
  if (count != params.size())
    throw std::runtime_error("checkpoint: parameter count mismatch (file has " +
                             std::to_string(count) + ", model has " +
                             std::to_string(params.size()) + ")");
  for (Parameter* p : params) {
    std::string name = rd_str(is);
    if (name != p->name)
      throw std::runtime_error("checkpoint: parameter order mismatch ('" + name + "' vs '" +
                               p->name + "')");
    std::uint64_t rows = rd_u64(is);
    std::uint64_t cols = rd_u64(is);
    if (rows != p->value.rows() || cols != p->value.cols())
      throw std::runtime_error("checkpoint: shape mismatch for parameter '" + name + "'");
    is.read(reinterpret_cast<char*>(p->value.data()),
            static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated parameter payload");
  }
}

}  // namespace shine
