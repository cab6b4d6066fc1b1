#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "shine/autodiff.hpp"
#include "shine/graph_builder.hpp"
#include "shine/matrix.hpp"
#include "shine/rng.hpp"

namespace shine {

struct Ablations {
  bool no_Gw = false;        // drop the word graph branch
  bool no_Gp = false;        // drop the pos graph branch
  bool no_Ge = false;        // drop the entity graph branch
  bool no_Gs = false;        // document adjacency becomes the identity
  bool no_pre = false;       // drop the pretrained concatenation
  bool pre_as_Xw = false;    // pretrained vectors replace the one-hot word input
  bool no_word_gnn = false;  // component embeddings pass features through
  bool no_doc_gnn = false;   // label propagation instead of the document GCN

  bool any() const {
    return no_Gw || no_Gp || no_Ge || no_Gs || no_pre || pre_as_Xw || no_word_gnn || no_doc_gnn;
  }
};

// Parses a comma-separated list of ablation names ("none" or empty clears).
Ablations parse_ablations(const std::string& names);
std::string ablation_string(const Ablations& a);

struct ShineConfig {
  std::size_t gcn_dim = 200;
  double delta_s = 2.5;
  double dropout = 0.5;
  bool use_pretrained_word = false;
  std::size_t pretrained_dim = 300;
  Ablations ablations;
  bool normalize_doc_adj = false;
  bool force_doc_self_loops = false;
  double lp_alpha = 0.5;       // label propagation mixing (no_doc_gnn)
  std::size_t lp_iters = 50;
  std::uint64_t seed = 0;
};

struct ForwardStats {
  std::size_t x_s_dim = 0;
  std::size_t doc_edges = 0;  // stored entries of the document adjacency
};

struct ForwardResult {
  DiffTensor predictions;  // N x C, rows sum to 1
  DiffTensor loss;         // 1 x 1
  ForwardStats stats;
};

// The full parameter set plus the forward pass. Construction initializes all
// weights from the config seed; the same seed and graphs give bit-identical
// parameters.
class ShineModel {
 public:
  ShineModel(ShineConfig cfg, const ComponentGraphs& graphs, std::size_t num_classes,
             Matrix pretrained = Matrix());

  const ShineConfig& config() const { return cfg_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t x_s_dim() const { return x_s_dim_; }
  const Matrix& pretrained() const { return pretrained_; }

  std::vector<Parameter*> parameters();
  bool has_param(const std::string& name) const;
  Parameter& param(const std::string& name);

  std::vector<Matrix> snapshot() const;
  void restore(const std::vector<Matrix>& snap);
  std::uint64_t parameter_checksum() const;

  // Two-layer propagation for one branch, returning the tensor exposed to
  // pooling (with the
  // pretrained concatenation applied for the word branch). `naive` forces
  // materializing one-hot features as an explicit identity; the default path
  // must produce bit-identical values.
  DiffTensor component_embeddings(Tape& tape, const ComponentGraph& graph, bool training,
                                  Rng& rng, bool naive = false);

  // Per-branch pooled unit vectors, concatenated.
  DiffTensor pool_documents(Tape& tape, const ComponentGraphs& graphs, bool training,
                            Rng& rng, bool naive = false);

  // Thresholded gram adjacency over the pooled features (threshold and
  // self-loop flag from config).
  DiffSparse doc_adjacency(DiffTensor x_s) const;

  // Document-level propagation and row softmax (label propagation under
  // no_doc_gnn; identity adjacency under no_Gs). labeled_ids seed the
  // propagation's Y0; unused otherwise.
  DiffTensor predict(Tape& tape, DiffTensor x_s, bool training, Rng& rng,
                     const std::vector<int>& labels,
                     const std::vector<std::size_t>& labeled_ids,
                     ForwardStats* stats = nullptr);

  // The whole pipeline wired in order. loss_mask picks the rows entering the loss
  // (train ids during training, val ids for validation loss); labeled_ids is
  // always the training set.
  ForwardResult forward(Tape& tape, const ComponentGraphs& graphs,
                        const std::vector<int>& labels,
                        const std::vector<std::size_t>& loss_mask,
                        const std::vector<std::size_t>& labeled_ids, bool training, Rng& rng,
                        bool naive = false);

  // Deterministic evaluation-mode probabilities (fresh tape, no dropout).
  Matrix predict_eval(const ComponentGraphs& graphs, const std::vector<int>& labels,
                      const std::vector<std::size_t>& labeled_ids, ForwardStats* stats = nullptr);

  std::uint64_t node_hash_word() const { return hash_w_; }
  std::uint64_t node_hash_pos() const { return hash_p_; }
  std::uint64_t node_hash_entity() const { return hash_e_; }

 private:
  Parameter& add_param(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng);

  ShineConfig cfg_;
  std::size_t num_classes_ = 0;
  std::size_t x_s_dim_ = 0;
  Matrix pretrained_;  // frozen, |V_w| x pretrained_dim when used
  std::vector<std::unique_ptr<Parameter>> params_;
  std::uint64_t hash_w_ = 0, hash_p_ = 0, hash_e_ = 0;
};

std::uint64_t fnv1a_names(const std::vector<std::string>& names);

struct CheckpointInfo {
  ShineConfig config;
  std::size_t num_classes = 0;
  std::vector<std::string> label_names;
  std::uint64_t hash_w = 0, hash_p = 0, hash_e = 0;
};

// Versioned binary container: config, label names, node-name hashes, and all
// parameter matrices as raw 64-bit values; round trips are bit-exact.
void save_checkpoint(const ShineModel& model, const std::vector<std::string>& label_names,
                     const std::string& path);
CheckpointInfo read_checkpoint_info(const std::string& path);
// Fills the parameters of a model built from the matching config and graphs.
void load_checkpoint_values(ShineModel& model, const std::string& path);

}  // namespace shine
