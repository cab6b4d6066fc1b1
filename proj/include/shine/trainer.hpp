#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "shine/corpus.hpp"
#include "shine/model.hpp"

namespace shine {

struct TrainConfig {
  std::size_t max_epochs = 1000;
  std::size_t patience = 10;  // consecutive epochs without strict val-loss decrease
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double seconds = 0.0;
};

struct RunHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;     // epoch whose parameters the model holds now
  std::size_t stopped_epoch = 0;  // last epoch that actually ran
  double best_val_loss = 0.0;
  std::size_t x_s_dim = 0;
  std::size_t doc_edges_initial = 0;  // document adjacency size before any update
  std::size_t doc_edges_final = 0;    // same measurement after restoring the best epoch
};

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

// Ties pick the lowest class index.
std::vector<int> argmax_rows(const Matrix& probs);

Metrics compute_metrics(const Matrix& probs, const std::vector<int>& labels,
                        const std::vector<std::size_t>& ids, std::size_t num_classes);

// Full-batch training: one optimizer step per epoch, early stopping on strict
// validation-loss decrease, best-epoch parameters restored before returning.
// Dropout noise is derived from the config seed per epoch, so a rerun with the
// same seed retraces the run bit for bit. Throws (naming the epoch) if the
// loss or a gradient goes non-finite.
RunHistory train_model(ShineModel& model, const ComponentGraphs& graphs,
                       const std::vector<int>& labels, const SplitSpec& split,
                       const TrainConfig& tcfg, std::ostream* progress = nullptr);

// Evaluation-mode metrics over `ids`.
Metrics evaluate(ShineModel& model, const ComponentGraphs& graphs, const std::vector<int>& labels,
                 const std::vector<std::size_t>& ids, const std::vector<std::size_t>& labeled_ids);

// Same per-class shuffle as make_split, but the labeled pool is a prefix so
// pools nest across values of v, and the test set is the complement of the
// largest pool v_max. v must be even and positive, v <= v_max.
SplitSpec nested_split(const CorpusBundle& corpus, std::size_t v, std::size_t v_max,
                       std::uint64_t seed);

// The even per-class labeled count implied by a labeled share of the corpus;
// rejects fractions outside (0, 1) or too small to label 2 docs per class.
std::size_t label_fraction_count(const CorpusBundle& corpus, double fraction);

struct SweepRow {
  std::string param;
  std::string value;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::size_t doc_edges_initial = 0;
  std::size_t doc_edges_final = 0;
  std::size_t best_epoch = 0;
  std::size_t stopped_epoch = 0;
};

// param is one of "delta_s", "label_fraction", "labels_per_class", "gcn_dim"
// (a fraction is converted to the even per-class count it implies). Each
// value trains a fresh model from the same seed. For the labeled-pool params
// the per-class pools are nested prefixes of one shuffle and every run shares
// the test set (the complement of the largest pool), so the rows compare.
std::vector<SweepRow> run_sweep(const std::string& param, const std::vector<std::string>& values,
                                const ShineConfig& base_cfg, const ComponentGraphs& graphs,
                                const CorpusBundle& corpus, const SplitSpec& base_split,
                                const TrainConfig& tcfg, const Matrix& pretrained,
                                std::ostream* progress = nullptr);

struct AblationRow {
  std::string variant;
  std::size_t x_s_dim = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

// Trains one model per variant name ("none" for the full model) and reports
// test metrics. All runs share the graphs, split, seed, and trainer settings.
std::vector<AblationRow> run_ablations(const std::vector<std::string>& variants,
                                       const ShineConfig& base_cfg, const ComponentGraphs& graphs,
                                       const CorpusBundle& corpus, const SplitSpec& split,
                                       const TrainConfig& tcfg, const Matrix& pretrained,
                                       std::ostream* progress = nullptr);

void write_runlog_csv(const std::string& path, const RunHistory& hist);
void write_metrics_json(const std::string& path, const ShineModel& model, const RunHistory& hist,
                        const Metrics& val, const Metrics& test,
                        const std::vector<std::string>& label_names);
// Same shape minus the run-history fields, for evaluating a checkpoint.
void write_eval_metrics_json(const std::string& path, const ShineModel& model, const Metrics& val,
                             const Metrics& test, const std::vector<std::string>& label_names);
void write_split_json(const std::string& path, const SplitSpec& split);
SplitSpec read_split_json(const std::string& path);
void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

}  // namespace shine
