#pragma once

#include <string>
#include <vector>

#include "shine/model.hpp"
#include "shine/trainer.hpp"

namespace shine {

// Everything a command needs, assembled from a `key = value` file plus
// `--key value` command-line overrides. One flat namespace of keys; the
// recognized set lives in run_config.cpp and unknown keys are rejected.
struct RunConfig {
  // inputs and outputs
  std::string corpus;
  std::string format = "jsonl";
  std::string stopwords;
  std::string entity_embeddings;
  std::string entity_triples;  // fallback: train embeddings from these
  std::string pretrained_vectors;
  std::string out_dir = "out";
  std::string checkpoint;

  // preprocessing
  std::size_t min_doc_count = 1;
  std::size_t window = 5;
  std::size_t labels_per_class = 40;

  ShineConfig model;
  TrainConfig train;

  // entity embedding training when only triples are given
  std::size_t transe_dim = 100;
  double transe_margin = 1.0;
  std::size_t transe_epochs = 200;
  double transe_lr = 0.01;

  // sweep / ablate inputs
  std::string sweep_param;
  std::vector<std::string> sweep_values;
  std::vector<std::string> variants;
};

// Applies one key; throws on an unknown key or a malformed value. `seed`
// sets the model and trainer seeds together.
void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value);

// Blank lines and lines starting with '#' are skipped; everything else must
// be `key = value`. Overrides are (key, value) pairs applied after the file.
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides = {});

// The key names load_run_config accepts, in documentation order.
const std::vector<std::string>& run_config_keys();

}  // namespace shine
