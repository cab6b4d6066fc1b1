#include "shine/run_config.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

namespace shine {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw std::runtime_error("config key '" + key + "': expected " + want + ", got '" + value + "'");
}

std::uint64_t as_u64(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &used);
  } catch (const std::exception&) {
    bad_value(key, value, "an unsigned integer");
  }
  if (used != value.size() || value[0] == '-') bad_value(key, value, "an unsigned integer");
  return v;
}

std::size_t as_size(const std::string& key, const std::string& value) {
  return static_cast<std::size_t>(as_u64(key, value));
}

double as_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    bad_value(key, value, "a number");
  }
  if (used != value.size()) bad_value(key, value, "a number");
  return v;
}

bool as_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "true or false");
}

std::vector<std::string> as_list(const std::string& key, const std::string& value) {
  std::vector<std::string> items;
  std::size_t pos = 0;
  while (pos <= value.size()) {
    std::size_t comma = value.find(',', pos);
    if (comma == std::string::npos) comma = value.size();
    std::string item = trim(value.substr(pos, comma - pos));
    if (item.empty()) bad_value(key, value, "a comma-separated list without empty items");
    items.push_back(item);
    pos = comma + 1;
  }
  return items;
}

}  // namespace

void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "corpus") cfg.corpus = value;
  else if (key == "format") cfg.format = value;
  else if (key == "stopwords") cfg.stopwords = value;
  else if (key == "entity_embeddings") cfg.entity_embeddings = value;
  else if (key == "entity_triples") cfg.entity_triples = value;
  else if (key == "pretrained_vectors") cfg.pretrained_vectors = value;
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "checkpoint") cfg.checkpoint = value;
  else if (key == "min_doc_count") cfg.min_doc_count = as_size(key, value);
  else if (key == "window") cfg.window = as_size(key, value);
  else if (key == "labels_per_class") cfg.labels_per_class = as_size(key, value);
  else if (key == "gcn_dim") cfg.model.gcn_dim = as_size(key, value);
  else if (key == "delta_s") cfg.model.delta_s = as_double(key, value);
  else if (key == "dropout") cfg.model.dropout = as_double(key, value);
  else if (key == "use_pretrained_word") cfg.model.use_pretrained_word = as_bool(key, value);
  else if (key == "pretrained_dim") cfg.model.pretrained_dim = as_size(key, value);
  else if (key == "ablation") cfg.model.ablations = parse_ablations(value);
  else if (key == "normalize_doc_adj") cfg.model.normalize_doc_adj = as_bool(key, value);
  else if (key == "force_doc_self_loops") cfg.model.force_doc_self_loops = as_bool(key, value);
  else if (key == "lp_alpha") cfg.model.lp_alpha = as_double(key, value);
  else if (key == "lp_iters") cfg.model.lp_iters = as_size(key, value);
  else if (key == "max_epochs") cfg.train.max_epochs = as_size(key, value);
  else if (key == "patience") cfg.train.patience = as_size(key, value);
  else if (key == "lr") cfg.train.lr = as_double(key, value);
  else if (key == "seed") cfg.model.seed = cfg.train.seed = as_u64(key, value);
  else if (key == "transe_dim") cfg.transe_dim = as_size(key, value);
  else if (key == "transe_margin") cfg.transe_margin = as_double(key, value);
  else if (key == "transe_epochs") cfg.transe_epochs = as_size(key, value);
  else if (key == "transe_lr") cfg.transe_lr = as_double(key, value);
  else if (key == "sweep_param") cfg.sweep_param = value;
  else if (key == "sweep_values") cfg.sweep_values = as_list(key, value);
  else if (key == "variants") cfg.variants = as_list(key, value);
  else throw std::runtime_error("config: unknown key '" + key + "'");
}

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = {
      "corpus",        "format",          "stopwords",      "entity_embeddings",
      "entity_triples", "pretrained_vectors", "out_dir",    "checkpoint",
      "min_doc_count", "window",          "labels_per_class",
      "gcn_dim",       "delta_s",         "dropout",        "use_pretrained_word",
      "pretrained_dim", "ablation",       "normalize_doc_adj", "force_doc_self_loops",
      "lp_alpha",      "lp_iters",
      "max_epochs",    "patience",        "lr",             "seed",
      "transe_dim",    "transe_margin",   "transe_epochs",  "transe_lr",
      "sweep_param",   "sweep_values",    "variants",
  };
  return keys;
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file '" + path + "'");

  RunConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config file '" + path + "' line " + std::to_string(lineno) +
                               ": expected `key = value`");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config file '" + path + "' line " + std::to_string(lineno) +
                               ": empty key");
    try {
      apply_config_key(cfg, key, value);
    } catch (const std::exception& e) {
      throw std::runtime_error("config file '" + path + "' line " + std::to_string(lineno) + ": " +
                               e.what());
    }
  }
  for (const auto& [key, value] : overrides) apply_config_key(cfg, key, value);
  return cfg;
}

}  // namespace shine
