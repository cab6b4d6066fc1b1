#include "shine/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "shine/adam.hpp"

namespace shine {

namespace {

std::vector<int> labels_of(const CorpusBundle& corpus) {
  std::vector<int> labels(corpus.size(), -1);
  for (const Document& d : corpus.documents) labels[d.id] = d.label;
  return labels;
}

std::size_t parse_size(const std::string& s, const char* what) {
  std::size_t idx = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &idx);
  } catch (const std::exception&) {
    throw std::runtime_error(std::string(what) + ": cannot parse '" + s + "' as an integer");
  }
  if (idx != s.size())
    throw std::runtime_error(std::string(what) + ": trailing characters in '" + s + "'");
  return static_cast<std::size_t>(v);
}

double parse_double(const std::string& s, const char* what) {
  std::size_t idx = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &idx);
  } catch (const std::exception&) {
    throw std::runtime_error(std::string(what) + ": cannot parse '" + s + "' as a number");
  }
  if (idx != s.size())
    throw std::runtime_error(std::string(what) + ": trailing characters in '" + s + "'");
  return v;
}

}  // namespace

std::vector<int> argmax_rows(const Matrix& probs) {
  std::vector<int> out(probs.rows(), 0);
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < probs.cols(); ++j)
      if (probs(i, j) > probs(i, best)) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

Metrics compute_metrics(const Matrix& probs, const std::vector<int>& labels,
                        const std::vector<std::size_t>& ids, std::size_t num_classes) {
  Metrics m;
  m.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  if (ids.empty()) return m;
  std::vector<int> pred = argmax_rows(probs);
  std::size_t correct = 0;
  for (std::size_t id : ids) {
    if (id >= probs.rows()) throw std::runtime_error("compute_metrics: id out of range");
    int t = labels[id];
    int p = pred[id];
    if (t < 0 || static_cast<std::size_t>(t) >= num_classes)
      throw std::runtime_error("compute_metrics: label out of range");
    m.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)] += 1;
    if (t == p) ++correct;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(ids.size());

  double f1_sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t tp = m.confusion[c][c];
    std::size_t fp = 0, fn = 0;
    for (std::size_t o = 0; o < num_classes; ++o) {
      if (o == c) continue;
      fp += m.confusion[o][c];
      fn += m.confusion[c][o];
    }
    double prec = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    double rec = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    double f1 = (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    f1_sum += f1;  // classes absent from `ids` contribute 0
  }
  m.macro_f1 = f1_sum / static_cast<double>(num_classes);
  return m;
}

RunHistory train_model(ShineModel& model, const ComponentGraphs& graphs,
                       const std::vector<int>& labels, const SplitSpec& split,
                       const TrainConfig& tcfg, std::ostream* progress) {
  if (split.train_ids.empty()) throw std::runtime_error("train_model: empty training split");
  if (split.val_ids.empty()) throw std::runtime_error("train_model: empty validation split");
  if (tcfg.max_epochs == 0) throw std::runtime_error("train_model: max_epochs must be positive");
  if (tcfg.patience == 0) throw std::runtime_error("train_model: patience must be positive");

  RunHistory hist;
  {
    ForwardStats st0;
    model.predict_eval(graphs, labels, split.train_ids, &st0);
    hist.x_s_dim = st0.x_s_dim;
    hist.doc_edges_initial = st0.doc_edges;
  }

  AdamConfig acfg;
  acfg.lr = tcfg.lr;
  AdamState adam(model.parameters(), acfg);

  double best = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::vector<Matrix> best_snap = model.snapshot();
  std::size_t bad_streak = 0;

  for (std::size_t epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    double train_loss = 0.0, val_loss = 0.0, val_acc = 0.0;
    try {
      Tape tape;
      Rng drop_rng(Rng::derive(tcfg.seed, 1000 + epoch));
      ForwardResult fr =
          model.forward(tape, graphs, labels, split.train_ids, split.train_ids, true, drop_rng);
      train_loss = fr.loss.value()(0, 0);
      if (!std::isfinite(train_loss)) throw std::runtime_error("training loss is not finite");
      adam.zero_grads();
      tape.backward(fr.loss);
      adam.step();

      Tape eval_tape;
      Rng eval_rng(0);
      ForwardResult ev =
          model.forward(eval_tape, graphs, labels, split.val_ids, split.train_ids, false, eval_rng);
      val_loss = ev.loss.value()(0, 0);
      if (!std::isfinite(val_loss)) throw std::runtime_error("validation loss is not finite");
      Metrics vm = compute_metrics(ev.predictions.value(), labels, split.val_ids, model.num_classes());
      val_acc = vm.accuracy;
    } catch (const std::exception& e) {
      throw std::runtime_error("epoch " + std::to_string(epoch) + ": " + e.what());
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    hist.epochs.push_back({epoch, train_loss, val_loss, val_acc, secs});
    hist.stopped_epoch = epoch;
    if (progress)
      *progress << "epoch " << epoch << " train_loss " << train_loss << " val_loss " << val_loss
                << " val_acc " << val_acc << "\n";

    // Strict decrease at full precision; ties count against patience.
    if (val_loss < best) {
      best = val_loss;
      best_epoch = epoch;
      best_snap = model.snapshot();
      bad_streak = 0;
    } else {
      ++bad_streak;
      if (bad_streak >= tcfg.patience) break;
    }
  }

  model.restore(best_snap);
  hist.best_epoch = best_epoch;
  hist.best_val_loss = best;
  {
    ForwardStats stf;
    model.predict_eval(graphs, labels, split.train_ids, &stf);
    hist.doc_edges_final = stf.doc_edges;
  }
  return hist;
}

Metrics evaluate(ShineModel& model, const ComponentGraphs& graphs, const std::vector<int>& labels,
                 const std::vector<std::size_t>& ids, const std::vector<std::size_t>& labeled_ids) {
  Matrix probs = model.predict_eval(graphs, labels, labeled_ids);
  return compute_metrics(probs, labels, ids, model.num_classes());
}

SplitSpec nested_split(const CorpusBundle& corpus, std::size_t v, std::size_t v_max,
                       std::uint64_t seed) {
  if (v == 0 || v % 2 != 0)
    throw std::runtime_error("nested_split: labeled counts must be even and positive");
  std::vector<std::vector<std::size_t>> by_class(corpus.num_classes());
  for (const Document& d : corpus.documents) by_class[d.label].push_back(d.id);
  SplitSpec spec;
  spec.labels_per_class = v;
  spec.seed = seed;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    std::vector<std::size_t>& ids = by_class[c];
    if (ids.size() < v_max)
      throw std::runtime_error("nested_split: class '" + corpus.label_names[c] + "' has " +
                               std::to_string(ids.size()) + " documents, needs " +
                               std::to_string(v_max));
    Rng rng(Rng::derive(seed, c));
    rng.shuffle(ids);
    spec.train_ids.insert(spec.train_ids.end(), ids.begin(), ids.begin() + v / 2);
    spec.val_ids.insert(spec.val_ids.end(), ids.begin() + v / 2, ids.begin() + v);
    spec.test_ids.insert(spec.test_ids.end(), ids.begin() + v_max, ids.end());
  }
  std::sort(spec.train_ids.begin(), spec.train_ids.end());
  std::sort(spec.val_ids.begin(), spec.val_ids.end());
  std::sort(spec.test_ids.begin(), spec.test_ids.end());
  return spec;
}

std::size_t label_fraction_count(const CorpusBundle& corpus, double fraction) {
  if (!(fraction > 0.0) || fraction >= 1.0)
    throw std::runtime_error("label_fraction: values must be in (0, 1)");
  double per_class =
      fraction * static_cast<double>(corpus.size()) / static_cast<double>(corpus.num_classes());
  std::size_t count = 2 * static_cast<std::size_t>(per_class / 2.0);
  if (count < 2)
    throw std::runtime_error("label_fraction: " + std::to_string(fraction) +
                             " yields fewer than 2 labeled documents per class");
  return count;
}

std::vector<SweepRow> run_sweep(const std::string& param, const std::vector<std::string>& values,
                                const ShineConfig& base_cfg, const ComponentGraphs& graphs,
                                const CorpusBundle& corpus, const SplitSpec& base_split,
                                const TrainConfig& tcfg, const Matrix& pretrained,
                                std::ostream* progress) {
  if (values.empty()) throw std::runtime_error("sweep: no values given");
  if (param != "delta_s" && param != "label_fraction" && param != "labels_per_class" &&
      param != "gcn_dim")
    throw std::runtime_error("sweep: unknown parameter '" + param +
                             "' (valid: delta_s, label_fraction, labels_per_class, gcn_dim)");

  auto fraction_count = [&](const std::string& s) {
    return label_fraction_count(corpus, parse_double(s, "label_fraction sweep"));
  };

  std::size_t v_max = 0;
  if (param == "labels_per_class")
    for (const std::string& s : values)
      v_max = std::max(v_max, parse_size(s, "labels_per_class sweep"));
  if (param == "label_fraction")
    for (const std::string& s : values) v_max = std::max(v_max, fraction_count(s));

  std::vector<int> labels = labels_of(corpus);
  std::vector<SweepRow> rows;
  for (const std::string& value : values) {
    ShineConfig cfg = base_cfg;
    SplitSpec split = base_split;
    if (param == "delta_s") {
      cfg.delta_s = parse_double(value, "delta_s sweep");
      if (cfg.delta_s < 0.0) throw std::runtime_error("delta_s sweep: values must be >= 0");
    } else if (param == "gcn_dim") {
      cfg.gcn_dim = parse_size(value, "gcn_dim sweep");
      if (cfg.gcn_dim == 0) throw std::runtime_error("gcn_dim sweep: values must be positive");
    } else if (param == "label_fraction") {
      split = nested_split(corpus, fraction_count(value), v_max, base_split.seed);
    } else {
      split = nested_split(corpus, parse_size(value, "labels_per_class sweep"), v_max,
                           base_split.seed);
    }
    if (progress) *progress << "sweep " << param << " = " << value << "\n";
    ShineModel model(cfg, graphs, corpus.num_classes(), pretrained);
    RunHistory hist = train_model(model, graphs, labels, split, tcfg, progress);
    Metrics test = evaluate(model, graphs, labels, split.test_ids, split.train_ids);
    SweepRow row;
    row.param = param;
    row.value = value;
    row.accuracy = test.accuracy;
    row.macro_f1 = test.macro_f1;
    row.doc_edges_initial = hist.doc_edges_initial;
    row.doc_edges_final = hist.doc_edges_final;
    row.best_epoch = hist.best_epoch;
    row.stopped_epoch = hist.stopped_epoch;
    rows.push_back(row);
  }
  return rows;
}

std::vector<AblationRow> run_ablations(const std::vector<std::string>& variants,
                                       const ShineConfig& base_cfg, const ComponentGraphs& graphs,
                                       const CorpusBundle& corpus, const SplitSpec& split,
                                       const TrainConfig& tcfg, const Matrix& pretrained,
                                       std::ostream* progress) {
  if (variants.empty()) throw std::runtime_error("ablation: no variants given");
  std::vector<int> labels = labels_of(corpus);
  std::vector<AblationRow> rows;
  for (const std::string& variant : variants) {
    ShineConfig cfg = base_cfg;
    cfg.ablations = parse_ablations(variant);
    if (progress) *progress << "ablation " << variant << "\n";
    ShineModel model(cfg, graphs, corpus.num_classes(), pretrained);
    RunHistory hist = train_model(model, graphs, labels, split, tcfg, progress);
    Metrics test = evaluate(model, graphs, labels, split.test_ids, split.train_ids);
    AblationRow row;
    row.variant = variant;
    row.x_s_dim = model.x_s_dim();
    row.accuracy = test.accuracy;
    row.macro_f1 = test.macro_f1;
    rows.push_back(row);
    (void)hist;
  }
  return rows;
}

void write_runlog_csv(const std::string& path, const RunHistory& hist) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << "epoch,train_loss,val_loss,val_acc,seconds\n";
  os << std::setprecision(17);
  for (const EpochRecord& r : hist.epochs)
    os << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.val_accuracy << ','
       << r.seconds << '\n';
  if (!os) throw std::runtime_error("write to '" + path + "' failed");
}

namespace {

nlohmann::json metrics_json(const Metrics& m) {
  nlohmann::json j;
  j["accuracy"] = m.accuracy;
  j["macro_f1"] = m.macro_f1;
  j["confusion"] = m.confusion;
  return j;
}

std::string hex_u64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

nlohmann::json config_json(const ShineConfig& c) {
  nlohmann::json cj;
  cj["gcn_dim"] = c.gcn_dim;
  cj["delta_s"] = c.delta_s;
  cj["dropout"] = c.dropout;
  cj["use_pretrained_word"] = c.use_pretrained_word;
  cj["pretrained_dim"] = c.pretrained_dim;
  cj["normalize_doc_adj"] = c.normalize_doc_adj;
  cj["force_doc_self_loops"] = c.force_doc_self_loops;
  cj["lp_alpha"] = c.lp_alpha;
  cj["lp_iters"] = c.lp_iters;
  cj["seed"] = std::to_string(c.seed);
  cj["ablations"] = ablation_string(c.ablations);
  return cj;
}

void dump_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("write to '" + path + "' failed");
}

}  // namespace

void write_metrics_json(const std::string& path, const ShineModel& model, const RunHistory& hist,
                        const Metrics& val, const Metrics& test,
                        const std::vector<std::string>& label_names) {
  nlohmann::json j;
  j["val"] = metrics_json(val);
  j["test"] = metrics_json(test);
  j["best_epoch"] = hist.best_epoch;
  j["stopped_epoch"] = hist.stopped_epoch;
  j["best_val_loss"] = hist.best_val_loss;
  j["x_s_dim"] = hist.x_s_dim;
  j["doc_edges_initial"] = hist.doc_edges_initial;
  j["doc_edges_final"] = hist.doc_edges_final;
  j["parameter_checksum"] = hex_u64(model.parameter_checksum());
  j["label_names"] = label_names;
  j["config"] = config_json(model.config());
  dump_json(path, j);
}

void write_eval_metrics_json(const std::string& path, const ShineModel& model, const Metrics& val,
                             const Metrics& test, const std::vector<std::string>& label_names) {
  nlohmann::json j;
  j["val"] = metrics_json(val);
  j["test"] = metrics_json(test);
  j["x_s_dim"] = model.x_s_dim();
  j["parameter_checksum"] = hex_u64(model.parameter_checksum());
  j["label_names"] = label_names;
  j["config"] = config_json(model.config());
  dump_json(path, j);
}

void write_split_json(const std::string& path, const SplitSpec& split) {
  nlohmann::json j;
  j["seed"] = std::to_string(split.seed);  // string: 64-bit seeds overflow JSON numbers
  j["labels_per_class"] = split.labels_per_class;
  j["train_ids"] = split.train_ids;
  j["val_ids"] = split.val_ids;
  j["test_ids"] = split.test_ids;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("write to '" + path + "' failed");
}

SplitSpec read_split_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("split file '" + path + "': " + e.what());
  }
  SplitSpec spec;
  try {
    spec.seed = std::stoull(j.at("seed").get<std::string>());
    spec.labels_per_class = j.at("labels_per_class").get<std::size_t>();
    spec.train_ids = j.at("train_ids").get<std::vector<std::size_t>>();
    spec.val_ids = j.at("val_ids").get<std::vector<std::size_t>>();
    spec.test_ids = j.at("test_ids").get<std::vector<std::size_t>>();
  } catch (const std::exception& e) {
    throw std::runtime_error("split file '" + path + "': " + e.what());
  }
  return spec;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << "param,value,accuracy,macro_f1,doc_edges_initial,doc_edges_final,best_epoch,stopped_epoch\n";
  os << std::setprecision(17);
  for (const SweepRow& r : rows)
    os << r.param << ',' << r.value << ',' << r.accuracy << ',' << r.macro_f1 << ','
       << r.doc_edges_initial << ',' << r.doc_edges_final << ',' << r.best_epoch << ','
       << r.stopped_epoch << '\n';
  if (!os) throw std::runtime_error("write to '" + path + "' failed");
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << "variant,x_s_dim,accuracy,macro_f1\n";
  os << std::setprecision(17);
  for (const AblationRow& r : rows)
    os << r.variant << ',' << r.x_s_dim << ',' << r.accuracy << ',' << r.macro_f1 << '\n';
  if (!os) throw std::runtime_error("write to '" + path + "' failed");
}

}  // namespace shine
