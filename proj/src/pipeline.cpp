#include "repronlp/pipeline.hpp"

#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "repronlp/digest.hpp"
#include "repronlp/error.hpp"

namespace repronlp {

namespace fs = std::filesystem;
using nlohmann::json;

Experiment Experiment::from_doc(ConfigDoc doc, const fs::path& base_dir, const ConfigOverrides& overrides) {
  if (overrides.seed) doc.set("experiment", "seed", std::to_string(*overrides.seed));
  if (overrides.feature_set) {
    if (doc.find("feature_set:" + *overrides.feature_set) == nullptr) {
      throw ConfigError("unknown feature set '" + *overrides.feature_set + "'");
    }
    doc.set("model", "feature_set", "ref:feature_set:" + *overrides.feature_set);
  }
  Experiment e;
  e.plan = resolve(doc, base_dir);
  e.doc = std::move(doc);
  return e;
}

Experiment Experiment::load(const fs::path& config_path, const ConfigOverrides& overrides) {
  auto e = from_doc(load_config(config_path), config_path.parent_path(), overrides);
  e.config_path = config_path;
  return e;
}

const ModelConfig& Experiment::model() const {
  if (doc.find("model") == nullptr) throw ConfigError("config has no [model] section");
  return plan.model;
}

std::vector<Vectorizer> make_vectorizers(const ExperimentPlan& plan) {
  std::vector<Vectorizer> out;
  for (const auto& spec : plan.vectorizers) out.emplace_back(spec);
  return out;
}

BatchManifest encode_store(const ExperimentPlan& plan, const fs::path& store_path, std::size_t workers) {
  if (plan.model.class_names.empty()) throw ConfigError("[model] classes are required to encode labels");
  const Corpus corpus = load_corpus(plan.corpus_path);
  if (corpus.empty()) throw DataError("corpus " + plan.corpus_path.string() + " is empty");
  const RngStream root = RngStream::seed_root(plan.seed);
  RngStream split_stream = root.split("splits");
  const SplitAssignment splits = make_splits(corpus, plan.splits, split_stream);

  auto vectorizers = make_vectorizers(plan);
  fit_vectorizers(vectorizers, corpus, splits);

  EncodeOptions opts;
  opts.batch_size = plan.batch_size;
  opts.chunk_size = plan.chunk_size;
  opts.workers = workers;
  opts.class_names = plan.model.class_names;
  opts.config_fingerprint = plan.data_fingerprint;
  return encode(corpus, splits, vectorizers, opts, store_path, root);
}

std::vector<Vectorizer> restore_vectorizers(const ExperimentPlan& plan, const BatchManifest& manifest) {
  auto out = make_vectorizers(plan);
  for (auto& v : out) {
    if (!manifest.has_feature(v.feature_id())) continue;
    v.restore_state(manifest.feature(v.feature_id()).fitted);
  }
  return out;
}

Batch make_batch(std::span<const Document* const> docs, const std::vector<Vectorizer>& vectorizers,
                 const std::vector<std::string>& feature_set, const std::vector<std::string>& classes) {
  Batch b;
  b.split = "input";
  b.batch_id = "000000";
  std::vector<std::int64_t> labels;
  for (const Document* d : docs) {
    b.doc_ids.push_back(d->doc_id);
    auto it = std::find(classes.begin(), classes.end(), d->label);
    labels.push_back(it == classes.end() ? 0 : it - classes.begin());
  }
  b.labels = Tensor::i64(std::move(labels));
  b.mask = token_mask(docs);
  for (const auto& id : feature_set) {
    auto it = std::find_if(vectorizers.begin(), vectorizers.end(), [&](const auto& v) { return v.feature_id() == id; });
    if (it == vectorizers.end()) throw ConfigError("no vectorizer for feature '" + id + "'");
    b.tensors.emplace(id, it->transform_batch(docs));
  }
  return b;
}

CheckpointIdentity live_identity(const Experiment& exp, const BatchStore& store) {
  return CheckpointIdentity{exp.plan.config_fingerprint, store.manifest_digest()};
}

namespace {

void check_store_matches(const Experiment& exp, const BatchStore& store) {
  if (store.manifest().config_fingerprint != exp.plan.data_fingerprint) {
    throw StoreError("store/config fingerprint mismatch: store was encoded from " +
                     store.manifest().config_fingerprint + ", config data sections hash to " +
                     exp.plan.data_fingerprint);
  }
}

}  // namespace

TrainState load_run(const Experiment& exp, const BatchStore& store, const fs::path& run_dir) {
  return load_checkpoint(run_dir / kCheckpointFile, exp.model(), store.manifest(), live_identity(exp, store));
}

TrainState run_training(const Experiment& exp, const fs::path& store_path, const fs::path& run_dir,
                        const RunOptions& options) {
  const auto store = BatchStore::open(store_path);
  check_store_matches(exp, *store);
  const auto id = live_identity(exp, *store);

  TrainState state = options.resume && fs::exists(run_dir / kCheckpointFile) ? load_run(exp, *store, run_dir)
                                                                              : start_training(exp.model(),
                                                                                               store->manifest());
  fs::create_directories(run_dir);
  write_file_atomic(run_dir / kEventsFile, events_ndjson(state.history));

  if (options.handle) options.handle->set_state(RunState::running);
  auto sink = [&](const TrainEvent& e) {
    // train() calls the sink with `state` consistent for that event.
    save_checkpoint(state, id, run_dir / kCheckpointFile);
    write_file_atomic(run_dir / kEventsFile, events_ndjson(state.history));
    if (options.handle) options.handle->publish(e);
    if (options.on_event) options.on_event(e);
  };
  try {
    train(state, *store, options.train, options.handle ? &options.handle->control() : nullptr, sink);
  } catch (...) {
    if (options.handle) options.handle->set_state(RunState::failed);
    throw;
  }
  save_checkpoint(state, id, run_dir / kCheckpointFile);
  if (options.handle) options.handle->set_state(RunState::completed);
  return state;
}

Metrics test_run(const Experiment& exp, const fs::path& store_path, const fs::path& run_dir, const std::string& split) {
  const auto store = BatchStore::open(store_path);
  check_store_matches(exp, *store);
  const TrainState state = load_run(exp, *store, run_dir);
  return evaluate(state.best, state.model, *store, split);
}

std::string metrics_json(const Metrics& m) {
  return json{{"accuracy", m.accuracy}, {"macro_f1", m.macro_f1}, {"loss", m.loss}, {"count", m.count}}.dump();
}

std::vector<std::string> predict(const Experiment& exp, const fs::path& store_path, const fs::path& run_dir,
                                 const std::vector<Document>& docs) {
  const auto store = BatchStore::open(store_path);
  check_store_matches(exp, *store);
  const TrainState state = load_run(exp, *store, run_dir);
  const auto vectorizers = restore_vectorizers(exp.plan, store->manifest());
  const auto& classes = store->manifest().classes;
  const std::size_t batch_size = std::max<std::size_t>(store->manifest().batch_size, 1);

  Model best = state.model;
  best.net = state.best;
  std::vector<std::string> out;
  for (std::size_t start = 0; start < docs.size(); start += batch_size) {
    std::vector<const Document*> group;
    for (std::size_t i = start; i < std::min(docs.size(), start + batch_size); ++i) group.push_back(&docs[i]);
    const Batch b = make_batch(group, vectorizers, best.config.feature_set, classes);
    for (auto c : predict_classes(forward(best, b))) out.push_back(classes[static_cast<std::size_t>(c)]);
  }
  return out;
}

std::vector<TrainEvent> read_events(const fs::path& path) {
  std::istringstream in(read_file_bytes(path));
  std::vector<TrainEvent> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line).get<TrainEvent>());
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string events_ndjson(const std::vector<TrainEvent>& events) {
  std::string out;
  for (const auto& e : events) out += event_line(e) + "\n";
  return out;
}

std::string report_csv(const std::vector<std::pair<std::string, std::vector<TrainEvent>>>& runs) {
  std::string out = "run_id,epoch,train_loss,validation_loss,validation_accuracy,action\n";
  char buf[256];
  for (const auto& [run_id, events] : runs) {
    for (const auto& e : events) {
      std::snprintf(buf, sizeof buf, ",%zu,%.9g,%.9g,%.9g,", e.epoch, e.train_loss, e.validation_loss,
                    e.validation_accuracy);
      out += run_id + buf + std::string(action_name(e.action)) + "\n";
    }
  }
  return out;
}

}  // namespace repronlp
