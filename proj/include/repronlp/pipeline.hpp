#pragma once

// End-to-end orchestration shared by the command line tool and the
// acceptance suite: config -> store -> training run -> evaluation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "repronlp/batchstore.hpp"
#include "repronlp/config.hpp"
#include "repronlp/model.hpp"
#include "repronlp/monitor.hpp"

namespace repronlp {

struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> feature_set;
};

/// A parsed configuration with command-line overrides applied to the
/// document itself, so fingerprints cover them.
struct Experiment {
  std::filesystem::path config_path;
  ConfigDoc doc;
  ExperimentPlan plan;

  static Experiment load(const std::filesystem::path& config_path, const ConfigOverrides& overrides = {});
  static Experiment from_doc(ConfigDoc doc, const std::filesystem::path& base_dir,
                             const ConfigOverrides& overrides = {});
  /// Throws ConfigError when the config has no [model] section.
  const ModelConfig& model() const;
};

std::vector<Vectorizer> make_vectorizers(const ExperimentPlan& plan);

/// Loads the corpus, makes splits from split(root, "splits"), fits on the
/// train split and encodes the store.
BatchManifest encode_store(const ExperimentPlan& plan, const std::filesystem::path& store_path,
                           std::size_t workers);

/// Vectorizers rebuilt from the manifest's fitted state (no refit).
std::vector<Vectorizer> restore_vectorizers(const ExperimentPlan& plan, const BatchManifest& manifest);

/// Vectorizes documents directly into an in-memory batch.
Batch make_batch(std::span<const Document* const> docs, const std::vector<Vectorizer>& vectorizers,
                 const std::vector<std::string>& feature_set, const std::vector<std::string>& classes);

inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kEventsFile = "events.ndjson";
inline constexpr const char* kTestMetricsFile = "test_metrics.json";

struct RunOptions {
  TrainOptions train;
  bool resume = false;
  /// Receives each event after it is persisted.
  EventSink on_event;
  std::shared_ptr<RunHandle> handle;
};

/// Trains into `run_dir` (checkpoint.bin, events.ndjson). The checkpoint
/// and the event log are rewritten after every epoch so an interrupted run
/// can resume from its last completed epoch.
TrainState run_training(const Experiment& exp, const std::filesystem::path& store_path,
                        const std::filesystem::path& run_dir, const RunOptions& options);

CheckpointIdentity live_identity(const Experiment& exp, const BatchStore& store);
TrainState load_run(const Experiment& exp, const BatchStore& store, const std::filesystem::path& run_dir);

/// Evaluates the best weights of a finished run on `split`.
Metrics test_run(const Experiment& exp, const std::filesystem::path& store_path, const std::filesystem::path& run_dir,
                 const std::string& split = "test");
std::string metrics_json(const Metrics& m);

/// One predicted class name per input document.
std::vector<std::string> predict(const Experiment& exp, const std::filesystem::path& store_path,
                                 const std::filesystem::path& run_dir, const std::vector<Document>& docs);

std::vector<TrainEvent> read_events(const std::filesystem::path& path);
std::string events_ndjson(const std::vector<TrainEvent>& events);

/// CSV with columns run_id, epoch, train_loss, validation_loss,
/// validation_accuracy, action.
std::string report_csv(const std::vector<std::pair<std::string, std::vector<TrainEvent>>>& runs);

}  // namespace repronlp
