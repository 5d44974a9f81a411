// Command line entry point: encode, train, test, predict, info, report.

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "repronlp/error.hpp"
#include "repronlp/pipeline.hpp"

namespace fs = std::filesystem;
using namespace repronlp;

namespace {

struct Options {
  fs::path config;
  fs::path store = "store";
  fs::path run_dir;
  std::string feature_set;
  std::string split = "test";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::size_t> until_epoch;
  std::optional<std::size_t> epoch_delay_ms;
  int monitor_port = -1;
  std::size_t monitor_linger_ms = 0;
  bool debug = false;
  bool no_timestamps = false;
  bool resume = false;
  std::vector<fs::path> runs;
};

class Logger {
 public:
  explicit Logger(const Options& o) : timestamps_(!o.no_timestamps) {}
  void operator()(const std::string& msg) const {
    if (timestamps_) {
      const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
      char buf[32];
      std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", std::gmtime(&now));
      std::cerr << buf << " ";
    }
    std::cerr << msg << "\n";
  }

 private:
  bool timestamps_;
};

Experiment load_experiment(const Options& o) {
  if (o.config.empty()) throw UsageError("--config is required");
  ConfigOverrides ov;
  ov.seed = o.seed;
  if (!o.feature_set.empty()) ov.feature_set = o.feature_set;
  return Experiment::load(o.config, ov);
}

fs::path run_dir_for(const Options& o, const Experiment& exp) {
  return o.run_dir.empty() ? fs::path("runs") / exp.model().feature_set_name : o.run_dir;
}

std::string format_event(const TrainEvent& e) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "epoch %zu train_loss=%.6f validation_loss=%.6f validation_accuracy=%.4f action=%s",
                e.epoch, e.train_loss, e.validation_loss, e.validation_accuracy,
                std::string(action_name(e.action)).c_str());
  return buf;
}

int cmd_encode(const Options& o) {
  const Logger log(o);
  const auto exp = load_experiment(o);
  const std::size_t workers = o.workers.value_or(exp.plan.workers);
  log("encoding " + exp.plan.corpus_path.string() + " into " + o.store.string() + " with " +
      std::to_string(workers) + " worker(s)");
  encode_store(exp.plan, o.store, workers);
  std::cout << "store_digest " << store_digest(o.store) << "\n";
  if (o.debug) std::cerr << inspect(o.store);
  return 0;
}

int cmd_train(const Options& o) {
  const Logger log(o);
  const auto exp = load_experiment(o);
  const fs::path run_dir = run_dir_for(o, exp);

  RunOptions ro;
  ro.resume = o.resume;
  ro.train.record_wall_time = !o.no_timestamps;
  ro.train.until_epoch = o.until_epoch;
  ro.train.epoch_delay = std::chrono::milliseconds(o.epoch_delay_ms.value_or(exp.plan.epoch_delay_ms));
  ro.train.cache = std::make_shared<TensorCache>();
  if (o.debug) {
    ro.train.on_batch = [](const Batch& b) { std::cerr << describe_batch(b) << "\n"; };
    const auto store = BatchStore::open(o.store);
    const auto probe = start_training(exp.model(), store->manifest());
    std::cerr << "model build:\n" << describe_model(probe.model);
  }
  ro.on_event = [](const TrainEvent& e) { std::cout << format_event(e) << std::endl; };

  std::unique_ptr<MonitorServer> server;
  if (o.monitor_port >= 0) {
    ro.handle = std::make_shared<RunHandle>(run_dir.filename().string(), exp.plan.config_fingerprint);
    server = std::make_unique<MonitorServer>(ro.handle);
    if (server->start("127.0.0.1", o.monitor_port)) {
      log("monitor listening on http://127.0.0.1:" + std::to_string(server->port()));
    } else {
      log("warning: monitor could not bind port " + std::to_string(o.monitor_port) + "; continuing without it");
      server.reset();
    }
  }

  log("training " + exp.model().feature_set_name + " into " + run_dir.string());
  const auto state = run_training(exp, o.store, run_dir, ro);
  std::cout << "best_epoch " << state.best_epoch << "\n";
  std::cout << "checkpoint " << (run_dir / kCheckpointFile).generic_string() << "\n";
  if (server && o.monitor_linger_ms > 0) {
    std::this_thread::sleep_for(std::chrono::milliseconds(o.monitor_linger_ms));
  }
  return 0;
}

int cmd_test(const Options& o) {
  const auto exp = load_experiment(o);
  const fs::path run_dir = run_dir_for(o, exp);
  const auto m = test_run(exp, o.store, run_dir, o.split);
  const auto text = metrics_json(m);
  if (o.split == "test") {
    std::ofstream(run_dir / kTestMetricsFile, std::ios::binary | std::ios::trunc) << text << "\n";
  }
  std::cout << text << "\n";
  return 0;
}

int cmd_predict(const Options& o) {
  const auto exp = load_experiment(o);
  std::vector<Document> docs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(std::cin, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      docs.push_back(parse_document(line, false));
    } catch (const DataError& e) {
      throw DataError("stdin:" + std::to_string(line_no) + ": " + e.what());
    }
  }
  for (const auto& label : predict(exp, o.store, run_dir_for(o, exp), docs)) std::cout << label << "\n";
  return 0;
}

int cmd_info(const Options& o) {
  std::cout << inspect(o.store);
  std::cout << "store_digest: " << store_digest(o.store) << "\n";
  return 0;
}

int cmd_report(const Options& o) {
  if (o.runs.empty()) throw UsageError("report needs at least one run directory");
  std::vector<std::pair<std::string, std::vector<TrainEvent>>> runs;
  for (const auto& dir : o.runs) {
    const auto path = dir / kEventsFile;
    if (!fs::exists(path)) throw DataError("no " + path.string());
    runs.emplace_back(dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string(),
                      read_events(path));
  }
  std::cout << report_csv(runs);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reproducible text-classification pipeline"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "experiment config (INI)")->required();
    sub->add_option("--store", o.store, "batch store directory")->capture_default_str();
    sub->add_option("--seed", o.seed, "root seed; overrides [experiment] seed");
    sub->add_flag("--debug", o.debug, "print batch composition and layer dimensions to stderr");
    sub->add_flag("--no-timestamps", o.no_timestamps, "omit timestamps from logs and event wall times");
  };
  auto add_run = [&](CLI::App* sub) {
    sub->add_option("--feature-set", o.feature_set, "feature set name; overrides [model] feature_set");
    sub->add_option("--run-dir", o.run_dir, "run directory (default runs/<feature set>)");
  };

  auto* encode = app.add_subcommand("encode", "vectorize the corpus into a batch store");
  add_config(encode);
  encode->add_option("--workers", o.workers, "parallel encode workers; overrides [runtime] workers");

  auto* train = app.add_subcommand("train", "train a model on a feature set of the store");
  add_config(train);
  add_run(train);
  train->add_option("--monitor-port", o.monitor_port, "serve the HTTP monitor on this port (0 = any)");
  train->add_option("--monitor-linger-ms", o.monitor_linger_ms, "keep the monitor up after training");
  train->add_option("--epoch-delay-ms", o.epoch_delay_ms, "pause after each epoch");
  train->add_option("--until-epoch", o.until_epoch, "stop after this many completed epochs");
  train->add_flag("--resume", o.resume, "continue from the run directory's checkpoint");

  auto* test = app.add_subcommand("test", "evaluate a trained run");
  add_config(test);
  add_run(test);
  test->add_option("--split", o.split, "split to evaluate")->capture_default_str();

  auto* predict_cmd = app.add_subcommand("predict", "label newline-delimited JSON documents from stdin");
  add_config(predict_cmd);
  add_run(predict_cmd);

  auto* info = app.add_subcommand("info", "describe a batch store");
  info->add_option("--store", o.store, "batch store directory")->capture_default_str();

  auto* report = app.add_subcommand("report", "merge run histories into one CSV");
  report->add_option("runs", o.runs, "run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return static_cast<int>(ErrorKind::usage);
  }

  try {
    if (*encode) return cmd_encode(o);
    if (*train) return cmd_train(o);
    if (*test) return cmd_test(o);
    if (*predict_cmd) return cmd_predict(o);
    if (*info) return cmd_info(o);
    if (*report) return cmd_report(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::store);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::data);
  }
  return static_cast<int>(ErrorKind::usage);
}
