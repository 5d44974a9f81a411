#pragma once

#include <chrono>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "repronlp/model.hpp"

namespace httplib {
class Server;
}

namespace repronlp {

enum class RunState { pending, running, completed, failed };
std::string_view run_state_name(RunState s);

/// Shared state between a training run and its monitor: an append-only
/// event log (single writer) and the control mailbox.
class RunHandle {
 public:
  RunHandle(std::string run_id, std::string config_fingerprint);

  const std::string& run_id() const { return run_id_; }
  ControlChannel& control() { return control_; }

  void set_state(RunState s);
  RunState state() const;
  bool finished() const;

  void publish(const TrainEvent& e);
  EventSink sink();
  std::vector<TrainEvent> events() const;
  std::vector<TrainEvent> events_since(std::size_t from) const;

  /// Blocks until more than `known` events exist, the run finishes, or the
  /// timeout passes.
  void wait_for_events(std::size_t known, std::chrono::milliseconds timeout) const;

  /// Returns false (HTTP 409) once the run has finished.
  bool post_control(ControlCommand cmd);

  nlohmann::json status() const;

 private:
  std::string run_id_;
  std::string config_fingerprint_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  RunState state_ = RunState::pending;
  std::vector<TrainEvent> events_;
  ControlChannel control_;
};

/// HTTP surface: GET /status, GET /events (NDJSON stream: full prefix, then
/// live events until the run finishes), POST /control, GET /history.
class MonitorServer {
 public:
  explicit MonitorServer(std::shared_ptr<RunHandle> run);
  ~MonitorServer();
  MonitorServer(const MonitorServer&) = delete;
  MonitorServer& operator=(const MonitorServer&) = delete;

  /// Binds and serves on a background thread. Port 0 picks a free port.
  /// Returns false when the port cannot be bound.
  bool start(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  std::shared_ptr<RunHandle> run_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace repronlp
