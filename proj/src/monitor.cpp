#include "repronlp/monitor.hpp"

#include <httplib.h>

#include <nlohmann/json.hpp>

namespace repronlp {

using nlohmann::json;

std::string_view run_state_name(RunState s) {
  switch (s) {
    case RunState::pending: return "pending";
    case RunState::running: return "running";
    case RunState::completed: return "completed";
    case RunState::failed: return "failed";
  }
  return "pending";
}

RunHandle::RunHandle(std::string run_id, std::string config_fingerprint)
    : run_id_(std::move(run_id)), config_fingerprint_(std::move(config_fingerprint)) {}

void RunHandle::set_state(RunState s) {
  {
    std::lock_guard lock(mu_);
    state_ = s;
  }
  cv_.notify_all();
}

RunState RunHandle::state() const {
  std::lock_guard lock(mu_);
  return state_;
}

bool RunHandle::finished() const {
  const auto s = state();
  return s == RunState::completed || s == RunState::failed;
}

void RunHandle::publish(const TrainEvent& e) {
  {
    std::lock_guard lock(mu_);
    events_.push_back(e);
  }
  cv_.notify_all();
}

EventSink RunHandle::sink() {
  return [this](const TrainEvent& e) { publish(e); };
}

std::vector<TrainEvent> RunHandle::events() const {
  std::lock_guard lock(mu_);
  return events_;
}

std::vector<TrainEvent> RunHandle::events_since(std::size_t from) const {
  std::lock_guard lock(mu_);
  if (from >= events_.size()) return {};
  return {events_.begin() + static_cast<std::ptrdiff_t>(from), events_.end()};
}

void RunHandle::wait_for_events(std::size_t known, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] {
    return events_.size() > known || state_ == RunState::completed || state_ == RunState::failed;
  });
}

bool RunHandle::post_control(ControlCommand cmd) {
  std::lock_guard lock(mu_);
  if (state_ == RunState::completed || state_ == RunState::failed) return false;
  control_.post(cmd);
  return true;
}

json RunHandle::status() const {
  std::lock_guard lock(mu_);
  return json{{"run_id", run_id_},
              {"state", run_state_name(state_)},
              {"epoch", events_.empty() ? 0 : events_.back().epoch},
              {"config_fingerprint", config_fingerprint_}};
}

MonitorServer::MonitorServer(std::shared_ptr<RunHandle> run)
    : run_(std::move(run)), server_(std::make_unique<httplib::Server>()) {
  auto run_ptr = run_;
  server_->set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});

  server_->Get("/status", [run_ptr](const httplib::Request&, httplib::Response& res) {
    res.set_content(run_ptr->status().dump(), "application/json");
  });

  server_->Get("/history", [run_ptr](const httplib::Request&, httplib::Response& res) {
    res.set_content(json(run_ptr->events()).dump(), "application/json");
  });

  server_->Get("/events", [run_ptr](const httplib::Request&, httplib::Response& res) {
    auto sent = std::make_shared<std::size_t>(0);
    res.set_chunked_content_provider("application/x-ndjson", [run_ptr, sent](std::size_t, httplib::DataSink& sink) {
      const bool finished = run_ptr->finished();
      auto fresh = run_ptr->events_since(*sent);
      for (const auto& e : fresh) {
        const auto line = event_line(e) + "\n";
        if (!sink.write(line.data(), line.size())) return false;
        ++*sent;
      }
      if (finished && fresh.empty()) {
        sink.done();
        return true;
      }
      if (fresh.empty()) run_ptr->wait_for_events(*sent, std::chrono::milliseconds(100));
      return sink.is_writable();
    });
  });

  server_->Options("/control", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server_->Post("/control", [run_ptr](const httplib::Request& req, httplib::Response& res) {
    json body;
    std::optional<ControlAction> action;
    try {
      body = json::parse(req.body);
      if (body.is_object() && body.contains("action") && body["action"].is_string()) {
        action = parse_control(body["action"].get<std::string>());
      }
    } catch (const json::exception&) {
    }
    if (!action) {
      res.status = 400;
      res.set_content(json{{"error", "action must be \"early_stop\" or \"reset_epoch\""}}.dump(), "application/json");
      return;
    }
    ControlCommand cmd{*action, 0};
    if (body.contains("issued_at") && body["issued_at"].is_number_unsigned()) {
      cmd.issued_at = body["issued_at"].get<std::size_t>();
    }
    if (!run_ptr->post_control(cmd)) {
      res.status = 409;
      res.set_content(json{{"error", "run already finished"}}.dump(), "application/json");
      return;
    }
    res.status = 202;
    res.set_content(json{{"accepted", control_name(*action)}}.dump(), "application/json");
  });
}

MonitorServer::~MonitorServer() { stop(); }

bool MonitorServer::start(const std::string& host, int port) {
  if (thread_.joinable()) return true;
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
    if (port_ <= 0) return false;
  } else {
    if (!server_->bind_to_port(host, port)) return false;
    port_ = port;
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return true;
}

void MonitorServer::stop() {
  if (thread_.joinable()) {
    server_->stop();
    thread_.join();
  }
}

}  // namespace repronlp
